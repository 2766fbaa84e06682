//! Corpus ingestion, vocabularies, padded batches and the synthetic
//! benchmark.

mod batch;
pub mod cbt;
pub mod cnn;
pub mod corpus_file;
mod example;
pub mod synthetic;
mod vocab;

use std::fs;
use std::io::BufReader;
use std::path::Path;

pub use batch::{batch_order, make_batches, Batch};
pub use cbt::parse_cbt;
pub use cnn::parse_cnn;
pub use example::{
    positions_of, Example, Item, RawExample, PAD_ID, PAD_TOKEN, PLACEHOLDER_ID,
    PLACEHOLDER_TOKEN, UNK_ID, UNK_TOKEN,
};
pub use synthetic::{generate_synthetic, synthetic_splits, SyntheticConfig};
pub use vocab::{EncodedCorpus, Vocabulary, DEFAULT_MAX_DOC_LEN};

use crate::error::{Error, Result};

/// Corpus layouts understood by [`load_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Cbt,
    Cnn,
}

fn is_cache(path: &Path) -> bool {
    let mut magic = [0u8; 4];
    fs::File::open(path)
        .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut magic))
        .map(|_| &magic == b"AACP")
        .unwrap_or(false)
}

/// Loads a split. CBT splits are one file; CNN splits are a directory of
/// `.question` files read in file-name order (a single file also works).
/// A normalized corpus cache is accepted for either format.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RawExample>> {
    let display = path.display().to_string();
    if !path.exists() {
        return Err(Error::io(
            display,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    if path.is_file() && is_cache(path) {
        let f = fs::File::open(path).map_err(|e| Error::io(&display, e))?;
        return corpus_file::read_corpus(&mut BufReader::new(f));
    }
    match format {
        CorpusFormat::Cbt => {
            let f = fs::File::open(path).map_err(|e| Error::io(&display, e))?;
            let name = path.file_name().map_or(display.clone(), |n| n.to_string_lossy().into_owned());
            parse_cbt(BufReader::new(f), &name)
        }
        CorpusFormat::Cnn => {
            let mut files = Vec::new();
            if path.is_dir() {
                for entry in fs::read_dir(path).map_err(|e| Error::io(&display, e))? {
                    let p = entry.map_err(|e| Error::io(&display, e))?.path();
                    if p.extension().is_some_and(|e| e == "question") {
                        files.push(p);
                    }
                }
                files.sort();
            } else {
                files.push(path.to_path_buf());
            }
            files
                .iter()
                .map(|p| {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
                    let id = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                    parse_cnn(&text, &id).map_err(|e| match e {
                        Error::Parse { line, message } => Error::Parse {
                            line,
                            message: format!("{}: {message}", p.display()),
                        },
                        other => other,
                    })
                })
                .collect()
        }
    }
}

/// Example counts of the official corpus releases, `(train, valid, test)`.
pub const CBT_NE_COUNTS: (usize, usize, usize) = (108_719, 2_000, 2_500);
pub const CBT_CN_COUNTS: (usize, usize, usize) = (120_769, 2_000, 2_500);
pub const CNN_COUNTS: (usize, usize, usize) = (380_298, 3_924, 3_198);
