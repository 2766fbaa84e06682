//! Checkpoint file.
//!
//! Layout: magic `AAIR`, `u16` version, `u32`-length UTF-8 header of
//! `key=value` lines, `u32` record count, then tensor records
//! `(u16 name length, name, u8 rank, u32 dims.., f64 LE values)`. Model
//! parameters come first in store order, followed by the ADAM moments under
//! the `adam.m/` and `adam.v/` prefixes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::hyper::HyperParams;
use super::optim::OptimizerState;
use crate::binio::*;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::params::{Dims, ModelParams};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"AAIR";
const VERSION: u16 = 1;
const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";
const META: &str = "meta.";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyper: HyperParams,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Free-form run information, e.g. the dataset format.
    pub meta: Vec<(String, String)>,
}

fn write_record<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    let n = u16::try_from(name.len()).map_err(|_| Error::contract("tensor name too long"))?;
    write_u16(w, n)?;
    write_bytes(w, name.as_bytes())?;
    write_u8(w, t.rank() as u8)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    write_f64s(w, t.data())
}

fn read_record<R: Read>(r: &mut R) -> Result<(String, Tensor)> {
    let n = read_u16(r)? as usize;
    let name = String::from_utf8(read_exact_vec(r, n)?)
        .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
    let rank = read_u8(r)? as usize;
    let shape = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n < 1 << 32)
        .ok_or_else(|| Error::Format(format!("tensor {name} has an absurd shape {shape:?}")))?;
    let data = read_f64s(r, len)?;
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    fn header(&self) -> String {
        let mut lines: Vec<(String, String)> = self.hyper.to_pairs();
        lines.push(("optimizer.step".into(), self.optimizer.step.to_string()));
        lines.push(("optimizer.lr".into(), self.optimizer.lr.to_string()));
        let best = self
            .optimizer
            .best_accuracy
            .map_or_else(|| "none".to_string(), |b| b.to_string());
        lines.push(("optimizer.best_accuracy".into(), best));
        for (k, v) in &self.meta {
            lines.push((format!("{META}{k}"), v.clone()));
        }
        lines.push(("vocab_size".into(), self.vocab.len().to_string()));
        lines.push(("vocab".into(), self.vocab.tokens().join(" ")));
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let store = &self.params.store;
        if self.optimizer.first.len() != store.len() || self.optimizer.second.len() != store.len() {
            return Err(Error::contract("optimizer moments do not match the parameters"));
        }
        write_bytes(w, MAGIC)?;
        write_u16(w, VERSION)?;
        write_str(w, &self.header())?;
        write_u32(w, (store.len() * 3) as u32)?;
        for (_, name, t) in store.iter() {
            write_record(w, name, t)?;
        }
        for (prefix, moments) in [(FIRST_MOMENT, &self.optimizer.first), (SECOND_MOMENT, &self.optimizer.second)] {
            for ((_, name, _), m) in store.iter().zip(moments) {
                write_record(w, &format!("{prefix}{name}"), m)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        if &read_exact_vec(r, 4)?[..] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u16(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header = read_str(r)?;
        let mut map = BTreeMap::new();
        let mut meta = Vec::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("header line {line:?} has no '='")))?;
            if let Some(key) = k.strip_prefix(META) {
                meta.push((key.to_string(), v.to_string()));
            } else {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let hyper = HyperParams::from_pairs(&map)?;
        let field = |k: &str| {
            map.get(k)
                .ok_or_else(|| Error::Format(format!("header lacks {k}")))
        };
        let tokens: Vec<String> = field("vocab")?.split(' ').map(str::to_string).collect();
        let vocab = Vocabulary::from_tokens(tokens)?;
        let declared: usize = field("vocab_size")?
            .parse()
            .map_err(|_| Error::Format("vocab_size does not parse".into()))?;
        if declared != vocab.len() {
            return Err(Error::Format(format!(
                "header declares {declared} tokens but lists {}",
                vocab.len()
            )));
        }
        let parse_f = |k: &str| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Format(format!("{k} does not parse")))
        };
        let step: u64 = field("optimizer.step")?
            .parse()
            .map_err(|_| Error::Format("optimizer.step does not parse".into()))?;
        let lr = parse_f("optimizer.lr")?;
        let best_accuracy = match field("optimizer.best_accuracy")?.as_str() {
            "none" => None,
            _ => Some(parse_f("optimizer.best_accuracy")?),
        };

        let count = read_u32(r)? as usize;
        if !count.is_multiple_of(3) {
            return Err(Error::Format(format!("{count} records do not split into params and moments")));
        }
        let n = count / 3;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let (name, t) = read_record(r)?;
            store.add(name, t);
        }
        let mut read_moments = |prefix: &str| -> Result<Vec<Tensor>> {
            let mut out = Vec::with_capacity(n);
            for (_, pname, p) in store.iter() {
                let (name, t) = read_record(r)?;
                if name.strip_prefix(prefix) != Some(pname) || t.shape() != p.shape() {
                    return Err(Error::Format(format!("moment record {name} does not match parameter {pname}")));
                }
                out.push(t);
            }
            Ok(out)
        };
        let first = read_moments(FIRST_MOMENT)?;
        let second = read_moments(SECOND_MOMENT)?;
        let dims = Dims {
            vocab: vocab.len(),
            embed: hyper.embed,
            hidden: hyper.hidden,
            state: hyper.state,
        };
        let params = ModelParams::from_store(dims, store)
            .map_err(|e| Error::Format(format!("checkpoint parameters: {e}")))?;
        Ok(Checkpoint {
            hyper,
            vocab,
            params,
            optimizer: OptimizerState {
                first,
                second,
                step,
                lr,
                best_accuracy,
            },
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing checkpoint {}", path.display());
        let f = File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(format!("opening checkpoint {}", path.display()), e))?;
        Self::read(&mut BufReader::new(f))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}
