use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure classes. The command-line front end maps these onto
/// stable exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Io,
    Parse,
    Config,
    Numeric,
    Lookup,
    Internal,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Io => 2,
            Category::Parse => 3,
            Category::Config => 4,
            Category::Numeric => 5,
            Category::Lookup => 6,
            Category::Internal => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Io => "io",
            Category::Parse => "parse",
            Category::Config => "config",
            Category::Numeric => "numeric",
            Category::Lookup => "lookup",
            Category::Internal => "internal",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("masked softmax over {len} positions has no unmasked entry")]
    EmptySupport { len: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("graph lifecycle: {0}")]
    Lifecycle(String),

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("index {index} out of bounds for length {len}")]
    Bounds { index: usize, len: usize },

    #[error("non-finite value produced by {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data integrity ({source_id}): {message}")]
    Integrity { source_id: String, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("not found: {0}")]
    Lookup(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Io { .. } => Category::Io,
            Error::Parse { .. } | Error::Integrity { .. } | Error::Format(_) => Category::Parse,
            Error::Config(_) | Error::Vocabulary { .. } => Category::Config,
            Error::Numeric(_) => Category::Numeric,
            Error::Lookup(_) => Category::Lookup,
            Error::Dimension { .. }
            | Error::EmptySupport { .. }
            | Error::Contract(_)
            | Error::Lifecycle(_)
            | Error::Bounds { .. } => Category::Internal,
        }
    }
}
