use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("schema error{}: {msg}", line_suffix(*.line))]
    Schema { line: Option<usize>, msg: String },

    #[error("parse error{}: {msg}", line_suffix(*.line))]
    Parse { line: Option<usize>, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("format error in {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("training diverged at step {step}: loss={loss} triplet={triplet} infonce={infonce}")]
    Diverged {
        step: usize,
        loss: f64,
        triplet: f64,
        infonce: f64,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Bincode(#[from] bincode::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn schema(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Schema {
            line,
            msg: msg.into(),
        }
    }

    pub fn parse(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Schema { .. }
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::NotFound(_)
                | Error::Format { .. }
                | Error::Json(_)
        )
    }
}

pub(crate) fn open_file(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create_file(path: &std::path::Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}
