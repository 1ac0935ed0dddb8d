use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid page {page}: {message}")]
    Validation { page: String, message: String },

    #[error("page {page}, line {line}: {message}")]
    Line {
        page: String,
        line: String,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite objective at epoch {epoch} (page {page}): {value}")]
    NonFinite {
        epoch: usize,
        page: String,
        value: f64,
    },

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Builds a [`Error::Parse`] from a serde_json error, converting its
    /// line/column position into a byte offset within `source`.
    pub(crate) fn from_json(err: serde_json::Error, source: &[u8]) -> Self {
        let offset = if err.line() == 0 {
            source.len()
        } else {
            let mut line = 1;
            let mut start = 0;
            for (i, b) in source.iter().enumerate() {
                if line == err.line() {
                    break;
                }
                if *b == b'\n' {
                    line += 1;
                    start = i + 1;
                }
            }
            (start + err.column().saturating_sub(1)).min(source.len())
        };
        Error::Parse {
            offset,
            message: err.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_offset_points_into_second_line() {
        let src = b"{\n  \"a\": ,\n}";
        let err = serde_json::from_slice::<serde_json::Value>(src).unwrap_err();
        match Error::from_json(err, src) {
            Error::Parse { offset, .. } => assert_eq!(src[offset], b','),
            other => panic!("unexpected {other:?}"),
        }
    }
}
