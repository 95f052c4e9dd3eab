use thiserror::Error;

use crate::search::SearchStats;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input at byte {offset} (line {line}, column {column}): {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("unsupported split at {path}: {message}")]
    UnsupportedFeature { path: String, message: String },

    #[error("inconsistent model at tree {tree}, leaf {leaf}: {message}")]
    Consistency {
        tree: usize,
        leaf: usize,
        message: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("no region satisfies the target: {reason}")]
    NotFound { reason: String },

    #[error("decomposition exceeds the region cap of {limit}")]
    DecompositionTooLarge { limit: usize },

    #[error("search exceeded its time budget after {} explored nodes", stats.explored_nodes)]
    BudgetExceeded { stats: SearchStats },

    #[error("counterfactual failed re-validation: {0}")]
    ValidationFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn syntax(source: &str, err: &serde_json::Error) -> Error {
        let (line, column) = (err.line(), err.column());
        Error::Syntax {
            offset: byte_offset(source, line, column),
            line,
            column,
            message: err.to_string(),
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, Error::NotFound { .. })
    }
}

/// Byte offset of a 1-based (line, column) position as reported by serde_json.
fn byte_offset(source: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in source.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column).min(source.len());
        }
        offset += l.len();
    }
    source.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_points_into_last_line() {
        let src = "{\n  \"a\": [1, 2";
        let err = serde_json::from_str::<serde_json::Value>(src).unwrap_err();
        match Error::syntax(src, &err) {
            Error::Syntax { offset, line, .. } => {
                assert_eq!(line, 2);
                assert_eq!(offset, src.len());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
