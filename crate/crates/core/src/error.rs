use thiserror::Error;

/// Errors surfaced by the simulation workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate covariate {column}: pooled standard deviation {pooled_sd:e} is below 1e-12")]
    DegenerateCovariate { column: usize, pooled_sd: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("{context}: {source}")]
    Cell {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn in_cell(self, context: impl Into<String>) -> Self {
        Error::Cell {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
