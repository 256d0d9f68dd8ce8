use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("matrix is singular: {0}")]
    Singular(String),
    #[error("schur complement unavailable: D block is singular")]
    SchurUnavailable,
    #[error("instance infeasible (iv value {iv_value})")]
    Infeasible { iv_value: f64 },
    #[error("copositivity check limited to n <= {limit}, got n = {n}")]
    Undecidable { n: usize, limit: usize },
    #[error("no witness construction applies: {0}")]
    WitnessUnavailable(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Dimension(what()))
    }
}
