use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no contraction detected: all iterate norm bounds are >= 1")]
    NoContraction,
    #[error("coarse-fine transfer failed: transferred bound {value} is >= 1")]
    TransferFailed { value: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("fixed-point iteration did not converge: last residual {residual}")]
    NonConvergence { residual: f64 },
    #[error("float-path audit failed at step {step}: drift {drift} exceeds budget {budget}")]
    AuditFailed { step: usize, drift: f64, budget: f64 },
    #[error("observable is unbounded on every candidate complement: {0}")]
    UnboundedObservable(String),
    #[error("stability report withheld: {0}")]
    MissingPrerequisite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
