use std::io;

use thiserror::Error;

/// Every failure the codec, trainer and pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid scale factor {0}")]
    InvalidScale(u32),
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("corrupt data: {0}")]
    CorruptData(String),
    #[error("index {index} does not fit in {bits} bits")]
    InvalidIndex { index: u32, bits: u8 },
    #[error("not a CADM container (bad magic)")]
    NotACadmFile,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("sampler radicand is negative at step t={t}")]
    Scheduler { t: usize },
    #[error("input error: {0}")]
    Input(String),
    #[error("checkpoint conditioned on s={ckpt_s}, n={ckpt_n} but container has s={s}, n={n}")]
    ConditionMismatch { ckpt_s: u8, ckpt_n: u8, s: u8, n: u8 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code used by the CLI: 3 for numeric divergence, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalDivergence(_) | Error::Scheduler { .. } => 3,
            _ => 2,
        }
    }
}
