use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems decoding or encoding the on-disk trace (`PSCT`) and model (`PSCM`) files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported header flags {flags:#04x}/{reserved:#04x}")]
    UnsupportedFlags { flags: u8, reserved: u8 },
    #[error("truncated {section}: needed {needed} bytes, {available} available")]
    Truncated {
        section: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("label count {labels} does not match trace count {traces}")]
    LabelCountMismatch { labels: usize, traces: usize },
    #[error("file holds no traces")]
    EmptySet,
    #[error("manifest does not match tensor data: {0}")]
    ManifestMismatch(String),
    #[error("invalid header JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid UTF-8 in header")]
    Utf8,
    #[error("payload contains a non-finite sample at trace {trace}, sample {sample}")]
    NonFinite { trace: usize, sample: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of bounds for trace of length {len}")]
    Bounds { index: usize, len: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Diverged { epoch: usize, what: &'static str },
    #[error("one-class guard: found non-benign label `{label}` at index {index}")]
    Leakage { label: String, index: usize },
    #[error("{n} calibration scores cannot resolve a false-positive rate of {target_fpr}")]
    Resolution { n: usize, target_fpr: f64 },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Prefixes an I/O error with the file it concerns, keeping its kind.
pub(crate) fn at_path(path: &std::path::Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
