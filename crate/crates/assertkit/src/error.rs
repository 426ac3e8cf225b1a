use std::path::PathBuf;

/// Errors raised while reading or writing pipeline artifacts.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed WAV header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("{path}: unsupported encoding: {detail} (need 16-bit PCM mono)")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] assertkit_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub(crate) fn format_err(path: &std::path::Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), detail: detail.into() }
}
