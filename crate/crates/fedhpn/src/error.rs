use std::io;
use std::path::{Path, PathBuf};

use fedhpn_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed {what} {}: {msg}", path.display())]
    Format {
        what: &'static str,
        path: PathBuf,
        msg: String,
    },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code: 2 config, 3 numeric, 4 missing artifact, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) => 2,
            HarnessError::Numeric(_) => 3,
            HarnessError::MissingArtifact(_) => 4,
            HarnessError::Core(e) => match e {
                CoreError::Diverged | CoreError::NonFinitePolicy => 3,
                CoreError::MissingCheckpoint(_) => 4,
                _ => 2,
            },
            HarnessError::Io { .. } | HarnessError::Format { .. } => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(what: &'static str, path: &Path, msg: impl ToString) -> Self {
        HarnessError::Format {
            what,
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }
}

/// Maps "not found" to [`HarnessError::MissingArtifact`].
pub(crate) fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => HarnessError::MissingArtifact(path.to_path_buf()),
        _ => HarnessError::io(format!("reading {}", path.display()), e),
    })
}

pub(crate) fn read_artifact_string(path: &Path) -> Result<String> {
    let bytes = read_artifact(path)?;
    String::from_utf8(bytes).map_err(|e| HarnessError::format("text file", path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))
}
