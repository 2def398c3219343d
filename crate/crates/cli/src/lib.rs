//! Library side of the `trajsearch` binary: file handling, result/metrics
//! serialization and the bench runner. Kept as a lib target so integration
//! tests can reuse the exact output formats.

pub mod bench;
pub mod files;
pub mod output;

use std::path::PathBuf;

use thiserror::Error;

use trajsearch::dataset::DatasetError;
use trajsearch::driver::SearchError;
use trajsearch::fsg::FsgIoError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Dataset {
        path: PathBuf,
        #[source]
        source: DatasetError,
    },
    #[error("{path}: {source}")]
    IndexFile {
        path: PathBuf,
        #[source]
        source: FsgIoError,
    },
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("{0}")]
    Verification(String),
}

impl From<trajsearch::engine::EngineError> for CliError {
    fn from(err: trajsearch::engine::EngineError) -> Self {
        CliError::Search(SearchError::Engine(err))
    }
}

impl CliError {
    /// 1 usage, 2 I/O, 3 verification failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            // Search failures are configuration problems (a buffer too small
            // for the workload, an inadmissible subbin count).
            CliError::Usage(_) | CliError::Search(_) => 1,
            CliError::Io { .. } | CliError::Dataset { .. } | CliError::IndexFile { .. } => 2,
            CliError::Verification(_) => 3,
        }
    }
}
