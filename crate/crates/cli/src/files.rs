//! Dataset file handling: format selection on write, magic sniffing on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use trajsearch::dataset::{self, TrajectoryDataset, BINARY_MAGIC};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

/// Pick the output format: an explicit flag wins, otherwise the extension
/// (`.bin`/`.trj` binary, anything else CSV).
pub fn output_format(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("trj") => Format::Bin,
            _ => Format::Csv,
        }
    })
}

pub fn write_dataset(ds: &TrajectoryDataset, path: &Path, format: Format) -> Result<(), CliError> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let out = BufWriter::new(file);
    let result = match format {
        Format::Csv => dataset::write_csv(ds, out),
        Format::Bin => dataset::write_binary(ds, out),
    };
    result.map_err(|source| CliError::Dataset {
        path: path.to_path_buf(),
        source,
    })
}

/// Read either format, deciding by the binary magic.
pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset, CliError> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut reader = BufReader::new(file);
    let is_binary = {
        let head = reader.fill_buf().map_err(io_err)?;
        head.len() >= 4 && &head[..4] == BINARY_MAGIC
    };
    let result = if is_binary {
        dataset::read_binary(reader)
    } else {
        dataset::read_csv(reader)
    };
    result.map_err(|source| CliError::Dataset {
        path: path.to_path_buf(),
        source,
    })
}
