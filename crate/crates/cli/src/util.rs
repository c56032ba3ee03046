//! Small helpers: exit-code mapping, path-annotated IO, and config
//! fingerprints for output manifests.

use ptppm_core::Error;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// 0 success, 2 config or input error, 3 infeasible release.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible { .. } => 3,
        _ => 2,
    }
}

pub fn read_file(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn open_reader(path: &Path) -> Result<std::io::BufReader<std::fs::File>, Error> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Config(format!("{}: {e}", parent.display())))?;
        }
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Hex SHA-256 of the effective configuration text.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
