//! Images, dataset manifests, splat files and the synthetic scene generator.

pub mod image;
pub mod manifest;
pub mod points;
pub mod splatfile;
pub mod synth;

use thiserror::Error;

/// Failure reading or writing one of the binary formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("{0}")]
    Invalid(String),
}
