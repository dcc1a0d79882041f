use std::fmt;

use kgpath_core::generate::GenerateError;
use kgpath_core::kg::KgError;
use kgpath_core::pairing::PairingError;
use kgpath_core::qafuse::QaError;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

/// Bad flags, bad config or missing input files.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<QaError>() {
            match e {
                QaError::Divergence { .. } => return EXIT_DIVERGENCE,
                QaError::InvalidArgument(_) => return EXIT_USAGE,
                _ => {}
            }
        }
        let usage = matches!(cause.downcast_ref::<KgError>(), Some(KgError::InvalidArgument(_)))
            || matches!(cause.downcast_ref::<PairingError>(), Some(PairingError::InvalidArgument(_)))
            || matches!(cause.downcast_ref::<GenerateError>(), Some(GenerateError::InvalidArgument(_)));
        if usage {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}
