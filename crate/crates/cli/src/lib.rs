//! Command-line driver for the temporal knowledge graph engine: dataset
//! plumbing, layered run configuration, and the five subcommands.

pub mod commands;
pub mod dataset;
pub mod run;

use eth_core::EthError;

/// Process exit code per error class: 2 for bad input (arguments, files,
/// parsing), 3 for unusable or mismatched checkpoints, 4 for numeric
/// failures inside the engine.
pub fn exit_code(e: &EthError) -> u8 {
    match e {
        EthError::InvalidArgument(_) | EthError::Parse { .. } | EthError::Io(_) => 2,
        EthError::Checkpoint(_) => 3,
        EthError::Numeric { .. } | EthError::Internal(_) => 4,
    }
}
