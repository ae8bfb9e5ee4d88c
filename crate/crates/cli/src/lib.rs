//! End-to-end orchestration of the `thzmap` toolkit: run configuration,
//! pipeline stages, artifacts and the subcommands behind the binary.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use commands::{
    cmd_db_import, cmd_db_query, cmd_estimate, cmd_identify, cmd_map, cmd_pipeline, cmd_simulate, load_config, map_csv_paths,
    Overrides,
};
pub use config::{ArcMode, Method, PipelineConfig};
pub use pipeline::{run_pipeline, RunReport};

use thzmap_core::Error;

/// Process exit code for an error: 2 for configuration/input problems,
/// 3 for numerical failures, 1 for I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Parse { .. } | Error::Json(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io { .. } => 1,
    }
}
