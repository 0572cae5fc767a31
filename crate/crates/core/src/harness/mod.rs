//! Command implementations behind the `cgrpo` binary.

pub mod config;
pub mod decode;
pub mod report;
pub mod svg;
pub mod sweep;
pub mod train;
pub mod verify;

pub use config::RunConfig;
pub use decode::{cmd_decode, DecodeMode, DecodeRequest};
pub use report::cmd_report;
pub use sweep::cmd_sweep;
pub use train::{cmd_train, run_training};
pub use verify::{cmd_verify, VerifyParams};
