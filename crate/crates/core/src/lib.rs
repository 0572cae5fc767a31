//! Consensus-GRPO laboratory on exactly enumerable sequence policies.
//!
//! A tabular softmax policy over short token strings is small enough that
//! every expectation the training theory talks about can be computed by
//! brute force: the consensus objective, its gradient, and the expected
//! GRPO / Dr.GRPO estimator over all ordered groups. The modules mirror the
//! pipeline:
//!
//! - [`seqcore`]: vocabularies, sequences, prompts, candidate groups
//! - [`policy`]: the tabular policy, sampling, exact log-prob gradients
//! - [`utility`]: bounded pairwise utilities and the G x G matrix
//! - [`mbr`]: Monte-Carlo and exact expected-utility selection
//! - [`optimizer`]: consensus rewards, advantages, estimator, ascent loop
//! - [`oracle`]: exact objective / gradient / estimator expectation
//! - [`tasks`]: synthetic tasks and candidate files
//! - [`metrics`]: checkpoint statistics, variance trajectories, G sweeps
//! - [`harness`]: configuration, CLI commands, persistence and plots

pub mod error;
pub mod exec;
pub mod harness;
pub mod mbr;
pub mod metrics;
pub mod optimizer;
pub mod oracle;
pub mod persist;
pub mod policy;
pub mod seqcore;
pub mod tasks;
pub mod utility;

pub use error::{Error, Result};
pub use exec::Execution;
