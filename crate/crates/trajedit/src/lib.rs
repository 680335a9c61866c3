//! Files, experiment harness and command line around `trajedit-core`.
//!
//! - [`checkpoint`]: versioned JSON container for trained fields and classifiers.
//! - [`trajectory_io`]: CSV trajectory dumps with a grid header.
//! - [`config`]: field, reward, dataset and source descriptions.
//! - [`report`]: JSON run reports shared by edits and baselines.
//! - [`harness`]: method × scale sweeps, Pareto aggregation, resume.
//! - [`plots`]: SVG figures.
//! - [`lqr`]: discrete Riccati reference for linear-quadratic edits.
//! - [`verify`]: the oracle suite behind `trajedit verify`.

pub mod checkpoint;
pub mod config;
pub mod harness;
pub mod lqr;
pub mod plots;
pub mod report;
pub mod trajectory_io;
pub mod verify;
