//! normlab: a small-data training laboratory.
//!
//! Exact SGD dynamics with weight decay and momentum, a minimal
//! differentiable network engine with scale-invariance instrumentation,
//! log-space hyper-parameter grids, and validation-free model selection via
//! the parameter norm after one epoch.

pub mod check;
pub mod config;
pub mod data;
pub mod report;
pub mod search;
pub mod select;
pub mod trainer;
pub mod error;
pub mod net;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use net::{build_network, ArchFamily, ArchSpec, Mode, NetBuilder, Network, ParamGroup, ParamSubset};
pub use optim::{effective_weight_decay, predicted_decay_norm, Schedule, ScheduleKind, SgdState};
pub use tensor::{Real, Tensor};
