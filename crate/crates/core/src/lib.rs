// SPDX-License-Identifier: Apache-2.0

//! Flow-matching teachers and two-timed flow model (TTFM) students.
//!
//! The crate trains a velocity network on a 2D point cloud with conditional
//! flow matching, distills it into a TTFM `φ_{s,t}(x) = x + (t − s) v_{s,t}(x)`
//! with the initial/terminal velocity matching loss (or one of the LFMD, EFMD,
//! PID and TVM-only baselines), and scores few-step sampling by a
//! non-negative Monte-Carlo estimate of `KL(student ‖ teacher)`.

pub mod analytic;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod ode;
pub mod pipeline;
pub mod probpath;
pub mod training;

pub use datasets::{DatasetKind, DatasetSpec, PointCloud};
pub use error::{Error, Result};


pub use eval::{KlReport, NfeSchedule};
pub use losses::{EfmdSign, LossKind, LossSpec, UStrategy};
pub use ode::SolverKind;
pub use training::{AdamConfig, TrainConfig};
pub use nn::{
    AverageVelocity, Checkpoint, MlpSpec, ParamStore, StudentArch, StudentAvm, TeacherArch,
    TeacherNet, Ttfm, VelocityField,
};

pub use probpath::PathConfig;

