//! Reverse-mode autodiff, small conv/fc networks and a two-task meta-learning
//! training objective with learnable per-layer inner step sizes.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod meta;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod toy;

pub use autodiff::{Tape, Var};
pub use data::{Batch, Dataset, Split, Targets, TaskPair};
pub use error::{Error, Result};
pub use meta::{AlphaMode, AlphaSet, ObjectiveConfig, TrainingState, Variant};
pub use nn::{init_params, BnStats, InitScheme, LayerMask, LayerSpec, Model, NetworkSpec, ParamSet};
pub use optim::{OptimizerKind, OptimizerSpec, OptimizerState};
pub use tensor::{Precision, Tensor};
