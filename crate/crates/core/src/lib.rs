//! Latent factor blockmodel for binary relational data.
//!
//! The link logit between objects `i` and `j` combines a covariate term, a
//! low-rank factor term and a block term chosen by hard cluster labels:
//!
//! ```text
//! H_ij = β·x_ij + u_i·v_j + C[z_i, z_j] + ε,    P(S_ij = 1) = σ(H_ij)
//! ```
//!
//! Parameters are fitted by MAP estimation with a minorization-maximization
//! scheme ([`optim`]). Numeric code is generic over [`Scalar`]; the aliases
//! below fix it to `f64` or `f32`.

pub mod cli;
pub mod data;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod state;
pub mod synth;

pub use data::{validate, DataError, Entry, RelationData, SideInfo};
pub use eval::{auc, evaluate, factor_labels, nmi, reconstruct, roc, EvalError, EvalReport};
pub use linalg::Matrix;
pub use model::{FactorSelector, MinorizerContext, ModelError};
pub use optim::{fit, fit_from, predict, AblationMode, OptimError, Phase, SweepSchedule, Trainer};
pub use scalar::Scalar;
pub use state::{FitTrace, HyperParams, LatentState};
pub use synth::{generate, split, BlockSpec, Split};

pub type LatentStateF64 = LatentState<f64>;
pub type LatentStateF32 = LatentState<f32>;
pub type HyperParamsF64 = HyperParams<f64>;
pub type HyperParamsF32 = HyperParams<f32>;
pub type SideInfoF64 = SideInfo<f64>;
pub type SideInfoF32 = SideInfo<f32>;
pub type FitTraceF64 = FitTrace<f64>;
pub type FitTraceF32 = FitTrace<f32>;
pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
