//! Normal Distributions Transform registration.

mod grid;
mod register;
mod score;
mod submap;

pub use grid::{regularize, NdtCell, NdtGrid, EIGEN_FLOOR, EIGEN_RATIO, MIN_POINTS};
pub use register::{align, Alignment, NewtonOptions};
pub use score::{perturb, point_scores, score, score_and_derivatives, ScoreDerivatives};
pub use submap::{preprocess, register, RegistrationResult, Submap};
