//! Empirical Bayes shrinkage of per-gene effects with adjustment for hidden
//! confounders estimated by factor analysis.

pub mod backwash;
pub mod data;
pub mod dist;
pub mod error;
pub mod evaluation;
pub mod factor;
pub mod mixture;
pub mod model;
pub mod mouthwash;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod posterior;
pub mod rotation;
pub mod simulation;
pub mod weights;

pub use error::{Error, Result};
