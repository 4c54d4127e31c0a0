//! Training-data attributors: IFFIM (plain and projected), TRAK, explicit IF,
//! IF with conjugate gradient or LiSSA, and TracIn.

mod fim;
mod hessian;
mod iffim;
mod record;
mod tracin;
mod trak;

pub use fim::{FimContext, FimMode, TestCoords};
pub use hessian::{
    conjugate_gradient, explicit_scores, if_cg, if_explicit, if_lissa, lissa_solve, CgTrace,
    LissaConfig, LISSA_DIVERGENCE_NORM, MAX_EXPLICIT_PARAMS,
};
pub use iffim::{iffim, iffim_projected};
pub use record::AttributionMatrix;
pub use tracin::{tracin, tracin_from_grads, TracinOptions, TracinOutcome};
pub use trak::{trak, TrakContext, TrakOptions};
