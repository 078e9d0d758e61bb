//! Libraries of optimal periodic gaits for hybrid walkers, traced by
//! pseudo-arclength continuation of indirect or direct shooting problems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod compass_gait;
pub mod continuation;
pub mod direct;
pub mod error;
pub mod indirect;
pub mod integrate;
pub mod linalg;
pub mod ocp;
pub mod reconstruct;
pub mod workflows;

pub use error::{Error, Result};
