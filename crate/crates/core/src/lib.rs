//! Mean field games on model Riemannian manifolds and Ollivier curvature of
//! geometric graphs.

pub mod curvature_mfg;
pub mod discretization;
pub mod error;
pub mod fpk;
pub mod geograph;
pub mod geometry;
pub mod hjb;
pub mod linalg;
pub mod mfg;
pub mod sde;
pub mod transport;

pub use error::{Error, Result};
