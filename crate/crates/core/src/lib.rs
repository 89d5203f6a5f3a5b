//! Mixed-SCORE estimation and statistical inference for degree-corrected
//! mixed-membership (DCMM) networks.

pub mod embed;
pub mod error;
pub mod harness;
pub mod inference;
pub mod influence;
pub mod io;
pub mod membership;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod special;
pub mod spectral;
pub mod vertex;

pub use error::{DcmmError, Result};
