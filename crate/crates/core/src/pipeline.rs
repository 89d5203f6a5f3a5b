//! End-to-end estimation: spectra, SCORE embedding, vertex hunting and
//! membership reconstruction.

use nalgebra::DMatrix;

use crate::embed::{default_denom_tol, score_embedding, Embedding};
use crate::error::{DcmmError, Result};
use crate::membership::{reconstruct_pi, ClipMode, MembershipEstimate};
use crate::model::AdjacencyMatrix;
use crate::spectral::{check_gap, eigen_topk, Source, SpectralContext};
use crate::vertex::{default_radius, successive_projection, VertexHuntResult};

/// Vertex-hunting radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for Radius {
    type Err = DcmmError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Radius::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 => Ok(Radius::Fixed(v)),
            _ => Err(DcmmError::Config(format!("radius must be 'auto' or a positive number, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub spec: SpectralContext,
    pub embedding: Embedding,
    pub hunt: VertexHuntResult,
    pub estimate: MembershipEstimate,
}

/// Runs the full estimator on a symmetric matrix (an adjacency matrix, or
/// `H` itself for noiseless checks).
pub fn estimate_matrix(m: &DMatrix<f64>, k: usize, radius: Radius, clip: ClipMode) -> Result<Fit> {
    let spec = eigen_topk(m, k, Source::Observed)?;
    check_gap(&spec)?;
    let embedding = score_embedding(&spec, default_denom_tol(&spec))?;
    let phi = match radius {
        Radius::Fixed(v) => v,
        Radius::Auto => default_radius(&embedding.points, k)?,
    };
    let hunt = successive_projection(&embedding.points, k, phi)?;
    let estimate = reconstruct_pi(&embedding.points, &hunt.vertices, &spec.lambdas, clip)?;
    Ok(Fit {
        spec,
        embedding,
        hunt,
        estimate,
    })
}

pub fn estimate(adj: &AdjacencyMatrix, k: usize, radius: Radius, clip: ClipMode) -> Result<Fit> {
    estimate_matrix(adj.entries(), k, radius, clip)
}
