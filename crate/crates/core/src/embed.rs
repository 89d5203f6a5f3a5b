//! SCORE embedding: entrywise ratios of the trailing eigenvectors to the
//! leading one, placing each node in `R^{K-1}`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{DcmmError, Result};
use crate::spectral::SpectralContext;

/// Relative denominator tolerance used when none is supplied.
pub const DEFAULT_DENOM_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Embedding {
    pub n: usize,
    pub k: usize,
    /// Row `i` holds `r_i`.
    pub points: DMatrix<f64>,
    pub u1: DVector<f64>,
    pub min_abs_u1: f64,
}

/// `1e-8 · max_i |u1[i]|`.
pub fn default_denom_tol(spec: &SpectralContext) -> f64 {
    DEFAULT_DENOM_REL_TOL * spec.u.column(0).amax()
}

pub fn score_embedding(spec: &SpectralContext, denom_tol: f64) -> Result<Embedding> {
    if !(denom_tol > 0.0) {
        return Err(DcmmError::Config("denominator tolerance must be positive".into()));
    }
    let u1 = spec.u1();
    let mut min_abs = f64::INFINITY;
    for (i, &v) in u1.iter().enumerate() {
        if !(v.abs() > denom_tol) {
            return Err(DcmmError::DegenerateLeadingVector {
                node: i,
                value: v,
                tol: denom_tol,
            });
        }
        min_abs = min_abs.min(v.abs());
    }
    let points = DMatrix::from_fn(spec.n, spec.k - 1, |i, j| spec.u[(i, j + 1)] / u1[i]);
    Ok(Embedding {
        n: spec.n,
        k: spec.k,
        points,
        u1,
        min_abs_u1: min_abs,
    })
}

impl Embedding {
    /// CSV rows `node_id,r_1,...,r_{K-1}` with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("node_id".to_string())
            .chain((1..self.k).map(|j| format!("r_{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n {
            write!(out, "{i}")?;
            for v in self.points.row(i).iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
