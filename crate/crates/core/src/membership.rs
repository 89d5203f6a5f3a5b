//! Membership reconstruction: barycentric coordinates with respect to the
//! estimated simplex, the `c` rescaling, and the population counterparts
//! used by oracles and influence matrices.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::embed::{default_denom_tol, score_embedding, Embedding};
use crate::error::{DcmmError, Result};
use crate::model::{build_h, DcmmParams};
use crate::spectral::{check_gap, eigen_topk, Source, SpectralContext};

/// Largest accepted condition number of the augmented vertex matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// What to do with negative membership weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipMode {
    /// Keep the estimator's raw output (required by the distribution theory).
    #[default]
    Raw,
    /// Set negative weights to zero and renormalize each row.
    ClipRenormalize,
}

/// Augmented vertex matrix `B = [b_1 … b_K; 1 … 1]` with its inverse.
#[derive(Debug, Clone)]
pub struct Simplex {
    pub b: DMatrix<f64>,
    pub b_inv: DMatrix<f64>,
    pub condition: f64,
}

impl Simplex {
    /// `vertices` is `K × (K-1)` with one vertex per row.
    pub fn new(vertices: &DMatrix<f64>) -> Result<Self> {
        let k = vertices.nrows();
        if vertices.ncols() + 1 != k {
            return Err(DcmmError::Shape(format!("vertices must be K x (K-1), got {:?}", vertices.shape())));
        }
        let b = DMatrix::from_fn(k, k, |row, col| if row + 1 == k { 1.0 } else { vertices[(col, row)] });
        let sv = b.clone().singular_values();
        let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(DcmmError::DegenerateSimplex { condition });
        }
        let b_inv = b
            .clone()
            .full_piv_lu()
            .try_inverse()
            .ok_or(DcmmError::DegenerateSimplex { condition })?;
        Ok(Simplex { b, b_inv, condition })
    }

    pub fn k(&self) -> usize {
        self.b.nrows()
    }

    /// Solves `B a = (point, 1)`.
    pub fn coords(&self, point: &[f64]) -> DVector<f64> {
        let k = self.k();
        let rhs = DVector::from_fn(k, |j, _| if j + 1 == k { 1.0 } else { point[j] });
        &self.b_inv * rhs
    }
}

/// Barycentric coordinates of `point` with respect to the rows of `vertices`.
pub fn barycentric_coords(point: &[f64], vertices: &DMatrix<f64>) -> Result<DVector<f64>> {
    if point.len() != vertices.ncols() {
        return Err(DcmmError::Shape("point dimension must be K-1".into()));
    }
    Ok(Simplex::new(vertices)?.coords(point))
}

/// `c_k = [λ₁ + b_kᵀ diag(λ₂…λ_K) b_k]^{-1/2}`.
pub fn c_scaling(vertices: &DMatrix<f64>, lambdas: &DVector<f64>) -> Result<DVector<f64>> {
    let k = vertices.nrows();
    let mut c = DVector::zeros(k);
    for j in 0..k {
        let arg = lambdas[0] + (0..k - 1).map(|t| vertices[(j, t)].powi(2) * lambdas[t + 1]).sum::<f64>();
        if !(arg > 0.0) || !arg.is_finite() {
            return Err(DcmmError::SpectralDegeneracy { community: j, value: arg });
        }
        c[j] = arg.powf(-0.5);
    }
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct MembershipEstimate {
    pub pi_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub c_hat: DVector<f64>,
    pub lambda: DVector<f64>,
    pub b_hat: DMatrix<f64>,
    /// Per node, the sum of the negative entries of the raw estimate.
    pub raw_negative_mass: Vec<f64>,
    pub clip: ClipMode,
}

impl MembershipEstimate {
    pub fn n(&self) -> usize {
        self.pi_hat.nrows()
    }

    pub fn k(&self) -> usize {
        self.pi_hat.ncols()
    }

    /// CSV rows `node_id,pi_1,...,pi_K` with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("node_id".to_string())
            .chain((1..=self.k()).map(|j| format!("pi_{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n() {
            write!(out, "{i}")?;
            for v in self.pi_hat.row(i).iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Barycentric solve, `c` rescaling and row normalization.
pub fn reconstruct_pi(
    points: &DMatrix<f64>,
    vertices: &DMatrix<f64>,
    lambdas: &DVector<f64>,
    clip: ClipMode,
) -> Result<MembershipEstimate> {
    let n = points.nrows();
    let k = vertices.nrows();
    if lambdas.len() != k || points.ncols() + 1 != k {
        return Err(DcmmError::Shape("embedding, vertices and eigenvalues disagree on K".into()));
    }
    let simplex = Simplex::new(vertices)?;
    let c_hat = c_scaling(vertices, lambdas)?;
    let mut a_hat = DMatrix::zeros(n, k);
    let mut pi_hat = DMatrix::zeros(n, k);
    let mut raw_negative_mass = vec![0.0; n];
    for i in 0..n {
        let row: Vec<f64> = points.row(i).iter().copied().collect();
        let a = simplex.coords(&row);
        let mut pi: DVector<f64> = a.component_div(&c_hat);
        let total = pi.sum();
        if total == 0.0 || !total.is_finite() {
            return Err(DcmmError::Reconstruction { node: i });
        }
        pi /= total;
        raw_negative_mass[i] = pi.iter().filter(|v| **v < 0.0).sum();
        if clip == ClipMode::ClipRenormalize {
            pi.apply(|v| *v = v.max(0.0));
            let s = pi.sum();
            if s == 0.0 {
                return Err(DcmmError::Reconstruction { node: i });
            }
            pi /= s;
        }
        a_hat.set_row(i, &a.transpose());
        pi_hat.set_row(i, &pi.transpose());
    }
    Ok(MembershipEstimate {
        pi_hat,
        a_hat,
        c_hat,
        lambda: lambdas.clone(),
        b_hat: simplex.b,
        raw_negative_mass,
        clip,
    })
}

/// Population quantities of a DCMM model: spectra of `H`, the noiseless
/// embedding, true vertices over the pure-node sets, barycentric coordinates
/// and the `c` scaling.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub h: DMatrix<f64>,
    pub spec: SpectralContext,
    pub embedding: Embedding,
    pub vertex_sets: Vec<Vec<usize>>,
    /// `K × (K-1)`, row `k` is `b*_k`.
    pub vertices: DMatrix<f64>,
    pub simplex: Simplex,
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
}

pub fn ground_truth_quantities(params: &DcmmParams) -> Result<GroundTruth> {
    let k = params.k;
    let h = build_h(params)?;
    let spec = eigen_topk(&h, k, Source::GroundTruth)?;
    check_gap(&spec)?;
    let embedding = score_embedding(&spec, default_denom_tol(&spec))?;
    let vertex_sets: Vec<Vec<usize>> = (0..k).map(|c| params.pure_nodes(c)).collect();
    let mut vertices = DMatrix::zeros(k, k - 1);
    for (c, set) in vertex_sets.iter().enumerate() {
        let mut mean = DVector::zeros(k - 1);
        for &i in set {
            mean += embedding.points.row(i).transpose();
        }
        vertices.set_row(c, &(mean / set.len() as f64).transpose());
    }
    let simplex = Simplex::new(&vertices)?;
    let c = c_scaling(&vertices, &spec.lambdas)?;
    let mut a = DMatrix::zeros(params.n, k);
    for i in 0..params.n {
        let row: Vec<f64> = embedding.points.row(i).iter().copied().collect();
        a.set_row(i, &simplex.coords(&row).transpose());
    }
    Ok(GroundTruth {
        h,
        spec,
        embedding,
        vertex_sets,
        vertices,
        simplex,
        a,
        c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthetic_config, Setting};
    use crate::pipeline::{estimate_matrix, Radius};
    use crate::vertex::match_permutation;
    use rand::{Rng, SeedableRng};

    fn random_params(n: usize, k: usize, seed: u64) -> DcmmParams {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pi = DMatrix::zeros(n, k);
        for i in 0..n {
            if i < 2 * k {
                pi[(i, i % k)] = 1.0;
                continue;
            }
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            let mut acc = 0.0;
            for c in 0..k - 1 {
                pi[(i, c)] = w[c] / s;
                acc += pi[(i, c)];
            }
            pi[(i, k - 1)] = 1.0 - acc;
        }
        let theta = (0..n).map(|_| rng.random_range(0.5..0.9)).collect();
        let mut p = DMatrix::from_element(k, k, 0.2);
        for c in 0..k {
            p[(c, c)] = 1.0;
        }
        DcmmParams::new(theta, pi, p, false).unwrap()
    }

    fn triangle() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, 0.8])
    }

    #[test]
    fn vertex_and_centroid_coordinates() {
        let v = triangle();
        let a = barycentric_coords(&[1.0, 0.0], &v).unwrap();
        assert!((a - DVector::from_vec(vec![0.0, 1.0, 0.0])).amax() < 1e-12);
        let centroid = [0.5, 0.8 / 3.0];
        let a = barycentric_coords(&centroid, &v).unwrap();
        assert!(a.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn interior_point_residual() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let v = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(-0.2..0.2)).collect();
        let a = barycentric_coords(&p, &v).unwrap();
        let s = Simplex::new(&v).unwrap();
        let rhs = DVector::from_vec(vec![p[0], p[1], p[2], 1.0]);
        assert!((&s.b * &a - rhs).norm() < 1e-10);
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_simplex() {
        let v = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(barycentric_coords(&[0.5, 0.5], &v), Err(DcmmError::DegenerateSimplex { .. })));
    }

    #[test]
    fn nonpositive_c_argument() {
        let v = DMatrix::from_row_slice(2, 1, &[-3.0, 3.0]);
        let l = DVector::from_vec(vec![1.0, -0.5]);
        assert!(matches!(c_scaling(&v, &l), Err(DcmmError::SpectralDegeneracy { .. })));
    }

    #[test]
    fn rows_sum_to_one_and_clip_mode() {
        let v = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let pts = DMatrix::from_column_slice(4, 1, &[-1.2, -0.3, 0.5, 1.1]);
        let l = DVector::from_vec(vec![10.0, 2.0]);
        let raw = reconstruct_pi(&pts, &v, &l, ClipMode::Raw).unwrap();
        for i in 0..4 {
            assert!((raw.pi_hat.row(i).sum() - 1.0).abs() < 1e-12);
            assert!((raw.a_hat.row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert!(raw.raw_negative_mass[0] < 0.0 && raw.raw_negative_mass[3] < 0.0);
        assert_eq!(raw.raw_negative_mass[1], 0.0);
        let clipped = reconstruct_pi(&pts, &v, &l, ClipMode::ClipRenormalize).unwrap();
        assert!(clipped.pi_hat.min() >= 0.0);
        assert_eq!(clipped.raw_negative_mass, raw.raw_negative_mass);
    }

    #[test]
    fn vertex_order_permutes_columns() {
        let v = triangle();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let pts = DMatrix::from_fn(10, 2, |_, j| rng.random_range(0.1..0.5) + 0.1 * j as f64);
        let l = DVector::from_vec(vec![20.0, 3.0, -2.0]);
        let a = reconstruct_pi(&pts, &v, &l, ClipMode::Raw).unwrap();
        let order = [2, 0, 1];
        let vp = DMatrix::from_fn(3, 2, |i, j| v[(order[i], j)]);
        let b = reconstruct_pi(&pts, &vp, &l, ClipMode::Raw).unwrap();
        for i in 0..10 {
            for c in 0..3 {
                assert!((b.pi_hat[(i, c)] - a.pi_hat[(i, order[c])]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ground_truth_vertices_and_inverse_pipeline() {
        let params = random_params(30, 3, 4);
        let gt = ground_truth_quantities(&params).unwrap();
        for (c, set) in gt.vertex_sets.iter().enumerate() {
            for &i in set {
                let e = DVector::from_fn(3, |j, _| if j == c { 1.0 } else { 0.0 });
                assert!((gt.a.row(i).transpose() - e).amax() < 1e-8);
            }
        }
        // Reconstruct Π from (a*, c*).
        for i in 0..params.n {
            let pi: DVector<f64> = gt.a.row(i).transpose().component_div(&gt.c);
            let pi = &pi / pi.sum();
            assert!((pi - params.pi.row(i).transpose()).amax() < 1e-8);
        }
    }

    #[test]
    fn single_pure_node_vertex() {
        let params = synthetic_config(Setting::ThetaConst06, 40, 1).unwrap();
        let gt = ground_truth_quantities(&params).unwrap();
        for c in 0..2 {
            let j = gt.vertex_sets[c][0];
            assert_eq!(gt.vertex_sets[c].len(), 1);
            assert_eq!(gt.vertices[(c, 0)], gt.embedding.points[(j, 0)]);
        }
    }

    #[test]
    fn zero_noise_pipeline_recovers_pi() {
        let params = synthetic_config(Setting::ThetaUniform, 200, 9).unwrap();
        let gt = ground_truth_quantities(&params).unwrap();
        let fit = estimate_matrix(&gt.h, 2, Radius::Auto, ClipMode::Raw).unwrap();
        let perm = match_permutation(&fit.hunt.vertices, &gt.vertices).unwrap();
        let mut err: f64 = 0.0;
        for i in 0..params.n {
            for c in 0..2 {
                err = err.max((fit.estimate.pi_hat[(i, perm[c])] - params.pi[(i, c)]).abs());
            }
        }
        assert!(err < 1e-6, "max error {err}");
        for c in 0..2 {
            let pure = params.pure_nodes(c)[0];
            assert!((fit.estimate.pi_hat[(pure, perm[c])] - 1.0).abs() < 1e-8);
        }
    }
}
