//! Leading eigenpairs with the ordering and sign conventions used by the
//! SCORE pipeline, and the low-rank plug-in matrices built from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DcmmError, Result};

/// Iteration cap handed to the dense symmetric QR solver.
pub const EIGEN_MAX_ITER: usize = 100_000;

const SYMMETRY_TOL: f64 = 1e-10;
const GAP_TOL: f64 = 1e-12;

/// Whether a context was built from data or from the population matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Observed,
    GroundTruth,
}

/// The `K` eigenpairs of largest magnitude, sorted by descending signed value.
#[derive(Debug, Clone)]
pub struct SpectralContext {
    pub n: usize,
    pub k: usize,
    pub lambdas: DVector<f64>,
    /// Column `j` pairs with `lambdas[j]`.
    pub u: DMatrix<f64>,
    pub u1_sign_fixed: bool,
    pub source: Source,
}

impl SpectralContext {
    pub fn u1(&self) -> DVector<f64> {
        self.u.column(0).into_owned()
    }

    /// Columns 2..K, i.e. the eigenvectors feeding the SCORE ratios.
    pub fn u_bar(&self) -> DMatrix<f64> {
        self.u.columns(1, self.k - 1).into_owned()
    }

    pub fn lambda1(&self) -> f64 {
        self.lambdas[0]
    }

    /// `λ₂ … λ_K`.
    pub fn lambda_bar(&self) -> DVector<f64> {
        self.lambdas.rows(1, self.k - 1).into_owned()
    }
}

fn fix_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) {
    let s: f64 = v.iter().sum();
    let flip = if s != 0.0 {
        s < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.neg_mut();
    }
}

/// Top-`k` eigenpairs of symmetric `m` by magnitude.
///
/// Ties in magnitude at the cut keep the more positive eigenvalue. Every
/// returned eigenvector is oriented so its entries sum to a nonnegative value
/// (first nonzero entry positive when the sum is exactly zero).
pub fn eigen_topk(m: &DMatrix<f64>, k: usize, source: Source) -> Result<SpectralContext> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(DcmmError::Shape("matrix must be square".into()));
    }
    if k == 0 || k > n {
        return Err(DcmmError::Config(format!("need 1 <= K <= n, got K={k}, n={n}")));
    }
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(DcmmError::Validation(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(DcmmError::NoConvergence(EIGEN_MAX_ITER))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        lb.abs()
            .total_cmp(&la.abs())
            .then(lb.total_cmp(&la))
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let lambdas = DVector::from_iterator(k, chosen.iter().map(|&c| eig.eigenvalues[c]));
    let mut u = DMatrix::zeros(n, k);
    for (j, &c) in chosen.iter().enumerate() {
        u.set_column(j, &eig.eigenvectors.column(c));
        fix_sign(u.column_mut(j));
    }
    Ok(SpectralContext {
        n,
        k,
        lambdas,
        u,
        u1_sign_fixed: true,
        source,
    })
}

/// Checks that `λ₁` is separated from `λ₂ … λ_K`.
pub fn check_gap(spec: &SpectralContext) -> Result<()> {
    let l1 = spec.lambda1();
    for j in 1..spec.k {
        let lj = spec.lambdas[j];
        if (l1 - lj).abs() <= GAP_TOL * l1.abs().max(f64::MIN_POSITIVE) {
            return Err(DcmmError::SingularGap {
                lambda1: l1,
                index: j + 1,
                other: lj,
            });
        }
    }
    Ok(())
}

/// Rank-`K` reconstruction `Σ λ_j u_j u_jᵀ`.
pub fn low_rank(spec: &SpectralContext) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(spec.n, spec.k, |i, j| spec.u[(i, j)] * spec.lambdas[j]);
    let mut h = scaled * spec.u.transpose();
    symmetrize(&mut h);
    h
}

/// `N = (I − U Uᵀ) + Σ_{j≥2} λ₁/(λ₁−λ_j) u_j u_jᵀ`.
///
/// Eigenvalues beyond the leading `K` are treated as zero, which gives them
/// unit coefficient.
pub fn n_matrix(spec: &SpectralContext) -> Result<DMatrix<f64>> {
    check_gap(spec)?;
    let l1 = spec.lambda1();
    // I - u1 u1ᵀ + Σ_{j≥2} (coef_j - 1) u_j u_jᵀ
    let mut weights = vec![-1.0; spec.k];
    for (j, w) in weights.iter_mut().enumerate().skip(1) {
        *w = l1 / (l1 - spec.lambdas[j]) - 1.0;
    }
    let scaled = DMatrix::from_fn(spec.n, spec.k, |i, j| spec.u[(i, j)] * weights[j]);
    let mut nm = scaled * spec.u.transpose();
    for i in 0..spec.n {
        nm[(i, i)] += 1.0;
    }
    symmetrize(&mut nm);
    Ok(nm)
}

/// Plug-in `(Ĥ, N̂)` from a spectral context.
pub fn plug_in_ctx(spec: &SpectralContext) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let nm = n_matrix(spec)?;
    Ok((low_rank(spec), nm))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
