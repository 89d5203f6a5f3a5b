//! Vertex hunting by successive projection.
//!
//! Each node is lifted to `Z_i = (1, r_iᵀ)ᵀ`. Every round selects the row of
//! largest norm and projects all rows onto the orthogonal complement of the
//! selected one. The selected nodes are the anchors; the vertex estimates are
//! means over the points within `phi` of each anchor.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{DcmmError, Result};

const RANK_TOL: f64 = 1e-12;
const DUPLICATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct VertexHuntResult {
    pub anchors: Vec<usize>,
    pub vertex_sets: Vec<Vec<usize>>,
    /// `K × (K-1)`, row `k` is `b_k`.
    #[serde(serialize_with = "crate::io::serialize_rows")]
    pub vertices: DMatrix<f64>,
    pub radius: f64,
}

impl VertexHuntResult {
    pub fn k(&self) -> usize {
        self.anchors.len()
    }
}

fn dist(points: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (points.row(a) - points.row(b)).norm()
}

/// Anchor sequence of the projection loop, without any radius.
pub fn spa_anchors(points: &DMatrix<f64>, k: usize) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(DcmmError::Config(format!("need n >= K >= 1, got n={n}, K={k}")));
    }
    if points.ncols() + 1 != k {
        return Err(DcmmError::Shape(format!("points must have K-1 = {} columns", k - 1)));
    }
    // Row i of z is Z_i.
    let mut z = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { points[(i, j - 1)] });
    let mut norms: Vec<f64> = (0..n).map(|i| z.row(i).norm_squared()).collect();
    let first_max = norms.iter().cloned().fold(0.0, f64::max);
    let mut anchors = Vec::with_capacity(k);
    for round in 0..k {
        let (best, &best_norm) = norms
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        if !(best_norm > RANK_TOL * first_max) || anchors.contains(&best) {
            return Err(DcmmError::RankDeficient { round: round + 1 });
        }
        anchors.push(best);
        let pivot: DVector<f64> = z.row(best).transpose();
        let denom = pivot.norm_squared();
        let coef = &z * &pivot / denom;
        z -= coef * pivot.transpose();
        for (i, v) in norms.iter_mut().enumerate() {
            *v = z.row(i).norm_squared();
        }
    }
    Ok(anchors)
}

/// Successive projection followed by radius-`phi` vertex sets.
///
/// A node within `phi` of several anchors joins the nearest one (lowest
/// community index on exact ties).
pub fn successive_projection(points: &DMatrix<f64>, k: usize, phi: f64) -> Result<VertexHuntResult> {
    let n = points.nrows();
    if !(phi > 0.0) {
        return Err(DcmmError::Config(format!("radius must be positive, got {phi}")));
    }
    if k == 1 {
        if n == 0 {
            return Err(DcmmError::Config("empty embedding".into()));
        }
        return Ok(VertexHuntResult {
            anchors: vec![0],
            vertex_sets: vec![(0..n).collect()],
            vertices: DMatrix::zeros(1, 0),
            radius: phi,
        });
    }
    let anchors = spa_anchors(points, k)?;
    let mut vertex_sets = vec![Vec::new(); k];
    for i in 0..n {
        let nearest = anchors
            .iter()
            .enumerate()
            .map(|(c, &a)| (c, dist(points, i, a)))
            .filter(|(_, d)| *d <= phi)
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((c, _)) = nearest {
            vertex_sets[c].push(i);
        }
    }
    let mut vertices = DMatrix::zeros(k, k - 1);
    for (c, set) in vertex_sets.iter().enumerate() {
        let mut mean = DVector::zeros(k - 1);
        for &i in set {
            mean += points.row(i).transpose();
        }
        vertices.set_row(c, &(mean / set.len() as f64).transpose());
    }
    Ok(VertexHuntResult {
        anchors,
        vertex_sets,
        vertices,
        radius: phi,
    })
}

/// Data-driven radius: half the smallest gap between an anchor and the
/// nearest point that is not a copy of it.
///
/// When the only points are copies of the simplex vertices this is half the
/// minimum vertex distance. Scales linearly with the points.
pub fn default_radius(points: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = points.nrows();
    if n <= k {
        return Err(DcmmError::Config(format!("default radius needs n > K, got n={n}, K={k}")));
    }
    if k == 1 {
        return Ok(1.0);
    }
    let anchors = spa_anchors(points, k)?;
    let mut spread = 0.0f64;
    for (x, &a) in anchors.iter().enumerate() {
        for &b in &anchors[x + 1..] {
            spread = spread.max(dist(points, a, b));
        }
    }
    let tol = DUPLICATE_TOL * spread;
    let mut gap = f64::INFINITY;
    for &a in &anchors {
        for i in 0..n {
            let d = dist(points, i, a);
            if d > tol {
                gap = gap.min(d);
            }
        }
    }
    if !(spread > 0.0) || !gap.is_finite() {
        return Err(DcmmError::RankDeficient { round: k });
    }
    Ok(0.5 * gap)
}

/// Alignment `perm` minimizing `Σ_k ‖truth_k − est_{perm[k]}‖²`.
///
/// `perm[k]` is the estimated label matching true community `k`. Among
/// optimal assignments the lexicographically smallest is returned.
pub fn match_permutation(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<usize>> {
    let k = truth.nrows();
    if est.shape() != truth.shape() {
        return Err(DcmmError::Shape("vertex matrices differ in shape".into()));
    }
    if k > 20 {
        return Err(DcmmError::Config("permutation matching supports K <= 20".into()));
    }
    let cost = |t: usize, e: usize| (truth.row(t) - est.row(e)).norm_squared();
    let full = (1usize << k) - 1;
    // best[mask]: optimal cost of assigning the remaining true rows given the
    // estimated rows already used in `mask`.
    let mut best = vec![0.0f64; 1 << k];
    for mask in (0..full).rev() {
        let t = mask.count_ones() as usize;
        best[mask] = (0..k)
            .filter(|e| mask & (1 << e) == 0)
            .map(|e| cost(t, e) + best[mask | (1 << e)])
            .fold(f64::INFINITY, f64::min);
    }
    let mut perm = Vec::with_capacity(k);
    let mut mask = 0usize;
    for t in 0..k {
        let target = best[mask];
        let tol = 1e-12 * (1.0 + target.abs());
        let e = (0..k)
            .filter(|e| mask & (1 << e) == 0)
            .find(|&e| cost(t, e) + best[mask | (1 << e)] <= target + tol)
            .expect("an optimal completion exists");
        perm.push(e);
        mask |= 1 << e;
    }
    Ok(perm)
}
