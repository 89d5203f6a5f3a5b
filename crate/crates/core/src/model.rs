//! The degree-corrected mixed-membership generative model.
//!
//! A network on `n` nodes is driven by per-node degree parameters `theta`,
//! membership rows `pi` (each a probability vector over `k` communities) and a
//! symmetric community connectivity matrix `p`. Edge probabilities are
//! `H = Θ Π P Πᵀ Θ` and the observed adjacency is an independent Bernoulli
//! draw of the upper triangle of `H`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{DcmmError, Result};
use crate::rng;

const ROW_SUM_TOL: f64 = 1e-12;
const PURE_TOL: f64 = 1e-12;

/// Ground-truth parameters of a DCMM network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDoc", into = "ParamsDoc")]
pub struct DcmmParams {
    pub n: usize,
    pub k: usize,
    pub theta: Vec<f64>,
    pub pi: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub self_loop: bool,
}

/// On-disk JSON layout of [`DcmmParams`].
#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    n: usize,
    k: usize,
    theta: Vec<f64>,
    pi: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    #[serde(default)]
    self_loop: bool,
}

fn rows_to_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(DcmmError::Shape(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl TryFrom<ParamsDoc> for DcmmParams {
    type Error = DcmmError;

    fn try_from(doc: ParamsDoc) -> Result<Self> {
        let pi = rows_to_matrix(&doc.pi, doc.n, doc.k, "pi")?;
        let p = rows_to_matrix(&doc.p, doc.k, doc.k, "p")?;
        DcmmParams::new(doc.theta, pi, p, doc.self_loop)
    }
}

impl From<DcmmParams> for ParamsDoc {
    fn from(p: DcmmParams) -> Self {
        ParamsDoc {
            n: p.n,
            k: p.k,
            theta: p.theta,
            pi: matrix_to_rows(&p.pi),
            p: matrix_to_rows(&p.p),
            self_loop: p.self_loop,
        }
    }
}

impl DcmmParams {
    /// Builds and validates a parameter set.
    pub fn new(theta: Vec<f64>, pi: DMatrix<f64>, p: DMatrix<f64>, self_loop: bool) -> Result<Self> {
        let params = DcmmParams {
            n: pi.nrows(),
            k: pi.ncols(),
            theta,
            pi,
            p,
            self_loop,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks every model invariant, naming the first one that fails.
    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n, self.k);
        if n == 0 || k == 0 {
            return Err(DcmmError::Validation("n and k must be positive".into()));
        }
        if self.theta.len() != n || self.pi.shape() != (n, k) || self.p.shape() != (k, k) {
            return Err(DcmmError::Shape(format!(
                "expected theta[{n}], pi {n}x{k}, p {k}x{k}"
            )));
        }
        if let Some(i) = self.theta.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(DcmmError::Validation(format!(
                "theta must be positive: theta[{i}] = {}",
                self.theta[i]
            )));
        }
        for i in 0..n {
            let row = self.pi.row(i);
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(DcmmError::Validation(format!("pi row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(DcmmError::Validation(format!(
                    "pi row {i} is not stochastic: sums to {s}"
                )));
            }
        }
        for c in 0..k {
            if !(0..n).any(|i| self.pi[(i, c)] >= 1.0 - PURE_TOL) {
                return Err(DcmmError::Validation(format!("community {c} has no pure node")));
            }
        }
        for a in 0..k {
            for b in 0..k {
                let v = self.p[(a, b)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(DcmmError::Validation(format!("p[{a},{b}] = {v} outside [0,1]")));
                }
                if v != self.p[(b, a)] {
                    return Err(DcmmError::Validation("p is not symmetric".into()));
                }
            }
        }
        let sv = self.p.clone().singular_values();
        let smax = sv.max();
        if !(sv.min() > 1e-12 * smax.max(f64::MIN_POSITIVE)) {
            return Err(DcmmError::Validation("p is singular".into()));
        }
        Ok(())
    }

    /// Indices of the pure nodes of community `c`.
    pub fn pure_nodes(&self, c: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.pi[(i, c)] >= 1.0 - PURE_TOL).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| DcmmError::Validation(e.to_string()))
    }
}

/// Edge-probability matrix `H = Θ Π P Πᵀ Θ`.
pub fn build_h(params: &DcmmParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let n = params.n;
    let pp = &params.pi * &params.p;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = params.theta[i] * params.theta[j] * pp.row(i).dot(&params.pi.row(j));
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Symmetric binary adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    entries: DMatrix<f64>,
    self_loop: bool,
}

impl AdjacencyMatrix {
    pub fn new(entries: DMatrix<f64>, self_loop: bool) -> Result<Self> {
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(DcmmError::Shape("adjacency must be square".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let v = entries[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(DcmmError::Validation(format!("entry ({i},{j}) = {v} is not binary")));
                }
                if v != entries[(j, i)] {
                    return Err(DcmmError::Validation(format!("asymmetric entry at ({i},{j})")));
                }
            }
            if !self_loop && entries[(i, i)] != 0.0 {
                return Err(DcmmError::Validation(format!("self-loop at node {i} not allowed")));
            }
        }
        Ok(AdjacencyMatrix { entries, self_loop })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn self_loop(&self) -> bool {
        self.self_loop
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[(i, j)] != 0.0
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n).map(|i| (i..n).filter(|&j| self.get(i, j)).count()).sum()
    }
}

/// Bernoulli draw of an adjacency matrix from probabilities `h`.
///
/// The upper triangle is visited row by row; the diagonal is drawn only in
/// self-loop mode.
pub fn sample_from_h<R: Rng + ?Sized>(h: &DMatrix<f64>, self_loop: bool, rng: &mut R) -> Result<AdjacencyMatrix> {
    let n = h.nrows();
    if let Some(bad) = h.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DcmmError::Model(format!(
            "edge probability {bad} outside [0,1]; reduce theta or p"
        )));
    }
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        let start = if self_loop { i } else { i + 1 };
        for j in start..n {
            let u: f64 = rng.random();
            if u < h[(i, j)] {
                x[(i, j)] = 1.0;
                x[(j, i)] = 1.0;
            }
        }
    }
    Ok(AdjacencyMatrix { entries: x, self_loop })
}

/// Samples an adjacency matrix; identical seeds give identical networks.
pub fn sample_adjacency(params: &DcmmParams, seed: u64) -> Result<AdjacencyMatrix> {
    let h = build_h(params)?;
    sample_from_h(&h, params.self_loop, &mut rng::substream(seed, rng::purpose::SAMPLE, 0))
}

/// Degree settings of the two-community synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// theta = 0.6 everywhere
    #[serde(rename = "const06")]
    ThetaConst06,
    /// theta iid Uniform[0.3, 0.9]
    #[serde(rename = "uniform")]
    ThetaUniform,
    /// theta = 0.9 everywhere
    #[serde(rename = "const09")]
    ThetaConst09,
}

impl std::str::FromStr for Setting {
    type Err = DcmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "const06" | "i" => Ok(Setting::ThetaConst06),
            "uniform" | "ii" => Ok(Setting::ThetaUniform),
            "const09" | "iii" => Ok(Setting::ThetaConst09),
            other => Err(DcmmError::Config(format!("unknown setting '{other}'"))),
        }
    }
}

/// Two-community benchmark network.
///
/// Rows 0 and 1 start as the pure rows `[1,0]` and `[0,1]`; the others draw
/// their first weight from Uniform[0.1, 0.9]. The rows are then shuffled and
/// finally theta is set. RNG consumption follows exactly that order.
pub fn synthetic_config(setting: Setting, n: usize, seed: u64) -> Result<DcmmParams> {
    synthetic_config_with_pure(setting, n, 1, seed)
}

/// Like [`synthetic_config`] with `pure` leading pure rows per community
/// (alternating `[1,0]`, `[0,1]`) before the mixed rows.
pub fn synthetic_config_with_pure(setting: Setting, n: usize, pure: usize, seed: u64) -> Result<DcmmParams> {
    if n < 4 {
        return Err(DcmmError::Config(format!("synthetic config needs n >= 4, got {n}")));
    }
    if pure == 0 || 2 * pure > n {
        return Err(DcmmError::Config(format!("{pure} pure nodes per community do not fit in n = {n}")));
    }
    let mut rng = rng::substream(seed, rng::purpose::CONFIG, 0);
    let weight = Uniform::new_inclusive(0.1, 0.9).expect("valid range");
    let mut rows: Vec<[f64; 2]> = Vec::with_capacity(n);
    for _ in 0..pure {
        rows.push([1.0, 0.0]);
        rows.push([0.0, 1.0]);
    }
    for _ in 2 * pure..n {
        // Round-trip through the complement so both entries sum to exactly 1.
        let a = 1.0 - (1.0 - weight.sample(&mut rng));
        rows.push([a, 1.0 - a]);
    }
    rows.shuffle(&mut rng);
    let theta = match setting {
        Setting::ThetaConst06 => vec![0.6; n],
        Setting::ThetaConst09 => vec![0.9; n],
        Setting::ThetaUniform => {
            let t = Uniform::new_inclusive(0.3, 0.9).expect("valid range");
            (0..n).map(|_| t.sample(&mut rng)).collect()
        }
    };
    let pi = DMatrix::from_fn(n, 2, |i, j| rows[i][j]);
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
    DcmmParams::new(theta, pi, p, false)
}
