//! First-order influence matrices.
//!
//! For each estimated quantity `q` the linearized error is `Tr[C_q W]` with
//! `W = X − H`. Every influence matrix used here has the shape
//! `Σ_j e_j g_jᵀ + u₁ zᵀ`: a handful of explicit rows (the node itself and the
//! vertex-set members) plus one rank-one term along the leading eigenvector.
//! [`InfluenceMatrix`] stores that structure and materializes it on demand.
//!
//! The same linearization evaluated directly on a matrix `W` is
//! [`first_order_deltas`]; the two paths agree exactly (`Δq(W) = Tr[C_q W]`).

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::error::{DcmmError, Result};
use crate::membership::{ground_truth_quantities, Simplex};
use crate::model::DcmmParams;
use crate::pipeline::Fit;
use crate::spectral::{low_rank, n_matrix, Source, SpectralContext};

const DENOM_TOL: f64 = 1e-12;

/// Everything the influence formulas need, either from the population model
/// (starred quantities) or from a fitted network (hat quantities).
#[derive(Debug, Clone)]
pub struct InferenceContext {
    pub n: usize,
    pub k: usize,
    pub lambdas: DVector<f64>,
    pub u: DMatrix<f64>,
    pub u1: DVector<f64>,
    pub u_bar: DMatrix<f64>,
    pub n_mat: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda_bar: DVector<f64>,
    pub vertices: DMatrix<f64>,
    pub vertex_sets: Vec<Vec<usize>>,
    pub simplex: Simplex,
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub r: DMatrix<f64>,
    /// Edge probabilities used in variance formulas, clamped to `[0, 1]`.
    pub h_var: DMatrix<f64>,
    /// Number of plug-in entries that needed clamping.
    pub clamped_entries: usize,
    pub self_loop: bool,
    pub source: Source,
    n_u_bar: DMatrix<f64>,
    n_u1: DVector<f64>,
}

fn check_denominator(symbol: &str, value: f64, scale: f64) -> Result<()> {
    if !(value.abs() > DENOM_TOL * scale.max(f64::MIN_POSITIVE)) || !value.is_finite() {
        return Err(DcmmError::Degeneracy {
            symbol: symbol.into(),
            value,
        });
    }
    Ok(())
}

impl InferenceContext {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        spec: &SpectralContext,
        vertices: DMatrix<f64>,
        vertex_sets: Vec<Vec<usize>>,
        simplex: Simplex,
        a: DMatrix<f64>,
        c: DVector<f64>,
        r: DMatrix<f64>,
        h: &DMatrix<f64>,
        self_loop: bool,
    ) -> Result<Self> {
        let k = spec.k;
        if k < 2 {
            return Err(DcmmError::Config("influence matrices need K >= 2".into()));
        }
        let n_mat = n_matrix(spec)?;
        let u1 = spec.u1();
        let u_bar = spec.u_bar();
        let lambda1 = spec.lambda1();
        let lambda_bar = spec.lambda_bar();

        check_denominator("lambda_1", lambda1, 1.0)?;
        for (t, &l) in lambda_bar.iter().enumerate() {
            check_denominator(&format!("lambda_{}", t + 2), l, lambda1.abs())?;
        }
        let u1_scale = u1.amax();
        for (i, &v) in u1.iter().enumerate() {
            check_denominator(&format!("u1[{i}]"), v, u1_scale)?;
        }
        for (j, &v) in c.iter().enumerate() {
            check_denominator(&format!("c[{j}]"), v, c.amax())?;
        }
        if vertex_sets.iter().any(|s| s.is_empty()) {
            return Err(DcmmError::Degeneracy {
                symbol: "|V_k|".into(),
                value: 0.0,
            });
        }

        // A lone vertex-set member sits exactly on its vertex.
        let mut a = a;
        for (c, set) in vertex_sets.iter().enumerate() {
            if let [i] = set[..] {
                a.row_mut(i).fill(0.0);
                a[(i, c)] = 1.0;
            }
        }

        let mut clamped_entries = 0;
        let h_var = h.map(|v| {
            if !(0.0..=1.0).contains(&v) {
                clamped_entries += 1;
            }
            v.clamp(0.0, 1.0)
        });
        let n_u_bar = &n_mat * &u_bar;
        let n_u1 = &n_mat * &u1;
        let ctx = InferenceContext {
            n: spec.n,
            k,
            lambdas: spec.lambdas.clone(),
            u: spec.u.clone(),
            u1,
            u_bar,
            n_mat,
            lambda1,
            lambda_bar,
            vertices,
            vertex_sets,
            simplex,
            a,
            c,
            r,
            h_var,
            clamped_entries,
            self_loop,
            source: spec.source,
            n_u_bar,
            n_u1,
        };
        if ctx.n_u1.norm() > 1e-8 {
            return Err(DcmmError::Degeneracy {
                symbol: "N u1".into(),
                value: ctx.n_u1.norm(),
            });
        }
        Ok(ctx)
    }

    /// Population context: starred quantities and the true `H`.
    pub fn ground_truth(params: &DcmmParams) -> Result<Self> {
        let gt = ground_truth_quantities(params)?;
        Self::assemble(
            &gt.spec,
            gt.vertices,
            gt.vertex_sets,
            gt.simplex,
            gt.a,
            gt.c,
            gt.embedding.points,
            &gt.h,
            params.self_loop,
        )
    }

    /// Plug-in context from a fitted network, with `Ĥ = Σ λ̂ û ûᵀ`.
    pub fn observed(fit: &Fit, self_loop: bool) -> Result<Self> {
        let h_hat = low_rank(&fit.spec);
        let simplex = Simplex::new(&fit.hunt.vertices)?;
        Self::assemble(
            &fit.spec,
            fit.hunt.vertices.clone(),
            fit.hunt.vertex_sets.clone(),
            simplex,
            fit.estimate.a_hat.clone(),
            fit.estimate.c_hat.clone(),
            fit.embedding.points.clone(),
            &h_hat,
            self_loop,
        )
    }

    /// `Σ_l a_i(l) / c_l`, the normalizer of the membership map.
    fn normalizer(&self, i: usize) -> f64 {
        (0..self.k).map(|l| self.a[(i, l)] / self.c[l]).sum()
    }

    fn checked_normalizer(&self, i: usize) -> Result<f64> {
        let s = self.normalizer(i);
        let scale = (0..self.k).map(|l| (self.a[(i, l)] / self.c[l]).abs()).fold(0.0, f64::max);
        check_denominator(&format!("normalizer of node {i}"), s * s, scale * scale)?;
        Ok(s)
    }
}

/// `C = Σ_j e_j rows[j]ᵀ + u₁ zᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrix {
    pub rows: BTreeMap<usize, DVector<f64>>,
    pub z: DVector<f64>,
    u1: DVector<f64>,
}

impl InfluenceMatrix {
    fn zero(u1: &DVector<f64>) -> Self {
        InfluenceMatrix {
            rows: BTreeMap::new(),
            z: DVector::zeros(u1.len()),
            u1: u1.clone(),
        }
    }

    /// `self += alpha · other`.
    fn axpy(&mut self, alpha: f64, other: &InfluenceMatrix) {
        if alpha == 0.0 {
            return;
        }
        for (&j, g) in &other.rows {
            self.rows
                .entry(j)
                .and_modify(|row| row.axpy(alpha, g, 1.0))
                .or_insert_with(|| g * alpha);
        }
        self.z.axpy(alpha, &other.z, 1.0);
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = &self.u1 * self.z.transpose();
        for (&j, g) in &self.rows {
            let mut row = m.row_mut(j);
            row += g.transpose();
        }
        m
    }

    /// `Tr[C W]` for a symmetric `W`, given `W u₁`.
    pub fn trace_with(&self, w: &DMatrix<f64>, w_u1: &DVector<f64>) -> f64 {
        let rows: f64 = self.rows.iter().map(|(&j, g)| w.column(j).dot(g)).sum();
        rows + self.z.dot(w_u1)
    }
}

/// Influence matrices for a set of `(node, community)` pairs.
#[derive(Debug, Clone)]
pub struct InfluenceSet {
    pub pairs: Vec<(usize, usize)>,
    /// Keyed by `(node, component)`.
    pub cr: HashMap<(usize, usize), InfluenceMatrix>,
    /// Keyed by `(community, component)`.
    pub cb: HashMap<(usize, usize), InfluenceMatrix>,
    pub ca: HashMap<(usize, usize), InfluenceMatrix>,
    pub cpi: HashMap<(usize, usize), InfluenceMatrix>,
}

impl InfluenceSet {
    pub fn pi(&self, i: usize, k: usize) -> Result<&InfluenceMatrix> {
        self.cpi.get(&(i, k)).ok_or(DcmmError::MissingPair(i, k))
    }
}

/// Lazily fills the influence maps for a context.
pub struct InfluenceBuilder<'a> {
    ctx: &'a InferenceContext,
    set: InfluenceSet,
}

impl<'a> InfluenceBuilder<'a> {
    pub fn new(ctx: &'a InferenceContext) -> Self {
        InfluenceBuilder {
            ctx,
            set: InfluenceSet {
                pairs: Vec::new(),
                cr: HashMap::new(),
                cb: HashMap::new(),
                ca: HashMap::new(),
                cpi: HashMap::new(),
            },
        }
    }

    pub fn finish(self) -> InfluenceSet {
        self.set
    }

    /// `C^r_{i,t} = e_i Ū_tᵀ/(λ̄_t u₁ᵢ) − u₁ (N Ū_t)ᵀ/λ̄_t − r_{it}/(u₁ᵢ λ₁) · u₁ N_{i,·}`.
    pub fn cr(&mut self, i: usize, t: usize) -> InfluenceMatrix {
        if let Some(m) = self.set.cr.get(&(i, t)) {
            return m.clone();
        }
        let ctx = self.ctx;
        let lb = ctx.lambda_bar[t];
        let u1i = ctx.u1[i];
        let g = ctx.u_bar.column(t) / (lb * u1i);
        let coef = ctx.r[(i, t)] / (u1i * ctx.lambda1);
        let mut z = ctx.n_u_bar.column(t) / lb;
        z.axpy(coef, &ctx.n_mat.row(i).transpose(), 1.0);
        z.neg_mut();
        let mut m = InfluenceMatrix::zero(&ctx.u1);
        m.rows.insert(i, g);
        m.z = z;
        self.set.cr.insert((i, t), m.clone());
        m
    }

    /// `C^b_{k,t}`: mean of `C^r_{j,t}` over the vertex set of community `k`.
    pub fn cb(&mut self, k: usize, t: usize) -> InfluenceMatrix {
        if let Some(m) = self.set.cb.get(&(k, t)) {
            return m.clone();
        }
        let members = self.ctx.vertex_sets[k].clone();
        let w = 1.0 / members.len() as f64;
        let mut m = InfluenceMatrix::zero(&self.ctx.u1);
        for j in members {
            let r = self.cr(j, t);
            m.axpy(w, &r);
        }
        self.set.cb.insert((k, t), m.clone());
        m
    }

    /// `C^a_{i,k} = Σ_t B⁻¹_{k,t} (C^r_{i,t} − Σ_s a_i(s) C^b_{s,t})`.
    pub fn ca(&mut self, i: usize, k: usize) -> InfluenceMatrix {
        if let Some(m) = self.set.ca.get(&(i, k)) {
            return m.clone();
        }
        let ctx = self.ctx;
        let mut m = InfluenceMatrix::zero(&ctx.u1);
        for t in 0..ctx.k - 1 {
            let binv = ctx.simplex.b_inv[(k, t)];
            let r = self.cr(i, t);
            m.axpy(binv, &r);
            for s in 0..ctx.k {
                let b = self.cb(s, t);
                m.axpy(-binv * ctx.a[(i, s)], &b);
            }
        }
        self.set.ca.insert((i, k), m.clone());
        m
    }

    /// `C^π_{i,k}`.
    pub fn cpi(&mut self, i: usize, k: usize) -> Result<InfluenceMatrix> {
        if let Some(m) = self.set.cpi.get(&(i, k)) {
            return Ok(m.clone());
        }
        let ctx = self.ctx;
        let s = ctx.checked_normalizer(i)?;
        let (ck, ak) = (ctx.c[k], ctx.a[(i, k)]);
        let mut m = InfluenceMatrix::zero(&ctx.u1);
        // u₁u₁ᵀ + 2u₁u₁ᵀN = u₁ (u₁ + 2Nu₁)ᵀ
        let lambda_dir = &ctx.u1 + &ctx.n_u1 * 2.0;
        let ca_k = self.ca(i, k);
        for l in (0..ctx.k).filter(|&l| l != k) {
            let (cl, al) = (ctx.c[l], ctx.a[(i, l)]);
            let akl = ak * al;
            m.z.axpy(akl * (ck / (2.0 * cl) - cl / (2.0 * ck)), &lambda_dir, 1.0);

            let ca_l = self.ca(i, l);
            m.axpy(al / (ck * cl), &ca_k);
            m.axpy(-ak / (ck * cl), &ca_l);

            for t in 0..ctx.k - 1 {
                let lb = ctx.lambda_bar[t];
                let bk = self.cb(k, t);
                let bl = self.cb(l, t);
                m.axpy(akl * ctx.vertices[(k, t)] * lb * ck / cl, &bk);
                m.axpy(-akl * ctx.vertices[(l, t)] * lb * cl / ck, &bl);
            }
        }
        let scale = 1.0 / (s * s);
        for g in m.rows.values_mut() {
            *g *= scale;
        }
        m.z *= scale;
        if !self.set.pairs.contains(&(i, k)) {
            self.set.pairs.push((i, k));
        }
        self.set.cpi.insert((i, k), m.clone());
        Ok(m)
    }
}

/// Builds `C^r, C^b, C^a, C^π` for the requested pairs. `C^b` blocks are
/// computed once and shared.
pub fn influence_matrices(ctx: &InferenceContext, pairs: &[(usize, usize)]) -> Result<InfluenceSet> {
    let mut builder = InfluenceBuilder::new(ctx);
    for &(i, k) in pairs {
        if i >= ctx.n || k >= ctx.k {
            return Err(DcmmError::Config(format!("pair ({i},{k}) out of range")));
        }
        builder.cpi(i, k)?;
    }
    Ok(builder.finish())
}

/// First-order error terms evaluated directly on a symmetric matrix `W`.
#[derive(Debug, Clone)]
pub struct Deltas {
    pub dr: DMatrix<f64>,
    pub db: DMatrix<f64>,
    pub da: DMatrix<f64>,
    pub dpi: DMatrix<f64>,
    /// Leading-order change of `λ₁`: `Tr[W u₁u₁ᵀ + 2 N W u₁u₁ᵀ]`.
    pub dlambda1: f64,
}

pub fn first_order_deltas(ctx: &InferenceContext, w: &DMatrix<f64>) -> Result<Deltas> {
    let (n, k) = (ctx.n, ctx.k);
    if w.shape() != (n, n) {
        return Err(DcmmError::Shape(format!("W must be {n}x{n}")));
    }
    let w_u1 = w * &ctx.u1;
    let w_ubar = w * &ctx.u_bar;
    let n_w_u1 = &ctx.n_mat * &w_u1;
    // (u₁ᵀ W N Ū)_t
    let cross = ctx.n_u_bar.transpose() * &w_u1;

    let mut dr = DMatrix::zeros(n, k - 1);
    for i in 0..n {
        let u1i = ctx.u1[i];
        for t in 0..k - 1 {
            let wi = (w_ubar[(i, t)] - u1i * cross[t]) / ctx.lambda_bar[t];
            dr[(i, t)] = (wi - n_w_u1[i] * ctx.r[(i, t)] / ctx.lambda1) / u1i;
        }
    }
    let mut db = DMatrix::zeros(k, k - 1);
    for (c, set) in ctx.vertex_sets.iter().enumerate() {
        for &j in set {
            let mut row = db.row_mut(c);
            row += dr.row(j);
        }
        let mut row = db.row_mut(c);
        row /= set.len() as f64;
    }
    // Δa_i = B⁻¹ (Δr_i, 0) − B⁻¹ ΔB a_i
    let binv_top = ctx.simplex.b_inv.columns(0, k - 1).into_owned();
    let db_a = &ctx.a * &db; // row i: Σ_s a_i(s) Δb_s
    let da = (&dr - db_a) * binv_top.transpose();

    let dlambda1 = ctx.u1.dot(&w_u1) + 2.0 * ctx.u1.dot(&n_w_u1);
    // b_kᵀ Λ̄ Δb_k
    let quad: Vec<f64> = (0..k)
        .map(|c| (0..k - 1).map(|t| ctx.vertices[(c, t)] * ctx.lambda_bar[t] * db[(c, t)]).sum())
        .collect();

    let mut dpi = DMatrix::zeros(n, k);
    for i in 0..n {
        let s = ctx.checked_normalizer(i)?;
        for kk in 0..k {
            let (ck, ak) = (ctx.c[kk], ctx.a[(i, kk)]);
            let mut acc = 0.0;
            for l in (0..k).filter(|&l| l != kk) {
                let (cl, al) = (ctx.c[l], ctx.a[(i, l)]);
                acc += dlambda1 * (ck / (2.0 * cl) - cl / (2.0 * ck)) * ak * al;
                acc += (da[(i, kk)] * al - da[(i, l)] * ak) / (ck * cl);
                acc += (quad[kk] * ck / cl - quad[l] * cl / ck) * ak * al;
            }
            dpi[(i, kk)] = acc / (s * s);
        }
    }
    Ok(Deltas {
        dr,
        db,
        da,
        dpi,
        dlambda1,
    })
}

/// Variance of `Tr[M W]` under independent Bernoulli noise with means `h`.
///
/// The diagonal contributes only when self-loops are random.
pub fn variance_with(m: &DMatrix<f64>, h: &DMatrix<f64>, self_loop: bool) -> f64 {
    covariance_with(m, m, h, self_loop)
}

pub fn covariance_with(m1: &DMatrix<f64>, m2: &DMatrix<f64>, h: &DMatrix<f64>, self_loop: bool) -> f64 {
    let n = h.nrows();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..j {
            let q = h[(i, j)] * (1.0 - h[(i, j)]);
            total += (m1[(i, j)] + m1[(j, i)]) * (m2[(i, j)] + m2[(j, i)]) * q;
        }
        if self_loop {
            total += m1[(j, j)] * m2[(j, j)] * h[(j, j)] * (1.0 - h[(j, j)]);
        }
    }
    total
}

pub fn variance_tr(m: &DMatrix<f64>, ctx: &InferenceContext) -> Result<f64> {
    covariance_tr(m, m, ctx)
}

pub fn covariance_tr(m1: &DMatrix<f64>, m2: &DMatrix<f64>, ctx: &InferenceContext) -> Result<f64> {
    let shape = (ctx.n, ctx.n);
    if m1.shape() != shape || m2.shape() != shape {
        return Err(DcmmError::Shape(format!("influence matrices must be {}x{}", ctx.n, ctx.n)));
    }
    Ok(covariance_with(m1, m2, &ctx.h_var, ctx.self_loop))
}
