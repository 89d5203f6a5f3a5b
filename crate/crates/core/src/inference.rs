//! Plug-in inference on membership profiles: covariance assembly, the
//! closest-community test, bootstrap rank intervals, the two-node test and the
//! standardized statistic.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DcmmError, Result};
use crate::influence::{covariance_tr, first_order_deltas, variance_tr, InferenceContext, InfluenceBuilder, InfluenceSet};
use crate::membership::{MembershipEstimate, MAX_CONDITION};
use crate::model::AdjacencyMatrix;
use crate::rng::{purpose, substream};
use crate::special::{chisq_survival, normal_quantile, normal_sf};

pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const MIN_BOOTSTRAP: usize = 50;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DcmmError::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

fn check_node(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(DcmmError::Config(format!("node {i} out of range for n = {n}")));
    }
    Ok(())
}

fn positive_sd(variance: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(DcmmError::DegenerateVariance(format!("{} (variance {variance})", what())));
    }
    Ok(variance.sqrt())
}

/// Covariance matrix of `(Tr[C^π_{i,k} W])` over the listed pairs.
pub fn sigma_matrix(pairs: &[(usize, usize)], infl: &InfluenceSet, ctx: &InferenceContext) -> Result<DMatrix<f64>> {
    for (a, p) in pairs.iter().enumerate() {
        if pairs[..a].contains(p) {
            return Err(DcmmError::Config(format!("pair {p:?} listed twice")));
        }
    }
    let dense = pairs
        .iter()
        .map(|&(i, k)| infl.pi(i, k).map(|m| m.dense()))
        .collect::<Result<Vec<_>>>()?;
    let r = pairs.len();
    let mut sigma = DMatrix::zeros(r, r);
    for a in 0..r {
        for b in a..r {
            let v = covariance_tr(&dense[a], &dense[b], ctx)?;
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    Ok(sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ClosestCommunity,
    TwoNode,
}

/// Closest-community reports carry the rejected community (or none); two-node
/// reports carry a yes/no decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rejection {
    Decision(bool),
    Community(Option<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: Rejection,
    pub alpha: f64,
    pub details: serde_json::Value,
}

/// Standardized gaps `(π̂_i(k) − π̂_i(l)) / sd(C^π_{i,k} − C^π_{i,l})`, row `k`.
pub fn closest_community_ratios(i: usize, est: &MembershipEstimate, ctx: &InferenceContext) -> Result<DMatrix<f64>> {
    let k = ctx.k;
    check_node(i, ctx.n)?;
    let mut builder = InfluenceBuilder::new(ctx);
    let dense = (0..k).map(|c| builder.cpi(i, c).map(|m| m.dense())).collect::<Result<Vec<_>>>()?;
    let mut ratios = DMatrix::from_element(k, k, f64::NAN);
    for a in 0..k {
        for b in a + 1..k {
            let var = variance_tr(&(&dense[a] - &dense[b]), ctx)?;
            let sd = positive_sd(var, || format!("closest-community contrast {a} vs {b} at node {i}"))?;
            let z = (est.pi_hat[(i, a)] - est.pi_hat[(i, b)]) / sd;
            ratios[(a, b)] = z;
            ratios[(b, a)] = -z;
        }
    }
    Ok(ratios)
}

/// Rejects `H_{k0}` (node `i` is not closest to community `k`) when every
/// standardized gap against the other communities exceeds `z_{1−α/(K−1)}`.
pub fn closest_community_test(i: usize, est: &MembershipEstimate, ctx: &InferenceContext, alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    let k = ctx.k;
    let ratios = closest_community_ratios(i, est, ctx)?;
    let z = normal_quantile(1.0 - alpha / (k - 1) as f64)?;
    let min_gap: Vec<f64> = (0..k)
        .map(|a| (0..k).filter(|&b| b != a).map(|b| ratios[(a, b)]).fold(f64::INFINITY, f64::min))
        .collect();
    let rejected: Vec<usize> = (0..k).filter(|&a| min_gap[a] > z).collect();
    debug_assert!(rejected.len() <= 1);
    let (best, statistic) = min_gap
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (a, &g)| if g > acc.1 { (a, g) } else { acc });
    let p_value = ((k - 1) as f64 * normal_sf(statistic)).min(1.0);
    Ok(TestReport {
        kind: TestKind::ClosestCommunity,
        statistic,
        p_value,
        rejected: Rejection::Community(rejected.first().copied()),
        alpha,
        details: serde_json::json!({
            "node": i,
            "candidate": best,
            "critical_value": z,
            "min_standardized_gap": min_gap,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankInterval {
    pub node: usize,
    pub community: usize,
    pub lower: usize,
    pub upper: usize,
    pub alpha: f64,
    pub b_draws: usize,
    pub c_quantile: f64,
}

impl RankInterval {
    pub fn contains(&self, rank: f64) -> bool {
        self.lower as f64 <= rank && rank <= self.upper as f64
    }
}

/// Multiplier-bootstrap draws for the rank of `π̂_i(k)`; intervals at any
/// level can be read off without redrawing.
#[derive(Debug, Clone)]
pub struct RankBootstrap {
    pub node: usize,
    pub community: usize,
    /// `π̂_j(k) − π̂_i(k)`.
    pub gaps: Vec<f64>,
    /// `sd(C^π_{j,k} − C^π_{i,k})`, zero at `j = i`.
    pub sd: Vec<f64>,
    /// Sorted max statistics.
    pub draws: Vec<f64>,
}

impl RankBootstrap {
    /// Order statistic at position `⌈(1−α)B⌉`.
    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let b = self.draws.len();
        let idx = ((1.0 - alpha) * b as f64).ceil() as usize;
        Ok(self.draws[idx.clamp(1, b) - 1])
    }

    pub fn interval(&self, alpha: f64) -> Result<RankInterval> {
        let c = self.critical_value(alpha)?;
        let n = self.gaps.len();
        let mut above = 0;
        let mut below = 0;
        for j in (0..n).filter(|&j| j != self.node) {
            if self.gaps[j] - c * self.sd[j] > 0.0 {
                above += 1;
            }
            if self.gaps[j] + c * self.sd[j] < 0.0 {
                below += 1;
            }
        }
        Ok(RankInterval {
            node: self.node,
            community: self.community,
            lower: 1 + above,
            upper: n - below,
            alpha,
            b_draws: self.draws.len(),
            c_quantile: c,
        })
    }
}

/// `X − Ĥ`, with a zero diagonal when the diagonal is not random.
pub fn residual(adj: &AdjacencyMatrix, ctx: &InferenceContext) -> Result<DMatrix<f64>> {
    if adj.n() != ctx.n {
        return Err(DcmmError::Shape(format!("adjacency has n = {}, context has n = {}", adj.n(), ctx.n)));
    }
    let h_hat = &ctx.u * DMatrix::from_diagonal(&ctx.lambdas) * ctx.u.transpose();
    let mut w = adj.entries() - h_hat;
    if !ctx.self_loop {
        w.fill_diagonal(0.0);
    }
    Ok(w)
}

pub fn rank_bootstrap(
    i: usize,
    k: usize,
    est: &MembershipEstimate,
    ctx: &InferenceContext,
    adj: &AdjacencyMatrix,
    b: usize,
    seed: u64,
) -> Result<RankBootstrap> {
    let n = ctx.n;
    check_node(i, n)?;
    if k >= ctx.k {
        return Err(DcmmError::Config(format!("community {k} out of range for K = {}", ctx.k)));
    }
    if n < 2 {
        return Err(DcmmError::Config("rank intervals need n >= 2".into()));
    }
    if b < MIN_BOOTSTRAP {
        return Err(DcmmError::Config(format!("bootstrap draws {b} below minimum {MIN_BOOTSTRAP}")));
    }
    let w_hat = residual(adj, ctx)?;

    let mut builder = InfluenceBuilder::new(ctx);
    let base = builder.cpi(i, k)?.dense();
    let mut sd = vec![0.0; n];
    for (j, slot) in sd.iter_mut().enumerate() {
        if j == i {
            continue;
        }
        let d = builder.cpi(j, k)?.dense() - &base;
        *slot = positive_sd(variance_tr(&d, ctx)?, || format!("rank contrast of node {j} against node {i}"))?;
    }
    let gaps: Vec<f64> = (0..n).map(|j| est.pi_hat[(j, k)] - est.pi_hat[(i, k)]).collect();

    let trace_of = |m: &DMatrix<f64>| -> Result<DVector<f64>> {
        let d = first_order_deltas(ctx, m)?;
        let col = d.dpi.column(k);
        Ok(DVector::from_fn(n, |j, _| col[j] - col[i]))
    };
    let centre = trace_of(&w_hat)?;
    let cells = (n * n + n) as f64 / 2.0;

    let mut draws = (0..b)
        .into_par_iter()
        .map(|draw| {
            let mut rng = substream(seed, purpose::BOOTSTRAP, draw as u64);
            let mut m = DMatrix::zeros(n, n);
            let mut g_sum = 0.0;
            for col in 0..n {
                for row in 0..=col {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g_sum += g;
                    let v = w_hat[(row, col)] * g;
                    m[(row, col)] = v;
                    m[(col, row)] = v;
                }
            }
            let g_bar = g_sum / cells;
            let t = trace_of(&m)?;
            Ok((0..n)
                .filter(|&j| j != i)
                .map(|j| ((t[j] - g_bar * centre[j]) / sd[j]).abs())
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    draws.sort_by(f64::total_cmp);
    Ok(RankBootstrap {
        node: i,
        community: k,
        gaps,
        sd,
        draws,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn rank_ci(
    i: usize,
    k: usize,
    est: &MembershipEstimate,
    ctx: &InferenceContext,
    adj: &AdjacencyMatrix,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<RankInterval> {
    check_alpha(alpha)?;
    rank_bootstrap(i, k, est, ctx, adj, b, seed)?.interval(alpha)
}

/// Rank of entry `i` among `values`, largest first, ties sharing the mean of
/// their positions.
pub fn average_rank(values: &[f64], i: usize) -> f64 {
    let v = values[i];
    let greater = values.iter().filter(|&&x| x > v).count();
    let ties = values.iter().filter(|&&x| x == v).count();
    greater as f64 + (1.0 + ties as f64) / 2.0
}

/// Hotelling-type test of `π_i = π_j`.
pub fn two_node_test(i: usize, j: usize, est: &MembershipEstimate, ctx: &InferenceContext, alpha: f64) -> Result<TestReport> {
    check_alpha(alpha)?;
    check_node(i, ctx.n)?;
    check_node(j, ctx.n)?;
    if i == j {
        return Err(DcmmError::Config("two-node test needs distinct nodes".into()));
    }
    let k = ctx.k;
    let m = k - 1;
    let pairs: Vec<(usize, usize)> = (0..m).map(|t| (i, t)).chain((0..m).map(|t| (j, t))).collect();
    let mut builder = InfluenceBuilder::new(ctx);
    for &(node, c) in &pairs {
        builder.cpi(node, c)?;
    }
    let infl = builder.finish();
    let sigma = sigma_matrix(&pairs, &infl, ctx)?;
    let mut contrast = DMatrix::zeros(m, 2 * m);
    for t in 0..m {
        contrast[(t, t)] = 1.0;
        contrast[(t, m + t)] = -1.0;
    }
    let cov = &contrast * sigma * contrast.transpose();
    let sv = cov.clone().svd(false, false).singular_values;
    let condition = sv.max() / sv.min();
    if !(condition < MAX_CONDITION) {
        return Err(DcmmError::Degeneracy {
            symbol: "T Sigma T^T".into(),
            value: condition,
        });
    }
    let d = DVector::from_fn(m, |t, _| est.pi_hat[(i, t)] - est.pi_hat[(j, t)]);
    let inv = cov
        .clone()
        .cholesky()
        .ok_or(DcmmError::Degeneracy {
            symbol: "T Sigma T^T".into(),
            value: sv.min(),
        })?
        .inverse();
    let statistic = (d.transpose() * inv * &d)[(0, 0)].max(0.0);
    let p_value = chisq_survival(statistic, m)?;
    Ok(TestReport {
        kind: TestKind::TwoNode,
        statistic,
        p_value,
        rejected: Rejection::Decision(p_value < alpha),
        alpha,
        details: serde_json::json!({ "nodes": [i, j], "df": m }),
    })
}

/// `(π̂_i(k) − π_i(k)) / sd(C^π_{i,k})`.
pub fn standardized_stat(i: usize, k: usize, est: &MembershipEstimate, ctx: &InferenceContext, truth: f64) -> Result<f64> {
    check_node(i, ctx.n)?;
    let mut builder = InfluenceBuilder::new(ctx);
    let c = builder.cpi(i, k)?.dense();
    let sd = positive_sd(variance_tr(&c, ctx)?, || format!("membership of node {i} in community {k}"))?;
    Ok((est.pi_hat[(i, k)] - truth) / sd)
}
