//! Monte-Carlo experiment driver.
//!
//! Replicate `r` samples its network from substream `(seed, SAMPLE, r)` and,
//! where a bootstrap is needed, seeds it from `(seed, BOOTSTRAP, r)`. Results
//! land in replicate order, so outputs do not depend on the worker count.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DcmmError, Result};
use crate::inference::{average_rank, rank_ci, standardized_stat, two_node_test, Rejection};
use crate::influence::InferenceContext;
use crate::io::save_report;
use crate::membership::ClipMode;
use crate::model::{build_h, sample_from_h, DcmmParams, Setting};
use crate::pipeline::{estimate, Fit, Radius};
use crate::rng::{purpose, substream};
use crate::special::normal_cdf;
use crate::vertex::match_permutation;

/// Largest tolerated fraction of skipped replicates.
pub const MAX_SKIP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Normality,
    RankCoverage,
    TwonodeCalibration,
}

impl std::str::FromStr for ExperimentKind {
    type Err = DcmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normality" => Ok(ExperimentKind::Normality),
            "rank_coverage" | "rank-coverage" => Ok(ExperimentKind::RankCoverage),
            "twonode_calibration" | "twonode-calibration" => Ok(ExperimentKind::TwonodeCalibration),
            other => Err(DcmmError::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub setting: Option<Setting>,
    #[serde(skip)]
    pub params: DcmmParams,
    pub n: usize,
    pub replicates: usize,
    pub bootstrap: usize,
    pub alpha: f64,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    /// Node and community whose membership is studied.
    pub node: usize,
    pub community: usize,
    /// Two pure nodes of one community, and two of different communities.
    pub null_pair: Option<(usize, usize)>,
    pub alt_pair: Option<(usize, usize)>,
}

impl ExperimentConfig {
    /// Defaults: the first mixed node in community 0; pure pairs taken from
    /// the lowest-indexed pure nodes.
    pub fn new(kind: ExperimentKind, params: DcmmParams, replicates: usize, seed: u64) -> Result<Self> {
        let node = (0..params.n)
            .find(|&i| (0..params.k).all(|c| params.pi[(i, c)] < 1.0))
            .unwrap_or(0);
        let pure0 = params.pure_nodes(0);
        let null_pair = (pure0.len() >= 2).then(|| (pure0[0], pure0[1]));
        let alt_pair = (params.k >= 2).then(|| (pure0[0], params.pure_nodes(1)[0]));
        let cfg = ExperimentConfig {
            kind,
            setting: None,
            n: params.n,
            params,
            replicates,
            bootstrap: crate::inference::DEFAULT_BOOTSTRAP,
            alpha: 0.05,
            seed,
            workers: 1,
            out_dir: None,
            node,
            community: 0,
            null_pair,
            alt_pair,
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(DcmmError::Config("replicates must be at least 1".into()));
        }
        if self.n < 4 || self.n != self.params.n {
            return Err(DcmmError::Config(format!("n must be >= 4 and match the model, got {}", self.n)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DcmmError::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.workers < 1 {
            return Err(DcmmError::Config("workers must be at least 1".into()));
        }
        if self.node >= self.n || self.community >= self.params.k {
            return Err(DcmmError::Config("designated node or community out of range".into()));
        }
        if self.kind == ExperimentKind::TwonodeCalibration {
            let (Some(null), Some(alt)) = (self.null_pair, self.alt_pair) else {
                return Err(DcmmError::Config(
                    "two-node calibration needs two pure nodes in community 0 and one in community 1".into(),
                ));
            };
            let pure = |i: usize, c: usize| self.params.pi[(i, c)] == 1.0;
            let same = (0..self.params.k).any(|c| pure(null.0, c) && pure(null.1, c));
            let diff = (0..self.params.k).any(|c| pure(alt.0, c)) && (0..self.params.k).any(|c| pure(alt.1, c)) && !(0..self.params.k).any(|c| pure(alt.0, c) && pure(alt.1, c));
            if !same || !diff || null.0 == null.1 {
                return Err(DcmmError::Config("two-node pairs must be pure nodes of the same / different communities".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Normality {
        pi_hat: f64,
        pi_true: f64,
        statistic: f64,
    },
    RankCoverage {
        true_rank: f64,
        lower: usize,
        upper: usize,
        covered: bool,
        c_quantile: f64,
    },
    TwonodeCalibration {
        null_statistic: f64,
        null_p_value: f64,
        null_rejected: bool,
        alt_statistic: f64,
        alt_p_value: f64,
        alt_rejected: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub replicate: usize,
    pub outcome: std::result::Result<Outcome, String>,
}

impl Record {
    /// The headline number: standardized statistic, containment flag, or
    /// null-hypothesis statistic.
    pub fn value(&self) -> Option<f64> {
        match self.outcome.as_ref().ok()? {
            Outcome::Normality { statistic, .. } => Some(*statistic),
            Outcome::RankCoverage { covered, .. } => Some(if *covered { 1.0 } else { 0.0 }),
            Outcome::TwonodeCalibration { null_statistic, .. } => Some(*null_statistic),
        }
    }
}

fn csv_header(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Normality => "replicate,status,pi_hat,pi_true,statistic",
        ExperimentKind::RankCoverage => "replicate,status,true_rank,lower,upper,covered,c_quantile",
        ExperimentKind::TwonodeCalibration => {
            "replicate,status,null_statistic,null_p_value,null_rejected,alt_statistic,alt_p_value,alt_rejected"
        }
    }
}

fn csv_row(kind: ExperimentKind, rec: &Record) -> String {
    let r = rec.replicate;
    match &rec.outcome {
        Err(msg) => {
            let blanks = csv_header(kind).matches(',').count() - 1;
            format!("{r},skipped: {}{}", msg.replace([',', '\n'], ";"), ",".repeat(blanks))
        }
        Ok(Outcome::Normality { pi_hat, pi_true, statistic }) => format!("{r},ok,{pi_hat},{pi_true},{statistic}"),
        Ok(Outcome::RankCoverage {
            true_rank,
            lower,
            upper,
            covered,
            c_quantile,
        }) => format!("{r},ok,{true_rank},{lower},{upper},{covered},{c_quantile}"),
        Ok(Outcome::TwonodeCalibration {
            null_statistic,
            null_p_value,
            null_rejected,
            alt_statistic,
            alt_p_value,
            alt_rejected,
        }) => format!("{r},ok,{null_statistic},{null_p_value},{null_rejected},{alt_statistic},{alt_p_value},{alt_rejected}"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub replicates: usize,
    pub completed: usize,
    pub skipped: usize,
    /// `None` when fewer than two values are available.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub ks_distance: Option<f64>,
    pub lag1_autocorrelation: Option<f64>,
    pub coverage: Option<f64>,
    pub null_rejection_rate: Option<f64>,
    pub alt_rejection_rate: Option<f64>,
    pub wall_time_secs: f64,
    pub seed: u64,
    #[serde(skip)]
    pub records: Vec<Record>,
}

impl ExperimentSummary {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", csv_header(self.config.kind))?;
        for rec in &self.records {
            writeln!(out, "{}", csv_row(self.config.kind, rec))?;
        }
        Ok(())
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

/// Kolmogorov–Smirnov distance between the sample and `N(0, 1)`.
pub fn ks_distance_normal(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = normal_cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    });
    Some(d)
}

pub fn lag1_autocorrelation(xs: &[f64]) -> Option<f64> {
    if xs.len() < 3 {
        return None;
    }
    let (mean, _) = mean_std(xs);
    let mean = mean?;
    let denom: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if denom == 0.0 {
        return None;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    Some(num / denom)
}

fn fit_replicate(cfg: &ExperimentConfig, h: &nalgebra::DMatrix<f64>, rep: usize) -> Result<(crate::model::AdjacencyMatrix, Fit, InferenceContext)> {
    let adj = sample_from_h(h, cfg.params.self_loop, &mut substream(cfg.seed, purpose::SAMPLE, rep as u64))?;
    let fit = estimate(&adj, cfg.params.k, Radius::Auto, ClipMode::Raw)?;
    let ctx = InferenceContext::observed(&fit, cfg.params.self_loop)?;
    Ok((adj, fit, ctx))
}

fn run_replicate(cfg: &ExperimentConfig, h: &nalgebra::DMatrix<f64>, rep: usize) -> Result<Outcome> {
    let (adj, fit, ctx) = fit_replicate(cfg, h, rep)?;
    match cfg.kind {
        ExperimentKind::Normality => {
            let perm = match_permutation(&fit.estimate.pi_hat.transpose(), &cfg.params.pi.transpose())?;
            let (i, c) = (cfg.node, cfg.community);
            let pi_true = cfg.params.pi[(i, c)];
            let statistic = standardized_stat(i, perm[c], &fit.estimate, &ctx, pi_true)?;
            Ok(Outcome::Normality {
                pi_hat: fit.estimate.pi_hat[(i, perm[c])],
                pi_true,
                statistic,
            })
        }
        ExperimentKind::RankCoverage => {
            let perm = match_permutation(&fit.estimate.pi_hat.transpose(), &cfg.params.pi.transpose())?;
            let (i, c) = (cfg.node, cfg.community);
            let truth: Vec<f64> = cfg.params.pi.column(c).iter().copied().collect();
            let true_rank = average_rank(&truth, i);
            let boot_seed = substream(cfg.seed, purpose::BOOTSTRAP, rep as u64).next_u64();
            let iv = rank_ci(i, perm[c], &fit.estimate, &ctx, &adj, cfg.bootstrap, cfg.alpha, boot_seed)?;
            Ok(Outcome::RankCoverage {
                true_rank,
                lower: iv.lower,
                upper: iv.upper,
                covered: iv.contains(true_rank),
                c_quantile: iv.c_quantile,
            })
        }
        ExperimentKind::TwonodeCalibration => {
            let (a, b) = cfg.null_pair.expect("validated");
            let (x, y) = cfg.alt_pair.expect("validated");
            let null = two_node_test(a, b, &fit.estimate, &ctx, cfg.alpha)?;
            let alt = two_node_test(x, y, &fit.estimate, &ctx, cfg.alpha)?;
            Ok(Outcome::TwonodeCalibration {
                null_statistic: null.statistic,
                null_p_value: null.p_value,
                null_rejected: null.rejected == Rejection::Decision(true),
                alt_statistic: alt.statistic,
                alt_p_value: alt.p_value,
                alt_rejected: alt.rejected == Rejection::Decision(true),
            })
        }
    }
}

fn rate(records: &[Record], pick: impl Fn(&Outcome) -> bool) -> Option<f64> {
    let ok: Vec<&Outcome> = records.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    (!ok.is_empty()).then(|| ok.iter().filter(|o| pick(o)).count() as f64 / ok.len() as f64)
}

/// Runs every replicate and aggregates. Writes `stats.csv` and
/// `summary.json` when an output directory is configured. Fails (after
/// writing) when more than 5% of replicates were skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let h = build_h(&cfg.params)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| DcmmError::Config(format!("thread pool: {e}")))?;
    let records: Vec<Record> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| Record {
                replicate: rep,
                outcome: run_replicate(cfg, &h, rep).map_err(|e| e.to_string()),
            })
            .collect()
    });

    let values: Vec<f64> = records.iter().filter_map(Record::value).collect();
    let skipped = records.iter().filter(|r| r.outcome.is_err()).count();
    let (mut mean, mut std, mut ks) = (None, None, None);
    let (mut coverage, mut null_rate, mut alt_rate) = (None, None, None);
    match cfg.kind {
        ExperimentKind::Normality => {
            (mean, std) = mean_std(&values);
            ks = ks_distance_normal(&values);
        }
        ExperimentKind::RankCoverage => {
            coverage = rate(&records, |o| matches!(o, Outcome::RankCoverage { covered: true, .. }));
        }
        ExperimentKind::TwonodeCalibration => {
            (mean, std) = mean_std(&values);
            null_rate = rate(&records, |o| matches!(o, Outcome::TwonodeCalibration { null_rejected: true, .. }));
            alt_rate = rate(&records, |o| matches!(o, Outcome::TwonodeCalibration { alt_rejected: true, .. }));
        }
    }
    let summary = ExperimentSummary {
        config: cfg.clone(),
        replicates: cfg.replicates,
        completed: cfg.replicates - skipped,
        skipped,
        mean,
        std,
        ks_distance: ks,
        lag1_autocorrelation: lag1_autocorrelation(&values),
        coverage,
        null_rejection_rate: null_rate,
        alt_rejection_rate: alt_rate,
        wall_time_secs: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
        records,
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        summary.write_csv(&mut buf)?;
        std::fs::write(dir.join("stats.csv"), buf)?;
        save_report(&dir.join("summary.json"), &summary)?;
    }
    if skipped as f64 > MAX_SKIP_FRACTION * cfg.replicates as f64 {
        let first = summary
            .records
            .iter()
            .find_map(|r| r.outcome.as_ref().err().cloned())
            .unwrap_or_default();
        return Err(DcmmError::TooManySkips {
            skipped,
            total: cfg.replicates,
            first,
        });
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthetic_config_with_pure, Setting};

    #[test]
    fn ks_and_moments() {
        assert_eq!(ks_distance_normal(&[0.0]).unwrap(), 0.5);
        let (m, s) = mean_std(&[1.0]);
        assert_eq!((m, s), (Some(1.0), None));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(lag1_autocorrelation(&[1.0, -1.0, 1.0, -1.0]).unwrap() < -0.5);
    }

    #[test]
    fn single_replicate_summary() {
        let params = synthetic_config_with_pure(Setting::ThetaConst09, 120, 30, 1).unwrap();
        let cfg = ExperimentConfig::new(ExperimentKind::Normality, params, 1, 5).unwrap();
        let s = run_experiment(&cfg).unwrap();
        assert_eq!(s.records.len(), 1);
        assert!(s.std.is_none());
        assert_eq!(s.completed + s.skipped, 1);
    }

    #[test]
    fn worker_count_does_not_change_csv() {
        let params = synthetic_config_with_pure(Setting::ThetaConst09, 120, 30, 2).unwrap();
        let mut cfg = ExperimentConfig::new(ExperimentKind::TwonodeCalibration, params, 6, 9).unwrap();
        let mut outputs = Vec::new();
        for workers in [1, 3] {
            cfg.workers = workers;
            let s = run_experiment(&cfg).unwrap();
            let mut buf = Vec::new();
            s.write_csv(&mut buf).unwrap();
            outputs.push(buf);
        }
        assert_eq!(outputs[0], outputs[1]);
        let text = String::from_utf8(outputs.remove(0)).unwrap();
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn config_validation() {
        let params = synthetic_config_with_pure(Setting::ThetaConst06, 20, 1, 0).unwrap();
        let cfg = ExperimentConfig::new(ExperimentKind::TwonodeCalibration, params.clone(), 5, 0).unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(ExperimentKind::Normality, params, 5, 0).unwrap();
        cfg.validate().unwrap();
        cfg.replicates = 0;
        assert!(cfg.validate().is_err());
        cfg.replicates = 1;
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
        assert!("bogus".parse::<ExperimentKind>().is_err());
    }
}
