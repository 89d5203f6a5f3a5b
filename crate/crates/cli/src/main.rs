use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dcmm::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use dcmm::inference::{closest_community_test, rank_ci, two_node_test, DEFAULT_BOOTSTRAP};
use dcmm::influence::InferenceContext;
use dcmm::io::{load_adjacency, save_report, AdjacencyFormat};
use dcmm::membership::ClipMode;
use dcmm::model::{synthetic_config_with_pure, AdjacencyMatrix, DcmmParams, Setting};
use dcmm::pipeline::{estimate, Fit, Radius};
use dcmm::{DcmmError, Result};

const PAPER_N: usize = 2000;
const PAPER_REPLICATES: usize = 500;

#[derive(Parser)]
#[command(name = "dcmm", version, about = "Mixed-membership network estimation and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a two-community synthetic model as JSON.
    GenConfig {
        #[arg(long)]
        setting: Setting,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pure nodes per community.
        #[arg(long, default_value_t = 1)]
        pure_per_community: usize,
        #[arg(long)]
        self_loop: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte-Carlo experiment; writes stats.csv and summary.json.
    Simulate {
        /// Model JSON from gen-config. Required unless --paper-scale.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "normality")]
        experiment: ExperimentKind,
        #[arg(long, default_value_t = 300)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Node whose membership is studied (default: first mixed node).
        #[arg(long)]
        node: Option<usize>,
        #[arg(long, default_value_t = 0)]
        community: usize,
        /// Regenerate the n=2000 model with 500 replicates.
        #[arg(long)]
        paper_scale: bool,
        /// Setting used with --paper-scale.
        #[arg(long, default_value = "const09")]
        setting: Setting,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate memberships; writes pi.csv, vertices.json, embedding.csv.
    Estimate {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "auto")]
        phi: Radius,
        /// Clip negative memberships and renormalize.
        #[arg(long)]
        clip: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap confidence interval for the rank of one membership weight.
    RankCi {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        node: usize,
        #[arg(long)]
        community: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test which community a node is closest to.
    TestClosest {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        node: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test whether two nodes share a membership profile.
    TestPair {
        #[command(flatten)]
        input: Input,
        /// Two node ids, `I,J`.
        #[arg(long)]
        nodes: NodePair,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy)]
struct NodePair(usize, usize);

impl std::str::FromStr for NodePair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parsed: Vec<usize> = s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a node id")))
            .collect::<std::result::Result<_, _>>()?;
        match parsed[..] {
            [i, j] => Ok(NodePair(i, j)),
            _ => Err("expected two node ids 'I,J'".into()),
        }
    }
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    adjacency: PathBuf,
    #[arg(long, default_value = "edgelist")]
    format: AdjacencyFormat,
    #[arg(long)]
    k: usize,
    /// The diagonal of the adjacency matrix is random.
    #[arg(long)]
    self_loop: bool,
}

impl Input {
    fn load(&self) -> Result<AdjacencyMatrix> {
        load_adjacency(&self.adjacency, self.format, self.self_loop)
    }

    fn fit(&self) -> Result<(AdjacencyMatrix, Fit, InferenceContext)> {
        let adj = self.load()?;
        let fit = estimate(&adj, self.k, Radius::Auto, ClipMode::Raw)?;
        let ctx = InferenceContext::observed(&fit, self.self_loop)?;
        Ok((adj, fit, ctx))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenConfig {
            setting,
            n,
            seed,
            pure_per_community,
            self_loop,
            out,
        } => {
            let mut params = synthetic_config_with_pure(setting, n, pure_per_community, seed)?;
            params.self_loop = self_loop;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&out, params.to_json()?)?;
        }
        Command::Simulate {
            config,
            experiment,
            replicates,
            seed,
            workers,
            bootstrap,
            alpha,
            node,
            community,
            paper_scale,
            setting,
            out,
        } => {
            let (params, replicates, setting) = if paper_scale {
                (synthetic_config_with_pure(setting, PAPER_N, 1, seed)?, PAPER_REPLICATES, Some(setting))
            } else {
                let path = config.ok_or_else(|| DcmmError::Config("--config is required without --paper-scale".into()))?;
                (DcmmParams::from_json(&std::fs::read_to_string(path)?)?, replicates, None)
            };
            let mut cfg = ExperimentConfig::new(experiment, params, replicates, seed)?;
            cfg.setting = setting;
            cfg.workers = workers;
            cfg.bootstrap = bootstrap;
            cfg.alpha = alpha;
            cfg.community = community;
            if let Some(i) = node {
                cfg.node = i;
            }
            cfg.out_dir = Some(out);
            let summary = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Estimate { input, phi, clip, out } => {
            let adj = input.load()?;
            let clip = if clip { ClipMode::ClipRenormalize } else { ClipMode::Raw };
            let fit = estimate(&adj, input.k, phi, clip)?;
            std::fs::create_dir_all(&out)?;
            let mut pi = create(&out.join("pi.csv"))?;
            fit.estimate.write_csv(&mut pi)?;
            pi.flush()?;
            let mut emb = create(&out.join("embedding.csv"))?;
            fit.embedding.write_csv(&mut emb)?;
            emb.flush()?;
            save_report(&out.join("vertices.json"), &fit.hunt)?;
        }
        Command::RankCi {
            input,
            node,
            community,
            alpha,
            bootstrap,
            seed,
            out,
        } => {
            let (adj, fit, ctx) = input.fit()?;
            let iv = rank_ci(node, community, &fit.estimate, &ctx, &adj, bootstrap, alpha, seed)?;
            save_report(&out, &iv)?;
        }
        Command::TestClosest { input, node, alpha, out } => {
            let (_, fit, ctx) = input.fit()?;
            save_report(&out, &closest_community_test(node, &fit.estimate, &ctx, alpha)?)?;
        }
        Command::TestPair { input, nodes, alpha, out } => {
            let (_, fit, ctx) = input.fit()?;
            save_report(&out, &two_node_test(nodes.0, nodes.1, &fit.estimate, &ctx, alpha)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
