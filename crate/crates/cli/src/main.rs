use std::path::PathBuf;
use std::process::ExitCode;

use choco_core::experiment::{
    cmd_run, cmd_sweep, topology_report, Eta, ExperimentConfig, Gamma, SweepMetric,
};
use choco_core::topology::{Graph, TopologySpec};
use choco_core::verify::{run_suite, Suite};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "choco",
    version,
    about = "Decentralized SGD with compressed gossip"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-seed CSVs, an aggregate and a summary.
    Run(RunArgs),
    /// Print size, degrees, spectral gap and consensus stepsizes of a topology.
    Topology {
        /// `ring:N`, `torus:N`, `full:N` or `file:PATH`.
        spec: Option<String>,
        /// Edge-list file (`i j` per line, `#` comments).
        #[arg(long)]
        edge_list: Option<PathBuf>,
        /// Number of nodes for the edge list (default: largest index + 1).
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Grid search over eta and gamma.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated eta values (numbers or `theory`).
        #[arg(long, value_delimiter = ',')]
        eta: Vec<String>,
        /// Comma-separated gamma values (`auto`, numbers or multiples like `0.1x`).
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<String>,
        #[arg(long, value_enum)]
        metric: Option<Metric>,
    },
    /// Run built-in property suites.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the seed list; repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log_every: Option<u64>,
    /// Count one message per node and round instead of one per link.
    #[arg(long)]
    broadcast: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    FinalF,
    FinalGradSq,
    FinalConsensus,
    MeanGradSq,
}

impl From<Metric> for SweepMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::FinalF => Self::FinalF,
            Metric::FinalGradSq => Self::FinalGradSq,
            Metric::FinalConsensus => Self::FinalConsensus,
            Metric::MeanGradSq => Self::MeanGradSq,
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    if !args.seed.is_empty() {
        cfg.seeds = args.seed.clone();
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(k) = args.log_every {
        cfg.log_every = k;
    }
    if args.broadcast {
        cfg.broadcast = true;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn configure_threads() {
    if let Some(n) = std::env::var("CHOCO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn main() -> ExitCode {
    configure_threads();
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = match load(&args) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match cmd_run(&cfg) {
                Ok(report) => {
                    println!("run {} -> {}", report.run_id, cfg.out.display());
                    println!(
                        "eta {:.6e}  gamma {:.6e}  delta {:.6e}  rho {:.6}",
                        report.resolved.eta,
                        report.resolved.gamma,
                        report.resolved.delta,
                        report.resolved.rho
                    );
                    for r in &report.runs {
                        match (r.summary.diverged, r.summary.final_f) {
                            (Some(d), _) => println!(
                                "seed {}: diverged at round {} (worker {}, norm {:.3e})",
                                r.seed, d.round, d.worker, d.norm
                            ),
                            (None, Some(f)) => println!("seed {}: final f {f:.6e}", r.seed),
                            (None, None) => println!("seed {}: no rows", r.seed),
                        }
                    }
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::Topology {
            spec,
            edge_list,
            nodes,
        } => {
            let graph = match (spec, edge_list) {
                (_, Some(path)) => Graph::from_edge_list_file(&path, nodes),
                (Some(s), None) => s.parse::<TopologySpec>().and_then(|t| t.build()),
                (None, None) => return fail("give a topology spec or --edge-list"),
            };
            match graph.and_then(|g| topology_report(&g)) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Sweep {
            run,
            eta,
            gamma,
            metric,
        } => {
            let cfg = match load(&run) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let mut spec = cfg.sweep.clone().unwrap_or_default();
            if !eta.is_empty() {
                match eta.iter().map(|s| s.parse::<Eta>()).collect() {
                    Ok(v) => spec.eta = v,
                    Err(e) => return fail(e),
                }
            }
            if !gamma.is_empty() {
                match gamma.iter().map(|s| s.parse::<Gamma>()).collect() {
                    Ok(v) => spec.gamma = v,
                    Err(e) => return fail(e),
                }
            }
            if let Some(m) = metric {
                spec.metric = m.into();
            }
            match cmd_sweep(&cfg, &spec) {
                Ok(report) => {
                    println!("{:>14} {:>14} {:>14}", "eta", "gamma", "metric");
                    for c in &report.cells {
                        println!(
                            "{:>14.6e} {:>14.6e} {:>14.6e}{}",
                            c.eta_value,
                            c.gamma_value,
                            c.metric,
                            if c.diverged { "  diverged" } else { "" }
                        );
                    }
                    let b = report.best_cell();
                    println!(
                        "best: eta {} ({:.6e}), gamma {} ({:.6e}), {:?} {:.6e}",
                        b.eta, b.eta_value, b.gamma, b.gamma_value, report.metric, b.metric
                    );
                    for w in &report.warnings {
                        eprintln!("warning: {w}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Verify { suite } => {
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            match run_suite(suite) {
                Ok(checks) => {
                    let failed = checks.iter().filter(|c| !c.passed()).count();
                    for c in &checks {
                        println!("{c}");
                    }
                    println!("{} checks, {failed} failed", checks.len());
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e),
            }
        }
    }
}
