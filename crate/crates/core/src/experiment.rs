//! JSON experiment configuration, multi-seed runs with CSV/JSON output,
//! topology reports and stepsize grid sweeps.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::compression::Compressor;
use crate::consensus::{consensus_stepsize_for, rate_constant, AveragingMode};
use crate::error::{Error, Result};
use crate::metrics::{summarize, Budgets, Divergence, MessagePolicy, RunRecord, Summary};
use crate::optim::{theory_stepsize, Algorithm, OptimizerConfig, SimOptions, Simulation};
use crate::problems::{
    estimate_constants, make_logistic, make_mlp, LogisticParams, MlpParams, Objective, Quadratic,
    QuadraticParams,
};
use crate::topology::{Graph, MixingMatrix, TopologySpec};

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrStr {
    Num(f64),
    Str(String),
}

/// SGD stepsize: a number or `"theory"` (tuned from estimated constants).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    Value(f64),
    Theory,
}

impl FromStr for Eta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "theory" => Ok(Self::Theory),
            v => v
                .parse()
                .map(Self::Value)
                .map_err(|_| Error::Config(format!("bad eta `{s}`"))),
        }
    }
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(v) => write!(f, "{v}"),
            Self::Theory => f.write_str("theory"),
        }
    }
}

impl Serialize for Eta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Value(v) => s.serialize_f64(*v),
            Self::Theory => s.serialize_str("theory"),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumOrStr::deserialize(d)? {
            NumOrStr::Num(v) => Ok(Self::Value(v)),
            NumOrStr::Str(s) if s == "theory" => Ok(Self::Theory),
            NumOrStr::Str(s) => Err(serde::de::Error::custom(format!(
                "eta must be a number or \"theory\", got \"{s}\""
            ))),
        }
    }
}

/// Consensus stepsize: `"auto"`, an absolute number, or `"<k>x"` meaning
/// `k` times the formula value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Gamma {
    #[default]
    Auto,
    Value(f64),
    Relative(f64),
}

impl FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("bad gamma `{s}`"));
        if s == "auto" {
            Ok(Self::Auto)
        } else if let Some(k) = s.strip_suffix('x') {
            k.parse().map(Self::Relative).map_err(|_| bad())
        } else {
            s.parse().map(Self::Value).map_err(|_| bad())
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Value(v) => write!(f, "{v}"),
            Self::Relative(k) => write!(f, "{k}x"),
        }
    }
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Value(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumOrStr::deserialize(d)? {
            NumOrStr::Num(v) => Ok(Self::Value(v)),
            NumOrStr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemSpec {
    Quadratic(QuadraticParams),
    Logistic(LogisticParams),
    Mlp(MlpParams),
}

impl ProblemSpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<Box<dyn Objective>> {
        Ok(match self {
            Self::Quadratic(p) => Box::new(Quadratic::new(n, *p, seed)?),
            Self::Logistic(p) => Box::new(make_logistic(n, p, seed)?),
            Self::Mlp(p) => Box::new(make_mlp(n, p, seed)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMetric {
    #[default]
    FinalF,
    FinalGradSq,
    FinalConsensus,
    MeanGradSq,
}

impl SweepMetric {
    pub fn of(self, run: &RunRecord) -> f64 {
        let last = run.last();
        match self {
            Self::FinalF => last.map_or(f64::INFINITY, |r| r.f_avg),
            Self::FinalGradSq => last.map_or(f64::INFINITY, |r| r.grad_sq),
            Self::FinalConsensus => last.map_or(f64::INFINITY, |r| r.consensus),
            Self::MeanGradSq => {
                if run.rows.is_empty() {
                    f64::INFINITY
                } else {
                    run.rows.iter().map(|r| r.grad_sq).sum::<f64>() / run.rows.len() as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub eta: Vec<Eta>,
    #[serde(default)]
    pub gamma: Vec<Gamma>,
    #[serde(default)]
    pub metric: SweepMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_f: Option<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_log_every() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment: topology, compressor, optimizer, problem and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    #[serde(default = "identity")]
    pub compressor: Compressor,
    pub algorithm: Algorithm,
    pub eta: Eta,
    #[serde(default)]
    pub gamma: Gamma,
    /// Overrides the closed-form contraction factor in the γ and rate formulas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default)]
    pub momentum_factor: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub nesterov: bool,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub problem_seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub rounds: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub broadcast: bool,
    #[serde(default)]
    pub per_layer: bool,
    #[serde(default)]
    pub wall_clock: bool,
    /// Per-worker Gaussian offset of the starting point.
    #[serde(default)]
    pub init_spread: f64,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn identity() -> Compressor {
    Compressor::Identity
}

impl ExperimentConfig {
    /// Parses and validates a JSON document. Syntax and schema errors carry
    /// the line and column of the offending token.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if let Eta::Value(v) = self.eta {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("eta = {v} must be >= 0")));
            }
        }
        match self.gamma {
            Gamma::Value(v) | Gamma::Relative(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::Config(format!("gamma = {v} must be > 0")));
            }
            _ => {}
        }
        if !(self.init_spread >= 0.0 && self.init_spread.is_finite()) {
            return Err(Error::Config("init_spread must be >= 0".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("delta = {d} not in (0, 1]")));
            }
        }
        self.compressor
            .validated()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.optimizer(0.0, None).validate()
    }

    /// Short content hash of the canonical config.
    pub fn run_id(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)[..12].to_string()
    }

    pub fn optimizer(&self, eta: f64, gamma: Option<f64>) -> OptimizerConfig {
        OptimizerConfig {
            algorithm: self.algorithm,
            eta,
            gamma,
            momentum_factor: self.momentum_factor,
            weight_decay: self.weight_decay,
            nesterov: self.nesterov,
            rounds: self.rounds,
        }
    }

    pub fn sim_options(&self, seed: u64) -> SimOptions {
        SimOptions {
            seed,
            policy: if self.broadcast {
                MessagePolicy::Broadcast
            } else {
                MessagePolicy::Pairwise
            },
            per_layer: self.per_layer,
            log_every: self.log_every,
            wall_clock: self.wall_clock,
            delta_override: self.delta,
            init_spread: self.init_spread,
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        let graph = self.topology.build()?;
        let mixing = MixingMatrix::from_graph(&graph)?;
        let problem = self.problem.build(graph.nodes(), self.problem_seed)?;
        Ok(Setup {
            graph,
            mixing,
            problem,
        })
    }

    fn probe<'a>(&self, setup: &'a Setup) -> Result<Simulation<'a>> {
        Simulation::new(
            setup.problem.as_ref(),
            &setup.mixing,
            self.compressor,
            self.optimizer(0.0, None),
            self.sim_options(0),
        )
    }

    /// Resolves `eta`, estimating the problem constants for `"theory"`.
    pub fn resolve_eta(&self, eta: Eta, setup: &Setup) -> Result<f64> {
        match eta {
            Eta::Value(v) => Ok(v),
            Eta::Theory => {
                let c = self.probe(setup)?.rate_constant();
                let p = setup.problem.as_ref();
                let k = estimate_constants(p, 200, self.problem_seed)?;
                let f0 = p.loss(&p.initial_point()) - p.optimal_value().unwrap_or(0.0);
                Ok(theory_stepsize(&k, f0.max(0.0), p.nodes(), c, self.rounds))
            }
        }
    }

    /// Resolves a γ setting to an explicit value (`None` keeps the formula).
    pub fn resolve_gamma(&self, gamma: Gamma, setup: &Setup) -> Result<Option<f64>> {
        match gamma {
            Gamma::Auto => Ok(None),
            Gamma::Value(v) => Ok(Some(v)),
            Gamma::Relative(k) => Ok(Some(k * self.probe(setup)?.gamma())),
        }
    }
}

/// Built topology, mixing matrix and problem of an experiment.
pub struct Setup {
    pub graph: Graph,
    pub mixing: MixingMatrix,
    pub problem: Box<dyn Objective>,
}

/// Runs one seed to completion or divergence. Errors other than divergence
/// are returned as such.
pub fn run_seed(
    cfg: &ExperimentConfig,
    setup: &Setup,
    seed: u64,
    eta: f64,
    gamma: Option<f64>,
) -> Result<RunRecord> {
    let mut sim = Simulation::new(
        setup.problem.as_ref(),
        &setup.mixing,
        cfg.compressor,
        cfg.optimizer(eta, gamma),
        cfg.sim_options(seed),
    )?;
    match sim.run() {
        Ok(()) | Err(Error::Diverged { .. }) => Ok(sim.into_record()),
        Err(e) => Err(e),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub eta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub rho: f64,
    pub beta: f64,
    pub rate_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub csv: String,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    pub runs: Vec<SeedSummary>,
    pub diverged: bool,
}

impl RunReport {
    /// 0 on completion, 2 when any seed diverged.
    pub fn exit_code(&self) -> i32 {
        if self.diverged {
            2
        } else {
            0
        }
    }
}

pub fn seed_csv_name(seed: u64) -> String {
    format!("seed-{seed}.csv")
}

/// Runs every seed (in parallel), writing one CSV per seed, `aggregate.csv`
/// with per-row mean and standard deviation, and `summary.json`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let setup = cfg.setup()?;
    let eta = cfg.resolve_eta(cfg.eta, &setup)?;
    let gamma = cfg.resolve_gamma(cfg.gamma, &setup)?;
    let probe = Simulation::new(
        setup.problem.as_ref(),
        &setup.mixing,
        cfg.compressor,
        cfg.optimizer(eta, gamma),
        cfg.sim_options(0),
    )?;
    let resolved = Resolved {
        eta,
        gamma: probe.gamma(),
        delta: probe.delta(),
        rho: setup.mixing.spectral_gap(),
        beta: setup.mixing.operator_gap_beta(),
        rate_constant: probe.rate_constant(),
    };
    drop(probe);

    let records: Vec<RunRecord> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &setup, seed, eta, gamma))
        .collect::<Result<_>>()?;

    let budgets = Budgets {
        rounds: cfg.budget.rounds,
        bits: cfg.budget.bits,
        target_f: cfg.budget.target_f,
    };
    let mut runs = Vec::with_capacity(records.len());
    for (&seed, rec) in cfg.seeds.iter().zip(&records) {
        let name = seed_csv_name(seed);
        let mut buf = Vec::new();
        rec.write_csv(&mut buf)?;
        write_atomic(&cfg.out.join(&name), &buf)?;
        runs.push(SeedSummary {
            seed,
            csv: name,
            summary: summarize(rec, budgets),
        });
    }
    write_atomic(&cfg.out.join("aggregate.csv"), &aggregate_csv(&records)?)?;

    let report = RunReport {
        run_id: cfg.run_id(),
        config: cfg.clone(),
        resolved,
        diverged: records.iter().any(|r| r.diverged.is_some()),
        runs,
    };
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(&cfg.out.join("summary.json"), json.as_bytes())?;
    Ok(report)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-row mean and sample standard deviation across seeds, over the rows
/// every seed reached.
pub fn aggregate_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let metrics = [
        "f_avg",
        "grad_sq",
        "consensus",
        "psi",
        "bits_busiest",
        "wall_ms",
    ];
    let mut header = vec!["t".to_string(), "seeds".to_string()];
    for m in metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    let len = records.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    for k in 0..len {
        let rows: Vec<_> = records.iter().map(|r| r.rows[k]).collect();
        let cols: [Vec<f64>; 6] = [
            rows.iter().map(|r| r.f_avg).collect(),
            rows.iter().map(|r| r.grad_sq).collect(),
            rows.iter().map(|r| r.consensus).collect(),
            rows.iter().map(|r| r.psi).collect(),
            rows.iter().map(|r| r.bits_busiest as f64).collect(),
            rows.iter().map(|r| r.wall_ms as f64).collect(),
        ];
        let mut rec = vec![rows[0].t.to_string(), records.len().to_string()];
        for c in &cols {
            let (m, s) = mean_std(c);
            rec.push(m.to_string());
            rec.push(s.to_string());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Consensus-stepsize table: `(δ, γ(δ), ρ²δ/82)`.
pub fn gamma_table(m: &MixingMatrix, deltas: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    deltas
        .iter()
        .map(|&d| {
            let g = consensus_stepsize_for(m, d)?;
            Ok((
                d,
                g,
                rate_constant(m.spectral_gap(), d, AveragingMode::Choco),
            ))
        })
        .collect()
}

/// Human-readable topology summary: size, degrees, ρ, β and γ(δ).
pub fn topology_report(graph: &Graph) -> Result<String> {
    use std::fmt::Write as _;
    let m = MixingMatrix::from_graph(graph)?;
    let degrees = graph.degrees();
    let mut out = String::new();
    let _ = writeln!(out, "nodes     {}", graph.nodes());
    let _ = writeln!(out, "edges     {}", graph.edges().len());
    let min = degrees.iter().min().copied().unwrap_or(0);
    let _ = writeln!(out, "degree    min {min} max {}", graph.max_degree());
    if degrees.len() <= 64 {
        let list: Vec<String> = degrees.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "degrees   {}", list.join(" "));
    }
    let _ = writeln!(out, "rho       {:.6}", m.spectral_gap());
    let _ = writeln!(out, "beta      {:.6}", m.operator_gap_beta());
    let _ = writeln!(out, "{:>10} {:>14} {:>14}", "delta", "gamma", "rate");
    for (d, g, c) in gamma_table(&m, &[1.0, 0.5, 0.1, 0.01, 0.001])? {
        let _ = writeln!(out, "{d:>10} {g:>14.6e} {c:>14.6e}");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub eta: Eta,
    pub gamma: Gamma,
    pub eta_value: f64,
    pub gamma_value: f64,
    pub metric: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub metric: SweepMetric,
    pub cells: Vec<SweepCell>,
    pub best: usize,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn best_cell(&self) -> &SweepCell {
        &self.cells[self.best]
    }
}

/// Runs the η × γ grid (cells in parallel, seeds averaged) and reports the
/// cell with the lowest metric. Diverged cells score `+∞`. Writes
/// `sweep.csv` into the output directory.
pub fn cmd_sweep(cfg: &ExperimentConfig, spec: &SweepSpec) -> Result<SweepReport> {
    let etas = if spec.eta.is_empty() {
        vec![cfg.eta]
    } else {
        spec.eta.clone()
    };
    let gammas = if spec.gamma.is_empty() {
        vec![cfg.gamma]
    } else {
        spec.gamma.clone()
    };
    let setup = cfg.setup()?;
    let mut grid = Vec::new();
    for &e in &etas {
        let ev = cfg.resolve_eta(e, &setup)?;
        for &g in &gammas {
            grid.push((e, ev, g, cfg.resolve_gamma(g, &setup)?));
        }
    }
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(eta, eta_value, gamma, gv)| {
            let mut total = 0.0;
            let mut diverged = false;
            let mut gamma_value = f64::NAN;
            for &seed in &cfg.seeds {
                let mut sim = Simulation::new(
                    setup.problem.as_ref(),
                    &setup.mixing,
                    cfg.compressor,
                    cfg.optimizer(eta_value, gv),
                    cfg.sim_options(seed),
                )?;
                gamma_value = sim.gamma();
                match sim.run() {
                    Ok(()) => total += spec.metric.of(sim.record()),
                    Err(Error::Diverged { .. }) => diverged = true,
                    Err(e) => return Err(e),
                }
            }
            let metric = if diverged {
                f64::INFINITY
            } else {
                total / cfg.seeds.len() as f64
            };
            Ok(SweepCell {
                eta,
                gamma,
                eta_value,
                gamma_value,
                metric,
                diverged,
            })
        })
        .collect::<Result<_>>()?;

    let best = cells
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.metric.total_cmp(&b.1.metric))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut warnings = Vec::new();
    let (bi, bj) = (best / gammas.len(), best % gammas.len());
    if etas.len() > 1 && (bi == 0 || bi + 1 == etas.len()) {
        warnings.push(format!(
            "best eta {} lies on the grid boundary; extend the grid",
            etas[bi]
        ));
    }
    if gammas.len() > 1 && (bj == 0 || bj + 1 == gammas.len()) {
        warnings.push(format!(
            "best gamma {} lies on the grid boundary; extend the grid",
            gammas[bj]
        ));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "eta",
        "gamma",
        "eta_value",
        "gamma_value",
        "metric",
        "diverged",
    ])?;
    for c in &cells {
        w.write_record([
            c.eta.to_string(),
            c.gamma.to_string(),
            c.eta_value.to_string(),
            c.gamma_value.to_string(),
            c.metric.to_string(),
            c.diverged.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(&cfg.out.join("sweep.csv"), &bytes)?;

    Ok(SweepReport {
        metric: spec.metric,
        cells,
        best,
        warnings,
    })
}

/// Divergence markers of a run report, if any.
pub fn divergences(report: &RunReport) -> Vec<(u64, Divergence)> {
    report
        .runs
        .iter()
        .filter_map(|r| r.summary.diverged.map(|d| (r.seed, d)))
        .collect()
}
