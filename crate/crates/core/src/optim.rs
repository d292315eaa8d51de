//! Decentralized optimizers driven round by round: CHOCO-SGD, its momentum
//! and error-feedback forms, exact-gossip D-PSGD and centralized mini-batch
//! SGD, plus the theoretical stepsize tuner.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::Compressor;
use crate::consensus::{
    commit_public_copies, consensus_distance_sum, consensus_stepsize_for, gossip_update, mix,
    rate_constant, AveragingMode, PAR_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::metrics::{Divergence, MessagePolicy, Row, RunRecord, TrafficLedger};
use crate::numerics::{dist_sq, mean_vector, norm, norm_sq, Purpose, RandomStream, Vector};
use crate::problems::{Constants, Objective};
use crate::topology::MixingMatrix;

/// Iterates with a norm above this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Choco,
    ChocoMomentum,
    ChocoErrorfeedback,
    DecentralizedExact,
    Centralized,
}

impl Algorithm {
    pub fn uses_compression(self) -> bool {
        matches!(
            self,
            Self::Choco | Self::ChocoMomentum | Self::ChocoErrorfeedback
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    /// `None` selects the formula value from ρ, β and δ.
    pub gamma: Option<f64>,
    pub momentum_factor: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub rounds: u64,
}

impl OptimizerConfig {
    pub fn new(algorithm: Algorithm, eta: f64, rounds: u64) -> Self {
        Self {
            algorithm,
            eta,
            gamma: None,
            momentum_factor: 0.0,
            weight_decay: 0.0,
            nesterov: false,
            rounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta = {} must be >= 0", self.eta)));
        }
        if !(0.0..1.0).contains(&self.momentum_factor) {
            return Err(Error::Config(format!(
                "momentum_factor = {} not in [0, 1)",
                self.momentum_factor
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma = {g} must be > 0")));
            }
        }
        if self.algorithm == Algorithm::Choco && self.has_momentum() {
            return Err(Error::Config(
                "momentum / weight decay need algorithm `choco-momentum`".into(),
            ));
        }
        Ok(())
    }

    fn has_momentum(&self) -> bool {
        self.momentum_factor != 0.0 || self.weight_decay != 0.0 || self.nesterov
    }

    fn momentum_update(&self) -> bool {
        self.algorithm == Algorithm::ChocoMomentum || self.has_momentum()
    }
}

/// Run-level knobs that are not optimizer hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub seed: u64,
    pub policy: MessagePolicy,
    pub per_layer: bool,
    pub log_every: u64,
    pub wall_clock: bool,
    /// Replaces the compressor's closed-form δ in the γ and c formulas.
    pub delta_override: Option<f64>,
    /// Standard deviation of a per-worker Gaussian offset added to the
    /// initial point (0 keeps a common start).
    pub init_spread: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            policy: MessagePolicy::Pairwise,
            per_layer: false,
            log_every: 1,
            wall_clock: false,
            delta_override: None,
            init_spread: 0.0,
        }
    }
}

/// Per-node state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub x: Vector,
    pub xhat: Vector,
    /// Momentum buffer.
    pub v: Vector,
    /// Error-feedback memory.
    pub m: Vector,
    /// Post-gossip iterate of the previous round (error-feedback form).
    pub x_prev: Vector,
}

impl WorkerState {
    fn new(x: Vector) -> Self {
        let zero = vec![0.0; x.len()];
        Self {
            xhat: zero.clone(),
            v: zero.clone(),
            m: zero.clone(),
            x_prev: zero,
            x,
        }
    }
}

/// One decentralized training run, advanced one synchronous round at a time.
pub struct Simulation<'a> {
    problem: &'a dyn Objective,
    mixing: &'a MixingMatrix,
    compressor: Compressor,
    cfg: OptimizerConfig,
    opts: SimOptions,
    gamma: f64,
    delta: f64,
    segments: Vec<Range<usize>>,
    workers: Vec<WorkerState>,
    ledger: TrafficLedger,
    record: RunRecord,
    round: u64,
    max_grad_norm: f64,
    started: Instant,
}

impl<'a> Simulation<'a> {
    pub fn new(
        problem: &'a dyn Objective,
        mixing: &'a MixingMatrix,
        compressor: Compressor,
        cfg: OptimizerConfig,
        opts: SimOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = problem.nodes();
        if mixing.nodes() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: mixing.nodes(),
            });
        }
        let d = problem.dim();
        let segments = if opts.per_layer {
            problem.layer_segments()
        } else {
            std::iter::once(0..d).collect()
        };
        let compressor = if cfg.algorithm.uses_compression() {
            compressor
        } else {
            Compressor::Identity
        };
        let delta = match opts.delta_override {
            Some(dl) if dl > 0.0 && dl <= 1.0 => dl,
            Some(dl) => return Err(Error::Config(format!("delta = {dl} not in (0, 1]"))),
            None => segments
                .iter()
                .map(|s| compressor.contraction_factor(s.len()))
                .fold(1.0, f64::min),
        };
        if delta == 0.0 {
            return Err(Error::InvalidCompressor(format!(
                "{compressor} keeps no coordinates of a {d}-dimensional block"
            )));
        }
        let gamma = match (cfg.algorithm.uses_compression(), cfg.gamma) {
            (false, _) => 1.0,
            (true, Some(g)) => g,
            (true, None) => consensus_stepsize_for(mixing, delta)?,
        };
        if !(opts.init_spread >= 0.0 && opts.init_spread.is_finite()) {
            return Err(Error::Config(format!(
                "init_spread = {} must be >= 0",
                opts.init_spread
            )));
        }
        let x0 = problem.initial_point();
        let start = |i: usize| -> Vector {
            if opts.init_spread == 0.0 {
                return x0.clone();
            }
            let mut rs = RandomStream::for_worker(opts.seed, i, Purpose::Init, 0);
            let z = rs.gaussian(d, opts.init_spread);
            x0.iter().zip(z).map(|(a, b)| a + b).collect()
        };
        // the coordinator of centralized SGD gets its own ledger slot
        let slots = if cfg.algorithm == Algorithm::Centralized {
            n + 1
        } else {
            n
        };
        Ok(Self {
            problem,
            mixing,
            compressor,
            cfg,
            opts,
            gamma,
            delta,
            segments,
            workers: (0..n).map(|i| WorkerState::new(start(i))).collect(),
            ledger: TrafficLedger::new(slots),
            record: RunRecord::default(),
            round: 0,
            max_grad_norm: 0.0,
            started: Instant::now(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Linear rate of the averaging scheme in use.
    pub fn rate_constant(&self) -> f64 {
        let rho = self.mixing.spectral_gap();
        match self.cfg.algorithm {
            Algorithm::DecentralizedExact | Algorithm::Centralized => {
                rate_constant(rho, 1.0, AveragingMode::Exact)
            }
            _ => rate_constant(rho, self.delta, AveragingMode::Choco),
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn iterates(&self) -> Vec<Vector> {
        self.workers.iter().map(|w| w.x.clone()).collect()
    }

    pub fn average(&self) -> Vector {
        mean_vector(&self.iterates())
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn into_record(self) -> RunRecord {
        self.record
    }

    /// Largest stochastic-gradient norm seen so far.
    pub fn max_grad_norm(&self) -> f64 {
        self.max_grad_norm
    }

    /// Runs the configured number of rounds. On divergence the record keeps
    /// the rows logged so far plus a divergence marker.
    pub fn run(&mut self) -> Result<()> {
        while self.round < self.cfg.rounds {
            self.step()?;
        }
        Ok(())
    }

    /// One round of the configured algorithm.
    pub fn step(&mut self) -> Result<()> {
        let outcome = match self.cfg.algorithm {
            Algorithm::Choco => self.choco_sgd_step(),
            Algorithm::ChocoMomentum => self.choco_momentum_step(),
            Algorithm::ChocoErrorfeedback => self.choco_errorfeedback_step(),
            Algorithm::DecentralizedExact => self.decentralized_exact_step(),
            Algorithm::Centralized => self.centralized_step(),
        };
        if let Err(Error::Diverged {
            round,
            worker,
            norm,
        }) = outcome
        {
            self.record.diverged = Some(Divergence {
                round,
                worker,
                norm,
            });
        }
        outcome?;
        self.round += 1;
        Ok(())
    }

    /// Gossip from the public copies, compressed public-copy update, then a
    /// local SGD step at the post-gossip iterate.
    pub fn choco_sgd_step(&mut self) -> Result<()> {
        self.choco_communicate();
        self.log_row();
        let grads = self.stochastic_gradients();
        self.apply_local_updates(&grads);
        self.check_divergence()
    }

    /// As [`Self::choco_sgd_step`] with the local step replaced by heavy-ball
    /// momentum with weight decay.
    pub fn choco_momentum_step(&mut self) -> Result<()> {
        self.choco_sgd_step()
    }

    /// The same iteration written with an explicit error memory:
    /// `v = x − x_prev + m`, `q = Q(v)`, `m ← v − q`.
    pub fn choco_errorfeedback_step(&mut self) -> Result<()> {
        let (mut x, xhat) = self.split_x_xhat();
        gossip_update(&mut x, &xhat, self.mixing, self.gamma);
        let (seed, round) = (self.opts.seed, self.round);
        let compressor = self.compressor;
        let segments = self.segments.clone();
        let mut costs = Vec::with_capacity(x.len());
        for (i, ((w, xi), hi)) in self.workers.iter_mut().zip(x).zip(xhat).enumerate() {
            w.xhat = hi;
            let mut stream = RandomStream::for_worker(seed, i, Purpose::Compression, round);
            let v: Vector = xi
                .iter()
                .zip(&w.x_prev)
                .zip(&w.m)
                .map(|((a, p), m)| a - p + m)
                .collect();
            let msg = compressor.compress_segments(&v, &segments, &mut stream);
            for ((m, vi), q) in w.m.iter_mut().zip(&v).zip(&msg.payload) {
                *m = vi - q;
            }
            for (h, q) in w.xhat.iter_mut().zip(&msg.payload) {
                *h += q;
            }
            w.x_prev.clone_from(&xi);
            w.x = xi;
            costs.push(msg.bit_cost);
        }
        self.charge_gossip(&costs);
        self.log_row();
        let grads = self.stochastic_gradients();
        self.apply_local_updates(&grads);
        self.check_divergence()
    }

    /// D-PSGD: `X ← (X − η ∂F(X)) W` with full-precision messages.
    pub fn decentralized_exact_step(&mut self) -> Result<()> {
        for w in &mut self.workers {
            w.xhat.clone_from(&w.x);
        }
        self.log_row();
        let grads = self.stochastic_gradients();
        self.apply_local_updates(&grads);
        let mixed = mix(&self.iterates(), self.mixing);
        for (w, x) in self.workers.iter_mut().zip(mixed) {
            w.x = x;
            w.xhat.clone_from(&w.x);
        }
        let d = self.problem.dim();
        let cost = Compressor::Identity.bit_cost(d);
        self.charge_gossip(&vec![cost; self.workers.len()]);
        self.check_divergence()
    }

    /// All-reduce mini-batch SGD: `x ← x − (η/n) Σ g_i(x)`.
    pub fn centralized_step(&mut self) -> Result<()> {
        for w in &mut self.workers {
            w.xhat.clone_from(&w.x);
        }
        self.log_row();
        let grads = self.stochastic_gradients();
        let n = grads.len();
        let d = self.problem.dim();
        let mut avg = vec![0.0; d];
        for g in &grads {
            for (a, gi) in avg.iter_mut().zip(g) {
                *a += gi;
            }
        }
        let inv = 1.0 / n as f64;
        avg.iter_mut().for_each(|a| *a *= inv);
        let cfg = self.cfg;
        let lead = &mut self.workers[0];
        local_update(&cfg, lead, &avg);
        let (x, v) = (lead.x.clone(), lead.v.clone());
        for w in &mut self.workers[1..] {
            w.x.clone_from(&x);
            w.v.clone_from(&v);
        }
        let upload = Compressor::Identity.bit_cost(d);
        for i in 0..n {
            self.ledger.ledger_add(i, upload);
        }
        // coordinator link carries every upload
        self.ledger.ledger_add(n, upload * n as u64);
        self.check_divergence()
    }

    fn choco_communicate(&mut self) {
        let (mut x, mut xhat) = self.split_x_xhat();
        gossip_update(&mut x, &xhat, self.mixing, self.gamma);
        let costs = commit_public_copies(
            &x,
            &mut xhat,
            &self.compressor,
            &self.segments,
            self.opts.seed,
            self.round,
        );
        for ((w, xi), hi) in self.workers.iter_mut().zip(x).zip(xhat) {
            w.x = xi;
            w.xhat = hi;
        }
        self.charge_gossip(&costs);
    }

    fn split_x_xhat(&mut self) -> (Vec<Vector>, Vec<Vector>) {
        self.workers
            .iter_mut()
            .map(|w| (std::mem::take(&mut w.x), std::mem::take(&mut w.xhat)))
            .unzip()
    }

    fn charge_gossip(&mut self, costs: &[u64]) {
        for (i, &bits) in costs.iter().enumerate() {
            let nbrs = self.mixing.neighbors(i).iter().map(|&(j, _)| j);
            self.ledger.record_gossip(i, nbrs, bits, self.opts.policy);
        }
    }

    fn stochastic_gradients(&mut self) -> Vec<Vector> {
        let (problem, seed, round) = (self.problem, self.opts.seed, self.round);
        let grad = |(i, w): (usize, &WorkerState)| {
            let mut stream = RandomStream::for_worker(seed, i, Purpose::Gradient, round);
            problem.stochastic_gradient(i, &w.x, round, &mut stream)
        };
        let grads: Vec<Vector> = if self.workers.len() * problem.dim() >= PAR_THRESHOLD {
            self.workers.par_iter().enumerate().map(grad).collect()
        } else {
            self.workers.iter().enumerate().map(grad).collect()
        };
        for g in &grads {
            self.max_grad_norm = self.max_grad_norm.max(norm(g));
        }
        grads
    }

    fn apply_local_updates(&mut self, grads: &[Vector]) {
        let cfg = self.cfg;
        for (w, g) in self.workers.iter_mut().zip(grads) {
            local_update(&cfg, w, g);
        }
    }

    fn check_divergence(&self) -> Result<()> {
        for (i, w) in self.workers.iter().enumerate() {
            let nrm = norm(&w.x);
            if !nrm.is_finite() || nrm > DIVERGENCE_NORM {
                return Err(Error::Diverged {
                    round: self.round,
                    worker: i,
                    norm: nrm,
                });
            }
        }
        Ok(())
    }

    fn should_log(&self) -> bool {
        let every = self.opts.log_every.max(1);
        self.round.is_multiple_of(every) || self.round + 1 == self.cfg.rounds
    }

    fn log_row(&mut self) {
        if !self.should_log() {
            return;
        }
        let x = self.iterates();
        let n = x.len() as f64;
        let avg = mean_vector(&x);
        let spread = consensus_distance_sum(&x);
        let lag: f64 = self.workers.iter().map(|w| dist_sq(&w.x, &w.xhat)).sum();
        let row = Row {
            t: self.round,
            f_avg: self.problem.loss(&avg),
            grad_sq: norm_sq(&self.problem.gradient(&avg)),
            consensus: spread / n,
            psi: spread + lag,
            bits_busiest: self.ledger.busiest(),
            wall_ms: if self.opts.wall_clock {
                self.started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        let worker_loss = x.iter().map(|xi| self.problem.loss(xi)).collect();
        self.record.record_round(row, worker_loss);
    }
}

/// Plain SGD step, or heavy-ball momentum with weight decay:
/// `v ← (g + λx) + βv`, `x ← x − ηv` (Nesterov: `x ← x − η((g + λx) + βv)`).
fn local_update(cfg: &OptimizerConfig, w: &mut WorkerState, g: &[f64]) {
    let eta = cfg.eta;
    if !cfg.momentum_update() {
        for (x, gi) in w.x.iter_mut().zip(g) {
            *x -= eta * gi;
        }
        return;
    }
    let (beta, lambda) = (cfg.momentum_factor, cfg.weight_decay);
    for ((x, v), gi) in w.x.iter_mut().zip(w.v.iter_mut()).zip(g) {
        let grad = gi + lambda * *x;
        *v = grad + beta * *v;
        let dir = if cfg.nesterov { grad + beta * *v } else { *v };
        *x -= eta * dir;
    }
}

/// `η = min{ (r0 / (b(T+1)))^{1/2}, (r0 / (e(T+1)))^{1/3}, 1/d }`.
/// Zero `b` or `e` and an infinite `d_cap` drop their term.
pub fn tune_stepsize(r0: f64, b: f64, e: f64, d_cap: f64, rounds: u64) -> f64 {
    let t1 = (rounds + 1) as f64;
    let sqrt_term = if b > 0.0 {
        (r0 / (b * t1)).sqrt()
    } else {
        f64::INFINITY
    };
    let cbrt_term = if e > 0.0 {
        (r0 / (e * t1)).cbrt()
    } else {
        f64::INFINITY
    };
    let cap = if d_cap.is_finite() {
        1.0 / d_cap
    } else {
        f64::INFINITY
    };
    sqrt_term.min(cbrt_term).min(cap)
}

/// Stepsize from the rate bound with `r0 = 4F0`, `b = 2σ̄²L/n`,
/// `e = 36G²L²/c²`, `d = 4L`.
pub fn theory_stepsize(k: &Constants, f0: f64, nodes: usize, c: f64, rounds: u64) -> f64 {
    let l = k.l;
    tune_stepsize(
        4.0 * f0,
        2.0 * k.sigma_bar * k.sigma_bar * l / nodes as f64,
        36.0 * k.g * k.g * l * l / (c * c),
        4.0 * l,
        rounds,
    )
}

/// Right-hand side of the consensus-distance bound `η² · 12 n G² / c²`.
pub fn consensus_bound(eta: f64, nodes: usize, g: f64, c: f64) -> f64 {
    eta * eta * 12.0 * nodes as f64 * g * g / (c * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Quadratic, QuadraticParams};
    use crate::topology::Graph;

    fn quad(n: usize, sigma: f64) -> Quadratic {
        Quadratic::new(
            n,
            QuadraticParams {
                d: 5,
                heterogeneity: 1.0,
                noise_std: sigma,
                mu: 0.1,
                l: 1.0,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn tune_stepsize_branches() {
        assert_eq!(tune_stepsize(1.0, 0.0, 0.0, 4.0, 10), 0.25);
        assert!((tune_stepsize(1.0, 1.0, 0.0, f64::INFINITY, 99) - 0.1).abs() < 1e-15);
        assert!((tune_stepsize(1.0, 0.0, 1000.0, f64::INFINITY, 999) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only_step() {
        let cfg = OptimizerConfig {
            weight_decay: 0.5,
            ..OptimizerConfig::new(Algorithm::ChocoMomentum, 0.1, 1)
        };
        let mut w = WorkerState::new(vec![2.0, -4.0]);
        local_update(&cfg, &mut w, &[0.0, 0.0]);
        assert_eq!(w.v, vec![1.0, -2.0]);
        assert_eq!(w.x, vec![2.0 * (1.0 - 0.05), -4.0 * (1.0 - 0.05)]);
    }

    #[test]
    fn choco_rejects_momentum() {
        let cfg = OptimizerConfig {
            momentum_factor: 0.9,
            ..OptimizerConfig::new(Algorithm::Choco, 0.1, 1)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_eta_preserves_average() {
        let q = quad(6, 1.0);
        let m = MixingMatrix::from_graph(&Graph::ring(6).unwrap()).unwrap();
        let mut sim = Simulation::new(
            &q,
            &m,
            Compressor::Sign,
            OptimizerConfig::new(Algorithm::Choco, 0.0, 50),
            SimOptions::default(),
        )
        .unwrap();
        let before = sim.average();
        sim.run().unwrap();
        let after = sim.average();
        assert!(dist_sq(&before, &after).sqrt() < 1e-12);
    }

    #[test]
    fn single_node_matches_centralized() {
        let q = quad(1, 0.5);
        let m = MixingMatrix::from_graph(&Graph::fully_connected(1).unwrap()).unwrap();
        let run = |alg| {
            let mut sim = Simulation::new(
                &q,
                &m,
                Compressor::Sign,
                OptimizerConfig::new(alg, 0.1, 40),
                SimOptions {
                    seed: 4,
                    ..SimOptions::default()
                },
            )
            .unwrap();
            sim.run().unwrap();
            sim.iterates()
        };
        assert_eq!(run(Algorithm::Choco), run(Algorithm::Centralized));
    }

    #[test]
    fn uniform_mixing_dpsgd_matches_centralized() {
        let q = quad(4, 0.5);
        let m = MixingMatrix::from_graph(&Graph::fully_connected(4).unwrap()).unwrap();
        let run = |alg| {
            let mut sim = Simulation::new(
                &q,
                &m,
                Compressor::Identity,
                OptimizerConfig::new(alg, 0.1, 30),
                SimOptions::default(),
            )
            .unwrap();
            sim.run().unwrap();
            sim.iterates()
        };
        let a = run(Algorithm::DecentralizedExact);
        let b = run(Algorithm::Centralized);
        for (x, y) in a.iter().zip(&b) {
            assert!(dist_sq(x, y).sqrt() < 1e-12);
        }
    }

    #[test]
    fn symmetric_noiseless_workers_stay_identical() {
        let q = Quadratic::new(
            4,
            QuadraticParams {
                d: 3,
                heterogeneity: 0.0,
                noise_std: 0.0,
                mu: 0.1,
                l: 1.0,
            },
            1,
        )
        .unwrap();
        let m = MixingMatrix::from_graph(&Graph::ring(4).unwrap()).unwrap();
        let mut sim = Simulation::new(
            &q,
            &m,
            Compressor::Identity,
            OptimizerConfig::new(Algorithm::DecentralizedExact, 0.2, 25),
            SimOptions::default(),
        )
        .unwrap();
        sim.run().unwrap();
        let x = sim.iterates();
        assert!(x.iter().all(|xi| *xi == x[0]));
    }

    #[test]
    fn centralized_scalar_step() {
        // f = ½x², x = 2, η = 1 → 0
        let q = Quadratic::new(
            1,
            QuadraticParams {
                d: 1,
                heterogeneity: 0.0,
                noise_std: 0.0,
                mu: 1.0,
                l: 1.0,
            },
            0,
        )
        .unwrap();
        let x_star = q.optimum()[0];
        let m = MixingMatrix::from_graph(&Graph::fully_connected(1).unwrap()).unwrap();
        let mut sim = Simulation::new(
            &q,
            &m,
            Compressor::Identity,
            OptimizerConfig::new(Algorithm::Centralized, 1.0, 1),
            SimOptions::default(),
        )
        .unwrap();
        sim.run().unwrap();
        assert!((sim.iterates()[0][0] - x_star).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_flagged() {
        let q = quad(4, 0.0);
        let m = MixingMatrix::from_graph(&Graph::ring(4).unwrap()).unwrap();
        let mut sim = Simulation::new(
            &q,
            &m,
            Compressor::Identity,
            OptimizerConfig::new(Algorithm::DecentralizedExact, 10.0, 1000),
            SimOptions::default(),
        )
        .unwrap();
        assert!(matches!(sim.run(), Err(Error::Diverged { .. })));
        assert!(sim.record().diverged.is_some());
        assert!(sim.record().rows.iter().all(|r| r.f_avg.is_finite()));
    }

    #[test]
    fn errorfeedback_identity_keeps_zero_memory() {
        let q = quad(4, 1.0);
        let m = MixingMatrix::from_graph(&Graph::ring(4).unwrap()).unwrap();
        let mut sim = Simulation::new(
            &q,
            &m,
            Compressor::Identity,
            OptimizerConfig::new(Algorithm::ChocoErrorfeedback, 0.05, 20),
            SimOptions::default(),
        )
        .unwrap();
        for _ in 0..20 {
            sim.step().unwrap();
            assert!(sim.workers().iter().all(|w| w.m.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn log_interval() {
        let q = quad(2, 0.0);
        let m = MixingMatrix::from_graph(&Graph::ring(2).unwrap()).unwrap();
        let mut sim = Simulation::new(
            &q,
            &m,
            Compressor::Sign,
            OptimizerConfig::new(Algorithm::Choco, 0.1, 10),
            SimOptions {
                log_every: 4,
                ..SimOptions::default()
            },
        )
        .unwrap();
        sim.run().unwrap();
        let ts: Vec<u64> = sim.record().rows.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 4, 8, 9]);
    }
}
