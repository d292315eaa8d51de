//! Built-in property suites with fixed seeds. Each check reports its
//! observed value, the admissible interval and the margin to failure.

use std::fmt;
use std::str::FromStr;

use crate::compression::Compressor;
use crate::consensus::{
    choco_gossip_round, consensus_stepsize_for, lyapunov, rate_constant, AveragingMode,
    ConsensusState,
};
use crate::error::{Error, Result};
use crate::metrics::{MessagePolicy, RunRecord};
use crate::numerics::{dist_sq, norm, norm_sq, Purpose, RandomStream, Vector};
use crate::optim::{
    consensus_bound, theory_stepsize, Algorithm, OptimizerConfig, SimOptions, Simulation,
};
use crate::problems::{
    averaged_noise_second_moment, estimate_constants, Objective, Quadratic, QuadraticParams,
};
use crate::topology::{Graph, MixingMatrix};

const SEED: u64 = 20_190_917;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Compression,
    Consensus,
    Equivalence,
    Convergence,
    Traffic,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "compression" => Self::Compression,
            "consensus" => Self::Consensus,
            "equivalence" => Self::Equivalence,
            "convergence" => Self::Convergence,
            "traffic" => Self::Traffic,
            "all" => Self::All,
            _ => return Err(Error::InvalidArgument(format!("unknown suite `{s}`"))),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Compression => "compression",
            Self::Consensus => "consensus",
            Self::Equivalence => "equivalence",
            Self::Convergence => "convergence",
            Self::Traffic => "traffic",
            Self::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Check {
    fn at_most(suite: Suite, name: impl Into<String>, value: f64, hi: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            lo: None,
            hi: Some(hi),
        }
    }

    fn within(suite: Suite, name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            lo: Some(lo),
            hi: Some(hi),
        }
    }

    /// Distance to the nearest violated bound; negative when failing.
    pub fn margin(&self) -> f64 {
        let below = self.hi.map_or(f64::INFINITY, |h| h - self.value);
        let above = self.lo.map_or(f64::INFINITY, |l| self.value - l);
        below.min(above)
    }

    pub fn passed(&self) -> bool {
        !self.value.is_nan() && self.margin() >= 0.0
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let bound = match (self.lo, self.hi) {
            (Some(l), Some(h)) => format!("[{l:.6e}, {h:.6e}]"),
            (None, Some(h)) => format!("<= {h:.6e}"),
            (Some(l), None) => format!(">= {l:.6e}"),
            (None, None) => String::new(),
        };
        write!(
            f,
            "{verdict} {:<12} {:<40} value {:.6e}  bound {bound}  margin {:.3e}",
            self.suite.to_string(),
            self.name,
            self.value,
            self.margin()
        )
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Compression => compression_suite(),
        Suite::Consensus => consensus_suite(),
        Suite::Equivalence => equivalence_suite(),
        Suite::Convergence => convergence_suite(),
        Suite::Traffic => traffic_suite(),
        Suite::All => {
            let mut all = Vec::new();
            for s in [
                Suite::Compression,
                Suite::Consensus,
                Suite::Equivalence,
                Suite::Convergence,
                Suite::Traffic,
            ] {
                all.extend(run_suite(s)?);
            }
            Ok(all)
        }
    }
}

fn biased_compressors() -> [Compressor; 4] {
    [
        Compressor::gsgd(4).expect("valid"),
        Compressor::random(0.1).expect("valid"),
        Compressor::topk(0.1).expect("valid"),
        Compressor::Sign,
    ]
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn compression_suite() -> Result<Vec<Check>> {
    let s = Suite::Compression;
    let (d, samples) = (100, 1000);
    let mut out = Vec::new();
    for c in biased_compressors() {
        let ratios: Vec<f64> = (0..samples)
            .map(|k| {
                let x = RandomStream::for_worker(SEED, 0, Purpose::Test, k).gaussian(d, 1.0);
                let mut rs = RandomStream::for_worker(SEED, 1, Purpose::Compression, k);
                let q = c.compress(&x, &mut rs).payload;
                dist_sq(&q, &x) / norm_sq(&x)
            })
            .collect();
        let (mean, se) = mean_se(&ratios);
        let bound = 1.0 - c.contraction_factor(d) + 3.0 * se;
        out.push(Check::at_most(s, format!("contraction {c}"), mean, bound));
    }
    for c in [
        "gsgd:4:unbiased".parse::<Compressor>()?,
        "random:0.1:unbiased".parse()?,
    ] {
        let mut errs = vec![Vec::with_capacity(samples as usize); d];
        for k in 0..samples {
            let x = RandomStream::for_worker(SEED, 0, Purpose::Test, k).gaussian(d, 1.0);
            let mut rs = RandomStream::for_worker(SEED, 2, Purpose::Compression, k);
            let q = c.compress(&x, &mut rs).payload;
            for (e, (a, b)) in errs.iter_mut().zip(q.iter().zip(&x)) {
                e.push(a - b);
            }
        }
        let worst = errs
            .iter()
            .map(|e| {
                let (m, se) = mean_se(e);
                m.abs() / se
            })
            .fold(0.0, f64::max);
        out.push(Check::at_most(
            s,
            format!("unbiased {c} (max z)"),
            worst,
            3.0,
        ));
    }
    Ok(out)
}

/// Spectral gaps listed for the reference topologies.
pub const REFERENCE_GAPS: [(&str, usize, f64); 11] = [
    ("ring", 4, 0.67),
    ("ring", 16, 0.05),
    ("ring", 36, 0.01),
    ("ring", 64, 0.003),
    ("torus", 16, 0.4),
    ("torus", 36, 0.2),
    ("torus", 64, 0.12),
    ("full", 4, 1.0),
    ("full", 16, 1.0),
    ("full", 36, 1.0),
    ("full", 64, 1.0),
];

fn consensus_suite() -> Result<Vec<Check>> {
    let s = Suite::Consensus;
    let mut out = Vec::new();
    for (kind, n, expected) in REFERENCE_GAPS {
        let g = format!("{kind}:{n}")
            .parse::<crate::topology::TopologySpec>()?
            .build()?;
        let rho = MixingMatrix::from_graph(&g)?.spectral_gap();
        out.push(Check::within(
            s,
            format!("gap {kind}:{n}"),
            rho,
            expected - 0.005,
            expected + 0.005,
        ));
    }
    let m = MixingMatrix::from_graph(&Graph::ring(8)?)?;
    let (d, rounds, trials) = (100, 500u64, 5u64);
    for c in biased_compressors() {
        let delta = c.contraction_factor(d);
        let gamma = consensus_stepsize_for(&m, delta)?;
        let rate = rate_constant(m.spectral_gap(), delta, AveragingMode::Choco);
        let (mut psi0, mut psi_t, mut drift) = (0.0, 0.0, 0.0f64);
        for trial in 0..trials {
            let x: Vec<Vector> = (0..8)
                .map(|i| RandomStream::for_worker(SEED, i, Purpose::Init, trial).gaussian(d, 1.0))
                .collect();
            let mut st = ConsensusState::new(x, gamma)?;
            let avg0 = st.average();
            psi0 += lyapunov(&st);
            for r in 0..rounds {
                choco_gossip_round(&mut st, &m, &c, SEED + trial, r);
                drift = drift.max(dist_sq(&st.average(), &avg0).sqrt() / norm(&avg0));
            }
            psi_t += lyapunov(&st);
        }
        let bound = (1.0 - rate).powi(rounds as i32) * psi0 / trials as f64;
        out.push(Check::at_most(
            s,
            format!("psi decay {c}"),
            psi_t / trials as f64,
            bound,
        ));
        out.push(Check::at_most(
            s,
            format!("average drift {c}"),
            drift,
            1e-10,
        ));
    }
    Ok(out)
}

fn noisy_quadratic(n: usize, d: usize, h: f64, sigma: f64) -> Result<Quadratic> {
    Quadratic::new(
        n,
        QuadraticParams {
            d,
            heterogeneity: h,
            noise_std: sigma,
            mu: 0.1,
            l: 1.0,
        },
        SEED,
    )
}

fn opts(seed: u64) -> SimOptions {
    SimOptions {
        seed,
        ..SimOptions::default()
    }
}

fn bit_mismatches(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y))
        .filter(|(p, q)| p.to_bits() != q.to_bits())
        .count() as f64
}

fn equivalence_suite() -> Result<Vec<Check>> {
    let s = Suite::Equivalence;
    let mut out = Vec::new();
    let q = noisy_quadratic(8, 10, 1.0, 1.0)?;
    let m = MixingMatrix::from_graph(&Graph::ring(8)?)?;
    let steps = 100u64;

    // plain vs error-feedback form
    let cfg = |alg| OptimizerConfig::new(alg, 0.05, steps);
    let mut a = Simulation::new(&q, &m, Compressor::Sign, cfg(Algorithm::Choco), opts(SEED))?;
    let mut b = Simulation::new(
        &q,
        &m,
        Compressor::Sign,
        cfg(Algorithm::ChocoErrorfeedback),
        opts(SEED),
    )?;
    let (mut rel, mut mem) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        a.step()?;
        b.step()?;
        for (wa, wb) in a.workers().iter().zip(b.workers()) {
            rel = rel.max(dist_sq(&wa.x, &wb.x).sqrt() / norm(&wa.x).max(f64::MIN_POSITIVE));
            let gap: Vector = wb.x_prev.iter().zip(&wb.xhat).map(|(p, h)| p - h).collect();
            mem = mem.max(dist_sq(&gap, &wb.m).sqrt());
        }
    }
    out.push(Check::at_most(
        s,
        "choco vs error-feedback (rel)",
        rel,
        1e-9,
    ));
    out.push(Check::at_most(s, "error memory identity", mem, 1e-10));

    // lossless CHOCO with unit consensus step against X W − η∂F
    let eta = 0.05;
    let mut sim = Simulation::new(
        &q,
        &m,
        Compressor::Identity,
        OptimizerConfig {
            gamma: Some(1.0),
            ..cfg(Algorithm::Choco)
        },
        opts(SEED),
    )?;
    let mut x: Vec<Vector> = vec![q.initial_point(); 8];
    let mut mismatch = 0.0;
    for t in 0..steps {
        sim.step()?;
        let half: Vec<Vector> = x
            .iter()
            .enumerate()
            .map(|(i, xi)| {
                let mut rs = RandomStream::for_worker(SEED, i, Purpose::Gradient, t);
                let g = q.stochastic_gradient(i, xi, t, &mut rs);
                xi.iter().zip(&g).map(|(a, b)| a - eta * b).collect()
            })
            .collect();
        let published: Vec<Vector> = sim.workers().iter().map(|w| w.xhat.clone()).collect();
        mismatch += bit_mismatches(&published, &x);
        mismatch += bit_mismatches(&sim.iterates(), &half);
        x = half
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let mut acc = vec![0.0; h.len()];
                for &(j, w) in m.neighbors(i) {
                    for ((a, xj), xi) in acc.iter_mut().zip(&x[j]).zip(&x[i]) {
                        *a += w * (xj - xi);
                    }
                }
                h.iter().zip(acc).map(|(a, b)| a + b).collect()
            })
            .collect();
    }
    out.push(Check::at_most(
        s,
        "lossless choco vs exact gossip (bits)",
        mismatch,
        0.0,
    ));

    // momentum form with zero momentum and decay
    let mut plain = Simulation::new(&q, &m, Compressor::Sign, cfg(Algorithm::Choco), opts(SEED))?;
    let mut heavy = Simulation::new(
        &q,
        &m,
        Compressor::Sign,
        cfg(Algorithm::ChocoMomentum),
        opts(SEED),
    )?;
    plain.run()?;
    heavy.run()?;
    out.push(Check::at_most(
        s,
        "momentum(0,0) vs choco (bits)",
        bit_mismatches(&plain.iterates(), &heavy.iterates()),
        0.0,
    ));

    // one node is centralized SGD
    let q1 = noisy_quadratic(1, 10, 0.0, 1.0)?;
    let m1 = MixingMatrix::from_graph(&Graph::fully_connected(1)?)?;
    let mut c1 = Simulation::new(
        &q1,
        &m1,
        Compressor::Sign,
        cfg(Algorithm::Choco),
        opts(SEED),
    )?;
    let mut c2 = Simulation::new(
        &q1,
        &m1,
        Compressor::Sign,
        cfg(Algorithm::Centralized),
        opts(SEED),
    )?;
    c1.run()?;
    c2.run()?;
    out.push(Check::at_most(
        s,
        "single node vs centralized (bits)",
        bit_mismatches(&c1.iterates(), &c2.iterates()),
        0.0,
    ));
    Ok(out)
}

fn suboptimality(run: &RunRecord, f_star: f64) -> f64 {
    run.last().map_or(f64::INFINITY, |r| r.f_avg - f_star)
}

fn convergence_suite() -> Result<Vec<Check>> {
    let s = Suite::Convergence;
    let mut out = Vec::new();
    let q = noisy_quadratic(8, 10, 1.0, 1.0)?;
    let m = MixingMatrix::from_graph(&Graph::ring(8)?)?;
    let rounds = 2000;
    let probe = Simulation::new(
        &q,
        &m,
        Compressor::Sign,
        OptimizerConfig::new(Algorithm::Choco, 0.0, rounds),
        opts(SEED),
    )?;
    let c = probe.rate_constant();
    drop(probe);
    let k = estimate_constants(&q, 200, SEED)?;
    let f_star = q.optimal_value().unwrap_or(0.0);
    let f0 = q.loss(&q.initial_point()) - f_star;
    let eta = theory_stepsize(&k, f0, 8, c, rounds);

    let mut choco = Simulation::new(
        &q,
        &m,
        Compressor::Sign,
        OptimizerConfig::new(Algorithm::Choco, eta, rounds),
        opts(SEED),
    )?;
    choco.run()?;
    let mut central = Simulation::new(
        &q,
        &m,
        Compressor::Identity,
        OptimizerConfig::new(Algorithm::Centralized, eta, rounds),
        opts(SEED),
    )?;
    central.run()?;
    let base = suboptimality(central.record(), f_star);
    out.push(Check::at_most(
        s,
        "choco gap vs 10x centralized",
        suboptimality(choco.record(), f_star),
        10.0 * base,
    ));

    let bound = consensus_bound(eta, 8, choco.max_grad_norm(), c);
    let worst = choco
        .record()
        .rows
        .iter()
        .map(|r| r.consensus * 8.0)
        .fold(0.0, f64::max);
    out.push(Check::at_most(s, "consensus distance bound", worst, bound));

    for n in [4usize, 16] {
        let qn = noisy_quadratic(n, 10, 1.0, 1.0)?;
        let v = averaged_noise_second_moment(&qn, qn.optimum(), 10_000, SEED) * n as f64;
        out.push(Check::within(
            s,
            format!("n-averaged noise x n (n={n})"),
            v,
            0.9,
            1.1,
        ));
    }
    Ok(out)
}

fn traffic_suite() -> Result<Vec<Check>> {
    let s = Suite::Traffic;
    let mut out = Vec::new();
    let d = 260_000;
    let mb = |c: &Compressor| c.bit_cost(d) as f64 / 8e6;
    for (bits, expected) in [(16, 0.52), (8, 0.26), (4, 0.13), (2, 0.065)] {
        let c = Compressor::gsgd(bits)?;
        out.push(Check::within(
            s,
            format!("message MB {c}"),
            mb(&c),
            expected * 0.99,
            expected * 1.01,
        ));
    }
    out.push(Check::within(
        s,
        "message MB sign",
        mb(&Compressor::Sign),
        0.032 * 0.98,
        0.032 * 1.02,
    ));
    out.push(Check::within(
        s,
        "message MB identity",
        mb(&Compressor::Identity),
        1.04 * 0.99,
        1.04 * 1.01,
    ));

    let q = noisy_quadratic(8, 10, 1.0, 1.0)?;
    let g = Graph::ring(8)?;
    let m = MixingMatrix::from_graph(&g)?;
    let rounds = 20u64;
    for (policy, per_round) in [
        (MessagePolicy::Pairwise, 2 * Compressor::Sign.bit_cost(10)),
        (MessagePolicy::Broadcast, Compressor::Sign.bit_cost(10)),
    ] {
        let mut sim = Simulation::new(
            &q,
            &m,
            Compressor::Sign,
            OptimizerConfig::new(Algorithm::Choco, 0.05, rounds),
            SimOptions {
                policy,
                ..opts(SEED)
            },
        )?;
        sim.run()?;
        let off = sim
            .ledger()
            .per_node()
            .iter()
            .map(|&b| (b as f64 - (per_round * rounds) as f64).abs())
            .fold(0.0, f64::max);
        out.push(Check::at_most(
            s,
            format!("ledger vs analytic {policy:?}"),
            off,
            0.0,
        ));
        let worst = sim
            .record()
            .rows
            .iter()
            .map(|r| r.consensus - r.psi)
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(Check::at_most(
            s,
            format!("consensus <= psi {policy:?}"),
            worst,
            0.0,
        ));
    }

    let mut central = Simulation::new(
        &q,
        &m,
        Compressor::Identity,
        OptimizerConfig::new(Algorithm::Centralized, 0.05, 1),
        opts(SEED),
    )?;
    central.run()?;
    out.push(Check::within(
        s,
        "coordinator bits per round",
        central.ledger().busiest() as f64,
        (8 * 32 * 10) as f64,
        (8 * 32 * 10) as f64,
    ));
    let x = central.iterates();
    let copies = vec![x[0].clone(); x.len()];
    out.push(Check::at_most(
        s,
        "centralized replicas differ (bits)",
        bit_mismatches(&x, &copies),
        0.0,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins() {
        let c = Check::within(Suite::Traffic, "x", 1.0, 0.5, 1.2);
        assert!((c.margin() - 0.2).abs() < 1e-12);
        assert!(c.passed());
        assert!(!Check::at_most(Suite::Traffic, "y", 2.0, 1.0).passed());
        assert!(!Check::at_most(Suite::Traffic, "z", f64::NAN, 1.0).passed());
    }

    #[test]
    fn suite_names() {
        for s in [
            "compression",
            "consensus",
            "equivalence",
            "convergence",
            "traffic",
            "all",
        ] {
            assert_eq!(s.parse::<Suite>().unwrap().to_string(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn equivalence_passes() {
        for c in run_suite(Suite::Equivalence).unwrap() {
            assert!(c.passed(), "{c}");
        }
    }

    #[test]
    fn traffic_passes() {
        for c in run_suite(Suite::Traffic).unwrap() {
            assert!(c.passed(), "{c}");
        }
    }
}
