//! Acceptance criteria. Each test prints one PASS/FAIL line; run with
//! `cargo test -p choco-cli --test acceptance -- --nocapture --test-threads 1`
//! to see them in order.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use choco_core::compression::Compressor;
use choco_core::consensus::{choco_gossip_round, ConsensusState};
use choco_core::experiment::ExperimentConfig;
use choco_core::numerics::{Purpose, RandomStream, Vector};
use choco_core::optim::{theory_stepsize, Algorithm, OptimizerConfig, SimOptions, Simulation};
use choco_core::problems::{estimate_constants, Objective, Quadratic, QuadraticParams};
use choco_core::topology::{Graph, MixingMatrix, TopologySpec};

fn report(n: u32, title: &str, pass: bool, detail: &str, started: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n:>2} {verdict} {title}: {detail} ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn diff_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_rows(x: &[Vector]) -> Vector {
    let mut m = vec![0.0; x[0].len()];
    for r in x {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter().map(|v| v / x.len() as f64).collect()
}

fn psi(x: &[Vector], xhat: &[Vector]) -> f64 {
    let avg = mean_rows(x);
    x.iter().map(|r| diff_sq(r, &avg)).sum::<f64>()
        + x.iter().zip(xhat).map(|(a, b)| diff_sq(a, b)).sum::<f64>()
}

fn quadratic(n: usize, d: usize, h: f64, sigma: f64, seed: u64) -> Quadratic {
    Quadratic::new(
        n,
        QuadraticParams {
            d,
            heterogeneity: h,
            noise_std: sigma,
            mu: 0.1,
            l: 1.0,
        },
        seed,
    )
    .unwrap()
}

/// Ring eigenvalues `1/3 + (2/3) cos(2πk/n)` under degree-based weights.
fn ring_rho_beta(n: usize) -> (f64, f64) {
    let eig: Vec<f64> = (0..n)
        .map(|k| 1.0 / 3.0 + 2.0 / 3.0 * (2.0 * PI * k as f64 / n as f64).cos())
        .collect();
    let second = eig[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    (1.0 - second, 1.0 - min)
}

fn gamma_formula(rho: f64, beta: f64, delta: f64) -> f64 {
    rho * rho * delta
        / (16.0 * rho + rho * rho + 4.0 * beta * beta + 2.0 * rho * beta * beta - 8.0 * rho * delta)
}

/// Closed-form contraction factors for `d = 100`.
fn criterion_compressors() -> Vec<(Compressor, f64)> {
    let d = 100.0f64;
    let b = 4.0f64;
    let tau = 1.0 + (d / 4f64.powf(b - 1.0)).min(d.sqrt() / 2f64.powf(b - 1.0));
    vec![
        (Compressor::gsgd(4).unwrap(), 1.0 / tau),
        (Compressor::random(0.1).unwrap(), 10.0 / d),
        (Compressor::topk(0.1).unwrap(), 10.0 / d),
        (Compressor::Sign, 1.0 / d),
    ]
}

#[test]
fn criterion_01_spectral_gaps() {
    let started = Instant::now();
    let table: [(&str, [f64; 4]); 3] = [
        ("ring", [0.67, 0.05, 0.01, 0.003]),
        ("torus", [0.67, 0.4, 0.2, 0.12]),
        ("full", [1.0, 1.0, 1.0, 1.0]),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (kind, gaps) in table {
        for (n, expected) in [4usize, 16, 36, 64].into_iter().zip(gaps) {
            let spec: TopologySpec = format!("{kind}:{n}").parse().unwrap();
            if kind == "torus" && n == 4 {
                assert!(spec.build().is_err());
                continue;
            }
            let rho = MixingMatrix::from_graph(&spec.build().unwrap())
                .unwrap()
                .spectral_gap();
            worst = worst.max((rho - expected).abs());
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        "spectral gaps",
        worst <= 0.005 && secs < 1.0,
        &format!("{checked} topologies, max |rho - table| = {worst:.5} <= 0.005, {secs:.3}s < 1s"),
        started,
    );
}

#[test]
fn criterion_02_compression_contraction() {
    let started = Instant::now();
    let (d, trials) = (100usize, 1000u64);
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, delta) in criterion_compressors() {
        assert!((c.contraction_factor(d) - delta).abs() < 1e-15);
        let ratios: Vec<f64> = (0..trials)
            .map(|k| {
                let x = RandomStream::for_worker(1, 0, Purpose::Test, k).gaussian(d, 1.0);
                let mut s = RandomStream::for_worker(1, 0, Purpose::Compression, k);
                let q = c.compress(&x, &mut s).payload;
                diff_sq(&q, &x) / sq(&x)
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / trials as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let bound = 1.0 - delta + 3.0 * (var / trials as f64).sqrt();
        pass &= mean <= bound;
        parts.push(format!("{c} {mean:.4}<={bound:.4}"));
    }
    for c in ["gsgd:4:unbiased", "random:0.1:unbiased"] {
        let c: Compressor = c.parse().unwrap();
        let mut sum = vec![0.0; d];
        let mut sum2 = vec![0.0; d];
        for k in 0..trials {
            let x = RandomStream::for_worker(1, 0, Purpose::Test, k).gaussian(d, 1.0);
            let mut s = RandomStream::for_worker(1, 1, Purpose::Compression, k);
            let q = c.compress(&x, &mut s).payload;
            for j in 0..d {
                let e = q[j] - x[j];
                sum[j] += e;
                sum2[j] += e * e;
            }
        }
        let t = trials as f64;
        let z: Vec<f64> = (0..d)
            .map(|j| {
                let m = sum[j] / t;
                let var = (sum2[j] - t * m * m) / (t - 1.0);
                m.abs() / (var / t).sqrt()
            })
            .collect();
        let max_z = z.iter().cloned().fold(0.0, f64::max);
        let beyond = z.iter().filter(|&&v| v >= 3.0).count();
        pass &= max_z < 3.0;
        parts.push(format!(
            "{c} max|z|={max_z:.3}<3 ({beyond}/{d} coordinates at or beyond 3 SE)"
        ));
    }
    report(
        2,
        "compression contraction",
        pass,
        &parts.join(", "),
        started,
    );
}

#[test]
fn criterion_03_bit_accounting() {
    let started = Instant::now();
    let d = 260_000;
    let mb = |c: Compressor| c.bit_cost(d) as f64 / 8e6;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut check = |name: String, got: f64, want: f64, tol: f64| {
        let ok = (got - want).abs() <= tol * want;
        pass &= ok;
        parts.push(format!("{name} {got:.4}MB~{want}"));
    };
    for (b, want) in [(16, 0.52), (8, 0.26), (4, 0.13), (2, 0.065)] {
        check(
            format!("gsgd:{b}"),
            mb(Compressor::gsgd(b).unwrap()),
            want,
            0.01,
        );
    }
    check("sign".into(), mb(Compressor::Sign), 0.032, 0.02);
    check("identity".into(), mb(Compressor::Identity), 1.04, 0.01);
    report(3, "bit accounting", pass, &parts.join(", "), started);
}

#[test]
fn criterion_04_gossip_linear_convergence() {
    let started = Instant::now();
    let (n, d, rounds, seeds) = (8usize, 100usize, 500u64, 20u64);
    let m = MixingMatrix::from_graph(&Graph::ring(n).unwrap()).unwrap();
    let (rho, beta) = ring_rho_beta(n);
    assert!((m.spectral_gap() - rho).abs() < 1e-12);
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, delta) in criterion_compressors() {
        let gamma = gamma_formula(rho, beta, delta);
        let (mut psi0, mut psi_t, mut drift) = (0.0, 0.0, 0.0f64);
        for seed in 0..seeds {
            let x: Vec<Vector> = (0..n)
                .map(|i| RandomStream::for_worker(seed, i, Purpose::Init, 0).gaussian(d, 1.0))
                .collect();
            let mut s = ConsensusState::new(x, gamma).unwrap();
            assert!((s.gamma - gamma).abs() <= 1e-15);
            let avg0 = mean_rows(&s.x);
            psi0 += psi(&s.x, &s.xhat);
            for t in 0..rounds {
                choco_gossip_round(&mut s, &m, &c, seed, t);
                drift = drift.max((diff_sq(&mean_rows(&s.x), &avg0) / sq(&avg0)).sqrt());
            }
            psi_t += psi(&s.x, &s.xhat);
        }
        let (psi0, psi_t) = (psi0 / seeds as f64, psi_t / seeds as f64);
        let bound = (1.0 - rho * rho * delta / 82.0).powi(rounds as i32) * psi0;
        pass &= psi_t <= bound && drift < 1e-10;
        parts.push(format!(
            "{c} psi {psi_t:.3e}<={bound:.3e} drift {drift:.1e}"
        ));
    }
    report(
        4,
        "gossip linear convergence",
        pass,
        &parts.join(", "),
        started,
    );
}

#[test]
fn criterion_05_equivalence_triangle() {
    let started = Instant::now();
    let (n, steps, eta, seed) = (8usize, 100u64, 0.05, 5u64);
    let q = quadratic(n, 20, 1.0, 1.0, 3);
    let m = MixingMatrix::from_graph(&Graph::ring(n).unwrap()).unwrap();
    let opts = SimOptions {
        seed,
        ..SimOptions::default()
    };
    let sim = |alg, c, gamma| {
        Simulation::new(
            &q,
            &m,
            c,
            OptimizerConfig {
                gamma,
                ..OptimizerConfig::new(alg, eta, steps)
            },
            opts,
        )
        .unwrap()
    };

    // (a) plain vs error-feedback form with shared streams
    let mut a1 = sim(Algorithm::Choco, Compressor::Sign, None);
    let mut a5 = sim(Algorithm::ChocoErrorfeedback, Compressor::Sign, None);
    let (mut rel, mut mem) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        a1.step().unwrap();
        a5.step().unwrap();
        for (w1, w5) in a1.workers().iter().zip(a5.workers()) {
            rel = rel.max((diff_sq(&w1.x, &w5.x) / sq(&w1.x)).sqrt());
            rel = rel.max((diff_sq(&w1.xhat, &w5.xhat) / sq(&w1.xhat)).sqrt());
            let identity: Vector = w5.x_prev.iter().zip(&w5.xhat).map(|(p, h)| p - h).collect();
            mem = mem.max(diff_sq(&identity, &w5.m).sqrt());
        }
    }
    let pass_a = rel <= 1e-9 && mem <= 1e-10;

    // (b) lossless, unit consensus step against X(t+1) = X(t) W - eta dF(X(t))
    let mut b1 = sim(Algorithm::Choco, Compressor::Identity, Some(1.0));
    let mut x: Vec<Vector> = vec![q.initial_point(); n];
    let mut mismatched = 0usize;
    let mut direct_gap = 0.0f64;
    for t in 0..steps {
        b1.step().unwrap();
        if t >= 1 {
            for (w, r) in b1.workers().iter().zip(&x) {
                mismatched += w
                    .xhat
                    .iter()
                    .zip(r)
                    .filter(|(a, b)| a.to_bits() != b.to_bits())
                    .count();
            }
        }
        let grads: Vec<Vector> = (0..n)
            .map(|i| {
                let mut s = RandomStream::for_worker(seed, i, Purpose::Gradient, t);
                q.stochastic_gradient(i, &x[i], t, &mut s)
            })
            .collect();
        let next: Vec<Vector> = (0..n)
            .map(|i| {
                // X W written as x_i + sum_j w_ij (x_j - x_i), neighbours ascending
                let mut lap = vec![0.0; x[i].len()];
                for &(j, w) in m.neighbors(i) {
                    for k in 0..lap.len() {
                        lap[k] += w * (x[j][k] - x[i][k]);
                    }
                }
                (0..lap.len())
                    .map(|k| (x[i][k] - eta * grads[i][k]) + lap[k])
                    .collect()
            })
            .collect();
        for (i, row) in next.iter().enumerate() {
            let direct: Vec<f64> = (0..row.len())
                .map(|k| (0..n).map(|j| m.weight(i, j) * x[j][k]).sum::<f64>() - eta * grads[i][k])
                .collect();
            direct_gap = direct_gap.max((diff_sq(row, &direct) / sq(&direct)).sqrt());
        }
        x = next;
    }
    let pass_b = mismatched == 0 && direct_gap < 1e-13;

    // (c) momentum form with zero momentum and zero weight decay
    let mut c1 = sim(Algorithm::Choco, Compressor::Sign, None);
    let mut c2 = sim(Algorithm::ChocoMomentum, Compressor::Sign, None);
    let mut differing = 0usize;
    for _ in 0..steps {
        c1.step().unwrap();
        c2.step().unwrap();
        for (u, v) in c1.workers().iter().zip(c2.workers()) {
            differing +=
                u.x.iter()
                    .zip(&v.x)
                    .filter(|(a, b)| a.to_bits() != b.to_bits())
                    .count();
            differing += u
                .xhat
                .iter()
                .zip(&v.xhat)
                .filter(|(a, b)| a.to_bits() != b.to_bits())
                .count();
        }
    }
    let pass_c = differing == 0;

    report(
        5,
        "equivalence triangle",
        pass_a && pass_b && pass_c,
        &format!(
            "(a) rel {rel:.2e}<=1e-9, memory {mem:.2e}<=1e-10; (b) {mismatched} differing bits \
             (direct W product within {direct_gap:.1e}); (c) {differing} differing bits"
        ),
        started,
    );
}

#[test]
fn criterion_06_consensus_distance_bound() {
    let started = Instant::now();
    let (n, d, rounds, seeds, eta) = (8usize, 100usize, 500u64, 20u64, 0.01);
    let q = quadratic(n, d, 1.0, 1.0, 7);
    let m = MixingMatrix::from_graph(&Graph::ring(n).unwrap()).unwrap();
    let (rho, _) = ring_rho_beta(n);
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, delta) in criterion_compressors() {
        let rate = rho * rho * delta / 82.0;
        let mut worst_ratio = 0.0f64;
        for seed in 0..seeds {
            let mut sim = Simulation::new(
                &q,
                &m,
                c,
                OptimizerConfig::new(Algorithm::Choco, eta, rounds),
                SimOptions {
                    seed,
                    ..SimOptions::default()
                },
            )
            .unwrap();
            sim.run().unwrap();
            let g = sim.max_grad_norm();
            let bound = eta * eta * 12.0 * n as f64 * g * g / (rate * rate);
            for row in &sim.record().rows {
                worst_ratio = worst_ratio.max(n as f64 * row.consensus / bound);
            }
        }
        pass &= worst_ratio <= 1.0;
        parts.push(format!("{c} max lhs/rhs {worst_ratio:.2e}"));
    }
    report(
        6,
        "consensus distance bound",
        pass,
        &parts.join(", "),
        started,
    );
}

#[test]
fn criterion_07_averaged_noise_variance() {
    let started = Instant::now();
    let samples = 10_000u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [4usize, 16] {
        let q = quadratic(n, 10, 1.0, 1.0, 11);
        let x = q.optimum().to_vec();
        let exact: Vec<Vector> = (0..n).map(|i| q.local_gradient(i, &x)).collect();
        let mut total = 0.0;
        for s in 0..samples {
            let mut avg = vec![0.0; x.len()];
            for (i, e) in exact.iter().enumerate() {
                let mut rs = RandomStream::for_worker(13, i, Purpose::Gradient, s);
                let g = q.stochastic_gradient(i, &x, s, &mut rs);
                for (a, (gk, ek)) in avg.iter_mut().zip(g.iter().zip(e)) {
                    *a += (gk - ek) / n as f64;
                }
            }
            total += sq(&avg);
        }
        let ratio = total / samples as f64 * n as f64;
        pass &= (0.9..=1.1).contains(&ratio);
        parts.push(format!("n={n} variance x n = {ratio:.4}"));
    }
    report(
        7,
        "averaged noise variance",
        pass,
        &parts.join(", "),
        started,
    );
}

#[test]
fn criterion_08_end_to_end_convergence() {
    let started = Instant::now();
    let (n, rounds) = (8usize, 5000u64);
    let q = quadratic(n, 20, 1.0, 1.0, 17);
    let m = MixingMatrix::from_graph(&Graph::ring(n).unwrap()).unwrap();
    let (rho, _) = ring_rho_beta(n);
    let c = rho * rho * Compressor::Sign.contraction_factor(20) / 82.0;
    let k = estimate_constants(&q, 200, 17).unwrap();
    let f_star = q.optimal_value().unwrap();
    let f0 = q.loss(&q.initial_point()) - f_star;
    let eta = theory_stepsize(&k, f0, n, c, rounds);

    let run = |alg, comp| {
        let mut sim = Simulation::new(
            &q,
            &m,
            comp,
            OptimizerConfig::new(alg, eta, rounds),
            SimOptions {
                seed: 17,
                ..SimOptions::default()
            },
        )
        .unwrap();
        sim.run().unwrap();
        sim.into_record()
    };
    // centralized oracle first
    let central = run(Algorithm::Centralized, Compressor::Identity);
    let threshold = 10.0 * (central.last().unwrap().f_avg - f_star);
    let choco = run(Algorithm::Choco, Compressor::Sign);
    let gap = choco.last().unwrap().f_avg - f_star;

    let mut running = Vec::with_capacity(choco.rows.len());
    let mut acc = 0.0;
    for (i, r) in choco.rows.iter().enumerate() {
        acc += r.grad_sq;
        running.push(acc / (i + 1) as f64);
    }
    let skip = running.len() / 10;
    let increases = running[skip..].windows(2).filter(|w| w[1] > w[0]).count();
    report(
        8,
        "end-to-end convergence",
        gap < threshold && increases == 0,
        &format!(
            "eta {eta:.3e}, f-f* {gap:.4e} < {threshold:.4e} (10x centralized), \
             running-mean increases after 10%: {increases}"
        ),
        started,
    );
}

#[test]
fn criterion_09_variance_reduction_trend() {
    let started = Instant::now();
    let (rounds, eta, seeds) = (2000u64, 0.05, 10u64);
    let time_avg = |n: usize| {
        let q = quadratic(n, 10, 0.0, 10.0, 19);
        let m = MixingMatrix::from_graph(&Graph::ring(n).unwrap()).unwrap();
        let mut total = 0.0;
        for seed in 0..seeds {
            let mut sim = Simulation::new(
                &q,
                &m,
                Compressor::Sign,
                OptimizerConfig::new(Algorithm::Choco, eta, rounds),
                SimOptions {
                    seed,
                    ..SimOptions::default()
                },
            )
            .unwrap();
            sim.run().unwrap();
            let rows = &sim.record().rows;
            total += rows.iter().map(|r| r.grad_sq).sum::<f64>() / rows.len() as f64;
        }
        total / seeds as f64
    };
    let (g4, g16) = (time_avg(4), time_avg(16));
    let ratio = g16 / g4;
    report(
        9,
        "variance-reduction trend",
        ratio <= 0.5,
        &format!("mean |grad f|^2 n=4 {g4:.4e}, n=16 {g16:.4e}, ratio {ratio:.3} <= 0.5"),
        started,
    );
}

const RUN_CONFIG: &str = r#"{
  "topology": "ring:4",
  "compressor": "sign",
  "algorithm": "choco",
  "eta": 0.05,
  "problem": {"quadratic": {"d": 10, "heterogeneity": 1.0, "noise_std": 1.0}},
  "seeds": [3],
  "rounds": 1000
}"#;

fn choco(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_choco"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

#[test]
fn criterion_10_determinism_and_interfaces() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, RUN_CONFIG).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let r1 = choco(&["run", "--config", cfg, "--out", "a"], dir.path());
    let r2 = choco(&["run", "--config", cfg, "--out", "b"], dir.path());
    let csv_a = std::fs::read(dir.path().join("a/seed-3.csv")).unwrap();
    let csv_b = std::fs::read(dir.path().join("b/seed-3.csv")).unwrap();
    let rows = String::from_utf8_lossy(&csv_a).lines().count() - 1;
    let identical = r1.status.code() == Some(0) && r2.status.code() == Some(0) && csv_a == csv_b;

    let parsed = ExperimentConfig::from_json(RUN_CONFIG).unwrap();
    let echoed = ExperimentConfig::from_json(&parsed.to_json()).unwrap();
    let round_trip = parsed == echoed && parsed.to_json() == echoed.to_json();

    let verify = choco(&["verify", "all"], dir.path());
    let verify_ok = verify.status.code() == Some(0);
    report(
        10,
        "determinism and interfaces",
        identical && rows == 1000 && round_trip && verify_ok,
        &format!(
            "byte-identical CSV {identical} ({rows} rows), config round-trip {round_trip}, \
             verify all exit {:?}",
            verify.status.code()
        ),
        started,
    );
}
