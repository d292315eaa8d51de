//! Synthetic distributed objectives `f = (1/n) Σ f_i` with stochastic
//! gradient oracles: noisy quadratics, logistic regression and a small
//! tanh network.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    axpy, dist_sq, dot, mean_vector, norm, norm_sq, sym_eigenvalues, Purpose, RandomStream,
    SquareMatrix, Vector,
};

/// A distributed objective with per-node stochastic first-order oracles.
pub trait Objective: Send + Sync + fmt::Debug {
    fn nodes(&self) -> usize;

    fn dim(&self) -> usize;

    /// Global objective `f(x) = (1/n) Σ f_i(x)`.
    fn loss(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vector;

    fn local_loss(&self, node: usize, x: &[f64]) -> f64;

    fn local_gradient(&self, node: usize, x: &[f64]) -> Vector;

    /// `∇F_i(x, ξ)` with `ξ` drawn from `stream`; `round` selects the data
    /// epoch for reshuffled partitions.
    fn stochastic_gradient(
        &self,
        node: usize,
        x: &[f64],
        round: u64,
        stream: &mut RandomStream,
    ) -> Vector;

    /// Smoothness constant (exact or estimated, see the implementor).
    fn smoothness(&self) -> f64;

    /// `f*` when known in closed form.
    fn optimal_value(&self) -> Option<f64> {
        None
    }

    fn initial_point(&self) -> Vector {
        vec![0.0; self.dim()]
    }

    /// Contiguous parameter blocks compressed separately in per-layer mode.
    fn layer_segments(&self) -> Vec<Range<usize>> {
        std::iter::once(0..self.dim()).collect()
    }
}

/// Noisy quadratic `f_i(x) = ½‖A x − b_i‖²` with a shared `A`.
///
/// `AᵀA` has eigenvalues evenly spread over `[mu, l]`; the offsets
/// `b_i = b_0 + h·z_i` make local optima differ. Stochastic gradients add
/// `N(0, σ²/d)` per coordinate, so `E‖g − ∇f_i‖² = σ²`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    n: usize,
    hessian: SquareMatrix,
    linear: Vec<Vector>,
    constant: Vec<f64>,
    noise_std: f64,
    l: f64,
    mu: f64,
    optimum: Vector,
    optimal_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub d: usize,
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_l")]
    pub l: f64,
}

fn default_mu() -> f64 {
    0.1
}

fn default_l() -> f64 {
    1.0
}

impl Quadratic {
    pub fn new(n: usize, p: QuadraticParams, seed: u64) -> Result<Self> {
        let QuadraticParams {
            d,
            heterogeneity,
            noise_std,
            mu,
            l,
        } = p;
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("quadratic needs n, d >= 1".into()));
        }
        if heterogeneity < 0.0 || noise_std < 0.0 || !(mu > 0.0 && mu <= l) {
            return Err(Error::InvalidArgument(format!(
                "quadratic needs h >= 0, sigma >= 0, 0 < mu <= L (got {p:?})"
            )));
        }
        let mut rng = RandomStream::for_worker(seed, 0, Purpose::Problem, 0);
        let rotation = random_orthogonal(d, &mut rng);
        let spectrum: Vec<f64> = if d == 1 {
            vec![l]
        } else {
            (0..d)
                .map(|k| mu + (l - mu) * k as f64 / (d - 1) as f64)
                .collect()
        };
        // A = diag(√s) R
        let mut a = SquareMatrix::zeros(d);
        for r in 0..d {
            let sr = spectrum[r].sqrt();
            for c in 0..d {
                a[(r, c)] = sr * rotation[(r, c)];
            }
        }
        let hessian = a.transpose().mul(&a);
        let base = rng.gaussian(d, 1.0);
        let offsets: Vec<Vector> = (0..n)
            .map(|i| {
                let mut s = RandomStream::for_worker(seed, i, Purpose::Problem, 1);
                let z = s.gaussian(d, 1.0);
                base.iter()
                    .zip(z)
                    .map(|(b, zi)| b + heterogeneity * zi)
                    .collect()
            })
            .collect();
        let at = a.transpose();
        let linear: Vec<Vector> = offsets.iter().map(|b| at.mul_vec(b)).collect();
        let constant: Vec<f64> = offsets.iter().map(|b| 0.5 * norm_sq(b)).collect();

        // x* = (AᵀA)⁻¹ Aᵀ b̄ = Rᵀ diag(1/√s) b̄
        let bbar = mean_vector(&offsets);
        let scaled: Vector = bbar
            .iter()
            .zip(&spectrum)
            .map(|(b, s)| b / s.sqrt())
            .collect();
        let optimum = rotation.transpose().mul_vec(&scaled);

        let mut q = Self {
            n,
            hessian,
            linear,
            constant,
            noise_std,
            l,
            mu,
            optimum,
            optimal_value: 0.0,
        };
        q.optimal_value = q.loss(&q.optimum.clone());
        Ok(q)
    }

    pub fn hessian(&self) -> &SquareMatrix {
        &self.hessian
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn strong_convexity(&self) -> f64 {
        self.mu
    }

    /// `Aᵀb_i`
    pub fn linear_term(&self, node: usize) -> &[f64] {
        &self.linear[node]
    }
}

impl Objective for Quadratic {
    fn nodes(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.hessian.dim()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        (0..self.n).map(|i| self.local_loss(i, x)).sum::<f64>() / self.n as f64
    }

    fn gradient(&self, x: &[f64]) -> Vector {
        let mut g = self.hessian.mul_vec(x);
        let cbar = mean_vector(&self.linear);
        axpy(-1.0, &cbar, &mut g);
        g
    }

    fn local_loss(&self, node: usize, x: &[f64]) -> f64 {
        let hx = self.hessian.mul_vec(x);
        0.5 * dot(x, &hx) - dot(&self.linear[node], x) + self.constant[node]
    }

    fn local_gradient(&self, node: usize, x: &[f64]) -> Vector {
        let mut g = self.hessian.mul_vec(x);
        axpy(-1.0, &self.linear[node], &mut g);
        g
    }

    fn stochastic_gradient(
        &self,
        node: usize,
        x: &[f64],
        _round: u64,
        stream: &mut RandomStream,
    ) -> Vector {
        let mut g = self.local_gradient(node, x);
        if self.noise_std > 0.0 {
            let per_coord = self.noise_std / (g.len() as f64).sqrt();
            for gi in g.iter_mut() {
                *gi += per_coord * stream.standard_normal();
            }
        }
        g
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn optimal_value(&self) -> Option<f64> {
        Some(self.optimal_value)
    }
}

/// Haar-ish random orthogonal matrix from Gram-Schmidt on Gaussian rows.
fn random_orthogonal(d: usize, rng: &mut RandomStream) -> SquareMatrix {
    let mut rows: Vec<Vector> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v = rng.gaussian(d, 1.0);
        for _ in 0..2 {
            for r in &rows {
                let p = dot(&v, r);
                axpy(-p, r, &mut v);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            rows.push(v);
        }
    }
    SquareMatrix::from_rows(&rows).expect("finite orthogonal rows")
}

/// Labelled samples; labels are ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vector>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Two Gaussian clusters at `±m` (random direction, `‖m‖ = separation`),
    /// unit covariance, alternating labels.
    pub fn gaussian_mixture(samples: usize, d: usize, separation: f64, seed: u64) -> Self {
        let mut rng = RandomStream::for_worker(seed, 0, Purpose::Problem, 2);
        let mut dir = rng.gaussian(d, 1.0);
        let nd = norm(&dir).max(1e-12);
        dir.iter_mut().for_each(|x| *x *= separation / nd);
        let mut features = Vec::with_capacity(samples);
        let mut labels = Vec::with_capacity(samples);
        for k in 0..samples {
            let y = if k % 2 == 0 { 1.0 } else { -1.0 };
            let mut a = rng.gaussian(d, 1.0);
            axpy(y, &dir, &mut a);
            features.push(a);
            labels.push(y);
        }
        Self { features, labels }
    }

    /// Gaussian features, label `sgn(a_0 · a_1)`: not linearly separable.
    pub fn xor(samples: usize, d: usize, seed: u64) -> Self {
        let mut rng = RandomStream::for_worker(seed, 0, Purpose::Problem, 3);
        let mut features = Vec::with_capacity(samples);
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let a = rng.gaussian(d.max(2), 1.0);
            labels.push(if a[0] * a[1] >= 0.0 { 1.0 } else { -1.0 });
            features.push(a[..d.max(2)].to_vec());
        }
        Self { features, labels }
    }

    /// CSV rows of features with the label in the last column. Labels
    /// `0`/`-1` map to −1, anything positive to +1. A non-numeric first row is
    /// treated as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .from_path(path)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(|f| f.trim().parse::<f64>()).collect();
            let row = match parsed {
                Ok(r) => r,
                Err(_) if idx == 0 => continue,
                Err(e) => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: e.to_string(),
                    })
                }
            };
            if row.len() < 2 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "need at least one feature and a label".into(),
                });
            }
            let (y, a) = row.split_last().expect("len >= 2");
            labels.push(if *y > 0.0 { 1.0 } else { -1.0 });
            features.push(a.to_vec());
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        Ok(Self { features, labels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// Fresh random split of all samples at every epoch.
    IidReshuffled,
    /// Permanent split, grouped by label; never reshuffled.
    FixedSplit,
}

/// Assignment of sample indices to nodes.
#[derive(Debug, Clone)]
pub struct Partition {
    mode: PartitionMode,
    n: usize,
    samples: usize,
    seed: u64,
    fixed: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(mode: PartitionMode, data: &Dataset, n: usize, seed: u64) -> Result<Self> {
        if data.len() < n {
            return Err(Error::InvalidArgument(format!(
                "{} samples cannot cover {n} nodes",
                data.len()
            )));
        }
        let fixed = match mode {
            PartitionMode::FixedSplit => {
                let mut order: Vec<usize> = (0..data.len()).collect();
                // stable: all −1 samples first
                order.sort_by(|&a, &b| data.labels[a].total_cmp(&data.labels[b]));
                chunk(&order, n)
            }
            PartitionMode::IidReshuffled => shuffled_chunks(data.len(), n, seed, 0),
        };
        Ok(Self {
            mode,
            n,
            samples: data.len(),
            seed,
            fixed,
        })
    }

    pub fn mode(&self) -> PartitionMode {
        self.mode
    }

    /// Share of `node` during `epoch`.
    pub fn share(&self, node: usize, epoch: u64) -> std::borrow::Cow<'_, [usize]> {
        match self.mode {
            PartitionMode::FixedSplit => std::borrow::Cow::Borrowed(&self.fixed[node]),
            PartitionMode::IidReshuffled if epoch == 0 => {
                std::borrow::Cow::Borrowed(&self.fixed[node])
            }
            PartitionMode::IidReshuffled => std::borrow::Cow::Owned(
                shuffled_chunks(self.samples, self.n, self.seed, epoch).swap_remove(node),
            ),
        }
    }

    /// Shares of every node at `epoch`.
    pub fn assignment(&self, epoch: u64) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|i| self.share(i, epoch).into_owned())
            .collect()
    }
}

fn chunk(order: &[usize], n: usize) -> Vec<Vec<usize>> {
    let len = order.len();
    (0..n)
        .map(|i| order[i * len / n..(i + 1) * len / n].to_vec())
        .collect()
}

fn shuffled_chunks(samples: usize, n: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..samples).collect();
    RandomStream::for_worker(seed, 0, Purpose::Partition, epoch).shuffle(&mut order);
    chunk(&order, n)
}

/// Per-sample loss with gradient accumulation.
pub trait SampleModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Returns `ℓ(θ; a, y)` and, when `grad` is given, adds `scale · ∇ℓ` to it.
    fn sample_loss(&self, theta: &[f64], a: &[f64], y: f64, grad: Option<(&mut [f64], f64)>)
        -> f64;

    fn segments(&self) -> Vec<Range<usize>> {
        std::iter::once(0..self.dim()).collect()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ℓ = log(1 + exp(−y θᵀa))`
#[derive(Debug, Clone, Copy)]
pub struct Logistic {
    d: usize,
}

impl SampleModel for Logistic {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample_loss(
        &self,
        theta: &[f64],
        a: &[f64],
        y: f64,
        grad: Option<(&mut [f64], f64)>,
    ) -> f64 {
        let margin = y * dot(theta, a);
        if let Some((g, scale)) = grad {
            axpy(-scale * y * sigmoid(-margin), a, g);
        }
        softplus(-margin)
    }
}

/// One hidden tanh layer, scalar logit output, logistic loss.
/// Parameter layout: `W1 (h×d)`, `b1 (h)`, `w2 (h)`, `b2 (1)`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
}

impl Mlp {
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        (w1, b1, w2, b2)
    }
}

impl SampleModel for Mlp {
    fn dim(&self) -> usize {
        self.hidden * self.inputs + 2 * self.hidden + 1
    }

    fn sample_loss(
        &self,
        theta: &[f64],
        a: &[f64],
        y: f64,
        grad: Option<(&mut [f64], f64)>,
    ) -> f64 {
        let (w1, b1, w2, b2) = self.offsets();
        let (h, d) = (self.hidden, self.inputs);
        let act: Vec<f64> = (0..h)
            .map(|k| (dot(&theta[w1 + k * d..w1 + (k + 1) * d], a) + theta[b1 + k]).tanh())
            .collect();
        let out = dot(&theta[w2..w2 + h], &act) + theta[b2];
        let margin = y * out;
        if let Some((g, scale)) = grad {
            let dout = -scale * y * sigmoid(-margin);
            for k in 0..h {
                g[w2 + k] += dout * act[k];
                let dz = dout * theta[w2 + k] * (1.0 - act[k] * act[k]);
                g[b1 + k] += dz;
                axpy(dz, a, &mut g[w1 + k * d..w1 + (k + 1) * d]);
            }
            g[b2] += dout;
        }
        softplus(-margin)
    }

    fn segments(&self) -> Vec<Range<usize>> {
        let (w1, b1, w2, b2) = self.offsets();
        vec![w1..b1, b1..w2, w2..b2, b2..b2 + 1]
    }
}

/// Regularized empirical risk over a partitioned dataset:
/// `f_i(θ) = mean over node i's share of ℓ + (λ/2)‖θ‖²`.
#[derive(Debug)]
pub struct EmpiricalProblem<M> {
    model: M,
    data: Dataset,
    partition: Partition,
    n: usize,
    batch: usize,
    reg: f64,
    smoothness: f64,
    init: Vector,
}

impl<M: SampleModel> EmpiricalProblem<M> {
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    fn rounds_per_epoch(&self) -> u64 {
        let per_node = self.data.len() / self.n;
        per_node.div_ceil(self.batch).max(1) as u64
    }

    fn mean_over(&self, idx: &[usize], theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let inv = 1.0 / idx.len() as f64;
        let mut total = 0.0;
        match grad {
            Some(g) => {
                for &k in idx {
                    total += self.model.sample_loss(
                        theta,
                        &self.data.features[k],
                        self.data.labels[k],
                        Some((&mut *g, inv)),
                    );
                }
                axpy(self.reg, theta, g);
            }
            None => {
                for &k in idx {
                    total += self.model.sample_loss(
                        theta,
                        &self.data.features[k],
                        self.data.labels[k],
                        None,
                    );
                }
            }
        }
        total * inv + 0.5 * self.reg * norm_sq(theta)
    }
}

impl<M: SampleModel> Objective for EmpiricalProblem<M> {
    fn nodes(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn loss(&self, x: &[f64]) -> f64 {
        let all: Vec<usize> = (0..self.data.len()).collect();
        self.mean_over(&all, x, None)
    }

    fn gradient(&self, x: &[f64]) -> Vector {
        let all: Vec<usize> = (0..self.data.len()).collect();
        let mut g = vec![0.0; self.dim()];
        self.mean_over(&all, x, Some(&mut g));
        g
    }

    fn local_loss(&self, node: usize, x: &[f64]) -> f64 {
        self.mean_over(&self.partition.share(node, 0), x, None)
    }

    fn local_gradient(&self, node: usize, x: &[f64]) -> Vector {
        let mut g = vec![0.0; self.dim()];
        self.mean_over(&self.partition.share(node, 0), x, Some(&mut g));
        g
    }

    fn stochastic_gradient(
        &self,
        node: usize,
        x: &[f64],
        round: u64,
        stream: &mut RandomStream,
    ) -> Vector {
        let epoch = round / self.rounds_per_epoch();
        let share = self.partition.share(node, epoch);
        let batch: Vec<usize> = (0..self.batch)
            .map(|_| share[stream.index(share.len())])
            .collect();
        let mut g = vec![0.0; self.dim()];
        self.mean_over(&batch, x, Some(&mut g));
        g
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn initial_point(&self) -> Vector {
        self.init.clone()
    }

    fn layer_segments(&self) -> Vec<Range<usize>> {
        self.model.segments()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticParams {
    pub d: usize,
    pub samples: usize,
    pub partition: PartitionMode,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Optional CSV file replacing the synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub d: usize,
    pub hidden: usize,
    pub samples: usize,
    pub partition: PartitionMode,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_reg")]
    pub reg: f64,
}

fn default_batch() -> usize {
    8
}

fn default_reg() -> f64 {
    1e-3
}

fn default_separation() -> f64 {
    1.5
}

pub type LogisticProblem = EmpiricalProblem<Logistic>;
pub type MlpProblem = EmpiricalProblem<Mlp>;

pub fn make_logistic(n: usize, p: &LogisticParams, seed: u64) -> Result<LogisticProblem> {
    let data = match &p.csv {
        Some(path) => Dataset::from_csv(path)?,
        None => Dataset::gaussian_mixture(p.samples, p.d, p.separation, seed),
    };
    logistic_from_data(n, data, p.partition, p.batch, p.reg, seed)
}

/// Logistic regression on a given dataset with `L = ¼ λ_max(XᵀX)/N + λ`.
pub fn logistic_from_data(
    n: usize,
    data: Dataset,
    mode: PartitionMode,
    batch: usize,
    reg: f64,
    seed: u64,
) -> Result<LogisticProblem> {
    check_empirical(n, &data, batch, reg)?;
    let d = data.dim();
    if data.features.iter().any(|a| a.len() != d) {
        return Err(Error::InvalidArgument("ragged feature rows".into()));
    }
    let mut gram = SquareMatrix::zeros(d);
    for a in &data.features {
        for r in 0..d {
            for c in 0..d {
                gram[(r, c)] += a[r] * a[c];
            }
        }
    }
    let lmax = sym_eigenvalues(&gram)?[0];
    let smoothness = 0.25 * lmax / data.len() as f64 + reg;
    let partition = Partition::new(mode, &data, n, seed)?;
    Ok(EmpiricalProblem {
        model: Logistic { d },
        data,
        partition,
        n,
        batch,
        reg,
        smoothness,
        init: vec![0.0; d],
    })
}

/// One-hidden-layer tanh network on XOR-labelled Gaussian data. Weights are
/// drawn `U(±1/√fan_in)`; the smoothness constant is estimated numerically.
pub fn make_mlp(n: usize, p: &MlpParams, seed: u64) -> Result<MlpProblem> {
    let data = Dataset::xor(p.samples, p.d, seed);
    check_empirical(n, &data, p.batch, p.reg)?;
    let model = Mlp {
        inputs: data.dim(),
        hidden: p.hidden,
    };
    if model.dim() > 10_000 {
        return Err(Error::InvalidArgument(format!(
            "mlp has {} parameters; cap is 10000",
            model.dim()
        )));
    }
    let mut rng = RandomStream::for_worker(seed, 0, Purpose::Init, 0);
    let (_, b1, w2, _) = model.offsets();
    let init: Vector = (0..model.dim())
        .map(|k| {
            let fan_in = if k < b1 {
                model.inputs
            } else if k < w2 {
                1
            } else {
                model.hidden
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            bound * (2.0 * rng.uniform() - 1.0)
        })
        .collect();
    let partition = Partition::new(p.partition, &data, n, seed)?;
    let mut prob = EmpiricalProblem {
        model,
        data,
        partition,
        n,
        batch: p.batch,
        reg: p.reg,
        smoothness: 1.0,
        init,
    };
    let x0 = prob.init.clone();
    prob.smoothness = local_smoothness(&prob, 0, &x0, 100, seed);
    Ok(prob)
}

fn check_empirical(n: usize, data: &Dataset, batch: usize, reg: f64) -> Result<()> {
    if n == 0 || data.len() < n {
        return Err(Error::InvalidArgument(format!(
            "degenerate partition: {} samples for {n} nodes",
            data.len()
        )));
    }
    if batch == 0 || reg < 0.0 {
        return Err(Error::InvalidArgument(
            "batch >= 1 and reg >= 0 required".into(),
        ));
    }
    Ok(())
}

/// Largest curvature of `f_node` at `x` by power iteration on central
/// gradient differences.
pub fn local_smoothness(p: &dyn Objective, node: usize, x: &[f64], iters: usize, seed: u64) -> f64 {
    let d = p.dim();
    let eps = 1e-4;
    let mut rng = RandomStream::for_worker(seed, node, Purpose::Test, 99);
    let mut v = rng.gaussian(d, 1.0);
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);
    let mut lambda: f64 = 0.0;
    for _ in 0..iters {
        let plus: Vector = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let minus: Vector = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        let gp = p.local_gradient(node, &plus);
        let gm = p.local_gradient(node, &minus);
        let hv: Vector = gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let next = dot(&v, &hv);
        let nh = norm(&hv);
        if nh == 0.0 {
            return 0.0;
        }
        v = hv.iter().map(|a| a / nh).collect();
        let converged = (next - lambda).abs() <= 1e-14 * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    lambda.abs()
}

/// Monte-Carlo estimates of the constants `L`, `σ̄` and `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub l: f64,
    pub sigma_bar: f64,
    pub g: f64,
}

/// Estimates `L`, `σ̄ = sqrt((1/n) Σ σ_i²)` and `G` from `trials` stochastic
/// gradients per node at a handful of random points around the initial
/// point (unit Gaussian perturbations).
pub fn estimate_constants(p: &dyn Objective, trials: usize, seed: u64) -> Result<Constants> {
    let x0 = p.initial_point();
    let mut rng = RandomStream::for_worker(seed, 0, Purpose::Test, 0);
    let points: Vec<Vector> = (0..8)
        .map(|_| {
            let z = rng.gaussian(x0.len(), 1.0);
            x0.iter().zip(z).map(|(a, b)| a + b).collect()
        })
        .collect();
    estimate_constants_at(p, &points, trials, seed)
}

/// As [`estimate_constants`] but at caller-chosen points.
pub fn estimate_constants_at(
    p: &dyn Objective,
    points: &[Vector],
    trials: usize,
    seed: u64,
) -> Result<Constants> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("trials = {trials} < 100")));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no evaluation points".into()));
    }
    let n = p.nodes();
    let mut var_sum = vec![0.0; n];
    let mut g2_max: f64 = 0.0;
    let mut l_max: f64 = 0.0;
    for (k, x) in points.iter().enumerate() {
        l_max = l_max.max(local_smoothness(p, k % n, x, 1000, seed + k as u64));
        for (i, vs) in var_sum.iter_mut().enumerate() {
            let exact = p.local_gradient(i, x);
            let mut second = 0.0;
            for t in 0..trials {
                let mut s =
                    RandomStream::for_worker(seed, i, Purpose::Test, (k * trials + t) as u64);
                let g = p.stochastic_gradient(i, x, t as u64, &mut s);
                *vs += dist_sq(&g, &exact);
                second += norm_sq(&g);
            }
            g2_max = g2_max.max(second / trials as f64);
        }
    }
    let denom = (points.len() * trials) as f64;
    let sigma_sq = var_sum.iter().map(|v| v / denom).sum::<f64>() / n as f64;
    Ok(Constants {
        l: l_max,
        sigma_bar: sigma_sq.sqrt(),
        g: g2_max.sqrt(),
    })
}

/// Empirical `E‖(1/n) Σ_i (∇F_i(x, ξ_i) − ∇f_i(x))‖²` over `samples` draws.
pub fn averaged_noise_second_moment(
    p: &dyn Objective,
    x: &[f64],
    samples: usize,
    seed: u64,
) -> f64 {
    let n = p.nodes();
    let exact: Vec<Vector> = (0..n).map(|i| p.local_gradient(i, x)).collect();
    let mut total = 0.0;
    for s in 0..samples {
        let mut avg = vec![0.0; p.dim()];
        for (i, ex) in exact.iter().enumerate() {
            let mut stream = RandomStream::for_worker(seed, i, Purpose::Gradient, s as u64);
            let g = p.stochastic_gradient(i, x, s as u64, &mut stream);
            for ((a, gi), ei) in avg.iter_mut().zip(&g).zip(ex) {
                *a += (gi - ei) / n as f64;
            }
        }
        total += norm_sq(&avg);
    }
    total / samples as f64
}
