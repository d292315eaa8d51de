//! Gossip averaging: exact averaging, CHOCO-Gossip with public copies, the
//! consensus stepsize and the Lyapunov potential used to track convergence.

use rayon::prelude::*;

use crate::compression::Compressor;
use crate::error::{Error, Result};
use crate::numerics::{dist_sq, mean_vector, Purpose, RandomStream, Vector};
use crate::topology::MixingMatrix;

/// Below this many scalars per round the per-node loops stay sequential.
pub(crate) const PAR_THRESHOLD: usize = 1 << 16;

/// Private iterates `x_i`, public copies `x̂_i` and the consensus stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub x: Vec<Vector>,
    pub xhat: Vec<Vector>,
    pub gamma: f64,
}

impl ConsensusState {
    /// Public copies start at zero.
    pub fn new(x: Vec<Vector>, gamma: f64) -> Result<Self> {
        let d = x.first().map_or(0, Vec::len);
        if let Some(bad) = x.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        let xhat = vec![vec![0.0; d]; x.len()];
        Ok(Self { x, xhat, gamma })
    }

    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn average(&self) -> Vector {
        mean_vector(&self.x)
    }
}

/// Which averaging scheme a rate constant refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AveragingMode {
    /// `X⁺ = XW`
    Exact,
    /// CHOCO-Gossip with a δ-compressor.
    Choco,
}

/// `γ = ρ²δ / (16ρ + ρ² + 4β² + 2ρβ² − 8ρδ)`.
pub fn consensus_stepsize(rho: f64, beta: f64, delta: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidStepsize(format!("rho = {rho} not in (0, 1]")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidStepsize(format!(
            "delta = {delta} not in (0, 1]"
        )));
    }
    if !(0.0..=2.0).contains(&beta) {
        return Err(Error::InvalidStepsize(format!(
            "beta = {beta} not in [0, 2]"
        )));
    }
    let b2 = beta * beta;
    let denom = 16.0 * rho + rho * rho + 4.0 * b2 + 2.0 * rho * b2 - 8.0 * rho * delta;
    if denom <= 0.0 {
        return Err(Error::InvalidStepsize(format!(
            "non-positive denominator {denom}"
        )));
    }
    Ok(rho * rho * delta / denom)
}

/// [`consensus_stepsize`] with ρ and β taken from the mixing matrix.
pub fn consensus_stepsize_for(m: &MixingMatrix, delta: f64) -> Result<f64> {
    consensus_stepsize(m.spectral_gap(), m.operator_gap_beta(), delta)
}

/// Linear rate `c` of the averaging scheme: `ρ` for exact averaging,
/// `ρ²δ/82` for CHOCO-Gossip.
pub fn rate_constant(rho: f64, delta: f64, mode: AveragingMode) -> f64 {
    match mode {
        AveragingMode::Exact => rho,
        AveragingMode::Choco => rho * rho * delta / 82.0,
    }
}

/// `Σ_i ‖x_i − x̄‖²`
pub fn consensus_distance_sum(x: &[Vector]) -> f64 {
    let avg = mean_vector(x);
    x.iter().map(|xi| dist_sq(xi, &avg)).sum()
}

/// `Ψ = Σ‖x_i − x̄‖² + Σ‖x_i − x̂_i‖²`
pub fn lyapunov(s: &ConsensusState) -> f64 {
    let spread = consensus_distance_sum(&s.x);
    let lag: f64 = s.x.iter().zip(&s.xhat).map(|(a, b)| dist_sq(a, b)).sum();
    spread + lag
}

/// Sum of `w_ij (v_j − v_i)` over the off-diagonal nonzeros of row `i`.
pub(crate) fn laplacian_row(m: &MixingMatrix, v: &[Vector], i: usize) -> Vector {
    let mut acc = vec![0.0; v[i].len()];
    let vi = &v[i];
    for &(j, w) in m.neighbors(i) {
        for ((a, vj), vik) in acc.iter_mut().zip(&v[j]).zip(vi) {
            *a += w * (vj - vik);
        }
    }
    acc
}

/// `x_i += γ Σ_j w_ij (x̂_j − x̂_i)` for every node, reading one snapshot of
/// the public copies.
pub fn gossip_update(x: &mut [Vector], xhat: &[Vector], m: &MixingMatrix, gamma: f64) {
    let apply = |(i, xi): (usize, &mut Vector)| {
        let acc = laplacian_row(m, xhat, i);
        for (a, b) in xi.iter_mut().zip(acc) {
            *a += gamma * b;
        }
    };
    if x.len() * x.first().map_or(0, Vec::len) >= PAR_THRESHOLD {
        x.par_iter_mut().enumerate().for_each(apply);
    } else {
        x.iter_mut().enumerate().for_each(apply);
    }
}

/// `q_i = Q(x_i − x̂_i)`, then `x̂_i += q_i`. Returns the per-node message
/// cost in bits. Randomness for node `i` comes from its compression stream
/// for `round`.
pub fn commit_public_copies(
    x: &[Vector],
    xhat: &mut [Vector],
    compressor: &Compressor,
    segments: &[std::ops::Range<usize>],
    seed: u64,
    round: u64,
) -> Vec<u64> {
    let lossless = compressor.is_lossless();
    let commit = |(i, (xi, hi)): (usize, (&Vector, &mut Vector))| {
        let mut stream = RandomStream::for_worker(seed, i, Purpose::Compression, round);
        let diff: Vector = xi.iter().zip(hi.iter()).map(|(a, b)| a - b).collect();
        let msg = compressor.compress_segments(&diff, segments, &mut stream);
        if lossless {
            // receivers reconstruct x_i exactly from a lossless message
            hi.copy_from_slice(xi);
        } else {
            for (h, q) in hi.iter_mut().zip(&msg.payload) {
                *h += q;
            }
        }
        msg.bit_cost
    };
    if x.len() * x.first().map_or(0, Vec::len) >= PAR_THRESHOLD {
        x.par_iter()
            .zip(xhat.par_iter_mut())
            .enumerate()
            .map(commit)
            .collect()
    } else {
        x.iter()
            .zip(xhat.iter_mut())
            .enumerate()
            .map(commit)
            .collect()
    }
}

/// One synchronous CHOCO-Gossip round: gossip increment from the pre-round
/// public copies, then compressed public-copy update. Returns per-node
/// message costs (one message per node, broadcast to all neighbours).
pub fn choco_gossip_round(
    s: &mut ConsensusState,
    m: &MixingMatrix,
    compressor: &Compressor,
    seed: u64,
    round: u64,
) -> Vec<u64> {
    gossip_update(&mut s.x, &s.xhat, m, s.gamma);
    let d = s.dim();
    commit_public_copies(
        &s.x,
        &mut s.xhat,
        compressor,
        std::slice::from_ref(&(0..d)),
        seed,
        round,
    )
}

/// `X⁺ = XW` (row `i` becomes `Σ_j w_ij x_j`) and `Y⁺ = X⁺`.
pub fn exact_averaging_round(s: &mut ConsensusState, m: &MixingMatrix) {
    s.x = mix(&s.x, m);
    s.xhat = s.x.clone();
}

/// `Σ_j w_ij v_j` for every row.
pub fn mix(v: &[Vector], m: &MixingMatrix) -> Vec<Vector> {
    let d = v.first().map_or(0, Vec::len);
    (0..v.len())
        .map(|i| {
            let mut out = vec![0.0; d];
            for (j, vj) in v.iter().enumerate() {
                let w = m.weight(i, j);
                if w != 0.0 {
                    for (o, a) in out.iter_mut().zip(vj) {
                        *o += w * a;
                    }
                }
            }
            out
        })
        .collect()
}
