//! Compression operators with their contraction factors and wire costs.
//!
//! A compressor `Q` is a δ-compressor when `E‖Q(x) − x‖² ≤ (1 − δ)‖x‖²`.
//! Payloads are kept dense; `bit_cost` is what the message would occupy with
//! 32-bit floats on the wire.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, norm_l1, norm_sq, RandomStream, Vector};

const FLOAT_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Compressor {
    Identity,
    /// Stochastic rounding to `bits`-bit levels (sign + `bits − 1` magnitude).
    Gsgd {
        bits: u32,
        unbiased: bool,
    },
    /// Keep a uniformly random `fraction` of coordinates.
    Random {
        fraction: f64,
        unbiased: bool,
    },
    /// Keep the `fraction` of coordinates with largest magnitude.
    TopK {
        fraction: f64,
    },
    /// `(‖x‖₁ / d) · sgn(x)`.
    Sign,
}

/// Output of one compression: the decoded value and its wire size.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub payload: Vector,
    pub bit_cost: u64,
}

/// Number of coordinates kept by the sparsifiers, `⌊a·d⌋`.
pub fn kept_count(fraction: f64, d: usize) -> usize {
    // guards against a·d landing a hair below an integer
    ((fraction * d as f64) + 1e-9).floor() as usize
}

impl Compressor {
    pub fn gsgd(bits: u32) -> Result<Self> {
        Self::Gsgd {
            bits,
            unbiased: false,
        }
        .validated()
    }

    pub fn random(fraction: f64) -> Result<Self> {
        Self::Random {
            fraction,
            unbiased: false,
        }
        .validated()
    }

    pub fn topk(fraction: f64) -> Result<Self> {
        Self::TopK { fraction }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Self::Identity | Self::Sign => true,
            Self::Gsgd { bits, .. } => (2..=32).contains(&bits),
            Self::Random { fraction, .. } | Self::TopK { fraction } => {
                fraction > 0.0 && fraction <= 1.0
            }
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidCompressor(self.to_string()))
        }
    }

    pub fn is_lossless(&self) -> bool {
        match *self {
            Self::Identity => true,
            Self::TopK { fraction } => fraction >= 1.0,
            Self::Random { fraction, .. } => fraction >= 1.0,
            _ => false,
        }
    }

    pub fn is_unbiased(&self) -> bool {
        matches!(
            self,
            Self::Identity
                | Self::Gsgd { unbiased: true, .. }
                | Self::Random { unbiased: true, .. }
        )
    }

    /// Wire size in bits of one message of length `d`.
    pub fn bit_cost(&self, d: usize) -> u64 {
        let d64 = d as u64;
        match *self {
            Self::Identity => FLOAT_BITS * d64,
            Self::Gsgd { bits, .. } => bits as u64 * d64 + FLOAT_BITS,
            Self::Random { fraction, .. } => FLOAT_BITS * kept_count(fraction, d) as u64,
            Self::TopK { fraction } => 2 * FLOAT_BITS * kept_count(fraction, d) as u64,
            Self::Sign => d64 + FLOAT_BITS,
        }
    }

    /// Closed-form δ for vectors of length `d`.
    ///
    /// For `sign` this is the input-independent worst case `1/d`; see
    /// [`sign_delta`] for the per-input value. Unbiased variants report the δ
    /// of their rescaled (biased) counterpart, the operator they reduce to
    /// once scaled down.
    pub fn contraction_factor(&self, d: usize) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::Gsgd { bits, .. } => 1.0 / gsgd_tau(bits, d),
            Self::Random { fraction, .. } | Self::TopK { fraction } => {
                kept_count(fraction, d) as f64 / d as f64
            }
            Self::Sign => 1.0 / d as f64,
        }
    }

    pub fn compress(&self, x: &[f64], stream: &mut RandomStream) -> CompressedMessage {
        let payload = match *self {
            Self::Identity => x.to_vec(),
            Self::Gsgd { bits, unbiased } => gsgd(x, bits, unbiased, stream),
            Self::Random { fraction, unbiased } => random_sparsify(x, fraction, unbiased, stream),
            Self::TopK { fraction } => topk(x, fraction),
            Self::Sign => scaled_sign(x),
        };
        CompressedMessage {
            payload,
            bit_cost: self.bit_cost(x.len()),
        }
    }

    /// Compresses each segment independently (own norm, own mask) and sums
    /// the wire costs. Segments must tile `0..x.len()`.
    pub fn compress_segments(
        &self,
        x: &[f64],
        segments: &[Range<usize>],
        stream: &mut RandomStream,
    ) -> CompressedMessage {
        if segments.len() <= 1 {
            return self.compress(x, stream);
        }
        let mut payload = Vec::with_capacity(x.len());
        let mut bit_cost = 0;
        for seg in segments {
            let part = self.compress(&x[seg.clone()], stream);
            payload.extend(part.payload);
            bit_cost += part.bit_cost;
        }
        debug_assert_eq!(payload.len(), x.len());
        CompressedMessage { payload, bit_cost }
    }

    pub fn segmented_bit_cost(&self, segments: &[Range<usize>], d: usize) -> u64 {
        if segments.len() <= 1 {
            self.bit_cost(d)
        } else {
            segments.iter().map(|s| self.bit_cost(s.len())).sum()
        }
    }
}

/// `τ = 1 + min(d / 2^{2(b−1)}, √d / 2^{b−1})`.
pub fn gsgd_tau(bits: u32, d: usize) -> f64 {
    let s = 2f64.powi(bits as i32 - 1);
    let d = d as f64;
    1.0 + (d / (s * s)).min(d.sqrt() / s)
}

/// Per-input contraction of the scaled sign operator, `‖x‖₁² / (d‖x‖₂²)`.
pub fn sign_delta(x: &[f64]) -> f64 {
    let sq = norm_sq(x);
    if sq == 0.0 {
        return 1.0;
    }
    let l1 = norm_l1(x);
    l1 * l1 / (x.len() as f64 * sq)
}

fn gsgd(x: &[f64], bits: u32, unbiased: bool, stream: &mut RandomStream) -> Vector {
    let d = x.len();
    let nrm = norm(x);
    if nrm == 0.0 {
        return vec![0.0; d];
    }
    let levels = 2f64.powi(bits as i32 - 1);
    let scale = if unbiased {
        nrm
    } else {
        nrm / gsgd_tau(bits, d)
    };
    x.iter()
        .map(|&xi| {
            let level = (levels * xi.abs() / nrm + stream.uniform()).floor();
            let sig = if xi >= 0.0 { 1.0 } else { -1.0 };
            scale * sig * level / levels
        })
        .collect()
}

fn random_sparsify(x: &[f64], fraction: f64, unbiased: bool, stream: &mut RandomStream) -> Vector {
    let d = x.len();
    let k = kept_count(fraction, d);
    let mut out = vec![0.0; d];
    if k == 0 {
        return out;
    }
    let scale = if unbiased { d as f64 / k as f64 } else { 1.0 };
    for i in stream.subset(d, k) {
        out[i] = scale * x[i];
    }
    out
}

fn topk(x: &[f64], fraction: f64) -> Vector {
    let d = x.len();
    let k = kept_count(fraction, d);
    let mut out = vec![0.0; d];
    if k == 0 {
        return out;
    }
    if k >= d {
        return x.to_vec();
    }
    // larger magnitude first, lower index breaks ties
    let mut order: Vec<usize> = (0..d).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b))
    });
    for &i in &order[..k] {
        out[i] = x[i];
    }
    out
}

fn scaled_sign(x: &[f64]) -> Vector {
    let d = x.len();
    let scale = norm_l1(x) / d as f64;
    // one bit per entry: zero is sent as +
    x.iter()
        .map(|&xi| if xi >= 0.0 { scale } else { -scale })
        .collect()
}

impl FromStr for Compressor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidCompressor(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let unbiased = match parts.as_slice() {
            [_, _, "unbiased"] => true,
            [_] | [_, _] => false,
            _ => return Err(bad()),
        };
        let c = match parts.as_slice() {
            ["identity"] => Self::Identity,
            ["sign"] => Self::Sign,
            ["gsgd", b, ..] => Self::Gsgd {
                bits: b.parse().map_err(|_| bad())?,
                unbiased,
            },
            ["random", a, ..] => Self::Random {
                fraction: a.parse().map_err(|_| bad())?,
                unbiased,
            },
            ["topk", a] => Self::TopK {
                fraction: a.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        c.validated().map_err(|_| bad())
    }
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = |u: bool| if u { ":unbiased" } else { "" };
        match *self {
            Self::Identity => write!(f, "identity"),
            Self::Sign => write!(f, "sign"),
            Self::Gsgd { bits, unbiased } => write!(f, "gsgd:{bits}{}", suffix(unbiased)),
            Self::Random { fraction, unbiased } => {
                write!(f, "random:{fraction}{}", suffix(unbiased))
            }
            Self::TopK { fraction } => write!(f, "topk:{fraction}"),
        }
    }
}

impl TryFrom<String> for Compressor {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Compressor> for String {
    fn from(c: Compressor) -> String {
        c.to_string()
    }
}
