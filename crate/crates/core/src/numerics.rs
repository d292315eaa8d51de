//! Dense vector/matrix helpers, a cyclic Jacobi eigensolver for symmetric
//! matrices, and the counter-based random streams used by every worker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Model-space vector.
pub type Vector = Vec<f64>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn norm_l1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Coordinate-wise mean of a set of equally sized vectors.
pub fn mean_vector(vs: &[Vector]) -> Vector {
    let n = vs.len();
    let d = vs.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "matrix dimension must be >= 1".into(),
            ));
        }
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        if !all_finite(&data) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.data.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol * scale))
    }

    /// `self * v`
    pub fn mul_vec(&self, v: &[f64]) -> Vector {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> SquareMatrix {
        let mut out = SquareMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix, in descending order.
pub fn sym_eigenvalues(m: &SquareMatrix) -> Result<Vec<f64>> {
    let (mut vals, _) = jacobi(m, false)?;
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Eigenvalues (descending) with the matching unit eigenvectors as columns.
pub fn sym_eigen(m: &SquareMatrix) -> Result<(Vec<f64>, SquareMatrix)> {
    let (vals, vecs) = jacobi(m, true)?;
    let vecs = vecs.expect("vectors requested");
    let n = m.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut sorted = SquareMatrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            sorted[(r, col)] = vecs[(r, src)];
        }
    }
    Ok((order.iter().map(|&k| vals[k]).collect(), sorted))
}

/// Cyclic Jacobi rotations. Sweeps until the off-diagonal mass is negligible
/// relative to the Frobenius norm.
fn jacobi(m: &SquareMatrix, want_vectors: bool) -> Result<(Vec<f64>, Option<SquareMatrix>)> {
    let n = m.dim();
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric);
    }
    if !all_finite(&m.data) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let mut a = m.clone();
    // symmetrize exactly so rotations see one value per pair
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = want_vectors.then(|| SquareMatrix::identity(n));
    let frob_sq: f64 = a.data.iter().map(|x| x * x).sum();
    if frob_sq == 0.0 {
        return Ok((vec![0.0; n], v));
    }

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * frob_sq {
            let vals = (0..n).map(|i| a[(i, i)]).collect();
            return Ok((vals, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    Err(Error::NoConvergence(MAX_SWEEPS))
}

/// What a random stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Gradient = 1,
    Compression = 2,
    Problem = 3,
    Init = 4,
    Partition = 5,
    Test = 6,
}

/// Identifies one independent stream under a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub worker: u32,
    pub purpose: Purpose,
    pub round: u64,
}

impl StreamId {
    pub fn new(worker: usize, purpose: Purpose, round: u64) -> Self {
        Self {
            worker: worker as u32,
            purpose,
            round,
        }
    }

    /// Packs into ChaCha's 64-bit stream selector: 8 bits purpose,
    /// 24 bits worker, 32 bits round.
    fn packed(&self) -> u64 {
        assert!(self.worker < (1 << 24), "worker index exceeds 2^24");
        assert!(self.round < (1 << 32), "round exceeds 2^32");
        ((self.purpose as u64) << 56) | ((self.worker as u64) << 32) | self.round
    }
}

/// Counter-based random stream: the (seed, id) pair fixes the whole draw
/// sequence, independently of how other streams are consumed.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    id: StreamId,
    draws: u64,
}

impl RandomStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.packed());
        Self { rng, id, draws: 0 }
    }

    /// Shorthand for `new(seed, StreamId::new(worker, purpose, round))`.
    pub fn for_worker(seed: u64, worker: usize, purpose: Purpose, round: u64) -> Self {
        Self::new(seed, StreamId::new(worker, purpose, round))
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Number of values drawn so far.
    pub fn counter(&self) -> u64 {
        self.draws
    }

    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        self.rng.sample(StandardNormal)
    }

    /// `d` i.i.d. N(0, std²) entries.
    pub fn gaussian(&mut self, d: usize, std: f64) -> Vector {
        (0..d).map(|_| std * self.standard_normal()).collect()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.draws += 1;
        self.rng.random_range(0..n)
    }

    /// `k` distinct indices from `0..n`, uniformly among all k-subsets, in
    /// ascending order.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        self.draws += k as u64;
        let mut idx = rand::seq::index::sample(&mut self.rng, n, k).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_eigenvalues() {
        let vals = sym_eigenvalues(&SquareMatrix::identity(3)).unwrap();
        assert_eq!(vals, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn averaging_matrix_eigenvalues() {
        let m = SquareMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let vals = sym_eigenvalues(&m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-15);
        assert!(vals[1].abs() < 1e-15);
    }

    #[test]
    fn rejects_nonsymmetric() {
        let m = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigenvalues(&m), Err(Error::NotSymmetric)));
    }

    #[test]
    fn eigen_reconstruction() {
        let mut s = RandomStream::for_worker(7, 0, Purpose::Test, 0);
        let n = 12;
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let x = s.standard_normal();
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        let (vals, vecs) = sym_eigen(&m).unwrap();
        for k in 0..n {
            let col: Vector = (0..n).map(|r| vecs[(r, k)]).collect();
            let mv = m.mul_vec(&col);
            for r in 0..n {
                assert!((mv[r] - vals[k] * col[r]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_std_gaussian_is_zero() {
        let mut s = RandomStream::for_worker(1, 0, Purpose::Test, 0);
        let v = s.gaussian(5, 0.0);
        assert!(v.iter().all(|&x| x == 0.0));
        assert_eq!(s.counter(), 5);
    }

    #[test]
    fn gaussian_sample_mean() {
        // |mean| < 3 / sqrt(1e5) ~ 0.0095, checked against the looser 0.02
        let mut s = RandomStream::for_worker(42, 3, Purpose::Test, 0);
        let v = s.gaussian(100_000, 1.0);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn streams_replay_and_separate() {
        let a = RandomStream::for_worker(9, 2, Purpose::Gradient, 5).gaussian(8, 1.0);
        let b = RandomStream::for_worker(9, 2, Purpose::Gradient, 5).gaussian(8, 1.0);
        let c = RandomStream::for_worker(9, 2, Purpose::Gradient, 6).gaussian(8, 1.0);
        let e = RandomStream::for_worker(9, 2, Purpose::Compression, 5).gaussian(8, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, e);
    }

    #[test]
    fn subset_is_sorted_and_distinct() {
        let mut s = RandomStream::for_worker(3, 0, Purpose::Test, 0);
        let idx = s.subset(50, 10);
        assert_eq!(idx.len(), 10);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
