//! Communication graphs and their degree-based mixing matrices.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigenvalues, SquareMatrix};

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph, deduplicating pairs. Rejects self-loops, out-of-range
    /// indices and disconnected results.
    pub fn from_edge_list(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for n = {n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        adjacency.iter_mut().for_each(|a| a.sort_unstable());
        let g = Self {
            n,
            edges,
            adjacency,
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("ring needs n >= 2, got {n}")));
        }
        let pairs: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edge_list(n, &pairs)
    }

    /// `side x side` grid with wraparound, `n = side²`, `side >= 3`.
    pub fn torus(n: usize) -> Result<Self> {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::InvalidGraph(format!(
                "torus needs a square n, got {n}"
            )));
        }
        if side < 3 {
            return Err(Error::InvalidGraph(format!(
                "torus needs side >= 3, got {side}"
            )));
        }
        let mut pairs = Vec::with_capacity(2 * n);
        for r in 0..side {
            for c in 0..side {
                let i = r * side + c;
                pairs.push((i, r * side + (c + 1) % side));
                pairs.push((i, ((r + 1) % side) * side + c));
            }
        }
        Self::from_edge_list(n, &pairs)
    }

    pub fn fully_connected(n: usize) -> Result<Self> {
        let pairs: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        Self::from_edge_list(n, &pairs)
    }

    /// Reads an edge-list file: one `i j` pair per line, `#` starts a comment,
    /// 0-based indices. `n` defaults to one past the largest index seen.
    pub fn from_edge_list_file(path: &Path, n: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let pairs = parse_edge_list(&text)?;
        let max = pairs.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(1);
        Self::from_edge_list(n.unwrap_or(max), &pairs)
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }
}

pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("`{s}` is not a node index"),
            })
        };
        match fields.as_slice() {
            [a, b] => pairs.push((parse(a)?, parse(b)?)),
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected `i j`, got `{line}`"),
                })
            }
        }
    }
    Ok(pairs)
}

/// Symmetric doubly stochastic mixing matrix with its spectral summary.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: SquareMatrix,
    eigenvalues: Vec<f64>,
    rho: f64,
    beta: f64,
    /// Off-diagonal nonzeros per row, ascending by column.
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Degree-based weights `w_ij = 1 / (1 + max(deg i, deg j))` on edges,
    /// remaining mass on the diagonal.
    pub fn from_graph(g: &Graph) -> Result<Self> {
        let n = g.nodes();
        let deg = g.degrees();
        let mut w = SquareMatrix::zeros(n);
        for &(i, j) in g.edges() {
            let wij = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
            w[(i, j)] = wij;
            w[(j, i)] = wij;
        }
        for i in 0..n {
            let off: f64 = g.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        Self::from_matrix(w)
    }

    /// Wraps an arbitrary matrix after checking the mixing-matrix invariants.
    pub fn from_matrix(w: SquareMatrix) -> Result<Self> {
        let n = w.dim();
        if !w.is_symmetric(1e-12) {
            return Err(Error::NotSymmetric);
        }
        for i in 0..n {
            let row_sum: f64 = w.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidGraph(format!(
                    "row {i} sums to {row_sum}, not 1"
                )));
            }
            if w.row(i).iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::InvalidGraph(format!(
                    "row {i} has entries outside [0,1]"
                )));
            }
        }
        let eigenvalues = sym_eigenvalues(&w)?;
        let rho = spectral_gap_of(&eigenvalues);
        if rho <= 1e-12 {
            return Err(Error::Disconnected);
        }
        let beta = 1.0 - eigenvalues[n - 1];
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self {
            w,
            eigenvalues,
            rho,
            beta,
            neighbors,
        })
    }

    pub fn nodes(&self) -> usize {
        self.w.dim()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.w
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// Off-diagonal nonzero `(j, w_ij)` pairs of row `i`, ascending by `j`.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `1 - max(|λ2|, |λn|)`.
    pub fn spectral_gap(&self) -> f64 {
        self.rho
    }

    /// `‖I − W‖₂ = 1 − λn`.
    pub fn operator_gap_beta(&self) -> f64 {
        self.beta
    }
}

fn spectral_gap_of(eigs: &[f64]) -> f64 {
    if eigs.len() == 1 {
        return 1.0;
    }
    let second = eigs[1].abs().max(eigs[eigs.len() - 1].abs());
    (1.0 - second).clamp(0.0, 1.0)
}

/// Textual topology selector: `ring:N`, `torus:N`, `full:N` or `file:PATH`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TopologySpec {
    Ring(usize),
    Torus(usize),
    Full(usize),
    File(PathBuf),
}

impl TopologySpec {
    pub fn build(&self) -> Result<Graph> {
        match self {
            Self::Ring(n) => Graph::ring(*n),
            Self::Torus(n) => Graph::torus(*n),
            Self::Full(n) => Graph::fully_connected(*n),
            Self::File(p) => Graph::from_edge_list_file(p, None),
        }
    }
}

impl FromStr for TopologySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTopology(s.to_string());
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let count = || arg.parse::<usize>().map_err(|_| bad());
        match kind {
            "ring" => Ok(Self::Ring(count()?)),
            "torus" => Ok(Self::Torus(count()?)),
            "full" | "fully-connected" => Ok(Self::Full(count()?)),
            "file" if !arg.is_empty() => Ok(Self::File(PathBuf::from(arg))),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ring(n) => write!(f, "ring:{n}"),
            Self::Torus(n) => write!(f, "torus:{n}"),
            Self::Full(n) => write!(f, "full:{n}"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl TryFrom<String> for TopologySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TopologySpec> for String {
    fn from(t: TopologySpec) -> Self {
        t.to_string()
    }
}
