//! Traffic ledger and per-round telemetry.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// How a node's single compressed message is charged per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessagePolicy {
    /// One copy per neighbour link.
    #[default]
    Pairwise,
    /// One multicast per round regardless of degree.
    Broadcast,
}

/// Cumulative sent bits per node (send-only) and message counts per link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficLedger {
    sent: Vec<u64>,
    links: BTreeMap<(usize, usize), u64>,
}

impl TrafficLedger {
    pub fn new(nodes: usize) -> Self {
        Self {
            sent: vec![0; nodes],
            links: BTreeMap::new(),
        }
    }

    pub fn ledger_add(&mut self, node: usize, bits: u64) {
        self.sent[node] += bits;
    }

    /// Charges one round in which `node` sends a message of `bits` to each
    /// of `neighbors`. Self-delivery is free.
    pub fn record_gossip(
        &mut self,
        node: usize,
        neighbors: impl IntoIterator<Item = usize>,
        bits: u64,
        policy: MessagePolicy,
    ) {
        let mut degree = 0;
        for j in neighbors {
            degree += 1;
            *self.links.entry((node, j)).or_insert(0) += 1;
        }
        let charged = match policy {
            MessagePolicy::Pairwise => bits * degree,
            MessagePolicy::Broadcast if degree > 0 => bits,
            MessagePolicy::Broadcast => 0,
        };
        self.ledger_add(node, charged);
    }

    pub fn sent(&self, node: usize) -> u64 {
        self.sent[node]
    }

    pub fn per_node(&self) -> &[u64] {
        &self.sent
    }

    /// Messages sent on the directed link `from -> to`.
    pub fn messages(&self, from: usize, to: usize) -> u64 {
        self.links.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn busiest(&self) -> u64 {
        self.sent.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.sent.iter().sum()
    }
}

/// One telemetry row. `consensus` is `(1/n) Σ‖x_i − x̄‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub t: u64,
    pub f_avg: f64,
    pub grad_sq: f64,
    pub consensus: f64,
    pub psi: f64,
    pub bits_busiest: u64,
    pub wall_ms: u64,
}

pub const CSV_HEADER: [&str; 7] = [
    "t",
    "f_avg",
    "grad_sq",
    "consensus",
    "psi",
    "bits_busiest",
    "wall_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub round: u64,
    pub worker: usize,
    pub norm: f64,
}

/// Time series of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<Row>,
    /// `f(x_i)` per worker, aligned with `rows`.
    pub worker_loss: Vec<Vec<f64>>,
    pub diverged: Option<Divergence>,
}

impl RunRecord {
    pub fn record_round(&mut self, row: Row, worker_loss: Vec<f64>) {
        self.rows.push(row);
        self.worker_loss.push(worker_loss);
    }

    pub fn last(&self) -> Option<&Row> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.f_avg.to_string(),
                r.grad_sq.to_string(),
                r.consensus.to_string(),
                r.psi.to_string(),
                r.bits_busiest.to_string(),
                r.wall_ms.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Final and budgeted metrics of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: usize,
    pub diverged: Option<Divergence>,
    pub final_f: Option<f64>,
    pub final_grad_sq: Option<f64>,
    pub final_consensus: Option<f64>,
    pub total_bits_busiest: u64,
    /// Lowest `f(x̄)` among rows with `t < round_budget`.
    pub best_f_within_rounds: Option<f64>,
    /// Lowest `f(x̄)` among rows whose busiest-node traffic fits the budget.
    pub best_f_within_bits: Option<f64>,
    /// Busiest-node bits when `f(x̄)` first reached the target.
    pub bits_to_target: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Budgets {
    pub rounds: Option<u64>,
    pub bits: Option<u64>,
    pub target_f: Option<f64>,
}

pub fn summarize(run: &RunRecord, budgets: Budgets) -> Summary {
    let last = run.rows.last();
    let min_f = |pred: &dyn Fn(&Row) -> bool| {
        run.rows
            .iter()
            .filter(|r| pred(r))
            .map(|r| r.f_avg)
            .min_by(f64::total_cmp)
    };
    Summary {
        rows: run.rows.len(),
        diverged: run.diverged,
        final_f: last.map(|r| r.f_avg),
        final_grad_sq: last.map(|r| r.grad_sq),
        final_consensus: last.map(|r| r.consensus),
        total_bits_busiest: last.map_or(0, |r| r.bits_busiest),
        best_f_within_rounds: budgets.rounds.and_then(|b| min_f(&|r: &Row| r.t < b)),
        best_f_within_bits: budgets
            .bits
            .and_then(|b| min_f(&|r: &Row| r.bits_busiest <= b)),
        bits_to_target: budgets.target_f.and_then(|target| {
            run.rows
                .iter()
                .find(|r| r.f_avg <= target)
                .map(|r| r.bits_busiest)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: u64, f: f64, bits: u64) -> Row {
        Row {
            t,
            f_avg: f,
            grad_sq: f,
            consensus: 0.0,
            psi: 0.0,
            bits_busiest: bits,
            wall_ms: 0,
        }
    }

    #[test]
    fn sign_round_on_ring_broadcast() {
        let mut l = TrafficLedger::new(4);
        l.record_gossip(1, [0, 2], 260_032, MessagePolicy::Broadcast);
        assert_eq!(l.busiest(), 260_032);
        l.record_gossip(2, [1, 3], 260_032, MessagePolicy::Pairwise);
        assert_eq!(l.sent(2), 2 * 260_032);
        assert_eq!(l.messages(2, 3), 1);
        assert_eq!(l.messages(3, 2), 0);
    }

    #[test]
    fn empty_run_summary() {
        let s = summarize(&RunRecord::default(), Budgets::default());
        assert_eq!(s.rows, 0);
        assert!(s.diverged.is_none());
        assert!(s.final_f.is_none());
    }

    #[test]
    fn budgets() {
        let mut run = RunRecord::default();
        for (t, f) in [(0, 5.0), (1, 3.0), (2, 4.0), (3, 1.0)] {
            run.record_round(row(t, f, 100 * (t + 1)), vec![]);
        }
        let s = summarize(
            &run,
            Budgets {
                rounds: Some(3),
                bits: Some(250),
                target_f: Some(3.5),
            },
        );
        assert_eq!(s.best_f_within_rounds, Some(3.0));
        assert_eq!(s.best_f_within_bits, Some(3.0));
        assert_eq!(s.bits_to_target, Some(200));
        assert_eq!(s.final_f, Some(1.0));
    }

    #[test]
    fn csv_layout() {
        let mut run = RunRecord::default();
        run.record_round(row(0, 0.5, 64), vec![]);
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t,f_avg,grad_sq,consensus,psi,bits_busiest,wall_ms\n0,0.5,0.5,0,0,64,0\n"
        );
    }
}
