//! Knapsack-to-QUBO encodings with a quadratic capacity penalty.
//!
//! Tilted: `E = Σ ã y + ρ (W − Q)(W − Q + s)`, minimized at `W = Q − s/2` and
//! non-positive on the band `[Q − s, Q]`.
//!
//! Taylor: `E = Σ ã y + α (½(Q − W)² − (Q − W) + 1)`, minimized at slack one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dual::KnapsackSub;
use crate::instance::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    Tilted,
    Taylor,
}

/// Penalty strengths; `None` picks a per-sub default from the item costs and weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub rho: Option<f64>,
    pub s: f64,
    pub alpha: Option<f64>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig { kind: PenaltyKind::Tilted, rho: None, s: 2.0, alpha: None }
    }
}

impl PenaltyConfig {
    pub fn tilted(rho: f64, s: f64) -> Self {
        PenaltyConfig { kind: PenaltyKind::Tilted, rho: Some(rho), s, alpha: None }
    }

    pub fn taylor(alpha: f64) -> Self {
        PenaltyConfig { kind: PenaltyKind::Taylor, rho: None, s: 0.0, alpha: Some(alpha) }
    }
}

/// `2·(max|ã| + 1) / max(1, min w²)`.
pub fn default_strength(sub: &KnapsackSub) -> f64 {
    let max_cost = sub.items.iter().map(|it| it.cost.abs()).fold(0.0, f64::max);
    let min_w2 = sub.items.iter().map(|it| (it.weight as f64).powi(2)).fold(f64::INFINITY, f64::min);
    2.0 * (max_cost + 1.0) / min_w2.max(1.0)
}

/// `constant + Σ linear_i y_i + Σ_{i<j} b_ij y_i y_j` over `m` binary variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuboModel {
    pub width: usize,
    pub linear: Vec<f64>,
    /// Dense `m × m`, only entries with `i < j` are used.
    quadratic: Vec<f64>,
    pub constant: f64,
    /// Variable index to customer id.
    pub item_map: Vec<usize>,
    pub weights: Vec<u32>,
    pub capacity: u32,
}

impl QuboModel {
    fn empty(sub: &KnapsackSub, constant: f64) -> Self {
        let m = sub.width();
        QuboModel {
            width: m,
            linear: vec![0.0; m],
            quadratic: vec![0.0; m * m],
            constant,
            item_map: sub.items.iter().map(|it| it.customer).collect(),
            weights: sub.weights(),
            capacity: sub.capacity,
        }
    }

    /// Upper-triangular coupling `b_ij` for `i < j`.
    #[inline]
    pub fn b(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        if i == j { 0.0 } else { self.quadratic[i * self.width + j] }
    }

    pub fn energy(&self, y: &[bool]) -> f64 {
        let m = self.width;
        let mut e = self.constant;
        for i in 0..m {
            if !y[i] {
                continue;
            }
            e += self.linear[i];
            for j in (i + 1)..m {
                if y[j] {
                    e += self.quadratic[i * m + j];
                }
            }
        }
        e
    }

    pub fn load(&self, y: &[bool]) -> u64 {
        self.weights.iter().zip(y).filter(|(_, &on)| on).map(|(&w, _)| w as u64).sum()
    }

    pub fn is_feasible(&self, y: &[bool]) -> bool {
        self.load(y) <= self.capacity as u64
    }

    /// Number of nonzero couplings.
    pub fn coupling_count(&self) -> usize {
        let m = self.width;
        (0..m).map(|i| ((i + 1)..m).filter(|&j| self.quadratic[i * m + j] != 0.0).count()).sum()
    }

    /// Symmetric dense coupling matrix, zero diagonal.
    pub fn symmetric_couplings(&self) -> Vec<f64> {
        let m = self.width;
        let mut full = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = self.quadratic[i * m + j];
                full[i * m + j] = v;
                full[j * m + i] = v;
            }
        }
        full
    }

    /// Sparse triples: `i i value` for linear terms, `i j value` for couplings.
    /// The first line carries the constant offset as a comment.
    pub fn to_triples(&self) -> String {
        let m = self.width;
        let mut s = format!("# offset {}\n", self.constant);
        for i in 0..m {
            if self.linear[i] != 0.0 {
                let _ = writeln!(s, "{i} {i} {}", self.linear[i]);
            }
            for j in (i + 1)..m {
                let v = self.quadratic[i * m + j];
                if v != 0.0 {
                    let _ = writeln!(s, "{i} {j} {v}");
                }
            }
        }
        s
    }
}

/// Dispatches on `cfg.kind`.
pub fn encode(sub: &KnapsackSub, cfg: &PenaltyConfig) -> QuboModel {
    match cfg.kind {
        PenaltyKind::Tilted => encode_tilted(sub, cfg),
        PenaltyKind::Taylor => encode_taylor(sub, cfg),
    }
}

pub fn encode_tilted(sub: &KnapsackSub, cfg: &PenaltyConfig) -> QuboModel {
    let rho = cfg.rho.unwrap_or_else(|| default_strength(sub));
    let s = cfg.s;
    let q = sub.capacity as f64;
    let mut model = QuboModel::empty(sub, rho * (q * q - s * q));
    let m = sub.width();
    for (i, it) in sub.items.iter().enumerate() {
        let w = it.weight as f64;
        model.linear[i] = it.cost + rho * w * w + rho * (s - 2.0 * q) * w;
        for j in (i + 1)..m {
            model.quadratic[i * m + j] = 2.0 * rho * w * sub.items[j].weight as f64;
        }
    }
    model
}

pub fn encode_taylor(sub: &KnapsackSub, cfg: &PenaltyConfig) -> QuboModel {
    let alpha = cfg.alpha.unwrap_or_else(|| default_strength(sub));
    let q = sub.capacity as f64;
    let mut model = QuboModel::empty(sub, alpha * (1.0 - q + 0.5 * q * q));
    let m = sub.width();
    for (i, it) in sub.items.iter().enumerate() {
        let w = it.weight as f64;
        model.linear[i] = it.cost + alpha * (1.0 - q) * w + 0.5 * alpha * w * w;
        for j in (i + 1)..m {
            model.quadratic[i * m + j] = alpha * w * sub.items[j].weight as f64;
        }
    }
    model
}

/// Closed-form tilted energy.
pub fn tilted_energy(sub: &KnapsackSub, rho: f64, s: f64, y: &[bool]) -> f64 {
    let (v, w) = sub.evaluate(y);
    let d = w as f64 - sub.capacity as f64;
    v + rho * d * (d + s)
}

/// Closed-form Taylor energy.
pub fn taylor_energy(sub: &KnapsackSub, alpha: f64, y: &[bool]) -> f64 {
    let (v, w) = sub.evaluate(y);
    let t = sub.capacity as f64 - w as f64;
    v + alpha * (0.5 * t * t - t + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthScheme {
    Direct,
    FjLr,
    FjLrSlack,
}

/// Logical qubit count. `subs` are the candidate-restricted knapsacks; without
/// them every customer is assumed to be a candidate.
pub fn width_accounting(inst: &Instance, scheme: WidthScheme, subs: Option<&[KnapsackSub]>) -> usize {
    let n = inst.n();
    let fj = subs.map_or(n, |s| s.iter().map(KnapsackSub::width).max().unwrap_or(0));
    match scheme {
        WidthScheme::Direct => inst.fleet * n * n,
        WidthScheme::FjLr => fj,
        WidthScheme::FjLrSlack => fj + slack_bits(inst.capacity),
    }
}

/// `⌈log₂(Q + 1)⌉`.
pub fn slack_bits(q: u32) -> usize {
    (u64::BITS - (q as u64).leading_zeros()) as usize
}
