//! Lagrangian relaxation of the assign-once constraints.
//!
//! Multipliers are indexed by customer: `lambda[i - 1]` belongs to customer `i`.

use serde::{Deserialize, Serialize};

use crate::assign::GapModel;
use crate::instance::Instance;
use crate::par::{self, Execution};

pub const LAMBDA_MIN: f64 = -400.0;
pub const LAMBDA_MAX: f64 = 800.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub customer: usize,
    pub weight: u32,
    /// Adjusted cost `a_ik − λ_i`.
    pub cost: f64,
}

/// One vehicle's knapsack: minimize `Σ cost·y` subject to `Σ weight·y ≤ capacity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnapsackSub {
    pub vehicle: usize,
    pub items: Vec<Item>,
    pub capacity: u32,
}

impl KnapsackSub {
    pub fn width(&self) -> usize {
        self.items.len()
    }

    pub fn weights(&self) -> Vec<u32> {
        self.items.iter().map(|it| it.weight).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.cost).collect()
    }

    /// Objective and load of a selection given as item flags.
    pub fn evaluate(&self, y: &[bool]) -> (f64, u64) {
        self.items.iter().zip(y).filter(|(_, &on)| on).fold((0.0, 0), |(v, w), (it, _)| {
            (v + it.cost, w + it.weight as u64)
        })
    }

    pub fn is_feasible(&self, y: &[bool]) -> bool {
        self.evaluate(y).1 <= self.capacity as u64
    }

    /// Customer ids of the flagged items.
    pub fn decode(&self, y: &[bool]) -> Vec<usize> {
        self.items.iter().zip(y).filter(|(_, &on)| on).map(|(it, _)| it.customer).collect()
    }
}

fn build_subs(model: &GapModel, inst: &Instance, lambda: &[f64], restrict: bool) -> Vec<KnapsackSub> {
    assert_eq!(lambda.len(), model.n(), "lambda length must equal customer count");
    (0..model.k())
        .map(|k| {
            let items = (1..=model.n())
                .filter_map(|i| {
                    let cost = model.a(i, k) - lambda[i - 1];
                    (!restrict || cost < 0.0).then_some(Item { customer: i, weight: inst.demands[i], cost })
                })
                .collect();
            KnapsackSub { vehicle: k, items, capacity: inst.capacity }
        })
        .collect()
}

/// Per-vehicle knapsacks keeping only items with positive reduced profit `λ_i − a_ik > 0`.
pub fn restrict_candidates(model: &GapModel, inst: &Instance, lambda: &[f64]) -> Vec<KnapsackSub> {
    build_subs(model, inst, lambda, true)
}

/// Per-vehicle knapsacks over every customer.
pub fn full_subproblems(model: &GapModel, inst: &Instance, lambda: &[f64]) -> Vec<KnapsackSub> {
    build_subs(model, inst, lambda, false)
}

/// `L(λ)` and the minimizing selections (customer ids per vehicle).
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    pub selections: Vec<Vec<usize>>,
}

/// Evaluates `L(λ) = Σ λ_i + Σ_k min_y Σ (a_ik − λ_i) y_ik`. The oracle returns
/// item flags for a sub; vehicles are solved independently.
pub fn dual_value<E, F>(subs: &[KnapsackSub], lambda: &[f64], exec: Execution, oracle: F) -> Result<DualEval, E>
where
    E: Send,
    F: Fn(&KnapsackSub) -> Result<Vec<bool>, E> + Sync + Send,
{
    let picks = par::try_map_range(exec, subs.len(), |k| oracle(&subs[k]))?;
    let mut value: f64 = lambda.iter().sum();
    let mut selections = Vec::with_capacity(subs.len());
    for (sub, y) in subs.iter().zip(&picks) {
        value += sub.evaluate(y).0;
        selections.push(sub.decode(y));
    }
    Ok(DualEval { value, selections })
}

/// `g_i = 1 − Σ_k y_ik`.
pub fn subgradient(n: usize, selections: &[Vec<usize>]) -> Vec<f64> {
    let mut g = vec![1.0; n];
    for sel in selections {
        for &i in sel {
            g[i - 1] -= 1.0;
        }
    }
    g
}

/// Multipliers, last subgradient and bound tracking for the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub g: Vec<f64>,
    /// Best dual bound seen.
    pub lb: f64,
    /// Best repaired assignment value under the surrogate costs.
    pub ub: f64,
    pub t: usize,
}

impl DualState {
    /// Starts at `λ_i = min_k a_ik`, clamped to the bounds.
    pub fn new(model: &GapModel, bounds: (f64, f64)) -> Self {
        let lambda = (1..=model.n())
            .map(|i| {
                (0..model.k()).map(|k| model.a(i, k)).fold(f64::INFINITY, f64::min).clamp(bounds.0, bounds.1)
            })
            .collect();
        DualState { lambda, g: vec![0.0; model.n()], lb: f64::NEG_INFINITY, ub: f64::INFINITY, t: 0 }
    }

    /// Records a dual value; returns whether the best bound improved.
    pub fn record_lb(&mut self, value: f64) -> bool {
        let better = value > self.lb;
        if better {
            self.lb = value;
        }
        better
    }

    /// Records a primal value; returns whether the best bound improved.
    pub fn record_ub(&mut self, value: f64) -> bool {
        let better = value < self.ub;
        if better {
            self.ub = value;
        }
        better
    }
}
