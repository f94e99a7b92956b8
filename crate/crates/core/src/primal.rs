//! Primal recovery: repair sampled selections into a feasible assignment,
//! route each cluster, and pick the best candidate among samples.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::GapModel;
use crate::instance::Instance;
use crate::par::{self, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum PrimalError {
    #[error("repair could not produce a capacity-feasible assignment")]
    Infeasible,
    #[error("every candidate failed repair")]
    AllInfeasible,
    #[error("instance has no best-known value")]
    MissingBks,
}

/// Customer sets and loads per vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Sorted customer ids per vehicle.
    pub clusters: Vec<Vec<usize>>,
    pub loads: Vec<u64>,
}

impl Assignment {
    /// Checks disjoint cover of all customers and capacity on every vehicle.
    pub fn is_feasible(&self, inst: &Instance) -> bool {
        let mut seen = vec![false; inst.n() + 1];
        for (k, cl) in self.clusters.iter().enumerate() {
            let mut load = 0u64;
            for &i in cl {
                if i == 0 || i > inst.n() || seen[i] {
                    return false;
                }
                seen[i] = true;
                load += inst.demands[i] as u64;
            }
            if load != self.loads[k] || load > inst.capacity as u64 {
                return false;
            }
        }
        seen[1..].iter().all(|&s| s)
    }

    /// `owner[i-1]` per customer.
    pub fn owners(&self, n: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; n];
        for (k, cl) in self.clusters.iter().enumerate() {
            for &i in cl {
                owner[i - 1] = k;
            }
        }
        owner
    }
}

/// Dense `K × n` cost table `c[k][i-1]` used by repair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    n: usize,
    c: Vec<f64>,
}

impl CostTable {
    pub fn new(k: usize, n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut c = Vec::with_capacity(k * n);
        for v in 0..k {
            for i in 1..=n {
                c.push(f(i, v));
            }
        }
        CostTable { n, c }
    }

    /// Surrogate costs `a_ik`.
    pub fn surrogate(model: &GapModel) -> Self {
        Self::new(model.k(), model.n(), |i, k| model.a(i, k))
    }

    /// Reduced costs `a_ik − λ_i`.
    pub fn reduced(model: &GapModel, lambda: &[f64]) -> Self {
        Self::new(model.k(), model.n(), |i, k| model.a(i, k) - lambda[i - 1])
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.c[k * self.n + i - 1]
    }

    pub fn k(&self) -> usize {
        self.c.len().checked_div(self.n).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairCost {
    #[default]
    Reduced,
    Surrogate,
}

/// Order in which unassigned customers are completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionOrder {
    #[default]
    DecreasingDemand,
    IncreasingMinCost,
}

fn argmin_vehicle(costs: &CostTable, i: usize, ok: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in 0..costs.k() {
        if ok(k) && best.is_none_or(|b| costs.get(i, k) < costs.get(i, b)) {
            best = Some(k);
        }
    }
    best
}

/// Two-stage repair. Stage 1 settles duplicated or single claims in id order,
/// giving each customer to the cheapest claiming vehicle that still has room.
/// Stage 2 inserts the rest into the cheapest vehicle with room, or swaps out
/// the resident whose move-out is cheapest; displaced customers are re-queued.
pub fn repair(
    candidates: &[Vec<usize>],
    costs: &CostTable,
    inst: &Instance,
    order: CompletionOrder,
) -> Result<Assignment, PrimalError> {
    let n = inst.n();
    let k = costs.k();
    let q = inst.capacity as u64;
    let d = |i: usize| inst.demands[i] as u64;
    let mut claims = vec![Vec::new(); n + 1];
    for (v, sel) in candidates.iter().enumerate().take(k) {
        for &i in sel {
            if (1..=n).contains(&i) && !claims[i].contains(&v) {
                claims[i].push(v);
            }
        }
    }
    let mut owner = vec![usize::MAX; n + 1];
    let mut loads = vec![0u64; k];
    let mut pending = Vec::new();
    for i in 1..=n {
        if d(i) > q {
            return Err(PrimalError::Infeasible);
        }
        let pick = argmin_vehicle(costs, i, |v| claims[i].contains(&v) && loads[v] + d(i) <= q);
        match pick {
            Some(v) => {
                owner[i] = v;
                loads[v] += d(i);
            }
            None => pending.push(i),
        }
    }

    match order {
        CompletionOrder::DecreasingDemand => pending.sort_by(|&a, &b| d(b).cmp(&d(a)).then(a.cmp(&b))),
        CompletionOrder::IncreasingMinCost => {
            let min_c = |i: usize| (0..k).map(|v| costs.get(i, v)).fold(f64::INFINITY, f64::min);
            pending.sort_by(|&a, &b| min_c(a).total_cmp(&min_c(b)).then(a.cmp(&b)));
        }
    }
    let mut queue: VecDeque<usize> = pending.into();
    let mut exchanges_left = 4 * n + k;
    while let Some(i) = queue.pop_front() {
        if let Some(v) = argmin_vehicle(costs, i, |v| loads[v] + d(i) <= q) {
            owner[i] = v;
            loads[v] += d(i);
            continue;
        }
        if exchanges_left == 0 {
            return Err(PrimalError::Infeasible);
        }
        exchanges_left -= 1;
        let mut best: Option<(f64, usize, usize)> = None;
        for j in 1..=n {
            let v = owner[j];
            if v == usize::MAX || loads[v] - d(j) + d(i) > q {
                continue;
            }
            let delta = costs.get(i, v) - costs.get(j, v);
            if best.is_none_or(|(b, bv, bj)| delta < b || (delta == b && (v, j) < (bv, bj))) {
                best = Some((delta, v, j));
            }
        }
        let (_, v, j) = best.ok_or(PrimalError::Infeasible)?;
        owner[j] = usize::MAX;
        loads[v] = loads[v] - d(j) + d(i);
        owner[i] = v;
        queue.push_back(j);
    }

    let mut clusters = vec![Vec::new(); k];
    for i in 1..=n {
        clusters[owner[i]].push(i);
    }
    let out = Assignment { clusters, loads };
    debug_assert!(out.is_feasible(inst));
    Ok(out)
}

pub const TWO_OPT_PASSES: usize = 50;
const IMPROVE_EPS: f64 = 1e-9;

/// Closed tour cost; `tour` lists customers only.
pub fn tour_cost(inst: &Instance, tour: &[usize]) -> f64 {
    if tour.is_empty() {
        return 0.0;
    }
    let inner: f64 = tour.windows(2).map(|w| inst.c(w[0], w[1])).sum();
    inst.c(0, tour[0]) + inner + inst.c(tour[tour.len() - 1], 0)
}

/// Nearest-neighbour order from the depot, ties to the lower id.
pub fn nearest_neighbor(inst: &Instance, cluster: &[usize]) -> Vec<usize> {
    let mut left: Vec<usize> = cluster.to_vec();
    left.sort_unstable();
    let mut tour = Vec::with_capacity(left.len());
    let mut at = 0;
    while !left.is_empty() {
        let pos = (0..left.len())
            .reduce(|b, p| if inst.c(at, left[p]) < inst.c(at, left[b]) { p } else { b })
            .unwrap();
        at = left.remove(pos);
        tour.push(at);
    }
    tour
}

fn padded(tour: &[usize], p: usize) -> usize {
    if p == 0 || p == tour.len() + 1 { 0 } else { tour[p - 1] }
}

/// One first-improvement 2-opt scan; returns whether the tour changed.
fn two_opt_pass(inst: &Instance, tour: &mut [usize]) -> bool {
    let len = tour.len();
    let mut improved = false;
    // Positions 1..=len in the depot-padded tour.
    for i in 1..len {
        for j in (i + 1)..=len {
            let (a, b, c, e) = (padded(tour, i - 1), padded(tour, i), padded(tour, j), padded(tour, j + 1));
            let delta = inst.c(a, c) + inst.c(b, e) - inst.c(a, b) - inst.c(c, e);
            if delta < -IMPROVE_EPS {
                tour[i - 1..j].reverse();
                improved = true;
            }
        }
    }
    improved
}

/// One first-improvement scan moving a single customer to another position.
fn relocate_pass(inst: &Instance, tour: &mut Vec<usize>) -> bool {
    let len = tour.len();
    let mut improved = false;
    for from in 0..len {
        let node = tour[from];
        let prev = if from == 0 { 0 } else { tour[from - 1] };
        let next = if from + 1 == len { 0 } else { tour[from + 1] };
        let removed = inst.c(prev, node) + inst.c(node, next) - inst.c(prev, next);
        let mut rest = tour.clone();
        rest.remove(from);
        let best = (0..=rest.len())
            .filter(|&at| at != from)
            .map(|at| {
                let a = if at == 0 { 0 } else { rest[at - 1] };
                let b = if at == rest.len() { 0 } else { rest[at] };
                (at, inst.c(a, node) + inst.c(node, b) - inst.c(a, b))
            })
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((at, added)) = best {
            if added - removed < -IMPROVE_EPS {
                rest.insert(at, node);
                *tour = rest;
                improved = true;
            }
        }
    }
    improved
}

/// First-improvement 2-opt over the closed tour, at most `TWO_OPT_PASSES` passes.
pub fn two_opt(inst: &Instance, tour: &mut [usize]) {
    if tour.len() < 3 {
        return;
    }
    for _ in 0..TWO_OPT_PASSES {
        if !two_opt_pass(inst, tour) {
            break;
        }
    }
}

/// Alternating 2-opt and single-customer relocation passes until neither
/// improves, at most `TWO_OPT_PASSES` rounds.
pub fn improve_tour(inst: &Instance, tour: &mut Vec<usize>) {
    if tour.len() < 3 {
        return;
    }
    for _ in 0..TWO_OPT_PASSES {
        let a = two_opt_pass(inst, tour);
        let b = relocate_pass(inst, tour);
        if !a && !b {
            break;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSet {
    /// Node lists starting and ending at the depot; empty for unused vehicles.
    pub routes: Vec<Vec<usize>>,
    pub cost: f64,
    pub assignment_feasible: bool,
    pub route_feasible: bool,
}

/// Nearest-neighbour tour plus local improvement per cluster.
pub fn reconstruct(assignment: &Assignment, inst: &Instance, exec: Execution) -> RouteSet {
    let tours = par::map(exec, &assignment.clusters, |cl| {
        let mut t = nearest_neighbor(inst, cl);
        improve_tour(inst, &mut t);
        t
    });
    let cost = tours.iter().map(|t| tour_cost(inst, t)).sum();
    let routes: Vec<Vec<usize>> = tours
        .into_iter()
        .map(|t| if t.is_empty() { t } else { std::iter::once(0).chain(t).chain(std::iter::once(0)).collect() })
        .collect();
    let assignment_feasible = assignment.is_feasible(inst);
    let route_feasible = routes_feasible(&routes, inst);
    RouteSet { routes, cost, assignment_feasible, route_feasible }
}

/// Every customer visited once, every route depot-anchored and within capacity.
pub fn routes_feasible(routes: &[Vec<usize>], inst: &Instance) -> bool {
    let mut seen = vec![false; inst.n() + 1];
    for r in routes {
        if r.is_empty() {
            continue;
        }
        if r.len() < 3 || r[0] != 0 || r[r.len() - 1] != 0 {
            return false;
        }
        let mut load = 0u64;
        for &i in &r[1..r.len() - 1] {
            if i == 0 || i > inst.n() || seen[i] {
                return false;
            }
            seen[i] = true;
            load += inst.demands[i] as u64;
        }
        if load > inst.capacity as u64 {
            return false;
        }
    }
    seen[1..].iter().all(|&s| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Proxy,
    Routing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCandidate {
    pub assignment: Assignment,
    pub score: f64,
    /// Sample index of the winning candidate.
    pub index: usize,
    /// Candidates that survived repair.
    pub repaired: usize,
}

pub struct RepairSettings<'a> {
    pub costs: &'a CostTable,
    pub order: CompletionOrder,
}

/// Candidate `j` takes sample `j` of every vehicle (vehicles with fewer samples
/// contribute an empty selection). Each candidate is repaired and scored; the
/// lowest score wins, ties to the lower index.
pub fn best_of_samples(
    samples: &[Vec<Vec<usize>>],
    mode: ScoreMode,
    inst: &Instance,
    model: &GapModel,
    repair_with: &RepairSettings<'_>,
    exec: Execution,
) -> Result<BestCandidate, PrimalError> {
    let count = samples.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let empty: Vec<usize> = Vec::new();
    let scored = par::map_range(exec, count, |j| {
        let cand: Vec<Vec<usize>> =
            samples.iter().map(|per| per.get(j).unwrap_or(&empty).clone()).collect();
        let a = repair(&cand, repair_with.costs, inst, repair_with.order).ok()?;
        let score = match mode {
            ScoreMode::Proxy => model.assignment_cost(&a.owners(inst.n())),
            ScoreMode::Routing => reconstruct(&a, inst, Execution::Sequential).cost,
        };
        Some((a, score))
    });
    let repaired = scored.iter().filter(|s| s.is_some()).count();
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in scored.iter().enumerate() {
        if let Some((_, score)) = s {
            if best.is_none_or(|(_, b)| *score < b) {
                best = Some((j, *score));
            }
        }
    }
    let (index, score) = best.ok_or(PrimalError::AllInfeasible)?;
    let assignment = scored.into_iter().nth(index).flatten().unwrap().0;
    Ok(BestCandidate { assignment, score, index, repaired })
}

/// `100·(cost − bks)/bks`.
pub fn gap_pct(cost: f64, bks: Option<f64>) -> Result<f64, PrimalError> {
    match bks {
        Some(b) if b > 0.0 => Ok(100.0 * (cost - b) / b),
        _ => Err(PrimalError::MissingBks),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(coords: Vec<(f64, f64)>, demands: Vec<u32>, q: u32, k: usize) -> Instance {
        Instance::from_coords("t", coords, demands, q, k).unwrap()
    }

    #[test]
    fn repair_resolves_duplicate() {
        let inst = line(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)], vec![0, 2, 3, 4], 5, 2);
        let costs = CostTable::new(2, 3, |i, k| if i == 2 { [1.0, 2.0][k] } else { 0.0 });
        let a = repair(&[vec![1, 2], vec![2, 3]], &costs, &inst, CompletionOrder::DecreasingDemand).unwrap();
        assert_eq!(a.clusters, vec![vec![1, 2], vec![3]]);
        assert_eq!(a.loads, vec![5, 4]);
    }

    #[test]
    fn repair_completes_from_nothing() {
        let inst = line(vec![(0.0, 0.0); 5], vec![0, 1, 1, 1, 1], 2, 2);
        let costs = CostTable::new(2, 4, |_, _| 0.0);
        let a = repair(&[vec![], vec![]], &costs, &inst, CompletionOrder::DecreasingDemand).unwrap();
        assert!(a.is_feasible(&inst));
    }

    #[test]
    fn repair_needs_swap() {
        // Claims pack 3 and 4 together, so customer 2 only fits after a swap.
        let inst = line(vec![(0.0, 0.0); 5], vec![0, 3, 3, 2, 2], 5, 2);
        let costs = CostTable::new(2, 4, |_, k| k as f64);
        let a = repair(&[vec![3, 4], vec![]], &costs, &inst, CompletionOrder::DecreasingDemand).unwrap();
        assert!(a.is_feasible(&inst));
        assert_eq!(a.clusters, vec![vec![2, 4], vec![1, 3]]);
    }

    #[test]
    fn repair_oversized_customer() {
        let mut inst = line(vec![(0.0, 0.0), (1.0, 0.0)], vec![0, 1], 1, 1);
        inst.demands[1] = 2;
        let costs = CostTable::new(1, 1, |_, _| 0.0);
        assert_eq!(repair(&[vec![1]], &costs, &inst, CompletionOrder::DecreasingDemand), Err(PrimalError::Infeasible));
    }

    #[test]
    fn reconstruct_line() {
        let inst = line(vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], vec![0, 1, 1], 5, 1);
        let a = Assignment { clusters: vec![vec![2, 1]], loads: vec![2] };
        let r = reconstruct(&a, &inst, Execution::Sequential);
        assert_eq!(r.routes, vec![vec![0, 1, 2, 0]]);
        assert_eq!(r.cost, 4.0);
        assert!(r.assignment_feasible && r.route_feasible);
    }

    #[test]
    fn reconstruct_single_and_empty() {
        let inst = line(vec![(0.0, 0.0), (3.0, 4.0)], vec![0, 1], 5, 2);
        let a = Assignment { clusters: vec![vec![], vec![1]], loads: vec![0, 1] };
        let r = reconstruct(&a, &inst, Execution::Sequential);
        assert_eq!(r.cost, 10.0);
        assert!(r.routes[0].is_empty());
    }

    #[test]
    fn two_opt_uncrosses() {
        let inst = line(
            vec![(0.0, 0.0), (0.0, 10.0), (10.0, 10.0), (10.0, 0.0), (5.0, -1.0)],
            vec![0, 1, 1, 1, 1],
            10,
            1,
        );
        let mut t = vec![2, 1, 3, 4];
        let before = tour_cost(&inst, &t);
        two_opt(&inst, &mut t);
        assert!(tour_cost(&inst, &t) < before);
        let once = t.clone();
        two_opt(&inst, &mut t);
        assert_eq!(t, once);
    }

    #[test]
    fn gap_examples() {
        assert!((gap_pct(361.0, Some(247.0)).unwrap() - 46.15).abs() < 0.01);
        assert_eq!(gap_pct(5.0, Some(5.0)).unwrap(), 0.0);
        assert!((gap_pct(521.0 * 1.1134, Some(521.0)).unwrap() - 11.34).abs() < 0.01);
        assert_eq!(gap_pct(1.0, None), Err(PrimalError::MissingBks));
    }

    #[test]
    fn best_of_samples_picks_lowest_proxy() {
        let inst = line(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], vec![0, 1, 1], 1, 2);
        let model = GapModel::from_rows("t", vec![1, 2], vec![vec![0.0, 5.0], vec![5.0, 0.0]]);
        let costs = CostTable::surrogate(&model);
        let settings = RepairSettings { costs: &costs, order: CompletionOrder::DecreasingDemand };
        let one = vec![vec![vec![1]], vec![vec![2]]];
        let b = best_of_samples(&one, ScoreMode::Proxy, &inst, &model, &settings, Execution::Sequential).unwrap();
        assert_eq!((b.index, b.score), (0, 0.0));
        let two = vec![vec![vec![2], vec![1]], vec![vec![1], vec![2]]];
        let b = best_of_samples(&two, ScoreMode::Routing, &inst, &model, &settings, Execution::Parallel).unwrap();
        assert_eq!(b.index, 0);
        let b = best_of_samples(&two, ScoreMode::Proxy, &inst, &model, &settings, Execution::Parallel).unwrap();
        assert_eq!((b.index, b.score), (1, 0.0));
    }

    proptest! {
        #[test]
        fn repair_is_safe(
            demands in prop::collection::vec(1u32..8, 1..12),
            k in 1usize..4,
            q in 4u32..16,
            claims in prop::collection::vec(prop::collection::vec(0usize..13, 0..8), 3),
            costs in prop::collection::vec(-10.0f64..10.0, 36),
        ) {
            let n = demands.len();
            let q = q.max(*demands.iter().max().unwrap());
            let d: Vec<u32> = std::iter::once(0).chain(demands.iter().copied()).collect();
            let total: u32 = demands.iter().sum();
            let fleet = k.max(total.div_ceil(q) as usize);
            let inst = line(vec![(0.0, 0.0); n + 1], d, q, fleet);
            let table = CostTable::new(fleet, n, |i, v| costs[(v * n + i) % costs.len()]);
            let cands: Vec<Vec<usize>> = claims.iter().cycle().take(fleet).cloned().collect();
            for order in [CompletionOrder::DecreasingDemand, CompletionOrder::IncreasingMinCost] {
                if let Ok(a) = repair(&cands, &table, &inst, order) {
                    prop_assert!(a.is_feasible(&inst));
                }
            }
        }

        #[test]
        fn two_opt_never_worse(pts in prop::collection::vec((0i32..100, 0i32..100), 1..10)) {
            let coords: Vec<(f64, f64)> = std::iter::once((50.0, 50.0)).chain(pts.iter().map(|&(x, y)| (x as f64, y as f64))).collect();
            let n = pts.len();
            let inst = line(coords, std::iter::once(0).chain(std::iter::repeat_n(1, n)).collect(), n as u32, 1);
            let mut t = nearest_neighbor(&inst, &(1..=n).collect::<Vec<_>>());
            let before = tour_cost(&inst, &t);
            two_opt(&inst, &mut t);
            let after = tour_cost(&inst, &t);
            prop_assert!(after <= before + 1e-9);
            improve_tour(&inst, &mut t);
            let polished = tour_cost(&inst, &t);
            prop_assert!(polished <= after + 1e-9);
            let fixed = t.clone();
            improve_tour(&inst, &mut t);
            prop_assert_eq!(&t, &fixed);
            let mut sorted = fixed.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (1..=n).collect::<Vec<_>>());
        }
    }
}
