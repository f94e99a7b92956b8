//! Fisher–Jaikumar assignment stage: seed customers and surrogate costs.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Instance;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("angular seed selection needs coordinates")]
    NoCoordinates,
    #[error("fleet of {fleet} exceeds {n} customers")]
    TooFewCustomers { fleet: usize, n: usize },
    #[error("invalid seed {0}")]
    InvalidSeed(usize),
    #[error("brute force limited to n <= 10 and K <= 3 (got n={n}, K={k})")]
    TooLarge { n: usize, k: usize },
    #[error("no capacity-feasible assignment exists")]
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    #[default]
    Angular,
    Farthest,
}

/// Seeds and the `K × n` surrogate cost matrix of the assignment GAP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapModel {
    pub instance: String,
    /// One customer id per vehicle.
    pub seeds: Vec<usize>,
    n: usize,
    /// Row-major by vehicle: `a[k * n + (i - 1)]`.
    a: Vec<f64>,
}

impl GapModel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.seeds.len()
    }

    /// Surrogate cost of giving customer `i` (1-based) to vehicle `k`.
    #[inline]
    pub fn a(&self, i: usize, k: usize) -> f64 {
        self.a[k * self.n + i - 1]
    }

    /// Costs of vehicle `k` for customers `1..=n`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.a[k * self.n..(k + 1) * self.n]
    }

    /// Builds a model from an explicit cost matrix, `rows[k][i-1]`.
    pub fn from_rows(instance: impl Into<String>, seeds: Vec<usize>, rows: Vec<Vec<f64>>) -> Self {
        let n = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n), "ragged surrogate matrix");
        assert_eq!(seeds.len(), rows.len());
        GapModel { instance: instance.into(), seeds, n, a: rows.concat() }
    }

    /// Total surrogate cost of an assignment `owner[i-1] = k`.
    pub fn assignment_cost(&self, owner: &[usize]) -> f64 {
        owner.iter().enumerate().map(|(idx, &k)| self.a(idx + 1, k)).sum()
    }
}

fn polar_angle(origin: (f64, f64), p: (f64, f64)) -> f64 {
    let t = (p.1 - origin.1).atan2(p.0 - origin.0);
    if t < 0.0 { t + TAU } else { t }
}

/// Picks one seed customer per vehicle.
pub fn select_seeds(inst: &Instance, mode: SeedMode) -> Result<Vec<usize>, AssignError> {
    let n = inst.n();
    let k = inst.fleet;
    if k > n {
        return Err(AssignError::TooFewCustomers { fleet: k, n });
    }
    // Farther wins, then lower id.
    let better = |a: usize, b: usize| inst.c(0, a) > inst.c(0, b) || (inst.c(0, a) == inst.c(0, b) && a < b);
    match mode {
        SeedMode::Farthest => {
            let mut ids: Vec<usize> = (1..=n).collect();
            ids.sort_by(|&a, &b| {
                inst.c(0, b).partial_cmp(&inst.c(0, a)).unwrap().then(a.cmp(&b))
            });
            ids.truncate(k);
            Ok(ids)
        }
        SeedMode::Angular => {
            let coords = inst.coords.as_ref().ok_or(AssignError::NoCoordinates)?;
            let depot = coords[0];
            let mut ids: Vec<(f64, usize)> = (1..=n).map(|i| (polar_angle(depot, coords[i]), i)).collect();
            ids.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let seeds = (0..k)
                .map(|s| {
                    let lo = s * n / k;
                    let hi = (s + 1) * n / k;
                    ids[lo..hi].iter().map(|&(_, i)| i).reduce(|a, b| if better(b, a) { b } else { a }).unwrap()
                })
                .collect();
            Ok(seeds)
        }
    }
}

/// `a_ik = c_0i + c_{i,s_k} − c_{0,s_k}`.
pub fn surrogate_costs(inst: &Instance, seeds: &[usize]) -> Result<GapModel, AssignError> {
    let n = inst.n();
    for (pos, &s) in seeds.iter().enumerate() {
        if s == 0 || s > n || seeds[..pos].contains(&s) {
            return Err(AssignError::InvalidSeed(s));
        }
    }
    let mut a = Vec::with_capacity(seeds.len() * n);
    for &s in seeds {
        for i in 1..=n {
            a.push(inst.c(0, i) + inst.c(i, s) - inst.c(0, s));
        }
    }
    Ok(GapModel { instance: inst.name.clone(), seeds: seeds.to_vec(), n, a })
}

/// Seeds plus surrogate costs in one call.
pub fn build_gap_model(inst: &Instance, mode: SeedMode) -> Result<GapModel, AssignError> {
    let seeds = select_seeds(inst, mode)?;
    surrogate_costs(inst, &seeds)
}

/// Exhaustive GAP solve over all `K^n` assignments. Returns `owner[i-1]`
/// and the optimal value; ties keep the lexicographically first owner vector.
pub fn gap_brute_force(model: &GapModel, inst: &Instance) -> Result<(Vec<usize>, f64), AssignError> {
    let (n, k) = (model.n(), model.k());
    if n > 10 || k > 3 {
        return Err(AssignError::TooLarge { n, k });
    }
    let q = inst.capacity as u64;
    let mut owner = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let total = (k as u64).pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for slot in owner.iter_mut().rev() {
            *slot = (c % k as u64) as usize;
            c /= k as u64;
        }
        let mut loads = [0u64; 3];
        for (idx, &v) in owner.iter().enumerate() {
            loads[v] += inst.demands[idx + 1] as u64;
        }
        if loads.iter().any(|&l| l > q) {
            continue;
        }
        let val = model.assignment_cost(&owner);
        if best.as_ref().is_none_or(|(_, b)| val < *b) {
            best = Some((owner.clone(), val));
        }
    }
    best.ok_or(AssignError::Infeasible)
}
