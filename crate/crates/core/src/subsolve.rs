//! Knapsack subproblem solvers: an exact oracle and a noisy Gibbs sampler over
//! the QUBO, plus sample aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::KnapsackSub;
use crate::par::{self, mix_seed, Execution};
use crate::qubo::QuboModel;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SubsolveError {
    #[error("knapsack too large for exact solve: {items} items, capacity {capacity}")]
    TooLarge { items: usize, capacity: u32 },
    #[error("empty sample batch")]
    EmptyBatch,
    #[error("cvar alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
}

/// DP table cell budget; larger instances fall back to enumeration.
pub const DP_CELL_LIMIT: usize = 1 << 25;
pub const ENUM_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    pub selection: Vec<bool>,
    pub value: f64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact `min Σ ã y` subject to `Σ w y ≤ Q`. Among optimal selections the
/// lexicographically smallest flag vector (false < true, first item first) wins.
pub fn solve_exact(sub: &KnapsackSub) -> Result<KnapsackSolution, SubsolveError> {
    let m = sub.width();
    if m == 0 {
        return Ok(KnapsackSolution { selection: vec![], value: 0.0 });
    }
    let g = sub.items.iter().fold(sub.capacity as u64, |g, it| gcd(g, it.weight as u64)).max(1);
    let cap = (sub.capacity as u64 / g) as usize;
    let w: Vec<usize> = sub.items.iter().map(|it| (it.weight as u64 / g) as usize).collect();
    let a = sub.costs();

    if m.saturating_mul(cap + 1) <= DP_CELL_LIMIT {
        // best[i][c]: optimum over items i.. with remaining capacity c.
        let width = cap + 1;
        let mut best = vec![0.0f64; (m + 1) * width];
        for i in (0..m).rev() {
            for c in 0..width {
                let skip = best[(i + 1) * width + c];
                best[i * width + c] =
                    if w[i] <= c { skip.min(a[i] + best[(i + 1) * width + c - w[i]]) } else { skip };
            }
        }
        let mut selection = vec![false; m];
        let mut c = cap;
        for i in 0..m {
            let here = best[i * width + c];
            let skip = best[(i + 1) * width + c];
            if skip > here {
                selection[i] = true;
                c -= w[i];
            }
        }
        let value = sub.evaluate(&selection).0;
        return Ok(KnapsackSolution { selection, value });
    }
    if m <= ENUM_LIMIT {
        let mut best: Option<(f64, u32)> = None;
        for code in 0u32..(1 << m) {
            // Item 0 is the most significant bit so ascending codes are lexicographic.
            let (mut v, mut load) = (0.0, 0usize);
            for i in 0..m {
                if code >> (m - 1 - i) & 1 == 1 {
                    v += a[i];
                    load += w[i];
                }
            }
            if load <= cap && best.is_none_or(|(b, _)| v < b) {
                best = Some((v, code));
            }
        }
        let (value, code) = best.unwrap();
        let selection = (0..m).map(|i| code >> (m - 1 - i) & 1 == 1).collect();
        return Ok(KnapsackSolution { selection, value });
    }
    Err(SubsolveError::TooLarge { items: m, capacity: sub.capacity })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub shots: usize,
    pub temperature: f64,
    pub sweeps: usize,
    pub noise_flip_prob: f64,
    pub seed: u64,
    pub cvar_alpha: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { shots: 256, temperature: 1.0, sweeps: 200, noise_flip_prob: 0.02, seed: 0, cvar_alpha: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub bitstrings: Vec<Vec<bool>>,
    pub energies: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl SampleBatch {
    pub fn shots(&self) -> usize {
        self.bitstrings.len()
    }

    /// Index of the lowest-energy sample, ties to the lower index.
    pub fn argmin(&self) -> Option<usize> {
        (0..self.energies.len()).reduce(|b, i| if self.energies[i] < self.energies[b] { i } else { b })
    }
}

const BETA_START: f64 = 0.01;

/// One Gibbs chain: the first half of the sweeps anneals `β` geometrically
/// from `BETA_START` to `1/T`, the second half samples at `T`.
fn gibbs_chain(model: &QuboModel, couplings: &[f64], cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let m = model.width;
    let mut y: Vec<bool> = (0..m).map(|_| rng.random::<bool>()).collect();
    let mut field = model.linear.clone();
    for i in 0..m {
        if y[i] {
            for j in 0..m {
                field[j] += couplings[i * m + j];
            }
        }
    }
    let beta_t = 1.0 / cfg.temperature.max(1e-12);
    let anneal = cfg.sweeps / 2;
    for sweep in 0..cfg.sweeps {
        let beta = if sweep < anneal {
            let frac = (sweep + 1) as f64 / anneal as f64;
            beta_t.min(BETA_START) * (beta_t / beta_t.min(BETA_START)).powf(frac)
        } else {
            beta_t
        };
        for i in 0..m {
            // Energy change of setting y_i = 1 rather than 0 is field[i].
            let x = (beta * field[i]).clamp(-700.0, 700.0);
            let on = rng.random::<f64>() < 1.0 / (1.0 + x.exp());
            if on != y[i] {
                y[i] = on;
                let sign = if on { 1.0 } else { -1.0 };
                for j in 0..m {
                    field[j] += sign * couplings[i * m + j];
                }
            }
        }
    }
    if cfg.noise_flip_prob > 0.0 {
        for bit in y.iter_mut() {
            if rng.random::<f64>() < cfg.noise_flip_prob {
                *bit = !*bit;
            }
        }
    }
    y
}

/// Draws `cfg.shots` independent samples. Each shot has its own seeded
/// stream, so the batch is identical in sequential and parallel modes.
pub fn sample_noisy(model: &QuboModel, cfg: &SamplerConfig, exec: Execution) -> SampleBatch {
    let couplings = model.symmetric_couplings();
    let bitstrings: Vec<Vec<bool>> = par::map_range(exec, cfg.shots.max(1), |shot| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, shot as u64));
        gibbs_chain(model, &couplings, cfg, &mut rng)
    });
    let energies = bitstrings.iter().map(|y| model.energy(y)).collect();
    let feasible = bitstrings.iter().map(|y| model.is_feasible(y)).collect();
    SampleBatch { bitstrings, energies, feasible }
}

/// Mean of the `⌈αS⌉` lowest energies.
pub fn cvar_score(energies: &[f64], alpha: f64) -> Result<f64, SubsolveError> {
    if energies.is_empty() {
        return Err(SubsolveError::EmptyBatch);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SubsolveError::BadAlpha(alpha));
    }
    let mut e = energies.to_vec();
    e.sort_by(f64::total_cmp);
    let take = ((alpha * e.len() as f64 - 1e-9).ceil() as usize).clamp(1, e.len());
    Ok(e[..take].iter().sum::<f64>() / take as f64)
}

/// Fraction of samples within capacity.
pub fn feasibility_yield(batch: &SampleBatch, sub: &KnapsackSub) -> f64 {
    if batch.bitstrings.is_empty() {
        return 0.0;
    }
    let ok = batch.bitstrings.iter().filter(|y| sub.is_feasible(y)).count();
    ok as f64 / batch.shots() as f64
}

/// Objective used to pick a sampling temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleObjective {
    Mean,
    Cvar(f64),
}

impl SampleObjective {
    pub fn score(self, energies: &[f64]) -> Result<f64, SubsolveError> {
        match self {
            SampleObjective::Mean => cvar_score(energies, 1.0),
            SampleObjective::Cvar(a) => cvar_score(energies, a),
        }
    }
}

/// Samples at each `cfg.temperature × factor` and keeps the batch with the
/// lowest objective (ties to the earlier factor).
pub fn tune_temperature(
    model: &QuboModel,
    cfg: &SamplerConfig,
    factors: &[f64],
    objective: SampleObjective,
    exec: Execution,
) -> Result<(f64, SampleBatch), SubsolveError> {
    let mut best: Option<(f64, f64, SampleBatch)> = None;
    for (idx, &f) in factors.iter().enumerate() {
        let run = SamplerConfig { temperature: cfg.temperature * f, seed: mix_seed(cfg.seed, 0xA11CE + idx as u64), ..*cfg };
        let batch = sample_noisy(model, &run, exec);
        let score = objective.score(&batch.energies)?;
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, run.temperature, batch));
        }
    }
    best.map(|(_, t, b)| (t, b)).ok_or(SubsolveError::EmptyBatch)
}

/// Feasible sample with the lowest subproblem objective `Σ ã y`, ties to the lower index.
pub fn best_feasible_sample(batch: &SampleBatch, sub: &KnapsackSub) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (idx, y) in batch.bitstrings.iter().enumerate() {
        let (v, w) = sub.evaluate(y);
        if w <= sub.capacity as u64 && best.is_none_or(|(b, _)| v < b) {
            best = Some((v, idx));
        }
    }
    best.map(|(_, i)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Item;
    use crate::qubo::{encode_tilted, PenaltyConfig};
    use proptest::prelude::*;

    fn sub(costs: &[f64], weights: &[u32], q: u32) -> KnapsackSub {
        let items = costs
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (&c, &w))| Item { customer: i + 1, weight: w, cost: c })
            .collect();
        KnapsackSub { vehicle: 0, items, capacity: q }
    }

    fn brute(sb: &KnapsackSub) -> f64 {
        let m = sb.width();
        (0u32..(1 << m))
            .map(|c| (0..m).map(|b| c >> b & 1 == 1).collect::<Vec<_>>())
            .filter(|y| sb.is_feasible(y))
            .map(|y| sb.evaluate(&y).0)
            .fold(0.0, f64::min)
    }

    #[test]
    fn exact_examples() {
        let s = sub(&[-2.0, -1.0], &[2, 3], 4);
        let r = solve_exact(&s).unwrap();
        assert_eq!(r.selection, vec![true, false]);
        assert_eq!(r.value, -2.0);
        assert!(solve_exact(&sub(&[1.0, 0.0], &[1, 1], 4)).unwrap().selection.iter().all(|&b| !b));
        assert_eq!(solve_exact(&sub(&[-5.0], &[5], 4)).unwrap().selection, vec![false]);
    }

    #[test]
    fn exact_tie_is_lexicographic() {
        let s = sub(&[-1.0, -1.0], &[1, 1], 1);
        assert_eq!(solve_exact(&s).unwrap().selection, vec![false, true]);
    }

    #[test]
    fn enumeration_fallback_and_limit() {
        let big = u32::MAX / 2;
        let s = sub(&[-3.0, -2.0, -2.0], &[big - 1, big, 3], big);
        let r = solve_exact(&s).unwrap();
        assert_eq!(r.value, -3.0);
        let many: Vec<f64> = vec![-1.0; 21];
        let ws: Vec<u32> = (0..21).map(|i| big - i).collect();
        assert!(matches!(solve_exact(&sub(&many, &ws, big)), Err(SubsolveError::TooLarge { .. })));
    }

    #[test]
    fn cvar_examples() {
        assert_eq!(cvar_score(&[4.0, 2.0, 3.0, 1.0], 0.5).unwrap(), 1.5);
        assert_eq!(cvar_score(&[4.0, 2.0, 3.0, 1.0], 1.0).unwrap(), 2.5);
        assert_eq!(cvar_score(&[7.0], 0.25).unwrap(), 7.0);
        assert_eq!(cvar_score(&[], 0.5), Err(SubsolveError::EmptyBatch));
        assert!(cvar_score(&[1.0], 0.0).is_err());
    }

    #[test]
    fn yield_counts() {
        let s = sub(&[-1.0], &[3], 2);
        let mut bits = vec![vec![false]; 7];
        bits.extend(vec![vec![true]; 3]);
        let batch = SampleBatch { energies: vec![0.0; 10], feasible: vec![true; 10], bitstrings: bits };
        assert!((feasibility_yield(&batch, &s) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn cold_sampler_finds_minimizer() {
        let s = sub(&[-3.0, -1.0, -2.5, 0.5, -1.5], &[2, 1, 3, 1, 2], 5);
        let q = encode_tilted(&s, &PenaltyConfig::tilted(2.0, 0.0));
        let m = q.width;
        let emin = (0u32..(1 << m))
            .map(|c| q.energy(&(0..m).map(|b| c >> b & 1 == 1).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        let cfg = SamplerConfig { temperature: 0.05, sweeps: 2000, noise_flip_prob: 0.0, seed: 9, ..Default::default() };
        let batch = sample_noisy(&q, &cfg, Execution::Parallel);
        let hits = batch.energies.iter().filter(|&&e| (e - emin).abs() < 1e-9).count();
        assert!(hits as f64 / batch.shots() as f64 >= 0.9);
    }

    #[test]
    fn full_noise_randomizes() {
        let s = sub(&[-3.0, -1.0, -2.5, 0.5], &[2, 1, 3, 1], 5);
        let q = encode_tilted(&s, &PenaltyConfig::tilted(2.0, 0.0));
        let cfg = SamplerConfig { shots: 4000, sweeps: 5, noise_flip_prob: 0.5, seed: 1, ..Default::default() };
        let batch = sample_noisy(&q, &cfg, Execution::Parallel);
        let sigma = (0.25 / 4000.0f64).sqrt();
        for i in 0..4 {
            let mean = batch.bitstrings.iter().filter(|y| y[i]).count() as f64 / 4000.0;
            assert!((mean - 0.5).abs() < 3.0 * sigma, "bit {i} mean {mean}");
        }
    }

    #[test]
    fn deterministic_and_mode_independent() {
        let s = sub(&[-3.0, -1.0, -2.5], &[2, 1, 3], 4);
        let q = encode_tilted(&s, &PenaltyConfig::default());
        let cfg = SamplerConfig { seed: 77, shots: 64, ..Default::default() };
        let a = sample_noisy(&q, &cfg, Execution::Parallel);
        assert_eq!(a, sample_noisy(&q, &cfg, Execution::Parallel));
        assert_eq!(a, sample_noisy(&q, &cfg, Execution::Sequential));
        for (y, e) in a.bitstrings.iter().zip(&a.energies) {
            assert!((q.energy(y) - e).abs() < 1e-9);
        }
    }

    #[test]
    fn gibbs_matches_boltzmann_on_two_spins() {
        let s = sub(&[-1.0, -0.5], &[1, 1], 1);
        let q = encode_tilted(&s, &PenaltyConfig::tilted(0.6, 0.0));
        let temp = 1.0;
        let states: Vec<Vec<bool>> = (0u32..4).map(|c| vec![c & 1 == 1, c & 2 == 2]).collect();
        let z: f64 = states.iter().map(|y| (-q.energy(y) / temp).exp()).sum();
        let cfg = SamplerConfig { shots: 20000, sweeps: 60, temperature: temp, noise_flip_prob: 0.0, seed: 5, ..Default::default() };
        let batch = sample_noisy(&q, &cfg, Execution::Parallel);
        let tv: f64 = states
            .iter()
            .map(|y| {
                let p = (-q.energy(y) / temp).exp() / z;
                let f = batch.bitstrings.iter().filter(|b| *b == y).count() as f64 / 20000.0;
                (p - f).abs()
            })
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            items in prop::collection::vec((-20.0f64..10.0, 1u32..12), 0..11),
            q in 1u32..30,
        ) {
            let costs: Vec<f64> = items.iter().map(|x| x.0).collect();
            let weights: Vec<u32> = items.iter().map(|x| x.1).collect();
            let sb = sub(&costs, &weights, q);
            let r = solve_exact(&sb).unwrap();
            prop_assert!(sb.is_feasible(&r.selection));
            prop_assert!((r.value - brute(&sb)).abs() < 1e-9);
        }
    }
}
