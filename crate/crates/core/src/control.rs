//! Outer-loop driver: multiplier update policies, episode execution and the
//! curriculum reward shaper used as a diagnostic signal.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::GapModel;
use crate::dual::{dual_value, restrict_candidates, subgradient, DualState, LAMBDA_MAX, LAMBDA_MIN};
use crate::instance::Instance;
use crate::par::{self, mix_seed, Execution};
use crate::primal::{
    best_of_samples, reconstruct, Assignment, CompletionOrder, CostTable, RepairCost, RepairSettings, RouteSet,
    ScoreMode,
};
use crate::qubo::{encode, PenaltyConfig, QuboModel};
use crate::subsolve::{best_feasible_sample, sample_noisy, solve_exact, SampleBatch, SamplerConfig, SubsolveError};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("no iteration produced a repairable assignment")]
    NoFeasibleSolution,
    #[error(transparent)]
    Subsolve(#[from] SubsolveError),
    #[error("reward signal missing: {0}")]
    MissingSignal(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    SubgradientConst,
    #[default]
    SubgradientDiminishing,
    Polyak,
    DiagPrecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub policy: Policy,
    pub eta0: f64,
    pub lambda_bounds: (f64, f64),
    pub t_max: usize,
    pub patience: usize,
    pub primal_eval_every: usize,
    /// Multiply `eta0` by the mean depot distance so it is unit-free.
    pub scale_steps: bool,
    pub adagrad_eps: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            policy: Policy::SubgradientDiminishing,
            eta0: 0.1,
            lambda_bounds: (LAMBDA_MIN, LAMBDA_MAX),
            t_max: 200,
            patience: 30,
            primal_eval_every: 2,
            scale_steps: true,
            adagrad_eps: 1e-8,
        }
    }
}

/// Anything that maps the current state and subgradient to new multipliers.
pub trait MultiplierPolicy {
    fn step(&mut self, state: &DualState, g: &[f64]) -> Vec<f64>;
}

/// The built-in policies with projection onto the multiplier box.
#[derive(Debug, Clone)]
pub struct Controller {
    pub cfg: ControllerConfig,
    /// Effective base step after optional scaling.
    pub eta: f64,
    g2: Vec<f64>,
    /// Fixed per-customer scales for the preconditioned update; AdaGrad when absent.
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, n: usize) -> Self {
        Controller { cfg, eta: cfg.eta0, g2: vec![0.0; n], alpha: None, beta: None }
    }

    pub fn for_instance(cfg: ControllerConfig, inst: &Instance) -> Self {
        let mut c = Self::new(cfg, inst.n());
        if cfg.scale_steps {
            let mean: f64 = (1..=inst.n()).map(|i| inst.c(0, i)).sum::<f64>() / inst.n() as f64;
            c.eta = cfg.eta0 * mean.max(1e-9);
        }
        c
    }
}

impl MultiplierPolicy for Controller {
    fn step(&mut self, state: &DualState, g: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.cfg.lambda_bounds;
        let t = state.t as f64;
        let norm2: f64 = g.iter().map(|x| x * x).sum();
        let diminishing = self.eta / (t + 1.0).sqrt();
        let out: Vec<f64> = match self.cfg.policy {
            Policy::SubgradientConst => state.lambda.iter().zip(g).map(|(l, gi)| l + self.eta * gi).collect(),
            Policy::SubgradientDiminishing => state.lambda.iter().zip(g).map(|(l, gi)| l + diminishing * gi).collect(),
            Policy::Polyak => {
                let eta = if norm2 == 0.0 {
                    0.0
                } else if state.ub.is_finite() && state.lb.is_finite() {
                    (state.ub - state.lb).max(0.0) / norm2
                } else {
                    diminishing
                };
                state.lambda.iter().zip(g).map(|(l, gi)| l + eta * gi).collect()
            }
            Policy::DiagPrecond => {
                for (acc, gi) in self.g2.iter_mut().zip(g) {
                    *acc += gi * gi;
                }
                (0..g.len())
                    .map(|i| {
                        let a = match &self.alpha {
                            Some(a) => a[i],
                            None => self.eta / (self.cfg.adagrad_eps + self.g2[i]).sqrt(),
                        };
                        let b = self.beta.as_ref().map_or(0.0, |b| b[i]);
                        state.lambda[i] + a * g[i] + b
                    })
                    .collect()
            }
        };
        out.into_iter().map(|l| l.clamp(lo, hi)).collect()
    }
}

/// One QUBO submission from the outer loop.
#[derive(Debug, Clone)]
pub struct QuboCall<'a> {
    pub model: &'a QuboModel,
    pub sampler: SamplerConfig,
    pub iteration: usize,
    pub vehicle: usize,
}

/// Runs QUBO sampling for one iteration's vehicles.
pub trait QuboExecutor {
    fn execute(&mut self, calls: &[QuboCall<'_>], exec: Execution) -> Vec<SampleBatch>;
    /// Simulated seconds spent so far.
    fn virtual_time(&self) -> f64 {
        0.0
    }
}

/// In-process sampler; vehicles run concurrently.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalSampler;

impl QuboExecutor for LocalSampler {
    fn execute(&mut self, calls: &[QuboCall<'_>], exec: Execution) -> Vec<SampleBatch> {
        par::map(exec, calls, |c| sample_noisy(c.model, &c.sampler, exec))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolverChoice {
    Exact,
    Sampler { sampler: SamplerConfig, penalty: PenaltyConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub w_align: f64,
    pub w_v: f64,
    pub w_corr: f64,
    pub w_full: f64,
    pub w_lb: f64,
    pub w_gap: f64,
    pub w_lb_pos: f64,
    pub w_c: f64,
    pub w_rec: f64,
    pub w_tier: f64,
    pub w_assign: f64,
    pub tau: f64,
    pub ratio_threshold: f64,
    pub gap_threshold: f64,
    pub window: usize,
    pub align_clip: f64,
    pub lb_clip: f64,
    pub gap_clip: f64,
    pub cost_clip: f64,
    pub total_clip: f64,
    pub tiers: Vec<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_align: 1.0,
            w_v: 1.0,
            w_corr: 0.0,
            w_full: 1.0,
            w_lb: 1.0,
            w_gap: 1.0,
            w_lb_pos: 0.1,
            w_c: 1.0,
            w_rec: 1.0,
            w_tier: 0.5,
            w_assign: 1.0,
            tau: 0.1,
            ratio_threshold: 0.65,
            gap_threshold: 0.20,
            window: 30,
            align_clip: 3.0,
            lb_clip: 3.0,
            gap_clip: 5.0,
            cost_clip: 5.0,
            total_clip: 10.0,
            tiers: vec![0.20, 0.15, 0.10, 0.05],
        }
    }
}

impl RewardConfig {
    /// The alternative transition thresholds (0.95 ratio, 0.15 gap).
    pub fn strict_transitions(self) -> Self {
        RewardConfig { ratio_threshold: 0.95, gap_threshold: 0.15, ..self }
    }
}

/// The per-iteration quantities the shaper reads.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardSignals {
    /// Multiplier change applied at this step.
    pub action: Option<Vec<f64>>,
    pub g: Option<Vec<f64>>,
    /// Violation mass `‖g‖₁`.
    pub violation: Option<f64>,
    pub n_corr: Option<usize>,
    pub customers: usize,
    pub lb: Option<f64>,
    /// Relative gap as a fraction.
    pub gap: Option<f64>,
    pub cost: Option<f64>,
    /// Best cost strictly before this row.
    pub best_cost_before: Option<f64>,
}

fn need<T: Clone>(v: &Option<T>, what: &'static str) -> Result<T, ControlError> {
    v.clone().ok_or(ControlError::MissingSignal(what))
}

/// Number of customers whose assignment count is within `tau` of one.
pub fn correct_count(g: &[f64], tau: f64) -> usize {
    g.iter().filter(|x| x.abs() < tau).count()
}

/// Reward for moving from `prev` to `cur` in `phase` (1, 2 or 3).
pub fn shape_reward(prev: &RewardSignals, cur: &RewardSignals, cfg: &RewardConfig, phase: u8) -> Result<f64, ControlError> {
    let a = need(&cur.action, "action")?;
    let g_prev = need(&prev.g, "previous subgradient")?;
    let align: f64 = a.iter().zip(&g_prev).map(|(x, y)| x * y).sum();
    let dv = need(&prev.violation, "previous violation")? - need(&cur.violation, "violation")?;
    let n_corr = need(&cur.n_corr, "assignment count")?;
    let customers = cur.customers.max(1);
    let mut r = cfg.w_align * align.clamp(-cfg.align_clip, cfg.align_clip)
        + cfg.w_v * dv
        + cfg.w_corr * n_corr as f64
        + if n_corr == cur.customers { cfg.w_full } else { 0.0 };
    if phase >= 2 {
        let (lb0, lb1) = (need(&prev.lb, "previous bound")?, need(&cur.lb, "bound")?);
        let dlb = (lb1 - lb0) / (lb0.abs() + 1.0);
        let dgap = need(&prev.gap, "previous gap")? - need(&cur.gap, "gap")?;
        r += cfg.w_lb * dlb.clamp(-cfg.lb_clip, cfg.lb_clip)
            + cfg.w_gap * dgap.clamp(-cfg.gap_clip, cfg.gap_clip)
            + if lb1 > 0.0 { cfg.w_lb_pos } else { 0.0 };
    }
    if phase >= 3 {
        let (c0, c1) = (need(&prev.cost, "previous cost")?, need(&cur.cost, "cost")?);
        let dc = (c0 - c1) / (c0.abs() + 1.0);
        let record = cur.best_cost_before.is_none_or(|b| c1 < b);
        let gap = need(&cur.gap, "gap")?;
        let tiers = cfg.tiers.iter().filter(|&&t| gap < t).count();
        r += cfg.w_c * dc.clamp(-cfg.cost_clip, cfg.cost_clip)
            + if record { cfg.w_rec } else { 0.0 }
            + cfg.w_tier * tiers as f64
            + cfg.w_assign * n_corr as f64 / customers as f64;
    }
    Ok(r.clamp(-cfg.total_clip, cfg.total_clip))
}

/// Monotone curriculum phase driven by windowed means.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTracker {
    pub phase: u8,
    ratios: VecDeque<f64>,
    gaps: VecDeque<f64>,
}

impl Default for PhaseTracker {
    fn default() -> Self {
        PhaseTracker { phase: 1, ratios: VecDeque::new(), gaps: VecDeque::new() }
    }
}

impl PhaseTracker {
    /// Adds one observation and returns the possibly advanced phase.
    pub fn observe(&mut self, ratio: f64, gap: Option<f64>, cfg: &RewardConfig) -> u8 {
        let w = cfg.window.max(1);
        self.ratios.push_back(ratio);
        if self.ratios.len() > w {
            self.ratios.pop_front();
        }
        if let Some(g) = gap {
            self.gaps.push_back(g);
            if self.gaps.len() > w {
                self.gaps.pop_front();
            }
        }
        let mean = |q: &VecDeque<f64>| q.iter().sum::<f64>() / q.len() as f64;
        if self.phase == 1 && self.ratios.len() == w && mean(&self.ratios) > cfg.ratio_threshold {
            self.phase = 2;
        }
        if self.phase == 2 && self.gaps.len() == w && mean(&self.gaps) < cfg.gap_threshold {
            self.phase = 3;
        }
        self.phase
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub t: usize,
    pub lambda_hash: String,
    pub g: Vec<f64>,
    pub g_l1: f64,
    pub n_corr: usize,
    /// Dual value at this iterate, when the exact oracle could evaluate it.
    pub dual: Option<f64>,
    pub lb: f64,
    pub ub: f64,
    pub feasibility_yield: Option<f64>,
    /// Reconstructed cost, on evaluation iterations.
    pub cost: Option<f64>,
    pub best_cost: Option<f64>,
    pub phase: u8,
    pub reward: Option<f64>,
    pub qubo_calls: usize,
    pub max_width: usize,
    pub virtual_time: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub records: Vec<EpisodeRecord>,
}

impl EpisodeLog {
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub controller: ControllerConfig,
    pub reward: RewardConfig,
    pub solver: SolverChoice,
    pub score_mode: ScoreMode,
    pub repair_cost: RepairCost,
    pub completion_order: CompletionOrder,
    pub seed: u64,
    pub exec: Execution,
    pub record_wall_clock: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            controller: ControllerConfig::default(),
            reward: RewardConfig::default(),
            solver: SolverChoice::Exact,
            score_mode: ScoreMode::Proxy,
            repair_cost: RepairCost::Reduced,
            completion_order: CompletionOrder::DecreasingDemand,
            seed: 0,
            exec: Execution::Parallel,
            record_wall_clock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub best: RouteSet,
    pub best_assignment: Assignment,
    pub log: EpisodeLog,
    pub iterations: usize,
    pub lb: f64,
    pub ub: f64,
    pub qubo_calls: usize,
    pub max_width: usize,
    pub virtual_time: f64,
}

fn lambda_hash(lambda: &[f64]) -> String {
    let h = lambda.iter().fold(0x5EED_u64, |h, l| mix_seed(h, l.to_bits()));
    format!("{h:016x}")
}

/// Runs the outer loop until `t_max` iterations or `patience` iterations
/// without improving either the surrogate upper bound or the routed cost.
pub fn run_episode(
    inst: &Instance,
    model: &GapModel,
    cfg: &EpisodeConfig,
    policy: &mut dyn MultiplierPolicy,
    executor: &mut dyn QuboExecutor,
) -> Result<EpisodeResult, ControlError> {
    let n = model.n();
    let cc = &cfg.controller;
    let mut state = DualState::new(model, cc.lambda_bounds);
    let mut log = EpisodeLog::default();
    let mut tracker = PhaseTracker::default();
    let mut best: Option<(RouteSet, Assignment)> = None;
    let mut prev_signals: Option<RewardSignals> = None;
    let mut last_cost: Option<f64> = None;
    let mut prev_lambda = state.lambda.clone();
    let mut stall = 0usize;
    let mut qubo_calls = 0usize;
    let mut max_width = 0usize;
    let started = Instant::now();
    let every = cc.primal_eval_every.max(1);

    for t in 0..cc.t_max.max(1) {
        state.t = t;
        let subs = restrict_candidates(model, inst, &state.lambda);
        let width = subs.iter().map(|s| s.width()).max().unwrap_or(0);
        max_width = max_width.max(width);

        let exact = dual_value(&subs, &state.lambda, cfg.exec, |s| solve_exact(s).map(|r| r.selection));
        let dual = match (&exact, cfg.solver) {
            (Ok(ev), _) => Some(ev.value),
            (Err(e), SolverChoice::Exact) => return Err(e.clone().into()),
            (Err(_), _) => None,
        };
        if let Some(v) = dual {
            state.record_lb(v);
        }

        let (selections, samples, yield_frac) = match cfg.solver {
            SolverChoice::Exact => {
                let sel = exact.expect("exact path checked above").selections;
                let samples = sel.iter().map(|s| vec![s.clone()]).collect::<Vec<_>>();
                (sel, samples, None)
            }
            SolverChoice::Sampler { sampler, penalty } => {
                let fleet = subs.len().max(1);
                let qubos: Vec<Option<QuboModel>> =
                    subs.iter().map(|s| (s.width() > 0).then(|| encode(s, &penalty))).collect();
                let calls: Vec<QuboCall<'_>> = qubos
                    .iter()
                    .enumerate()
                    .filter_map(|(k, q)| {
                        q.as_ref().map(|model| QuboCall {
                            model,
                            sampler: SamplerConfig { seed: mix_seed(cfg.seed, (t * fleet + k) as u64), ..sampler },
                            iteration: t,
                            vehicle: k,
                        })
                    })
                    .collect();
                qubo_calls += calls.len();
                let batches = executor.execute(&calls, cfg.exec);
                let mut per_vehicle = vec![Vec::new(); subs.len()];
                let mut selections = vec![Vec::new(); subs.len()];
                let (mut ok, mut total) = (0usize, 0usize);
                for (call, batch) in calls.iter().zip(&batches) {
                    let sub = &subs[call.vehicle];
                    per_vehicle[call.vehicle] = batch.bitstrings.iter().map(|y| sub.decode(y)).collect();
                    if let Some(j) = best_feasible_sample(batch, sub) {
                        selections[call.vehicle] = sub.decode(&batch.bitstrings[j]);
                    }
                    ok += batch.bitstrings.iter().filter(|y| sub.is_feasible(y)).count();
                    total += batch.shots();
                }
                let y = (total > 0).then(|| ok as f64 / total as f64);
                (selections, per_vehicle, y)
            }
        };

        let g = subgradient(n, &selections);
        state.g = g.clone();
        let costs = match cfg.repair_cost {
            RepairCost::Reduced => CostTable::reduced(model, &state.lambda),
            RepairCost::Surrogate => CostTable::surrogate(model),
        };
        let settings = RepairSettings { costs: &costs, order: cfg.completion_order };
        let candidate = best_of_samples(&samples, cfg.score_mode, inst, model, &settings, cfg.exec).ok();
        let mut improved = false;
        if let Some(c) = &candidate {
            let surrogate = model.assignment_cost(&c.assignment.owners(n));
            improved |= state.record_ub(surrogate);
        }

        let last = t + 1 == cc.t_max.max(1);
        let mut cost = None;
        if let Some(c) = &candidate {
            if t % every == 0 || last || best.is_none() {
                let rs = reconstruct(&c.assignment, inst, cfg.exec);
                cost = Some(rs.cost);
                last_cost = Some(rs.cost);
                if best.as_ref().is_none_or(|(b, _)| rs.cost < b.cost) {
                    best = Some((rs, c.assignment.clone()));
                    improved = true;
                }
            }
        }
        let best_before = log.records.last().and_then(|r| r.best_cost);
        let best_cost = best.as_ref().map(|(b, _)| b.cost);

        let n_corr = correct_count(&g, cfg.reward.tau);
        let g_l1: f64 = g.iter().map(|x| x.abs()).sum();
        let gap = match (last_cost, inst.bks) {
            (Some(c), Some(b)) if b > 0.0 => Some((c - b) / b),
            _ => None,
        };
        let action: Vec<f64> = state.lambda.iter().zip(&prev_lambda).map(|(a, b)| a - b).collect();
        let signals = RewardSignals {
            action: Some(action),
            g: Some(g.clone()),
            violation: Some(g_l1),
            n_corr: Some(n_corr),
            customers: n,
            lb: state.lb.is_finite().then_some(state.lb),
            gap,
            cost: last_cost,
            best_cost_before: best_before,
        };
        let phase = tracker.phase;
        let reward = prev_signals.as_ref().and_then(|p| shape_reward(p, &signals, &cfg.reward, phase).ok());
        tracker.observe(n_corr as f64 / n.max(1) as f64, gap, &cfg.reward);
        prev_signals = Some(signals);

        log.records.push(EpisodeRecord {
            t,
            lambda_hash: lambda_hash(&state.lambda),
            g_l1,
            g,
            n_corr,
            dual,
            lb: state.lb,
            ub: state.ub,
            feasibility_yield: yield_frac,
            cost,
            best_cost,
            phase,
            reward,
            qubo_calls,
            max_width,
            virtual_time: executor.virtual_time(),
            wall_ms: cfg.record_wall_clock.then(|| started.elapsed().as_secs_f64() * 1e3),
        });

        stall = if improved { 0 } else { stall + 1 };
        if last || stall >= cc.patience.max(1) {
            break;
        }
        prev_lambda = state.lambda.clone();
        state.lambda = policy.step(&state, &state.g);
    }

    let iterations = log.records.len();
    let (best, best_assignment) = best.ok_or(ControlError::NoFeasibleSolution)?;
    Ok(EpisodeResult {
        best,
        best_assignment,
        log,
        iterations,
        lb: state.lb,
        ub: state.ub,
        qubo_calls,
        max_width,
        virtual_time: executor.virtual_time(),
    })
}
