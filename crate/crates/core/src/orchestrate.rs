//! Deterministic multi-backend execution simulator with time windows,
//! reliability-aware selection, failover and an audit trail.
//!
//! All time is virtual. Latency, jitter and injected failures are pure
//! functions of the seed, the call id and the attempt number, so identical
//! inputs replay byte-identical audit logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bandit::{consult, BanditModel, Round};
use crate::control::{QuboCall, QuboExecutor};
use crate::hardware::{
    blended_error, build_context, estimate_gates, topology_summary, Arm, EstimatorConfig, HardwareDescriptor,
    HardwareError,
};
use crate::par::{mix_seed, Execution};
use crate::qubo::QuboModel;
use crate::subsolve::{sample_noisy, SampleBatch, SamplerConfig};

pub const SIMULATOR: &str = "simulator";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base: f64,
    pub per_gate: f64,
    /// Relative half-width of the uniform jitter.
    pub jitter: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { base: 30.0, per_gate: 0.01, jitter: 0.2 }
    }
}

impl LatencyModel {
    pub fn expected(&self, gates: u64) -> f64 {
        self.base + self.per_gate * gates as f64
    }
}

/// Scripted behaviour for a backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePlan {
    /// Every submission errors.
    Down,
    /// The next `n` submissions error.
    FailNext(usize),
    /// Each submission errors with this probability (seeded).
    Random(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendState {
    pub name: String,
    pub capacity: usize,
    pub window: (f64, f64),
    pub successes: u64,
    pub failures: u64,
    pub latency: LatencyModel,
    pub up: bool,
    pub error: f64,
    pub connectivity: f64,
    pub diameter: f64,
    #[serde(skip)]
    pub descriptor: Option<HardwareDescriptor>,
    pub plan: Option<FailurePlan>,
}

impl BackendState {
    pub fn from_descriptor(desc: HardwareDescriptor) -> Result<Self, HardwareError> {
        let topo = topology_summary(&desc)?;
        Ok(BackendState {
            name: desc.name.clone(),
            capacity: desc.available_qubits().len(),
            window: (0.0, f64::INFINITY),
            successes: 0,
            failures: 0,
            latency: LatencyModel::default(),
            up: true,
            error: blended_error(&desc)?,
            connectivity: topo.connectivity,
            diameter: topo.diameter as f64,
            descriptor: Some(desc),
            plan: None,
        })
    }

    /// `s / (s + f + 1)`.
    pub fn reliability(&self) -> f64 {
        self.successes as f64 / (self.successes + self.failures + 1) as f64
    }

    pub fn record_outcome(&mut self, ok: bool) -> f64 {
        if ok {
            self.successes += 1;
        } else {
            self.failures += 1;
        }
        self.reliability()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Timeout,
    BackendError,
    FallbackSimulator,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        matches!(self, Outcome::Ok | Outcome::FallbackSimulator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub call_id: u64,
    pub attempt: usize,
    pub timestamp: f64,
    pub iteration: usize,
    pub vehicle: usize,
    pub backend: String,
    pub arm: String,
    pub override_flag: bool,
    pub width: usize,
    pub estimated_gates: u64,
    pub compiled_depth: u64,
    pub compiled_gates: u64,
    pub latency: f64,
    pub outcome: Outcome,
    pub best_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub timeout: f64,
    pub fail_limit: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub simulator_latency: LatencyModel,
    /// Feed proxy rewards from executed calls back into the bandit.
    pub online_updates: bool,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            timeout: 300.0,
            fail_limit: 3,
            seed: 0,
            estimator: EstimatorConfig::default(),
            simulator_latency: LatencyModel { base: 5.0, per_gate: 0.001, jitter: 0.0 },
            online_updates: false,
        }
    }
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn slack_tier(capacity: usize, width: usize) -> u32 {
    (capacity - width + 1).ilog2()
}

pub struct Orchestrator {
    pub backends: Vec<BackendState>,
    pub cfg: OrchestratorConfig,
    pub bandit: Option<BanditModel>,
    pub clock: f64,
    pub audit: Vec<AuditRecord>,
    next_call: u64,
}

impl Orchestrator {
    pub fn new(backends: Vec<BackendState>, cfg: OrchestratorConfig, bandit: Option<BanditModel>) -> Self {
        Orchestrator { backends, cfg, bandit, clock: 0.0, audit: Vec::new(), next_call: 0 }
    }

    pub fn from_pool(pool: Vec<HardwareDescriptor>, cfg: OrchestratorConfig, bandit: Option<BanditModel>) -> Result<Self, HardwareError> {
        let backends = pool.into_iter().map(BackendState::from_descriptor).collect::<Result<_, _>>()?;
        Ok(Self::new(backends, cfg, bandit))
    }

    pub fn calls(&self) -> u64 {
        self.next_call
    }

    /// Arm for a backend; screened by the bandit when one is loaded.
    fn choose_arm(&self, b: &BackendState, model: &QuboModel) -> (Arm, bool, Option<crate::hardware::ContextVector>) {
        let width = model.width;
        match (&self.bandit, &b.descriptor) {
            (Some(bandit), Some(desc)) => match build_context(model, desc, width) {
                Ok(x) => {
                    let c = consult(bandit, &x, width, b.connectivity, b.diameter, &self.cfg.estimator);
                    (c.arm, c.override_flag, Some(x))
                }
                Err(_) => (Arm::SAFE_DEFAULT, false, None),
            },
            _ => (Arm::SAFE_DEFAULT, false, None),
        }
    }

    /// Best eligible QPU at `now`, or `None` for the simulator. Eligible means
    /// up, window open with room for the expected latency, and enough qubits.
    /// Preference: larger slack tier `⌊log₂(1 + capacity − width)⌋`, then
    /// reliability, then name.
    pub fn select_backend(&self, width: usize, now: f64, exclude: &[usize]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, b) in self.backends.iter().enumerate() {
            if !b.up || exclude.contains(&i) || b.capacity < width || now < b.window.0 || now >= b.window.1 {
                continue;
            }
            let gates = estimate_gates(Arm::SAFE_DEFAULT, width.max(1), b.connectivity, b.diameter, &self.cfg.estimator).gates;
            if b.window.1 - now < b.latency.expected(gates) {
                continue;
            }
            let better = match best {
                None => true,
                Some(j) => {
                    let o = &self.backends[j];
                    let key = (slack_tier(b.capacity, width), b.reliability());
                    let other = (slack_tier(o.capacity, width), o.reliability());
                    key.0 > other.0 || (key.0 == other.0 && (key.1 > other.1 || (key.1 == other.1 && b.name < o.name)))
                }
            };
            if better {
                best = Some(i);
            }
        }
        best
    }

    fn injected_failure(&mut self, idx: usize, call: u64, attempt: usize) -> bool {
        let seed = self.cfg.seed;
        let b = &mut self.backends[idx];
        match &mut b.plan {
            None => false,
            Some(FailurePlan::Down) => true,
            Some(FailurePlan::FailNext(k)) => {
                if *k > 0 {
                    *k -= 1;
                    true
                } else {
                    false
                }
            }
            Some(FailurePlan::Random(p)) => unit(mix_seed(seed ^ 0xFA11, call * 64 + attempt as u64)) < *p,
        }
    }

    /// Runs one call through the failover chain. Returns the samples and the
    /// records appended for this call (the last one is terminal).
    pub fn dispatch(&mut self, call: &QuboCall<'_>, exec: Execution) -> (SampleBatch, Vec<AuditRecord>) {
        let call_id = self.next_call;
        self.next_call += 1;
        let model = call.model;
        let width = model.width;
        let start = self.audit.len();
        let mut excluded = Vec::new();
        let mut origin_error: Option<f64> = None;

        for attempt in 0..self.cfg.fail_limit.max(1) {
            let Some(idx) = self.select_backend(width, self.clock, &excluded) else { break };
            let (arm, override_flag, context) = self.choose_arm(&self.backends[idx], model);
            let b = &self.backends[idx];
            let est = estimate_gates(arm, width.max(1), b.connectivity, b.diameter, &self.cfg.estimator);
            let j = unit(mix_seed(mix_seed(self.cfg.seed, call_id), attempt as u64));
            let latency = b.latency.expected(est.gates) * (1.0 + b.latency.jitter * (2.0 * j - 1.0));
            let error = b.error;
            origin_error.get_or_insert(error);
            let name = b.name.clone();
            let failed = self.injected_failure(idx, call_id, attempt);
            let timed_out = latency > self.cfg.timeout;
            let mut rec = AuditRecord {
                call_id,
                attempt,
                timestamp: self.clock,
                iteration: call.iteration,
                vehicle: call.vehicle,
                backend: name,
                arm: arm.to_string(),
                override_flag,
                width,
                estimated_gates: est.gates,
                compiled_depth: arm.depth as u64 * arm.entanglement.pairs(width).max(1) as u64,
                compiled_gates: est.gates,
                latency: latency.min(self.cfg.timeout),
                outcome: Outcome::Ok,
                best_score: None,
            };
            if failed || timed_out {
                rec.outcome = if timed_out { Outcome::Timeout } else { Outcome::BackendError };
                self.clock += rec.latency;
                self.backends[idx].record_outcome(false);
                self.audit.push(rec);
                excluded.push(idx);
                continue;
            }
            let sampler = SamplerConfig { noise_flip_prob: error, ..call.sampler };
            let batch = sample_noisy(model, &sampler, exec);
            rec.best_score = batch.argmin().map(|i| batch.energies[i]);
            self.clock += latency;
            self.backends[idx].record_outcome(true);
            if self.cfg.online_updates {
                if let (Some(x), Some(bandit)) = (context, self.bandit.as_mut()) {
                    let b = &self.backends[idx];
                    let round = Round { x, width, connectivity: b.connectivity, diameter: b.diameter, avg_error: b.error };
                    let r = crate::bandit::proxy_reward(arm, &round, &self.cfg.estimator);
                    bandit.update(arm, &x, r);
                }
            }
            self.audit.push(rec);
            return (batch, self.audit[start..].to_vec());
        }

        let flip = origin_error.unwrap_or(call.sampler.noise_flip_prob);
        let sampler = SamplerConfig { noise_flip_prob: flip, ..call.sampler };
        let batch = sample_noisy(model, &sampler, exec);
        let arm = Arm::SAFE_DEFAULT;
        let gates = estimate_gates(arm, width.max(1), 1.0, 1.0, &self.cfg.estimator).gates;
        let latency = self.cfg.simulator_latency.expected(gates);
        self.audit.push(AuditRecord {
            call_id,
            attempt: self.audit.len() - start,
            timestamp: self.clock,
            iteration: call.iteration,
            vehicle: call.vehicle,
            backend: SIMULATOR.into(),
            arm: arm.to_string(),
            override_flag: false,
            width,
            estimated_gates: gates,
            compiled_depth: 1,
            compiled_gates: gates,
            latency,
            outcome: Outcome::FallbackSimulator,
            best_score: batch.argmin().map(|i| batch.energies[i]),
        });
        self.clock += latency;
        (batch, self.audit[start..].to_vec())
    }

    pub fn audit_jsonl(&self) -> String {
        self.audit.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }

    /// Terminal executions per backend as `name:count` joined by `;`.
    pub fn device_mix(&self) -> String {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in self.audit.iter().filter(|r| r.outcome.is_terminal()) {
            *counts.entry(r.backend.as_str()).or_default() += 1;
        }
        counts.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";")
    }

    /// Mean latency of terminal attempts.
    pub fn average_latency(&self) -> f64 {
        let t: Vec<f64> = self.audit.iter().filter(|r| r.outcome.is_terminal()).map(|r| r.latency).collect();
        if t.is_empty() { 0.0 } else { t.iter().sum::<f64>() / t.len() as f64 }
    }

    /// `instance,total_circuits,total_virtual_time_s,avg_job_latency_s,device_mix` row.
    pub fn summary_row(&self, instance: &str) -> String {
        let mut s = String::new();
        let _ = write!(s, "{instance},{},{:.3},{:.3},{}", self.calls(), self.clock, self.average_latency(), self.device_mix());
        s
    }
}

pub const SUMMARY_HEADER: &str = "instance,total_circuits,total_virtual_time_s,avg_job_latency_s,device_mix";

impl QuboExecutor for Orchestrator {
    fn execute(&mut self, calls: &[QuboCall<'_>], exec: Execution) -> Vec<SampleBatch> {
        calls.iter().map(|c| self.dispatch(c, exec).0).collect()
    }

    fn virtual_time(&self) -> f64 {
        self.clock
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{Item, KnapsackSub};
    use crate::hardware::{Coupler, Qubit};
    use crate::qubo::{encode, PenaltyConfig};

    fn device(name: &str, nq: usize) -> HardwareDescriptor {
        HardwareDescriptor {
            name: name.into(),
            provider: "test".into(),
            qubits: (0..nq)
                .map(|id| Qubit { id, t1: None, t2: None, err_1q: Some(0.001), err_readout: Some(0.02), available: true })
                .collect(),
            couplers: (1..nq).map(|i| Coupler { pair: (i - 1, i), err_2q: Some(0.01), duration: None, available: true }).collect(),
        }
    }

    fn qubo() -> QuboModel {
        let items = (1..=4).map(|i| Item { customer: i, weight: i as u32, cost: -(i as f64) }).collect();
        encode(&KnapsackSub { vehicle: 0, items, capacity: 5 }, &PenaltyConfig::default())
    }

    fn call(model: &QuboModel) -> QuboCall<'_> {
        QuboCall { model, sampler: SamplerConfig { shots: 16, sweeps: 10, ..Default::default() }, iteration: 0, vehicle: 0 }
    }

    fn orch(names: &[(&str, usize)]) -> Orchestrator {
        let pool = names.iter().map(|(n, q)| device(n, *q)).collect();
        Orchestrator::from_pool(pool, OrchestratorConfig::default(), None).unwrap()
    }

    #[test]
    fn reliability_formula() {
        let mut b = BackendState::from_descriptor(device("a", 3)).unwrap();
        assert_eq!(b.record_outcome(true), 0.5);
        let mut c = BackendState::from_descriptor(device("c", 3)).unwrap();
        assert_eq!(c.record_outcome(false), 0.0);
        let mut d = BackendState::from_descriptor(device("d", 3)).unwrap();
        for _ in 0..9 {
            d.record_outcome(true);
        }
        assert!((d.reliability() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn selection_rules() {
        let o = orch(&[("solo", 10)]);
        assert_eq!(o.select_backend(4, 0.0, &[]), Some(0));
        assert_eq!(o.select_backend(11, 0.0, &[]), None);

        let mut o = orch(&[("a", 10), ("b", 10)]);
        o.backends[0].successes = 1;
        o.backends[0].failures = 0;
        o.backends[1].successes = 9;
        assert_eq!(o.select_backend(4, 0.0, &[]), Some(1));
        o.backends[1].window = (100.0, 200.0);
        assert_eq!(o.select_backend(4, 0.0, &[]), Some(0));
        o.backends[0].window = (0.0, 10.0);
        assert_eq!(o.select_backend(4, 0.0, &[]), None);
    }

    #[test]
    fn clean_call_single_record() {
        let q = qubo();
        let mut o = orch(&[("a", 10)]);
        let (_, recs) = o.dispatch(&call(&q), Execution::Sequential);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].outcome, Outcome::Ok);
    }

    #[test]
    fn failover_to_alternate() {
        let q = qubo();
        let mut o = orch(&[("a", 10), ("b", 10)]);
        o.backends[0].plan = Some(FailurePlan::FailNext(2));
        let (_, recs) = o.dispatch(&call(&q), Execution::Sequential);
        let summary: Vec<(&str, Outcome)> = recs.iter().map(|r| (r.backend.as_str(), r.outcome)).collect();
        assert_eq!(summary, vec![("a", Outcome::BackendError), ("b", Outcome::Ok)]);
    }

    #[test]
    fn all_down_falls_back() {
        let q = qubo();
        let mut o = orch(&[("a", 10), ("b", 10), ("c", 10), ("d", 10)]);
        for b in &mut o.backends {
            b.plan = Some(FailurePlan::Down);
        }
        let (_, recs) = o.dispatch(&call(&q), Execution::Sequential);
        assert_eq!(recs.len(), 4);
        assert_eq!(recs.last().unwrap().outcome, Outcome::FallbackSimulator);
        assert_eq!(recs.iter().filter(|r| r.outcome.is_terminal()).count(), 1);
    }

    #[test]
    fn timeout_recorded() {
        let q = qubo();
        let mut o = orch(&[("slow", 10)]);
        o.backends[0].latency.base = 1000.0;
        o.backends[0].window = (0.0, f64::INFINITY);
        let (_, recs) = o.dispatch(&call(&q), Execution::Sequential);
        assert_eq!(recs[0].outcome, Outcome::Timeout);
        assert_eq!(recs[0].latency, 300.0);
        assert_eq!(recs.last().unwrap().outcome, Outcome::FallbackSimulator);
    }

    #[test]
    fn replay_is_identical() {
        let q = qubo();
        let run = || {
            let mut o = orch(&[("a", 10), ("b", 12)]);
            o.backends[0].plan = Some(FailurePlan::Random(0.4));
            o.backends[1].plan = Some(FailurePlan::Random(0.4));
            for _ in 0..30 {
                o.dispatch(&call(&q), Execution::Sequential);
            }
            (o.audit_jsonl(), o.summary_row("x"))
        };
        assert_eq!(run(), run());
    }
}
