//! LinUCB over the 27 circuit configurations with gate-budget screening and
//! trace-driven offline training.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{
    blended_error, estimate_gates, topology_summary, Arm, ContextVector, EstimatorConfig, GateEstimate,
    HardwareDescriptor, HardwareError, CONTEXT_DIM,
};

pub type Mat = SMatrix<f64, CONTEXT_DIM, CONTEXT_DIM>;
pub type Vec6 = SVector<f64, CONTEXT_DIM>;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("trace pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Hardware(#[from] HardwareError),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub a_inv: Mat,
    pub b: Vec6,
    pub count: u64,
}

impl Default for ArmState {
    fn default() -> Self {
        ArmState { a_inv: Mat::identity(), b: Vec6::zeros(), count: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditModel {
    pub alpha: f64,
    pub arms: Vec<ArmState>,
}

impl Default for BanditModel {
    fn default() -> Self {
        Self::new(1.0)
    }
}

fn vec6(x: &ContextVector) -> Vec6 {
    Vec6::from_column_slice(&x.0)
}

impl BanditModel {
    pub fn new(alpha: f64) -> Self {
        BanditModel { alpha, arms: vec![ArmState::default(); Arm::COUNT] }
    }

    pub fn score(&self, arm: Arm, x: &ContextVector) -> f64 {
        let s = &self.arms[arm.index()];
        let x = vec6(x);
        let theta = s.a_inv * s.b;
        theta.dot(&x) + self.alpha * x.dot(&(s.a_inv * x)).max(0.0).sqrt()
    }

    /// Arms by descending UCB score; equal scores keep canonical order.
    pub fn rank_arms(&self, x: &ContextVector) -> Vec<(Arm, f64)> {
        let mut ranked: Vec<(Arm, f64)> = Arm::all().map(|a| (a, self.score(a, x))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked
    }

    /// Sherman–Morrison rank-one update of the chosen arm.
    pub fn update(&mut self, arm: Arm, x: &ContextVector, reward: f64) {
        let s = &mut self.arms[arm.index()];
        let x = vec6(x);
        let ax = s.a_inv * x;
        let denom = 1.0 + x.dot(&ax);
        s.a_inv -= (ax * ax.transpose()) / denom;
        // Re-symmetrize to keep rounding from drifting the two triangles apart.
        s.a_inv = (s.a_inv + s.a_inv.transpose()) * 0.5;
        s.b += reward * x;
        s.count += 1;
    }

    /// Every `A⁻¹` admits a Cholesky factorization.
    pub fn is_positive_definite(&self) -> bool {
        self.arms.iter().all(|s| s.a_inv.cholesky().is_some())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            alpha: self.alpha,
            arms: self
                .arms
                .iter()
                .enumerate()
                .map(|(i, s)| ArmFile {
                    arm: Arm::from_index(i).to_string(),
                    a_inv: s.a_inv.transpose().as_slice().to_vec(),
                    b: s.b.as_slice().to_vec(),
                    count: s.count,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BanditError> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| BanditError::Format(e.to_string()))?;
        if f.arms.len() != Arm::COUNT {
            return Err(BanditError::Format(format!("expected {} arms, found {}", Arm::COUNT, f.arms.len())));
        }
        let arms = f
            .arms
            .into_iter()
            .map(|a| {
                if a.a_inv.len() != CONTEXT_DIM * CONTEXT_DIM || a.b.len() != CONTEXT_DIM {
                    return Err(BanditError::Format(format!("arm {} has wrong dimensions", a.arm)));
                }
                Ok(ArmState { a_inv: Mat::from_row_slice(&a.a_inv), b: Vec6::from_column_slice(&a.b), count: a.count })
            })
            .collect::<Result<_, _>>()?;
        Ok(BanditModel { alpha: f.alpha, arms })
    }
}

#[derive(Serialize, Deserialize)]
struct ArmFile {
    arm: String,
    /// Row-major.
    a_inv: Vec<f64>,
    b: Vec<f64>,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    alpha: f64,
    arms: Vec<ArmFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consultation {
    pub arm: Arm,
    /// The top-ranked arm was rejected.
    pub override_flag: bool,
    /// No ranked arm passed screening and the safe default was used.
    pub fallback: bool,
    pub estimate: GateEstimate,
}

/// Highest-ranked arm whose gate estimate fits the budget.
pub fn consult(
    model: &BanditModel,
    x: &ContextVector,
    n: usize,
    connectivity: f64,
    diameter: f64,
    est: &EstimatorConfig,
) -> Consultation {
    for (rank, (arm, _)) in model.rank_arms(x).into_iter().enumerate() {
        let e = estimate_gates(arm, n, connectivity, diameter, est);
        if e.safe {
            return Consultation { arm, override_flag: rank > 0, fallback: false, estimate: e };
        }
    }
    let arm = Arm::SAFE_DEFAULT;
    Consultation { arm, override_flag: true, fallback: true, estimate: estimate_gates(arm, n, connectivity, diameter, est) }
}

/// Inputs of the proxy reward for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub x: ContextVector,
    pub width: usize,
    pub connectivity: f64,
    pub diameter: f64,
    pub avg_error: f64,
}

/// Zero when over budget; otherwise `clip_[0,10](10·F·X − P)` with
/// `F = (1−err)^(n(d+1))`, `X = min(1, 0.4 + 0.2d + 0.1·rich)`, `P = 2(swap − 1)`.
pub fn proxy_reward(arm: Arm, round: &Round, est: &EstimatorConfig) -> f64 {
    let g = estimate_gates(arm, round.width, round.connectivity, round.diameter, est);
    if !g.safe {
        return 0.0;
    }
    let d = arm.depth as f64;
    let fid = (1.0 - round.avg_error).powf(round.width as f64 * (d + 1.0));
    let expr = (0.4 + 0.2 * d + 0.1 * arm.entanglement.richness() as f64).min(1.0);
    (10.0 * fid * expr - 2.0 * (g.swap - 1.0)).clamp(0.0, 10.0)
}

/// A source of bandit rounds and their rewards.
pub trait BanditEnv {
    fn observe(&mut self, rng: &mut ChaCha8Rng) -> Round;
    fn reward(&mut self, arm: Arm, round: &Round, est: &EstimatorConfig, rng: &mut ChaCha8Rng) -> f64;
    /// Expected reward of the best arm, when the environment knows it.
    fn oracle(&self, _round: &Round, _est: &EstimatorConfig) -> Option<f64> {
        None
    }
}

/// Static summary of one device snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub name: String,
    pub avg_error: f64,
    pub connectivity: f64,
    pub diameter: f64,
    pub qubits: usize,
}

impl Trace {
    pub fn from_descriptor(d: &HardwareDescriptor) -> Result<Self, HardwareError> {
        let t = topology_summary(d)?;
        Ok(Trace {
            name: d.name.clone(),
            avg_error: blended_error(d)?,
            connectivity: t.connectivity,
            diameter: t.diameter as f64,
            qubits: d.available_qubits().len(),
        })
    }
}

/// Replays device traces with multiplicative calibration drift and
/// synthetic problem width and complexity.
pub struct TracePoolEnv {
    pub traces: Vec<Trace>,
    pub drift_sigma: f64,
    pub drift_clip: (f64, f64),
    /// Inclusive range of logical widths, capped by the device size.
    pub width_range: (usize, usize),
}

impl BanditEnv for TracePoolEnv {
    fn observe(&mut self, rng: &mut ChaCha8Rng) -> Round {
        let t = &self.traces[rng.random_range(0..self.traces.len())];
        let noise = if self.drift_sigma > 0.0 {
            Normal::new(0.0, self.drift_sigma).expect("finite sigma").sample(rng)
        } else {
            0.0
        };
        let e = t.avg_error;
        let drifted = (e * (1.0 + noise)).clamp(self.drift_clip.0 * e, self.drift_clip.1 * e);
        let hi = self.width_range.1.min(t.qubits).max(1);
        let lo = self.width_range.0.clamp(1, hi);
        let width = rng.random_range(lo..=hi);
        let complexity = rng.random_range(1.0..=12.0);
        Round {
            x: ContextVector::new(complexity, drifted, t.connectivity, t.diameter, width),
            width,
            connectivity: t.connectivity,
            diameter: t.diameter,
            avg_error: drifted,
        }
    }

    fn reward(&mut self, arm: Arm, round: &Round, est: &EstimatorConfig, _rng: &mut ChaCha8Rng) -> f64 {
        proxy_reward(arm, round, est)
    }

    fn oracle(&self, round: &Round, est: &EstimatorConfig) -> Option<f64> {
        Arm::all().map(|a| proxy_reward(a, round, est)).reduce(f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub drift_sigma: f64,
    pub drift_clip: (f64, f64),
    pub seed: u64,
    pub alpha: f64,
    pub width_range: (usize, usize),
    pub estimator: EstimatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            drift_sigma: 0.1,
            drift_clip: (0.5, 2.0),
            seed: 0,
            alpha: 1.0,
            width_range: (2, 60),
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub reward: f64,
    pub rolling_mean: f64,
    pub arm: usize,
    pub width: usize,
    pub override_flag: bool,
    pub oracle: Option<f64>,
}

pub const ROLLING_WINDOW: usize = 100;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BanditModel,
    pub curve: Vec<CurvePoint>,
}

impl TrainOutcome {
    /// Per-arm selection frequency over the last `window` episodes ending at `episode`.
    pub fn arm_frequencies(&self, episode: usize, window: usize) -> [f64; Arm::COUNT] {
        let mut f = [0.0; Arm::COUNT];
        let end = (episode + 1).min(self.curve.len());
        let start = end.saturating_sub(window);
        for p in &self.curve[start..end] {
            f[p.arm] += 1.0;
        }
        let len = (end - start).max(1) as f64;
        f.iter_mut().for_each(|v| *v /= len);
        f
    }

    /// `episode,reward,rolling_mean,arm` rows with a header.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("episode,reward,rolling_mean,arm\n");
        for p in &self.curve {
            s.push_str(&format!("{},{},{},{}\n", p.episode, p.reward, p.rolling_mean, Arm::from_index(p.arm)));
        }
        s
    }
}

/// Runs `cfg.episodes` consult/reward/update rounds against `env`.
pub fn train<E: BanditEnv>(env: &mut E, cfg: &TrainConfig) -> TrainOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = BanditModel::new(cfg.alpha);
    let mut curve: Vec<CurvePoint> = Vec::with_capacity(cfg.episodes);
    let mut window_sum = 0.0;
    for episode in 0..cfg.episodes {
        let round = env.observe(&mut rng);
        let c = consult(&model, &round.x, round.width, round.connectivity, round.diameter, &cfg.estimator);
        let reward = env.reward(c.arm, &round, &cfg.estimator, &mut rng);
        model.update(c.arm, &round.x, reward);
        window_sum += reward;
        if episode >= ROLLING_WINDOW {
            window_sum -= curve[episode - ROLLING_WINDOW].reward;
        }
        let len = (episode + 1).min(ROLLING_WINDOW) as f64;
        curve.push(CurvePoint {
            episode,
            reward,
            rolling_mean: window_sum / len,
            arm: c.arm.index(),
            width: round.width,
            override_flag: c.override_flag,
            oracle: env.oracle(&round, &cfg.estimator),
        });
    }
    TrainOutcome { model, curve }
}

/// Offline training on device snapshots.
pub fn train_offline(pool: &[HardwareDescriptor], cfg: &TrainConfig) -> Result<TrainOutcome, BanditError> {
    if pool.is_empty() {
        return Err(BanditError::EmptyPool);
    }
    let traces = pool.iter().map(Trace::from_descriptor).collect::<Result<Vec<_>, _>>()?;
    let mut env = TracePoolEnv { traces, drift_sigma: cfg.drift_sigma, drift_clip: cfg.drift_clip, width_range: cfg.width_range };
    Ok(train(&mut env, cfg))
}
