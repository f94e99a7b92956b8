//! Hardware descriptors, topology and error summaries, context features,
//! qubit placement and the compiled gate-count estimator.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qubo::QuboModel;

#[derive(Debug, Error)]
pub enum HardwareError {
    #[error("device has no available qubits")]
    NoAvailableQubits,
    #[error("device reports no error data")]
    NoErrorData,
    #[error("need {needed} qubits, only {available} available")]
    InsufficientQubits { needed: usize, available: usize },
    #[error("invalid descriptor: {0}")]
    Invalid(String),
    #[error("descriptor io on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qubit {
    pub id: usize,
    #[serde(default)]
    pub t1: Option<f64>,
    #[serde(default)]
    pub t2: Option<f64>,
    #[serde(default)]
    pub err_1q: Option<f64>,
    #[serde(default)]
    pub err_readout: Option<f64>,
    #[serde(default = "yes")]
    pub available: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupler {
    pub pair: (usize, usize),
    #[serde(default)]
    pub err_2q: Option<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default = "yes")]
    pub available: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareDescriptor {
    pub name: String,
    #[serde(default)]
    pub provider: String,
    pub qubits: Vec<Qubit>,
    #[serde(default)]
    pub couplers: Vec<Coupler>,
}

impl HardwareDescriptor {
    /// Validates and renumbers qubits to contiguous ids in ascending original order.
    pub fn normalized(mut self) -> Result<Self, HardwareError> {
        let mut ids: Vec<usize> = self.qubits.iter().map(|q| q.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(HardwareError::Invalid(format!("{}: duplicate qubit id", self.name)));
        }
        let remap: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        for q in &mut self.qubits {
            q.id = remap[&q.id];
            for e in [q.err_1q, q.err_readout].into_iter().flatten() {
                if !(0.0..=1.0).contains(&e) {
                    return Err(HardwareError::Invalid(format!("{}: error rate {e} outside [0,1]", self.name)));
                }
            }
        }
        self.qubits.sort_by_key(|q| q.id);
        for c in &mut self.couplers {
            let (a, b) = c.pair;
            let (Some(&a), Some(&b)) = (remap.get(&a), remap.get(&b)) else {
                return Err(HardwareError::Invalid(format!("{}: coupler ({a},{b}) names an unknown qubit", self.name)));
            };
            if a == b {
                return Err(HardwareError::Invalid(format!("{}: self-loop coupler on {a}", self.name)));
            }
            if let Some(e) = c.err_2q {
                if !(0.0..=1.0).contains(&e) {
                    return Err(HardwareError::Invalid(format!("{}: error rate {e} outside [0,1]", self.name)));
                }
            }
            c.pair = (a.min(b), a.max(b));
        }
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, HardwareError> {
        let d: HardwareDescriptor =
            serde_json::from_str(text).map_err(|e| HardwareError::Invalid(e.to_string()))?;
        d.normalized()
    }

    pub fn load(path: &Path) -> Result<Self, HardwareError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HardwareError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn available_qubits(&self) -> Vec<usize> {
        self.qubits.iter().filter(|q| q.available).map(|q| q.id).collect()
    }

    /// Sorted adjacency lists over available qubits and couplers.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.qubits.len()];
        for c in &self.couplers {
            let (a, b) = c.pair;
            if c.available && self.qubits[a].available && self.qubits[b].available && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }
}

/// Loads every `*.json` descriptor in a directory, sorted by file name.
pub fn load_pool(dir: &Path) -> Result<Vec<HardwareDescriptor>, HardwareError> {
    let io = |e: std::io::Error| HardwareError::Io { path: dir.display().to_string(), message: e.to_string() };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| HardwareDescriptor::load(p)).collect()
}

fn bfs(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[start] = Some(0);
    let mut q = VecDeque::from([start]);
    while let Some(u) = q.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// Connected components of the available subgraph, largest first (ties: lowest member id).
fn components(desc: &HardwareDescriptor, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    let mut comps = Vec::new();
    for s in desc.available_qubits() {
        if seen[s] {
            continue;
        }
        let comp: Vec<usize> = bfs(adj, s).iter().enumerate().filter(|(_, d)| d.is_some()).map(|(i, _)| i).collect();
        for &i in &comp {
            seen[i] = true;
        }
        comps.push(comp);
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// Average degree of the largest available component.
    pub connectivity: f64,
    /// Longest shortest path in hops within that component.
    pub diameter: usize,
    pub component_size: usize,
}

pub fn topology_summary(desc: &HardwareDescriptor) -> Result<Topology, HardwareError> {
    let adj = desc.adjacency();
    let comps = components(desc, &adj);
    let comp = comps.first().ok_or(HardwareError::NoAvailableQubits)?;
    let degree_sum: usize = comp.iter().map(|&i| adj[i].len()).sum();
    let diameter = comp.iter().map(|&s| bfs(&adj, s).iter().flatten().copied().max().unwrap_or(0)).max().unwrap_or(0);
    Ok(Topology { connectivity: degree_sum as f64 / comp.len() as f64, diameter, component_size: comp.len() })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Category means over available elements: single-qubit, readout, two-qubit.
pub fn error_means(desc: &HardwareDescriptor) -> [Option<f64>; 3] {
    let live = || desc.qubits.iter().filter(|q| q.available);
    let e1 = mean(live().filter_map(|q| q.err_1q));
    let ro = mean(live().filter_map(|q| q.err_readout));
    let e2 = mean(
        desc.couplers
            .iter()
            .filter(|c| c.available && desc.qubits[c.pair.0].available && desc.qubits[c.pair.1].available)
            .filter_map(|c| c.err_2q),
    );
    [e1, ro, e2]
}

pub const ERROR_WEIGHTS: [f64; 3] = [0.2, 0.4, 0.4];

/// Weighted mix of the category means, renormalized over present categories.
pub fn blend(means: [Option<f64>; 3]) -> Result<f64, HardwareError> {
    let (num, den) = means
        .iter()
        .zip(ERROR_WEIGHTS)
        .filter_map(|(m, w)| m.map(|m| (m * w, w)))
        .fold((0.0, 0.0), |(a, b), (x, w)| (a + x, b + w));
    if den == 0.0 {
        return Err(HardwareError::NoErrorData);
    }
    Ok(num / den)
}

pub fn blended_error(desc: &HardwareDescriptor) -> Result<f64, HardwareError> {
    blend(error_means(desc))
}

/// `clip_[1,12](1 + 11·|E_Q| / (m(m−1)/2))`.
pub fn complexity_from_counts(m: usize, couplings: usize) -> f64 {
    if m < 2 {
        return 1.0;
    }
    let pairs = (m * (m - 1) / 2) as f64;
    (1.0 + 11.0 * couplings as f64 / pairs).clamp(1.0, 12.0)
}

pub fn hamiltonian_complexity(model: &QuboModel) -> f64 {
    complexity_from_counts(model.width, model.coupling_count())
}

pub const CONTEXT_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub [f64; CONTEXT_DIM]);

impl ContextVector {
    pub fn new(complexity: f64, avg_error: f64, connectivity: f64, diameter: f64, width: usize) -> Self {
        ContextVector([1.0, 0.1 * complexity, 100.0 * avg_error, 0.5 * connectivity, 0.1 * diameter, 0.05 * width as f64])
    }
}

pub fn build_context(model: &QuboModel, desc: &HardwareDescriptor, n: usize) -> Result<ContextVector, HardwareError> {
    let topo = topology_summary(desc)?;
    let err = blended_error(desc)?;
    Ok(ContextVector::new(hamiltonian_complexity(model), err, topo.connectivity, topo.diameter as f64, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Dense,
    Quality,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entanglement {
    Linear,
    Circular,
    Full,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::Dense, Placement::Quality, Placement::Random];
}

impl Entanglement {
    pub const ALL: [Entanglement; 3] = [Entanglement::Linear, Entanglement::Circular, Entanglement::Full];

    /// 0 for linear, 1 circular, 2 full.
    pub fn richness(self) -> usize {
        self as usize
    }

    pub fn pairs(self, n: usize) -> usize {
        match self {
            Entanglement::Linear => n.saturating_sub(1),
            Entanglement::Circular => n,
            Entanglement::Full => n * n.saturating_sub(1) / 2,
        }
    }
}

/// One circuit configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arm {
    pub placement: Placement,
    pub entanglement: Entanglement,
    pub depth: u8,
}

impl Arm {
    pub const COUNT: usize = 27;
    pub const SAFE_DEFAULT: Arm = Arm { placement: Placement::Dense, entanglement: Entanglement::Linear, depth: 1 };

    pub fn index(self) -> usize {
        9 * self.placement as usize + 3 * self.entanglement as usize + (self.depth as usize - 1)
    }

    pub fn from_index(idx: usize) -> Arm {
        assert!(idx < Self::COUNT);
        Arm {
            placement: Placement::ALL[idx / 9],
            entanglement: Entanglement::ALL[idx / 3 % 3],
            depth: (idx % 3 + 1) as u8,
        }
    }

    pub fn all() -> impl Iterator<Item = Arm> {
        (0..Self::COUNT).map(Arm::from_index)
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = ["dense", "quality", "random"][self.placement as usize];
        let e = ["linear", "circular", "full"][self.entanglement as usize];
        write!(f, "{p}/{e}/{}", self.depth)
    }
}

/// Chooses `n` available physical qubits.
pub fn select_placement(
    desc: &HardwareDescriptor,
    n: usize,
    strategy: Placement,
    seed: u64,
) -> Result<Vec<usize>, HardwareError> {
    let avail = desc.available_qubits();
    if n > avail.len() {
        return Err(HardwareError::InsufficientQubits { needed: n, available: avail.len() });
    }
    let adj = desc.adjacency();
    match strategy {
        Placement::Dense => {
            let mut picked = Vec::with_capacity(n);
            let mut taken = vec![false; desc.qubits.len()];
            for comp in components(desc, &adj) {
                if picked.len() == n {
                    break;
                }
                let start = comp.iter().copied().reduce(|b, i| if adj[i].len() > adj[b].len() { i } else { b }).unwrap();
                let mut q = VecDeque::from([start]);
                taken[start] = true;
                while let Some(u) = q.pop_front() {
                    picked.push(u);
                    if picked.len() == n {
                        break;
                    }
                    for &v in &adj[u] {
                        if !taken[v] {
                            taken[v] = true;
                            q.push_back(v);
                        }
                    }
                }
            }
            Ok(picked)
        }
        Placement::Quality => {
            let mut q: Vec<&Qubit> = desc.qubits.iter().filter(|q| q.available).collect();
            let score = |q: &Qubit| q.err_readout.unwrap_or(0.0) + q.err_1q.unwrap_or(0.0);
            let life = |q: &Qubit| q.t1.unwrap_or(0.0).min(q.t2.unwrap_or(0.0));
            q.sort_by(|a, b| score(a).total_cmp(&score(b)).then(life(b).total_cmp(&life(a))).then(a.id.cmp(&b.id)));
            Ok(q.iter().take(n).map(|q| q.id).collect())
        }
        Placement::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(rand::seq::index::sample(&mut rng, avail.len(), n).into_iter().map(|i| avail[i]).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub gamma: f64,
    /// Swap coefficient per entanglement: linear, circular, full.
    pub beta: [f64; 3],
    /// Placement factor: dense, quality, random.
    pub kappa: [f64; 3],
    pub g_max: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { gamma: 1.2, beta: [0.5, 0.7, 1.0], kappa: [0.8, 1.0, 1.3], g_max: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateEstimate {
    pub gates: u64,
    pub swap: f64,
    pub safe: bool,
}

/// `Ĝ = ⌈n(d+1) + pairs·d·swap·γ⌉` with `swap = 1 + β_e(avg_hops − 1)κ_p`.
pub fn estimate_gates(arm: Arm, n: usize, connectivity: f64, diameter: f64, cfg: &EstimatorConfig) -> GateEstimate {
    let d = arm.depth as f64;
    let hops = (diameter / connectivity.max(1.0)).max(1.0);
    let swap = 1.0 + cfg.beta[arm.entanglement as usize] * (hops - 1.0) * cfg.kappa[arm.placement as usize];
    let raw = n as f64 * (d + 1.0) + arm.entanglement.pairs(n) as f64 * d * swap * cfg.gamma;
    let gates = (raw - 1e-9).ceil().max(0.0) as u64;
    GateEstimate { gates, swap, safe: gates <= cfg.g_max }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn graph(name: &str, nq: usize, edges: &[(usize, usize)]) -> HardwareDescriptor {
        HardwareDescriptor {
            name: name.into(),
            provider: "test".into(),
            qubits: (0..nq)
                .map(|id| Qubit { id, t1: Some(100.0), t2: Some(80.0), err_1q: Some(0.001), err_readout: Some(0.02), available: true })
                .collect(),
            couplers: edges.iter().map(|&pair| Coupler { pair, err_2q: Some(0.01), duration: None, available: true }).collect(),
        }
    }

    #[test]
    fn path_and_complete() {
        let p = topology_summary(&graph("p", 4, &[(0, 1), (1, 2), (2, 3)])).unwrap();
        assert_eq!((p.connectivity, p.diameter), (1.5, 3));
        let k4 = graph("k", 4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let t = topology_summary(&k4).unwrap();
        assert_eq!((t.connectivity, t.diameter), (3.0, 1));
    }

    #[test]
    fn largest_component() {
        let g = graph("c", 7, &[(0, 1), (2, 3), (3, 4), (4, 5), (5, 6)]);
        let t = topology_summary(&g).unwrap();
        assert_eq!(t.component_size, 5);
        assert_eq!(t.diameter, 4);
        assert!((t.connectivity - 1.6).abs() < 1e-12);
    }

    #[test]
    fn no_available() {
        let mut g = graph("x", 2, &[(0, 1)]);
        g.qubits.iter_mut().for_each(|q| q.available = false);
        assert!(matches!(topology_summary(&g), Err(HardwareError::NoAvailableQubits)));
    }

    #[test]
    fn blended() {
        assert!((blend([Some(0.001), Some(0.02), Some(0.01)]).unwrap() - 0.0122).abs() < 1e-12);
        assert_eq!(blend([None, Some(0.02), None]).unwrap(), 0.02);
        assert_eq!(blend([Some(0.0), Some(0.0), Some(0.0)]).unwrap(), 0.0);
        assert!(matches!(blend([None, None, None]), Err(HardwareError::NoErrorData)));
        assert!((blended_error(&graph("p", 2, &[(0, 1)])).unwrap() - 0.0122).abs() < 1e-12);
    }

    #[test]
    fn complexity() {
        assert_eq!(complexity_from_counts(4, 6), 12.0);
        assert_eq!(complexity_from_counts(4, 0), 1.0);
        assert_eq!(complexity_from_counts(4, 3), 6.5);
        assert_eq!(complexity_from_counts(1, 0), 1.0);
    }

    #[test]
    fn context() {
        let x = ContextVector::new(1.0, 0.01, 2.0, 5.0, 20);
        let want = [1.0, 0.1, 1.0, 1.0, 0.5, 1.0];
        for (a, b) in x.0.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(ContextVector::new(1.0, 0.0, 2.0, 5.0, 0).0[2], 0.0);
        assert_eq!(ContextVector::new(1.0, 0.0, 2.0, 5.0, 0).0[5], 0.0);
    }

    #[test]
    fn arm_indexing() {
        for (i, a) in Arm::all().enumerate() {
            assert_eq!(a.index(), i);
        }
        assert_eq!(Arm::SAFE_DEFAULT.index(), 0);
        assert_eq!(Arm::from_index(26).to_string(), "random/full/3");
    }

    #[test]
    fn gate_examples() {
        let cfg = EstimatorConfig::default();
        let a = |p, e, d| Arm { placement: p, entanglement: e, depth: d };
        let g = estimate_gates(a(Placement::Dense, Entanglement::Linear, 1), 10, 2.0, 2.0, &cfg);
        assert_eq!((g.gates, g.swap, g.safe), (31, 1.0, true));
        assert_eq!(estimate_gates(a(Placement::Random, Entanglement::Full, 3), 20, 2.0, 10.0, &cfg).gates, 4321);
        let big = estimate_gates(a(Placement::Random, Entanglement::Full, 3), 40, 2.0, 12.0, &cfg);
        assert_eq!(big.gates, 21220);
        assert!(!big.safe);
    }

    #[test]
    fn gate_monotone() {
        let cfg = EstimatorConfig::default();
        for arm in Arm::all() {
            let base = estimate_gates(arm, 12, 2.5, 6.0, &cfg).gates;
            assert!(estimate_gates(arm, 13, 2.5, 6.0, &cfg).gates >= base);
            assert!(estimate_gates(arm, 12, 2.5, 7.0, &cfg).gates >= base);
            if arm.depth < 3 {
                assert!(estimate_gates(Arm { depth: arm.depth + 1, ..arm }, 12, 2.5, 6.0, &cfg).gates >= base);
            }
            if arm.entanglement != Entanglement::Full {
                let richer = Entanglement::ALL[arm.entanglement as usize + 1];
                assert!(estimate_gates(Arm { entanglement: richer, ..arm }, 12, 2.5, 6.0, &cfg).gates >= base);
            }
        }
    }

    #[test]
    fn placements() {
        let p = graph("p", 5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        for s in Placement::ALL {
            let mut all = select_placement(&p, 5, s, 3).unwrap();
            all.sort();
            assert_eq!(all, vec![0, 1, 2, 3, 4]);
        }
        let mut d = select_placement(&p, 3, Placement::Dense, 0).unwrap();
        d.sort();
        assert!(d.windows(2).all(|w| w[1] == w[0] + 1));
        assert!(matches!(select_placement(&p, 6, Placement::Dense, 0), Err(HardwareError::InsufficientQubits { .. })));
    }

    #[test]
    fn quality_prefers_low_error() {
        let mut g = graph("q", 3, &[(0, 1), (1, 2)]);
        g.qubits[2].err_readout = Some(0.001);
        g.qubits[0].t2 = Some(10.0);
        assert_eq!(select_placement(&g, 2, Placement::Quality, 0).unwrap(), vec![2, 1]);
    }

    #[test]
    fn dead_qubit_never_selected() {
        let mut g = graph("d", 6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        g.qubits[3].available = false;
        for seed in 0..1000 {
            for s in Placement::ALL {
                assert!(!select_placement(&g, 5, s, seed).unwrap().contains(&3));
            }
        }
    }

    #[test]
    fn normalization_renumbers() {
        let text = r#"{"name":"n","qubits":[{"id":10,"err_readout":0.01},{"id":4,"err_readout":0.03}],"couplers":[{"pair":[10,4],"err_2q":0.02}]}"#;
        let d = HardwareDescriptor::from_json(text).unwrap();
        assert_eq!(d.available_qubits(), vec![0, 1]);
        assert_eq!(d.couplers[0].pair, (0, 1));
        assert_eq!(d.qubits[0].err_readout, Some(0.03));
        let bad = r#"{"name":"b","qubits":[{"id":0}],"couplers":[{"pair":[0,3]}]}"#;
        assert!(HardwareDescriptor::from_json(bad).is_err());
    }
}
