//! CVRP instances: CVRPLIB parsing and writing, synthetic generation, costs.
//!
//! Node `0` is always the depot; customers are nodes `1..=n`. Costs are held
//! in a dense symmetric matrix. `EUC_2D` distances use the TSPLIB
//! nearest-integer convention.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("inconsistent dimension: header says {declared}, section {section} has {found} entries")]
    InconsistentDimension { declared: usize, section: &'static str, found: usize },
    #[error("negative demand {demand} at node {node}")]
    NegativeDemand { node: usize, demand: i64 },
    #[error("unsupported edge weight type {0}")]
    UnsupportedEdgeWeight(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("node index out of range: ({0}, {1})")]
    IndexOutOfRange(usize, usize),
    #[error("empty range: {0}")]
    EmptyRange(&'static str),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// How the cost matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeWeightKind {
    Euc2d,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    pub comment: Option<String>,
    /// One `(x, y)` per node, depot first.
    pub coords: Option<Vec<(f64, f64)>>,
    /// One demand per node; `demands[0]` is the depot and is zero.
    pub demands: Vec<u32>,
    pub capacity: u32,
    pub fleet: usize,
    pub bks: Option<f64>,
    pub edge_weight: EdgeWeightKind,
    costs: Vec<f64>,
}

/// TSPLIB `nint` rounding of a Euclidean distance.
pub fn euc_2d(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    (d + 0.5).floor()
}

impl Instance {
    /// Builds an instance from coordinates with `EUC_2D` costs.
    pub fn from_coords(
        name: impl Into<String>,
        coords: Vec<(f64, f64)>,
        demands: Vec<u32>,
        capacity: u32,
        fleet: usize,
    ) -> Result<Self, InstanceError> {
        let nodes = coords.len();
        let mut costs = vec![0.0; nodes * nodes];
        for i in 0..nodes {
            for j in (i + 1)..nodes {
                let d = euc_2d(coords[i], coords[j]);
                costs[i * nodes + j] = d;
                costs[j * nodes + i] = d;
            }
        }
        let inst = Instance {
            name: name.into(),
            comment: None,
            coords: Some(coords),
            demands,
            capacity,
            fleet,
            bks: None,
            edge_weight: EdgeWeightKind::Euc2d,
            costs,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Builds an instance from an explicit full cost matrix (row-major, depot first).
    pub fn from_matrix(
        name: impl Into<String>,
        costs: Vec<f64>,
        demands: Vec<u32>,
        capacity: u32,
        fleet: usize,
    ) -> Result<Self, InstanceError> {
        let inst = Instance {
            name: name.into(),
            comment: None,
            coords: None,
            demands,
            capacity,
            fleet,
            bks: None,
            edge_weight: EdgeWeightKind::Explicit,
            costs,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_bks(mut self, bks: Option<f64>) -> Self {
        self.bks = bks;
        self
    }

    /// Number of customers (depot excluded).
    pub fn n(&self) -> usize {
        self.demands.len() - 1
    }

    /// Number of nodes including the depot.
    pub fn nodes(&self) -> usize {
        self.demands.len()
    }

    pub fn total_demand(&self) -> u64 {
        self.demands.iter().map(|&d| d as u64).sum()
    }

    /// Minimum fleet size that can carry the total demand.
    pub fn min_fleet(&self) -> usize {
        self.total_demand().div_ceil(self.capacity.max(1) as u64) as usize
    }

    /// Travel cost between two nodes.
    pub fn cost(&self, i: usize, j: usize) -> Result<f64, InstanceError> {
        let m = self.nodes();
        if i >= m || j >= m {
            return Err(InstanceError::IndexOutOfRange(i, j));
        }
        Ok(self.costs[i * m + j])
    }

    /// Unchecked cost lookup for hot loops.
    #[inline]
    pub fn c(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.nodes() + j]
    }

    pub fn cost_matrix(&self) -> &[f64] {
        &self.costs
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let m = self.nodes();
        if m < 2 {
            return Err(InstanceError::Invalid("instance needs a depot and at least one customer".into()));
        }
        if self.costs.len() != m * m {
            return Err(InstanceError::InconsistentDimension {
                declared: m,
                section: "EDGE_WEIGHT_SECTION",
                found: (self.costs.len() as f64).sqrt() as usize,
            });
        }
        if let Some(c) = &self.coords {
            if c.len() != m {
                return Err(InstanceError::InconsistentDimension {
                    declared: m,
                    section: "NODE_COORD_SECTION",
                    found: c.len(),
                });
            }
        }
        if self.capacity == 0 {
            return Err(InstanceError::Invalid("capacity must be positive".into()));
        }
        if self.demands[0] != 0 {
            return Err(InstanceError::Invalid("depot demand must be zero".into()));
        }
        if let Some(i) = self.demands.iter().position(|&d| d > self.capacity) {
            return Err(InstanceError::Invalid(format!(
                "demand {} at node {i} exceeds capacity {}",
                self.demands[i], self.capacity
            )));
        }
        for i in 0..m {
            if self.costs[i * m + i] != 0.0 {
                return Err(InstanceError::Invalid(format!("nonzero diagonal cost at node {i}")));
            }
            for j in (i + 1)..m {
                let (a, b) = (self.costs[i * m + j], self.costs[j * m + i]);
                if a != b {
                    return Err(InstanceError::Invalid(format!("asymmetric cost between {i} and {j}")));
                }
                if !a.is_finite() || a < 0.0 {
                    return Err(InstanceError::Invalid(format!("invalid cost {a} between {i} and {j}")));
                }
            }
        }
        if self.fleet == 0 || self.fleet < self.min_fleet() {
            return Err(InstanceError::Invalid(format!(
                "fleet {} below capacity-feasible minimum {}",
                self.fleet,
                self.min_fleet()
            )));
        }
        Ok(())
    }

    /// Reads a `.vrp` file and an optional `.sol`/`.bks` sidecar next to it.
    pub fn load(path: &Path) -> Result<Self, InstanceError> {
        let io = |source| InstanceError::Io { path: path.display().to_string(), source };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let mut inst = parse_instance(&text)?;
        for ext in ["sol", "bks"] {
            let side = path.with_extension(ext);
            if side.exists() {
                let body = std::fs::read_to_string(&side)
                    .map_err(|source| InstanceError::Io { path: side.display().to_string(), source })?;
                if let Some(b) = parse_bks_sidecar(&body) {
                    inst.bks = Some(b);
                    break;
                }
            }
        }
        Ok(inst)
    }

    /// Serializes in CVRPLIB format. Coordinates are written for `EUC_2D`
    /// instances; otherwise a `FULL_MATRIX` edge weight section.
    pub fn to_vrp_string(&self) -> String {
        let mut s = String::new();
        let m = self.nodes();
        let _ = writeln!(s, "NAME : {}", self.name);
        if let Some(c) = &self.comment {
            let _ = writeln!(s, "COMMENT : {c}");
        }
        let _ = writeln!(s, "TYPE : CVRP");
        let _ = writeln!(s, "DIMENSION : {m}");
        let _ = writeln!(s, "VEHICLES : {}", self.fleet);
        if let Some(b) = self.bks {
            let _ = writeln!(s, "BEST_KNOWN : {b}");
        }
        match (&self.coords, self.edge_weight) {
            (Some(coords), EdgeWeightKind::Euc2d) => {
                let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EUC_2D");
                let _ = writeln!(s, "CAPACITY : {}", self.capacity);
                let _ = writeln!(s, "NODE_COORD_SECTION");
                for (i, (x, y)) in coords.iter().enumerate() {
                    let _ = writeln!(s, "{} {} {}", i + 1, x, y);
                }
            }
            _ => {
                let _ = writeln!(s, "EDGE_WEIGHT_TYPE : EXPLICIT");
                let _ = writeln!(s, "EDGE_WEIGHT_FORMAT : FULL_MATRIX");
                let _ = writeln!(s, "CAPACITY : {}", self.capacity);
                let _ = writeln!(s, "EDGE_WEIGHT_SECTION");
                for i in 0..m {
                    let row: Vec<String> = (0..m).map(|j| format!("{}", self.c(i, j))).collect();
                    let _ = writeln!(s, "{}", row.join(" "));
                }
            }
        }
        let _ = writeln!(s, "DEMAND_SECTION");
        for (i, d) in self.demands.iter().enumerate() {
            let _ = writeln!(s, "{} {}", i + 1, d);
        }
        let _ = writeln!(s, "DEPOT_SECTION\n 1\n -1\nEOF");
        s
    }
}

/// Extracts a best-known value from a sidecar: `BEST_KNOWN: <x>` or a
/// CVRPLIB `.sol` line `Cost <x>`.
pub fn parse_bks_sidecar(text: &str) -> Option<f64> {
    for line in text.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("BEST_KNOWN") {
            let v = rest.trim_start_matches([' ', ':', '\t']).trim();
            if let Ok(x) = v.parse() {
                return Some(x);
            }
        }
        if let Some(rest) = t.strip_prefix("Cost") {
            if let Ok(x) = rest.trim().parse() {
                return Some(x);
            }
        }
    }
    None
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Coords,
    Weights,
    Demands,
    Depot,
}

fn number_after(text: &str, key: &str) -> Option<f64> {
    let lower = text.to_ascii_lowercase();
    let pos = lower.find(key)?;
    let tail = &text[pos + key.len()..];
    let tail = tail.trim_start_matches(|c: char| c == ':' || c.is_whitespace());
    let num: String = tail.chars().take_while(|c| c.is_ascii_digit() || *c == '.').collect();
    num.trim_end_matches('.').parse().ok()
}

fn fleet_from_name(name: &str) -> Option<usize> {
    let idx = name.rfind("-k")?;
    let digits: String = name[idx + 2..].chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Parses CVRPLIB text.
pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let mut name = String::new();
    let mut comment = None;
    let mut dimension: Option<usize> = None;
    let mut capacity: Option<u32> = None;
    let mut vehicles: Option<usize> = None;
    let mut best_known: Option<f64> = None;
    let mut edge_type: Option<String> = None;
    let mut edge_format = String::from("FULL_MATRIX");
    let mut coords: Vec<(usize, f64, f64)> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut demands: Vec<(usize, i64)> = Vec::new();
    let mut depots: Vec<i64> = Vec::new();
    let mut seen_demand = false;
    let mut section = Section::None;

    let bad = |msg: String| InstanceError::MalformedFile(msg);

    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let upper = line.to_ascii_uppercase();
        if upper == "EOF" {
            break;
        }
        let header = upper.split(|c: char| c == ':' || c.is_whitespace()).next().unwrap_or("");
        match header {
            "NODE_COORD_SECTION" => {
                section = Section::Coords;
                continue;
            }
            "EDGE_WEIGHT_SECTION" => {
                section = Section::Weights;
                continue;
            }
            "DEMAND_SECTION" => {
                section = Section::Demands;
                seen_demand = true;
                continue;
            }
            "DEPOT_SECTION" => {
                section = Section::Depot;
                continue;
            }
            "DISPLAY_DATA_SECTION" => {
                section = Section::None;
                continue;
            }
            _ => {}
        }
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim().to_ascii_uppercase();
            if key.chars().all(|c| c.is_ascii_uppercase() || c == '_') && !key.is_empty() {
                let value = value.trim();
                section = Section::None;
                match key.as_str() {
                    "NAME" => name = value.to_string(),
                    "COMMENT" => comment = Some(value.to_string()),
                    "DIMENSION" => {
                        dimension = Some(value.parse().map_err(|_| bad(format!("bad DIMENSION {value}")))?)
                    }
                    "CAPACITY" => {
                        capacity = Some(value.parse().map_err(|_| bad(format!("bad CAPACITY {value}")))?)
                    }
                    "VEHICLES" => vehicles = value.parse().ok(),
                    "BEST_KNOWN" => best_known = value.parse().ok(),
                    "EDGE_WEIGHT_TYPE" => edge_type = Some(value.to_ascii_uppercase()),
                    "EDGE_WEIGHT_FORMAT" => edge_format = value.to_ascii_uppercase(),
                    _ => {}
                }
                continue;
            }
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Coords => {
                if fields.len() < 3 {
                    return Err(bad(format!("short coordinate line: {line}")));
                }
                let id = fields[0].parse().map_err(|_| bad(format!("bad node id: {line}")))?;
                let x = fields[1].parse().map_err(|_| bad(format!("bad x: {line}")))?;
                let y = fields[2].parse().map_err(|_| bad(format!("bad y: {line}")))?;
                coords.push((id, x, y));
            }
            Section::Weights => {
                for f in fields {
                    weights.push(f.parse().map_err(|_| bad(format!("bad edge weight {f}")))?);
                }
            }
            Section::Demands => {
                if fields.len() < 2 {
                    return Err(bad(format!("short demand line: {line}")));
                }
                let id = fields[0].parse().map_err(|_| bad(format!("bad node id: {line}")))?;
                let d = fields[1].parse().map_err(|_| bad(format!("bad demand: {line}")))?;
                demands.push((id, d));
            }
            Section::Depot => {
                for f in fields {
                    depots.push(f.parse().map_err(|_| bad(format!("bad depot id {f}")))?);
                }
            }
            Section::None => return Err(bad(format!("unexpected line outside any section: {line}"))),
        }
    }

    let dim = dimension.ok_or_else(|| bad("missing DIMENSION".into()))?;
    let capacity = capacity.ok_or_else(|| bad("missing CAPACITY".into()))?;
    if !seen_demand {
        return Err(bad("missing DEMAND_SECTION".into()));
    }
    if dim < 2 {
        return Err(InstanceError::Invalid(format!("DIMENSION {dim} leaves no customers")));
    }
    if demands.len() != dim {
        return Err(InstanceError::InconsistentDimension { declared: dim, section: "DEMAND_SECTION", found: demands.len() });
    }
    let depot_id = depots.iter().copied().find(|&d| d >= 0).unwrap_or(1) as usize;
    if depot_id == 0 || depot_id > dim {
        return Err(bad(format!("depot id {depot_id} outside 1..={dim}")));
    }

    // File ids are 1-based; internal order puts the depot first, then the
    // remaining nodes in file order.
    let order: Vec<usize> = std::iter::once(depot_id - 1)
        .chain((0..dim).filter(|&i| i != depot_id - 1))
        .collect();

    let mut file_demands = vec![None; dim];
    for (id, d) in demands {
        if id == 0 || id > dim {
            return Err(InstanceError::InconsistentDimension { declared: dim, section: "DEMAND_SECTION", found: id });
        }
        if d < 0 {
            return Err(InstanceError::NegativeDemand { node: id, demand: d });
        }
        file_demands[id - 1] = Some(d as u32);
    }
    let file_demands: Vec<u32> = file_demands
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or_else(|| bad(format!("missing demand for node {}", i + 1))))
        .collect::<Result<_, _>>()?;
    let node_demands: Vec<u32> = order.iter().map(|&i| file_demands[i]).collect();

    let edge_type = edge_type.unwrap_or_else(|| if weights.is_empty() { "EUC_2D".into() } else { "EXPLICIT".into() });
    let node_coords = if coords.is_empty() {
        None
    } else {
        if coords.len() != dim {
            return Err(InstanceError::InconsistentDimension { declared: dim, section: "NODE_COORD_SECTION", found: coords.len() });
        }
        let mut file_coords = vec![(0.0, 0.0); dim];
        for (id, x, y) in coords {
            if id == 0 || id > dim {
                return Err(InstanceError::InconsistentDimension { declared: dim, section: "NODE_COORD_SECTION", found: id });
            }
            file_coords[id - 1] = (x, y);
        }
        Some(order.iter().map(|&i| file_coords[i]).collect::<Vec<_>>())
    };

    let vehicles = vehicles
        .or_else(|| fleet_from_name(&name))
        .or_else(|| comment.as_deref().and_then(|c| number_after(c, "trucks")).map(|k| k as usize));
    let bks = best_known.or_else(|| {
        comment.as_deref().and_then(|c| number_after(c, "optimal value").or_else(|| number_after(c, "best value")))
    });

    let mut inst = if !weights.is_empty() {
        let full = expand_weights(&weights, dim, &edge_format)?;
        let mut costs = vec![0.0; dim * dim];
        for (a, &fa) in order.iter().enumerate() {
            for (b, &fb) in order.iter().enumerate() {
                costs[a * dim + b] = full[fa * dim + fb];
            }
        }
        Instance {
            name,
            comment,
            coords: node_coords,
            demands: node_demands,
            capacity,
            fleet: 0,
            bks,
            edge_weight: EdgeWeightKind::Explicit,
            costs,
        }
    } else {
        if edge_type != "EUC_2D" {
            return Err(InstanceError::UnsupportedEdgeWeight(edge_type));
        }
        let c = node_coords.ok_or_else(|| bad("missing NODE_COORD_SECTION or EDGE_WEIGHT_SECTION".into()))?;
        let mut inst = Instance::from_coords(name, c, node_demands.clone(), capacity, usize::MAX)?;
        inst.comment = comment;
        inst.bks = bks;
        inst
    };
    inst.fleet = vehicles.unwrap_or_else(|| inst.min_fleet()).max(1);
    inst.validate()?;
    Ok(inst)
}

fn expand_weights(w: &[f64], dim: usize, format: &str) -> Result<Vec<f64>, InstanceError> {
    let mut full = vec![0.0; dim * dim];
    let expected = match format {
        "FULL_MATRIX" => dim * dim,
        "LOWER_ROW" | "UPPER_ROW" => dim * (dim - 1) / 2,
        "LOWER_DIAG_ROW" | "UPPER_DIAG_ROW" => dim * (dim + 1) / 2,
        other => return Err(InstanceError::UnsupportedEdgeWeight(format!("EXPLICIT/{other}"))),
    };
    if w.len() != expected {
        return Err(InstanceError::InconsistentDimension { declared: dim, section: "EDGE_WEIGHT_SECTION", found: w.len() });
    }
    let mut it = w.iter().copied();
    let mut set = |i: usize, j: usize, v: f64| {
        full[i * dim + j] = v;
        full[j * dim + i] = v;
    };
    match format {
        "FULL_MATRIX" => {
            for (k, v) in w.iter().enumerate() {
                full[k] = *v;
            }
        }
        "LOWER_ROW" => {
            for i in 1..dim {
                for j in 0..i {
                    set(i, j, it.next().unwrap());
                }
            }
        }
        "LOWER_DIAG_ROW" => {
            for i in 0..dim {
                for j in 0..=i {
                    set(i, j, it.next().unwrap());
                }
            }
        }
        "UPPER_ROW" => {
            for i in 0..dim {
                for j in (i + 1)..dim {
                    set(i, j, it.next().unwrap());
                }
            }
        }
        _ => {
            for i in 0..dim {
                for j in i..dim {
                    set(i, j, it.next().unwrap());
                }
            }
        }
    }
    for i in 0..dim {
        full[i * dim + i] = 0.0;
    }
    Ok(full)
}

/// Synthetic instance generator settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Inclusive range for the number of customers.
    pub n_range: (usize, usize),
    pub capacity: u32,
    /// Inclusive demand range; must lie within `[1, capacity]`.
    pub demand_range: (u32, u32),
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { n_range: (10, 50), capacity: 100, demand_range: (1, 29), seed: 0 }
    }
}

/// Side length of the integer coordinate grid used by the generator.
pub const GRID_SIZE: u32 = 100;

/// Draws an instance with uniform integer coordinates on `[0, 100]²`,
/// i.i.d. uniform demands and the minimum capacity-feasible fleet.
pub fn generate_instance(cfg: &GeneratorConfig) -> Result<Instance, InstanceError> {
    let (nlo, nhi) = cfg.n_range;
    let (dlo, dhi) = cfg.demand_range;
    if nlo > nhi || nhi == 0 {
        return Err(InstanceError::EmptyRange("n_range"));
    }
    if dlo > dhi || dhi == 0 {
        return Err(InstanceError::EmptyRange("demand_range"));
    }
    if dlo == 0 || dhi > cfg.capacity {
        return Err(InstanceError::Invalid(format!(
            "demand range [{dlo}, {dhi}] must lie within [1, {}]",
            cfg.capacity
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = rng.random_range(nlo.max(1)..=nhi);
    let coords: Vec<(f64, f64)> = (0..=n)
        .map(|_| (rng.random_range(0..=GRID_SIZE) as f64, rng.random_range(0..=GRID_SIZE) as f64))
        .collect();
    let demands: Vec<u32> = std::iter::once(0).chain((0..n).map(|_| rng.random_range(dlo..=dhi))).collect();
    let total: u64 = demands.iter().map(|&d| d as u64).sum();
    let fleet = total.div_ceil(cfg.capacity as u64) as usize;
    let name = format!("synth-n{}-k{}-s{}", n + 1, fleet, cfg.seed);
    Instance::from_coords(name, coords, demands, cfg.capacity, fleet)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = "NAME : tiny\nTYPE : CVRP\nDIMENSION : 2\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : 1\nNODE_COORD_SECTION\n1 0 0\n2 3 4\nDEMAND_SECTION\n1 0\n2 1\nDEPOT_SECTION\n1\n-1\nEOF\n";

    #[test]
    fn two_node_triangle() {
        let inst = parse_instance(TWO_NODE).unwrap();
        assert_eq!(inst.n(), 1);
        assert_eq!(inst.cost(0, 1).unwrap(), 5.0);
        assert_eq!(inst.cost(1, 0).unwrap(), 5.0);
        assert_eq!(inst.cost(1, 1).unwrap(), 0.0);
        assert_eq!(inst.fleet, 1);
        assert!(matches!(inst.cost(0, 2), Err(InstanceError::IndexOutOfRange(0, 2))));
    }

    #[test]
    fn nint_rounding() {
        assert_eq!(euc_2d((0.0, 0.0), (0.0, 5.0)), 5.0);
        // sqrt(125) = 11.18
        assert_eq!(euc_2d((0.0, 5.0), (10.0, 0.0)), 11.0);
        // sqrt(2) * 1.5 = 2.12 ; sqrt(6.5) = 2.55
        assert_eq!(euc_2d((0.0, 0.0), (2.5, 0.5)), 3.0);
    }

    #[test]
    fn missing_demand_section() {
        let text = TWO_NODE.replace("DEMAND_SECTION\n1 0\n2 1\n", "");
        assert!(matches!(parse_instance(&text), Err(InstanceError::MalformedFile(_))));
    }

    #[test]
    fn missing_dimension() {
        let text = TWO_NODE.replace("DIMENSION : 2\n", "");
        assert!(matches!(parse_instance(&text), Err(InstanceError::MalformedFile(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let text = TWO_NODE.replace("DIMENSION : 2", "DIMENSION : 3");
        assert!(matches!(parse_instance(&text), Err(InstanceError::InconsistentDimension { .. })));
    }

    #[test]
    fn negative_demand() {
        let text = TWO_NODE.replace("2 1\nDEPOT", "2 -1\nDEPOT");
        assert!(matches!(parse_instance(&text), Err(InstanceError::NegativeDemand { node: 2, demand: -1 })));
    }

    #[test]
    fn geo_without_matrix_is_rejected() {
        let text = TWO_NODE.replace("EUC_2D", "GEO");
        assert!(matches!(parse_instance(&text), Err(InstanceError::UnsupportedEdgeWeight(_))));
    }

    #[test]
    fn explicit_lower_row() {
        let text = "NAME : m-n3-k2\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EXPLICIT\nEDGE_WEIGHT_FORMAT : LOWER_ROW\nCAPACITY : 10\nEDGE_WEIGHT_SECTION\n4\n6 7\nDEMAND_SECTION\n1 0\n2 5\n3 6\nDEPOT_SECTION\n1\n-1\nEOF";
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.c(1, 0), 4.0);
        assert_eq!(inst.c(0, 2), 6.0);
        assert_eq!(inst.c(2, 1), 7.0);
        assert_eq!(inst.fleet, 2);
        assert_eq!(inst.edge_weight, EdgeWeightKind::Explicit);
    }

    #[test]
    fn depot_not_first_is_moved() {
        let text = "NAME : d\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EUC_2D\nCAPACITY : 10\nNODE_COORD_SECTION\n1 3 4\n2 0 0\n3 6 8\nDEMAND_SECTION\n1 2\n2 0\n3 3\nDEPOT_SECTION\n2\n-1\nEOF";
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.demands, vec![0, 2, 3]);
        assert_eq!(inst.c(0, 1), 5.0);
        assert_eq!(inst.c(0, 2), 10.0);
    }

    #[test]
    fn bks_from_comment_and_sidecar() {
        let text = TWO_NODE.replace("TYPE : CVRP", "COMMENT : (Augerat et al, No of trucks: 1, Optimal value: 10)\nTYPE : CVRP");
        assert_eq!(parse_instance(&text).unwrap().bks, Some(10.0));
        assert_eq!(parse_bks_sidecar("BEST_KNOWN: 1015\n"), Some(1015.0));
        assert_eq!(parse_bks_sidecar("Route #1: 1 2\nCost 375\n"), Some(375.0));
        assert_eq!(parse_bks_sidecar("nothing"), None);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let inst = generate_instance(&GeneratorConfig { seed: 3, ..Default::default() }).unwrap();
        let back = parse_instance(&inst.to_vrp_string()).unwrap();
        assert_eq!(back.name, inst.name);
        assert_eq!(back.demands, inst.demands);
        assert_eq!(back.capacity, inst.capacity);
        assert_eq!(back.fleet, inst.fleet);
        assert_eq!(back.cost_matrix(), inst.cost_matrix());

        let explicit = Instance::from_matrix("x", vec![0.0, 2.5, 2.5, 0.0], vec![0, 1], 3, 1).unwrap();
        let back = parse_instance(&explicit.to_vrp_string()).unwrap();
        assert_eq!(back.cost_matrix(), explicit.cost_matrix());
    }

    #[test]
    fn generator_fleet_is_ceiling() {
        // Σd = 250 with Q = 100 needs three vehicles.
        let demands: Vec<u32> = std::iter::once(0).chain(std::iter::repeat_n(25, 10)).collect();
        let coords = vec![(0.0, 0.0); 11];
        let inst = Instance::from_coords("c", coords, demands, 100, 3).unwrap();
        assert_eq!(inst.min_fleet(), 3);
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = GeneratorConfig { seed: 11, ..Default::default() };
        assert_eq!(generate_instance(&cfg).unwrap(), generate_instance(&cfg).unwrap());
        let other = GeneratorConfig { seed: 12, ..Default::default() };
        assert_ne!(generate_instance(&cfg).unwrap(), generate_instance(&other).unwrap());
    }

    #[test]
    fn generator_rejects_empty_ranges() {
        let cfg = GeneratorConfig { n_range: (5, 4), ..Default::default() };
        assert!(matches!(generate_instance(&cfg), Err(InstanceError::EmptyRange("n_range"))));
        let cfg = GeneratorConfig { demand_range: (9, 3), ..Default::default() };
        assert!(matches!(generate_instance(&cfg), Err(InstanceError::EmptyRange("demand_range"))));
    }
}
