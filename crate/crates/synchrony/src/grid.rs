//! Power network representation and grid file handling.
//!
//! A [`PowerGrid`] stores the normalized parameters of the networked swing
//! equation: per-node damping `alpha_i` (1/s), net power injection `P_i`
//! (1/s^2) and per-edge coupling derived from the symmetric transfer limit
//! `P^MAX_ij` together with a per-node divisor `I_i * omega_syn`. Keeping the
//! symmetric transfer limit and the divisor separate preserves the raw
//! machine information while the dynamics apply the correct row scaling.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

/// Raw machine parameters prior to normalization.
///
/// All vectors are per-node except `p_max`, which is parallel to the edge
/// list handed to [`normalize_parameters`].
#[derive(Debug, Clone)]
pub struct RawMachineParams {
    /// Cumulative moment of inertia per node, `> 0`.
    pub inertia: Vec<f64>,
    /// Damping coefficient per node, `> 0`.
    pub damping: Vec<f64>,
    /// Mechanical power injection per node (sign distinguishes generator/load).
    pub p_mech: Vec<f64>,
    /// Rated angular frequency, `> 0`.
    pub omega_syn: f64,
    /// Maximum real power transfer per edge, `>= 0`.
    pub p_max: Vec<f64>,
}

impl RawMachineParams {
    /// Derive per-edge transfer limits from voltage magnitudes and line
    /// susceptances: `P^MAX_ij = |V_i| |V_j| Im(Y_ij)`.
    pub fn p_max_from_admittance(voltages: &[f64], susceptances: &[(usize, usize, f64)]) -> Vec<f64> {
        susceptances
            .iter()
            .map(|&(i, j, b)| voltages[i] * voltages[j] * b)
            .collect()
    }
}

/// An undirected edge with its symmetric transfer limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Symmetric coupling numerator; the effective coupling seen from node
    /// `i` is `p_max / divisor_i`.
    pub p_max: f64,
}

/// Normalized power network.
///
/// Immutable after construction; safe for concurrent shared reads.
#[derive(Debug, Clone)]
pub struct PowerGrid {
    name: String,
    omega_syn: f64,
    alpha: Vec<f64>,
    power: Vec<f64>,
    /// Per-node divisor `I_i * omega_syn`; 1.0 when couplings were given
    /// directly in normalized form.
    divisor: Vec<f64>,
    edges: Vec<Edge>,
    labels: Vec<String>,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Normalize raw machine parameters into a [`PowerGrid`].
///
/// `alpha_i = D_i / (I_i w_syn)`, `P_i = P_mech_i / (I_i w_syn)`, and the
/// row-scaled coupling `K_ij = P^MAX_ij / (I_i w_syn)` is represented as the
/// symmetric `P^MAX_ij` plus the per-node divisor.
pub fn normalize_parameters(
    raw: &RawMachineParams,
    topology: &[(usize, usize)],
) -> Result<PowerGrid, GridError> {
    let n = raw.inertia.len();
    if raw.damping.len() != n || raw.p_mech.len() != n {
        return Err(GridError::Parameter(format!(
            "inconsistent node vectors: inertia {}, damping {}, p_mech {}",
            n,
            raw.damping.len(),
            raw.p_mech.len()
        )));
    }
    if raw.p_max.len() != topology.len() {
        return Err(GridError::Parameter(format!(
            "p_max has {} entries for {} edges",
            raw.p_max.len(),
            topology.len()
        )));
    }
    if !(raw.omega_syn > 0.0) {
        return Err(GridError::Parameter(format!(
            "non-positive omega_syn {}",
            raw.omega_syn
        )));
    }
    for i in 0..n {
        if !(raw.inertia[i] > 0.0) {
            return Err(GridError::Parameter(format!(
                "non-positive inertia {} at node {i}",
                raw.inertia[i]
            )));
        }
        if !(raw.damping[i] > 0.0) {
            return Err(GridError::Parameter(format!(
                "non-positive damping {} at node {i}",
                raw.damping[i]
            )));
        }
    }
    let edges: Vec<Edge> = topology
        .iter()
        .zip(&raw.p_max)
        .map(|(&(a, b), &p_max)| Edge { a, b, p_max })
        .collect();
    let grid = PowerGrid {
        name: String::new(),
        omega_syn: raw.omega_syn,
        alpha: (0..n)
            .map(|i| raw.damping[i] / (raw.inertia[i] * raw.omega_syn))
            .collect(),
        power: (0..n)
            .map(|i| raw.p_mech[i] / (raw.inertia[i] * raw.omega_syn))
            .collect(),
        divisor: (0..n).map(|i| raw.inertia[i] * raw.omega_syn).collect(),
        edges,
        labels: (0..n).map(|i| i.to_string()).collect(),
    };
    let violations = validate(&grid);
    if !violations.is_empty() {
        // normalize_parameters only reports the topological ones as errors;
        // parameter signs were already checked above.
        return Err(GridError::Topology(violations.join("; ")));
    }
    grid.warn_on_imbalance();
    Ok(grid)
}

/// Report every invariant violation of a grid. Empty means valid.
pub fn validate(grid: &PowerGrid) -> Vec<String> {
    let mut out = Vec::new();
    let n = grid.n();
    if n == 0 {
        out.push("grid has no nodes".to_string());
        return out;
    }
    if !(grid.omega_syn > 0.0) {
        out.push(format!("non-positive omega_syn {}", grid.omega_syn));
    }
    for (i, &a) in grid.alpha.iter().enumerate() {
        if !(a > 0.0) {
            out.push(format!("non-positive damping alpha at node {i}"));
        }
        if !a.is_finite() || !grid.power[i].is_finite() {
            out.push(format!("non-finite parameter at node {i}"));
        }
        if !(grid.divisor[i] > 0.0) {
            out.push(format!("non-positive inertia divisor at node {i}"));
        }
    }
    let mut seen = HashSet::new();
    for e in &grid.edges {
        if e.a >= n || e.b >= n {
            out.push(format!("edge ({}, {}) references unknown node", e.a, e.b));
            continue;
        }
        if e.a == e.b {
            out.push(format!("self edge at node {}", e.a));
        }
        let key = (e.a.min(e.b), e.a.max(e.b));
        if !seen.insert(key) {
            out.push(format!("duplicate edge ({}, {})", key.0, key.1));
        }
        if !(e.p_max > 0.0) {
            out.push(format!("nonpositive coupling on edge ({}, {})", e.a, e.b));
        }
    }
    // Connectivity by breadth-first search from node 0.
    let mut adj = vec![Vec::new(); n];
    for e in &grid.edges {
        if e.a < n && e.b < n && e.a != e.b {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
    }
    let mut reached = vec![false; n];
    let mut stack = vec![0usize];
    reached[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !reached[w] {
                reached[w] = true;
                stack.push(w);
            }
        }
    }
    for (i, &r) in reached.iter().enumerate() {
        if !r {
            out.push(format!("node {i} unreachable"));
        }
    }
    out
}

impl PowerGrid {
    /// Construct directly from normalized parameters (divisors default to 1,
    /// so `k` values on edges are the symmetric coupling).
    pub fn from_normalized(
        name: &str,
        omega_syn: f64,
        alpha: Vec<f64>,
        power: Vec<f64>,
        edges: Vec<(usize, usize, f64)>,
    ) -> Result<Self, GridError> {
        let n = alpha.len();
        let grid = PowerGrid {
            name: name.to_string(),
            omega_syn,
            divisor: vec![1.0; n],
            labels: (0..n).map(|i| i.to_string()).collect(),
            alpha,
            power,
            edges: edges
                .into_iter()
                .map(|(a, b, k)| Edge { a, b, p_max: k })
                .collect(),
        };
        let violations = validate(&grid);
        if !violations.is_empty() {
            return Err(GridError::Validation(violations.join("; ")));
        }
        grid.warn_on_imbalance();
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn omega_syn(&self) -> f64 {
        self.omega_syn
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Row-scaled coupling as seen from node `from` over edge `e`.
    pub fn coupling_from(&self, e: &Edge, from: usize) -> f64 {
        debug_assert!(from == e.a || from == e.b);
        e.p_max / self.divisor[from]
    }

    /// Node-symmetric coupling: `P^MAX_ij / sqrt(I_i w I_j w)`. Used by the
    /// adjacency builders, which need an undirected edge weight.
    pub fn coupling_symmetric(&self, e: &Edge) -> f64 {
        e.p_max / (self.divisor[e.a] * self.divisor[e.b]).sqrt()
    }

    /// Sum of power injections; a nonzero value means a synchronized
    /// equilibrium only exists in a rotating reference frame.
    pub fn power_imbalance(&self) -> f64 {
        self.power.iter().sum()
    }

    fn warn_on_imbalance(&self) {
        let imbalance = self.power_imbalance();
        if imbalance.abs() > 1e-9 {
            log::warn!(
                "grid '{}' power injections sum to {imbalance:.3e}; equilibrium requires a frame shift",
                self.name
            );
        }
    }

    /// SHA-256 of the canonical serialized form. Datasets and checkpoints
    /// record this to guard against mixing grids.
    pub fn fingerprint(&self) -> [u8; 32] {
        let doc = self.to_document();
        let bytes = serde_json::to_vec(&doc).expect("grid serialization cannot fail");
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(&bytes));
        out
    }

    fn to_document(&self) -> GridDocument {
        let normalized = self.divisor.iter().all(|&d| d == 1.0);
        GridDocument {
            version: 1,
            name: self.name.clone(),
            omega_syn: self.omega_syn,
            nodes: (0..self.n())
                .map(|i| NodeDocument {
                    id: i,
                    alpha: self.alpha[i],
                    power: self.power[i],
                    inertia: if normalized {
                        None
                    } else {
                        Some(self.divisor[i] / self.omega_syn)
                    },
                    damping: if normalized {
                        None
                    } else {
                        Some(self.alpha[i] * self.divisor[i])
                    },
                    p_mech: if normalized {
                        None
                    } else {
                        Some(self.power[i] * self.divisor[i])
                    },
                    label: Some(self.labels[i].clone()),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDocument {
                    from: e.a,
                    to: e.b,
                    k: if normalized { Some(e.p_max) } else { None },
                    p_max: if normalized { None } else { Some(e.p_max) },
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GridDocument {
    version: u32,
    name: String,
    omega_syn: f64,
    nodes: Vec<NodeDocument>,
    edges: Vec<EdgeDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDocument {
    id: usize,
    alpha: f64,
    power: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    inertia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    damping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_mech: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeDocument {
    from: usize,
    to: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_max: Option<f64>,
}

/// Load and validate a grid file (UTF-8 JSON, version 1).
pub fn load_grid(path: impl AsRef<Path>) -> Result<PowerGrid, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_grid(&text, &path.display().to_string())
}

/// Parse a grid document from text. `origin` is used in diagnostics.
pub fn parse_grid(text: &str, origin: &str) -> Result<PowerGrid, GridError> {
    let doc: GridDocument = serde_json::from_str(text).map_err(|e| GridError::Parse {
        path: origin.to_string(),
        detail: e.to_string(),
    })?;
    if doc.version != 1 {
        return Err(GridError::Parse {
            path: origin.to_string(),
            detail: format!("unsupported grid format version {}", doc.version),
        });
    }
    let n = doc.nodes.len();
    for (i, node) in doc.nodes.iter().enumerate() {
        if node.id != i {
            return Err(GridError::Parse {
                path: origin.to_string(),
                detail: format!("node ids must be 0-based consecutive; found {} at position {i}", node.id),
            });
        }
    }
    let any_inertia = doc.nodes.iter().any(|n| n.inertia.is_some());
    let mut edges = Vec::with_capacity(doc.edges.len());
    for (idx, e) in doc.edges.iter().enumerate() {
        let p_max = match (e.k, e.p_max) {
            (Some(k), None) => {
                if any_inertia {
                    return Err(GridError::Parse {
                        path: origin.to_string(),
                        detail: format!(
                            "edge {idx} gives normalized k but nodes define inertia; use p_max"
                        ),
                    });
                }
                k
            }
            (None, Some(p)) => p,
            _ => {
                return Err(GridError::Parse {
                    path: origin.to_string(),
                    detail: format!("edge {idx} must give exactly one of k or p_max"),
                })
            }
        };
        edges.push(Edge { a: e.from, b: e.to, p_max });
    }
    let grid = PowerGrid {
        name: doc.name,
        omega_syn: doc.omega_syn,
        alpha: doc.nodes.iter().map(|n| n.alpha).collect(),
        power: doc.nodes.iter().map(|n| n.power).collect(),
        divisor: doc
            .nodes
            .iter()
            .map(|nd| nd.inertia.map_or(1.0, |i| i * doc.omega_syn))
            .collect(),
        labels: doc
            .nodes
            .iter()
            .map(|nd| nd.label.clone().unwrap_or_else(|| nd.id.to_string()))
            .collect(),
        edges,
    };
    if n == 0 {
        return Err(GridError::Parse {
            path: origin.to_string(),
            detail: "grid has no nodes".to_string(),
        });
    }
    let violations = validate(&grid);
    if !violations.is_empty() {
        return Err(GridError::Validation(violations.join("; ")));
    }
    grid.warn_on_imbalance();
    Ok(grid)
}

/// Write the canonical form; `load_grid(save_grid(g))` is field-for-field
/// identical at 64-bit precision.
pub fn save_grid(grid: &PowerGrid, path: impl AsRef<Path>) -> Result<(), GridError> {
    let doc = grid.to_document();
    let mut text = serde_json::to_string_pretty(&doc).expect("grid serialization cannot fail");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
