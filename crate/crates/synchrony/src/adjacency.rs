//! Grid-informed adjacency matrices and their renormalized graph operators.
//!
//! Three variants encode increasing amounts of physics:
//! - `Topology`: binary connectivity with self-loops,
//! - `CouplingFlow`: steady-state power flow magnitude on each line,
//! - `CouplingInjection`: coupling strengths off-diagonal, net injections on
//!   the diagonal.
//!
//! Each is passed through the renormalization trick
//! `B' = D^{-1/2} (B + I) D^{-1/2}` with degrees taken as absolute row sums
//! so the spectral radius stays bounded by one even with signed entries.

use ndarray::Array2;
use thiserror::Error;

use crate::dynamics::{solve_equilibrium, DynamicsError, SystemState};
use crate::grid::PowerGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AdjacencyVariant {
    /// Binary adjacency with self-loops.
    Topology,
    /// `|K_ij sin(delta*_i - delta*_j)|` at the stable equilibrium.
    CouplingFlow,
    /// Coupling strengths off-diagonal, net power injection on the diagonal.
    CouplingInjection,
}

impl AdjacencyVariant {
    pub const ALL: [AdjacencyVariant; 3] = [
        AdjacencyVariant::Topology,
        AdjacencyVariant::CouplingFlow,
        AdjacencyVariant::CouplingInjection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdjacencyVariant::Topology => "topology",
            AdjacencyVariant::CouplingFlow => "coupling-flow",
            AdjacencyVariant::CouplingInjection => "coupling-injection",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "topology" | "1" | "i" | "I" => Some(AdjacencyVariant::Topology),
            "coupling-flow" | "2" | "ii" | "II" => Some(AdjacencyVariant::CouplingFlow),
            "coupling-injection" | "3" | "iii" | "III" => {
                Some(AdjacencyVariant::CouplingInjection)
            }
            _ => None,
        }
    }

    /// Whether building this variant requires the grid's equilibrium.
    pub fn needs_equilibrium(self) -> bool {
        matches!(self, AdjacencyVariant::CouplingFlow)
    }
}

#[derive(Debug, Error)]
pub enum AdjacencyError {
    #[error("equilibrium required for {variant} adjacency: {source}")]
    Equilibrium {
        variant: &'static str,
        #[source]
        source: DynamicsError,
    },
    #[error("equilibrium state has {got} nodes, grid has {want}")]
    Dimension { got: usize, want: usize },
}

/// Raw (un-renormalized) adjacency matrix for the requested variant.
///
/// `equilibrium` is only consulted by [`AdjacencyVariant::CouplingFlow`];
/// pass the grid's stable fixed point.
pub fn build_adjacency(
    grid: &PowerGrid,
    variant: AdjacencyVariant,
    equilibrium: Option<&SystemState>,
) -> Result<Array2<f64>, AdjacencyError> {
    let n = grid.n();
    let mut b = Array2::<f64>::zeros((n, n));
    match variant {
        AdjacencyVariant::Topology => {
            for i in 0..n {
                b[(i, i)] = 1.0;
            }
            for e in grid.edges() {
                b[(e.a, e.b)] = 1.0;
                b[(e.b, e.a)] = 1.0;
            }
        }
        AdjacencyVariant::CouplingFlow => {
            let eq = equilibrium.ok_or(AdjacencyError::Equilibrium {
                variant: variant.name(),
                source: DynamicsError::EquilibriumNotFound("no equilibrium supplied".into()),
            })?;
            if eq.delta.len() != n {
                return Err(AdjacencyError::Dimension {
                    got: eq.delta.len(),
                    want: n,
                });
            }
            for e in grid.edges() {
                let k = grid.coupling_symmetric(e);
                let w = (k * (eq.delta[e.a] - eq.delta[e.b]).sin()).abs();
                b[(e.a, e.b)] = w;
                b[(e.b, e.a)] = w;
            }
        }
        AdjacencyVariant::CouplingInjection => {
            for e in grid.edges() {
                let k = grid.coupling_symmetric(e);
                b[(e.a, e.b)] = k;
                b[(e.b, e.a)] = k;
            }
            for i in 0..n {
                b[(i, i)] = grid.power()[i];
            }
        }
    }
    Ok(b)
}

/// Renormalization trick: `B' = D^{-1/2} (B + I) D^{-1/2}` where
/// `D_ii = sum_j |(B + I)_ij|`.
pub fn renormalize(b: &Array2<f64>) -> Array2<f64> {
    let n = b.nrows();
    let mut bhat = b.clone();
    for i in 0..n {
        bhat[(i, i)] += 1.0;
    }
    let mut inv_sqrt_deg = vec![0.0; n];
    for i in 0..n {
        let d: f64 = (0..n).map(|j| bhat[(i, j)].abs()).sum();
        inv_sqrt_deg[i] = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    }
    let mut out = bhat;
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    out
}

/// A renormalized adjacency ready to premultiply node-feature matrices.
#[derive(Debug, Clone)]
pub struct GraphOperator {
    pub variant: AdjacencyVariant,
    pub matrix: Array2<f64>,
}

/// Build the renormalized operator for a grid, solving the equilibrium
/// internally when the variant needs one.
pub fn operator_for(
    grid: &PowerGrid,
    variant: AdjacencyVariant,
) -> Result<GraphOperator, AdjacencyError> {
    let eq = if variant.needs_equilibrium() {
        let guess = SystemState::zeros(grid.n());
        Some(
            solve_equilibrium(grid, &guess).map_err(|source| AdjacencyError::Equilibrium {
                variant: variant.name(),
                source,
            })?,
        )
    } else {
        None
    };
    let raw = build_adjacency(grid, variant, eq.as_ref())?;
    Ok(GraphOperator {
        variant,
        matrix: renormalize(&raw),
    })
}
