//! Swing-equation dynamics: fixed-step RK4 integration, equilibrium search
//! and the time-domain-simulation stability verdict.
//!
//! Phase angles live on the real line during integration so drift stays
//! observable; wrapping is applied only when the edge-gap criterion is
//! evaluated.

use crate::grid::PowerGrid;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Phase angles (rad) and angular frequency deviations (rad/s) of all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
}

impl SystemState {
    pub fn zeros(n: usize) -> Self {
        SystemState {
            delta: vec![0.0; n],
            omega: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.delta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.delta.iter().all(|v| v.is_finite()) && self.omega.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_omega(&self) -> f64 {
        self.omega.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Uniformly sampled time evolution starting at `t = 0`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<SystemState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV export: `t, delta_0..delta_{N-1}, omega_0..omega_{N-1}` with
    /// 17-significant-digit floats.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        let n = self.states.first().map_or(0, |s| s.n());
        write!(w, "t")?;
        for i in 0..n {
            write!(w, ",delta_{i}")?;
        }
        for i in 0..n {
            write!(w, ",omega_{i}")?;
        }
        writeln!(w)?;
        for (step, state) in self.states.iter().enumerate() {
            write!(w, "{:.16e}", step as f64 * self.dt)?;
            for v in &state.delta {
                write!(w, ",{v:.16e}")?;
            }
            for v in &state.omega {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

/// Outcome of the synchronization check on a simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityVerdict {
    /// `true` maps to label `y = 1`.
    pub stable: bool,
    /// Max `|omega|` over the terminal settle window (rad/s).
    pub max_omega_tail: f64,
    /// Max wrapped `|delta_i - delta_j|` over edges at the final state (rad).
    pub max_edge_gap: f64,
}

impl StabilityVerdict {
    pub fn label(&self) -> u8 {
        self.stable as u8
    }
}

/// Finite-horizon surrogate for the asymptotic synchronization definition.
#[derive(Debug, Clone, Copy)]
pub struct LabelConfig {
    /// Total simulated horizon (s).
    pub horizon: f64,
    /// Integration step (s).
    pub dt: f64,
    /// Frequency threshold over the settle window (rad/s).
    pub omega_tol: f64,
    /// Length of the terminal window in which every sample must satisfy the
    /// frequency threshold (s).
    pub settle_window: f64,
    /// Max allowed wrapped phase gap across an edge at the final state (rad).
    pub gamma: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            horizon: 50.0,
            dt: 0.0125,
            omega_tol: 0.1,
            settle_window: 5.0,
            gamma: std::f64::consts::FRAC_PI_2,
        }
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: state has {state} nodes, grid has {grid}")]
    Dimension { state: usize, grid: usize },
    #[error("numerical blow-up at t = {time} s")]
    Blowup { time: f64 },
    #[error("equilibrium not found: {0}")]
    EquilibriumNotFound(String),
    #[error("invalid step size {0}")]
    InvalidStep(f64),
}

fn check_dims(grid: &PowerGrid, state: &SystemState) -> Result<(), DynamicsError> {
    if state.n() != grid.n() || state.omega.len() != grid.n() {
        return Err(DynamicsError::Dimension {
            state: state.n(),
            grid: grid.n(),
        });
    }
    Ok(())
}

/// Right-hand side of the second-order model:
/// `d delta_i/dt = omega_i`,
/// `d omega_i/dt = -alpha_i omega_i + P_i + sum_j K_ij sin(delta_j - delta_i)`.
pub fn swing_rhs(grid: &PowerGrid, state: &SystemState) -> Result<SystemState, DynamicsError> {
    check_dims(grid, state)?;
    let mut out = SystemState::zeros(grid.n());
    swing_rhs_into(grid, &state.delta, &state.omega, &mut out.delta, &mut out.omega);
    Ok(out)
}

fn swing_rhs_into(grid: &PowerGrid, delta: &[f64], omega: &[f64], d_delta: &mut [f64], d_omega: &mut [f64]) {
    let alpha = grid.alpha();
    let power = grid.power();
    for i in 0..delta.len() {
        d_delta[i] = omega[i];
        d_omega[i] = -alpha[i] * omega[i] + power[i];
    }
    for e in grid.edges() {
        let s = (delta[e.b] - delta[e.a]).sin();
        d_omega[e.a] += grid.coupling_from(e, e.a) * s;
        d_omega[e.b] -= grid.coupling_from(e, e.b) * s;
    }
}

/// Scratch buffers for repeated RK4 stepping.
struct Rk4Scratch {
    k1d: Vec<f64>,
    k1w: Vec<f64>,
    k2d: Vec<f64>,
    k2w: Vec<f64>,
    k3d: Vec<f64>,
    k3w: Vec<f64>,
    k4d: Vec<f64>,
    k4w: Vec<f64>,
    tmpd: Vec<f64>,
    tmpw: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Rk4Scratch {
            k1d: vec![0.0; n],
            k1w: vec![0.0; n],
            k2d: vec![0.0; n],
            k2w: vec![0.0; n],
            k3d: vec![0.0; n],
            k3w: vec![0.0; n],
            k4d: vec![0.0; n],
            k4w: vec![0.0; n],
            tmpd: vec![0.0; n],
            tmpw: vec![0.0; n],
        }
    }
}

fn rk4_step_into(grid: &PowerGrid, state: &mut SystemState, dt: f64, s: &mut Rk4Scratch) {
    let n = state.n();
    swing_rhs_into(grid, &state.delta, &state.omega, &mut s.k1d, &mut s.k1w);
    for i in 0..n {
        s.tmpd[i] = state.delta[i] + 0.5 * dt * s.k1d[i];
        s.tmpw[i] = state.omega[i] + 0.5 * dt * s.k1w[i];
    }
    swing_rhs_into(grid, &s.tmpd, &s.tmpw, &mut s.k2d, &mut s.k2w);
    for i in 0..n {
        s.tmpd[i] = state.delta[i] + 0.5 * dt * s.k2d[i];
        s.tmpw[i] = state.omega[i] + 0.5 * dt * s.k2w[i];
    }
    swing_rhs_into(grid, &s.tmpd, &s.tmpw, &mut s.k3d, &mut s.k3w);
    for i in 0..n {
        s.tmpd[i] = state.delta[i] + dt * s.k3d[i];
        s.tmpw[i] = state.omega[i] + dt * s.k3w[i];
    }
    swing_rhs_into(grid, &s.tmpd, &s.tmpw, &mut s.k4d, &mut s.k4w);
    let c = dt / 6.0;
    for i in 0..n {
        state.delta[i] += c * (s.k1d[i] + 2.0 * s.k2d[i] + 2.0 * s.k3d[i] + s.k4d[i]);
        state.omega[i] += c * (s.k1w[i] + 2.0 * s.k2w[i] + 2.0 * s.k3w[i] + s.k4w[i]);
    }
}

/// One classical RK4 update.
pub fn rk4_step(grid: &PowerGrid, state: &SystemState, dt: f64) -> Result<SystemState, DynamicsError> {
    check_dims(grid, state)?;
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let mut next = state.clone();
    let mut scratch = Rk4Scratch::new(state.n());
    rk4_step_into(grid, &mut next, dt, &mut scratch);
    if !next.is_finite() {
        return Err(DynamicsError::Blowup { time: dt });
    }
    Ok(next)
}

/// Integrate from `state0`, producing `floor(t_end/dt) + 1` states.
///
/// A non-finite intermediate yields [`DynamicsError::Blowup`] carrying the
/// failure time; callers generating datasets classify such runs unstable.
pub fn integrate(
    grid: &PowerGrid,
    state0: &SystemState,
    dt: f64,
    t_end: f64,
) -> Result<Trajectory, DynamicsError> {
    check_dims(grid, state0)?;
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let steps = (t_end / dt).floor() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(state0.clone());
    let mut current = state0.clone();
    let mut scratch = Rk4Scratch::new(state0.n());
    for step in 0..steps {
        rk4_step_into(grid, &mut current, dt, &mut scratch);
        if !current.is_finite() {
            return Err(DynamicsError::Blowup {
                time: (step + 1) as f64 * dt,
            });
        }
        states.push(current.clone());
    }
    Ok(Trajectory { dt, states })
}

/// Solve a small dense linear system by Gaussian elimination with partial
/// pivoting. Returns `None` for a singular matrix.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

fn phase_residual(grid: &PowerGrid, delta: &[f64]) -> Vec<f64> {
    let mut r: Vec<f64> = grid.power().to_vec();
    for e in grid.edges() {
        let s = (delta[e.b] - delta[e.a]).sin();
        r[e.a] += grid.coupling_from(e, e.a) * s;
        r[e.b] -= grid.coupling_from(e, e.b) * s;
    }
    r
}

fn newton_polish(grid: &PowerGrid, delta: &mut [f64], tol: f64, max_iter: usize) -> bool {
    let n = grid.n();
    for _ in 0..max_iter {
        let r = phase_residual(grid, delta);
        let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm <= tol {
            return true;
        }
        // Jacobian of the residual restricted to rows/cols 1..N (node 0 is
        // the pinned angle reference).
        let mut jac = vec![vec![0.0; n - 1]; n - 1];
        for e in grid.edges() {
            let c = (delta[e.b] - delta[e.a]).cos();
            let ka = grid.coupling_from(e, e.a) * c;
            let kb = grid.coupling_from(e, e.b) * c;
            if e.a > 0 {
                jac[e.a - 1][e.a - 1] -= ka;
                if e.b > 0 {
                    jac[e.a - 1][e.b - 1] += ka;
                }
            }
            if e.b > 0 {
                jac[e.b - 1][e.b - 1] -= kb;
                if e.a > 0 {
                    jac[e.b - 1][e.a - 1] += kb;
                }
            }
        }
        let rhs: Vec<f64> = r[1..].iter().map(|v| -v).collect();
        let Some(step) = solve_linear(jac, rhs) else {
            return false;
        };
        // Damp long Newton steps to stay within the basin.
        let max_step = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if max_step > 1.0 { 1.0 / max_step } else { 1.0 };
        for i in 1..n {
            delta[i] += scale * step[i - 1];
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return false;
        }
    }
    false
}

/// Find the synchronized equilibrium `(delta*, 0)` with node 0 pinned to
/// `delta*_0 = 0`. Newton iteration on the phase residual; on failure, a
/// relaxation integration from the flat start is polished with Newton.
pub fn solve_equilibrium(grid: &PowerGrid, guess: &SystemState) -> Result<SystemState, DynamicsError> {
    check_dims(grid, guess)?;
    const TOL: f64 = 1e-10;
    let n = grid.n();
    let mut delta: Vec<f64> = guess.delta.clone();
    let ref0 = delta[0];
    for d in delta.iter_mut() {
        *d -= ref0;
    }
    if !newton_polish(grid, &mut delta, TOL, 100) {
        // Relaxation fallback: integrate toward the attractor, then polish.
        let relax = integrate(grid, &SystemState::zeros(n), 0.0125, 200.0)
            .map_err(|_| DynamicsError::EquilibriumNotFound("relaxation integration diverged".into()))?;
        delta = relax.states.last().unwrap().delta.clone();
        let ref0 = delta[0];
        for d in delta.iter_mut() {
            *d -= ref0;
        }
        if !newton_polish(grid, &mut delta, TOL, 100) {
            return Err(DynamicsError::EquilibriumNotFound(
                "Newton did not converge within 100 iterations".into(),
            ));
        }
    }
    let residual = phase_residual(grid, &delta);
    let norm = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if norm > TOL {
        return Err(DynamicsError::EquilibriumNotFound(format!(
            "residual {norm:.3e} exceeds tolerance (power imbalance {:.3e})",
            grid.power_imbalance()
        )));
    }
    Ok(SystemState {
        delta,
        omega: vec![0.0; n],
    })
}

/// Wrap an angle difference into `(-pi, pi]`.
fn wrap_gap(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y > std::f64::consts::PI {
        y -= two_pi;
    } else if y <= -std::f64::consts::PI {
        y += two_pi;
    }
    y
}

fn max_edge_gap(grid: &PowerGrid, state: &SystemState) -> f64 {
    grid.edges()
        .iter()
        .fold(0.0f64, |m, e| m.max(wrap_gap(state.delta[e.a] - state.delta[e.b]).abs()))
}

/// Single-pass labeling run: integrates to the label horizon, records the
/// first `record` frequency samples row-major (`N x record`) and evaluates
/// the synchronization criterion on the terminal window.
///
/// Blow-up is a verdict (unstable), not an error. If the run blows up before
/// `record` samples exist, the last finite frequency column is repeated.
pub fn simulate_labeled(
    grid: &PowerGrid,
    state0: &SystemState,
    cfg: &LabelConfig,
    record: usize,
) -> Result<(Vec<f64>, StabilityVerdict), DynamicsError> {
    check_dims(grid, state0)?;
    if !(cfg.dt > 0.0) {
        return Err(DynamicsError::InvalidStep(cfg.dt));
    }
    let n = grid.n();
    let steps = (cfg.horizon / cfg.dt).floor() as usize;
    let tail_start = steps.saturating_sub((cfg.settle_window / cfg.dt).round() as usize);
    let mut omegas = vec![0.0; n * record];
    let mut recorded = 0usize;
    let record_column = |state: &SystemState, col: usize, omegas: &mut Vec<f64>| {
        for i in 0..n {
            omegas[i * record + col] = state.omega[i];
        }
    };
    let mut current = state0.clone();
    let mut scratch = Rk4Scratch::new(n);
    if record > 0 {
        record_column(&current, 0, &mut omegas);
        recorded = 1;
    }
    let mut max_omega_tail = if tail_start == 0 {
        current.max_abs_omega()
    } else {
        0.0
    };
    let mut blew_up = false;
    let mut step = 0usize;
    while step < steps {
        rk4_step_into(grid, &mut current, cfg.dt, &mut scratch);
        step += 1;
        if !current.is_finite() {
            blew_up = true;
            break;
        }
        if recorded < record {
            record_column(&current, recorded, &mut omegas);
            recorded += 1;
        }
        if step >= tail_start {
            max_omega_tail = max_omega_tail.max(current.max_abs_omega());
        }
    }
    if blew_up {
        // Pad the recording with the last finite column so sample shapes
        // stay uniform; the label is unstable regardless.
        if recorded > 0 {
            for col in recorded..record {
                for i in 0..n {
                    omegas[i * record + col] = omegas[i * record + recorded - 1];
                }
            }
        }
        return Ok((
            omegas,
            StabilityVerdict {
                stable: false,
                max_omega_tail: f64::INFINITY,
                max_edge_gap: f64::INFINITY,
            },
        ));
    }
    let gap = max_edge_gap(grid, &current);
    let verdict = StabilityVerdict {
        stable: max_omega_tail <= cfg.omega_tol && gap <= cfg.gamma,
        max_omega_tail,
        max_edge_gap: gap,
    };
    Ok((omegas, verdict))
}

/// Classify an initial state by time-domain simulation.
pub fn classify_stability(
    grid: &PowerGrid,
    state0: &SystemState,
    cfg: &LabelConfig,
) -> Result<StabilityVerdict, DynamicsError> {
    simulate_labeled(grid, state0, cfg, 0).map(|(_, v)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid;
    use approx::assert_abs_diff_eq;

    fn two_node(p: f64, k: f64) -> PowerGrid {
        PowerGrid::from_normalized(
            "two_node",
            1.0,
            vec![0.5, 0.5],
            vec![p, -p],
            vec![(0, 1, k)],
        )
        .unwrap()
    }

    fn isolated_node(alpha: f64, p: f64) -> PowerGrid {
        // A far-detached partner keeps the graph connected while the probe
        // node behaves as if isolated is not possible; instead use a genuine
        // one-node grid.
        PowerGrid::from_normalized("single", 1.0, vec![alpha], vec![p], vec![]).unwrap()
    }

    #[test]
    fn rhs_at_equilibrium_is_zero() {
        let g = two_node(0.5, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        let d = swing_rhs(&g, &eq).unwrap();
        for v in d.omega {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn rhs_isolated_node() {
        let g = isolated_node(0.5, 0.2);
        let state = SystemState {
            delta: vec![0.0],
            omega: vec![1.0],
        };
        let d = swing_rhs(&g, &state).unwrap();
        assert_abs_diff_eq!(d.omega[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(d.delta[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rhs_two_node_quarter_turn() {
        let g = two_node(0.0, 1.0);
        let state = SystemState {
            delta: vec![0.0, std::f64::consts::FRAC_PI_2],
            omega: vec![0.0, 0.0],
        };
        let d = swing_rhs(&g, &state).unwrap();
        assert_abs_diff_eq!(d.omega[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.omega[1], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn rhs_dimension_mismatch() {
        let g = two_node(0.0, 1.0);
        assert!(matches!(
            swing_rhs(&g, &SystemState::zeros(3)),
            Err(DynamicsError::Dimension { .. })
        ));
    }

    #[test]
    fn rk4_fixed_point() {
        let g = two_node(0.5, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        let next = rk4_step(&g, &eq, 0.0125).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(next.delta[i], eq.delta[i], epsilon = 1e-12);
            assert_abs_diff_eq!(next.omega[i], eq.omega[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let g = isolated_node(0.5, 0.0);
        let state = SystemState {
            delta: vec![0.0],
            omega: vec![1.0],
        };
        let dt = 0.0125;
        let next = rk4_step(&g, &state, dt).unwrap();
        let exact = (-0.5 * dt).exp();
        assert!((next.omega[0] - exact).abs() <= 1e-10);
    }

    /// Global error at t = 1 s on the closed-form system, for order checks.
    fn global_error(dt: f64) -> f64 {
        let g = isolated_node(0.5, 0.0);
        let state0 = SystemState {
            delta: vec![0.0],
            omega: vec![1.0],
        };
        let traj = integrate(&g, &state0, dt, 1.0).unwrap();
        let t = (traj.len() - 1) as f64 * dt;
        (traj.states.last().unwrap().omega[0] - (-0.5 * t).exp()).abs()
    }

    #[test]
    fn rk4_is_fourth_order() {
        let e1 = global_error(0.05);
        let e2 = global_error(0.025);
        let order = (e1 / e2).log2();
        assert!((3.7..=4.3).contains(&order), "observed order {order}");
    }

    #[test]
    fn integrate_counts_states() {
        let g = two_node(0.1, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        assert_eq!(integrate(&g, &eq, 0.0125, 1.25).unwrap().len(), 101);
        assert_eq!(integrate(&g, &eq, 0.0125, 0.0125).unwrap().len(), 2);
    }

    #[test]
    fn integrate_from_equilibrium_stays_put() {
        let g = two_node(0.5, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        let traj = integrate(&g, &eq, 0.0125, 10.0).unwrap();
        for s in &traj.states {
            for i in 0..2 {
                assert!((s.delta[i] - eq.delta[i]).abs() <= 1e-8);
                assert!((s.omega[i]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn equilibrium_two_node_analytic() {
        let g = two_node(0.5, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        let gap = eq.delta[0] - eq.delta[1];
        assert_abs_diff_eq!(gap, (0.5f64).asin(), epsilon = 1e-9);
        assert_eq!(eq.delta[0], 0.0);
    }

    #[test]
    fn equilibrium_flat_for_zero_power() {
        let g = two_node(0.0, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        assert_abs_diff_eq!(eq.delta[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_overloaded_edge_fails() {
        let g = two_node(1.5, 1.0);
        assert!(matches!(
            solve_equilibrium(&g, &SystemState::zeros(2)),
            Err(DynamicsError::EquilibriumNotFound(_))
        ));
    }

    #[test]
    fn classify_equilibrium_stable() {
        let g = two_node(0.5, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        let v = classify_stability(&g, &eq, &LabelConfig::default()).unwrap();
        assert!(v.stable);
    }

    #[test]
    fn classify_no_equilibrium_unstable() {
        let g = two_node(1.5, 1.0);
        let v = classify_stability(&g, &SystemState::zeros(2), &LabelConfig::default()).unwrap();
        assert!(!v.stable);
    }

    #[test]
    fn classify_small_kick_stable() {
        let g = two_node(0.5, 1.0);
        let mut start = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        start.omega[0] = 1e-3;
        let v = classify_stability(&g, &start, &LabelConfig::default()).unwrap();
        assert!(v.stable);
    }

    #[test]
    fn classify_is_deterministic() {
        let g = two_node(0.7, 1.0);
        let mut start = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        start.omega[1] = 5.0;
        let a = classify_stability(&g, &start, &LabelConfig::default()).unwrap();
        let b = classify_stability(&g, &start, &LabelConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_node_sweep_matches_existence_condition() {
        for i in 1..=9 {
            let ratio = i as f64 / 10.0;
            let g = two_node(ratio, 1.0);
            let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
            let v = classify_stability(&g, &eq, &LabelConfig::default()).unwrap();
            assert!(v.stable, "P/K = {ratio} should be stable");

            let ratio = 1.0 + ratio;
            let g = two_node(ratio, 1.0);
            let start = SystemState {
                delta: vec![0.3, -0.4],
                omega: vec![2.0, -1.0],
            };
            let v = classify_stability(&g, &start, &LabelConfig::default()).unwrap();
            assert!(!v.stable, "P/K = {ratio} should be unstable");
        }
    }

    #[test]
    fn trajectory_csv_round_numbers() {
        let g = two_node(0.5, 1.0);
        let eq = solve_equilibrium(&g, &SystemState::zeros(2)).unwrap();
        let traj = integrate(&g, &eq, 0.0125, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        traj.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,delta_0,delta_1,omega_0,omega_1");
        assert_eq!(lines.count(), traj.len());
    }

    #[test]
    fn ieee39_equilibrium_exists() {
        let g = grid::load_grid(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/ieee39.grid")).unwrap();
        let eq = solve_equilibrium(&g, &SystemState::zeros(39)).unwrap();
        let v = classify_stability(&g, &eq, &LabelConfig::default()).unwrap();
        assert!(v.stable);
    }
}
