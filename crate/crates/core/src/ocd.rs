//! Optimality-condition decomposition (OCD) for the power subproblem.
//!
//! With the assignment fixed, the power problem is
//!
//! ```text
//! max  sum_m w_m R_m
//! s.t. h_{u,m} = R_m - sum_{n in S(u,m)} r_{u,m,n}(P) <= 0   (couples cells)
//!      sum_n P[m][n] <= p_max(m),  P[m][n] >= 0              (local)
//! ```
//!
//! Cell `m` owns `x_m = (P[m][.], R_m)` and the multipliers of its own
//! constraints. Its subproblem keeps its own constraints and adds, with the
//! other cells' variables and multipliers frozen, the term
//! `sum_{l != m} sum_{u in U_l} lambda_{u,l} (r_{u,l}(P) - R_l)`. Stacking the
//! first-order conditions of all cell subproblems reproduces the global
//! first-order conditions exactly (see [`global_kkt_residual`] and
//! [`local_kkt_residual`]).
//!
//! Each iteration every cell takes ONE barrier-perturbed primal-dual Newton
//! step on its subproblem from the shared previous-iteration snapshot (Jacobi);
//! the coordinator only redistributes state and tests `||vec(dP)|| < psi`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Stopwatch;
use crate::coordinator::bus::MessageBus;
use crate::coordinator::check_convergence;
use crate::error::{Error, Result};
use crate::linalg::solve_symmetric;
use crate::par;
use crate::rates::{user_rates, wsmr_from_rates, Assignment, Link, PowerMatrix};
use crate::scenario::Scenario;

/// Fraction-to-boundary factor.
pub const TAU: f64 = 0.995;
pub const BARRIER_DECAY: f64 = 0.7;
pub const BARRIER_FLOOR: f64 = 1e-10;
/// Primal diagonal shift applied when the KKT matrix is near singular.
pub const KKT_REGULARIZATION: f64 = 1e-8;
pub const MIN_SLACK: f64 = 1e-6;
/// Initial barrier as a fraction of the mean complementarity at the start point.
pub const INITIAL_BARRIER_SCALE: f64 = 0.1;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_PSI: f64 = 0.1;

/// One cell's iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// Own powers, watts.
    pub power: Vec<f64>,
    /// Auxiliary minimum-rate variable, nats.
    pub min_rate: f64,
    /// Multipliers of the per-user rate constraints.
    pub rate_mult: Vec<f64>,
    /// Multiplier of the power budget.
    pub budget_mult: f64,
    /// Multipliers of `P[m][n] >= 0`; the powers are their own slacks.
    pub bound_mult: Vec<f64>,
    /// Slacks of the per-user rate constraints.
    pub rate_slack: Vec<f64>,
    pub budget_slack: f64,
    pub barrier: f64,
}

impl CellState {
    /// Scalars forwarded to the central agent: powers, `R_m`, rate multipliers.
    pub fn payload_len(&self) -> usize {
        self.power.len() + 1 + self.rate_mult.len()
    }

    fn is_interior(&self) -> bool {
        self.power.iter().all(|&p| p > 0.0)
            && self.rate_mult.iter().all(|&z| z > 0.0)
            && self.rate_slack.iter().all(|&s| s > 0.0)
            && self.bound_mult.iter().all(|&z| z > 0.0)
            && self.budget_mult > 0.0
            && self.budget_slack > 0.0
            && self.barrier > 0.0
    }
}

/// A primal-dual point of the global power problem.
#[derive(Clone, Debug, PartialEq)]
pub struct KktPoint {
    pub power: PowerMatrix,
    pub min_rate: Vec<f64>,
    pub rate_mult: Vec<Vec<f64>>,
    pub budget_mult: Vec<f64>,
    pub bound_mult: Vec<Vec<f64>>,
}

impl KktPoint {
    pub fn from_states(states: &[CellState]) -> Self {
        let rows = states.iter().map(|c| c.power.clone()).collect();
        Self {
            power: PowerMatrix::from_rows(rows).expect("cell states share a subcarrier count"),
            min_rate: states.iter().map(|c| c.min_rate).collect(),
            rate_mult: states.iter().map(|c| c.rate_mult.clone()).collect(),
            budget_mult: states.iter().map(|c| c.budget_mult).collect(),
            bound_mult: states.iter().map(|c| c.bound_mult.clone()).collect(),
        }
    }
}

/// First-order optimality residuals, laid out cell by cell.
///
/// Per cell `m` with `K` users and `N` subcarriers:
/// - `stationarity`: `N` power entries then one `R_m` entry;
/// - `primal_infeasibility`: positive parts of `K` rate constraints, the
///   budget, and `N` bounds;
/// - `complementarity`: multiplier times constraint value, same order;
/// - `dual_infeasibility`: negative parts of the multipliers, same order.
#[derive(Clone, Debug, PartialEq)]
pub struct KktResidual {
    pub stationarity: Vec<f64>,
    pub primal_infeasibility: Vec<f64>,
    pub complementarity: Vec<f64>,
    pub dual_infeasibility: Vec<f64>,
    pub norm: f64,
}

impl KktResidual {
    fn finish(
        stationarity: Vec<f64>,
        primal_infeasibility: Vec<f64>,
        complementarity: Vec<f64>,
        dual_infeasibility: Vec<f64>,
    ) -> Self {
        let norm = stationarity
            .iter()
            .chain(&primal_infeasibility)
            .chain(&complementarity)
            .chain(&dual_infeasibility)
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        Self {
            stationarity,
            primal_infeasibility,
            complementarity,
            dual_infeasibility,
            norm,
        }
    }

    /// Concatenates per-cell residuals in cell order.
    pub fn stack(parts: &[KktResidual]) -> Self {
        let cat = |f: fn(&KktResidual) -> &Vec<f64>| parts.iter().flat_map(|p| f(p).iter().copied()).collect::<Vec<_>>();
        Self::finish(
            cat(|p| &p.stationarity),
            cat(|p| &p.primal_infeasibility),
            cat(|p| &p.complementarity),
            cat(|p| &p.dual_infeasibility),
        )
    }
}

fn check_point(s: &Scenario, a: &Assignment, point: &KktPoint) -> Result<()> {
    a.check(s)?;
    let cells = s.num_cells();
    let n_sub = s.num_subcarriers();
    let dims = [
        ("power rows", point.power.cells(), cells),
        ("power columns", point.power.subcarriers(), n_sub),
        ("min_rate", point.min_rate.len(), cells),
        ("rate_mult", point.rate_mult.len(), cells),
        ("budget_mult", point.budget_mult.len(), cells),
        ("bound_mult", point.bound_mult.len(), cells),
    ];
    for (what, found, expected) in dims {
        if found != expected {
            return Err(Error::Dimension {
                what: what.into(),
                expected,
                found,
            });
        }
    }
    for m in 0..cells {
        if point.rate_mult[m].len() != s.users(m) {
            return Err(Error::Dimension {
                what: format!("rate_mult[{m}]"),
                expected: s.users(m),
                found: point.rate_mult[m].len(),
            });
        }
        if point.bound_mult[m].len() != n_sub {
            return Err(Error::Dimension {
                what: format!("bound_mult[{m}]"),
                expected: n_sub,
                found: point.bound_mult[m].len(),
            });
        }
    }
    Ok(())
}

/// Residuals of the global problem's first-order conditions.
///
/// Built constraint by constraint: each rate constraint `h_{u,l}` scatters
/// `lambda_{u,l} * dr/dP[k][n]` into the power stationarity of every cell `k`.
pub fn global_kkt_residual(s: &Scenario, a: &Assignment, point: &KktPoint) -> Result<KktResidual> {
    check_point(s, a, point)?;
    let cells = s.num_cells();
    let n_sub = s.num_subcarriers();
    let gap = s.snr_gap();
    let p = &point.power;

    // grad[k][n]: d(Lagrangian)/dP[k][n].
    let mut grad = vec![vec![0.0; n_sub]; cells];
    let mut rates = vec![Vec::new(); cells];
    for l in 0..cells {
        rates[l] = vec![0.0; s.users(l)];
        for n in 0..n_sub {
            let Some(u) = a.owner(l, n) else { continue };
            let link = Link::new(s, p, u, l, n);
            rates[l][u] += link.rate();
            let lambda = point.rate_mult[l][u];
            for (k, row) in grad.iter_mut().enumerate() {
                let d = if k == l {
                    link.d_own(s.gain(l, l, u, n))
                } else {
                    link.d_cross(s.gain(k, l, u, n), gap)
                };
                row[n] += lambda * d;
            }
        }
    }

    let mut stationarity = Vec::new();
    let mut primal = Vec::new();
    let mut compl = Vec::new();
    let mut dual = Vec::new();
    for m in 0..cells {
        let cap = s.p_max(m);
        for n in 0..n_sub {
            stationarity.push(grad[m][n] - point.budget_mult[m] + point.bound_mult[m][n]);
        }
        stationarity.push(s.weight(m) - point.rate_mult[m].iter().sum::<f64>());

        let h: Vec<f64> = rates[m].iter().map(|r| point.min_rate[m] - r).collect();
        let budget = p.row(m).iter().sum::<f64>() - cap;
        let bounds: Vec<f64> = p.row(m).iter().map(|x| -x).collect();
        let values = h.iter().chain(std::iter::once(&budget)).chain(&bounds);
        let mults = point.rate_mult[m]
            .iter()
            .chain(std::iter::once(&point.budget_mult[m]))
            .chain(&point.bound_mult[m]);
        for (c, z) in values.zip(mults) {
            primal.push(c.max(0.0));
            compl.push(z * c);
            dual.push((-z).max(0.0));
        }
    }
    Ok(KktResidual::finish(stationarity, primal, compl, dual))
}

/// Gradient of the coupling term of cell `m`'s objective with respect to its
/// own powers: `sum_{l != m} lambda_{u,l} dr_{u,l,n}/dP[m][n]` with `u` the
/// holder of `n` in cell `l`.
fn coupling_gradient(s: &Scenario, p: &PowerMatrix, rate_mult: &[Vec<f64>], a: &Assignment, m: usize) -> Vec<f64> {
    let gap = s.snr_gap();
    (0..s.num_subcarriers())
        .map(|n| {
            let mut acc = 0.0;
            for l in (0..s.num_cells()).filter(|&l| l != m) {
                if let Some(u) = a.owner(l, n) {
                    let link = Link::new(s, p, u, l, n);
                    acc += rate_mult[l][u] * link.d_cross(s.gain(m, l, u, n), gap);
                }
            }
            acc
        })
        .collect()
}

/// Curvature of the same coupling term.
fn coupling_curvature(s: &Scenario, p: &PowerMatrix, rate_mult: &[Vec<f64>], a: &Assignment, m: usize) -> Vec<f64> {
    let gap = s.snr_gap();
    (0..s.num_subcarriers())
        .map(|n| {
            let mut acc = 0.0;
            for l in (0..s.num_cells()).filter(|&l| l != m) {
                if let Some(u) = a.owner(l, n) {
                    let link = Link::new(s, p, u, l, n);
                    acc += rate_mult[l][u] * link.dd_cross(s.gain(m, l, u, n), gap);
                }
            }
            acc
        })
        .collect()
}

/// Objective of cell `m`'s subproblem (without the constant of the other
/// cells' own objectives): `w_m R_m + sum_{l != m, u} lambda_{u,l} (r_{u,l} - R_l)`.
pub fn local_objective(s: &Scenario, states: &[CellState], a: &Assignment, m: usize) -> Result<f64> {
    if m >= s.num_cells() {
        return Err(Error::Index(format!("cell {m} of {}", s.num_cells())));
    }
    if states.len() != s.num_cells() {
        return Err(Error::MissingCell(states.len()));
    }
    a.check(s)?;
    let point = KktPoint::from_states(states);
    let rates = user_rates(s, &point.power, a);
    let mut value = s.weight(m) * states[m].min_rate;
    for l in (0..s.num_cells()).filter(|&l| l != m) {
        for (u, lambda) in states[l].rate_mult.iter().enumerate() {
            value += lambda * (rates[l][u] - states[l].min_rate);
        }
    }
    Ok(value)
}

/// Cell `m`'s constraint values: rate constraints `h_m[u]` (feasible iff
/// `<= 0`) and local constraints `g_m = [sum P - p_max, -P[m][0], ...]`.
pub fn constraint_residuals(s: &Scenario, states: &[CellState], a: &Assignment, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if states.len() != s.num_cells() {
        return Err(Error::MissingCell(states.len()));
    }
    a.check(s)?;
    let point = KktPoint::from_states(states);
    let rates = user_rates(s, &point.power, a);
    let h = rates[m].iter().map(|r| states[m].min_rate - r).collect();
    let row = point.power.row(m);
    let mut g = Vec::with_capacity(row.len() + 1);
    g.push(row.iter().sum::<f64>() - s.p_max(m));
    g.extend(row.iter().map(|x| -x));
    Ok((h, g))
}

/// Residuals of cell `m`'s subproblem at `point`, other cells frozen at the
/// same point. Stacking these over all cells gives [`global_kkt_residual`].
pub fn local_kkt_residual(s: &Scenario, a: &Assignment, point: &KktPoint, m: usize) -> Result<KktResidual> {
    check_point(s, a, point)?;
    let p = &point.power;
    let coupling = coupling_gradient(s, p, &point.rate_mult, a, m);
    let lambda = &point.rate_mult[m];
    let users = s.users(m);
    let mut own_rates = vec![0.0; users];
    let mut stationarity = Vec::with_capacity(s.num_subcarriers() + 1);
    for n in 0..s.num_subcarriers() {
        let own = match a.owner(m, n) {
            Some(u) => {
                let link = Link::new(s, p, u, m, n);
                own_rates[u] += link.rate();
                lambda[u] * link.d_own(s.gain(m, m, u, n))
            }
            None => 0.0,
        };
        stationarity.push(coupling[n] + own - point.budget_mult[m] + point.bound_mult[m][n]);
    }
    stationarity.push(s.weight(m) - lambda.iter().sum::<f64>());

    let mut primal = Vec::new();
    let mut compl = Vec::new();
    let mut dual = Vec::new();
    let mut push = |c: f64, z: f64| {
        primal.push(c.max(0.0));
        compl.push(z * c);
        dual.push((-z).max(0.0));
    };
    for u in 0..users {
        push(point.min_rate[m] - own_rates[u], lambda[u]);
    }
    push(p.row(m).iter().sum::<f64>() - s.p_max(m), point.budget_mult[m]);
    for n in 0..s.num_subcarriers() {
        push(-p.get(m, n), point.bound_mult[m][n]);
    }
    Ok(KktResidual::finish(stationarity, primal, compl, dual))
}

/// Search directions of one Newton step, and the state after the damped update.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonStep {
    pub d_power: Vec<f64>,
    pub d_min_rate: f64,
    pub d_rate_mult: Vec<f64>,
    pub d_budget_mult: f64,
    pub primal_step: f64,
    pub dual_step: f64,
    pub state: CellState,
}

impl NewtonStep {
    pub fn direction_norm(&self) -> f64 {
        self.d_power
            .iter()
            .chain(std::iter::once(&self.d_min_rate))
            .chain(&self.d_rate_mult)
            .chain(std::iter::once(&self.d_budget_mult))
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Largest step in `(0, 1]` keeping `x + step * dx` above `(1 - TAU) x`.
fn fraction_to_boundary<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    pairs.fold(1.0f64, |step, (&x, &dx)| if dx < 0.0 { step.min(-TAU * x / dx) } else { step })
}

/// One primal-dual interior-point Newton step on cell `m`'s subproblem,
/// reading only `snapshot` (the previous iteration of every cell).
///
/// The inequality set is the `K` rate constraints and the budget (each with
/// an explicit slack) plus the `N` bounds `-P <= 0` (powers as their own
/// slacks). The condensed `(N+1) x (N+1)` primal system is solved once.
/// Negative curvature from the coupling term is dropped from the Hessian.
pub fn newton_step(s: &Scenario, snapshot: &[CellState], a: &Assignment, m: usize, iteration: usize) -> Result<NewtonStep> {
    if snapshot.len() != s.num_cells() {
        return Err(Error::MissingCell(snapshot.len().min(s.num_cells())));
    }
    let cell = &snapshot[m];
    if !cell.is_interior() {
        return Err(Error::Diverged {
            cell: m,
            iteration,
            reason: "state is not strictly interior".into(),
        });
    }
    let n_sub = s.num_subcarriers();
    let users = s.users(m);
    let dim = n_sub + 1;
    let r_idx = n_sub;
    let beta = cell.barrier;

    let point = KktPoint::from_states(snapshot);
    let p = &point.power;
    let rate_mult: &[Vec<f64>] = &point.rate_mult;
    let coupling = coupling_gradient(s, p, rate_mult, a, m);
    let coupling_dd = coupling_curvature(s, p, rate_mult, a, m);

    // Own links: rate, first and second derivative per subcarrier.
    let mut own_rate = vec![0.0; users];
    let mut d_own = vec![0.0; n_sub];
    let mut dd_own = vec![0.0; n_sub];
    for n in 0..n_sub {
        if let Some(u) = a.owner(m, n) {
            let link = Link::new(s, p, u, m, n);
            let g = s.gain(m, m, u, n);
            own_rate[u] += link.rate();
            d_own[n] = link.d_own(g);
            dd_own[n] = link.dd_own(g);
        }
    }

    // Minimization form: F = -(local objective).
    let mut r_dual = vec![0.0; dim];
    for n in 0..n_sub {
        let lambda = a.owner(m, n).map_or(0.0, |u| cell.rate_mult[u]);
        r_dual[n] = -coupling[n] - lambda * d_own[n] + cell.budget_mult - cell.bound_mult[n];
    }
    r_dual[r_idx] = -s.weight(m) + cell.rate_mult.iter().sum::<f64>();

    let mut k = vec![0.0; dim * dim];
    for n in 0..n_sub {
        let lambda = a.owner(m, n).map_or(0.0, |u| cell.rate_mult[u]);
        let curvature = -coupling_dd[n] - lambda * dd_own[n];
        k[n * dim + n] = curvature.max(0.0) + cell.bound_mult[n] / cell.power[n];
    }
    let mut rhs: Vec<f64> = r_dual.iter().map(|v| -v).collect();

    // Rate constraints: c_u = R - rate_u, gradient (-d_own on u's subcarriers, 1).
    let rate_c: Vec<f64> = (0..users).map(|u| cell.min_rate - own_rate[u]).collect();
    let rate_rp: Vec<f64> = (0..users).map(|u| rate_c[u] + cell.rate_slack[u]).collect();
    let rate_rc: Vec<f64> = (0..users).map(|u| cell.rate_slack[u] * cell.rate_mult[u] - beta).collect();
    let grad_c = |u: usize| -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = a.subcarriers_of(m, u).map(|n| (n, -d_own[n])).collect();
        out.push((r_idx, 1.0));
        out
    };
    for u in 0..users {
        let sigma = cell.rate_mult[u] / cell.rate_slack[u];
        let coef = (-rate_rc[u] + cell.rate_mult[u] * rate_rp[u]) / cell.rate_slack[u];
        let grad = grad_c(u);
        for &(i, gi) in &grad {
            rhs[i] -= gi * coef;
            for &(j, gj) in &grad {
                k[i * dim + j] += sigma * gi * gj;
            }
        }
    }

    // Budget: c_b = sum P - p_max, gradient (1, ..., 1, 0).
    let budget_c = cell.power.iter().sum::<f64>() - s.p_max(m);
    let budget_rp = budget_c + cell.budget_slack;
    let budget_rc = cell.budget_slack * cell.budget_mult - beta;
    {
        let sigma = cell.budget_mult / cell.budget_slack;
        let coef = (-budget_rc + cell.budget_mult * budget_rp) / cell.budget_slack;
        for i in 0..n_sub {
            rhs[i] -= coef;
            for j in 0..n_sub {
                k[i * dim + j] += sigma;
            }
        }
    }

    // Bounds: c_n = -P_n with P_n as slack, so r_p = 0.
    for n in 0..n_sub {
        rhs[n] += beta / cell.power[n] - cell.bound_mult[n];
    }

    let dx = solve_symmetric(&k, &rhs, dim, KKT_REGULARIZATION).ok_or(Error::SingularKkt { cell: m, iteration })?;
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularKkt { cell: m, iteration });
    }

    let d_power = dx[..n_sub].to_vec();
    let d_min_rate = dx[r_idx];

    let mut d_rate_slack = vec![0.0; users];
    let mut d_rate_mult = vec![0.0; users];
    for u in 0..users {
        let jdx: f64 = grad_c(u).iter().map(|&(i, gi)| gi * dx[i]).sum();
        d_rate_slack[u] = -rate_rp[u] - jdx;
        d_rate_mult[u] = (-rate_rc[u] - cell.rate_mult[u] * d_rate_slack[u]) / cell.rate_slack[u];
    }
    let d_budget_slack = -budget_rp - d_power.iter().sum::<f64>();
    let d_budget_mult = (-budget_rc - cell.budget_mult * d_budget_slack) / cell.budget_slack;
    let d_bound_mult: Vec<f64> = (0..n_sub)
        .map(|n| (beta - cell.power[n] * cell.bound_mult[n] - cell.bound_mult[n] * d_power[n]) / cell.power[n])
        .collect();

    let primal_step = fraction_to_boundary(
        cell.power
            .iter()
            .zip(&d_power)
            .chain(cell.rate_slack.iter().zip(&d_rate_slack))
            .chain(std::iter::once((&cell.budget_slack, &d_budget_slack))),
    );
    let dual_step = fraction_to_boundary(
        cell.rate_mult
            .iter()
            .zip(&d_rate_mult)
            .chain(cell.bound_mult.iter().zip(&d_bound_mult))
            .chain(std::iter::once((&cell.budget_mult, &d_budget_mult))),
    );

    let axpy = |x: &[f64], dx: &[f64], t: f64| -> Vec<f64> { x.iter().zip(dx).map(|(x, d)| x + t * d).collect() };
    let state = CellState {
        power: axpy(&cell.power, &d_power, primal_step),
        min_rate: cell.min_rate + primal_step * d_min_rate,
        rate_mult: axpy(&cell.rate_mult, &d_rate_mult, dual_step),
        budget_mult: cell.budget_mult + dual_step * d_budget_mult,
        bound_mult: axpy(&cell.bound_mult, &d_bound_mult, dual_step),
        rate_slack: axpy(&cell.rate_slack, &d_rate_slack, primal_step),
        budget_slack: cell.budget_slack + primal_step * d_budget_slack,
        barrier: (beta * BARRIER_DECAY).max(BARRIER_FLOOR),
    };
    if !state.min_rate.is_finite() || !state.is_interior() {
        return Err(Error::Diverged {
            cell: m,
            iteration,
            reason: "step left the interior".into(),
        });
    }
    Ok(NewtonStep {
        d_power,
        d_min_rate,
        d_rate_mult,
        d_budget_mult,
        primal_step,
        dual_step,
        state,
    })
}

/// Initial cell states from a power matrix.
///
/// Powers are lifted off zero, `R_m` is 0.9 of the cell's minimum user rate,
/// `lambda_{u,m} = w_m / K_m`, `mu_m = 1`, and slacks are the constraint
/// residuals clipped to at least [`MIN_SLACK`]. The barrier starts at
/// [`INITIAL_BARRIER_SCALE`] times the mean complementarity of the rate
/// constraints and budget; bound multipliers are centered on it.
pub fn initial_states(s: &Scenario, a: &Assignment, init: &PowerMatrix) -> Vec<CellState> {
    let n_sub = s.num_subcarriers();
    let mut p = init.clone();
    for m in 0..s.num_cells() {
        let floor = 1e-6 * s.p_max(m) / n_sub as f64;
        for x in p.row_mut(m) {
            *x = x.max(floor);
        }
    }
    p.project_to_budgets(s);
    let rates = user_rates(s, &p, a);
    (0..s.num_cells())
        .map(|m| {
            let users = s.users(m);
            let min = rates[m].iter().copied().fold(f64::INFINITY, f64::min);
            let min_rate = 0.9 * min;
            let rate_mult = vec![s.weight(m) / users as f64; users];
            let rate_slack: Vec<f64> = rates[m].iter().map(|r| (r - min_rate).max(MIN_SLACK)).collect();
            let budget_slack = (s.p_max(m) - p.row(m).iter().sum::<f64>()).max(MIN_SLACK);
            let budget_mult = 1.0;
            let mut products: Vec<f64> = rate_slack.iter().zip(&rate_mult).map(|(s, z)| s * z).collect();
            products.push(budget_slack * budget_mult);
            let barrier = (INITIAL_BARRIER_SCALE * products.iter().sum::<f64>() / products.len() as f64).max(BARRIER_FLOOR);
            // Zero-weight cells have zero rate multipliers; keep them interior.
            let rate_mult = rate_mult.into_iter().map(|z| z.max(MIN_SLACK)).collect();
            let power = p.row(m).to_vec();
            let bound_mult = power.iter().map(|x| barrier / x).collect();
            CellState {
                power,
                min_rate,
                rate_mult,
                budget_mult,
                bound_mult,
                rate_slack,
                budget_slack,
                barrier,
            }
        })
        .collect()
}

/// One record per power iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerIteration {
    pub iter: usize,
    pub wsmr: f64,
    pub delta_p_norm: f64,
    pub cell_min: Vec<f64>,
    /// Cumulative over the phase.
    pub messages: u64,
    pub bytes: u64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct OcdOutcome {
    pub power: PowerMatrix,
    pub states: Vec<CellState>,
    pub trace: Vec<PowerIteration>,
    pub converged: bool,
    /// First iteration at which `||dP|| < psi`, if reached.
    pub iterations_to_psi: Option<usize>,
}

impl OcdOutcome {
    pub fn min_rate(&self) -> Vec<f64> {
        self.states.iter().map(|c| c.min_rate).collect()
    }

    /// The final primal-dual point with the projected powers.
    pub fn kkt_point(&self) -> KktPoint {
        let mut point = KktPoint::from_states(&self.states);
        point.power = self.power.clone();
        point
    }
}

/// A power solver failure with everything recorded up to it.
#[derive(Debug, Error)]
#[error("power allocation aborted after {} iterations: {error}", trace.len())]
pub struct PowerAbort {
    #[source]
    pub error: Error,
    pub trace: Vec<PowerIteration>,
}

pub(crate) fn validate_solver_args(s: &Scenario, a: &Assignment, init: &PowerMatrix, psi: f64, max_iter: usize) -> Result<()> {
    a.check(s)?;
    if init.cells() != s.num_cells() || init.subcarriers() != s.num_subcarriers() {
        return Err(Error::Dimension {
            what: "initial power matrix".into(),
            expected: s.num_cells() * s.num_subcarriers(),
            found: init.cells() * init.subcarriers(),
        });
    }
    if !init.is_feasible(s) {
        return Err(Error::InvalidParam {
            field: "init",
            reason: "initial powers violate the budgets".into(),
        });
    }
    if !(psi > 0.0) {
        return Err(Error::InvalidParam {
            field: "psi",
            reason: "must be positive".into(),
        });
    }
    if max_iter == 0 {
        return Err(Error::InvalidParam {
            field: "max_iter",
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

/// Runs the decomposition until `||vec(P^t - P^{t-1})|| < psi` or `max_iter`
/// iterations. The returned powers are projected onto the budgets.
pub fn ocd_solve(
    s: &Scenario,
    a: &Assignment,
    init: &PowerMatrix,
    psi: f64,
    max_iter: usize,
) -> Result<OcdOutcome, PowerAbort> {
    let abort = |error, trace| PowerAbort { error, trace };
    validate_solver_args(s, a, init, psi, max_iter).map_err(|e| abort(e, Vec::new()))?;
    let clock = Stopwatch::start();
    let mut bus = MessageBus::new(s.num_cells());
    let mut snapshot = initial_states(s, a, init);
    let mut previous = KktPoint::from_states(&snapshot).power;
    let mut trace = Vec::new();
    let mut iterations_to_psi = None;

    for t in 1..=max_iter {
        let steps = par::map_indexed(s.num_cells(), |m| newton_step(s, &snapshot, a, m, t));
        let mut states = Vec::with_capacity(steps.len());
        for step in steps {
            match step {
                Ok(step) => states.push(step.state),
                Err(e) => return Err(abort(e, trace)),
            }
        }
        snapshot = match bus.exchange(states) {
            Ok(next) => next,
            Err(e) => return Err(abort(e, trace)),
        };
        let power = KktPoint::from_states(&snapshot).power;
        let delta = power.distance(&previous).expect("shapes match");
        let report = wsmr_from_rates(s, &user_rates(s, &power, a));
        trace.push(PowerIteration {
            iter: t,
            wsmr: report.value,
            delta_p_norm: delta,
            cell_min: report.cell_min,
            messages: bus.messages(),
            bytes: bus.bytes(),
            elapsed_s: clock.seconds(),
        });
        let done = check_convergence(&power, &previous, psi).expect("shapes match");
        previous = power;
        if done {
            iterations_to_psi = Some(t);
            break;
        }
    }

    let mut power = previous;
    power.project_to_budgets(s);
    Ok(OcdOutcome {
        power,
        states: snapshot,
        trace,
        converged: iterations_to_psi.is_some(),
        iterations_to_psi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::oracle::grid_search_power;
    use crate::rates::fixtures::flat_scenario;
    use crate::rates::wsmr;
    use crate::scenario::{generate_scenario, ScenarioParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk(seed: u64, cells: usize, n_sub: usize, users: usize) -> Scenario {
        generate_scenario(&ScenarioParams::uniform(cells, n_sub, users, 1.0).with_seed(seed)).unwrap()
    }

    fn random_point(s: &Scenario, rng: &mut ChaCha8Rng) -> KktPoint {
        let rows = (0..s.num_cells())
            .map(|m| (0..s.num_subcarriers()).map(|_| s.p_max(m) * rng.gen::<f64>() / s.num_subcarriers() as f64).collect())
            .collect();
        KktPoint {
            power: PowerMatrix::from_rows(rows).unwrap(),
            min_rate: (0..s.num_cells()).map(|_| 10.0 * rng.gen::<f64>()).collect(),
            rate_mult: (0..s.num_cells()).map(|m| (0..s.users(m)).map(|_| rng.gen::<f64>()).collect()).collect(),
            budget_mult: (0..s.num_cells()).map(|_| 20.0 * rng.gen::<f64>()).collect(),
            bound_mult: (0..s.num_cells()).map(|_| (0..s.num_subcarriers()).map(|_| rng.gen::<f64>()).collect()).collect(),
        }
    }

    fn states_of(point: &KktPoint) -> Vec<CellState> {
        (0..point.min_rate.len())
            .map(|m| CellState {
                power: point.power.row(m).to_vec(),
                min_rate: point.min_rate[m],
                rate_mult: point.rate_mult[m].clone(),
                budget_mult: point.budget_mult[m],
                bound_mult: point.bound_mult[m].clone(),
                rate_slack: vec![1.0; point.rate_mult[m].len()],
                budget_slack: 1.0,
                barrier: 1.0,
            })
            .collect()
    }

    #[test]
    fn stacked_local_residuals_equal_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..5 {
            let s = desk(seed, 3, 4, 2);
            let a = Assignment::even(&s);
            for _ in 0..5 {
                let point = random_point(&s, &mut rng);
                let global = global_kkt_residual(&s, &a, &point).unwrap();
                let parts: Vec<_> = (0..3).map(|m| local_kkt_residual(&s, &a, &point, m).unwrap()).collect();
                let stacked = KktResidual::stack(&parts);
                for (x, y) in global.stationarity.iter().zip(&stacked.stationarity) {
                    assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
                }
                assert_eq!(global.primal_infeasibility, stacked.primal_infeasibility);
                assert_eq!(global.complementarity.len(), stacked.complementarity.len());
            }
        }
    }

    #[test]
    fn zero_multipliers_zero_complementarity() {
        let s = desk(3, 3, 4, 2);
        let a = Assignment::even(&s);
        let mut p = PowerMatrix::uniform(&s);
        for m in 0..3 {
            for x in p.row_mut(m) {
                *x *= 0.5;
            }
        }
        let point = KktPoint {
            power: p,
            min_rate: vec![0.0; 3],
            rate_mult: vec![vec![0.0; 2]; 3],
            budget_mult: vec![0.0; 3],
            bound_mult: vec![vec![0.0; 4]; 3],
        };
        let r = global_kkt_residual(&s, &a, &point).unwrap();
        assert!(r.complementarity.iter().all(|&c| c == 0.0));
        assert!(r.primal_infeasibility.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn local_objective_single_cell_and_zero_multipliers() {
        let s = desk(4, 1, 3, 2);
        let a = Assignment::even(&s);
        let states = initial_states(&s, &a, &PowerMatrix::uniform(&s));
        assert_eq!(local_objective(&s, &states, &a, 0).unwrap(), s.weight(0) * states[0].min_rate);

        let s = desk(4, 3, 3, 2);
        let a = Assignment::even(&s);
        let mut states = initial_states(&s, &a, &PowerMatrix::uniform(&s));
        for c in &mut states {
            c.rate_mult.fill(0.0);
        }
        assert_eq!(local_objective(&s, &states, &a, 1).unwrap(), s.weight(1) * states[1].min_rate);
        assert!(matches!(local_objective(&s, &states[..2], &a, 0), Err(Error::MissingCell(_))));
    }

    #[test]
    fn more_own_power_lowers_coupling_term() {
        let s = flat_scenario(2, 1, 1, 1e-4, 5e-5);
        let a = Assignment::even(&s);
        let mut states = initial_states(&s, &a, &PowerMatrix::from_rows(vec![vec![0.5], vec![0.5]]).unwrap());
        let before = local_objective(&s, &states, &a, 0).unwrap();
        states[0].power[0] = 0.9;
        let after = local_objective(&s, &states, &a, 0).unwrap();
        assert!(after < before);
    }

    #[test]
    fn constraint_residual_examples() {
        let s = desk(5, 2, 4, 2);
        let a = Assignment::even(&s);
        let mut states = initial_states(&s, &a, &PowerMatrix::uniform(&s));
        states[0].min_rate = 0.0;
        let (h, g) = constraint_residuals(&s, &states, &a, 0).unwrap();
        assert!(h.iter().all(|&x| x <= 0.0));
        assert!(g[0].abs() < 1e-15);

        let s = flat_scenario(1, 1, 1, 1e-4, 0.0);
        let a = Assignment::even(&s);
        let mut states = initial_states(&s, &a, &PowerMatrix::from_rows(vec![vec![1.0]]).unwrap());
        states[0].min_rate = 5.0;
        let (h, _) = constraint_residuals(&s, &states, &a, 0).unwrap();
        assert!((h[0] - (5.0 - 101f64.ln())).abs() < 1e-12);
        assert!((h[0] - 0.38487948315874).abs() < 1e-12);
    }

    #[test]
    fn symmetric_single_cell_splits_evenly() {
        let s = flat_scenario(1, 1, 2, 1e-4, 0.0);
        let a = Assignment::even(&s);
        let init = PowerMatrix::from_rows(vec![vec![0.9, 0.1]]).unwrap();
        let out = ocd_solve(&s, &a, &init, 1e-12, 400).unwrap();
        for n in 0..2 {
            assert!((out.power.get(0, n) - 0.5).abs() < 1e-4, "{:?}", out.power);
        }
        let uniform = ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 1e-12, 400).unwrap();
        assert!((uniform.power.get(0, 0) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn fixed_point_has_vanishing_directions() {
        let s = flat_scenario(1, 1, 2, 1e-4, 0.0);
        let a = Assignment::even(&s);
        let out = ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 1e-14, 400).unwrap();
        assert_eq!(out.states[0].barrier, BARRIER_FLOOR);
        let step = newton_step(&s, &out.states, &a, 0, 0).unwrap();
        assert!(step.direction_norm() < 1e-8, "{}", step.direction_norm());
    }

    #[test]
    fn single_cell_matches_grid_oracle() {
        let mut params = ScenarioParams::uniform(1, 2, 2, 1.0);
        for seed in 0..6 {
            params.seed = seed;
            let s = generate_scenario(&params).unwrap();
            let a = Assignment::even(&s);
            let out = ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 1e-10, 500).unwrap();
            let got = wsmr(&s, &out.power, &a).value;
            let best = grid_search_power(&s, &a, 200).unwrap().value;
            assert!(got >= 0.99 * best, "seed {seed}: {got} vs {best}");
        }
    }

    #[test]
    fn one_iteration_when_capped() {
        let s = desk(6, 3, 4, 2);
        let a = Assignment::even(&s);
        let out = ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 0.1, 1).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert!(ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 0.1, 0).is_err());
        assert!(ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 0.0, 5).is_err());
    }

    #[test]
    fn reference_psi_converges_on_seeded_instance() {
        let s = desk(7, 3, 8, 2);
        let a = Assignment::even(&s);
        let out = ocd_solve(&s, &a, &PowerMatrix::uniform(&s), DEFAULT_PSI, DEFAULT_MAX_ITER).unwrap();
        assert!(out.converged);
        assert!(out.power.is_feasible(&s));
        assert_eq!(out.trace.last().unwrap().messages, 6 * out.trace.len() as u64);
    }

    #[test]
    fn converged_desk_point_is_kkt() {
        for seed in 0..4 {
            let s = desk(seed, 3, 4, 2);
            let a = Assignment::even(&s);
            let out = ocd_solve(&s, &a, &PowerMatrix::uniform(&s), 1e-12, 2000).unwrap();
            let r = global_kkt_residual(&s, &a, &out.kkt_point()).unwrap();
            assert!(r.norm < 1e-4, "seed {seed}: {}", r.norm);
        }
    }
}
