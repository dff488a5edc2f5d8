//! Lagrangian-relaxation benchmark for the power subproblem.
//!
//! The rate constraints are dualized with multipliers kept on the scaled
//! simplex `sum_u lambda_{u,m} = w_m`, which cancels the `R_m` terms and
//! leaves the weighted sum rate `sum_{m,u} lambda_{u,m} r_{u,m}(P)`. Each outer
//! iteration every cell best-responds over its own powers (projected gradient
//! ascent to `inner_tol`, others frozen at the previous iterate), then the
//! central agent moves the multipliers along the constraint residuals.

use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::coordinator::bus::{MessageBus, Payload};
use crate::coordinator::check_convergence;
use crate::error::{Error, Result};
use crate::linalg::{project_capped, project_simplex};
use crate::ocd::{validate_solver_args, PowerAbort, PowerIteration};
use crate::par;
use crate::rates::{user_rates, wsmr_from_rates, Assignment, Link, PowerMatrix};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    /// Initial subgradient step `alpha_0`.
    pub step0: f64,
    /// Step decay `beta` in `alpha_t = alpha_0 / (1 + beta t)`.
    pub decay: f64,
    /// Inner stop: largest power move below `inner_tol * p_max`.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            step0: 1.0,
            decay: 0.1,
            inner_tol: 1e-6,
            inner_max_iter: 500,
        }
    }
}

/// Multipliers of the dualized rate constraints, one simplex block per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct LrState {
    pub multipliers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub step0: f64,
    pub decay: f64,
}

impl LrState {
    /// `lambda_{u,m} = w_m / K_m`.
    pub fn new(s: &Scenario, cfg: &LrConfig) -> Self {
        Self {
            multipliers: (0..s.num_cells()).map(|m| vec![s.weight(m) / s.users(m) as f64; s.users(m)]).collect(),
            weights: s.params().weights.clone(),
            step0: cfg.step0,
            decay: cfg.decay,
        }
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.step0 / (1.0 + self.decay * t as f64)
    }
}

/// Projected subgradient step `lambda <- Proj(lambda + alpha_t * residual)`,
/// each cell block projected onto `{lambda >= 0, sum = w_m}`.
///
/// `residuals[m][u] = R_m - r_{u,m}`: positive when user `u` falls short.
pub fn update_multipliers(state: &LrState, residuals: &[Vec<f64>], t: usize) -> LrState {
    let alpha = state.step_size(t);
    let multipliers = state
        .multipliers
        .iter()
        .zip(residuals)
        .zip(&state.weights)
        .map(|((lambda, res), &w)| {
            let moved: Vec<f64> = lambda.iter().zip(res).map(|(l, r)| l + alpha * r).collect();
            project_simplex(&moved, w)
        })
        .collect();
    LrState {
        multipliers,
        ..state.clone()
    }
}

/// What a cell reports each outer iteration: its powers and user rates.
#[derive(Clone, Debug, PartialEq)]
pub struct LrReport {
    pub power: Vec<f64>,
    pub rates: Vec<f64>,
}

impl Payload for LrReport {
    fn payload_len(&self) -> usize {
        self.power.len() + self.rates.len()
    }
}

/// `sum_{l,u} lambda_{u,l} r_{u,l}(P)` restricted to the terms that depend
/// on cell `m`'s powers, together with its gradient in those powers.
fn dualized(s: &Scenario, a: &Assignment, p: &PowerMatrix, lambda: &[Vec<f64>], m: usize) -> (f64, Vec<f64>) {
    let gap = s.snr_gap();
    let mut value = 0.0;
    let mut grad = vec![0.0; s.num_subcarriers()];
    for (n, g) in grad.iter_mut().enumerate() {
        for l in 0..s.num_cells() {
            let Some(u) = a.owner(l, n) else { continue };
            let link = Link::new(s, p, u, l, n);
            let w = lambda[l][u];
            value += w * link.rate();
            *g += w * if l == m {
                link.d_own(s.gain(m, m, u, n))
            } else {
                link.d_cross(s.gain(m, l, u, n), gap)
            };
        }
    }
    (value, grad)
}

/// Outcome of one cell's inner best response.
#[derive(Clone, Debug, PartialEq)]
pub struct BestResponse {
    pub power: Vec<f64>,
    pub first_objective: f64,
    pub last_objective: f64,
    pub iterations: usize,
}

/// Projected gradient ascent with Armijo backtracking on cell `m`'s
/// dualized objective, other cells frozen at `p`.
pub fn best_response(
    s: &Scenario,
    a: &Assignment,
    p: &PowerMatrix,
    lambda: &[Vec<f64>],
    m: usize,
    cfg: &LrConfig,
    iteration: usize,
) -> Result<BestResponse> {
    let cap = s.p_max(m);
    let mut work = p.clone();
    let (mut value, mut grad) = dualized(s, a, &work, lambda, m);
    let first_objective = value;
    let mut step = {
        let gmax = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if gmax > 0.0 {
            cap / gmax
        } else {
            1.0
        }
    };
    let mut iterations = 0;
    while iterations < cfg.inner_max_iter {
        iterations += 1;
        let current = work.row(m).to_vec();
        let mut accepted = false;
        let mut moved = 0.0f64;
        for _ in 0..60 {
            let trial: Vec<f64> = project_capped(
                &current.iter().zip(&grad).map(|(x, g)| x + step * g).collect::<Vec<_>>(),
                cap,
            );
            work.row_mut(m).copy_from_slice(&trial);
            let (v, g) = dualized(s, a, &work, lambda, m);
            if !v.is_finite() {
                return Err(Error::Diverged {
                    cell: m,
                    iteration,
                    reason: "dualized objective is not finite".into(),
                });
            }
            let ascent: f64 = trial.iter().zip(&current).zip(&grad).map(|((t, c), g)| g * (t - c)).sum();
            if v >= value + 1e-4 * ascent {
                moved = trial.iter().zip(&current).fold(0.0f64, |acc, (t, c)| acc.max((t - c).abs()));
                value = v;
                grad = g;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            work.row_mut(m).copy_from_slice(&current);
            break;
        }
        if moved <= cfg.inner_tol * cap {
            break;
        }
    }
    Ok(BestResponse {
        power: work.row(m).to_vec(),
        first_objective,
        last_objective: value,
        iterations,
    })
}

#[derive(Clone, Debug)]
pub struct LrOutcome {
    pub power: PowerMatrix,
    pub multipliers: LrState,
    pub trace: Vec<PowerIteration>,
    pub converged: bool,
    pub iterations_to_psi: Option<usize>,
}

/// Outer loop of the relaxation: Jacobi best responses, multiplier update,
/// stop on `||vec(dP)|| < psi` or after `max_outer` iterations.
pub fn lr_solve(
    s: &Scenario,
    a: &Assignment,
    init: &PowerMatrix,
    psi: f64,
    max_outer: usize,
    cfg: &LrConfig,
) -> Result<LrOutcome, PowerAbort> {
    let abort = |error, trace| PowerAbort { error, trace };
    validate_solver_args(s, a, init, psi, max_outer).map_err(|e| abort(e, Vec::new()))?;
    let clock = Stopwatch::start();
    let mut bus = MessageBus::new(s.num_cells());
    let mut state = LrState::new(s, cfg);
    let mut power = init.clone();
    let mut trace = Vec::new();
    let mut iterations_to_psi = None;

    for t in 1..=max_outer {
        let responses = par::map_indexed(s.num_cells(), |m| best_response(s, a, &power, &state.multipliers, m, cfg, t));
        let mut next = power.clone();
        for (m, r) in responses.into_iter().enumerate() {
            match r {
                Ok(r) => next.row_mut(m).copy_from_slice(&r.power),
                Err(e) => return Err(abort(e, trace)),
            }
        }
        next.project_to_budgets(s);
        let rates = user_rates(s, &next, a);
        let reports = (0..s.num_cells())
            .map(|m| LrReport {
                power: next.row(m).to_vec(),
                rates: rates[m].clone(),
            })
            .collect();
        if let Err(e) = bus.exchange(reports) {
            return Err(abort(e, trace));
        }
        let residuals: Vec<Vec<f64>> = rates
            .iter()
            .map(|r| {
                let min = r.iter().copied().fold(f64::INFINITY, f64::min);
                r.iter().map(|x| min - x).collect()
            })
            .collect();
        state = update_multipliers(&state, &residuals, t - 1);

        let report = wsmr_from_rates(s, &rates);
        let delta = next.distance(&power).expect("shapes match");
        trace.push(PowerIteration {
            iter: t,
            wsmr: report.value,
            delta_p_norm: delta,
            cell_min: report.cell_min,
            messages: bus.messages(),
            bytes: bus.bytes(),
            elapsed_s: clock.seconds(),
        });
        let done = check_convergence(&next, &power, psi).expect("shapes match");
        power = next;
        if done {
            iterations_to_psi = Some(t);
            break;
        }
    }

    Ok(LrOutcome {
        power,
        multipliers: state,
        trace,
        converged: iterations_to_psi.is_some(),
        iterations_to_psi,
    })
}
