//! Alternating optimization: power phase, then subcarrier phase, per round.
//!
//! Round 1 starts from uniform powers and round-robin subcarriers. Each round
//! runs the chosen power allocator for the current assignment, then re-solves
//! every cell's assignment for the new powers. The best-WSMR iterate seen at
//! any phase boundary is returned, since the power phase may dip.

pub mod bus;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Stopwatch;
use crate::error::{Error, Result};
use crate::lr::{self, LrConfig};
use crate::ocd::{self, PowerAbort, PowerIteration};
use crate::rates::{wsmr, Assignment, PowerMatrix};
use crate::scenario::Scenario;
use crate::subcarrier::{solve_all_cells, SubcarrierMode};

/// `||vec(current - previous)||_2 < psi`, strictly.
pub fn check_convergence(current: &PowerMatrix, previous: &PowerMatrix, psi: f64) -> Result<bool> {
    Ok(current.distance(previous)? < psi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerMethod {
    Ocd,
    Lr,
}

impl fmt::Display for PowerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ocd => "ocd",
            Self::Lr => "lr",
        })
    }
}

impl FromStr for PowerMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ocd" => Ok(Self::Ocd),
            "lr" => Ok(Self::Lr),
            other => Err(format!("unknown power method `{other}` (expected ocd|lr)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Power convergence tolerance on `||vec(dP)||`, watts.
    pub psi: f64,
    /// Iteration cap per power phase.
    pub max_iter: usize,
    pub max_rounds: usize,
    pub power_method: PowerMethod,
    pub subcarrier_mode: SubcarrierMode,
    /// Stop once a round changes WSMR by less than this fraction.
    pub wsmr_tol: f64,
    pub lr: LrConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            psi: ocd::DEFAULT_PSI,
            max_iter: ocd::DEFAULT_MAX_ITER,
            max_rounds: 10,
            power_method: PowerMethod::Ocd,
            subcarrier_mode: SubcarrierMode::Exact,
            wsmr_tol: 1e-3,
            lr: LrConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::InvalidParam {
                field,
                reason: reason.into(),
            })
        };
        if !(self.psi > 0.0) {
            return bad("psi", "must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be at least 1");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds", "must be at least 1");
        }
        if !(self.wsmr_tol >= 0.0) {
            return bad("wsmr_tol", "must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Power,
    Subcarrier,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Power => "power",
            Self::Subcarrier => "subcarrier",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub phase: Phase,
    /// Power iteration within the phase; 0 for subcarrier phases.
    pub iter: usize,
    pub wsmr: f64,
    pub delta_p_norm: f64,
    pub cell_min: Vec<f64>,
    /// Cumulative over the run.
    pub messages: u64,
    pub bytes: u64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn power_iterations(&self) -> usize {
        self.rows.iter().filter(|r| r.phase == Phase::Power).count()
    }

    pub fn messages(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.messages)
    }

    pub fn bytes(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.bytes)
    }
}

/// Per-cell minimum rates around one subcarrier phase.
#[derive(Clone, Debug, PartialEq)]
pub struct SubcarrierPhase {
    pub round: usize,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub power: PowerMatrix,
    pub assignment: Assignment,
    pub wsmr: f64,
    pub initial_wsmr: f64,
    pub rounds: usize,
    pub trace: IterationTrace,
    /// Every power phase reached `psi` before its iteration cap.
    pub converged: bool,
    /// Iterations the first power phase needed to reach `psi`.
    pub first_phase_iterations: Option<usize>,
    pub subcarrier_phases: Vec<SubcarrierPhase>,
}

#[derive(Debug, Error)]
#[error("run aborted in round {round}: {error}")]
pub struct RunAbort {
    pub round: usize,
    #[source]
    pub error: Error,
    pub trace: IterationTrace,
}

pub(crate) struct PhaseResult {
    pub power: PowerMatrix,
    pub trace: Vec<PowerIteration>,
    pub iterations_to_psi: Option<usize>,
}

fn power_phase(s: &Scenario, a: &Assignment, init: &PowerMatrix, cfg: &RunConfig) -> Result<PhaseResult, PowerAbort> {
    match cfg.power_method {
        PowerMethod::Ocd => ocd::ocd_solve(s, a, init, cfg.psi, cfg.max_iter).map(|o| PhaseResult {
            power: o.power,
            trace: o.trace,
            iterations_to_psi: o.iterations_to_psi,
        }),
        PowerMethod::Lr => lr::lr_solve(s, a, init, cfg.psi, cfg.max_iter, &cfg.lr).map(|o| PhaseResult {
            power: o.power,
            trace: o.trace,
            iterations_to_psi: o.iterations_to_psi,
        }),
    }
}

/// Alternates power and subcarrier phases until a round moves WSMR by less
/// than `wsmr_tol` (relative) or `max_rounds` is reached.
pub fn run(s: &Scenario, cfg: &RunConfig) -> Result<RunOutcome, RunAbort> {
    let abort = |round, error, trace| RunAbort { round, error, trace };
    cfg.validate().map_err(|e| abort(0, e, IterationTrace::default()))?;
    let clock = Stopwatch::start();
    let mut trace = IterationTrace::default();
    let mut power = PowerMatrix::uniform(s);
    let mut assignment = Assignment::even(s);
    let initial = wsmr(s, &power, &assignment);
    let mut best = (power.clone(), assignment.clone(), initial.value);
    let mut last_round_wsmr = initial.value;
    let mut converged = true;
    let mut first_phase_iterations = None;
    let mut subcarrier_phases = Vec::new();
    let (mut messages, mut bytes) = (0u64, 0u64);
    let mut rounds = 0;

    for round in 1..=cfg.max_rounds {
        rounds = round;
        let phase_start = clock.seconds();
        let phase = match power_phase(s, &assignment, &power, cfg) {
            Ok(phase) => phase,
            Err(PowerAbort { error, trace: partial }) => {
                for it in partial {
                    trace.rows.push(power_row(round, &it, messages, bytes, phase_start));
                }
                return Err(abort(round, error, trace));
            }
        };
        for it in &phase.trace {
            trace.rows.push(power_row(round, it, messages, bytes, phase_start));
        }
        if let Some(last) = phase.trace.last() {
            messages += last.messages;
            bytes += last.bytes;
        }
        if round == 1 {
            first_phase_iterations = phase.iterations_to_psi;
        }
        converged &= phase.iterations_to_psi.is_some();
        power = phase.power;
        let after_power = wsmr(s, &power, &assignment);
        if after_power.value > best.2 {
            best = (power.clone(), assignment.clone(), after_power.value);
        }

        assignment = match solve_all_cells(s, &power, cfg.subcarrier_mode) {
            Ok(a) => a,
            Err(e) => return Err(abort(round, e, trace)),
        };
        let after_assign = wsmr(s, &power, &assignment);
        trace.rows.push(TraceRow {
            round,
            phase: Phase::Subcarrier,
            iter: 0,
            wsmr: after_assign.value,
            delta_p_norm: 0.0,
            cell_min: after_assign.cell_min.clone(),
            messages,
            bytes,
            elapsed_s: clock.seconds(),
        });
        subcarrier_phases.push(SubcarrierPhase {
            round,
            before: after_power.cell_min,
            after: after_assign.cell_min,
        });
        if after_assign.value > best.2 {
            best = (power.clone(), assignment.clone(), after_assign.value);
        }

        let change = (after_assign.value - last_round_wsmr).abs() / last_round_wsmr.abs().max(f64::MIN_POSITIVE);
        last_round_wsmr = after_assign.value;
        if change < cfg.wsmr_tol {
            break;
        }
    }

    Ok(RunOutcome {
        power: best.0,
        assignment: best.1,
        wsmr: best.2,
        initial_wsmr: initial.value,
        rounds,
        trace,
        converged,
        first_phase_iterations,
        subcarrier_phases,
    })
}

fn power_row(round: usize, it: &PowerIteration, messages: u64, bytes: u64, offset_s: f64) -> TraceRow {
    TraceRow {
        round,
        phase: Phase::Power,
        iter: it.iter,
        wsmr: it.wsmr,
        delta_p_norm: it.delta_p_norm,
        cell_min: it.cell_min.clone(),
        messages: messages + it.messages,
        bytes: bytes + it.bytes,
        elapsed_s: offset_s + it.elapsed_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioParams};

    #[test]
    fn convergence_predicate() {
        let a = PowerMatrix::from_rows(vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]).unwrap();
        assert!(check_convergence(&a, &a, 1e-300).unwrap());
        let mut c = PowerMatrix::zeros(1, 1);
        c.set(0, 0, 0.1);
        assert!(!check_convergence(&c, &PowerMatrix::zeros(1, 1), 0.1).unwrap());
        let mut d = a.clone();
        d.set(0, 1, 0.25);
        d.set(2, 0, 0.55);
        assert!((d.distance(&a).unwrap() - (2.0f64 * 0.05 * 0.05).sqrt()).abs() < 1e-15);
        assert!(check_convergence(&d, &a, 0.1).unwrap());
        assert!(check_convergence(&a, &PowerMatrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn infinite_tolerance_means_one_round() {
        let s = generate_scenario(&ScenarioParams::uniform(2, 6, 2, 1.0).with_seed(1)).unwrap();
        let cfg = RunConfig {
            wsmr_tol: f64::INFINITY,
            ..RunConfig::default()
        };
        let out = run(&s, &cfg).unwrap();
        assert_eq!(out.rounds, 1);
        assert_eq!(out.subcarrier_phases.len(), 1);
    }

    #[test]
    fn single_user_cell_keeps_everything() {
        let s = generate_scenario(&ScenarioParams::uniform(1, 4, 1, 1.0).with_seed(3)).unwrap();
        let out = run(&s, &RunConfig::default()).unwrap();
        assert_eq!(out.assignment, Assignment::even(&s));
        assert!(out.assignment.cell(0).iter().all(|&o| o == Some(0)));
    }

    #[test]
    fn best_never_below_initialization_and_messages_account() {
        let s = generate_scenario(&ScenarioParams::uniform(3, 8, 2, 1.0).with_seed(4)).unwrap();
        for method in [PowerMethod::Ocd, PowerMethod::Lr] {
            let cfg = RunConfig {
                power_method: method,
                ..RunConfig::default()
            };
            let out = run(&s, &cfg).unwrap();
            assert!(out.wsmr >= out.initial_wsmr);
            assert!(out.power.is_feasible(&s));
            out.assignment.check(&s).unwrap();
            assert_eq!(out.trace.messages(), 6 * out.trace.power_iterations() as u64, "{method}");
            for w in out.trace.rows.windows(2) {
                assert!(w[1].messages >= w[0].messages);
            }
            for phase in &out.subcarrier_phases {
                for (b, a) in phase.before.iter().zip(&phase.after) {
                    assert!(a >= &(b - 1e-10));
                }
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let s = generate_scenario(&ScenarioParams::uniform(1, 2, 1, 1.0)).unwrap();
        for cfg in [
            RunConfig { psi: 0.0, ..RunConfig::default() },
            RunConfig { max_iter: 0, ..RunConfig::default() },
            RunConfig { max_rounds: 0, ..RunConfig::default() },
            RunConfig { wsmr_tol: -1.0, ..RunConfig::default() },
        ] {
            assert!(run(&s, &cfg).is_err());
        }
    }
}
