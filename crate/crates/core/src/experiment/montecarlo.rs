//! Ensembles over independent channel realizations: realization `i` uses
//! seed `seed + i` and runs the initialization baseline and both power
//! methods on the same channels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coordinator::{run, PowerMethod, RunConfig, RunOutcome};
use crate::par;
use crate::rates::{wsmr, Assignment, PowerMatrix};
use crate::scenario::{generate_scenario, ScenarioParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Uniform powers with round-robin subcarriers, no optimization.
    Init,
    Lr,
    Ocd,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Init => "init",
            Self::Lr => "lr",
            Self::Ocd => "ocd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    /// Template; its seed is the base seed.
    pub params: ScenarioParams,
    pub realizations: usize,
    pub run: RunConfig,
    /// Per-BS budgets to sweep; empty means the template's budgets.
    pub pmax_sweep: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleRow {
    pub p_max: f64,
    pub seed: u64,
    pub method: Method,
    pub wsmr: f64,
    pub iters_to_psi: usize,
    pub converged: bool,
}

/// Rows plus the full run outcomes (`None` for baseline rows and failures).
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub rows: Vec<EnsembleRow>,
    pub outcomes: Vec<Option<RunOutcome>>,
}

impl Ensemble {
    /// Mean WSMR per method over finite rows, in method order.
    pub fn means(&self) -> Vec<(Method, f64)> {
        [Method::Init, Method::Lr, Method::Ocd]
            .into_iter()
            .filter_map(|method| {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method && r.wsmr.is_finite())
                    .map(|r| r.wsmr)
                    .collect();
                (!vals.is_empty()).then(|| (method, vals.iter().sum::<f64>() / vals.len() as f64))
            })
            .collect()
    }

    pub fn mean(&self, method: Method) -> Option<f64> {
        self.means().into_iter().find(|(m, _)| *m == method).map(|(_, v)| v)
    }
}

fn realization(params: &ScenarioParams, p_max: f64, cfg: &RunConfig) -> Vec<(EnsembleRow, Option<RunOutcome>)> {
    let row = |method, wsmr, iters_to_psi, converged| EnsembleRow {
        p_max,
        seed: params.seed,
        method,
        wsmr,
        iters_to_psi,
        converged,
    };
    let scenario = match generate_scenario(params) {
        Ok(s) => s,
        Err(_) => {
            return [Method::Init, Method::Lr, Method::Ocd]
                .into_iter()
                .map(|m| (row(m, f64::NAN, 0, false), None))
                .collect()
        }
    };
    let baseline = wsmr(&scenario, &PowerMatrix::uniform(&scenario), &Assignment::even(&scenario)).value;
    let mut out = vec![(row(Method::Init, baseline, 0, true), None)];
    for (method, power_method) in [(Method::Lr, PowerMethod::Lr), (Method::Ocd, PowerMethod::Ocd)] {
        let cfg = RunConfig {
            power_method,
            ..cfg.clone()
        };
        match run(&scenario, &cfg) {
            Ok(outcome) => {
                let iters = outcome.first_phase_iterations.unwrap_or(cfg.max_iter);
                out.push((row(method, outcome.wsmr, iters, outcome.converged), Some(outcome)));
            }
            Err(abort) => {
                let iters = abort.trace.power_iterations();
                out.push((row(method, f64::NAN, iters, false), None));
            }
        }
    }
    out
}

/// Runs every realization (in parallel when enabled) and returns rows sorted
/// by budget, seed and method.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Ensemble {
    let budgets: Vec<Option<f64>> = if cfg.pmax_sweep.is_empty() {
        vec![None]
    } else {
        cfg.pmax_sweep.iter().copied().map(Some).collect()
    };
    let jobs: Vec<(Option<f64>, u64)> = budgets
        .iter()
        .flat_map(|&b| (0..cfg.realizations as u64).map(move |i| (b, i)))
        .collect();
    let results = par::map_indexed(jobs.len(), |j| {
        let (budget, i) = jobs[j];
        let mut params = cfg.params.clone();
        params.seed = cfg.params.seed.wrapping_add(i);
        if let Some(b) = budget {
            params.p_max = vec![b; params.num_cells];
        }
        let p_max = params.p_max.first().copied().unwrap_or(f64::NAN);
        realization(&params, p_max, &cfg.run)
    });
    let mut paired: Vec<(EnsembleRow, Option<RunOutcome>)> = results.into_iter().flatten().collect();
    paired.sort_by(|a, b| {
        a.0.p_max
            .total_cmp(&b.0.p_max)
            .then(a.0.seed.cmp(&b.0.seed))
            .then(a.0.method.cmp(&b.0.method))
    });
    let (rows, outcomes) = paired.into_iter().unzip();
    Ensemble { rows, outcomes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::csv::ensemble_csv;

    fn small(realizations: usize) -> EnsembleConfig {
        EnsembleConfig {
            params: ScenarioParams::uniform(2, 4, 2, 1.0).with_seed(100),
            realizations,
            run: RunConfig {
                max_rounds: 2,
                ..RunConfig::default()
            },
            pmax_sweep: Vec::new(),
        }
    }

    #[test]
    fn three_rows_per_realization_sorted() {
        let e = run_ensemble(&small(4));
        assert_eq!(e.rows.len(), 12);
        for (i, chunk) in e.rows.chunks(3).enumerate() {
            assert!(chunk.iter().all(|r| r.seed == 100 + i as u64));
            assert_eq!(chunk.iter().map(|r| r.method).collect::<Vec<_>>(), vec![Method::Init, Method::Lr, Method::Ocd]);
        }
    }

    #[test]
    fn baseline_rows_are_plain_evaluations() {
        let cfg = small(2);
        let e = run_ensemble(&cfg);
        for r in e.rows.iter().filter(|r| r.method == Method::Init) {
            let s = generate_scenario(&cfg.params.clone().with_seed(r.seed)).unwrap();
            assert_eq!(r.wsmr, wsmr(&s, &PowerMatrix::uniform(&s), &Assignment::even(&s)).value);
        }
    }

    #[test]
    fn realization_depends_only_on_its_seed() {
        let a = run_ensemble(&small(3));
        let mut later = small(1);
        later.params.seed = 102;
        let b = run_ensemble(&later);
        assert_eq!(&a.rows[6..9], &b.rows[..]);
    }

    #[test]
    fn sweep_adds_budget_column() {
        let mut cfg = small(1);
        cfg.pmax_sweep = vec![0.5, 2.0];
        let e = run_ensemble(&cfg);
        assert_eq!(e.rows.len(), 6);
        let csv = ensemble_csv(&e.rows, true);
        assert!(csv.starts_with("p_max,seed,method"));
        assert_eq!(csv.lines().count(), 7);
    }
}
