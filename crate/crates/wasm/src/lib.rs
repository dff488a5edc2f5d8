//! Browser bindings for the demo page in `www/`. Every entry point takes
//! plain numbers and returns a JSON string.

use netalloc::lr::{lr_solve, LrConfig};
use netalloc::ocd::{ocd_solve, PowerIteration};
use netalloc::rates::user_rates;
use netalloc::scenario::generate_scenario;
use netalloc::{run, Assignment, PowerMatrix, PowerMethod, RunConfig, Scenario, ScenarioParams, SubcarrierMode};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Layout {
    radius: f64,
    base_stations: Vec<[f64; 2]>,
    users: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct Series {
    wsmr: Vec<f64>,
    delta: Vec<f64>,
    converged_at: Option<usize>,
}

#[derive(Serialize)]
struct Traces {
    ocd: Series,
    lr: Series,
    initial_wsmr: f64,
}

#[derive(Serialize)]
struct Allocation {
    wsmr: f64,
    initial_wsmr: f64,
    rounds: usize,
    /// `owner[m][n]`: user index or -1.
    owner: Vec<Vec<i32>>,
    power: Vec<Vec<f64>>,
    rates: Vec<Vec<f64>>,
}

fn scenario(cells: usize, subcarriers: usize, users: usize, pmax: f64, seed: u64) -> Result<Scenario, JsError> {
    let params = ScenarioParams::uniform(cells, subcarriers, users, pmax).with_seed(seed);
    generate_scenario(&params).map_err(|e| JsError::new(&e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn series(trace: &[PowerIteration], converged_at: Option<usize>) -> Series {
    Series {
        wsmr: trace.iter().map(|r| r.wsmr).collect(),
        delta: trace.iter().map(|r| r.delta_p_norm).collect(),
        converged_at,
    }
}

/// Cell sites and dropped users.
#[wasm_bindgen]
pub fn layout(cells: usize, users: usize, seed: u64) -> Result<String, JsError> {
    let s = scenario(cells, 1, users, 1.0, seed)?;
    to_json(&Layout {
        radius: s.params().cell_radius,
        base_stations: s.bs_positions().to_vec(),
        users: s.user_positions().to_vec(),
    })
}

/// Power-phase traces of both methods from uniform powers and round-robin
/// subcarriers, run for exactly `iterations` steps each.
#[wasm_bindgen]
pub fn convergence(
    cells: usize,
    subcarriers: usize,
    users: usize,
    pmax: f64,
    seed: u64,
    psi: f64,
    iterations: usize,
) -> Result<String, JsError> {
    let s = scenario(cells, subcarriers, users, pmax, seed)?;
    let a = Assignment::even(&s);
    let init = PowerMatrix::uniform(&s);
    // A zero tolerance keeps both solvers running so the curves share a length.
    let ocd = ocd_solve(&s, &a, &init, f64::MIN_POSITIVE, iterations).map_err(|e| JsError::new(&e.to_string()))?;
    let lr = lr_solve(&s, &a, &init, f64::MIN_POSITIVE, iterations, &LrConfig::default())
        .map_err(|e| JsError::new(&e.to_string()))?;
    let first_below = |t: &[PowerIteration]| t.iter().find(|r| r.delta_p_norm < psi).map(|r| r.iter);
    to_json(&Traces {
        ocd: series(&ocd.trace, first_below(&ocd.trace)),
        lr: series(&lr.trace, first_below(&lr.trace)),
        initial_wsmr: netalloc::rates::wsmr(&s, &init, &a).value,
    })
}

/// Full alternating optimization; `method` is `ocd` or `lr`, `mode` is
/// `exact` or `greedy`.
#[wasm_bindgen]
pub fn allocate(
    cells: usize,
    subcarriers: usize,
    users: usize,
    pmax: f64,
    seed: u64,
    method: &str,
    mode: &str,
) -> Result<String, JsError> {
    let s = scenario(cells, subcarriers, users, pmax, seed)?;
    let cfg = RunConfig {
        power_method: method.parse::<PowerMethod>().map_err(|e| JsError::new(&e))?,
        subcarrier_mode: mode.parse::<SubcarrierMode>().map_err(|e| JsError::new(&e))?,
        ..RunConfig::default()
    };
    let out = run(&s, &cfg).map_err(|e| JsError::new(&e.to_string()))?;
    let owner = (0..s.num_cells())
        .map(|m| out.assignment.cell(m).iter().map(|o| o.map_or(-1, |u| u as i32)).collect())
        .collect();
    to_json(&Allocation {
        wsmr: out.wsmr,
        initial_wsmr: out.initial_wsmr,
        rounds: out.rounds,
        owner,
        power: out.power.rows(),
        rates: user_rates(&s, &out.power, &out.assignment),
    })
}
