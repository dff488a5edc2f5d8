//! Brute-force references used to check the solvers on small instances.
//! Deliberately naive: plain enumeration, no pruning, no shared code with the
//! solvers beyond rate evaluation.

use crate::error::{Error, Result};
use crate::rates::{wsmr, Assignment, PowerMatrix};
use crate::scenario::Scenario;
use crate::subcarrier::{min_rate_of, CellAssignment};

/// Largest `K^N` the assignment enumeration accepts.
pub const MAX_ASSIGNMENTS: u64 = 4096;
/// Largest subcarrier count the power grid accepts.
pub const MAX_GRID_SUBCARRIERS: usize = 2;

/// Enumerates all `K^N` subcarrier-to-user maps.
pub fn exhaustive_assignment(table: &[Vec<f64>]) -> Result<CellAssignment> {
    let users = table.len();
    let n_sub = table.first().map_or(0, Vec::len);
    if users == 0 || n_sub == 0 {
        return Err(Error::Dimension {
            what: "rate table".into(),
            expected: 1,
            found: 0,
        });
    }
    let count = (users as u64).checked_pow(n_sub as u32).filter(|&c| c <= MAX_ASSIGNMENTS).ok_or_else(|| {
        Error::TooLarge(format!("{users}^{n_sub} assignments exceeds the enumeration limit of {MAX_ASSIGNMENTS}"))
    })?;
    let mut best: Option<CellAssignment> = None;
    let mut owner = vec![0; n_sub];
    for code in 0..count {
        let mut c = code;
        for slot in owner.iter_mut() {
            *slot = (c % users as u64) as usize;
            c /= users as u64;
        }
        let value = min_rate_of(table, &owner);
        if best.as_ref().map_or(true, |b| value > b.min_rate) {
            best = Some(CellAssignment {
                owner: owner.clone(),
                min_rate: value,
            });
        }
    }
    Ok(best.expect("at least one assignment"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOptimum {
    pub power: PowerMatrix,
    pub value: f64,
}

/// Best WSMR over a `points x points` grid on `[0, p_max]^2` restricted to the
/// budget, for single-cell instances with at most two subcarriers.
pub fn grid_search_power(s: &Scenario, a: &Assignment, points: usize) -> Result<GridOptimum> {
    if s.num_cells() != 1 || s.num_subcarriers() > MAX_GRID_SUBCARRIERS {
        return Err(Error::TooLarge(format!(
            "power grid needs one cell and at most {MAX_GRID_SUBCARRIERS} subcarriers (got {} cells, {} subcarriers)",
            s.num_cells(),
            s.num_subcarriers()
        )));
    }
    if points < 2 {
        return Err(Error::InvalidParam {
            field: "points",
            reason: "grid needs at least 2 points per axis".into(),
        });
    }
    let cap = s.p_max(0);
    let level = |i: usize| cap * i as f64 / (points - 1) as f64;
    let n_sub = s.num_subcarriers();
    let mut best: Option<GridOptimum> = None;
    let second = if n_sub == 2 { points } else { 1 };
    for i in 0..points {
        for j in 0..second {
            let row = if n_sub == 2 { vec![level(i), level(j)] } else { vec![level(i)] };
            if row.iter().sum::<f64>() > cap * (1.0 + 1e-12) {
                continue;
            }
            let p = PowerMatrix::from_rows(vec![row])?;
            let value = wsmr(s, &p, a).value;
            if best.as_ref().map_or(true, |b| value > b.value) {
                best = Some(GridOptimum { power: p, value });
            }
        }
    }
    Ok(best.expect("grid contains the origin"))
}
