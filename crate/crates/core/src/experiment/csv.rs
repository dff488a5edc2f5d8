//! CSV emission. Numbers are written in scientific notation with 13
//! significant digits; line endings are `\n`.

use std::fmt::Write as _;

use crate::coordinator::IterationTrace;
use crate::experiment::montecarlo::EnsembleRow;

pub const TRACE_HEADER: &str = "round,phase,iter,wsmr,delta_p_norm,messages,bytes,elapsed_s";
pub const ENSEMBLE_HEADER: &str = "seed,method,wsmr,iters_to_psi,converged";

pub fn number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.12e}")
    } else {
        "nan".to_string()
    }
}

/// Trace rows; `elapsed_s` is zeroed when `timing` is off so output is
/// reproducible byte for byte.
pub fn trace_csv(trace: &IterationTrace, timing: bool) -> String {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        let elapsed = if timing { r.elapsed_s } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            r.phase,
            r.iter,
            number(r.wsmr),
            number(r.delta_p_norm),
            r.messages,
            r.bytes,
            number(elapsed)
        );
    }
    out
}

/// Ensemble rows, with a leading `p_max` column when `with_budget` is set.
pub fn ensemble_csv(rows: &[EnsembleRow], with_budget: bool) -> String {
    let mut out = String::with_capacity(48 * (rows.len() + 1));
    if with_budget {
        out.push_str("p_max,");
    }
    out.push_str(ENSEMBLE_HEADER);
    out.push('\n');
    for r in rows {
        if with_budget {
            let _ = write!(out, "{},", number(r.p_max));
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.seed,
            r.method,
            number(r.wsmr),
            r.iters_to_psi,
            r.converged
        );
    }
    out
}
