//! Harnesses behind the command-line front end: Monte-Carlo ensembles,
//! brute-force oracles and CSV emission.

pub mod csv;
pub mod montecarlo;
pub mod oracle;

pub use montecarlo::{run_ensemble, Ensemble, EnsembleConfig, EnsembleRow, Method};
