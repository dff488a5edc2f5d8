//! Per-cell max-min subcarrier assignment under fixed powers.
//!
//! With powers fixed every subcarrier rate is a constant, so each cell's
//! problem is an integer program: give each subcarrier to one user so the
//! smallest user total is as large as possible. [`solve_exact`] is a
//! depth-first branch-and-bound; [`solve_greedy`] is the cheap fallback.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rates::{Assignment, Link, PowerMatrix};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubcarrierMode {
    Exact,
    Greedy,
}

impl FromStr for SubcarrierMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "greedy" => Ok(Self::Greedy),
            other => Err(format!("unknown subcarrier mode `{other}` (expected exact|greedy)")),
        }
    }
}

/// One cell's solution: `owner[n]` is the user given subcarrier `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellAssignment {
    pub owner: Vec<usize>,
    pub min_rate: f64,
}

/// `table[u][n]`: rate of user `u` of cell `m` on subcarrier `n` under `P`.
pub fn rate_table(s: &Scenario, p: &PowerMatrix, m: usize) -> Vec<Vec<f64>> {
    (0..s.users(m))
        .map(|u| (0..s.num_subcarriers()).map(|n| Link::new(s, p, u, m, n).rate()).collect())
        .collect()
}

/// Minimum over users of the summed rates under `owner`, accumulated in
/// subcarrier order.
pub fn min_rate_of(table: &[Vec<f64>], owner: &[usize]) -> f64 {
    let mut totals = vec![0.0; table.len()];
    for (n, &u) in owner.iter().enumerate() {
        totals[u] += table[u][n];
    }
    totals.into_iter().fold(f64::INFINITY, f64::min)
}

fn check_table(table: &[Vec<f64>]) -> Result<usize> {
    let n_sub = table.first().map_or(0, Vec::len);
    if table.is_empty() || n_sub == 0 {
        return Err(Error::Dimension {
            what: "rate table".into(),
            expected: 1,
            found: 0,
        });
    }
    for (u, row) in table.iter().enumerate() {
        if row.len() != n_sub {
            return Err(Error::Dimension {
                what: format!("rate table row {u}"),
                expected: n_sub,
                found: row.len(),
            });
        }
        if let Some(n) = row.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Index(format!("rate table entry [{u}][{n}] must be finite and >= 0")));
        }
    }
    Ok(n_sub)
}

/// Subcarriers by decreasing best-user rate, lower index first on ties.
fn branching_order(table: &[Vec<f64>], n_sub: usize) -> Vec<usize> {
    let best = |n: usize| table.iter().map(|row| row[n]).fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..n_sub).collect();
    order.sort_by(|&a, &b| best(b).total_cmp(&best(a)).then(a.cmp(&b)));
    order
}

/// Walks subcarriers by decreasing best rate, giving each to the user with
/// the lowest running total (lowest index on ties).
pub fn solve_greedy(table: &[Vec<f64>]) -> Result<CellAssignment> {
    let n_sub = check_table(table)?;
    let mut totals = vec![0.0; table.len()];
    let mut owner = vec![0; n_sub];
    for n in branching_order(table, n_sub) {
        let u = lowest(&totals);
        totals[u] += table[u][n];
        owner[n] = u;
    }
    let min_rate = min_rate_of(table, &owner);
    Ok(CellAssignment { owner, min_rate })
}

fn lowest(totals: &[f64]) -> usize {
    let mut best = 0;
    for (u, &t) in totals.iter().enumerate().skip(1) {
        if t < totals[best] {
            best = u;
        }
    }
    best
}

/// Exact max-min assignment by branch-and-bound.
///
/// Subcarriers are branched in [`solve_greedy`]'s order, users in index
/// order. A node is pruned when an upper bound on its best completion does
/// not beat the incumbent (seeded by the greedy solution). The bound is the
/// tighter of
/// - `min_u (acc_u + rest_u)`: every remaining subcarrier handed to `u`;
/// - for each user pair, the LP-dual bound
///   `min_y y*acc_u + (1-y)*acc_v + sum_n max(y*a_un, (1-y)*a_vn)`.
pub fn solve_exact(table: &[Vec<f64>]) -> Result<CellAssignment> {
    let n_sub = check_table(table)?;
    let users = table.len();
    let greedy = solve_greedy(table)?;
    if users == 1 {
        return Ok(greedy);
    }
    let order = branching_order(table, n_sub);
    // rest[k][u]: user u's rate over order[k..].
    let mut rest = vec![vec![0.0; users]; n_sub + 1];
    for k in (0..n_sub).rev() {
        for u in 0..users {
            rest[k][u] = rest[k + 1][u] + table[u][order[k]];
        }
    }
    let mut search = Search {
        table,
        order: &order,
        rest: &rest,
        acc: vec![0.0; users],
        path: vec![0; n_sub],
        best_value: greedy.min_rate,
        best_path: None,
        breakpoints: Vec::with_capacity(n_sub),
    };
    search.descend(0);
    match search.best_path {
        None => Ok(greedy),
        Some(path) => {
            let mut owner = vec![0; n_sub];
            for (k, &n) in order.iter().enumerate() {
                owner[n] = path[k];
            }
            let min_rate = min_rate_of(table, &owner);
            if min_rate >= greedy.min_rate {
                Ok(CellAssignment { owner, min_rate })
            } else {
                Ok(greedy)
            }
        }
    }
}

struct Search<'a> {
    table: &'a [Vec<f64>],
    order: &'a [usize],
    rest: &'a [Vec<f64>],
    acc: Vec<f64>,
    path: Vec<usize>,
    best_value: f64,
    best_path: Option<Vec<usize>>,
    breakpoints: Vec<(f64, f64, f64)>,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize) {
        if depth == self.order.len() {
            let value = self.acc.iter().copied().fold(f64::INFINITY, f64::min);
            if value > self.best_value {
                self.best_value = value;
                self.best_path = Some(self.path.clone());
            }
            return;
        }
        if self.bound(depth) <= self.best_value {
            return;
        }
        let n = self.order[depth];
        for u in 0..self.table.len() {
            let r = self.table[u][n];
            self.acc[u] += r;
            self.path[depth] = u;
            self.descend(depth + 1);
            self.acc[u] -= r;
        }
    }

    fn bound(&mut self, depth: usize) -> f64 {
        let users = self.table.len();
        let rest = &self.rest[depth];
        let mut bound = (0..users).map(|u| self.acc[u] + rest[u]).fold(f64::INFINITY, f64::min);
        for u in 0..users {
            for v in u + 1..users {
                bound = bound.min(self.pair_bound(depth, u, v));
            }
        }
        bound
    }

    /// Minimizes the convex piecewise-linear dual function over `y` in
    /// `[0, 1]` by walking its breakpoints in order.
    fn pair_bound(&mut self, depth: usize, u: usize, v: usize) -> f64 {
        let (acc_u, acc_v) = (self.acc[u], self.acc[v]);
        self.breakpoints.clear();
        for &n in &self.order[depth..] {
            let (a, b) = (self.table[u][n], self.table[v][n]);
            if a + b > 0.0 {
                self.breakpoints.push((b / (a + b), a, b));
            }
        }
        self.breakpoints.sort_by(|x, y| x.0.total_cmp(&y.0));
        // Slope just right of y = 0: every subcarrier still on v's side.
        let mut slope = acc_u - acc_v - self.breakpoints.iter().map(|bp| bp.2).sum::<f64>();
        let mut y_star = 0.0;
        if slope < 0.0 {
            y_star = 1.0;
            for &(y, a, b) in &self.breakpoints {
                slope += a + b;
                if slope >= 0.0 {
                    y_star = y;
                    break;
                }
            }
        }
        let mut value = y_star * acc_u + (1.0 - y_star) * acc_v;
        for &(_, a, b) in &self.breakpoints {
            value += (y_star * a).max((1.0 - y_star) * b);
        }
        value
    }
}

pub fn solve_cell(table: &[Vec<f64>], mode: SubcarrierMode) -> Result<CellAssignment> {
    match mode {
        SubcarrierMode::Exact => solve_exact(table),
        SubcarrierMode::Greedy => solve_greedy(table),
    }
}

/// Independent per-cell solves under fixed powers.
pub fn solve_all_cells(s: &Scenario, p: &PowerMatrix, mode: SubcarrierMode) -> Result<Assignment> {
    let cells = par::map_indexed(s.num_cells(), |m| solve_cell(&rate_table(s, p, m), mode));
    let owner = cells
        .into_iter()
        .map(|c| c.map(|c| c.owner.into_iter().map(Some).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Assignment::new(owner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::oracle::exhaustive_assignment;
    use crate::rates::fixtures::flat_scenario;
    use crate::scenario::{generate_scenario, ScenarioParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(rng: &mut ChaCha8Rng, users: usize, n_sub: usize) -> Vec<Vec<f64>> {
        (0..users).map(|_| (0..n_sub).map(|_| 5.0 * rng.gen::<f64>()).collect()).collect()
    }

    #[test]
    fn diagonal_table() {
        let t = vec![vec![3.0, 1.0], vec![1.0, 3.0]];
        let e = solve_exact(&t).unwrap();
        assert_eq!(e.owner, vec![0, 1]);
        assert_eq!(e.min_rate, 3.0);
        let g = solve_greedy(&t).unwrap();
        assert_eq!(g.owner, vec![0, 1]);
        assert_eq!(g.min_rate, 3.0);
    }

    #[test]
    fn one_each_when_dominated() {
        let e = solve_exact(&[vec![2.0, 2.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(e.min_rate, 1.0);
    }

    #[test]
    fn single_user_gets_everything() {
        let t = vec![vec![0.5, 1.5, 2.0]];
        for mode in [SubcarrierMode::Exact, SubcarrierMode::Greedy] {
            let c = solve_cell(&t, mode).unwrap();
            assert_eq!(c.owner, vec![0, 0, 0]);
            assert_eq!(c.min_rate, 4.0);
        }
    }

    #[test]
    fn empty_table_rejected() {
        assert!(solve_exact(&[]).is_err());
        assert!(solve_greedy(&[vec![]]).is_err());
        assert!(solve_exact(&[vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn zero_power_row_gives_zero_table() {
        let s = flat_scenario(2, 2, 3, 1e-4, 1e-6);
        let mut p = PowerMatrix::uniform(&s);
        p.row_mut(0).fill(0.0);
        assert!(rate_table(&s, &p, 0).iter().flatten().all(|&r| r == 0.0));
    }

    #[test]
    fn single_link_spot_value() {
        let s = flat_scenario(1, 1, 1, 1e-4, 0.0);
        let p = PowerMatrix::from_rows(vec![vec![1.0]]).unwrap();
        assert!((rate_table(&s, &p, 0)[0][0] - 101f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn exact_matches_enumeration_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n_sub in 1..=10 {
            for users in 2..=3 {
                if users == 3 && n_sub > 7 {
                    continue;
                }
                let t = random_table(&mut rng, users, n_sub);
                let exact = solve_exact(&t).unwrap();
                let oracle = exhaustive_assignment(&t).unwrap();
                assert!((exact.min_rate - oracle.min_rate).abs() <= 1e-12, "K={users} N={n_sub}");
                assert!(solve_greedy(&t).unwrap().min_rate <= exact.min_rate);
            }
        }
    }

    #[test]
    fn reference_scale_cell_is_fast_and_no_worse_than_greedy() {
        let s = generate_scenario(&ScenarioParams::reference().with_seed(2)).unwrap();
        let p = PowerMatrix::uniform(&s);
        for m in 0..3 {
            let t = rate_table(&s, &p, m);
            let e = solve_exact(&t).unwrap();
            assert!(e.min_rate >= solve_greedy(&t).unwrap().min_rate);
        }
    }

    #[test]
    fn all_cells_is_per_cell_concatenation_and_idempotent() {
        let s = generate_scenario(&ScenarioParams::uniform(3, 8, 2, 1.0).with_seed(5)).unwrap();
        let p = PowerMatrix::uniform(&s);
        let a = solve_all_cells(&s, &p, SubcarrierMode::Exact).unwrap();
        for m in 0..3 {
            let c = solve_exact(&rate_table(&s, &p, m)).unwrap();
            let owners: Vec<_> = c.owner.into_iter().map(Some).collect();
            assert_eq!(a.cell(m), owners.as_slice());
        }
        assert_eq!(a, solve_all_cells(&s, &p, SubcarrierMode::Exact).unwrap());
        a.check(&s).unwrap();
    }

    #[test]
    fn reassignment_never_lowers_cell_minimum() {
        let s = generate_scenario(&ScenarioParams::uniform(3, 8, 2, 1.0).with_seed(8)).unwrap();
        let p = PowerMatrix::uniform(&s);
        let prior = crate::rates::wsmr(&s, &p, &Assignment::even(&s));
        let a = solve_all_cells(&s, &p, SubcarrierMode::Exact).unwrap();
        let after = crate::rates::wsmr(&s, &p, &a);
        for m in 0..3 {
            assert!(after.cell_min[m] >= prior.cell_min[m] - 1e-10);
        }
    }

    proptest! {
        #[test]
        fn exact_equals_oracle(seed in 0u64..10_000, users in 2usize..4, n_sub in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_table(&mut rng, users, n_sub);
            let exact = solve_exact(&t).unwrap();
            let oracle = exhaustive_assignment(&t).unwrap();
            prop_assert!((exact.min_rate - oracle.min_rate).abs() <= 1e-12);
            prop_assert!((min_rate_of(&t, &exact.owner) - exact.min_rate).abs() == 0.0);
        }

        #[test]
        fn column_permutation_preserves_optimum(seed in 0u64..10_000, shift in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_table(&mut rng, 2, 6);
            let permuted: Vec<Vec<f64>> = t.iter().map(|row| (0..6).map(|n| row[(n + shift) % 6]).collect()).collect();
            let a = solve_exact(&t).unwrap().min_rate;
            let b = solve_exact(&permuted).unwrap().min_rate;
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
