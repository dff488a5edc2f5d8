//! SINR, per-subcarrier and per-user rates (in nats per OFDM symbol), the
//! WSMR objective and closed-form derivatives of a subcarrier rate with
//! respect to every BS's power on that subcarrier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Slack allowed on per-BS budgets after projection.
pub const BUDGET_TOL: f64 = 1e-9;

/// Transmit powers `P[m][n]` in watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerMatrix {
    cells: usize,
    subcarriers: usize,
    data: Vec<f64>,
}

impl PowerMatrix {
    pub fn zeros(cells: usize, subcarriers: usize) -> Self {
        Self {
            cells,
            subcarriers,
            data: vec![0.0; cells * subcarriers],
        }
    }

    /// `p_max / N` on every subcarrier of every BS.
    pub fn uniform(s: &Scenario) -> Self {
        let n_sub = s.num_subcarriers();
        let mut p = Self::zeros(s.num_cells(), n_sub);
        for m in 0..s.num_cells() {
            p.row_mut(m).fill(s.p_max(m) / n_sub as f64);
        }
        p
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cells = rows.len();
        let subcarriers = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(cells * subcarriers);
        for (m, row) in rows.into_iter().enumerate() {
            if row.len() != subcarriers {
                return Err(Error::Dimension {
                    what: format!("power row {m}"),
                    expected: subcarriers,
                    found: row.len(),
                });
            }
            data.extend(row);
        }
        Ok(Self {
            cells,
            subcarriers,
            data,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[m * self.subcarriers + n]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, value: f64) {
        self.data[m * self.subcarriers + n] = value;
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.subcarriers.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// `||vec(self - other)||_2`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.cells != other.cells || self.subcarriers != other.subcarriers {
            return Err(Error::Dimension {
                what: "power matrix".into(),
                expected: self.data.len(),
                found: other.data.len(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Largest amount by which a row exceeds its budget, or a negative entry
    /// falls below zero.
    pub fn budget_excess(&self, s: &Scenario) -> f64 {
        (0..self.cells)
            .map(|m| {
                let row = self.row(m);
                let over = row.iter().sum::<f64>() - s.p_max(m);
                let neg = row.iter().fold(0.0f64, |acc, &p| acc.max(-p));
                over.max(neg)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_feasible(&self, s: &Scenario) -> bool {
        self.data.iter().all(|p| p.is_finite()) && self.budget_excess(s) <= BUDGET_TOL
    }

    /// Clips negatives and rescales any row whose sum exceeds its budget.
    pub fn project_to_budgets(&mut self, s: &Scenario) {
        for m in 0..self.cells {
            let cap = s.p_max(m);
            let row = self.row_mut(m);
            for p in row.iter_mut() {
                *p = p.max(0.0);
            }
            let total: f64 = row.iter().sum();
            if total > cap {
                let scale = cap / total;
                for p in row.iter_mut() {
                    *p *= scale;
                }
            }
        }
    }
}

/// Subcarrier ownership: `owner[m][n]` is the user of cell `m` holding
/// subcarrier `n`, if any. Exclusivity holds by construction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    owner: Vec<Vec<Option<usize>>>,
}

impl Assignment {
    pub fn new(owner: Vec<Vec<Option<usize>>>) -> Self {
        Self { owner }
    }

    /// Subcarriers dealt round-robin to users in index order.
    pub fn even(s: &Scenario) -> Self {
        let owner = (0..s.num_cells())
            .map(|m| (0..s.num_subcarriers()).map(|n| Some(n % s.users(m))).collect())
            .collect();
        Self { owner }
    }

    /// From binary indicators `a[m][u][n]`; rejects non-binary entries and
    /// subcarriers claimed by two users of the same cell.
    pub fn from_indicators(a: &[Vec<Vec<u8>>]) -> Result<Self> {
        let mut owner = Vec::with_capacity(a.len());
        for (m, per_user) in a.iter().enumerate() {
            let n_sub = per_user.first().map_or(0, Vec::len);
            let mut row = vec![None; n_sub];
            for (u, bits) in per_user.iter().enumerate() {
                if bits.len() != n_sub {
                    return Err(Error::Dimension {
                        what: format!("indicator row [{m}][{u}]"),
                        expected: n_sub,
                        found: bits.len(),
                    });
                }
                for (n, &bit) in bits.iter().enumerate() {
                    match bit {
                        0 => {}
                        1 if row[n].is_none() => row[n] = Some(u),
                        1 => return Err(Error::Exclusivity { cell: m, subcarrier: n }),
                        _ => return Err(Error::Index(format!("indicator [{m}][{u}][{n}] = {bit} is not binary"))),
                    }
                }
            }
            owner.push(row);
        }
        Ok(Self { owner })
    }

    pub fn to_indicators(&self, s: &Scenario) -> Vec<Vec<Vec<u8>>> {
        (0..s.num_cells())
            .map(|m| {
                (0..s.users(m))
                    .map(|u| self.owner[m].iter().map(|&o| u8::from(o == Some(u))).collect())
                    .collect()
            })
            .collect()
    }

    pub fn cells(&self) -> usize {
        self.owner.len()
    }

    #[inline]
    pub fn owner(&self, m: usize, n: usize) -> Option<usize> {
        self.owner[m][n]
    }

    pub fn cell(&self, m: usize) -> &[Option<usize>] {
        &self.owner[m]
    }

    pub fn set_cell(&mut self, m: usize, owners: Vec<Option<usize>>) {
        self.owner[m] = owners;
    }

    /// Subcarriers held by user `u` of cell `m`.
    pub fn subcarriers_of(&self, m: usize, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner[m]
            .iter()
            .enumerate()
            .filter_map(move |(n, &o)| (o == Some(u)).then_some(n))
    }

    /// Shape and user-index check against a scenario.
    pub fn check(&self, s: &Scenario) -> Result<()> {
        if self.owner.len() != s.num_cells() {
            return Err(Error::Dimension {
                what: "assignment cells".into(),
                expected: s.num_cells(),
                found: self.owner.len(),
            });
        }
        for (m, row) in self.owner.iter().enumerate() {
            if row.len() != s.num_subcarriers() {
                return Err(Error::Dimension {
                    what: format!("assignment row {m}"),
                    expected: s.num_subcarriers(),
                    found: row.len(),
                });
            }
            if let Some(u) = row.iter().flatten().find(|&&u| u >= s.users(m)) {
                return Err(Error::Index(format!("user {u} in cell {m}")));
            }
        }
        Ok(())
    }
}

/// Quantities of one (user, cell, subcarrier) link under powers `P`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Link {
    /// `P[m][n] * g[m][u][m][n]`.
    signal: f64,
    /// `(sigma^2 + sum_{l != m} P[l][n] g[l][u][m][n]) * Gamma`.
    scaled_interference: f64,
}

impl Link {
    #[inline]
    pub(crate) fn new(s: &Scenario, p: &PowerMatrix, u: usize, m: usize, n: usize) -> Self {
        let mut interference = s.noise(m, u, n);
        for l in 0..s.num_cells() {
            if l != m {
                interference += p.get(l, n) * s.gain(l, m, u, n);
            }
        }
        Self {
            signal: p.get(m, n) * s.gain(m, m, u, n),
            scaled_interference: interference * s.snr_gap(),
        }
    }

    #[inline]
    pub(crate) fn sinr(&self) -> f64 {
        self.signal / self.scaled_interference
    }

    #[inline]
    pub(crate) fn rate(&self) -> f64 {
        self.sinr().ln_1p()
    }

    /// Derivative with respect to the serving BS's power, given its gain.
    #[inline]
    pub(crate) fn d_own(&self, g_own: f64) -> f64 {
        g_own / (self.scaled_interference + self.signal)
    }

    /// Derivative with respect to interfering BS power, given its gain.
    #[inline]
    pub(crate) fn d_cross(&self, g_cross: f64, gap: f64) -> f64 {
        let a = gap * g_cross;
        -a * self.signal / ((self.scaled_interference + self.signal) * self.scaled_interference)
    }

    #[inline]
    pub(crate) fn dd_own(&self, g_own: f64) -> f64 {
        let t = g_own / (self.scaled_interference + self.signal);
        -t * t
    }

    #[inline]
    pub(crate) fn dd_cross(&self, g_cross: f64, gap: f64) -> f64 {
        let a = gap * g_cross;
        let x = a / self.scaled_interference;
        let y = a / (self.scaled_interference + self.signal);
        x * x - y * y
    }
}

fn check_link(s: &Scenario, p: &PowerMatrix, u: usize, m: usize, n: usize) -> Result<()> {
    if p.cells() != s.num_cells() || p.subcarriers() != s.num_subcarriers() {
        return Err(Error::Dimension {
            what: "power matrix".into(),
            expected: s.num_cells() * s.num_subcarriers(),
            found: p.cells() * p.subcarriers(),
        });
    }
    if m >= s.num_cells() {
        return Err(Error::Index(format!("cell {m} of {}", s.num_cells())));
    }
    if u >= s.users(m) {
        return Err(Error::Index(format!("user {u} of {} in cell {m}", s.users(m))));
    }
    if n >= s.num_subcarriers() {
        return Err(Error::Index(format!("subcarrier {n} of {}", s.num_subcarriers())));
    }
    Ok(())
}

pub fn sinr(s: &Scenario, p: &PowerMatrix, u: usize, m: usize, n: usize) -> Result<f64> {
    check_link(s, p, u, m, n)?;
    Ok(Link::new(s, p, u, m, n).sinr())
}

/// `ln(1 + SINR)`.
pub fn rate_subcarrier(s: &Scenario, p: &PowerMatrix, u: usize, m: usize, n: usize) -> Result<f64> {
    check_link(s, p, u, m, n)?;
    Ok(Link::new(s, p, u, m, n).rate())
}

/// Sum of the user's subcarrier rates over the subcarriers it holds.
pub fn rate_user(s: &Scenario, p: &PowerMatrix, a: &Assignment, u: usize, m: usize) -> Result<f64> {
    a.check(s)?;
    check_link(s, p, u, m, 0)?;
    Ok(user_rate(s, p, a, u, m))
}

#[inline]
pub(crate) fn user_rate(s: &Scenario, p: &PowerMatrix, a: &Assignment, u: usize, m: usize) -> f64 {
    a.subcarriers_of(m, u).map(|n| Link::new(s, p, u, m, n).rate()).sum()
}

/// `rates[m][u]` for every user.
pub fn user_rates(s: &Scenario, p: &PowerMatrix, a: &Assignment) -> Vec<Vec<f64>> {
    (0..s.num_cells())
        .map(|m| {
            let mut rates = vec![0.0; s.users(m)];
            for n in 0..s.num_subcarriers() {
                if let Some(u) = a.owner(m, n) {
                    rates[u] += Link::new(s, p, u, m, n).rate();
                }
            }
            rates
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wsmr {
    pub value: f64,
    pub cell_min: Vec<f64>,
    /// Lowest-index user attaining each cell's minimum.
    pub argmin: Vec<usize>,
}

/// Weighted sum over cells of the minimum user rate.
pub fn wsmr(s: &Scenario, p: &PowerMatrix, a: &Assignment) -> Wsmr {
    wsmr_from_rates(s, &user_rates(s, p, a))
}

pub fn wsmr_from_rates(s: &Scenario, rates: &[Vec<f64>]) -> Wsmr {
    let mut cell_min = Vec::with_capacity(rates.len());
    let mut argmin = Vec::with_capacity(rates.len());
    let mut value = 0.0;
    for (m, r) in rates.iter().enumerate() {
        let (u, &min) = r
            .iter()
            .enumerate()
            .fold((0, &r[0]), |best, cur| if cur.1 < best.1 { cur } else { best });
        value += s.weight(m) * min;
        cell_min.push(min);
        argmin.push(u);
    }
    Wsmr {
        value,
        cell_min,
        argmin,
    }
}

/// `dR_{u,m,n} / dP[l][n]` for every BS `l`.
pub fn rate_gradient(s: &Scenario, p: &PowerMatrix, u: usize, m: usize, n: usize) -> Result<Vec<f64>> {
    check_link(s, p, u, m, n)?;
    let link = Link::new(s, p, u, m, n);
    Ok((0..s.num_cells())
        .map(|l| {
            if l == m {
                link.d_own(s.gain(m, m, u, n))
            } else {
                link.d_cross(s.gain(l, m, u, n), s.snr_gap())
            }
        })
        .collect())
}

/// `d^2 R_{u,m,n} / dP[l][n]^2` for every BS `l`.
pub fn rate_curvature(s: &Scenario, p: &PowerMatrix, u: usize, m: usize, n: usize) -> Result<Vec<f64>> {
    check_link(s, p, u, m, n)?;
    let link = Link::new(s, p, u, m, n);
    Ok((0..s.num_cells())
        .map(|l| {
            if l == m {
                link.dd_own(s.gain(m, m, u, n))
            } else {
                link.dd_cross(s.gain(l, m, u, n), s.snr_gap())
            }
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::scenario::ScenarioParams;

    /// `cells` cells, one gain value everywhere, no positions to speak of.
    pub fn flat_scenario(cells: usize, users: usize, subcarriers: usize, desired: f64, cross: f64) -> Scenario {
        let mut params = ScenarioParams::uniform(cells, subcarriers, users, 1.0);
        params.noise_power = 1e-6;
        let gains = (0..cells)
            .map(|l| {
                (0..cells)
                    .map(|m| vec![vec![if l == m { desired } else { cross }; subcarriers]; users])
                    .collect()
            })
            .collect();
        Scenario::from_parts(
            params,
            vec![[0.0, 0.0]; cells],
            vec![vec![[1.0, 0.0]; users]; cells],
            gains,
            None,
        )
        .unwrap()
    }
}
