//! Problem instances: cell geometry, channel gains, noise, budgets and weights.
//!
//! Gains are indexed `(l, m, u, n)`: from BS `l` to user `u` of cell `m` on
//! subcarrier `n`. `l == m` is the desired link, everything else interference.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Users closer than this to their serving BS are pushed out to it.
pub const MIN_USER_DISTANCE: f64 = 1.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub num_cells: usize,
    pub num_subcarriers: usize,
    pub users_per_cell: Vec<usize>,
    /// Meters.
    pub cell_radius: f64,
    /// Per-BS budget in watts.
    pub p_max: Vec<f64>,
    /// Watts, applied to every (user, subcarrier) unless overridden.
    pub noise_power: f64,
    /// Linear SNR gap, `>= 1`.
    pub snr_gap: f64,
    pub weights: Vec<f64>,
    pub pathloss_exponent: f64,
    pub seed: u64,
}

impl ScenarioParams {
    /// Cells with `users` users each, unit weights, `p_max` watts per BS,
    /// 0 dB gap, -60 dBW noise and a pathloss exponent of 3.5.
    pub fn uniform(num_cells: usize, num_subcarriers: usize, users: usize, p_max: f64) -> Self {
        Self {
            num_cells,
            num_subcarriers,
            users_per_cell: vec![users; num_cells],
            cell_radius: 40.0,
            p_max: vec![p_max; num_cells],
            noise_power: db_to_linear(-60.0),
            snr_gap: 1.0,
            weights: vec![1.0; num_cells],
            pathloss_exponent: 3.5,
            seed: 0,
        }
    }

    /// Three cells of radius 40 m, 32 subcarriers, two users per cell.
    pub fn reference() -> Self {
        Self::uniform(3, 32, 2, 1.0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_users(&self) -> usize {
        self.users_per_cell.iter().sum()
    }

    /// Every broken invariant, each naming its field.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: &'static str, rule: String| out.push(Violation::new(field, rule));
        if self.num_cells == 0 {
            bad("num_cells", "must be at least 1".into());
        }
        if self.num_subcarriers == 0 {
            bad("num_subcarriers", "must be at least 1".into());
        }
        if self.users_per_cell.len() != self.num_cells {
            bad("users_per_cell", format!("needs {} entries", self.num_cells));
        }
        if let Some(m) = self.users_per_cell.iter().position(|&k| k == 0) {
            bad("users_per_cell", format!("cell {m} has no users"));
        }
        if !(self.cell_radius.is_finite() && self.cell_radius >= MIN_USER_DISTANCE) {
            bad("cell_radius", format!("must be finite and >= {MIN_USER_DISTANCE} m"));
        }
        if self.p_max.len() != self.num_cells {
            bad("p_max", format!("needs {} entries", self.num_cells));
        }
        if let Some(m) = self.p_max.iter().position(|&p| !(p.is_finite() && p > 0.0)) {
            bad("p_max", format!("budget of cell {m} must be positive and finite"));
        }
        if !(self.noise_power.is_finite() && self.noise_power > 0.0) {
            bad("noise_power", "must be positive and finite".into());
        }
        if !(self.snr_gap.is_finite() && self.snr_gap >= 1.0) {
            bad("snr_gap", "must be >= 1 (0 dB)".into());
        }
        if self.weights.len() != self.num_cells {
            bad("weights", format!("needs {} entries", self.num_cells));
        }
        if self.weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            bad("weights", "must be nonnegative and finite".into());
        } else if !self.weights.iter().any(|&w| w > 0.0) {
            bad("weights", "at least one weight must be positive".into());
        }
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 0.0) {
            bad("pathloss_exponent", "must be positive and finite".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidParam {
                field: v.field,
                reason: v.rule,
            }),
        }
    }
}

/// One broken invariant, located by field and (where relevant) tensor index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl Violation {
    fn new(field: &'static str, rule: String) -> Self {
        Self { field, rule }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Small-scale fading applied on top of pathloss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fading {
    /// Unit-mean exponential power fade per (l, u, m, n).
    Rayleigh,
    /// Fade fixed to one: pure pathloss.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    params: ScenarioParams,
    bs_positions: Vec<[f64; 2]>,
    user_positions: Vec<Vec<[f64; 2]>>,
    user_offset: Vec<usize>,
    gains: Vec<f64>,
    noise: Option<Vec<f64>>,
}

impl Scenario {
    /// Assembles a scenario from nested `gains[l][m][u][n]` and an optional
    /// `noise[m][u][n]` override. Only shapes are checked here; use
    /// [`Scenario::validate`] for the value invariants.
    pub fn from_parts(
        params: ScenarioParams,
        bs_positions: Vec<[f64; 2]>,
        user_positions: Vec<Vec<[f64; 2]>>,
        gains: Vec<Vec<Vec<Vec<f64>>>>,
        noise: Option<Vec<Vec<Vec<f64>>>>,
    ) -> Result<Self> {
        let m_cells = params.num_cells;
        let n_sub = params.num_subcarriers;
        expect_len("users_per_cell", params.users_per_cell.len(), m_cells)?;
        expect_len("bs_positions", bs_positions.len(), m_cells)?;
        expect_len("user_positions", user_positions.len(), m_cells)?;
        for (m, users) in user_positions.iter().enumerate() {
            expect_len(&format!("user_positions[{m}]"), users.len(), params.users_per_cell[m])?;
        }
        expect_len("gains", gains.len(), m_cells)?;
        let mut flat = Vec::with_capacity(m_cells * params.total_users() * n_sub);
        for (l, per_cell) in gains.iter().enumerate() {
            expect_len(&format!("gains[{l}]"), per_cell.len(), m_cells)?;
            for (m, per_user) in per_cell.iter().enumerate() {
                expect_len(&format!("gains[{l}][{m}]"), per_user.len(), params.users_per_cell[m])?;
                for (u, row) in per_user.iter().enumerate() {
                    expect_len(&format!("gains[{l}][{m}][{u}]"), row.len(), n_sub)?;
                    flat.extend_from_slice(row);
                }
            }
        }
        let noise = match noise {
            None => None,
            Some(noise) => {
                expect_len("noise", noise.len(), m_cells)?;
                let mut flat = Vec::with_capacity(params.total_users() * n_sub);
                for (m, per_user) in noise.iter().enumerate() {
                    expect_len(&format!("noise[{m}]"), per_user.len(), params.users_per_cell[m])?;
                    for (u, row) in per_user.iter().enumerate() {
                        expect_len(&format!("noise[{m}][{u}]"), row.len(), n_sub)?;
                        flat.extend_from_slice(row);
                    }
                }
                Some(flat)
            }
        };
        let user_offset = offsets(&params.users_per_cell);
        Ok(Self {
            params,
            bs_positions,
            user_positions,
            user_offset,
            gains: flat,
            noise,
        })
    }

    pub fn params(&self) -> &ScenarioParams {
        &self.params
    }

    pub fn num_cells(&self) -> usize {
        self.params.num_cells
    }

    pub fn num_subcarriers(&self) -> usize {
        self.params.num_subcarriers
    }

    pub fn users(&self, m: usize) -> usize {
        self.params.users_per_cell[m]
    }

    pub fn total_users(&self) -> usize {
        self.user_offset[self.num_cells()]
    }

    pub fn weight(&self, m: usize) -> f64 {
        self.params.weights[m]
    }

    pub fn p_max(&self, m: usize) -> f64 {
        self.params.p_max[m]
    }

    pub fn snr_gap(&self) -> f64 {
        self.params.snr_gap
    }

    pub fn bs_positions(&self) -> &[[f64; 2]] {
        &self.bs_positions
    }

    pub fn user_positions(&self) -> &[Vec<[f64; 2]>] {
        &self.user_positions
    }

    #[inline]
    fn gain_index(&self, l: usize, m: usize, u: usize, n: usize) -> usize {
        ((l * self.total_users() + self.user_offset[m] + u) * self.num_subcarriers()) + n
    }

    /// Power gain from BS `l` to user `u` of cell `m` on subcarrier `n`.
    #[inline]
    pub fn gain(&self, l: usize, m: usize, u: usize, n: usize) -> f64 {
        self.gains[self.gain_index(l, m, u, n)]
    }

    pub fn set_gain(&mut self, l: usize, m: usize, u: usize, n: usize, value: f64) {
        let i = self.gain_index(l, m, u, n);
        self.gains[i] = value;
    }

    #[inline]
    pub fn noise(&self, m: usize, u: usize, n: usize) -> f64 {
        match &self.noise {
            None => self.params.noise_power,
            Some(noise) => noise[(self.user_offset[m] + u) * self.num_subcarriers() + n],
        }
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        self.params.weights = weights;
    }

    /// Every broken invariant; empty iff the scenario is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.params.violations();
        if !out.is_empty() {
            return out;
        }
        let n_sub = self.num_subcarriers();
        for l in 0..self.num_cells() {
            for m in 0..self.num_cells() {
                for u in 0..self.users(m) {
                    for n in 0..n_sub {
                        let g = self.gain(l, m, u, n);
                        if !(g.is_finite() && g > 0.0) {
                            out.push(Violation::new(
                                "gains",
                                format!("gains[{l}][{m}][{u}][{n}] = {g} must be positive and finite"),
                            ));
                        }
                    }
                }
            }
        }
        if self.noise.is_some() {
            for m in 0..self.num_cells() {
                for u in 0..self.users(m) {
                    for n in 0..n_sub {
                        let s = self.noise(m, u, n);
                        if !(s.is_finite() && s > 0.0) {
                            out.push(Violation::new(
                                "noise",
                                format!("noise[{m}][{u}][{n}] = {s} must be positive and finite"),
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    fn nested_gains(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        let n_sub = self.num_subcarriers();
        (0..self.num_cells())
            .map(|l| {
                (0..self.num_cells())
                    .map(|m| {
                        (0..self.users(m))
                            .map(|u| {
                                let start = self.gain_index(l, m, u, 0);
                                self.gains[start..start + n_sub].to_vec()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn nested_noise(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        self.noise.as_ref().map(|_| {
            (0..self.num_cells())
                .map(|m| {
                    (0..self.users(m))
                        .map(|u| (0..self.num_subcarriers()).map(|n| self.noise(m, u, n)).collect())
                        .collect()
                })
                .collect()
        })
    }

    pub fn to_json(&self) -> String {
        let file = ScenarioFile {
            params: self.params.clone(),
            bs_positions: self.bs_positions.clone(),
            user_positions: self.user_positions.clone(),
            gains: self.nested_gains(),
            noise: self.nested_noise(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("scenario serializes");
        text.push('\n');
        text
    }

    /// Parses and fully validates a scenario document.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|source| Error::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        file.params.validate()?;
        let scenario = Self::from_parts(file.params, file.bs_positions, file.user_positions, file.gains, file.noise)?;
        let violations = scenario.validate();
        if violations.is_empty() {
            Ok(scenario)
        } else {
            Err(Error::InvalidScenario(violations.iter().map(ToString::to_string).collect()))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    params: ScenarioParams,
    bs_positions: Vec<[f64; 2]>,
    user_positions: Vec<Vec<[f64; 2]>>,
    gains: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<Vec<Vec<Vec<f64>>>>,
}

fn expect_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Dimension {
            what: what.to_string(),
            expected,
            found,
        })
    }
}

fn offsets(users_per_cell: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(users_per_cell.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &k in users_per_cell {
        acc += k;
        out.push(acc);
    }
    out
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    fs::write(path, scenario.to_json()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_json(&text, path)
}

/// Site positions on a hexagonal lattice with inter-site distance
/// `2 * radius`, nearest to the origin first. Three cells form a triangle.
pub fn hex_layout(num_cells: usize, radius: f64) -> Vec<[f64; 2]> {
    let isd = 2.0 * radius;
    let rings = (1..).find(|&r: &i64| 1 + 3 * r * (r + 1) >= num_cells as i64).unwrap_or(1);
    let mut sites: Vec<(i64, f64, [f64; 2])> = Vec::new();
    for a in -rings..=rings {
        for b in -rings..=rings {
            if (a + b).abs() > rings {
                continue;
            }
            let x = isd * (a as f64 + 0.5 * b as f64);
            let y = isd * (b as f64 * 3f64.sqrt() / 2.0);
            let hex_dist = a.abs().max(b.abs()).max((a + b).abs());
            let mut angle = y.atan2(x);
            if angle < 0.0 {
                angle += std::f64::consts::TAU;
            }
            sites.push((hex_dist, angle, [x, y]));
        }
    }
    sites.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.total_cmp(&q.1)));
    sites.into_iter().take(num_cells).map(|s| s.2).collect()
}

pub fn generate_scenario(params: &ScenarioParams) -> Result<Scenario> {
    generate_scenario_with(params, Fading::Rayleigh)
}

/// Seeded instance: users uniform over their cell disk (at least
/// [`MIN_USER_DISTANCE`] from the BS) and gains `d^-alpha * fade`.
pub fn generate_scenario_with(params: &ScenarioParams, fading: Fading) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let radius = params.cell_radius;
    let bs = hex_layout(params.num_cells, radius);

    let users: Vec<Vec<[f64; 2]>> = (0..params.num_cells)
        .map(|m| {
            (0..params.users_per_cell[m])
                .map(|_| {
                    let theta = std::f64::consts::TAU * rng.gen::<f64>();
                    let lo = MIN_USER_DISTANCE * MIN_USER_DISTANCE;
                    let r = (lo + rng.gen::<f64>() * (radius * radius - lo)).sqrt();
                    [bs[m][0] + r * theta.cos(), bs[m][1] + r * theta.sin()]
                })
                .collect()
        })
        .collect();

    let alpha = params.pathloss_exponent;
    let gains = (0..params.num_cells)
        .map(|l| {
            (0..params.num_cells)
                .map(|m| {
                    (0..params.users_per_cell[m])
                        .map(|u| {
                            let d = distance(bs[l], users[m][u]).max(MIN_USER_DISTANCE);
                            let pathloss = d.powf(-alpha);
                            (0..params.num_subcarriers)
                                .map(|_| match fading {
                                    Fading::Rayleigh => {
                                        let x: f64 = rng.sample(Open01);
                                        pathloss * -x.ln()
                                    }
                                    Fading::None => pathloss,
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    Scenario::from_parts(params.clone(), bs, users, gains, None)
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
