//! Synthetic channel generators: DSL binders and a two-cell OFDMA downlink.
//!
//! Wireline channels use a `sqrt(f) * L` insertion loss and the 1% worst
//! case far-end crosstalk model. Everything is deterministic; the cellular
//! generator draws its multipath from a seeded generator.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConstraintMode, ModelError, Scenario, ScenarioParts};
use crate::scalar::{dbm_hz_to_mw, dbm_to_mw};

pub const METERS_PER_FOOT: f64 = 0.3048;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("unknown scenario '{0}'")]
    UnknownName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downstream,
    Upstream,
}

/// One twisted pair, running from `offset_m` to `offset_m + length_m`
/// measured from the central office.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DslLine {
    pub length_m: f64,
    pub offset_m: f64,
}

impl DslLine {
    pub fn new(length_m: f64, offset_m: f64) -> Self {
        DslLine { length_m, offset_m }
    }

    fn end(&self) -> f64 {
        self.offset_m + self.length_m
    }

    fn transmitter(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Downstream => self.offset_m,
            Direction::Upstream => self.end(),
        }
    }

    fn receiver(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Downstream => self.end(),
            Direction::Upstream => self.offset_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DslTopology {
    pub lines: Vec<DslLine>,
    pub direction: Direction,
    /// Index of the first used tone; tone `k` sits at `(first_tone + k) * tone_spacing_hz`.
    pub first_tone: usize,
    pub num_tones: usize,
    pub tone_spacing_hz: f64,
    pub symbol_rate_hz: f64,
    pub weights: Vec<f64>,
    pub budgets_dbm: Vec<f64>,
    pub mask_dbm_hz: f64,
    pub noise_dbm_hz: f64,
    pub snr_gap_db: f64,
    /// Insertion loss in dB per km per sqrt(MHz).
    pub attenuation: f64,
    pub k_fext: f64,
    pub constraint_mode: ConstraintMode,
}

impl DslTopology {
    /// Topology with the usual ADSL constants and equal weights.
    pub fn adsl(lines: Vec<DslLine>, direction: Direction, first_tone: usize, num_tones: usize, budget_dbm: f64) -> Self {
        let n = lines.len();
        DslTopology {
            lines,
            direction,
            first_tone,
            num_tones,
            tone_spacing_hz: 4312.5,
            symbol_rate_hz: 4000.0,
            weights: vec![1.0 / n as f64; n],
            budgets_dbm: vec![budget_dbm; n],
            mask_dbm_hz: -30.0,
            noise_dbm_hz: -140.0,
            snr_gap_db: 12.9,
            attenuation: 14.0,
            k_fext: 8.536e-19,
            constraint_mode: ConstraintMode::Equality,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Topology(m));
        if self.lines.is_empty() {
            return bad("no lines".into());
        }
        if let Some((i, l)) = self
            .lines
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.length_m > 0.0 && l.length_m.is_finite() && l.offset_m >= 0.0 && l.offset_m.is_finite()))
        {
            return bad(format!("line {i} has length {} m and offset {} m", l.length_m, l.offset_m));
        }
        if self.num_tones < 2 {
            return bad(format!("need at least 2 tones, got {}", self.num_tones));
        }
        let n = self.lines.len();
        if self.weights.len() != n || self.budgets_dbm.len() != n {
            return bad("weights and budgets must have one entry per line".into());
        }
        if !(self.tone_spacing_hz > 0.0 && self.symbol_rate_hz > 0.0) {
            return bad("tone spacing and symbol rate must be positive".into());
        }
        Ok(())
    }

    pub fn frequency(&self, k: usize) -> f64 {
        (self.first_tone + k) as f64 * self.tone_spacing_hz
    }
}

/// Direct channel power gain of `length_m` of cable at `freq_hz`.
pub fn direct_gain(freq_hz: f64, length_m: f64, attenuation: f64) -> f64 {
    let loss_db = attenuation * (length_m / 1000.0) * (freq_hz / 1e6).sqrt();
    10f64.powf(-loss_db / 10.0)
}

/// Far-end crosstalk power gain for `coupling_m` of shared binder followed
/// by `path_m` of insertion loss.
pub fn fext_gain(freq_hz: f64, coupling_m: f64, path_m: f64, attenuation: f64, k_fext: f64) -> f64 {
    let coupling_ft = coupling_m / METERS_PER_FOOT;
    (k_fext * freq_hz * freq_hz * coupling_ft * direct_gain(freq_hz, path_m, attenuation)).min(1.0)
}

/// Length of the binder section two lines share.
pub fn overlap_m(a: &DslLine, b: &DslLine) -> f64 {
    (a.end().min(b.end()) - a.offset_m.max(b.offset_m)).max(0.0)
}

/// Normalized DSL scenario: `a = gap * g_x / g_d`, `z = gap * noise / g_d`.
///
/// The crosstalk path runs from the aggressor's transmitter to the victim's
/// receiver, so co-located transmitters see the victim's own line length.
pub fn gen_dsl(topo: &DslTopology) -> Result<Scenario<f64>, ScenarioError> {
    topo.validate()?;
    let (n_users, n_tones) = (topo.lines.len(), topo.num_tones);
    let dir = topo.direction;
    let gap = 10f64.powf(topo.snr_gap_db / 10.0);
    let noise = dbm_hz_to_mw(topo.noise_dbm_hz, topo.tone_spacing_hz);
    let mask = dbm_hz_to_mw(topo.mask_dbm_hz, topo.tone_spacing_hz);
    let mut gains = vec![0.0; n_tones * n_users * n_users];
    let mut z = vec![0.0; n_tones * n_users];
    for k in 0..n_tones {
        let f = topo.frequency(k);
        for (n, victim) in topo.lines.iter().enumerate() {
            let g_d = direct_gain(f, victim.length_m, topo.attenuation);
            z[k * n_users + n] = gap * noise / g_d;
            for (m, aggressor) in topo.lines.iter().enumerate() {
                if m == n {
                    continue;
                }
                let coupling = overlap_m(victim, aggressor);
                if coupling == 0.0 {
                    continue;
                }
                let path = (victim.receiver(dir) - aggressor.transmitter(dir)).abs();
                let g_x = fext_gain(f, coupling, path, topo.attenuation, topo.k_fext);
                gains[(k * n_users + n) * n_users + m] = gap * g_x / g_d;
            }
        }
    }
    Ok(Scenario::new(ScenarioParts {
        num_users: n_users,
        num_tones: n_tones,
        weights: topo.weights.clone(),
        gains,
        noise: z,
        masks: vec![mask; n_tones * n_users],
        budgets: topo.budgets_dbm.iter().map(|d| dbm_to_mw(*d)).collect(),
        tone_spacing: topo.tone_spacing_hz,
        symbol_rate: topo.symbol_rate_hz,
        constraint_mode: topo.constraint_mode,
    })?)
}

/// Two or more cells, one scheduled user per cell per subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTopology {
    pub bs_powers_dbm: Vec<f64>,
    /// `distances_m[n][m]`: distance from base station `m` to the user served by `n`.
    pub distances_m: Vec<Vec<f64>>,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub symbol_rate_hz: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_exponent_db: f64,
    pub noise_dbm_hz: f64,
    /// Tap delays of the multipath profile, in ns.
    pub tap_delays_ns: Vec<f64>,
    /// Power decay between consecutive taps, in dB.
    pub tap_decay_db: f64,
    pub weights: Vec<f64>,
    pub fading_seed: u64,
}

impl CellTopology {
    fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.bs_powers_dbm.len();
        let bad = |m: &str| Err(ScenarioError::Topology(m.to_string()));
        if n == 0 || self.distances_m.len() != n || self.distances_m.iter().any(|r| r.len() != n) {
            return bad("distances must be an N x N matrix matching the base stations");
        }
        if self.distances_m.iter().flatten().any(|d| !(*d > 0.0 && d.is_finite())) {
            return bad("distances must be positive");
        }
        if self.num_subcarriers < 2 {
            return bad("need at least 2 subcarriers");
        }
        if self.weights.len() != n {
            return bad("one weight per cell");
        }
        if self.tap_delays_ns.is_empty() {
            return bad("multipath profile needs at least one tap");
        }
        Ok(())
    }
}

/// `intercept + exponent * log10(d)` in dB.
pub fn pathloss_db(distance_m: f64, intercept_db: f64, exponent_db: f64) -> f64 {
    intercept_db + exponent_db * distance_m.log10()
}

/// `|H(f)|^2` per subcarrier for one link, unit average power.
fn multipath_gains(topo: &CellTopology, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let powers: Vec<f64> = (0..topo.tap_delays_ns.len())
        .map(|i| 10f64.powf(-topo.tap_decay_db * i as f64 / 10.0))
        .collect();
    let total: f64 = powers.iter().sum();
    let taps: Vec<(f64, f64, f64)> = topo
        .tap_delays_ns
        .iter()
        .zip(&powers)
        .map(|(&tau, &p)| ((p / total).sqrt(), rng.gen_range(0.0..2.0 * PI), tau * 1e-9))
        .collect();
    (0..topo.num_subcarriers)
        .map(|k| {
            let f = k as f64 * topo.subcarrier_spacing_hz;
            let (mut re, mut im) = (0.0, 0.0);
            for &(amp, phase, tau) in &taps {
                let theta = phase - 2.0 * PI * f * tau;
                re += amp * theta.cos();
                im += amp * theta.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Normalized downlink scenario. Links are drawn in row-major `(n, m)`
/// order from one generator seeded with `fading_seed`; no SNR gap.
pub fn gen_cell(topo: &CellTopology) -> Result<Scenario<f64>, ScenarioError> {
    topo.validate()?;
    let n_users = topo.bs_powers_dbm.len();
    let n_tones = topo.num_subcarriers;
    let mut rng = ChaCha8Rng::seed_from_u64(topo.fading_seed);
    let mut link = vec![vec![Vec::new(); n_users]; n_users];
    for n in 0..n_users {
        for m in 0..n_users {
            let pl = pathloss_db(topo.distances_m[n][m], topo.pathloss_intercept_db, topo.pathloss_exponent_db);
            let scale = 10f64.powf(-pl / 10.0);
            link[n][m] = multipath_gains(topo, &mut rng).into_iter().map(|g| g * scale).collect::<Vec<f64>>();
        }
    }
    let noise = dbm_hz_to_mw(topo.noise_dbm_hz, topo.subcarrier_spacing_hz);
    let budgets: Vec<f64> = topo.bs_powers_dbm.iter().map(|d| dbm_to_mw(*d)).collect();
    let mut gains = vec![0.0; n_tones * n_users * n_users];
    let mut z = vec![0.0; n_tones * n_users];
    let mut masks = vec![0.0; n_tones * n_users];
    for k in 0..n_tones {
        for n in 0..n_users {
            let direct = link[n][n][k];
            z[k * n_users + n] = noise / direct;
            masks[k * n_users + n] = budgets[n];
            for m in 0..n_users {
                if m != n {
                    gains[(k * n_users + n) * n_users + m] = link[n][m][k] / direct;
                }
            }
        }
    }
    Ok(Scenario::new(ScenarioParts {
        num_users: n_users,
        num_tones: n_tones,
        weights: topo.weights.clone(),
        gains,
        noise: z,
        masks,
        budgets,
        tone_spacing: topo.subcarrier_spacing_hz,
        symbol_rate: topo.symbol_rate_hz,
        constraint_mode: ConstraintMode::Equality,
    })?)
}

pub const NAMED_SCENARIOS: [&str; 4] = ["near-far-adsl", "adsl2plus-12user", "vdsl-6user-upstream", "lte-macro-femto"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    Dsl(DslTopology),
    Cell(CellTopology),
}

impl Topology {
    pub fn num_tones(&self) -> usize {
        match self {
            Topology::Dsl(t) => t.num_tones,
            Topology::Cell(t) => t.num_subcarriers,
        }
    }

    /// Same topology restricted to the first `num_tones` tones. DSL budgets
    /// shrink in proportion so the power per tone is unchanged.
    pub fn with_num_tones(mut self, num_tones: usize) -> Self {
        match &mut self {
            Topology::Dsl(t) => {
                if num_tones > 0 && t.num_tones > 0 {
                    let shift = 10.0 * (num_tones as f64 / t.num_tones as f64).log10();
                    t.budgets_dbm.iter_mut().for_each(|b| *b += shift);
                }
                t.num_tones = num_tones;
            }
            Topology::Cell(t) => t.num_subcarriers = num_tones,
        }
        self
    }

    pub fn generate(&self) -> Result<Scenario<f64>, ScenarioError> {
        match self {
            Topology::Dsl(t) => gen_dsl(t),
            Topology::Cell(t) => gen_cell(t),
        }
    }
}

pub fn named_topology(name: &str) -> Result<Topology, ScenarioError> {
    let topo = match name {
        "near-far-adsl" => {
            // far user on the CO, near user on a remote terminal 3.5 km out;
            // both customers sit at the same end of the binder
            let mut t = DslTopology::adsl(
                vec![DslLine::new(5000.0, 0.0), DslLine::new(1500.0, 3500.0)],
                Direction::Downstream,
                32,
                224,
                20.4,
            );
            t.weights = vec![0.9, 0.1];
            Topology::Dsl(t)
        }
        "adsl2plus-12user" => {
            let lengths = [5000.0, 4000.0, 3000.0, 2000.0, 2000.0, 1000.0, 4800.0, 3800.0, 2800.0, 2300.0, 1500.0, 1300.0];
            let offsets = [0.0, 0.0, 1000.0, 1000.0, 2000.0, 2000.0, 0.0, 0.0, 1200.0, 1200.0, 2400.0, 2400.0];
            let lines = lengths.iter().zip(offsets).map(|(&l, o)| DslLine::new(l, o)).collect();
            Topology::Dsl(DslTopology::adsl(lines, Direction::Downstream, 1, 512, 20.4))
        }
        "vdsl-6user-upstream" => {
            let lines = [1200.0, 1000.0, 800.0, 600.0, 450.0, 300.0].iter().map(|&l| DslLine::new(l, 0.0)).collect();
            let mut t = DslTopology::adsl(lines, Direction::Upstream, 1, 1024, 11.5);
            t.constraint_mode = ConstraintMode::Inequality;
            Topology::Dsl(t)
        }
        "lte-macro-femto" => Topology::Cell(CellTopology {
            bs_powers_dbm: vec![43.0, 15.0],
            // macro user 500 m from its base station, femto user 20 m from
            // its access point; the femto cell sits 400 m from the macro site
            distances_m: vec![vec![500.0, 100.0], vec![410.0, 20.0]],
            num_subcarriers: 300,
            subcarrier_spacing_hz: 15_000.0,
            symbol_rate_hz: 14_000.0,
            pathloss_intercept_db: 31.5,
            pathloss_exponent_db: 35.0,
            noise_dbm_hz: -174.0,
            tap_delays_ns: vec![0.0, 200.0, 800.0, 1200.0, 2300.0, 3700.0],
            tap_decay_db: 3.0,
            weights: vec![0.5, 0.5],
            fading_seed: 2024,
        }),
        other => return Err(ScenarioError::UnknownName(other.to_string())),
    };
    Ok(topo)
}

pub fn gen_named(name: &str) -> Result<Scenario<f64>, ScenarioError> {
    named_topology(name)?.generate()
}

/// Named scenario cut down to `num_tones` tones, for quick runs.
pub fn gen_named_reduced(name: &str, num_tones: usize) -> Result<Scenario<f64>, ScenarioError> {
    named_topology(name)?.with_num_tones(num_tones).generate()
}
