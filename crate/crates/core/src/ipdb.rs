//! Iterative power difference balancing.
//!
//! Primal coordinate ascent over the power difference variables of a
//! [`DovTransform`]. Each variable update solves a one-dimensional problem
//! exactly over a logarithmic grid that always contains the current point,
//! so every update keeps all constraints and never lowers the objective.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dov::{DiffVars, DovCoefficients, DovError, DovTransform, DovViolation};
use crate::model::{self, BitEvalCounter, ConstraintMode, FeasibilityReport, ModelError, Scenario, TransmitSpectra};
use crate::procedures::{self, EqualizeOutcome, InequalityParams};
use crate::scalar::Real;
use crate::trace::{OuterRecord, RunSummary, RunTrace, StopReason, UpdateKind, UpdateRecord};

/// Lowest level of the logarithmic grid, in dBm.
pub const GRID_ANCHOR_DBM: f64 = -140.0;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dov(#[from] DovError),
    #[error("transform violates its conditions: {0:?}")]
    InvalidTransform(Vec<DovViolation>),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("inconsistent bounds for user {user}, tone {tone}: [{t_min}, {t_max}]")]
    InconsistentBounds { user: usize, tone: usize, t_min: f64, t_max: f64 },
    #[error("empty search interval [{0}, {1}] excludes zero")]
    EmptyGrid(f64, f64),
    #[error("initial spectrum for user {0} cannot satisfy masks and budget")]
    Initialization(usize),
    #[error("inequality procedure requires a scenario in inequality mode")]
    InequalityInEqualityMode,
    #[error("mask repair did not converge for user {0}")]
    MaskRepair(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToneOrder {
    /// Ascending.
    To1,
    /// Descending.
    To2,
    /// Coin flip between ascending and descending on every pass.
    To3,
    /// Fresh random permutation on every pass.
    To4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPower {
    /// Equal power, `gamma = 1/K`.
    Ep,
    /// Random levels, uniform in dB relative to the mask.
    Rp,
    /// Whatever `gamma` the transform carries.
    Transform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Equalization {
    Off,
    EveryMOuter { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum InequalitySetting {
    Off,
    On(InequalityParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tone_order: ToneOrder,
    /// User visiting order; repeats allowed. `None` means `0..N`.
    pub user_order: Option<Vec<usize>>,
    pub init_power: InitPower,
    /// Grid granularity in dB.
    pub granularity_db: f64,
    pub inner_iters: usize,
    pub equalization: Equalization,
    pub inequality: InequalitySetting,
    pub max_outer: usize,
    /// Stop after this many variable updates.
    pub update_budget: Option<u64>,
    pub seed: u64,
    /// Relative objective change below which the run counts as converged.
    pub convergence_tol: f64,
    pub record_updates: bool,
    /// Fill `elapsed_ms`; off keeps traces byte-reproducible.
    pub record_timing: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tone_order: ToneOrder::To1,
            user_order: None,
            init_power: InitPower::Ep,
            granularity_db: 1.0,
            inner_iters: 1,
            equalization: Equalization::Off,
            inequality: InequalitySetting::Off,
            max_outer: 200,
            update_budget: None,
            seed: 0,
            convergence_tol: 1e-6,
            record_updates: true,
            record_timing: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, num_users: usize) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Config(m.to_string()));
        if !(self.granularity_db > 0.0) || !self.granularity_db.is_finite() {
            return bad("granularity must be positive");
        }
        if self.inner_iters == 0 {
            return bad("inner iterations must be positive");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive");
        }
        if self.update_budget == Some(0) {
            return bad("update budget must be positive");
        }
        if let Equalization::EveryMOuter { m: 0 } = self.equalization {
            return bad("equalization period must be at least 1");
        }
        if let InequalitySetting::On(p) = self.inequality {
            p.validate().map_err(SolverError::Config)?;
        }
        if let Some(order) = &self.user_order {
            if order.is_empty() || order.iter().any(|&n| n >= num_users) {
                return bad("user order must be nonempty and reference existing users");
            }
        }
        Ok(())
    }
}

/// Feasible interval of one power difference variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<T> {
    pub t_min: T,
    pub t_max: T,
}

/// Positive grid levels `10^((anchor + i*delta)/10)`, grown on demand.
#[derive(Debug, Clone)]
pub struct LogGrid<T> {
    delta_db: f64,
    levels: Vec<T>,
}

impl<T: Real> LogGrid<T> {
    pub fn new(delta_db: f64) -> Self {
        LogGrid { delta_db, levels: Vec::new() }
    }

    fn level(&self, i: usize) -> T {
        let db = GRID_ANCHOR_DBM + i as f64 * self.delta_db;
        T::lit(10f64.powf(db / 10.0))
    }

    fn ensure(&mut self, limit: T) {
        loop {
            let i = self.levels.len();
            if let Some(&last) = self.levels.last() {
                if last > limit {
                    return;
                }
            }
            let x = self.level(i);
            if !x.is_finite() {
                return;
            }
            self.levels.push(x);
        }
    }

    /// Ascending candidate set `({0} ∪ F ∪ -F) ∩ [t_min, t_max]`.
    pub fn candidates(&mut self, bounds: Bounds<T>, out: &mut Vec<T>) -> Result<(), SolverError> {
        let Bounds { t_min, t_max } = bounds;
        out.clear();
        if !(t_min <= T::zero() && T::zero() <= t_max) {
            return Err(SolverError::EmptyGrid(t_min.as_f64(), t_max.as_f64()));
        }
        let snap = T::lit(1e-12);
        let neg_lim = -t_min;
        self.ensure(neg_lim.max(t_max));
        let fit = |x: T, lim: T| -> Option<T> {
            if x <= lim {
                Some(x)
            } else if x <= lim * (T::one() + snap) {
                Some(lim)
            } else {
                None
            }
        };
        for &x in self.levels.iter().rev() {
            if let Some(v) = fit(x, neg_lim) {
                if out.last() != Some(&-v) {
                    out.push(-v);
                }
            }
        }
        out.push(T::zero());
        for &x in &self.levels {
            match fit(x, t_max) {
                Some(v) => {
                    if out.last() != Some(&v) {
                        out.push(v);
                    }
                }
                None => break,
            }
        }
        Ok(())
    }
}

/// Ascending logarithmic candidate set for `bounds` at granularity `delta_db`.
pub fn build_grid<T: Real>(bounds: Bounds<T>, delta_db: f64) -> Result<Vec<T>, SolverError> {
    if !(delta_db > 0.0) {
        return Err(SolverError::Config("granularity must be positive".into()));
    }
    let mut grid = LogGrid::new(delta_db);
    let mut out = Vec::new();
    grid.candidates(bounds, &mut out)?;
    Ok(out)
}

/// Mutable state of one run: spectra, variables, offsets and caches.
///
/// `base[k][n] = P_tot^n * gamma_k^n` is kept directly so that recentering
/// reproduces the spectra bit for bit.
#[derive(Debug, Clone)]
pub struct SolverState<'a, T: Real> {
    scenario: &'a Scenario<T>,
    coeffs: Vec<DovCoefficients<T>>,
    base: Vec<T>,
    t: DiffVars<T>,
    spectra: TransmitSpectra<T>,
    tracked_totals: Vec<T>,
    tone_values: Vec<T>,
    counter: BitEvalCounter,
    column: Vec<T>,
    cand_vals: Vec<T>,
    best_vals: Vec<T>,
}

impl<'a, T: Real> SolverState<'a, T> {
    /// Starts at `spectra` with all difference variables zero.
    pub fn from_spectra(
        scenario: &'a Scenario<T>,
        transform: &DovTransform<T>,
        spectra: TransmitSpectra<T>,
    ) -> Result<Self, SolverError> {
        let (n_users, n_tones) = (scenario.num_users(), scenario.num_tones());
        if transform.num_users() != n_users || transform.num_tones() != n_tones {
            return Err(SolverError::Dov(DovError::Dimension(format!(
                "transform is {}x{}, scenario is {}x{}",
                transform.num_users(),
                transform.num_tones(),
                n_users,
                n_tones
            ))));
        }
        if spectra.num_users() != n_users || spectra.num_tones() != n_tones {
            return Err(ModelError::Dimension("initial spectra do not match scenario".into()).into());
        }
        let mut counter = BitEvalCounter::new();
        let tone_values = model::tone_values(scenario, &spectra, &mut counter)?;
        let mut base = vec![T::zero(); n_users * n_tones];
        for k in 0..n_tones {
            for n in 0..n_users {
                base[k * n_users + n] = spectra.get(k, n);
            }
        }
        Ok(SolverState {
            scenario,
            coeffs: (0..n_users).map(|n| transform.coefficients(n).clone()).collect(),
            base,
            t: DiffVars::zeros(n_users, n_tones),
            tracked_totals: spectra.user_totals(),
            spectra,
            tone_values,
            counter,
            column: vec![T::zero(); n_users],
            cand_vals: Vec::new(),
            best_vals: Vec::new(),
        })
    }

    /// Starts at the transform's own offsets, `s = P_tot * gamma`.
    pub fn from_transform(scenario: &'a Scenario<T>, transform: &DovTransform<T>) -> Result<Self, SolverError> {
        let mut s = TransmitSpectra::zeros(scenario.num_users(), scenario.num_tones());
        for k in 0..scenario.num_tones() {
            for n in 0..scenario.num_users() {
                s.set(k, n, scenario.budget(n) * transform.gamma(k, n));
            }
        }
        Self::from_spectra(scenario, transform, s)
    }

    pub fn scenario(&self) -> &'a Scenario<T> {
        self.scenario
    }

    pub fn spectra(&self) -> &TransmitSpectra<T> {
        &self.spectra
    }

    pub fn into_spectra(self) -> TransmitSpectra<T> {
        self.spectra
    }

    pub fn diff_vars(&self) -> &DiffVars<T> {
        &self.t
    }

    /// Current offset `gamma_k^n`.
    pub fn gamma(&self, k: usize, n: usize) -> T {
        self.base[k * self.scenario.num_users() + n] / self.scenario.budget(n)
    }

    /// Transform built from the current offsets.
    pub fn transform(&self) -> DovTransform<T> {
        let (nu, nt) = (self.scenario.num_users(), self.scenario.num_tones());
        let gamma = (0..nt * nu).map(|i| self.base[i] / self.scenario.budget(i % nu)).collect();
        DovTransform::new(self.coeffs.clone(), gamma).expect("state dimensions are consistent")
    }

    /// `P-hat`: the total each user's spectrum is currently held at.
    pub fn tracked_totals(&self) -> &[T] {
        &self.tracked_totals
    }

    pub fn objective(&self) -> T {
        self.tone_values.iter().copied().sum()
    }

    pub fn bit_evals(&self) -> u64 {
        self.counter.count()
    }

    /// Spectrum row of user `n` reconstructed from `t` and the offsets.
    pub fn reconstruct_user(&self, n: usize) -> Vec<T> {
        let nu = self.scenario.num_users();
        (0..self.scenario.num_tones())
            .map(|k| {
                let mut s = self.base[k * nu + n];
                for &(j, b) in self.coeffs[n].row(k) {
                    s += b * self.t.get(j, n);
                }
                s
            })
            .collect()
    }

    /// Bounds on `t_k^n` keeping every tone it touches inside `[0, mask]`.
    pub fn compute_bounds(&self, n: usize, k: usize) -> Result<Bounds<T>, SolverError> {
        let t_k = self.t.get(k, n);
        let mut lo = T::neg_infinity();
        let mut hi = T::infinity();
        for &(q, b) in self.coeffs[n].col(k) {
            let rest = self.spectra.get(q, n) - b * t_k;
            let mask = self.scenario.mask(q, n);
            if b > T::zero() {
                lo = lo.max(-rest / b);
                hi = hi.min((mask - rest) / b);
            } else {
                lo = lo.max((mask - rest) / b);
                hi = hi.min(-rest / b);
            }
        }
        if !(lo <= hi) {
            return Err(SolverError::InconsistentBounds { user: n, tone: k, t_min: lo.as_f64(), t_max: hi.as_f64() });
        }
        Ok(Bounds { t_min: lo, t_max: hi })
    }

    /// Affected-tone objective at `t_k^n = value`; per-tone values land in
    /// `cand_vals` in `col(k)` order.
    fn evaluate(&mut self, n: usize, k: usize, value: T) -> T {
        let t_k = self.t.get(k, n);
        let scenario = self.scenario;
        self.cand_vals.clear();
        let mut total = T::zero();
        for &(q, b) in self.coeffs[n].col(k) {
            let rest = self.spectra.get(q, n) - b * t_k;
            let s = clamp_power(rest + b * value, scenario.mask(q, n));
            self.column.copy_from_slice(self.spectra.tone(q));
            self.column[n] = s;
            let v = model::tone_value(scenario, &self.column, q, &mut self.counter);
            self.cand_vals.push(v);
            total += v;
        }
        total
    }

    /// Exhaustive search over `grid`; returns the best value and its objective.
    /// Zero is evaluated first; ties go to the smaller magnitude.
    pub fn line_search(&mut self, n: usize, k: usize, grid: &[T]) -> (T, T) {
        let mut best_t = T::zero();
        let mut best_f = self.evaluate(n, k, T::zero());
        std::mem::swap(&mut self.best_vals, &mut self.cand_vals);
        for &x in grid {
            if x == T::zero() {
                continue;
            }
            let f = self.evaluate(n, k, x);
            if f > best_f || (f == best_f && x.abs() < best_t.abs()) {
                best_f = f;
                best_t = x;
                std::mem::swap(&mut self.best_vals, &mut self.cand_vals);
            }
        }
        (best_t, best_f)
    }

    /// Sets `t_k^n = value` and updates every tone it touches.
    pub fn set_variable(&mut self, n: usize, k: usize, value: T) {
        if value == self.t.get(k, n) {
            return;
        }
        self.evaluate(n, k, value);
        std::mem::swap(&mut self.best_vals, &mut self.cand_vals);
        self.commit(n, k, value);
    }

    /// Writes `t_k^n = value` using the per-tone values held in `best_vals`.
    fn commit(&mut self, n: usize, k: usize, value: T) {
        let t_k = self.t.get(k, n);
        let scenario = self.scenario;
        for (slot, &(q, b)) in self.coeffs[n].col(k).iter().enumerate() {
            let rest = self.spectra.get(q, n) - b * t_k;
            self.spectra.set(q, n, clamp_power(rest + b * value, scenario.mask(q, n)));
            self.tone_values[q] = self.best_vals[slot];
        }
        self.t.set(k, n, value);
    }

    /// Line search plus update of one variable; returns the chosen value.
    pub fn update_variable(&mut self, n: usize, k: usize, grid: &mut LogGrid<T>, buf: &mut Vec<T>) -> Result<T, SolverError> {
        let bounds = self.compute_bounds(n, k)?;
        grid.candidates(bounds, buf)?;
        let (best, _) = self.line_search(n, k, buf);
        if best != self.t.get(k, n) {
            self.commit(n, k, best);
        }
        Ok(best)
    }

    /// Zeroes user `n`'s variables and absorbs the spectrum into the offsets.
    pub fn recenter(&mut self, n: usize) {
        let nu = self.scenario.num_users();
        for k in 0..self.scenario.num_tones() {
            self.base[k * nu + n] = self.spectra.get(k, n);
        }
        self.t.reset_user(n);
        self.tracked_totals[n] = self.spectra.user_total(n);
    }

    /// Replaces user `n`'s whole spectrum (used by the inequality and
    /// equalization passes) and refreshes the rate cache where it changed.
    pub(crate) fn replace_user_row(&mut self, n: usize, row: &[T]) {
        let scenario = self.scenario;
        for (k, &v) in row.iter().enumerate() {
            if self.spectra.get(k, n) != v {
                self.spectra.set(k, n, v);
                self.tone_values[k] = model::tone_value(scenario, self.spectra.tone(k), k, &mut self.counter);
            }
        }
    }

    /// Sets a single power and refreshes that tone's cached rate from `value_cache`.
    pub(crate) fn set_power_with_value(&mut self, k: usize, n: usize, power: T, tone_value: T) {
        self.spectra.set(k, n, power);
        self.tone_values[k] = tone_value;
    }

    pub(crate) fn tone_value_cached(&self, k: usize) -> T {
        self.tone_values[k]
    }

    /// Weighted rate of tone `k` with user `n`'s power replaced by `power`. Counts evaluations.
    pub(crate) fn tone_value_with(&mut self, k: usize, n: usize, power: T) -> T {
        self.column.copy_from_slice(self.spectra.tone(k));
        self.column[n] = power;
        model::tone_value(self.scenario, &self.column, k, &mut self.counter)
    }

    pub fn check_feasible(&self) -> Result<FeasibilityReport, SolverError> {
        Ok(model::check_feasible(self.scenario, &self.spectra)?)
    }
}

#[inline]
fn clamp_power<T: Real>(s: T, mask: T) -> T {
    s.max(T::zero()).min(mask)
}

/// Random initial spectrum: levels uniform in dB over `[-60, 0]` relative to
/// the mask, scaled to the budget, then mask overshoots clipped and the
/// excess spread over the remaining tones.
pub fn random_initial_row<T: Real, R: Rng>(scenario: &Scenario<T>, n: usize, rng: &mut R) -> Result<Vec<T>, SolverError> {
    let k_len = scenario.num_tones();
    let budget = scenario.budget(n);
    let mut row: Vec<T> = (0..k_len)
        .map(|k| {
            let db: f64 = rng.gen_range(-60.0..=0.0);
            scenario.mask(k, n) * T::lit(10f64.powf(db / 10.0))
        })
        .collect();
    let sum: T = row.iter().copied().sum();
    let scale = budget / sum;
    for v in row.iter_mut() {
        *v *= scale;
    }
    let masks: Vec<T> = (0..k_len).map(|k| scenario.mask(k, n)).collect();
    if procedures::redistribute_to_masks(&mut row, &masks, budget, 32) {
        Ok(row)
    } else {
        Err(SolverError::Initialization(n))
    }
}

/// Initial spectra for a configuration.
pub fn initial_spectra<T: Real, R: Rng>(
    scenario: &Scenario<T>,
    transform: &DovTransform<T>,
    init: InitPower,
    rng: &mut R,
) -> Result<TransmitSpectra<T>, SolverError> {
    let (nu, nt) = (scenario.num_users(), scenario.num_tones());
    let mut s = TransmitSpectra::zeros(nu, nt);
    match init {
        InitPower::Ep => {
            let k = T::from_usize(nt).unwrap();
            for n in 0..nu {
                let share = scenario.budget(n) / k;
                for tone in 0..nt {
                    if share > scenario.mask(tone, n) {
                        return Err(SolverError::Initialization(n));
                    }
                    s.set(tone, n, share);
                }
            }
        }
        InitPower::Rp => {
            for n in 0..nu {
                let row = random_initial_row(scenario, n, rng)?;
                s.set_user_row(n, &row);
            }
        }
        InitPower::Transform => {
            let totals = scenario.budgets().to_vec();
            transform
                .validate_against_totals(scenario, &totals)
                .map_err(SolverError::InvalidTransform)?;
            for tone in 0..nt {
                for n in 0..nu {
                    s.set(tone, n, scenario.budget(n) * transform.gamma(tone, n));
                }
            }
        }
    }
    Ok(s)
}

fn tone_sequence<R: Rng>(order: ToneOrder, k_len: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    out.extend(0..k_len);
    match order {
        ToneOrder::To1 => {}
        ToneOrder::To2 => out.reverse(),
        ToneOrder::To3 => {
            if rng.gen_bool(0.5) {
                out.reverse();
            }
        }
        ToneOrder::To4 => out.shuffle(rng),
    }
}

struct Recorder {
    record_updates: bool,
    start: Option<Instant>,
    updates: Vec<UpdateRecord>,
    outers: Vec<OuterRecord>,
    /// Budgeted updates (line search and inequality steps).
    count: u64,
    seq: u64,
}

impl Recorder {
    fn elapsed_ms(&self) -> f64 {
        self.start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
    }

    fn update<T: Real>(&mut self, state: &SolverState<T>, outer: usize, kind: UpdateKind, user: usize, tone: Option<usize>) {
        if kind != UpdateKind::Equalization {
            self.count += 1;
        }
        self.seq += 1;
        if self.record_updates {
            self.updates.push(UpdateRecord {
                index: self.seq,
                outer,
                kind,
                user,
                tone,
                objective: state.objective().as_f64(),
                user_totals: state.spectra().user_totals().iter().map(|x| x.as_f64()).collect(),
            });
        }
    }

    fn outer<T: Real>(&mut self, state: &SolverState<T>, iteration: usize) {
        let rec = OuterRecord {
            iteration,
            objective: state.objective().as_f64(),
            user_totals: state.spectra().user_totals().iter().map(|x| x.as_f64()).collect(),
            bit_evals: state.bit_evals(),
            updates: self.count,
            elapsed_ms: self.elapsed_ms(),
        };
        self.outers.push(rec);
    }
}

/// Runs the full algorithm: outer loop, user loop, inner iterations, tone
/// loop with exact grid line search, recentering, then the optional
/// inequality and equalization passes.
pub fn run<T: Real>(
    scenario: &Scenario<T>,
    transform: &DovTransform<T>,
    config: &SolverConfig,
) -> Result<(TransmitSpectra<T>, RunTrace), SolverError> {
    let (nu, nt) = (scenario.num_users(), scenario.num_tones());
    config.validate(nu)?;
    if transform.num_users() != nu || transform.num_tones() != nt {
        return Err(DovError::Dimension("transform does not match scenario".into()).into());
    }
    // structural conditions only; offsets come from the init policy
    if let Err(v) = transform.validate(scenario) {
        let structural: Vec<DovViolation> = v
            .into_iter()
            .filter(|e| matches!(e, DovViolation::ColumnSum { .. } | DovViolation::Diagonal { .. }))
            .collect();
        if !structural.is_empty() {
            return Err(SolverError::InvalidTransform(structural));
        }
    }
    let inequality = match config.inequality {
        InequalitySetting::On(p) => {
            if scenario.constraint_mode() != ConstraintMode::Inequality {
                return Err(SolverError::InequalityInEqualityMode);
            }
            Some(p)
        }
        InequalitySetting::Off => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = initial_spectra(scenario, transform, config.init_power, &mut rng)?;
    let mut state = SolverState::from_spectra(scenario, transform, init)?;
    let user_order: Vec<usize> = config.user_order.clone().unwrap_or_else(|| (0..nu).collect());
    let mut grid = LogGrid::new(config.granularity_db);
    let mut buf = Vec::new();
    let mut tones = Vec::with_capacity(nt);
    let mut rec = Recorder {
        record_updates: config.record_updates,
        start: config.record_timing.then(Instant::now),
        updates: Vec::new(),
        outers: Vec::new(),
        count: 0,
        seq: 0,
    };
    let mut drops = Vec::new();
    let mut notes = Vec::new();
    rec.outer(&state, 0);

    let budget = config.update_budget.unwrap_or(u64::MAX);
    let eq_period = match config.equalization {
        Equalization::EveryMOuter { m } => Some(m),
        Equalization::Off => None,
    };
    let mut stop = StopReason::MaxOuter;
    let mut outer = 0;
    'outer: while outer < config.max_outer {
        outer += 1;
        for &n in &user_order {
            for _ in 0..config.inner_iters {
                tone_sequence(config.tone_order, nt, &mut rng, &mut tones);
                for &k in &tones {
                    if rec.count >= budget {
                        stop = StopReason::UpdateBudget;
                        break 'outer;
                    }
                    state.update_variable(n, k, &mut grid, &mut buf)?;
                    rec.update(&state, outer, UpdateKind::LineSearch, n, Some(k));
                }
                state.recenter(n);
            }
        }
        if let Some(params) = inequality {
            for &n in &user_order {
                tone_sequence(config.tone_order, nt, &mut rng, &mut tones);
                for &k in &tones {
                    if rec.count >= budget {
                        state.recenter(n);
                        stop = StopReason::UpdateBudget;
                        break 'outer;
                    }
                    procedures::inequality_step(&mut state, n, k, params);
                    rec.update(&state, outer, UpdateKind::Inequality, n, Some(k));
                }
                state.recenter(n);
            }
        }
        if let Some(m) = eq_period {
            if outer % m == 0 {
                for &n in &user_order {
                    let before = state.objective();
                    let outcome: EqualizeOutcome = procedures::equalize_pass(&mut state, n)?;
                    if outcome.shortfall > 0.0 {
                        notes.push(format!(
                            "outer {outer}: equalization of user {n} left {:.3e} mW unassigned after mask clipping",
                            outcome.shortfall
                        ));
                    }
                    let after = state.objective();
                    if after < before {
                        drops.push((outer, (before - after).as_f64()));
                    }
                    rec.update(&state, outer, UpdateKind::Equalization, n, None);
                }
            }
        }
        rec.outer(&state, outer);
        if converged(&rec.outers, eq_period, config.convergence_tol) {
            stop = StopReason::Converged;
            break;
        }
    }
    if stop == StopReason::UpdateBudget {
        rec.outer(&state, outer);
    }

    let summary = RunSummary {
        algorithm: "ipdb".into(),
        stop_reason: stop,
        outer_iterations: outer,
        updates: rec.count,
        bit_evals: state.bit_evals(),
        objective: state.objective().as_f64(),
        user_totals: state.spectra().user_totals().iter().map(|x| x.as_f64()).collect(),
        equalization_drops: drops,
        notes,
        final_spectra_mw: state
            .spectra()
            .tone_rows()
            .into_iter()
            .map(|r| r.into_iter().map(Real::as_f64).collect())
            .collect(),
    };
    let trace = RunTrace { updates: rec.updates, outers: rec.outers, summary };
    Ok((state.into_spectra(), trace))
}

/// Relative objective change over one outer iteration (or over one
/// equalization period when equalization is on, checked right after it ran).
fn converged(outers: &[OuterRecord], eq_period: Option<usize>, tol: f64) -> bool {
    let span = eq_period.unwrap_or(1);
    let Some(last) = outers.last() else { return false };
    if last.iteration % span != 0 || outers.len() <= span {
        return false;
    }
    let prev = &outers[outers.len() - 1 - span];
    let scale = last.objective.abs().max(f64::MIN_POSITIVE);
    ((last.objective - prev.objective) / scale).abs() < tol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnytimeProbe {
    pub budget: u64,
    pub updates: u64,
    pub objective: f64,
    pub report: FeasibilityReport,
}

/// Runs once per update budget and checks the stopped iterate.
pub fn stop_anytime_probe<T: Real>(
    scenario: &Scenario<T>,
    transform: &DovTransform<T>,
    config: &SolverConfig,
    budgets: &[u64],
) -> Result<Vec<AnytimeProbe>, SolverError> {
    if budgets.is_empty() {
        return Err(SolverError::Config("at least one update budget is required".into()));
    }
    budgets
        .iter()
        .map(|&b| {
            let cfg = SolverConfig { update_budget: Some(b), record_updates: false, ..config.clone() };
            let (spectra, trace) = run(scenario, transform, &cfg)?;
            Ok(AnytimeProbe {
                budget: b,
                updates: trace.summary.updates,
                objective: trace.summary.objective,
                report: model::check_feasible(scenario, &spectra)?,
            })
        })
        .collect()
}
