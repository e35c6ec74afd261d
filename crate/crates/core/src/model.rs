//! Problem instances, achievable-rate arithmetic and feasibility checks.
//!
//! Powers are linear mW per tone everywhere inside the crate. The SNR gap is
//! already folded into the normalized gains `a` and noise `z`, so the rate of
//! user `n` on tone `k` is `log2(1 + s_k^n / (sum_{m != n} a_k^{n,m} s_k^m + z_k^n))`.
//! dBm and dBm/Hz only appear in [`ScenarioDocument`], the JSON exchange format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{self, Real};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("negative power {value} for user {user} on tone {tone}")]
    NegativePower { user: usize, tone: usize, value: f64 },
    #[error("scenario JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// Every user spends exactly its budget.
    Equality,
    /// Users may spend less than their budget.
    Inequality,
}

/// Raw ingredients of a [`Scenario`]; all per-tone arrays are tone-major
/// (`index = k * N + n`, gains `index = (k * N + n) * N + m`).
#[derive(Debug, Clone)]
pub struct ScenarioParts<T> {
    pub num_users: usize,
    pub num_tones: usize,
    pub weights: Vec<T>,
    pub gains: Vec<T>,
    pub noise: Vec<T>,
    pub masks: Vec<T>,
    pub budgets: Vec<T>,
    pub tone_spacing: T,
    pub symbol_rate: T,
    pub constraint_mode: ConstraintMode,
}

/// Immutable problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T = f64> {
    num_users: usize,
    num_tones: usize,
    weights: Vec<T>,
    gains: Vec<T>,
    noise: Vec<T>,
    masks: Vec<T>,
    budgets: Vec<T>,
    tone_spacing: T,
    symbol_rate: T,
    constraint_mode: ConstraintMode,
}

impl<T: Real> Scenario<T> {
    pub fn new(parts: ScenarioParts<T>) -> Result<Self, ModelError> {
        let ScenarioParts {
            num_users: n,
            num_tones: k,
            mut gains,
            ..
        } = parts;
        if n == 0 || k == 0 {
            return Err(ModelError::Invalid("need at least one user and one tone".into()));
        }
        let check_len = |name: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(ModelError::Dimension(format!("{name}: expected {want} entries, got {len}")))
            }
        };
        check_len("weights", parts.weights.len(), n)?;
        check_len("budgets", parts.budgets.len(), n)?;
        check_len("gains", gains.len(), k * n * n)?;
        check_len("noise", parts.noise.len(), k * n)?;
        check_len("masks", parts.masks.len(), k * n)?;

        if parts.weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(ModelError::Invalid("weights must be finite and nonnegative".into()));
        }
        if !(parts.weights.iter().copied().sum::<T>() > T::zero()) {
            return Err(ModelError::Invalid("weights must not all be zero".into()));
        }
        for tone in 0..k {
            for user in 0..n {
                // the diagonal is unused; keep it zero so equality is well defined
                gains[(tone * n + user) * n + user] = T::zero();
            }
        }
        if gains.iter().any(|a| !(*a >= T::zero()) || !a.is_finite()) {
            return Err(ModelError::Invalid("crosstalk gains must be finite and nonnegative".into()));
        }
        if parts.noise.iter().any(|z| !(*z > T::zero()) || !z.is_finite()) {
            return Err(ModelError::Invalid("noise must be finite and positive".into()));
        }
        if parts.masks.iter().any(|m| !(*m > T::zero()) || !m.is_finite()) {
            return Err(ModelError::Invalid("masks must be finite and positive".into()));
        }
        if parts.budgets.iter().any(|p| !(*p > T::zero()) || !p.is_finite()) {
            return Err(ModelError::Invalid("budgets must be finite and positive".into()));
        }
        if parts.constraint_mode == ConstraintMode::Equality {
            for user in 0..n {
                let mask_total: T = (0..k).map(|tone| parts.masks[tone * n + user]).sum();
                if parts.budgets[user] > mask_total {
                    return Err(ModelError::Invalid(format!(
                        "user {user}: budget {} exceeds total mask power {}",
                        parts.budgets[user], mask_total
                    )));
                }
            }
        }
        Ok(Scenario {
            num_users: n,
            num_tones: k,
            weights: parts.weights,
            gains,
            noise: parts.noise,
            masks: parts.masks,
            budgets: parts.budgets,
            tone_spacing: parts.tone_spacing,
            symbol_rate: parts.symbol_rate,
            constraint_mode: parts.constraint_mode,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_tones(&self) -> usize {
        self.num_tones
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, n: usize) -> T {
        self.weights[n]
    }

    /// Normalized crosstalk gain from user `m` into user `n` on tone `k`.
    #[inline]
    pub fn gain(&self, k: usize, n: usize, m: usize) -> T {
        self.gains[(k * self.num_users + n) * self.num_users + m]
    }

    #[inline]
    pub fn noise(&self, k: usize, n: usize) -> T {
        self.noise[k * self.num_users + n]
    }

    #[inline]
    pub fn mask(&self, k: usize, n: usize) -> T {
        self.masks[k * self.num_users + n]
    }

    pub fn budget(&self, n: usize) -> T {
        self.budgets[n]
    }

    pub fn budgets(&self) -> &[T] {
        &self.budgets
    }

    pub fn tone_spacing(&self) -> T {
        self.tone_spacing
    }

    pub fn symbol_rate(&self) -> T {
        self.symbol_rate
    }

    pub fn constraint_mode(&self) -> ConstraintMode {
        self.constraint_mode
    }

    /// Same instance with the other power-constraint semantics.
    pub fn with_constraint_mode(&self, mode: ConstraintMode) -> Result<Self, ModelError> {
        let mut parts = self.to_parts();
        parts.constraint_mode = mode;
        Scenario::new(parts)
    }

    pub fn to_parts(&self) -> ScenarioParts<T> {
        ScenarioParts {
            num_users: self.num_users,
            num_tones: self.num_tones,
            weights: self.weights.clone(),
            gains: self.gains.clone(),
            noise: self.noise.clone(),
            masks: self.masks.clone(),
            budgets: self.budgets.clone(),
            tone_spacing: self.tone_spacing,
            symbol_rate: self.symbol_rate,
            constraint_mode: self.constraint_mode,
        }
    }

    /// Converts every quantity to another scalar type.
    pub fn cast<U: Real>(&self) -> Result<Scenario<U>, ModelError> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Scenario::new(ScenarioParts {
            num_users: self.num_users,
            num_tones: self.num_tones,
            weights: conv(&self.weights),
            gains: conv(&self.gains),
            noise: conv(&self.noise),
            masks: conv(&self.masks),
            budgets: conv(&self.budgets),
            tone_spacing: U::lit(self.tone_spacing.as_f64()),
            symbol_rate: U::lit(self.symbol_rate.as_f64()),
            constraint_mode: self.constraint_mode,
        })
    }
}

/// The N×K matrix of transmit powers, stored tone-major so a tone column
/// `s_k = [s_k^1 .. s_k^N]` is contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitSpectra<T = f64> {
    num_users: usize,
    num_tones: usize,
    data: Vec<T>,
}

impl<T: Real> TransmitSpectra<T> {
    pub fn zeros(num_users: usize, num_tones: usize) -> Self {
        TransmitSpectra {
            num_users,
            num_tones,
            data: vec![T::zero(); num_users * num_tones],
        }
    }

    /// Builds from rows indexed `[tone][user]`.
    pub fn from_tone_rows(rows: &[Vec<T>]) -> Result<Self, ModelError> {
        let num_tones = rows.len();
        let num_users = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != num_users) {
            return Err(ModelError::Dimension("ragged spectra rows".into()));
        }
        Ok(TransmitSpectra {
            num_users,
            num_tones,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Equal split of each user's budget over all tones.
    pub fn uniform(scenario: &Scenario<T>) -> Self {
        let (n_users, n_tones) = (scenario.num_users(), scenario.num_tones());
        let mut s = Self::zeros(n_users, n_tones);
        let k = T::from_usize(n_tones).unwrap();
        for tone in 0..n_tones {
            for user in 0..n_users {
                s.set(tone, user, scenario.budget(user) / k);
            }
        }
        s
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_tones(&self) -> usize {
        self.num_tones
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize) -> T {
        self.data[k * self.num_users + n]
    }

    #[inline]
    pub fn set(&mut self, k: usize, n: usize, value: T) {
        self.data[k * self.num_users + n] = value;
    }

    /// All users' powers on tone `k`.
    #[inline]
    pub fn tone(&self, k: usize) -> &[T] {
        &self.data[k * self.num_users..(k + 1) * self.num_users]
    }

    pub fn user_row(&self, n: usize) -> Vec<T> {
        (0..self.num_tones).map(|k| self.get(k, n)).collect()
    }

    pub fn set_user_row(&mut self, n: usize, row: &[T]) {
        for (k, v) in row.iter().enumerate() {
            self.set(k, n, *v);
        }
    }

    pub fn user_total(&self, n: usize) -> T {
        (0..self.num_tones).map(|k| self.get(k, n)).sum()
    }

    pub fn user_totals(&self) -> Vec<T> {
        (0..self.num_users).map(|n| self.user_total(n)).collect()
    }

    pub fn tone_rows(&self) -> Vec<Vec<T>> {
        (0..self.num_tones).map(|k| self.tone(k).to_vec()).collect()
    }

    fn check_dims(&self, scenario: &Scenario<T>) -> Result<(), ModelError> {
        if self.num_users != scenario.num_users() || self.num_tones != scenario.num_tones() {
            return Err(ModelError::Dimension(format!(
                "spectra is {}x{}, scenario is {}x{}",
                self.num_users,
                self.num_tones,
                scenario.num_users(),
                scenario.num_tones()
            )));
        }
        Ok(())
    }
}

/// Per-run count of achievable-rate evaluations, the complexity measure
/// used when comparing algorithms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BitEvalCounter(u64);

impl BitEvalCounter {
    pub fn new() -> Self {
        Self(0)
    }

    pub fn count(&self) -> u64 {
        self.0
    }

    #[inline]
    pub(crate) fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

/// Rate without input validation. Counts one evaluation.
#[inline]
pub(crate) fn bit_rate_raw<T: Real>(
    scenario: &Scenario<T>,
    s_k: &[T],
    n: usize,
    k: usize,
    counter: &mut BitEvalCounter,
) -> T {
    counter.add(1);
    let mut interference = scenario.noise(k, n);
    for (m, &p) in s_k.iter().enumerate() {
        if m != n {
            interference += scenario.gain(k, n, m) * p;
        }
    }
    (T::one() + s_k[n] / interference).log2()
}

/// Achievable bits per symbol of user `n` on tone `k` given the tone column `s_k`.
pub fn bit_rate<T: Real>(
    scenario: &Scenario<T>,
    s_k: &[T],
    n: usize,
    k: usize,
    counter: &mut BitEvalCounter,
) -> Result<T, ModelError> {
    if s_k.len() != scenario.num_users() || n >= scenario.num_users() || k >= scenario.num_tones() {
        return Err(ModelError::Dimension(format!(
            "tone column of length {} for user {n}, tone {k}",
            s_k.len()
        )));
    }
    if let Some((m, v)) = s_k.iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
        return Err(ModelError::NegativePower { user: m, tone: k, value: v.as_f64() });
    }
    Ok(bit_rate_raw(scenario, s_k, n, k, counter))
}

/// `sum_m w_m b_k^m(s_k)`: the weighted rate carried by one tone.
#[inline]
pub(crate) fn tone_value<T: Real>(
    scenario: &Scenario<T>,
    s_k: &[T],
    k: usize,
    counter: &mut BitEvalCounter,
) -> T {
    let mut total = T::zero();
    for m in 0..s_k.len() {
        total += scenario.weight(m) * bit_rate_raw(scenario, s_k, m, k, counter);
    }
    total
}

/// Weighted rate of every tone.
pub fn tone_values<T: Real>(
    scenario: &Scenario<T>,
    spectra: &TransmitSpectra<T>,
    counter: &mut BitEvalCounter,
) -> Result<Vec<T>, ModelError> {
    spectra.check_dims(scenario)?;
    Ok((0..scenario.num_tones())
        .map(|k| tone_value(scenario, spectra.tone(k), k, counter))
        .collect())
}

/// `sum_n w_n sum_k b_k^n`, in weighted bits per symbol.
pub fn weighted_objective<T: Real>(
    scenario: &Scenario<T>,
    spectra: &TransmitSpectra<T>,
    counter: &mut BitEvalCounter,
) -> Result<T, ModelError> {
    Ok(tone_values(scenario, spectra, counter)?.into_iter().sum())
}

/// Per-user rate `R^n` in bits per symbol.
pub fn user_rates<T: Real>(
    scenario: &Scenario<T>,
    spectra: &TransmitSpectra<T>,
    counter: &mut BitEvalCounter,
) -> Result<Vec<T>, ModelError> {
    spectra.check_dims(scenario)?;
    let mut rates = vec![T::zero(); scenario.num_users()];
    for k in 0..scenario.num_tones() {
        for (n, r) in rates.iter_mut().enumerate() {
            *r += bit_rate_raw(scenario, spectra.tone(k), n, k, counter);
        }
    }
    Ok(rates)
}

/// Bits per symbol to bit/s.
pub fn to_bitrate_bps<T: Real>(bits_per_symbol: T, scenario: &Scenario<T>) -> T {
    scenario.symbol_rate() * bits_per_symbol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskViolation {
    pub user: usize,
    pub tone: usize,
    pub power: f64,
    pub mask: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerViolation {
    pub user: usize,
    pub total: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativityViolation {
    pub user: usize,
    pub tone: usize,
    pub power: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub mask_violations: Vec<MaskViolation>,
    pub power_violations: Vec<PowerViolation>,
    pub negativity_violations: Vec<NegativityViolation>,
}

impl FeasibilityReport {
    pub fn is_empty(&self) -> bool {
        self.mask_violations.is_empty()
            && self.power_violations.is_empty()
            && self.negativity_violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mask_violations.len() + self.power_violations.len() + self.negativity_violations.len()
    }
}

/// Lists every constraint of the scenario's power problem that `spectra` breaks.
pub fn check_feasible<T: Real>(
    scenario: &Scenario<T>,
    spectra: &TransmitSpectra<T>,
) -> Result<FeasibilityReport, ModelError> {
    spectra.check_dims(scenario)?;
    let tol = T::feasibility_tol();
    let mut report = FeasibilityReport::default();
    for n in 0..scenario.num_users() {
        for k in 0..scenario.num_tones() {
            let s = spectra.get(k, n);
            if !(s >= T::zero()) {
                report.negativity_violations.push(NegativityViolation {
                    user: n,
                    tone: k,
                    power: s.as_f64(),
                });
            } else if s > scenario.mask(k, n) {
                report.mask_violations.push(MaskViolation {
                    user: n,
                    tone: k,
                    power: s.as_f64(),
                    mask: scenario.mask(k, n).as_f64(),
                });
            }
        }
        let total = spectra.user_total(n);
        let budget = scenario.budget(n);
        let bad = match scenario.constraint_mode() {
            ConstraintMode::Equality => (total - budget).abs() > tol * budget,
            ConstraintMode::Inequality => total > budget * (T::one() + tol),
        };
        if bad || !total.is_finite() {
            report.power_violations.push(PowerViolation {
                user: n,
                total: total.as_f64(),
                budget: budget.as_f64(),
            });
        }
    }
    Ok(report)
}

/// Masks in the JSON document: one density for everything, one per tone, or one per tone and user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskField {
    Scalar(f64),
    PerTone(Vec<f64>),
    PerToneUser(Vec<Vec<f64>>),
}

/// JSON exchange format for scenarios. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub num_users: usize,
    pub num_tones: usize,
    pub weights: Vec<f64>,
    pub budgets_dbm: Vec<f64>,
    pub masks_dbm_hz: MaskField,
    pub tone_spacing_hz: f64,
    pub symbol_rate_hz: f64,
    pub constraint_mode: ConstraintMode,
    /// `[K][N][N]` normalized crosstalk gains, diagonal ignored.
    pub gains: Vec<Vec<Vec<f64>>>,
    /// `[K][N]` normalized noise density.
    pub noise_dbm_hz: Vec<Vec<f64>>,
}

impl ScenarioDocument {
    pub fn to_scenario(&self) -> Result<Scenario<f64>, ModelError> {
        let (n, k) = (self.num_users, self.num_tones);
        let df = self.tone_spacing_hz;
        if !(df > 0.0) {
            return Err(ModelError::Invalid("tone_spacing_hz must be positive".into()));
        }
        let masks: Vec<f64> = match &self.masks_dbm_hz {
            MaskField::Scalar(d) => vec![scalar::dbm_hz_to_mw(*d, df); k * n],
            MaskField::PerTone(v) => {
                if v.len() != k {
                    return Err(ModelError::Dimension("masks_dbm_hz per-tone length".into()));
                }
                v.iter()
                    .flat_map(|d| std::iter::repeat(scalar::dbm_hz_to_mw(*d, df)).take(n))
                    .collect()
            }
            MaskField::PerToneUser(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != n) {
                    return Err(ModelError::Dimension("masks_dbm_hz must be [K][N]".into()));
                }
                rows.iter().flatten().map(|d| scalar::dbm_hz_to_mw(*d, df)).collect()
            }
        };
        if self.gains.len() != k || self.gains.iter().any(|g| g.len() != n || g.iter().any(|r| r.len() != n)) {
            return Err(ModelError::Dimension("gains must be [K][N][N]".into()));
        }
        if self.noise_dbm_hz.len() != k || self.noise_dbm_hz.iter().any(|r| r.len() != n) {
            return Err(ModelError::Dimension("noise_dbm_hz must be [K][N]".into()));
        }
        Scenario::new(ScenarioParts {
            num_users: n,
            num_tones: k,
            weights: self.weights.clone(),
            gains: self.gains.iter().flatten().flatten().copied().collect(),
            noise: self
                .noise_dbm_hz
                .iter()
                .flatten()
                .map(|d| scalar::dbm_hz_to_mw(*d, df))
                .collect(),
            masks,
            budgets: self.budgets_dbm.iter().map(|d| scalar::dbm_to_mw(*d)).collect(),
            tone_spacing: df,
            symbol_rate: self.symbol_rate_hz,
            constraint_mode: self.constraint_mode,
        })
    }

    pub fn from_scenario(s: &Scenario<f64>) -> Self {
        let (n, k) = (s.num_users(), s.num_tones());
        let df = s.tone_spacing();
        let masks: Vec<Vec<f64>> = (0..k)
            .map(|t| (0..n).map(|u| scalar::mw_to_dbm_hz(s.mask(t, u), df)).collect())
            .collect();
        let first = masks[0][0];
        let masks_dbm_hz = if masks.iter().flatten().all(|m| *m == first) {
            MaskField::Scalar(first)
        } else if masks.iter().all(|row| row.iter().all(|m| *m == row[0])) {
            MaskField::PerTone(masks.iter().map(|row| row[0]).collect())
        } else {
            MaskField::PerToneUser(masks)
        };
        ScenarioDocument {
            num_users: n,
            num_tones: k,
            weights: s.weights().to_vec(),
            budgets_dbm: s.budgets().iter().map(|p| scalar::mw_to_dbm(*p)).collect(),
            masks_dbm_hz,
            tone_spacing_hz: df,
            symbol_rate_hz: s.symbol_rate(),
            constraint_mode: s.constraint_mode(),
            gains: (0..k)
                .map(|t| (0..n).map(|u| (0..n).map(|m| s.gain(t, u, m)).collect()).collect())
                .collect(),
            noise_dbm_hz: (0..k)
                .map(|t| (0..n).map(|u| scalar::mw_to_dbm_hz(s.noise(t, u), df)).collect())
                .collect(),
        }
    }
}

impl Scenario<f64> {
    /// Serializes to the scenario JSON format. Floats use shortest round-trip notation.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioDocument::from_scenario(self)).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ScenarioDocument = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        doc.to_scenario()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Flat-channel helper: every tone identical.
    pub(crate) fn flat_scenario(
        weights: &[f64],
        cross: f64,
        noise: f64,
        mask: f64,
        budgets: &[f64],
        num_tones: usize,
        mode: ConstraintMode,
    ) -> Scenario<f64> {
        let n = weights.len();
        let mut gains = vec![cross; num_tones * n * n];
        for k in 0..num_tones {
            for u in 0..n {
                gains[(k * n + u) * n + u] = 0.0;
            }
        }
        Scenario::new(ScenarioParts {
            num_users: n,
            num_tones,
            weights: weights.to_vec(),
            gains,
            noise: vec![noise; num_tones * n],
            masks: vec![mask; num_tones * n],
            budgets: budgets.to_vec(),
            tone_spacing: 4312.5,
            symbol_rate: 4000.0,
            constraint_mode: mode,
        })
        .unwrap()
    }

    #[test]
    fn bit_rate_examples() {
        let mut c = BitEvalCounter::new();
        let single = flat_scenario(&[1.0], 0.0, 1.0, 10.0, &[1.0], 1, ConstraintMode::Equality);
        assert_eq!(bit_rate(&single, &[1.0], 0, 0, &mut c).unwrap(), 1.0);
        assert_eq!(bit_rate(&single, &[0.0], 0, 0, &mut c).unwrap(), 0.0);

        let pair = flat_scenario(&[0.5, 0.5], 0.1, 1.0, 20.0, &[3.0, 10.0], 1, ConstraintMode::Equality);
        let b = bit_rate(&pair, &[3.0, 10.0], 0, 0, &mut c).unwrap();
        assert!((b - 1.321928094887362).abs() < 1e-12, "{b}");
        assert_eq!(c.count(), 3);

        assert!(matches!(
            bit_rate(&pair, &[-1.0, 1.0], 0, 0, &mut c),
            Err(ModelError::NegativePower { user: 0, .. })
        ));
        assert!(matches!(bit_rate(&pair, &[1.0], 0, 0, &mut c), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn objective_examples() {
        let mut c = BitEvalCounter::new();
        let s = flat_scenario(&[1.0], 0.0, 1.0, 10.0, &[2.0], 2, ConstraintMode::Equality);
        let zero = TransmitSpectra::zeros(1, 2);
        assert_eq!(weighted_objective(&s, &zero, &mut c).unwrap(), 0.0);
        let ones = TransmitSpectra::from_tone_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(weighted_objective(&s, &ones, &mut c).unwrap(), 2.0);

        let sym = flat_scenario(&[0.5, 0.5], 0.2, 0.1, 10.0, &[2.0, 2.0], 3, ConstraintMode::Equality);
        let spectra = TransmitSpectra::uniform(&sym);
        let r = user_rates(&sym, &spectra, &mut c).unwrap();
        assert_eq!(r[0], r[1]);

        let bad = TransmitSpectra::zeros(2, 2);
        assert!(weighted_objective(&s, &bad, &mut c).is_err());
    }

    #[test]
    fn bitrate_conversion() {
        let s = flat_scenario(&[1.0], 0.0, 1.0, 10.0, &[1.0], 1, ConstraintMode::Equality);
        assert_eq!(to_bitrate_bps(10.0, &s), 40000.0);
        assert_eq!(to_bitrate_bps(0.0, &s), 0.0);
        assert!((to_bitrate_bps(496.2, &s) - 1.9848e6).abs() < 1e-6);
    }

    #[test]
    fn feasibility_examples() {
        let s = flat_scenario(&[0.5, 0.5], 0.1, 1.0, 100.0, &[8.0, 8.0], 4, ConstraintMode::Equality);
        let mut spectra = TransmitSpectra::uniform(&s);
        assert!(check_feasible(&s, &spectra).unwrap().is_empty());

        spectra.set(2, 1, 100.0 * 1.01);
        let r = check_feasible(&s, &spectra).unwrap();
        assert_eq!(r.mask_violations.len(), 1);
        assert_eq!(r.mask_violations[0].tone, 2);

        let zeros = TransmitSpectra::zeros(2, 4);
        let r = check_feasible(&s, &zeros).unwrap();
        assert_eq!(r.power_violations.len(), 2);
        assert!(r.mask_violations.is_empty());

        let ineq = s.with_constraint_mode(ConstraintMode::Inequality).unwrap();
        assert!(check_feasible(&ineq, &zeros).unwrap().is_empty());
    }

    #[test]
    fn scenario_validation() {
        let mut parts = flat_scenario(&[1.0, 1.0], 0.1, 1.0, 1.0, &[1.0, 1.0], 2, ConstraintMode::Equality).to_parts();
        parts.budgets[0] = 3.0;
        assert!(matches!(Scenario::new(parts.clone()), Err(ModelError::Invalid(_))));
        parts.constraint_mode = ConstraintMode::Inequality;
        assert!(Scenario::new(parts.clone()).is_ok());
        parts.noise[1] = 0.0;
        assert!(Scenario::new(parts.clone()).is_err());
        parts.noise[1] = 1.0;
        parts.weights = vec![0.0, 0.0];
        assert!(Scenario::new(parts.clone()).is_err());
        parts.weights = vec![1.0];
        assert!(matches!(Scenario::new(parts), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut parts = flat_scenario(&[0.3, 0.7], 0.05, 1e-6, 0.4, &[1.0, 2.0], 3, ConstraintMode::Inequality).to_parts();
        parts.masks[5] = 0.2;
        let s = Scenario::new(parts).unwrap();
        let text = s.to_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.num_users(), 2);
        assert_eq!(back.constraint_mode(), ConstraintMode::Inequality);
        for k in 0..3 {
            for n in 0..2 {
                assert!((back.mask(k, n) / s.mask(k, n) - 1.0).abs() < 1e-12);
                assert!((back.noise(k, n) / s.noise(k, n) - 1.0).abs() < 1e-12);
                for m in 0..2 {
                    assert_eq!(back.gain(k, n, m), s.gain(k, n, m));
                }
            }
        }
        // the document itself is a fixed point of parse/print
        let doc: ScenarioDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string_pretty(&doc).unwrap(), text);
        assert!(matches!(Scenario::from_json("{}"), Err(ModelError::Json(_))));
    }

    #[test]
    fn f32_cast() {
        let s = flat_scenario(&[1.0], 0.0, 1.0, 10.0, &[2.0], 2, ConstraintMode::Equality);
        let s32: Scenario<f32> = s.cast().unwrap();
        let mut c = BitEvalCounter::new();
        assert_eq!(bit_rate(&s32, &[1.0f32], 0, 0, &mut c).unwrap(), 1.0f32);
    }
}
