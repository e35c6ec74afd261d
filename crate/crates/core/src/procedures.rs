//! Inequality-constrained power scaling and spike equalization.

use serde::{Deserialize, Serialize};

use crate::ipdb::{SolverError, SolverState};
use crate::model::ConstraintMode;
use crate::scalar::{to_db, Real};

/// Spike threshold in dB.
pub const SPIKE_DB: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityParams {
    /// Scale-up factor, `> 1`.
    pub alpha: f64,
    /// Scale-down factor, in `(0, 1)`.
    pub beta: f64,
}

impl Default for InequalityParams {
    fn default() -> Self {
        InequalityParams { alpha: 1.1, beta: 0.8 }
    }
}

impl InequalityParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be > 1, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(format!("beta must be in (0, 1), got {}", self.beta));
        }
        Ok(())
    }
}

/// One tone of the inequality procedure: keeps the best of the current
/// power, a scaled-up power (capped by budget and mask) and a scaled-down
/// power. Returns whether the power changed.
pub fn inequality_step<T: Real>(state: &mut SolverState<'_, T>, n: usize, k: usize, params: InequalityParams) -> bool {
    let scenario = state.scenario();
    let s = state.spectra().get(k, n);
    let others = state.spectra().user_total(n) - s;
    let s_alpha = (T::lit(params.alpha) * s).min(scenario.budget(n) - others).min(scenario.mask(k, n));
    let s_beta = T::lit(params.beta) * s;

    let mut best = (s, state.tone_value_cached(k));
    for cand in [s_alpha, s_beta] {
        if cand < T::zero() || cand == s {
            continue;
        }
        let v = state.tone_value_with(k, n, cand);
        if v > best.1 {
            best = (cand, v);
        }
    }
    if best.0 != s {
        state.set_power_with_value(k, n, best.0, best.1);
        true
    } else {
        false
    }
}

/// Runs [`inequality_step`] over `tones` for user `n`, then recenters.
pub fn inequality_pass<T: Real>(
    state: &mut SolverState<'_, T>,
    n: usize,
    params: InequalityParams,
    tones: &[usize],
) -> Result<usize, SolverError> {
    if state.scenario().constraint_mode() != ConstraintMode::Inequality {
        return Err(SolverError::InequalityInEqualityMode);
    }
    params.validate().map_err(SolverError::Config)?;
    let changed = tones.iter().filter(|&&k| inequality_step(state, n, k, params)).count();
    state.recenter(n);
    Ok(changed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spike {
    Down,
    Up,
}

/// Classifies `s[k+1]` against `s[k]` and `s[k+3]`.
pub fn detect_spike<T: Real>(s: &[T], k: usize) -> Option<Spike> {
    let th = T::lit(SPIKE_DB);
    let (a, mid, b) = (to_db(s[k]), to_db(s[k + 1]), to_db(s[k + 3]));
    if mid < a - th && mid < b - th {
        Some(Spike::Down)
    } else if mid > a + th && mid > b + th {
        Some(Spike::Up)
    } else {
        None
    }
}

/// Positions `k + 1` that [`detect_spike`] flags anywhere in `s`.
pub fn find_spikes<T: Real>(s: &[T]) -> Vec<(usize, Spike)> {
    if s.len() < 4 {
        return Vec::new();
    }
    (0..=s.len() - 4).filter_map(|k| detect_spike(s, k).map(|sp| (k + 1, sp))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EqualizeOutcome {
    pub down_spikes: usize,
    pub up_spikes: usize,
    /// Power left unassigned after mask clipping.
    pub shortfall: f64,
    /// The pass hit a zero-power rescale and left the row unchanged.
    pub aborted: bool,
}

/// One equalization sweep over a single spectrum row.
pub fn equalize_row<T: Real>(row: &mut [T], masks: &[T], mode: ConstraintMode) -> EqualizeOutcome {
    let mut out = EqualizeOutcome::default();
    if row.len() < 4 {
        return out;
    }
    let original = row.to_vec();
    let p: T = row.iter().copied().sum();
    let three = T::lit(3.0);
    for k in 0..=row.len() - 4 {
        match detect_spike(row, k) {
            Some(Spike::Down) => {
                let mean = (row[k] + row[k + 1] + row[k + 3]) / three;
                row[k] = mean;
                row[k + 1] = mean;
                row[k + 3] = mean;
                out.down_spikes += 1;
            }
            Some(Spike::Up) => {
                row[k + 1] = row[k].min(row[k + 3]);
                let p_r: T = row.iter().copied().sum();
                if p_r <= T::zero() {
                    row.copy_from_slice(&original);
                    return EqualizeOutcome { aborted: true, ..Default::default() };
                }
                let f = p / p_r;
                for v in row.iter_mut() {
                    *v *= f;
                }
                out.up_spikes += 1;
            }
            None => {}
        }
    }
    if row.iter().zip(masks).any(|(v, m)| v > m) {
        match mode {
            ConstraintMode::Equality => {
                redistribute_to_masks(row, masks, p, 32);
            }
            ConstraintMode::Inequality => {
                for (v, m) in row.iter_mut().zip(masks) {
                    *v = v.min(*m);
                }
            }
        }
        let total: T = row.iter().copied().sum();
        out.shortfall = (p - total).max(T::zero()).as_f64();
    }
    out
}

/// Equalizes user `n`'s spectrum in place, refreshing the solver caches.
pub fn equalize_pass<T: Real>(state: &mut SolverState<'_, T>, n: usize) -> Result<EqualizeOutcome, SolverError> {
    let scenario = state.scenario();
    let mut row = state.spectra().user_row(n);
    let masks: Vec<T> = (0..scenario.num_tones()).map(|k| scenario.mask(k, n)).collect();
    let outcome = equalize_row(&mut row, &masks, scenario.constraint_mode());
    state.replace_user_row(n, &row);
    state.recenter(n);
    Ok(outcome)
}

/// Clips `row` to `masks` and spreads the clipped excess proportionally over
/// tones below their mask until the row sums to `target`. Returns false if
/// `rounds` were not enough.
pub fn redistribute_to_masks<T: Real>(row: &mut [T], masks: &[T], target: T, rounds: usize) -> bool {
    let tol = T::feasibility_tol() * target.abs().max(T::min_positive_value());
    for _ in 0..rounds {
        for (v, m) in row.iter_mut().zip(masks) {
            *v = v.min(*m);
        }
        let total: T = row.iter().copied().sum();
        let deficit = target - total;
        if deficit.abs() <= tol {
            return true;
        }
        let free: T = row.iter().zip(masks).filter(|(v, m)| v < m).map(|(v, _)| *v).sum();
        if free <= T::zero() {
            return false;
        }
        let f = T::one() + deficit / free;
        for (v, m) in row.iter_mut().zip(masks) {
            if *v < *m {
                *v *= f;
            }
        }
    }
    let total: T = row.iter().copied().sum();
    row.iter().zip(masks).all(|(v, m)| v <= m) && (target - total).abs() <= tol
}
