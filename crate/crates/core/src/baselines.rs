//! Reference solvers: iterative spectrum balancing (dual decomposition with
//! per-tone coordinate ascent) and an exhaustive search for tiny instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ipdb::GRID_ANCHOR_DBM;
use crate::model::{self, BitEvalCounter, ConstraintMode, ModelError, Scenario, TransmitSpectra};
use crate::procedures::redistribute_to_masks;
use crate::scalar::Real;
use crate::trace::{OuterRecord, RunSummary, RunTrace, StopReason};

/// Largest joint search space the oracle accepts.
pub const ORACLE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("search space of {size} joint allocations exceeds {limit}")]
    TooLarge { size: u128, limit: u128 },
    #[error("no allocation satisfies the masks")]
    NoFeasibleAllocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsbConfig {
    /// Power grid granularity in dB.
    pub granularity_db: f64,
    /// Relative power mismatch accepted by the multiplier search.
    pub dual_tol: f64,
    /// Multiplier evaluations allowed per user search.
    pub max_dual_iters: usize,
    /// Coordinate ascent rounds per tone.
    pub inner_rounds: usize,
    /// Round-robin passes over all users.
    pub max_passes: usize,
    pub initial_lambda_max: f64,
}

impl Default for IsbConfig {
    fn default() -> Self {
        IsbConfig {
            granularity_db: 0.5,
            dual_tol: 1e-3,
            max_dual_iters: 50,
            inner_rounds: 10,
            max_passes: 20,
            initial_lambda_max: 1.0,
        }
    }
}

impl IsbConfig {
    fn validate(&self) -> Result<(), BaselineError> {
        let positive = [self.granularity_db, self.dual_tol, self.initial_lambda_max];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(BaselineError::Config("granularity, tolerance and lambda_max must be positive".into()));
        }
        if self.max_dual_iters == 0 || self.inner_rounds == 0 || self.max_passes == 0 {
            return Err(BaselineError::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

struct Isb<'a, T: Real> {
    scenario: &'a Scenario<T>,
    grid: Vec<T>,
    inner_rounds: usize,
    counter: BitEvalCounter,
    power_updates: u64,
    column: Vec<T>,
}

impl<'a, T: Real> Isb<'a, T> {
    /// Per-tone coordinate ascent on the Lagrangian for fixed multipliers.
    fn solve_tones(&mut self, lambda: &[T], s: &mut TransmitSpectra<T>) {
        let scenario = self.scenario;
        let nu = scenario.num_users();
        for k in 0..scenario.num_tones() {
            self.column.copy_from_slice(s.tone(k));
            for _ in 0..self.inner_rounds {
                let mut changed = false;
                for n in 0..nu {
                    let current = self.column[n];
                    let mut best_x = current;
                    let mut best = model::tone_value(scenario, &self.column, k, &mut self.counter) - lambda[n] * current;
                    let mask = scenario.mask(k, n);
                    for i in 0..=self.grid.partition_point(|x| *x <= mask) {
                        let x = if i == 0 { T::zero() } else { self.grid[i - 1] };
                        if x == current {
                            continue;
                        }
                        self.column[n] = x;
                        let v = model::tone_value(scenario, &self.column, k, &mut self.counter) - lambda[n] * x;
                        if v > best {
                            best = v;
                            best_x = x;
                        }
                    }
                    self.column[n] = best_x;
                    if best_x != current {
                        changed = true;
                        self.power_updates += 1;
                    }
                }
                if !changed {
                    break;
                }
            }
            for n in 0..nu {
                s.set(k, n, self.column[n]);
            }
        }
    }
}

fn ep_start<T: Real>(scenario: &Scenario<T>) -> TransmitSpectra<T> {
    let (nu, nt) = (scenario.num_users(), scenario.num_tones());
    let mut s = TransmitSpectra::zeros(nu, nt);
    let k = T::from_usize(nt).unwrap();
    for n in 0..nu {
        for tone in 0..nt {
            s.set(tone, n, (scenario.budget(n) / k).min(scenario.mask(tone, n)));
        }
    }
    s
}

/// Iterative spectrum balancing.
///
/// Multipliers are found by per-user bisection, round robin over users.
/// Every evaluation of a user's search restarts from the spectra at the
/// start of that search. The final iterate is rescaled to the budgets (and
/// clipped to the masks), so intermediate iterates need not be feasible.
pub fn isb_run<T: Real>(scenario: &Scenario<T>, config: &IsbConfig) -> Result<(TransmitSpectra<T>, RunTrace), BaselineError> {
    config.validate()?;
    let nu = scenario.num_users();
    let mut grid = Vec::new();
    let max_mask = (0..scenario.num_tones())
        .flat_map(|k| (0..nu).map(move |n| (k, n)))
        .fold(T::zero(), |acc, (k, n)| acc.max(scenario.mask(k, n)));
    for j in 0.. {
        let x = T::lit(10f64.powf((GRID_ANCHOR_DBM + j as f64 * config.granularity_db) / 10.0));
        if x > max_mask || !x.is_finite() {
            break;
        }
        grid.push(x);
    }
    let mut isb = Isb {
        scenario,
        grid,
        inner_rounds: config.inner_rounds,
        counter: BitEvalCounter::new(),
        power_updates: 0,
        column: vec![T::zero(); nu],
    };
    let tol = T::lit(config.dual_tol);
    let mode = scenario.constraint_mode();
    let mut lambda = vec![T::zero(); nu];
    let mut s = ep_start(scenario);
    let mut outers = Vec::new();
    let mut notes = Vec::new();
    let record = |s: &TransmitSpectra<T>, it: usize, isb: &mut Isb<T>, outers: &mut Vec<OuterRecord>| {
        let obj = model::weighted_objective(scenario, s, &mut BitEvalCounter::new()).map(Real::as_f64).unwrap_or(f64::NAN);
        outers.push(OuterRecord {
            iteration: it,
            objective: obj,
            user_totals: s.user_totals().iter().map(|x| x.as_f64()).collect(),
            bit_evals: isb.counter.count(),
            updates: isb.power_updates,
            elapsed_ms: 0.0,
        });
    };
    record(&s, 0, &mut isb, &mut outers);

    let mut dual_failed = false;
    let mut passes = 0;
    let mut balanced = false;
    while passes < config.max_passes {
        passes += 1;
        let pass_start = s.clone();
        for n in 0..nu {
            let budget = scenario.budget(n);
            let snapshot = s.clone();
            let eval = |lam: T, isb: &mut Isb<T>, lambda: &mut Vec<T>| {
                lambda[n] = lam;
                let mut trial = snapshot.clone();
                isb.solve_tones(lambda, &mut trial);
                let p = trial.user_total(n);
                (p, trial)
            };
            let within = |p: T| (p - budget).abs() <= tol * budget;
            let mut iters = 0;

            let (p0, s0) = eval(T::zero(), &mut isb, &mut lambda);
            iters += 1;
            if p0 <= budget * (T::one() + tol) {
                // no multiplier can raise power further
                s = s0;
                continue;
            }
            let mut lo = T::zero();
            let mut hi = lambda_start(config, &lambda, n);
            let (p_hi, mut s_hi) = eval(hi, &mut isb, &mut lambda);
            let mut p_hi = p_hi;
            iters += 1;
            while p_hi > budget * (T::one() + tol) && iters < config.max_dual_iters {
                lo = hi;
                hi = hi + hi;
                let r = eval(hi, &mut isb, &mut lambda);
                p_hi = r.0;
                s_hi = r.1;
                iters += 1;
            }
            let mut done = within(p_hi) || (mode == ConstraintMode::Inequality && p_hi <= budget);
            while !done && iters < config.max_dual_iters {
                let mid = (lo + hi) / T::lit(2.0);
                if !(mid > lo && mid < hi) {
                    // multiplier interval exhausted: the discrete power curve jumps over the budget
                    break;
                }
                let (p, sm) = eval(mid, &mut isb, &mut lambda);
                iters += 1;
                if p > budget * (T::one() + tol) {
                    lo = mid;
                } else {
                    hi = mid;
                    s_hi = sm;
                    done = within(p) || (mode == ConstraintMode::Inequality && p <= budget);
                }
            }
            if !done && iters >= config.max_dual_iters {
                dual_failed = true;
                notes.push(format!("pass {passes}: multiplier search for user {n} hit the iteration cap"));
            }
            lambda[n] = hi;
            s = s_hi;
        }
        record(&s, passes, &mut isb, &mut outers);
        balanced = (0..nu).all(|n| {
            let p = s.user_total(n);
            let b = scenario.budget(n);
            match mode {
                ConstraintMode::Equality => (p - b).abs() <= tol * b || all_masks_full(scenario, &s, n),
                ConstraintMode::Inequality => p <= b * (T::one() + tol),
            }
        });
        if s == pass_start {
            // the multipliers reproduce the previous pass exactly
            break;
        }
        if balanced && passes > 1 {
            let prev = &outers[outers.len() - 2];
            let last = &outers[outers.len() - 1];
            if ((last.objective - prev.objective) / last.objective.abs().max(f64::MIN_POSITIVE)).abs() < 1e-6 {
                break;
            }
        }
    }

    // project onto the budgets
    for n in 0..nu {
        let mut row = s.user_row(n);
        let total: T = row.iter().copied().sum();
        let budget = scenario.budget(n);
        let masks: Vec<T> = (0..scenario.num_tones()).map(|k| scenario.mask(k, n)).collect();
        let target = match mode {
            ConstraintMode::Equality => budget,
            ConstraintMode::Inequality => total.min(budget),
        };
        if total > T::zero() {
            let f = target / total;
            for v in row.iter_mut() {
                *v *= f;
            }
        } else if mode == ConstraintMode::Equality {
            let share = budget / T::from_usize(row.len()).unwrap();
            row.iter_mut().for_each(|v| *v = share);
        }
        if !redistribute_to_masks(&mut row, &masks, target, 32) {
            notes.push(format!("user {n}: mask repair after rescaling left a residual"));
        }
        s.set_user_row(n, &row);
    }
    let objective = model::weighted_objective(scenario, &s, &mut isb.counter)?;
    let stop = if dual_failed {
        StopReason::DualNotConverged
    } else if balanced {
        StopReason::Converged
    } else {
        StopReason::MaxOuter
    };
    let summary = RunSummary {
        algorithm: "isb".into(),
        stop_reason: stop,
        outer_iterations: passes,
        updates: isb.power_updates,
        bit_evals: isb.counter.count(),
        objective: objective.as_f64(),
        user_totals: s.user_totals().iter().map(|x| x.as_f64()).collect(),
        equalization_drops: Vec::new(),
        notes,
        final_spectra_mw: s.tone_rows().into_iter().map(|r| r.into_iter().map(Real::as_f64).collect()).collect(),
    };
    if let Some(last) = outers.last_mut() {
        // the reported final point is the projected one
        last.objective = summary.objective;
        last.user_totals = summary.user_totals.clone();
        last.bit_evals = summary.bit_evals;
    }
    Ok((s, RunTrace { updates: Vec::new(), outers, summary }))
}

fn lambda_start<T: Real>(config: &IsbConfig, lambda: &[T], n: usize) -> T {
    T::lit(config.initial_lambda_max).max(lambda[n])
}

fn all_masks_full<T: Real>(scenario: &Scenario<T>, s: &TransmitSpectra<T>, n: usize) -> bool {
    let masks: T = (0..scenario.num_tones()).map(|k| scenario.mask(k, n)).sum();
    s.user_total(n) >= masks * (T::one() - T::feasibility_tol())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T = f64> {
    pub spectra: TransmitSpectra<T>,
    pub objective: T,
    /// Quanta per tone per user, `[N][K]`.
    pub allocation: Vec<Vec<usize>>,
    pub evaluations: u64,
}

/// Compositions of `total` into `parts` nonnegative integers, in
/// lexicographic order.
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for x in 0..=left {
            cur.push(x);
            rec(left - x, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Exact optimum over allocations of `quanta` equal power quanta per user
/// (at most `quanta` in inequality mode). Ties resolve to the
/// lexicographically smallest allocation.
pub fn oracle_search<T: Real>(scenario: &Scenario<T>, quanta: usize) -> Result<OracleResult<T>, BaselineError> {
    if quanta == 0 {
        return Err(BaselineError::Config("quanta must be positive".into()));
    }
    let (nu, nt) = (scenario.num_users(), scenario.num_tones());
    let mode = scenario.constraint_mode();
    let per_user: u128 = match mode {
        ConstraintMode::Equality => binomial((quanta + nt - 1) as u128, (nt - 1) as u128),
        ConstraintMode::Inequality => binomial((quanta + nt) as u128, nt as u128),
    };
    let size = (0..nu).fold(1u128, |acc, _| acc.saturating_mul(per_user));
    if size > ORACLE_LIMIT {
        return Err(BaselineError::TooLarge { size, limit: ORACLE_LIMIT });
    }
    let q = T::from_usize(quanta).unwrap();
    let slack = T::one() + T::feasibility_tol();
    let options: Vec<Vec<Vec<usize>>> = (0..nu)
        .map(|n| {
            let unit = scenario.budget(n) / q;
            let all: Vec<Vec<usize>> = match mode {
                ConstraintMode::Equality => compositions(quanta, nt),
                ConstraintMode::Inequality => {
                    let mut v: Vec<Vec<usize>> = (0..=quanta).flat_map(|t| compositions(t, nt)).collect();
                    v.sort();
                    v
                }
            };
            all.into_iter()
                .filter(|a| a.iter().enumerate().all(|(k, &c)| unit * T::from_usize(c).unwrap() <= scenario.mask(k, n) * slack))
                .collect()
        })
        .collect();
    if options.iter().any(Vec::is_empty) {
        return Err(BaselineError::NoFeasibleAllocation);
    }
    let radix: Vec<usize> = options.iter().map(Vec::len).collect();
    let total: usize = radix.iter().product();
    let units: Vec<T> = (0..nu).map(|n| scenario.budget(n) / q).collect();

    let decode = |mut idx: usize, out: &mut [usize]| {
        for n in (0..nu).rev() {
            out[n] = idx % radix[n];
            idx /= radix[n];
        }
    };
    let evaluate = |idx: usize| -> T {
        let mut choice = vec![0; nu];
        decode(idx, &mut choice);
        let mut column = vec![T::zero(); nu];
        let mut counter = BitEvalCounter::new();
        let mut obj = T::zero();
        for k in 0..nt {
            for n in 0..nu {
                column[n] = units[n] * T::from_usize(options[n][choice[n]][k]).unwrap();
            }
            obj += model::tone_value(scenario, &column, k, &mut counter);
        }
        obj
    };
    // mixed-radix order with user 0 most significant is lexicographic order
    let (best_idx, best_obj) = (0..total)
        .into_par_iter()
        .map(|i| (i, evaluate(i)))
        .reduce(
            || (usize::MAX, T::neg_infinity()),
            |a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    let mut choice = vec![0; nu];
    decode(best_idx, &mut choice);
    let allocation: Vec<Vec<usize>> = (0..nu).map(|n| options[n][choice[n]].clone()).collect();
    let mut spectra = TransmitSpectra::zeros(nu, nt);
    for n in 0..nu {
        for k in 0..nt {
            spectra.set(k, n, units[n] * T::from_usize(allocation[n][k]).unwrap());
        }
    }
    Ok(OracleResult { spectra, objective: best_obj, allocation, evaluations: total as u64 })
}
