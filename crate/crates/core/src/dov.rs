//! Difference-of-variables transformation.
//!
//! Each user's spectrum is written as `s_k = sum_j beta_k(j) t_j + P_tot gamma_k`.
//! When every coefficient column sums to zero the total power
//! `sum_k s_k = P_tot sum_k gamma_k` no longer depends on `t`, so any value
//! of a power difference variable `t_j` keeps the budget satisfied. Only the
//! nonzero coefficients are stored: rows (`B`, the variables feeding a tone)
//! and columns (`A`, the tones a variable touches).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Scenario;
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum DovError {
    #[error("transform needs at least {min} tones, got {got}")]
    TooFewTones { min: usize, got: usize },
    #[error("invalid coefficient structure: {0}")]
    Structure(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown transform '{0}'")]
    UnknownKind(String),
}

/// The four shipped coefficient patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum DovKind {
    /// `s_k = t_k - t_{k-1}`, cyclic.
    TwoTone,
    /// `s_k = -t_{k+1} + 2 t_k - t_{k-1}`, cyclic.
    ThreeTone,
    /// `s_k = t_k - t_{pi(k)}` for a seeded random derangement `pi`.
    TwoToneRand { seed: u64 },
    /// `s_k = 2 t_k - t_{k+1} - t_{k+2}`, cyclic.
    ThreeTone2,
}

impl DovKind {
    pub fn name(&self) -> &'static str {
        match self {
            DovKind::TwoTone => "two-tone",
            DovKind::ThreeTone => "three-tone",
            DovKind::TwoToneRand { .. } => "two-tone-rand",
            DovKind::ThreeTone2 => "three-tone-2",
        }
    }

    /// Parses a transform name; `seed` is only used by `two-tone-rand`.
    pub fn parse(name: &str, seed: u64) -> Result<Self, DovError> {
        match name {
            "two-tone" => Ok(DovKind::TwoTone),
            "three-tone" => Ok(DovKind::ThreeTone),
            "two-tone-rand" => Ok(DovKind::TwoToneRand { seed }),
            "three-tone-2" => Ok(DovKind::ThreeTone2),
            other => Err(DovError::UnknownKind(other.to_string())),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            DovKind::TwoToneRand { .. } => DovKind::TwoToneRand { seed },
            other => other,
        }
    }

    pub fn coefficients<T: Real>(&self, num_tones: usize) -> Result<DovCoefficients<T>, DovError> {
        match *self {
            DovKind::TwoTone => make_two_tone(num_tones),
            DovKind::ThreeTone => make_three_tone(num_tones),
            DovKind::TwoToneRand { seed } => make_two_tone_rand(num_tones, seed),
            DovKind::ThreeTone2 => make_three_tone_2(num_tones),
        }
    }
}

/// Sparse `beta` for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct DovCoefficients<T> {
    /// `rows[k]`: `(j, beta_k(j))` for `j` in `B_k`.
    rows: Vec<Vec<(usize, T)>>,
    /// `cols[j]`: `(q, beta_q(j))` for `q` in `A_j`.
    cols: Vec<Vec<(usize, T)>>,
}

impl<T: Real> DovCoefficients<T> {
    /// Builds from sparse rows. Zero entries are dropped and duplicate
    /// `(k, j)` pairs are summed.
    pub fn from_rows(num_tones: usize, rows: Vec<Vec<(usize, T)>>) -> Result<Self, DovError> {
        if rows.len() != num_tones {
            return Err(DovError::Dimension(format!("{} rows for {num_tones} tones", rows.len())));
        }
        let mut clean_rows = Vec::with_capacity(num_tones);
        for (k, row) in rows.into_iter().enumerate() {
            let mut merged: Vec<(usize, T)> = Vec::with_capacity(row.len());
            for (j, b) in row {
                if j >= num_tones {
                    return Err(DovError::Structure(format!("row {k} references tone {j}")));
                }
                if !b.is_finite() {
                    return Err(DovError::Structure(format!("non-finite coefficient in row {k}")));
                }
                match merged.iter_mut().find(|(jj, _)| *jj == j) {
                    Some(entry) => entry.1 += b,
                    None => merged.push((j, b)),
                }
            }
            merged.retain(|(_, b)| *b != T::zero());
            merged.sort_by_key(|(j, _)| *j);
            clean_rows.push(merged);
        }
        let mut cols = vec![Vec::new(); num_tones];
        for (k, row) in clean_rows.iter().enumerate() {
            for &(j, b) in row {
                cols[j].push((k, b));
            }
        }
        Ok(DovCoefficients { rows: clean_rows, cols })
    }

    pub fn num_tones(&self) -> usize {
        self.rows.len()
    }

    /// `(j, beta_k(j))` for the variables feeding tone `k`.
    #[inline]
    pub fn row(&self, k: usize) -> &[(usize, T)] {
        &self.rows[k]
    }

    /// `(q, beta_q(j))` for the tones touched by variable `j`.
    #[inline]
    pub fn col(&self, j: usize) -> &[(usize, T)] {
        &self.cols[j]
    }

    /// `beta_k(j)`, zero when absent.
    pub fn beta(&self, k: usize, j: usize) -> T {
        self.rows[k]
            .iter()
            .find(|(jj, _)| *jj == j)
            .map_or(T::zero(), |(_, b)| *b)
    }

    /// Index set `B_k`.
    pub fn b_set(&self, k: usize) -> Vec<usize> {
        self.rows[k].iter().map(|(j, _)| *j).collect()
    }

    /// Index set `A_j`.
    pub fn a_set(&self, j: usize) -> Vec<usize> {
        self.cols[j].iter().map(|(q, _)| *q).collect()
    }
}

fn cyclic<T: Real>(num_tones: usize, offsets: &[(isize, f64)]) -> Result<DovCoefficients<T>, DovError> {
    let k_len = num_tones as isize;
    let rows = (0..k_len)
        .map(|k| {
            offsets
                .iter()
                .map(|&(off, b)| (((k + off).rem_euclid(k_len)) as usize, T::lit(b)))
                .collect()
        })
        .collect();
    DovCoefficients::from_rows(num_tones, rows)
}

pub fn make_two_tone<T: Real>(num_tones: usize) -> Result<DovCoefficients<T>, DovError> {
    if num_tones < 2 {
        return Err(DovError::TooFewTones { min: 2, got: num_tones });
    }
    cyclic(num_tones, &[(0, 1.0), (-1, -1.0)])
}

pub fn make_three_tone<T: Real>(num_tones: usize) -> Result<DovCoefficients<T>, DovError> {
    if num_tones < 3 {
        return Err(DovError::TooFewTones { min: 3, got: num_tones });
    }
    cyclic(num_tones, &[(1, -1.0), (0, 2.0), (-1, -1.0)])
}

pub fn make_three_tone_2<T: Real>(num_tones: usize) -> Result<DovCoefficients<T>, DovError> {
    if num_tones < 3 {
        return Err(DovError::TooFewTones { min: 3, got: num_tones });
    }
    cyclic(num_tones, &[(0, 2.0), (1, -1.0), (2, -1.0)])
}

/// `s_k = t_k - t_{perm[k]}`; `perm` must be a derangement of `0..K`.
pub fn make_two_tone_perm<T: Real>(perm: &[usize]) -> Result<DovCoefficients<T>, DovError> {
    let k_len = perm.len();
    if k_len < 2 {
        return Err(DovError::TooFewTones { min: 2, got: k_len });
    }
    let mut seen = vec![false; k_len];
    for (k, &p) in perm.iter().enumerate() {
        if p >= k_len || seen[p] {
            return Err(DovError::Structure("not a permutation".into()));
        }
        if p == k {
            return Err(DovError::Structure(format!("fixed point at tone {k}")));
        }
        seen[p] = true;
    }
    let rows = perm
        .iter()
        .enumerate()
        .map(|(k, &p)| vec![(k, T::one()), (p, -T::one())])
        .collect();
    DovCoefficients::from_rows(k_len, rows)
}

/// Seeded random derangement; permutations with a fixed point are redrawn.
pub fn random_derangement(num_tones: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..num_tones).collect();
    loop {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(k, &p)| k != p) {
            return perm;
        }
    }
}

pub fn make_two_tone_rand<T: Real>(num_tones: usize, seed: u64) -> Result<DovCoefficients<T>, DovError> {
    if num_tones < 2 {
        return Err(DovError::TooFewTones { min: 2, got: num_tones });
    }
    make_two_tone_perm(&random_derangement(num_tones, seed))
}

/// Power difference variables `t[k][n]`, tone-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffVars<T> {
    num_users: usize,
    values: Vec<T>,
}

impl<T: Real> DiffVars<T> {
    pub fn zeros(num_users: usize, num_tones: usize) -> Self {
        DiffVars { num_users, values: vec![T::zero(); num_users * num_tones] }
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize) -> T {
        self.values[k * self.num_users + n]
    }

    #[inline]
    pub fn set(&mut self, k: usize, n: usize, v: T) {
        self.values[k * self.num_users + n] = v;
    }

    pub fn reset_user(&mut self, n: usize) {
        let users = self.num_users;
        for (i, v) in self.values.iter_mut().enumerate() {
            if i % users == n {
                *v = T::zero();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DovViolation {
    /// Transform, scenario and totals disagree on N or K.
    Dimension,
    /// Column `j` of user `user` does not sum to zero.
    ColumnSum { user: usize, column: usize, sum: f64 },
    /// `sum_k gamma_k * P_tot` differs from the user's tracked total.
    GammaSum { user: usize, sum: f64, expected: f64 },
    /// `beta_k(k) <= 0`.
    Diagonal { user: usize, tone: usize },
    /// `gamma_k` outside `[0, mask_k / P_tot]`.
    GammaBound { user: usize, tone: usize, gamma: f64 },
}

/// Per-user coefficients plus the offsets `gamma[k][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DovTransform<T = f64> {
    num_users: usize,
    num_tones: usize,
    users: Vec<DovCoefficients<T>>,
    gamma: Vec<T>,
}

impl<T: Real> DovTransform<T> {
    /// `gamma` is tone-major (`k * N + n`).
    pub fn new(users: Vec<DovCoefficients<T>>, gamma: Vec<T>) -> Result<Self, DovError> {
        let num_users = users.len();
        let num_tones = users.first().map_or(0, DovCoefficients::num_tones);
        if num_users == 0 || users.iter().any(|u| u.num_tones() != num_tones) {
            return Err(DovError::Dimension("users disagree on tone count".into()));
        }
        if gamma.len() != num_users * num_tones {
            return Err(DovError::Dimension(format!(
                "gamma has {} entries, expected {}",
                gamma.len(),
                num_users * num_tones
            )));
        }
        Ok(DovTransform { num_users, num_tones, users, gamma })
    }

    /// Same coefficients for every user and `gamma = 1/K` (equal power).
    pub fn uniform(coeffs: DovCoefficients<T>, num_users: usize) -> Result<Self, DovError> {
        let num_tones = coeffs.num_tones();
        let g = T::one() / T::from_usize(num_tones).unwrap();
        Self::new(vec![coeffs; num_users], vec![g; num_users * num_tones])
    }

    /// Same coefficients for every user with the given offsets.
    pub fn shared(coeffs: DovCoefficients<T>, gamma: Vec<T>) -> Result<Self, DovError> {
        let num_tones = coeffs.num_tones();
        if num_tones == 0 || gamma.len() % num_tones != 0 {
            return Err(DovError::Dimension("gamma length is not a multiple of K".into()));
        }
        let users = gamma.len() / num_tones;
        Self::new(vec![coeffs; users], gamma)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_tones(&self) -> usize {
        self.num_tones
    }

    pub fn coefficients(&self, n: usize) -> &DovCoefficients<T> {
        &self.users[n]
    }

    #[inline]
    pub fn gamma(&self, k: usize, n: usize) -> T {
        self.gamma[k * self.num_users + n]
    }

    pub fn set_gamma(&mut self, k: usize, n: usize, g: T) {
        self.gamma[k * self.num_users + n] = g;
    }

    /// Spectrum row of user `n`: `s_k = sum_{j in B_k} beta_k(j) t_j + P_tot gamma_k`.
    pub fn apply(&self, t: &DiffVars<T>, scenario: &Scenario<T>, n: usize) -> Vec<T> {
        let p = scenario.budget(n);
        let coeffs = &self.users[n];
        (0..self.num_tones)
            .map(|k| {
                let mut s = p * self.gamma(k, n);
                for &(j, b) in coeffs.row(k) {
                    s += b * t.get(j, n);
                }
                s
            })
            .collect()
    }

    /// Checks the construction-time conditions (offsets summing to one).
    pub fn validate(&self, scenario: &Scenario<T>) -> Result<(), Vec<DovViolation>> {
        let totals: Vec<T> = scenario.budgets().to_vec();
        self.validate_against_totals(scenario, &totals)
    }

    /// Checks zero column sums, positive diagonals, the gamma mask bound and
    /// `P_tot * sum_k gamma_k == totals[n]`.
    pub fn validate_against_totals(&self, scenario: &Scenario<T>, totals: &[T]) -> Result<(), Vec<DovViolation>> {
        let mut out = Vec::new();
        if scenario.num_users() != self.num_users || scenario.num_tones() != self.num_tones || totals.len() != self.num_users {
            return Err(vec![DovViolation::Dimension]);
        }
        let eps = T::lit(1e-12);
        let slack = T::feasibility_tol();
        for n in 0..self.num_users {
            let coeffs = &self.users[n];
            for j in 0..self.num_tones {
                let col = coeffs.col(j);
                let sum: T = col.iter().map(|(_, b)| *b).sum();
                let scale = col.iter().fold(T::zero(), |acc, (_, b)| acc.max(b.abs()));
                if sum.abs() > eps.max(T::epsilon() * T::lit(8.0)) * scale.max(T::one()) {
                    out.push(DovViolation::ColumnSum { user: n, column: j, sum: sum.as_f64() });
                }
            }
            for k in 0..self.num_tones {
                if !(coeffs.beta(k, k) > T::zero()) {
                    out.push(DovViolation::Diagonal { user: n, tone: k });
                }
            }
            let p = scenario.budget(n);
            let mut gamma_sum = T::zero();
            for k in 0..self.num_tones {
                let g = self.gamma(k, n);
                gamma_sum += g;
                let upper = scenario.mask(k, n) / p;
                if !(g >= T::zero()) || g > upper * (T::one() + slack) {
                    out.push(DovViolation::GammaBound { user: n, tone: k, gamma: g.as_f64() });
                }
            }
            let expected = totals[n];
            if (gamma_sum * p - expected).abs() > slack * expected.max(p) {
                out.push(DovViolation::GammaSum {
                    user: n,
                    sum: (gamma_sum * p).as_f64(),
                    expected: expected.as_f64(),
                });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::flat_scenario;
    use crate::model::ConstraintMode;

    fn scenario(num_tones: usize, budget: f64) -> Scenario<f64> {
        flat_scenario(&[1.0], 0.0, 1.0, 100.0, &[budget], num_tones, ConstraintMode::Equality)
    }

    fn vars(t: &[f64]) -> DiffVars<f64> {
        let mut v = DiffVars::zeros(1, t.len());
        for (k, x) in t.iter().enumerate() {
            v.set(k, 0, *x);
        }
        v
    }

    #[test]
    fn factories_validate() {
        for k in 3..12 {
            for kind in [
                DovKind::TwoTone,
                DovKind::ThreeTone,
                DovKind::TwoToneRand { seed: k as u64 },
                DovKind::ThreeTone2,
            ] {
                let tr = DovTransform::uniform(kind.coefficients::<f64>(k).unwrap(), 1).unwrap();
                assert_eq!(tr.validate(&scenario(k, 3.0)), Ok(()), "{kind:?} K={k}");
            }
        }
        let tr = DovTransform::uniform(make_two_tone::<f64>(2).unwrap(), 1).unwrap();
        assert_eq!(tr.validate(&scenario(2, 1.0)), Ok(()));
    }

    #[test]
    fn two_tone_structure() {
        let c = make_two_tone::<f64>(3).unwrap();
        // 1-based beta_2(2) = +1, beta_2(1) = -1
        assert_eq!(c.beta(1, 1), 1.0);
        assert_eq!(c.beta(1, 0), -1.0);
        // t_1 appears in s_1 and s_2
        assert_eq!(c.a_set(0), vec![0, 1]);
        for k in 0..3 {
            assert_eq!(c.b_set(k).len(), 2);
            assert_eq!(c.a_set(k).len(), 2);
        }
        assert_eq!(make_two_tone::<f64>(1), Err(DovError::TooFewTones { min: 2, got: 1 }));
    }

    #[test]
    fn two_tone_apply() {
        let tr = DovTransform::uniform(make_two_tone::<f64>(3).unwrap(), 1).unwrap();
        let sc = scenario(3, 3.0);
        let s = tr.apply(&vars(&[0.5, 0.0, 0.0]), &sc, 0);
        assert_eq!(s, vec![1.5, 0.5, 1.0]);
        assert_eq!(tr.apply(&vars(&[0.0; 3]), &sc, 0), vec![1.0; 3]);
    }

    #[test]
    fn three_tone_apply() {
        let c = make_three_tone::<f64>(4).unwrap();
        assert_eq!(c.beta(1, 1), 2.0);
        assert_eq!(c.b_set(1).len(), 3);
        let tr = DovTransform::uniform(c, 1).unwrap();
        let s = tr.apply(&vars(&[1.0, 0.0, 0.0, 0.0]), &scenario(4, 4.0), 0);
        assert_eq!(s, vec![3.0, 0.0, 1.0, 0.0]);
        assert!(make_three_tone::<f64>(2).is_err());
    }

    #[test]
    fn three_tone_2_apply() {
        let c = make_three_tone_2::<f64>(4).unwrap();
        for k in 0..4 {
            assert_eq!(c.beta(k, k), 2.0);
        }
        let tr = DovTransform::uniform(c, 1).unwrap();
        let s = tr.apply(&vars(&[1.0, 0.0, 0.0, 0.0]), &scenario(4, 4.0), 0);
        // wrap rows: s_3 = 2t_3 - t_4 - t_1, s_4 = 2t_4 - t_1 - t_2 (1-based)
        assert_eq!(s, vec![3.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.iter().sum::<f64>(), 4.0);
        assert!(make_three_tone_2::<f64>(2).is_err());
    }

    #[test]
    fn two_tone_rand_apply() {
        // 1-based pi = (3, 4, 1, 2)
        let c = make_two_tone_perm::<f64>(&[2, 3, 0, 1]).unwrap();
        let tr = DovTransform::uniform(c, 1).unwrap();
        let s = tr.apply(&vars(&[1.0, 0.0, 0.0, 0.0]), &scenario(4, 4.0), 0);
        assert_eq!(s, vec![2.0, 1.0, 0.0, 1.0]);

        // cyclic shift reproduces two-tone
        let shift: Vec<usize> = (0..5).map(|k| (k + 4) % 5).collect();
        assert_eq!(make_two_tone_perm::<f64>(&shift).unwrap(), make_two_tone::<f64>(5).unwrap());

        assert!(make_two_tone_perm::<f64>(&[0, 2, 1]).is_err());
        assert!(make_two_tone_perm::<f64>(&[1, 1, 0]).is_err());
    }

    #[test]
    fn derangement_is_deterministic() {
        let a = random_derangement(50, 7);
        assert_eq!(a, random_derangement(50, 7));
        assert_ne!(a, random_derangement(50, 8));
        assert!(a.iter().enumerate().all(|(k, p)| k != *p));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(random_derangement(2, 1), vec![1, 0]);
    }

    #[test]
    fn validate_flags_violations() {
        // zero diagonal at tone 1
        let rows = vec![
            vec![(0, 1.0), (1, -1.0)],
            vec![(0, -1.0), (2, 1.0)],
            vec![(1, 1.0), (2, -1.0)],
        ];
        let c = DovCoefficients::from_rows(3, rows).unwrap();
        let tr = DovTransform::uniform(c, 1).unwrap();
        let errs = tr.validate(&scenario(3, 3.0)).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, DovViolation::Diagonal { tone: 1, .. })));

        // nonzero column sum
        let c = DovCoefficients::from_rows(2, vec![vec![(0, 1.0)], vec![(1, 1.0), (0, -0.5)]]).unwrap();
        let tr = DovTransform::uniform(c, 1).unwrap();
        let errs = tr.validate(&scenario(2, 1.0)).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, DovViolation::ColumnSum { column: 0, .. })));

        // gamma not summing to one, and gamma above mask / P_tot
        let mut tr = DovTransform::uniform(make_two_tone::<f64>(3).unwrap(), 1).unwrap();
        tr.set_gamma(0, 0, 0.5);
        let errs = tr.validate(&scenario(3, 3.0)).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, DovViolation::GammaSum { .. })));
        tr.set_gamma(0, 0, 40.0);
        let errs = tr.validate(&scenario(3, 3.0)).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, DovViolation::GammaBound { tone: 0, .. })));
    }

    #[test]
    fn validate_against_reduced_totals() {
        let mut tr = DovTransform::uniform(make_two_tone::<f64>(4).unwrap(), 1).unwrap();
        for k in 0..4 {
            tr.set_gamma(k, 0, 0.125);
        }
        let sc = scenario(4, 4.0);
        assert!(tr.validate(&sc).is_err());
        assert_eq!(tr.validate_against_totals(&sc, &[2.0]), Ok(()));
    }

    #[test]
    fn index_set_duality() {
        for kind in [DovKind::TwoTone, DovKind::ThreeTone, DovKind::TwoToneRand { seed: 3 }, DovKind::ThreeTone2] {
            let c = kind.coefficients::<f64>(9).unwrap();
            for k in 0..9 {
                for j in 0..9 {
                    assert_eq!(c.b_set(k).contains(&j), c.a_set(j).contains(&k));
                }
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in [DovKind::TwoTone, DovKind::ThreeTone, DovKind::TwoToneRand { seed: 9 }, DovKind::ThreeTone2] {
            assert_eq!(DovKind::parse(kind.name(), 9).unwrap(), kind);
        }
        assert!(DovKind::parse("four-tone", 0).is_err());
    }
}
