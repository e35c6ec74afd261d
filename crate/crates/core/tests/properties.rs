use proptest::prelude::*;

use rtdsm::dov::{DiffVars, DovKind, DovTransform};
use rtdsm::ipdb::{self, InitPower, SolverConfig, ToneOrder};
use rtdsm::model::{bit_rate, check_feasible, weighted_objective, BitEvalCounter, ConstraintMode, Scenario, ScenarioParts};
use rtdsm::procedures::equalize_row;

/// Random N-user, K-tone instance with log-uniform gains and noise.
fn scenario_strategy(max_users: usize, max_tones: usize) -> impl Strategy<Value = Scenario> {
    (1..=max_users, 4..=max_tones).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-3.0f64..0.0, k * n * n),
            prop::collection::vec(-4.0f64..-1.0, k * n),
            prop::collection::vec(0.1f64..1.0, n),
            prop::collection::vec(0.5f64..2.0, n),
        )
            .prop_map(move |(g, z, w, p)| {
                Scenario::new(ScenarioParts {
                    num_users: n,
                    num_tones: k,
                    weights: w,
                    gains: g.iter().map(|e| 10f64.powf(*e)).collect(),
                    noise: z.iter().map(|e| 10f64.powf(*e)).collect(),
                    // loose enough that any budget fits
                    masks: vec![2.0; k * n],
                    budgets: p,
                    tone_spacing: 4312.5,
                    symbol_rate: 4000.0,
                    constraint_mode: ConstraintMode::Equality,
                })
                .unwrap()
            })
    })
}

fn kind_strategy() -> impl Strategy<Value = DovKind> {
    prop_oneof![
        Just(DovKind::TwoTone),
        Just(DovKind::ThreeTone),
        any::<u64>().prop_map(|seed| DovKind::TwoToneRand { seed }),
        Just(DovKind::ThreeTone2),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_grows_with_own_power_and_falls_with_interference(
        sc in scenario_strategy(3, 6),
        col in prop::collection::vec(0.0f64..1.0, 3),
        bump in 1e-6f64..0.5,
    ) {
        let n_users = sc.num_users();
        let col = &col[..n_users];
        let mut c = BitEvalCounter::new();
        for k in 0..sc.num_tones() {
            for n in 0..n_users {
                let base = bit_rate(&sc, col, n, k, &mut c).unwrap();
                let mut own = col.to_vec();
                own[n] += bump;
                prop_assert!(bit_rate(&sc, &own, n, k, &mut c).unwrap() > base);
                for m in (0..n_users).filter(|m| *m != n) {
                    let mut other = col.to_vec();
                    other[m] += bump;
                    prop_assert!(bit_rate(&sc, &other, n, k, &mut c).unwrap() <= base);
                }
            }
        }
    }

    #[test]
    fn transform_is_affine_in_t(
        k_len in 4usize..40,
        kind in kind_strategy(),
        xs in prop::collection::vec(-1.0f64..1.0, 40),
        ys in prop::collection::vec(-1.0f64..1.0, 40),
        budget in 0.1f64..10.0,
    ) {
        let sc = Scenario::new(ScenarioParts {
            num_users: 1,
            num_tones: k_len,
            weights: vec![1.0],
            gains: vec![0.0; k_len],
            noise: vec![1.0; k_len],
            masks: vec![budget; k_len],
            budgets: vec![budget],
            tone_spacing: 4312.5,
            symbol_rate: 4000.0,
            constraint_mode: ConstraintMode::Equality,
        }).unwrap();
        let tr = DovTransform::uniform(kind.coefficients(k_len).unwrap(), 1).unwrap();
        let (mut a, mut b, mut sum) = (DiffVars::zeros(1, k_len), DiffVars::zeros(1, k_len), DiffVars::zeros(1, k_len));
        for j in 0..k_len {
            let (x, y) = (xs[j] * budget, ys[j] * budget);
            a.set(j, 0, x);
            b.set(j, 0, y);
            sum.set(j, 0, x + y);
        }
        let zero = tr.apply(&DiffVars::zeros(1, k_len), &sc, 0);
        let (sa, sb, ss) = (tr.apply(&a, &sc, 0), tr.apply(&b, &sc, 0), tr.apply(&sum, &sc, 0));
        for k in 0..k_len {
            let lin = sa[k] + sb[k] - zero[k];
            prop_assert!((ss[k] - lin).abs() <= 1e-12 * budget * 10.0);
        }
    }

    #[test]
    fn equalization_keeps_power_when_masks_are_slack(
        row in prop::collection::vec(-60.0f64..0.0, 4..64),
    ) {
        let mut s: Vec<f64> = row.iter().map(|d| 10f64.powf(d / 10.0)).collect();
        let before: f64 = s.iter().sum();
        let masks = vec![1e6; s.len()];
        let out = equalize_row(&mut s, &masks, ConstraintMode::Equality);
        prop_assert!(!out.aborted);
        let after: f64 = s.iter().sum();
        prop_assert!((after - before).abs() <= 1e-9 * before);
        prop_assert!(s.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn ipdb_output_is_feasible_and_no_worse_than_start(
        sc in scenario_strategy(3, 12),
        kind in kind_strategy(),
        seed in 0u64..1000,
        rp in any::<bool>(),
    ) {
        let tr = DovTransform::uniform(kind.coefficients(sc.num_tones()).unwrap(), sc.num_users()).unwrap();
        let cfg = SolverConfig {
            tone_order: ToneOrder::To4,
            init_power: if rp { InitPower::Rp } else { InitPower::Ep },
            seed,
            max_outer: 15,
            ..Default::default()
        };
        let (s, trace) = ipdb::run(&sc, &tr, &cfg).unwrap();
        prop_assert!(check_feasible(&sc, &s).unwrap().is_empty());
        let direct = weighted_objective(&sc, &s, &mut BitEvalCounter::new()).unwrap();
        prop_assert!((direct - trace.summary.objective).abs() <= 1e-9 * direct.abs().max(1.0));
        prop_assert!(trace.summary.objective >= trace.outers[0].objective - 1e-12 * direct.abs());
    }

    #[test]
    fn scenario_json_round_trip(sc in scenario_strategy(3, 8)) {
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        prop_assert_eq!(back.num_users(), sc.num_users());
        for k in 0..sc.num_tones() {
            for n in 0..sc.num_users() {
                prop_assert!((back.noise(k, n) - sc.noise(k, n)).abs() <= 1e-12 * sc.noise(k, n));
                prop_assert!((back.mask(k, n) - sc.mask(k, n)).abs() <= 1e-12 * sc.mask(k, n));
                for m in 0..sc.num_users() {
                    if m != n {
                        prop_assert_eq!(back.gain(k, n, m), sc.gain(k, n, m));
                    }
                }
            }
        }
        for n in 0..sc.num_users() {
            prop_assert!((back.budget(n) - sc.budget(n)).abs() <= 1e-12 * sc.budget(n));
        }
    }
}
