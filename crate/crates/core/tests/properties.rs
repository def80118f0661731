use game_lab::ekernels::{feedback_law, solve_e_system_with, E2Storage};
use game_lab::riccati::systemic_prob_closed_form;
use game_lab::simulate::{simulate_closed_loop, SimConfig};
use game_lab::{GameParams, SystemicRiskQuery};
use proptest::prelude::*;

fn admissible() -> impl Strategy<Value = GameParams> {
    (2usize..7, 0.2f64..2.0, 0.0f64..1.5, 0.1f64..2.0, 0.0f64..1.0, 1usize..4)
        .prop_map(|(n, sigma, q, extra, c, lag)| GameParams::new(n, sigma, q, q * q + extra, c, 1.0, 0.1 * lag as f64))
        .prop_filter("standing condition", |p| p.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_boundaries_hold_exactly(p in admissible()) {
        let k = solve_e_system_with(&p, 0.05, E2Storage::Full).unwrap();
        prop_assert!(k.boundary_residual().unwrap() <= 1e-12);
        for n in [0, k.steps() / 2, k.steps()] {
            for j in 0..=k.lags {
                for l in 0..=k.lags {
                    prop_assert_eq!(k.e2_at(n, j, l).unwrap(), k.e2_at(n, l, j).unwrap());
                }
            }
        }
        prop_assert!(k.fixed_point_residual().unwrap() <= 1e-10);
    }

    #[test]
    fn equilibrium_clears(p in admissible(), seed in 0u64..1000, spread in -1.0f64..1.0) {
        let n = p.n_players;
        let p = p.with_reserves((0..n).map(|i| spread * i as f64).collect());
        let law = feedback_law(&solve_e_system_with(&p, 0.05, E2Storage::Compact).unwrap());
        let b = simulate_closed_loop(&p, &law, &SimConfig::new(0.05, 8, seed)).unwrap();
        prop_assert!(b.max_clearing_residual() <= 1e-10);
    }

    #[test]
    fn costs_ignore_a_common_shift(p in admissible(), shift in -5.0f64..5.0, seed in 0u64..1000) {
        let n = p.n_players;
        let xi: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 - 0.5).collect();
        let law = feedback_law(&solve_e_system_with(&p, 0.05, E2Storage::Compact).unwrap());
        let cfg = SimConfig::new(0.05, 4, seed);
        let a = simulate_closed_loop(&p.clone().with_reserves(xi.clone()), &law, &cfg).unwrap();
        let b = simulate_closed_loop(&p.with_reserves(xi.iter().map(|x| x + shift).collect()), &law, &cfg).unwrap();
        for (x, y) in a.costs.iter().zip(&b.costs) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn closed_form_depends_only_on_level_players_noise_horizon(
        p in admissible(), q in 0.0f64..3.0, eps in 0.1f64..9.0, c in 0.0f64..5.0, tau in 0.0f64..1.0, d in -2.0f64..0.0,
    ) {
        let query = SystemicRiskQuery::new(d).unwrap();
        let mut other = p.clone().with_delay(tau);
        other.q = q;
        other.epsilon = eps;
        other.c = c;
        prop_assert_eq!(systemic_prob_closed_form(&p, &query).unwrap(), systemic_prob_closed_form(&other, &query).unwrap());
    }
}
