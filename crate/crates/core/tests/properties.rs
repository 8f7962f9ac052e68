use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use robustmv_core::admissible::{AdmissibleSet, SetPolicy};
use robustmv_core::calibration::{explore_loss, historical_vol};
use robustmv_core::closed_form::{m_cross, m_optimal, value_function, ScenarioPair};
use robustmv_core::exec::Sequential;
use robustmv_core::model::{
    validate_market, MarketParams, PiecewiseSchedule, ProblemParams, Volatility,
};
use robustmv_core::rng::{self, Purpose};
use robustmv_core::simulator::{simulate, SimConfig, Which};
use robustmv_core::variance::{solve_kstar, variance_no_exploration, variance_with_exploration};

fn diag(vols: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(vols))
}

fn premium(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..1.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_value_on_the_diagonal_is_the_optimal_value(
        rho in premium(3), vols in prop::collection::vec(0.1f64..0.5, 3), c in 0.0f64..2.0, t in 0.25f64..3.0,
    ) {
        let vol = Volatility::new(diag(&vols), 1e-8).unwrap();
        let sched = PiecewiseSchedule::constant(rho.clone(), t).unwrap();
        let a = m_cross(&rho, &rho, &vol, 1.0, 1.2, c, t).unwrap();
        let b = m_optimal(&sched, &vol, 1.0, 1.2, c).unwrap();
        let omega = 1.2 + 0.2 / (rho.iter().map(|x| x * x).sum::<f64>() * t).exp_m1();
        let v = value_function(0.0, 1.0, &sched, &vol, c, omega, 1.2, t).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        prop_assert!((v - b).abs() <= 1e-9 * b.abs().max(1.0), "{v} vs {b}");
    }

    #[test]
    fn classical_variance_matches_direct_formula(rho in premium(2), rho_hat in premium(2), t in 0.25f64..3.0) {
        let q: f64 = rho.iter().map(|x| x * x).sum();
        let p: f64 = rho.iter().zip(&rho_hat).map(|(a, b)| a * b).sum();
        let want = 0.09 * (q * t).exp_m1() / (p * t).exp_m1().powi(2);
        let got = variance_no_exploration(&rho, &rho_hat, 1.0, 1.3, t).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want);
        let zero_c = variance_with_exploration(&rho, &rho_hat, 1.0, 1.3, 0.0, t).unwrap();
        prop_assert!((zero_c.variance - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn kstar_minimizes_along_the_ray(
        rho_hat in premium(3), c in 0.01f64..5.0, t in 0.25f64..5.0, dx in 0.05f64..1.0, k in 0.05f64..2.0,
    ) {
        let ks = solve_kstar(&rho_hat, 1.0, 1.0 + dx, c, t, 1e-12).unwrap().k_star;
        let var = |k: f64| {
            let rho: Vec<f64> = rho_hat.iter().map(|x| k * x).collect();
            variance_with_exploration(&rho, &rho_hat, 1.0, 1.0 + dx, c, t).unwrap().variance
        };
        prop_assert!(ks > 0.5 && ks < 1.0);
        prop_assert!(var(ks) <= var(k) * (1.0 + 1e-12), "k*={ks} k={k}");
    }

    #[test]
    fn ball_projection_is_a_saddle_point(
        center in premium(3), radius_frac in 0.05f64..0.9, seed in 0u64..1000, c in 0.1f64..2.0,
    ) {
        let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
        let set = AdmissibleSet::ball(center, radius_frac * norm);
        let policy = SetPolicy::default();
        let star = set.project_min_norm(3, policy).unwrap();
        let vol = Volatility::new(diag(&[0.2, 0.3, 0.25]), 1e-8).unwrap();
        let top = m_cross(&star, &star, &vol, 1.0, 1.2, c, 1.0).unwrap();
        for rho in set.sample_boundary_and_interior(50, seed, policy).unwrap() {
            let m = m_cross(&rho, &star, &vol, 1.0, 1.2, c, 1.0).unwrap();
            prop_assert!(m <= top + 1e-12, "{m} > {top}");
        }
    }

    #[test]
    fn historical_vol_is_scale_invariant(seed in 0u64..500, scale in 0.01f64..100.0) {
        let mut r = rng::stream(seed, Purpose::Synthetic, 0);
        let mut p = vec![100.0];
        for _ in 0..60 {
            let last = *p.last().unwrap();
            p.push(last * (1.0 + 0.02 * (r.random::<f64>() - 0.5)));
        }
        let scaled: Vec<f64> = p.iter().map(|x| x * scale).collect();
        let a = historical_vol(&p, 20).unwrap();
        let b = historical_vol(&scaled, 20).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn explore_loss_rho_derivative(rho in 0.0f64..3.0, c in 0.001f64..1.0, n in 1usize..300, sigma in 0.05f64..1.0) {
        let h = 1e-6;
        let up = explore_loss(sigma, rho + h, c, n, 1.0).unwrap();
        let dn = explore_loss(sigma, rho - h, c, n, 1.0).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let analytic = -c * rho * (n as f64 + 1.0) / 2.0;
        prop_assert!((fd - analytic).abs() <= 1e-5 * analytic.abs().max(1.0));
    }
}

#[test]
fn simulated_paths_do_not_depend_on_ensemble_size() {
    let market = validate_market(
        &MarketParams::new(diag(&[0.2, 0.3]), vec![0.4, 0.3], 1.0),
        1e-8,
    )
    .unwrap();
    let problem = ProblemParams::new(1.0, 1.2, 0.5).unwrap();
    let scenario = ScenarioPair::new(vec![0.5, 0.4], vec![0.4, 0.3], None).unwrap();
    let small = SimConfig::new(market.clone(), problem, scenario.clone(), 10, 20, 3).unwrap();
    let large = SimConfig::new(market, problem, scenario, 40, 20, 3).unwrap();
    let a = simulate(&small, Which::Misspecified, &Sequential).unwrap();
    let b = simulate(&large, Which::Misspecified, &Sequential).unwrap();
    assert_eq!(a.terminal[..], b.terminal[..10]);
}
