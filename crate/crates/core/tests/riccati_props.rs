use iforge::params::VehicleParams;
use iforge::riccati::{care_residual, lateral_problem, lk_nominal_gain, solve_care, LqrProblem};
use nalgebra::{DMatrix, RowVector4};
use proptest::prelude::*;

/// Random system with positive definite weights; a random full `B` is
/// controllable with probability one.
fn system() -> impl Strategy<Value = LqrProblem> {
    (2usize..6, 1usize..3).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-2.0f64..2.0, n * n),
            prop::collection::vec(-2.0f64..2.0, n * m),
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-1.0f64..1.0, m * m),
        )
            .prop_map(move |(a, b, l, s)| {
                let l = DMatrix::from_vec(n, n, l);
                let s = DMatrix::from_vec(m, m, s);
                LqrProblem {
                    a: DMatrix::from_vec(n, n, a),
                    b: DMatrix::from_vec(n, m, b),
                    q: &l * l.transpose() + DMatrix::identity(n, n) * 0.1,
                    r: &s * s.transpose() + DMatrix::identity(m, m) * 0.5,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn care_residual_is_small(prob in system()) {
        let sol = solve_care(&prob).unwrap();
        let res = care_residual(&prob, &sol.p).norm();
        let pn = sol.p.norm();
        prop_assert!(res <= 1e-8 * (1.0 + pn * pn), "residual {res:e}, ‖P‖ {pn:e}");
        prop_assert!(sol.closed_loop_abscissa < 0.0);
    }

    #[test]
    fn gain_matches_riccati_solution(prob in system()) {
        let sol = solve_care(&prob).unwrap();
        let k = prob.r.clone().try_inverse().unwrap() * prob.b.transpose() * &sol.p;
        prop_assert!((&k - &sol.k).norm() <= 1e-10 * (1.0 + k.norm()));
    }

    #[test]
    fn solution_is_a_lyapunov_certificate(prob in system()) {
        let sol = solve_care(&prob).unwrap();
        let p = &sol.p;
        prop_assert!((p - p.transpose()).norm() <= 1e-12 * (1.0 + p.norm()));
        prop_assert!(p.symmetric_eigenvalues().min() > 0.0);
        let f = &prob.a - &prob.b * &sol.k;
        let lyap = f.transpose() * p + p * &f;
        let lmax = ((&lyap + lyap.transpose()) * 0.5).symmetric_eigenvalues().max();
        prop_assert!(lmax < 0.0, "λ_max(FᵀP + PF) = {lmax:e}");
    }
}

#[test]
fn scalar_closed_form() {
    // ẋ = x + u, q = r = 1: P = 1 + √2
    let one = DMatrix::from_element(1, 1, 1.0);
    let prob = LqrProblem {
        a: one.clone(),
        b: one.clone(),
        q: one.clone(),
        r: one,
    };
    let sol = solve_care(&prob).unwrap();
    assert!((sol.p[(0, 0)] - (1.0 + 2f64.sqrt())).abs() <= 1e-12);
    assert!((sol.closed_loop_abscissa + 2f64.sqrt()).abs() <= 1e-12);
}

#[test]
fn lateral_gain_is_stabilizing_over_the_speed_range() {
    let v = VehicleParams::default();
    let c = RowVector4::new(1.0, 0.0, 10.0, 0.0);
    for vf in [10.0, 15.0, 20.0, 25.0, 30.0] {
        let (k, sol) = lk_nominal_gain(&v, vf, 5.0, 0.4, 600.0, c).unwrap();
        let prob = lateral_problem(&v, vf, DMatrix::identity(4, 4), 600.0);
        let kd = DMatrix::from_row_slice(1, 4, k.as_slice());
        let f = &prob.a - &prob.b * kd;
        let abscissa = f
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(abscissa < 0.0, "vf {vf}: {abscissa}");
        assert!((abscissa - sol.closed_loop_abscissa).abs() <= 1e-9);
    }
}
