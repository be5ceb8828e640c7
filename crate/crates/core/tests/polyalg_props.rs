use iforge::polyalg::{Monomial, Polynomial, VarSpace};
use proptest::prelude::*;

fn space() -> VarSpace {
    VarSpace::new(["x", "y", "z"])
}

fn poly() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec(((0u32..3, 0u32..3, 0u32..3), -2.0f64..2.0), 0..7).prop_map(|terms| {
        let v = space();
        Polynomial::from_terms(
            &v,
            terms
                .into_iter()
                .map(|((a, b, c), k)| (Monomial::new(vec![a, b, c]), k)),
        )
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 3)
}

fn rel_eq(a: &Polynomial, b: &Polynomial, tol: f64) -> bool {
    let scale = 1.0 + a.max_abs_coeff().max(b.max_abs_coeff());
    a.approx_eq(b, tol * scale)
}

proptest! {
    #[test]
    fn product_rule(a in poly(), b in poly(), v in 0usize..3) {
        let lhs = (&a * &b).differentiate_at(v);
        let rhs = &a * &b.differentiate_at(v) + &b * &a.differentiate_at(v);
        prop_assert!(rel_eq(&lhs, &rhs, 1e-12), "{lhs:?} vs {rhs:?}");
    }

    #[test]
    fn evaluation_homomorphism(a in poly(), b in poly(), p in point()) {
        let (ea, eb) = (a.eval(&p), b.eval(&p));
        let tol = 1e-12 * (1.0 + ea.abs() + eb.abs()).powi(2);
        prop_assert!(((&a * &b).eval(&p) - ea * eb).abs() <= tol);
        prop_assert!(((&a + &b).eval(&p) - (ea + eb)).abs() <= tol);
        prop_assert!(((&a - &b).eval(&p) - (ea - eb)).abs() <= tol);
    }

    #[test]
    fn canonical_form_idempotent(a in poly(), b in poly()) {
        let c = &a * &b + &a;
        prop_assert_eq!(c.normalized(), c.clone());
        prop_assert!(c.terms().all(|(_, k)| k != 0.0));
        let degs: Vec<u32> = c.terms().map(|(m, _)| m.degree()).collect();
        prop_assert!(degs.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ring_laws(a in poly(), b in poly(), c in poly()) {
        prop_assert!(rel_eq(&(&a * &b), &(&b * &a), 1e-14));
        prop_assert!(rel_eq(&(&(&a * &b) * &c), &(&a * &(&b * &c)), 1e-12));
        prop_assert!(rel_eq(&(&a * &(&b + &c)), &(&(&a * &b) + &(&a * &c)), 1e-12));
        prop_assert!((&a - &a).is_zero());
    }

    #[test]
    fn text_round_trip(a in poly()) {
        let back = Polynomial::from_text(&a.to_text()).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn substitution_composes(a in poly(), p in point()) {
        // a(2y, x + 1, z²) evaluated directly and through substitution
        let v = space();
        let x = Polynomial::var_at(&v, 0);
        let y = Polynomial::var_at(&v, 1);
        let z = Polynomial::var_at(&v, 2);
        let subs = [y.scale(2.0), &x + 1.0, &z * &z];
        let s = a.substitute(&subs).unwrap();
        let direct = a.eval(&[2.0 * p[1], p[0] + 1.0, p[2] * p[2]]);
        prop_assert!((s.eval(&p) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));
    }

    #[test]
    fn lie_derivative_is_gradient_dot_field(a in poly(), p in point()) {
        let v = space();
        let f: Vec<Polynomial> = (0..3).map(|i| Polynomial::var_at(&v, (i + 1) % 3).scale(i as f64 - 1.0)).collect();
        let lie = a.lie_derivative(&f).unwrap();
        let expect: f64 = (0..3).map(|i| a.differentiate_at(i).eval(&p) * f[i].eval(&p)).sum();
        prop_assert!((lie.eval(&p) - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }
}
