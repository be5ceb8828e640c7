use iforge::conic::{check_residuals, mat_to_svec, solve, Cone, ConicProblem, Method, Settings, Status};
use nalgebra::DMatrix;
use proptest::prelude::*;

const R2: f64 = std::f64::consts::SQRT_2;

/// Strictly primal and dual feasible problem over `Nonneg(k) × Psd(n)`.
fn random_problem(seed: Vec<f64>, k: usize, n: usize, m: usize) -> ConicProblem {
    let dim = k + n * (n + 1) / 2;
    let mut it = seed.into_iter().cycle();
    let mut next = || it.next().unwrap();
    let a: Vec<f64> = (0..m * dim).map(|_| next()).collect();
    let pd = |next: &mut dyn FnMut() -> f64| -> Vec<f64> {
        let l = DMatrix::from_fn(n, n, |_, _| next());
        let x = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
        let mut v = vec![0.0; n * (n + 1) / 2];
        mat_to_svec(&x, &mut v);
        v
    };
    let mut x0: Vec<f64> = (0..k).map(|_| 0.5 + next().abs()).collect();
    x0.extend(pd(&mut next));
    let mut s0: Vec<f64> = (0..k).map(|_| 0.5 + next().abs()).collect();
    s0.extend(pd(&mut next));
    let y0: Vec<f64> = (0..m).map(|_| next()).collect();
    let b: Vec<f64> = (0..m).map(|i| (0..dim).map(|j| a[i * dim + j] * x0[j]).sum()).collect();
    let c: Vec<f64> = (0..dim)
        .map(|j| s0[j] + (0..m).map(|i| a[i * dim + j] * y0[i]).sum::<f64>())
        .collect();
    let trip: Vec<(usize, usize, f64)> = (0..m)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, a[i * dim + j]))
        .collect();
    ConicProblem::from_triplets(c, m, &trip, b, vec![Cone::Nonneg(k), Cone::Psd(n)]).unwrap()
}

fn objective(p: &ConicProblem, x: &[f64]) -> f64 {
    p.c.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn dual_objective(p: &ConicProblem, y: &[f64]) -> f64 {
    p.b.iter().zip(y).map(|(a, b)| a * b).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weak_duality_on_optimal_pairs(seed in prop::collection::vec(-1.0f64..1.0, 40)) {
        let p = random_problem(seed, 3, 3, 4);
        let sol = solve(&p, &Settings::default()).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        let (pv, dv) = (objective(&p, &sol.x), dual_objective(&p, &sol.y));
        prop_assert!((pv - dv).abs() <= 1e-6 * (1.0 + pv.abs() + dv.abs()), "{pv} vs {dv}");
        let rep = check_residuals(&p, &sol).unwrap();
        prop_assert!(rep.primal <= 1e-6 && rep.dual <= 1e-6 && rep.gap <= 1e-6, "{rep:?}");
        prop_assert!(rep.psd_floors.iter().all(|&f| f >= -1e-7));
    }

    #[test]
    fn objective_scaling_keeps_status_and_point(seed in prop::collection::vec(-1.0f64..1.0, 40), s in 0.1f64..10.0) {
        let p = random_problem(seed, 2, 3, 3);
        let mut q = p.clone();
        q.c.iter_mut().for_each(|v| *v *= s);
        let a = solve(&p, &Settings::default()).unwrap();
        let b = solve(&q, &Settings::default()).unwrap();
        prop_assert_eq!(a.status, b.status);
        let (fa, fb) = (objective(&p, &a.x), objective(&q, &b.x));
        prop_assert!((fb - s * fa).abs() <= 1e-5 * (1.0 + fb.abs()), "{fb} vs {}", s * fa);
    }

    #[test]
    fn deterministic(seed in prop::collection::vec(-1.0f64..1.0, 40)) {
        let p = random_problem(seed, 2, 2, 3);
        let a = solve(&p, &Settings::default()).unwrap();
        let b = solve(&p, &Settings::default()).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.y, b.y);
        prop_assert_eq!(a.iterations, b.iterations);
    }
}

#[test]
fn admm_agrees_with_interior_point() {
    let p = random_problem((0..40).map(|i| ((i * 37 % 17) as f64 / 8.5) - 1.0).collect(), 2, 2, 3);
    let ipm = solve(&p, &Settings::default()).unwrap();
    let admm = solve(
        &p,
        &Settings {
            method: Method::Admm,
            ..Settings::default()
        },
    )
    .unwrap();
    assert_eq!(ipm.status, Status::Optimal);
    assert_eq!(admm.status, Status::Optimal);
    let (a, b) = (objective(&p, &ipm.x), objective(&p, &admm.x));
    assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn analytic_suite() {
    // min x  s.t. [[x,1],[1,x]] ⪰ 0  →  x* = 1
    let det = ConicProblem::from_triplets(
        vec![1.0, 0.0, 0.0, 0.0],
        3,
        &[(0, 1, 1.0), (0, 0, -1.0), (1, 3, 1.0), (1, 0, -1.0), (2, 2, 1.0 / R2)],
        vec![0.0, 0.0, 1.0],
        vec![Cone::Free(1), Cone::Psd(2)],
    )
    .unwrap();
    let s = solve(&det, &Settings::default()).unwrap();
    assert!((s.x[0] - 1.0).abs() < 1e-6);
    assert!(check_residuals(&det, &s).unwrap().gap <= 1e-6);
    // max t s.t. diag(3,1) − tI ⪰ 0  →  t* = λ_min = 1
    let lmin = ConicProblem::from_triplets(
        vec![-1.0, 0.0, 0.0, 0.0],
        3,
        &[(0, 0, 1.0), (0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 1.0)],
        vec![3.0, 0.0, 1.0],
        vec![Cone::Free(1), Cone::Psd(2)],
    )
    .unwrap();
    let s = solve(&lmin, &Settings::default()).unwrap();
    assert!((s.x[0] - 1.0).abs() < 1e-6);
    assert!(check_residuals(&lmin, &s).unwrap().gap <= 1e-6);
}
