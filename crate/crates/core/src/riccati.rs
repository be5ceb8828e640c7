//! Continuous-time algebraic Riccati equation and LQR gains.
//!
//! The stabilizing solution comes from the matrix sign function of the
//! Hamiltonian, then a few Newton–Kleinman steps polish it to full accuracy.

use nalgebra::{DMatrix, DVector, Matrix1x4, RowVector4};
use thiserror::Error;

use crate::params::VehicleParams;

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("R is not positive definite")]
    RNotPositive,
    #[error("no stabilizing solution (Hamiltonian has eigenvalues near the imaginary axis)")]
    NoStabilizingSolution,
}

#[derive(Debug, Clone)]
pub struct LqrProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// largest real part among eigenvalues of `A − BK`
    pub closed_loop_abscissa: f64,
    /// set when the controllability rank test looks doubtful
    pub warning: Option<String>,
}

/// `AᵀP + PA − PBR⁻¹BᵀP + Q`
pub fn care_residual(prob: &LqrProblem, p: &DMatrix<f64>) -> DMatrix<f64> {
    let rinv = prob
        .r
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::zeros(prob.r.nrows(), prob.r.ncols()));
    let s = &prob.b * rinv * prob.b.transpose();
    prob.a.transpose() * p + p * &prob.a - p * s * p + &prob.q
}

pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn controllability_warning(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<String> {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    // column-normalize so slow and fast modes are comparable
    for mut c in ctrb.column_iter_mut() {
        let nrm = c.norm();
        if nrm > 0.0 {
            c /= nrm;
        }
    }
    let sv = ctrb.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(1.0)).count();
    (rank < n).then(|| format!("(A, B) controllability rank {rank} < {n}; stabilizability not guaranteed"))
}

fn validate(prob: &LqrProblem) -> Result<(), RiccatiError> {
    let n = prob.a.nrows();
    let m = prob.b.ncols();
    if prob.a.ncols() != n || prob.b.nrows() != n || prob.q.shape() != (n, n) || prob.r.shape() != (m, m) {
        return Err(RiccatiError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            prob.a.shape(),
            prob.b.shape(),
            prob.q.shape(),
            prob.r.shape()
        )));
    }
    let rs = (&prob.r + prob.r.transpose()) * 0.5;
    if rs.cholesky().is_none() {
        return Err(RiccatiError::RNotPositive);
    }
    Ok(())
}

fn sign_function(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n2 = h.nrows();
    let mut z = h.clone();
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant().abs();
        let zinv = lu.try_inverse()?;
        let c = if det.is_finite() && det > 0.0 {
            det.powf(1.0 / n2 as f64)
        } else {
            1.0
        };
        let next = (&z / c + zinv * c) * 0.5;
        let delta = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if delta < 1e-13 {
            break;
        }
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

/// `FᵀX + XF = −W`, by vectorization.
fn lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let ft = f.transpose();
    let big = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, w.iter().map(|v| -v));
    let x = big.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

pub fn solve_care(prob: &LqrProblem) -> Result<LqrSolution, RiccatiError> {
    validate(prob)?;
    let n = prob.a.nrows();
    let rinv = prob.r.clone().try_inverse().ok_or(RiccatiError::RNotPositive)?;
    let s = &prob.b * &rinv * prob.b.transpose();
    let q = (&prob.q + prob.q.transpose()) * 0.5;

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&prob.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q));
    h.view_mut((n, n), (n, n)).copy_from(&(-prob.a.transpose()));
    let w = sign_function(&h).ok_or(RiccatiError::NoStabilizingSolution)?;

    // [W12; W22 + I] P = −[W11 + I; W21]
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let svd = lhs.svd(true, true);
    let mut p = svd
        .solve(&rhs, 1e-14)
        .map_err(|_| RiccatiError::NoStabilizingSolution)?;
    p = (&p + p.transpose()) * 0.5;

    // Newton–Kleinman refinement; keep the best iterate
    let mut best = p.clone();
    let mut best_res = care_residual(prob, &p).norm();
    for _ in 0..8 {
        let k = &rinv * prob.b.transpose() * &p;
        let f = &prob.a - &prob.b * &k;
        let wk = &q + k.transpose() * &prob.r * &k;
        let Some(next) = lyapunov(&f, &wk) else { break };
        let res = care_residual(prob, &next).norm();
        p = next;
        if res < best_res {
            best_res = res;
            best = p.clone();
        } else {
            break;
        }
    }
    let p = best;
    let k = &rinv * prob.b.transpose() * &p;
    let abscissa = spectral_abscissa(&(&prob.a - &prob.b * &k));
    if !(abscissa < 0.0) || p.iter().any(|v| !v.is_finite()) {
        return Err(RiccatiError::NoStabilizingSolution);
    }
    Ok(LqrSolution {
        p,
        k,
        closed_loop_abscissa: abscissa,
        warning: controllability_warning(&prob.a, &prob.b),
    })
}

/// LQR problem of the lateral model at one speed.
pub fn lateral_problem(params: &VehicleParams, vf: f64, q: DMatrix<f64>, r: f64) -> LqrProblem {
    let a = params.a1(vf);
    let b = params.b1();
    LqrProblem {
        a: DMatrix::from_iterator(4, 4, a.iter().copied()),
        b: DMatrix::from_column_slice(4, 1, b.as_slice()),
        q,
        r: DMatrix::from_element(1, 1, r),
    }
}

/// Preview-output LQR gain `K̄` with `Q = K_p·CᵀC + K_d·(C A1)ᵀ(C A1)`.
pub fn lk_nominal_gain(
    params: &VehicleParams,
    vf: f64,
    kp: f64,
    kd: f64,
    r: f64,
    c: RowVector4<f64>,
) -> Result<(RowVector4<f64>, LqrSolution), RiccatiError> {
    let a = params.a1(vf);
    let ca: Matrix1x4<f64> = c * a;
    let qm = c.transpose() * c * kp + ca.transpose() * ca * kd;
    let mut q = DMatrix::from_iterator(4, 4, qm.iter().copied());
    if q.clone().cholesky().is_none() {
        q += DMatrix::identity(4, 4) * 1e-9;
    }
    let sol = solve_care(&lateral_problem(params, vf, q, r))?;
    let k = RowVector4::new(sol.k[(0, 0)], sol.k[(0, 1)], sol.k[(0, 2)], sol.k[(0, 3)]);
    Ok((k, sol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> LqrProblem {
        LqrProblem {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            q: DMatrix::from_element(1, 1, q),
            r: DMatrix::from_element(1, 1, r),
        }
    }

    #[test]
    fn scalar_unstable() {
        let s = solve_care(&scalar(1.0, 1.0, 1.0, 1.0)).unwrap();
        let x = 1.0 + 2f64.sqrt();
        assert!((s.p[(0, 0)] - x).abs() < 1e-12);
        assert!((s.k[(0, 0)] - x).abs() < 1e-12);
    }

    #[test]
    fn integrator() {
        let s = solve_care(&scalar(0.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((s.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((s.closed_loop_abscissa + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_r() {
        assert!(matches!(
            solve_care(&scalar(1.0, 1.0, 1.0, -1.0)),
            Err(RiccatiError::RNotPositive)
        ));
    }

    #[test]
    fn uncontrollable_unstable_mode_fails() {
        let p = LqrProblem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            b: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            q: DMatrix::identity(2, 2),
            r: DMatrix::identity(1, 1),
        };
        assert!(solve_care(&p).is_err());
    }

    #[test]
    fn nominal_gain_defaults() {
        let params = VehicleParams::default();
        let (k, sol) = lk_nominal_gain(&params, 20.0, 5.0, 0.4, 600.0, RowVector4::new(1.0, 0.0, 10.0, 0.0)).unwrap();
        assert!(sol.closed_loop_abscissa < 0.0);
        assert!(k[0] > 0.0);
        let prob = lateral_problem(&params, 20.0, DMatrix::identity(4, 4), 1.0);
        let res = care_residual(&prob, &solve_care(&prob).unwrap().p).norm();
        assert!(res < 1e-8, "{res}");
    }
}
