//! Runtime safety filters and the assume-guarantee contract monitor.
//!
//! Every filter is a QP in one input plus relaxation variables. Eliminating
//! the relaxations leaves a convex piecewise quadratic in the input, so the
//! minimizer over the admissible interval is the clamp of the unconstrained
//! minimizer.

use nalgebra::{DMatrix, DVector, RowVector4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acc_barrier::{barrier_rows, AccBarrier, LongitudinalModel};
use crate::lk_synthesis::BarrierCertificate;
use crate::params::{Bounds, VehicleParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("longitudinal speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("certificate lives in {0} variables, the lateral state has 4")]
    Certificate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterGains {
    pub gamma1: f64,
    pub gamma2: f64,
    /// CLF rate, 1/s
    pub c: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    /// m/s²
    pub nu_dot_max: f64,
    pub lateral_accel: bool,
    pub speed_rows: bool,
    /// tightening of the ACC barrier rows, in units of ḣ (m/s), so that
    /// zero-order-held inputs keep h ≥ 0 between samples
    pub hold_margin: f64,
}

impl Default for FilterGains {
    fn default() -> Self {
        FilterGains {
            gamma1: 2.0,
            gamma2: 2.0,
            c: 10.0,
            p1: 1000.0,
            p2: 1000.0,
            p3: 100.0,
            nu_dot_max: 0.25,
            lateral_accel: false,
            speed_rows: true,
            hold_margin: 0.02,
        }
    }
}

impl FilterGains {
    pub fn validate(&self) -> Result<(), String> {
        for (k, v) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("c", self.c),
            ("p1", self.p1),
            ("p2", self.p2),
            ("p3", self.p3),
            ("nu_dot_max", self.nu_dot_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("gains.{k} must be positive, got {v}"));
            }
        }
        if !(self.hold_margin.is_finite() && self.hold_margin >= 0.0) {
            return Err(format!(
                "gains.hold_margin must be nonnegative, got {}",
                self.hold_margin
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterOutput {
    pub u: f64,
    /// relaxation of the nominal (LK) or of the CLF row (ACC)
    pub delta: f64,
    /// lateral-acceleration relaxation, when those rows are enabled
    pub delta3: f64,
    pub cbf_row_active: bool,
    pub clf_row_active: bool,
    pub feasible: bool,
}

/// Scalar rows `a·u ≤ b` intersected with `[lo, hi]`.
fn interval(rows: &[(f64, f64)], lo: f64, hi: f64) -> (f64, f64, bool) {
    let (mut lo, mut hi) = (lo, hi);
    let mut ok = true;
    for &(a, b) in rows {
        if a > 0.0 {
            hi = hi.min(b / a);
        } else if a < 0.0 {
            lo = lo.max(b / a);
        } else if b < 0.0 {
            ok = false;
        }
    }
    (lo, hi, ok && lo <= hi)
}

fn rows_hold(rows: &[(f64, f64)], u: f64, tol: f64) -> bool {
    rows.iter().all(|&(a, b)| a * u <= b + tol * (1.0 + b.abs()))
}

/// Best-effort point when the hard rows and the box do not intersect: the
/// box point closest to satisfying the most violated row.
fn fallback(rows: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let score = |u: f64| rows.iter().map(|&(a, b)| (a * u - b).max(0.0)).fold(0.0, f64::max);
    if score(lo) <= score(hi) {
        lo
    } else {
        hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectOutput {
    pub u: f64,
    pub modified: bool,
    pub feasible: bool,
}

/// Closest admissible input to `u_nom`: halfspace projection, then the box.
pub fn project_filter(u_nom: f64, rows: &[(f64, f64)], lo: f64, hi: f64) -> ProjectOutput {
    let (l, h, ok) = interval(rows, lo, hi);
    if ok {
        let u = u_nom.clamp(l, h);
        ProjectOutput {
            u,
            modified: u != u_nom,
            feasible: true,
        }
    } else {
        let u = fallback(rows, lo, hi);
        ProjectOutput {
            u,
            modified: true,
            feasible: false,
        }
    }
}

pub fn lateral_field(vehicle: &VehicleParams, x1: &[f64; 4], vf: f64, u1: f64, d: f64) -> Vector4<f64> {
    vehicle.a1(vf) * Vector4::from(*x1) + vehicle.b1() * u1 + vehicle.e1() * d
}

/// `(A_lk, b_lk)` of the row `A_lk·u ≤ b_lk`.
pub fn lk_cbf_row(
    x1: &[f64; 4],
    vf: f64,
    d: f64,
    cert: &BarrierCertificate,
    vehicle: &VehicleParams,
    gamma1: f64,
) -> Result<(f64, f64), FilterError> {
    if !(vf > 0.0) {
        return Err(FilterError::NonPositiveSpeed(vf));
    }
    if cert.hhat.vars().len() < 4 {
        return Err(FilterError::Certificate(cert.hhat.vars().len()));
    }
    let g = cert.grad_h(x1);
    let grad = RowVector4::new(g[0], g[1], g[2], g[3]);
    let drift = vehicle.a1(vf) * Vector4::from(*x1) + vehicle.e1() * d;
    let lg = (grad * vehicle.b1())[0];
    let lf = (grad * drift)[0];
    Ok((-lg, lf + gamma1 * cert.h(x1)))
}

/// `u_nom = −K̄(x1 − [0, 0, 0, d])`.
pub fn lk_nominal(kbar: &RowVector4<f64>, x1: &[f64; 4], d: f64) -> f64 {
    let e = Vector4::new(x1[0], x1[1], x1[2], x1[3] - d);
    -(kbar * e)[0]
}

/// Rows `a_u·u + a_3·δ3 ≤ b` bounding `|ν̇|` by `ν̇_max + δ3`.
pub fn lateral_accel_rows(
    x1: &[f64; 4],
    vf: f64,
    d: f64,
    vehicle: &VehicleParams,
    gains: &FilterGains,
) -> [(f64, f64, f64); 2] {
    let f0 = lateral_field(vehicle, x1, vf, 0.0, d)[1];
    let g = vehicle.b1()[1];
    [(g, -1.0, gains.nu_dot_max - f0), (-g, -1.0, gains.nu_dot_max + f0)]
}

/// Lane-keeping filter: `min ½u² + ½p2·δ² (+ ½p3·δ3²)` with `u = u_nom + δ`,
/// the CBF row and `|u| ≤ δ̂_f`.
#[allow(clippy::too_many_arguments)]
pub fn lk_filter(
    x1: &[f64; 4],
    vf: f64,
    d: f64,
    u_nom: f64,
    cert: &BarrierCertificate,
    vehicle: &VehicleParams,
    gains: &FilterGains,
    bounds: &Bounds,
) -> Result<FilterOutput, FilterError> {
    let (a, b) = lk_cbf_row(x1, vf, d, cert, vehicle, gains.gamma1)?;
    let p2 = gains.p2;
    let free = if gains.lateral_accel {
        let f0 = lateral_field(vehicle, x1, vf, 0.0, d)[1];
        let g = vehicle.b1()[1];
        let nm = gains.nu_dot_max;
        let p3 = gains.p3;
        let obj = |u: f64| {
            let ex = ((f0 + g * u).abs() - nm).max(0.0);
            0.5 * u * u + 0.5 * p2 * (u - u_nom) * (u - u_nom) + 0.5 * p3 * ex * ex
        };
        let inside = p2 * u_nom / (1.0 + p2);
        let upper = (p2 * u_nom - p3 * g * (f0 - nm)) / (1.0 + p2 + p3 * g * g);
        let lower = (p2 * u_nom - p3 * g * (f0 + nm)) / (1.0 + p2 + p3 * g * g);
        let tol = 1e-12 * (1.0 + nm);
        let cands = [
            (inside, (f0 + g * inside).abs() <= nm + tol),
            (upper, f0 + g * upper >= nm - tol),
            (lower, f0 + g * lower <= -nm + tol),
        ];
        cands
            .iter()
            .filter(|c| c.1)
            .map(|c| c.0)
            .min_by(|x, y| obj(*x).total_cmp(&obj(*y)))
            .unwrap_or(inside)
    } else {
        p2 * u_nom / (1.0 + p2)
    };
    let rows = [(a, b)];
    let (lo, hi, ok) = interval(&rows, -bounds.delta_f, bounds.delta_f);
    let u = if ok {
        free.clamp(lo, hi)
    } else {
        fallback(&rows, -bounds.delta_f, bounds.delta_f)
    };
    let delta3 = if gains.lateral_accel {
        let f0 = lateral_field(vehicle, x1, vf, 0.0, d)[1];
        ((f0 + vehicle.b1()[1] * u).abs() - gains.nu_dot_max).max(0.0)
    } else {
        0.0
    };
    Ok(FilterOutput {
        u,
        delta: u - u_nom,
        delta3,
        cbf_row_active: (a * u - b).abs() <= 1e-9 * (1.0 + b.abs()),
        clf_row_active: false,
        feasible: ok && rows_hold(&rows, u, 1e-9),
    })
}

/// Hard rows of the cruise filter: barrier rows of the active pieces and, when
/// enabled, the speed-bound rows.
pub fn acc_rows(
    x2: [f64; 3],
    nu_r: f64,
    bar: &AccBarrier,
    model: &LongitudinalModel,
    gains: &FilterGains,
) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let cbf: Vec<(f64, f64)> = barrier_rows(bar, model, x2, nu_r)
        .iter()
        .map(|r| (r.1, r.2 - gains.hold_margin))
        .collect();
    let mut speed = Vec::new();
    if gains.speed_rows {
        let veh = &model.vehicle;
        let b = &model.bounds;
        let vf = x2[0];
        let base = veh.drag(vf) + veh.m * nu_r;
        // v̄ − v_f ≥ 0 and v_f − v̲ ≥ 0 as barriers with gain γ2
        speed.push((1.0, base + veh.m * gains.gamma2 * (b.v_hi - vf)));
        speed.push((-1.0, -(base - veh.m * gains.gamma2 * (vf - b.v_lo))));
    }
    (cbf, speed)
}

/// Affine CLF row `α + β·u ≤ δ` for `V = (v_f − v_d)²`.
pub fn acc_clf_row(x2: [f64; 3], nu_r: f64, model: &LongitudinalModel, gains: &FilterGains, v_d: f64) -> (f64, f64) {
    let veh = &model.vehicle;
    let e = x2[0] - v_d;
    let lf = 2.0 * e * (-veh.drag(x2[0]) / veh.m - nu_r);
    let lg = 2.0 * e / veh.m;
    (lf + gains.c * e * e, lg)
}

/// Cruise filter: `min ½(u²/m² + p1·δ²) − (F_r/m²)·u` subject to the CLF soft row,
/// the hard rows and `u ∈ U_acc`. Speed rows yield to the barrier rows if
/// both cannot hold.
pub fn acc_filter(
    x2: [f64; 3],
    nu_r: f64,
    bar: &AccBarrier,
    model: &LongitudinalModel,
    gains: &FilterGains,
    v_d: f64,
) -> FilterOutput {
    let veh = &model.vehicle;
    let m2 = veh.m * veh.m;
    let fr = veh.drag(x2[0]);
    let (alpha, beta) = acc_clf_row(x2, nu_r, model, gains, v_d);
    let (cbf, speed) = acc_rows(x2, nu_r, bar, model, gains);
    let (ulo, uhi) = (model.u_min(), model.u_max());
    let mut rows: Vec<(f64, f64)> = cbf.iter().chain(&speed).copied().collect();
    let (mut lo, mut hi, mut ok) = interval(&rows, ulo, uhi);
    if !ok && !speed.is_empty() {
        rows = cbf.clone();
        (lo, hi, ok) = interval(&rows, ulo, uhi);
    }
    // unconstrained minimizer: CLF row slack or binding
    let free = if alpha + beta * fr <= 0.0 {
        fr
    } else {
        (fr / m2 - gains.p1 * beta * alpha) / (1.0 / m2 + gains.p1 * beta * beta)
    };
    let u = if ok {
        free.clamp(lo, hi)
    } else {
        fallback(&cbf, ulo, uhi)
    };
    let slack = alpha + beta * u;
    FilterOutput {
        u,
        delta: slack.max(0.0),
        delta3: 0.0,
        cbf_row_active: cbf.iter().any(|&(a, b)| (a * u - b).abs() <= 1e-9 * (1.0 + b.abs())),
        clf_row_active: slack > 0.0,
        feasible: ok && rows_hold(&cbf, u, 1e-9),
    }
}

/// Dense convex QP `min ½zᵀQz + qᵀz  s.t.  Gz ≤ h, Ez = f` by enumerating
/// active sets. Exponential in the number of rows; for small reference
/// problems only.
pub fn dense_qp(
    q: &DMatrix<f64>,
    lin: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = q.nrows();
    let mi = g.nrows();
    let me = e.nrows();
    assert!(mi <= 20, "active-set enumeration limited to 20 rows");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << mi) {
        let act: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let k = me + act.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(q);
        for i in 0..n {
            rhs[i] = -lin[i];
        }
        for r in 0..me {
            for j in 0..n {
                kkt[(n + r, j)] = e[(r, j)];
                kkt[(j, n + r)] = e[(r, j)];
            }
            rhs[n + r] = f[r];
        }
        for (t, &r) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + t, j)] = g[(r, j)];
                kkt[(j, n + me + t)] = g[(r, j)];
            }
            rhs[n + me + t] = h[r];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            continue;
        };
        // near-singular systems can return a point that solves nothing
        if (&kkt * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        let feasible = (0..mi).all(|r| (g.row(r) * &z)[0] <= h[r] + 1e-10 * (1.0 + h[r].abs()))
            && (0..me).all(|r| ((e.row(r) * &z)[0] - f[r]).abs() <= 1e-10 * (1.0 + f[r].abs()));
        let duals_ok = (0..act.len()).all(|t| sol[n + me + t] >= -1e-10);
        if !(feasible && duals_ok) {
            continue;
        }
        let obj = 0.5 * (z.transpose() * q * &z)[0] + lin.dot(&z);
        if best.as_ref().is_none_or(|b| obj < b.0 - 1e-14 * (1.0 + obj.abs())) {
            best = Some((obj, z));
        }
    }
    best.map(|b| b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    /// an external input left its assumed range
    Assumption,
    /// a promised property failed while every assumption held so far
    Guarantee,
    /// a promised property failed after an assumption breach
    Excused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub what: &'static str,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorInput {
    pub x1: [f64; 4],
    pub x2: [f64; 3],
    pub u1: f64,
    pub u2: f64,
    pub d: f64,
    pub a_lead: f64,
    pub h_lk: f64,
    pub h_acc: f64,
}

/// Contract checks for one sample. `breached` carries assumption breaches
/// across samples: once set, guarantee failures are reported as excused.
pub struct ContractMonitor {
    pub vehicle: VehicleParams,
    pub bounds: Bounds,
    pub tol: f64,
    pub breached: bool,
}

impl ContractMonitor {
    pub fn new(vehicle: VehicleParams, bounds: Bounds) -> Self {
        ContractMonitor {
            vehicle,
            bounds,
            tol: 1e-3,
            breached: false,
        }
    }

    pub fn check(&mut self, s: &MonitorInput) -> Vec<Violation> {
        let b = &self.bounds;
        let veh = &self.vehicle;
        let tol = self.tol;
        let mut out = Vec::new();
        let small = 1e-9;
        let assume = |what, value: f64, lo: f64, hi: f64, out: &mut Vec<Violation>| {
            if value < lo - small || value > hi + small {
                out.push(Violation {
                    kind: ViolationKind::Assumption,
                    what,
                    value,
                    limit: if value < lo { lo } else { hi },
                });
            }
        };
        assume("d within ±d_max", s.d, -b.d_max, b.d_max, &mut out);
        assume(
            "a_L within [−a_l·g, a_l'·g]",
            s.a_lead,
            -b.a_l * veh.g,
            b.a_l_acc * veh.g,
            &mut out,
        );
        assume("v_l ≥ v̲", s.x2[1], b.v_lo, f64::INFINITY, &mut out);
        if !out.is_empty() {
            self.breached = true;
        }
        let kind = if self.breached {
            ViolationKind::Excused
        } else {
            ViolationKind::Guarantee
        };
        let mut promise = |what, value: f64, lo: f64, hi: f64, slack: f64| {
            if value < lo - slack || value > hi + slack {
                out.push(Violation {
                    kind,
                    what,
                    value,
                    limit: if value < lo { lo } else { hi },
                });
            }
        };
        let [y, nu, dpsi, r] = s.x1;
        let [vf, vl, dist] = s.x2;
        promise("v_f ∈ [v̲, v̄]", vf, b.v_lo, b.v_hi, tol);
        promise("|νr| ≤ ν_m·r_m", (nu * r).abs(), 0.0, b.nu_r_max(), small);
        promise("|y| ≤ y_m", y.abs(), 0.0, b.y_m, small);
        promise("|ν| ≤ ν_m", nu.abs(), 0.0, b.nu_m, small);
        promise("|Δψ| ≤ Δψ_m", dpsi.abs(), 0.0, b.dpsi_m, small);
        promise("|r| ≤ r_m", r.abs(), 0.0, b.r_m, small);
        promise("h_lk ≥ 0", s.h_lk, 0.0, f64::INFINITY, tol);
        promise("h_acc ≥ 0", s.h_acc, 0.0, f64::INFINITY, tol);
        promise("D ≥ τ_d·v_f + D0", dist - b.tau_d * vf - b.d0, 0.0, f64::INFINITY, tol);
        promise("|u1| ≤ δ̂_f", s.u1.abs(), 0.0, b.delta_f, small);
        let mg = veh.m * veh.g;
        promise("u2 ∈ U_acc", s.u2, -b.a_f * mg, b.a_f_acc * mg, small * mg);
        let _ = vl;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acc_barrier::AccBarrierParams;

    fn model() -> LongitudinalModel {
        LongitudinalModel {
            vehicle: VehicleParams::default(),
            bounds: Bounds::default(),
        }
    }

    #[test]
    fn project_cases() {
        assert_eq!(project_filter(0.5, &[(1.0, 1.0)], -2.0, 2.0).u, 0.5);
        let p = project_filter(1.5, &[(2.0, 1.0)], -2.0, 2.0);
        assert_eq!(p.u * 2.0, 1.0);
        assert!(p.modified && p.feasible);
        assert!(!project_filter(0.0, &[(0.0, -1.0)], -1.0, 1.0).feasible);
    }

    #[test]
    fn dense_qp_small_case() {
        // min ½(z1² + z2²) s.t. z1 + z2 ≥ 1
        let q = DMatrix::identity(2, 2);
        let z = dense_qp(
            &q,
            &DVector::zeros(2),
            &DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]),
            &DVector::from_element(1, -1.0),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
        )
        .unwrap();
        assert!((z[0] - 0.5).abs() < 1e-12 && (z[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dense_qp_rejects_near_singular_active_sets() {
        // lane-keeping QP with lateral-acceleration rows where one active set
        // gives a nearly singular KKT system
        let (f0, g, nm, un) = (-2.859682219202017, 80.60606060606061, 0.25, 0.08270775117662793);
        let (a, b) = (0.8772717123922331, 0.17542205342196343);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1000.0, 100.0]));
        let gm = DMatrix::from_row_slice(5, 3, &[a, 0., 0., 1., 0., 0., -1., 0., 0., g, 0., -1., -g, 0., -1.]);
        let h = DVector::from_vec(vec![b, 0.06, 0.06, nm - f0, nm + f0]);
        let e = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        let z = dense_qp(&q, &DVector::zeros(3), &gm, &h, &e, &DVector::from_element(1, un)).unwrap();
        assert!((z[0] - z[1] - un).abs() < 1e-12);
        assert!((z[0] - 0.038646519186688).abs() < 1e-12, "{z}");
    }

    #[test]
    fn acc_equilibrium_and_tracking() {
        let m = model();
        let bar = AccBarrier::new(AccBarrierParams::new(&m.vehicle, &m.bounds, 2.0).unwrap());
        let g = FilterGains::default();
        let out = acc_filter([22.0, 22.0, 1e4], 0.0, &bar, &m, &g, 22.0);
        assert!((out.u - m.vehicle.drag(22.0)).abs() < 1e-9);
        assert_eq!(out.delta, 0.0);
        let out = acc_filter([18.0, 20.0, 1e4], 0.0, &bar, &m, &g, 22.0);
        assert!(out.u > m.vehicle.drag(18.0) && !out.cbf_row_active);
        // closing fast right at the boundary
        let (vf, vl) = (21.0, 15.0);
        let dist = 1.8 * vf + 0.1 + bar.hhat(vf, vl);
        let out = acc_filter([vf, vl, dist], 0.0, &bar, &m, &g, 22.0);
        assert!(
            out.cbf_row_active && out.feasible,
            "{out:?} {:?}",
            acc_rows([vf, vl, dist], 0.0, &bar, &m, &g)
        );
        assert!(out.u < 0.0);
    }

    #[test]
    fn monitor_classifies() {
        let mut mon = ContractMonitor::new(VehicleParams::default(), Bounds::default());
        let base = MonitorInput {
            x1: [0.0; 4],
            x2: [20.0, 20.0, 60.0],
            u1: 0.0,
            u2: 0.0,
            d: 0.0,
            a_lead: 0.0,
            h_lk: 0.1,
            h_acc: 1.0,
        };
        assert!(mon.check(&base).is_empty());
        let v = mon.check(&MonitorInput { u1: 0.1, ..base });
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::Guarantee);
        let v = mon.check(&MonitorInput { d: 0.2, ..base });
        assert!(v.iter().all(|v| v.kind == ViolationKind::Assumption));
        let v = mon.check(&MonitorInput { u1: 0.1, ..base });
        assert_eq!(v[0].kind, ViolationKind::Excused);
    }
}
