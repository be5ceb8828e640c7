//! Physics-based barrier for adaptive cruise control.
//!
//! `h_acc = D − τ_d·v_f − D0 − ĥ(v_f, v_l)` where `ĥ` is the worst-case
//! headway deficit: the lead brakes at `ℓ` to a stop, the follower at the
//! effective deceleration `ω`, and
//!
//! `ĥ = max_{t ≥ 0} ∫₀ᵗ (v_f(s) − v_l(s)) ds + τ_d·(v_f(t) − v_f)`.
//!
//! The maximizer is `t = 0` or a stationary point of the margin function,
//! which gives three smooth pieces glued along the loci where two of them
//! tie.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{Bounds, VehicleParams};

#[derive(Debug, Error, PartialEq)]
pub enum AccError {
    #[error("effective deceleration â_f = {0:.6} is not positive; the coupling bound dominates braking")]
    NonPositiveDecel(f64),
    #[error("invalid barrier parameter: {0}")]
    Param(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccBarrierParams {
    pub tau_d: f64,
    pub d0: f64,
    /// follower effective deceleration `â_f·g`, m/s²
    pub omega: f64,
    /// lead worst-case deceleration `a_l·g`, m/s²
    pub ell: f64,
    pub gamma: f64,
}

/// `â_f = a_f + F_r(v̲)/(m·g) − ν_m·r_m/g`
pub fn effective_decel(vehicle: &VehicleParams, bounds: &Bounds) -> Result<f64, AccError> {
    let a = bounds.a_f + vehicle.drag(bounds.v_lo) / (vehicle.m * vehicle.g) - bounds.nu_r_max() / vehicle.g;
    if a > 0.0 && a.is_finite() {
        Ok(a)
    } else {
        Err(AccError::NonPositiveDecel(a))
    }
}

impl AccBarrierParams {
    pub fn new(vehicle: &VehicleParams, bounds: &Bounds, gamma: f64) -> Result<Self, AccError> {
        let af = effective_decel(vehicle, bounds)?;
        let p = AccBarrierParams {
            tau_d: bounds.tau_d,
            d0: bounds.d0,
            omega: af * vehicle.g,
            ell: bounds.a_l * vehicle.g,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AccError> {
        if !(self.omega > 0.0 && self.ell > 0.0) {
            return Err(AccError::Param("ω and ℓ must be positive".into()));
        }
        if !(self.tau_d >= 0.0 && self.d0 >= 0.0 && self.gamma > 0.0) {
            return Err(AccError::Param("τ_d, D0 must be nonnegative and γ positive".into()));
        }
        Ok(())
    }
}

/// Margin function `M(t)` evaluated in closed form.
fn margin(p: &AccBarrierParams, vf: f64, vl: f64, t: f64) -> f64 {
    let (w, l) = (p.omega, p.ell);
    let tf = vf / w;
    let tl = vl / l;
    let mf = t.min(tf);
    let ml = t.min(tl);
    let pf = vf * mf - 0.5 * w * mf * mf;
    let pl = vl * ml - 0.5 * l * ml * ml;
    let vft = (vf - w * t).max(0.0);
    pf - pl + p.tau_d * (vft - vf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    /// maximum at `t = 0`: `ĥ = 0`
    Rest,
    /// stationary point before either vehicle stops
    BothMoving,
    /// stationary point after the lead stopped
    LeadStopped,
}

pub const PIECES: [Piece; 3] = [Piece::Rest, Piece::BothMoving, Piece::LeadStopped];

#[derive(Debug, Clone, Copy)]
pub struct PieceEval {
    pub piece: Piece,
    /// `None` outside the piece's domain of definition
    pub time: Option<f64>,
    pub value: f64,
    /// `(∂ĥ/∂v_f, ∂ĥ/∂v_l)`
    pub grad: [f64; 2],
}

#[derive(Debug, Clone, Copy)]
pub struct AccBarrier {
    pub params: AccBarrierParams,
}

impl AccBarrier {
    pub fn new(params: AccBarrierParams) -> Self {
        AccBarrier { params }
    }

    /// One piece, with its stationary time if it exists.
    pub fn piece(&self, piece: Piece, vf: f64, vl: f64) -> PieceEval {
        let p = &self.params;
        let (w, l, tau) = (p.omega, p.ell, p.tau_d);
        let vf = vf.max(0.0);
        let vl = vl.max(0.0);
        let tf = vf / w;
        let tl = vl / l;
        let none = PieceEval {
            piece,
            time: None,
            value: f64::NEG_INFINITY,
            grad: [0.0, 0.0],
        };
        match piece {
            Piece::Rest => PieceEval {
                piece,
                time: Some(0.0),
                value: 0.0,
                grad: [0.0, 0.0],
            },
            Piece::BothMoving => {
                // M' = (v_f − v_l − τω) − (ω − ℓ)t, a maximum needs ω > ℓ
                if w <= l {
                    return none;
                }
                let t = (vf - vl - tau * w) / (w - l);
                if !(t > 0.0 && t < tf.min(tl)) {
                    return none;
                }
                PieceEval {
                    piece,
                    time: Some(t),
                    value: margin(p, vf, vl, t),
                    grad: [t, -t],
                }
            }
            Piece::LeadStopped => {
                // M' = v_f − τω − ωt after the lead stops
                let t = tf - tau;
                if !(t >= tl && t < tf && t > 0.0) {
                    return none;
                }
                PieceEval {
                    piece,
                    time: Some(t),
                    value: margin(p, vf, vl, t),
                    grad: [t, -tl],
                }
            }
        }
    }

    /// `ĥ` with the maximizing piece.
    pub fn hhat_eval(&self, vf: f64, vl: f64) -> PieceEval {
        PIECES
            .iter()
            .map(|&k| self.piece(k, vf, vl))
            .fold(None, |best: Option<PieceEval>, e| match best {
                Some(b) if b.value >= e.value => Some(b),
                _ => Some(e),
            })
            .expect("at least one piece")
    }

    pub fn hhat(&self, vf: f64, vl: f64) -> f64 {
        self.hhat_eval(vf, vl).value
    }

    /// All pieces within `tol` of the maximum: more than one on a gluing
    /// boundary.
    pub fn active_pieces(&self, vf: f64, vl: f64, tol: f64) -> Vec<PieceEval> {
        let best = self.hhat(vf, vl);
        PIECES
            .iter()
            .map(|&k| self.piece(k, vf, vl))
            .filter(|e| e.value >= best - tol)
            .collect()
    }

    /// `h_acc` at `(v_f, v_l, D)`.
    pub fn h(&self, vf: f64, vl: f64, dist: f64) -> f64 {
        dist - self.params.tau_d * vf - self.params.d0 - self.hhat(vf, vl)
    }
}

/// The deficit computed by brute force: cumulative trapezoid on a time grid
/// containing both stop times (exact for piecewise-linear speeds), then a
/// ternary refinement around the best grid point.
pub fn worst_case_oracle(vf: f64, vl: f64, p: &AccBarrierParams) -> f64 {
    let vf = vf.max(0.0);
    let vl = vl.max(0.0);
    let tf = vf / p.omega;
    let tl = vl / p.ell;
    let horizon = tf.max(tl) + 1.0;
    let speed_f = |t: f64| (vf - p.omega * t).max(0.0);
    let speed_l = |t: f64| (vl - p.ell * t).max(0.0);
    let n = 4000;
    let mut ts: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
    ts.extend([tf, tl]);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut integral = vec![0.0; ts.len()];
    for k in 1..ts.len() {
        let (a, b) = (ts[k - 1], ts[k]);
        let fa = speed_f(a) - speed_l(a);
        let fb = speed_f(b) - speed_l(b);
        integral[k] = integral[k - 1] + 0.5 * (b - a) * (fa + fb);
    }
    let value = |k: usize, t: f64| -> f64 {
        // extend from grid point k to t (no stop time in between)
        let a = ts[k];
        let fa = speed_f(a) - speed_l(a);
        let ft = speed_f(t) - speed_l(t);
        integral[k] + 0.5 * (t - a) * (fa + ft) + p.tau_d * (speed_f(t) - vf)
    };
    let (mut best_k, mut best) = (0, 0.0);
    for k in 0..ts.len() {
        let v = value(k, ts[k]);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    for side in [-1i64, 1] {
        let j = best_k as i64 + side;
        if j < 0 || j as usize >= ts.len() {
            continue;
        }
        let (k0, lo0, hi0) = if side < 0 {
            (j as usize, ts[j as usize], ts[best_k])
        } else {
            (best_k, ts[best_k], ts[j as usize])
        };
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..100 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if value(k0, m1) < value(k0, m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        best = best.max(value(k0, 0.5 * (lo + hi)));
    }
    best.max(0.0)
}

/// Generic glued barrier: smooth pieces with signed region margins
/// (`≥ 0` inside). Adjacent pieces must agree on shared boundaries.
pub struct PiecewiseBarrier {
    pub pieces: Vec<GluedPiece>,
}

pub struct GluedPiece {
    pub name: String,
    pub value: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub grad: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    pub region: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub gamma: f64,
}

impl PiecewiseBarrier {
    /// Value of the first piece whose region contains `x`.
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        self.pieces.iter().find(|p| (p.region)(x) >= 0.0).map(|p| (p.value)(x))
    }

    pub fn active(&self, x: &[f64], tol: f64) -> Vec<usize> {
        (0..self.pieces.len())
            .filter(|&i| (self.pieces[i].region)(x) >= -tol)
            .collect()
    }

    /// Largest disagreement between the pieces active at `x`.
    pub fn gluing_gap(&self, x: &[f64], tol: f64) -> f64 {
        let vals: Vec<f64> = self.active(x, tol).iter().map(|&i| (self.pieces[i].value)(x)).collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if vals.len() < 2 {
            0.0
        } else {
            hi - lo
        }
    }

    /// Admissible inputs `{u : ∇h_i·(f + g·u) + γ_i·h_i ≥ 0}` intersected over
    /// active pieces, for a scalar input within `[u_lo, u_hi]`.
    pub fn input_interval(
        &self,
        x: &[f64],
        drift: &[f64],
        input: &[f64],
        u_lo: f64,
        u_hi: f64,
        tol: f64,
    ) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (u_lo, u_hi);
        for i in self.active(x, tol) {
            let p = &self.pieces[i];
            let g = (p.grad)(x);
            let a: f64 = g.iter().zip(input).map(|(a, b)| a * b).sum();
            let b: f64 = g.iter().zip(drift).map(|(a, b)| a * b).sum::<f64>() + p.gamma * (p.value)(x);
            // a·u + b ≥ 0
            if a > 0.0 {
                lo = lo.max(-b / a);
            } else if a < 0.0 {
                hi = hi.min(-b / a);
            } else if b < 0.0 {
                return None;
            }
        }
        (lo <= hi).then_some((lo, hi))
    }
}

/// Glued `h_acc` over `(v_f, v_l, D)`.
pub fn build_barrier(params: AccBarrierParams) -> PiecewiseBarrier {
    let bar = AccBarrier::new(params);
    let pieces = PIECES
        .iter()
        .map(|&k| {
            let b1 = bar;
            let b2 = bar;
            let b3 = bar;
            let tau = params.tau_d;
            let d0 = params.d0;
            GluedPiece {
                name: format!("{k:?}"),
                value: Box::new(move |x: &[f64]| x[2] - tau * x[0] - d0 - b1.piece(k, x[0], x[1]).value),
                grad: Box::new(move |x: &[f64]| {
                    let e = b2.piece(k, x[0], x[1]);
                    vec![-tau - e.grad[0], -e.grad[1], 1.0]
                }),
                region: Box::new(move |x: &[f64]| {
                    let own = b3.piece(k, x[0], x[1]).value;
                    let other = PIECES
                        .iter()
                        .filter(|&&j| j != k)
                        .map(|&j| b3.piece(j, x[0], x[1]).value)
                        .fold(f64::NEG_INFINITY, f64::max);
                    if own == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        own - other
                    }
                }),
                gamma: params.gamma,
            }
        })
        .collect();
    PiecewiseBarrier { pieces }
}

/// Longitudinal context for the barrier row.
#[derive(Debug, Clone, Copy)]
pub struct LongitudinalModel {
    pub vehicle: VehicleParams,
    pub bounds: Bounds,
}

impl LongitudinalModel {
    pub fn u_min(&self) -> f64 {
        -self.bounds.a_f * self.vehicle.m * self.vehicle.g
    }

    pub fn u_max(&self) -> f64 {
        self.bounds.a_f_acc * self.vehicle.m * self.vehicle.g
    }

    pub fn a_lead_min(&self) -> f64 {
        -self.bounds.a_l * self.vehicle.g
    }

    pub fn a_lead_max(&self) -> f64 {
        self.bounds.a_l_acc * self.vehicle.g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputSet {
    pub h: f64,
    pub interval: Option<(f64, f64)>,
    pub active: Vec<Piece>,
    /// `|νr|` exceeded the coupling bound
    pub coupling_breach: bool,
}

/// Barrier row per active piece: `a·u2 ≤ b` with `a = −L_g h`,
/// `b = L_f h + γ h` evaluated at the worst lead acceleration.
pub fn barrier_rows(
    bar: &AccBarrier,
    model: &LongitudinalModel,
    x2: [f64; 3],
    nu_r: f64,
) -> Vec<(Piece, f64, f64, f64)> {
    let [vf, vl, dist] = x2;
    let veh = &model.vehicle;
    let p = &bar.params;
    let mut rows = Vec::new();
    for e in bar.active_pieces(vf, vl, 1e-9) {
        let dh_dvf = -p.tau_d - e.grad[0];
        let dh_dvl = -e.grad[1];
        let h = dist - p.tau_d * vf - p.d0 - e.value;
        // ĥ is nonincreasing in v_l, so the lead braking hardest is worst
        let a_l = if dh_dvl >= 0.0 {
            model.a_lead_min()
        } else {
            model.a_lead_max()
        };
        let lf = (vl - vf) + dh_dvf * (-veh.drag(vf) / veh.m - nu_r) + dh_dvl * a_l;
        let lg = dh_dvf / veh.m;
        rows.push((e.piece, -lg, lf + p.gamma * h, h));
    }
    rows
}

pub fn barrier_input_set(bar: &AccBarrier, model: &LongitudinalModel, x2: [f64; 3], nu_r: f64) -> InputSet {
    let rows = barrier_rows(bar, model, x2, nu_r);
    let (mut lo, mut hi) = (model.u_min(), model.u_max());
    let mut empty = false;
    for &(_, a, b, _) in &rows {
        if a > 0.0 {
            hi = hi.min(b / a);
        } else if a < 0.0 {
            lo = lo.max(b / a);
        } else if b < 0.0 {
            empty = true;
        }
    }
    InputSet {
        h: bar.h(x2[0], x2[1], x2[2]),
        interval: (!empty && lo <= hi).then_some((lo, hi)),
        active: rows.iter().map(|r| r.0).collect(),
        coupling_breach: nu_r.abs() > model.bounds.nu_r_max() + 1e-12,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccWitness {
    pub check: &'static str,
    pub state: [f64; 3],
    pub a_lead: f64,
    pub nu_r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccReport {
    pub p1_state: Option<[f64; 3]>,
    pub p2_min: f64,
    pub p3_min: f64,
    pub p3_checked: usize,
    pub witnesses: Vec<AccWitness>,
    pub pass: bool,
}

/// Grid checks of nonemptiness, `ĥ ≥ 0`, and the barrier row at its best
/// admissible input for every disturbance endpoint, over
/// `v_f ∈ [v̲, v̄]`, `v_l ∈ [0, v̄]`, `h ∈ {0, small, large}`.
pub fn verify_acc_properties(bar: &AccBarrier, model: &LongitudinalModel, grid: usize) -> AccReport {
    verify_acc_on(bar, model, grid, model.bounds.v_lo)
}

/// As [`verify_acc_properties`] with the follower-speed floor of the
/// barrier-row domain given explicitly.
pub fn verify_acc_on(bar: &AccBarrier, model: &LongitudinalModel, grid: usize, vf_floor: f64) -> AccReport {
    let b = &model.bounds;
    let p = &bar.params;
    let veh = &model.vehicle;
    let mut witnesses = Vec::new();
    let p1_state = {
        let (vf, vl) = (b.v_lo, b.v_lo);
        let d = p.tau_d * vf + p.d0 + bar.hhat(vf, vl) + 1.0;
        (bar.h(vf, vl, d) >= 0.0).then_some([vf, vl, d])
    };
    let mut p2_min = f64::INFINITY;
    let mut p3_min = f64::INFINITY;
    let mut p3_checked = 0;
    let n = grid.max(2);
    for i in 0..n {
        let vf = vf_floor + (b.v_hi - vf_floor) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let vl = b.v_hi * j as f64 / (n - 1) as f64;
            let hh = bar.hhat(vf, vl);
            if vl >= b.v_lo && vf >= b.v_lo {
                p2_min = p2_min.min(hh);
                if hh < 0.0 && witnesses.len() < 8 {
                    witnesses.push(AccWitness {
                        check: "ACC-P2",
                        state: [vf, vl, f64::NAN],
                        a_lead: 0.0,
                        nu_r: 0.0,
                        value: hh,
                    });
                }
            }
            for slack in [0.0, 0.5, 20.0] {
                let dist = p.tau_d * vf + p.d0 + hh + slack;
                if dist > 500.0 {
                    continue;
                }
                for a_lead in [model.a_lead_min(), model.a_lead_max()] {
                    for nu_r in [-b.nu_r_max(), b.nu_r_max()] {
                        for e in bar.active_pieces(vf, vl, 1e-9) {
                            let dh_dvf = -p.tau_d - e.grad[0];
                            let dh_dvl = -e.grad[1];
                            let h = dist - p.tau_d * vf - p.d0 - e.value;
                            let row = |u: f64| {
                                (vl - vf) + dh_dvf * ((u - veh.drag(vf)) / veh.m - nu_r) + dh_dvl * a_lead + p.gamma * h
                            };
                            let v = row(model.u_min()).max(row(model.u_max()));
                            p3_checked += 1;
                            p3_min = p3_min.min(v);
                            if v < -1e-6 && witnesses.len() < 8 {
                                witnesses.push(AccWitness {
                                    check: "ACC-P3",
                                    state: [vf, vl, dist],
                                    a_lead,
                                    nu_r,
                                    value: v,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    let pass = p1_state.is_some() && p2_min >= 0.0 && p3_min >= -1e-6;
    AccReport {
        p1_state,
        p2_min,
        p3_min,
        p3_checked,
        witnesses,
        pass,
    }
}

/// Worst case from a boundary state: lead brakes at `a_l·g` to a stop, the
/// follower decelerates at exactly `ω` (its braking input net of drag and
/// coupling). Returns the smallest `D − τ_d·v_f − D0` along the way.
pub fn worst_case_rollout(p: &AccBarrierParams, ell: f64, x2: [f64; 3], dt: f64) -> f64 {
    let [mut vf, mut vl, mut dist] = x2;
    let mut worst = dist - p.tau_d * vf - p.d0;
    let horizon = vf / p.omega + vl / ell + 5.0;
    let steps = (horizon / dt).ceil() as usize;
    for _ in 0..steps {
        // exact for constant decelerations clipped at standstill
        let adv = |v: f64, a: f64| -> (f64, f64) {
            let t_stop = v / a;
            if t_stop >= dt {
                (v - a * dt, v * dt - 0.5 * a * dt * dt)
            } else {
                (0.0, 0.5 * v * t_stop)
            }
        };
        let (vf1, sf) = adv(vf, p.omega);
        let (vl1, sl) = adv(vl, ell);
        dist += sl - sf;
        vf = vf1;
        vl = vl1;
        worst = worst.min(dist - p.tau_d * vf - p.d0);
        if vf == 0.0 && vl == 0.0 {
            break;
        }
    }
    worst
}
