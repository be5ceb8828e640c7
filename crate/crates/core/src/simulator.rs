//! Coupled lateral and longitudinal closed-loop simulation.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::RowVector4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acc_barrier::{AccBarrier, AccBarrierParams, LongitudinalModel};
use crate::lk_synthesis::BarrierCertificate;
use crate::params::{Bounds, VehicleParams};
use crate::riccati::{lk_nominal_gain, RiccatiError};
use crate::safety_filter::{
    acc_filter, lk_filter, lk_nominal, ContractMonitor, FilterGains, MonitorInput, ViolationKind,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("longitudinal speed must be positive, got {0}")]
    NonPositiveSpeed(f64),
    #[error("non-finite state after integration at t = {0}")]
    NonFinite(f64),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Speed floor inside the lateral field, m/s.
pub const VF_FLOOR: f64 = 0.1;

/// `ẋ1` of the lateral-yaw model.
pub fn lateral_derivative(x1: &[f64; 4], vf: f64, u1: f64, d: f64, p: &VehicleParams) -> Result<[f64; 4], SimError> {
    if !(vf > 0.0) {
        return Err(SimError::NonPositiveSpeed(vf));
    }
    let [_, nu, dpsi, r] = *x1;
    let (m, cf, cr, a, b, iz) = (p.m, p.cf, p.cr, p.a, p.b, p.iz);
    Ok([
        nu + vf * dpsi,
        -(cf + cr) / (m * vf) * nu + ((b * cr - a * cf) / (m * vf) - vf) * r + cf / m * u1,
        r - d,
        (b * cr - a * cf) / (iz * vf) * nu - (a * a * cf + b * b * cr) / (iz * vf) * r + a * cf / iz * u1,
    ])
}

/// `ẋ2` for `(v_f, v_l, D)`; drag is counted once. The lead does not reverse.
pub fn longitudinal_derivative(x2: &[f64; 3], u2: f64, a_lead: f64, nu_r: f64, p: &VehicleParams) -> [f64; 3] {
    let [vf, vl, _] = *x2;
    let al = if vl <= 0.0 && a_lead < 0.0 { 0.0 } else { a_lead };
    [(u2 - p.drag(vf)) / p.m - nu_r, al, vl - vf]
}

/// Classical RK4 step.
pub fn rk4_step<const N: usize>(mut f: impl FnMut(&[f64; N]) -> [f64; N], x: &[f64; N], dt: f64) -> [f64; N] {
    let add = |a: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] { std::array::from_fn(|i| a[i] + s * k[i]) };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, 0.5 * dt));
    let k3 = f(&add(x, &k2, 0.5 * dt));
    let k4 = f(&add(x, &k3, dt));
    std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Inputs held over one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldInputs {
    pub u1: f64,
    pub u2: f64,
    pub d: f64,
    pub a_lead: f64,
}

/// Seven-state plant field `(y, ν, Δψ, r, v_f, v_l, D)`; the flag reports
/// clamping of `v_f` in the lateral model.
pub fn plant_field(x: &[f64; 7], inp: &HeldInputs, p: &VehicleParams) -> ([f64; 7], bool) {
    let x1 = [x[0], x[1], x[2], x[3]];
    let clamped = x[4] < VF_FLOOR;
    let vf_lat = x[4].max(VF_FLOOR);
    let dl = lateral_derivative(&x1, vf_lat, inp.u1, inp.d, p).expect("positive after clamping");
    let dx2 = longitudinal_derivative(&[x[4], x[5], x[6]], inp.u2, inp.a_lead, x[1] * x[3], p);
    ([dl[0], dl[1], dl[2], dl[3], dx2[0], dx2[1], dx2[2]], clamped)
}

/// Piecewise-constant signal as `[t_start, value]` steps; zero before the
/// first step.
pub fn step_value(steps: &[[f64; 2]], t: f64) -> f64 {
    steps.iter().filter(|s| s[0] <= t + 1e-12).last().map_or(0.0, |s| s[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Profiles {
    /// road curvature 1/R0 in 1/m; `d = v_f·curvature`
    pub curvature: Vec<[f64; 2]>,
    /// direct yaw-rate disturbance in rad/s, added to the curvature term
    pub yaw_rate: Vec<[f64; 2]>,
    /// lead acceleration in m/s²
    pub lead_accel: Vec<[f64; 2]>,
    /// clip the lead acceleration to its assumed bounds
    pub clip_lead: bool,
}

impl Default for Profiles {
    fn default() -> Self {
        // the lead pulls ahead, brakes at 7 s, speeds up past v_d at 12 s and
        // settles at 18 m/s after 24 s
        Profiles {
            curvature: vec![[20.0, 1.0 / 500.0], [25.0, -1.0 / 400.0], [45.0, 1.0 / 600.0]],
            yaw_rate: vec![],
            lead_accel: vec![
                [0.0, 0.8],
                [5.0, 0.0],
                [7.0, -1.0],
                [11.0, 0.0],
                [12.0, 2.0],
                [15.5, 0.0],
                [24.0, -1.5],
                [28.0, 0.0],
            ],
            clip_lead: true,
        }
    }
}

impl Profiles {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("curvature", &self.curvature),
            ("yaw_rate", &self.yaw_rate),
            ("lead_accel", &self.lead_accel),
        ] {
            if p.iter().flatten().any(|v| !v.is_finite()) {
                return Err(format!("profiles.{name} has a non-finite entry"));
            }
            if p.windows(2).any(|w| w[1][0] < w[0][0]) {
                return Err(format!("profiles.{name} step times must be nondecreasing"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    /// `(y, ν, Δψ, r)` at t = 0
    pub x1: [f64; 4],
    pub vf: f64,
    pub vl: f64,
    pub dist: f64,
    /// s
    pub horizon: f64,
    /// control period, s
    pub ts: f64,
    pub substeps: usize,
    #[serde(skip)]
    pub profiles: Profiles,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            x1: [0.0; 4],
            vf: 18.0,
            vl: 17.0,
            dist: 65.0,
            horizon: 60.0,
            ts: 0.01,
            substeps: 2,
            profiles: Profiles::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(format!("scenario.horizon must be nonnegative, got {}", self.horizon));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(format!("scenario.ts must be positive, got {}", self.ts));
        }
        if self.substeps == 0 {
            return Err("scenario.substeps must be at least 1".into());
        }
        if !(self.vf > 0.0) {
            return Err(format!("scenario.vf must be positive, got {}", self.vf));
        }
        if self.x1.iter().chain([&self.vl, &self.dist]).any(|v| !v.is_finite()) {
            return Err("scenario initial state must be finite".into());
        }
        self.profiles.validate()
    }
}

/// Everything the closed loop needs besides the scenario.
pub struct SimContext {
    pub vehicle: VehicleParams,
    pub bounds: Bounds,
    pub gains: FilterGains,
    pub cert: BarrierCertificate,
    pub acc: AccBarrier,
    pub kbar: RowVector4<f64>,
}

/// Nominal lane-keeping gain: preview output `y + 10·Δψ`, `K_p = 5`,
/// `K_d = 0.4`, `R = 600`, linearized at 20 m/s.
pub fn nominal_gain(vehicle: &VehicleParams) -> Result<RowVector4<f64>, RiccatiError> {
    lk_nominal_gain(vehicle, 20.0, 5.0, 0.4, 600.0, RowVector4::new(1.0, 0.0, 10.0, 0.0)).map(|(k, _)| k)
}

impl SimContext {
    pub fn new(
        vehicle: VehicleParams,
        bounds: Bounds,
        gains: FilterGains,
        cert: BarrierCertificate,
    ) -> Result<Self, String> {
        let acc = AccBarrier {
            params: AccBarrierParams::new(&vehicle, &bounds, gains.gamma2).map_err(|e| e.to_string())?,
        };
        let kbar = nominal_gain(&vehicle).map_err(|e| e.to_string())?;
        Ok(SimContext {
            vehicle,
            bounds,
            gains,
            cert,
            acc,
            kbar,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub x1: [f64; 4],
    pub x2: [f64; 3],
    pub u1: f64,
    pub u2: f64,
    pub d: f64,
    pub a_lead: f64,
    pub h_lk: f64,
    pub h_acc: f64,
    pub headway: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub min_h_lk: f64,
    pub min_h_acc: f64,
    pub max_u1: f64,
    /// `max |u2|/(m·g)`
    pub max_u2_g: f64,
    pub min_headway: f64,
    pub guarantee_violations: usize,
    pub assumption_violations: usize,
    pub excused_violations: usize,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub records: Vec<TraceRecord>,
    pub truncated: Option<String>,
    pub summary: SimSummary,
}

pub fn run_closed_loop(scn: &Scenario, ctx: &SimContext) -> Result<SimTrace, SimError> {
    scn.validate().map_err(SimError::Scenario)?;
    let veh = &ctx.vehicle;
    let b = &ctx.bounds;
    let model = LongitudinalModel {
        vehicle: *veh,
        bounds: *b,
    };
    let mut monitor = ContractMonitor::new(*veh, *b);
    let steps = (scn.horizon / scn.ts).round() as usize;
    let mut x = [scn.x1[0], scn.x1[1], scn.x1[2], scn.x1[3], scn.vf, scn.vl, scn.dist];
    let mut records = Vec::with_capacity(steps + 1);
    let mut truncated = None;
    let mut summary = SimSummary {
        min_h_lk: f64::INFINITY,
        min_h_acc: f64::INFINITY,
        max_u1: 0.0,
        max_u2_g: 0.0,
        min_headway: f64::INFINITY,
        guarantee_violations: 0,
        assumption_violations: 0,
        excused_violations: 0,
        samples: 0,
    };
    let mut clamp_pending = false;
    for k in 0..=steps {
        let t = k as f64 * scn.ts;
        let x1 = [x[0], x[1], x[2], x[3]];
        let x2 = [x[4], x[5], x[6]];
        let p = &scn.profiles;
        let d = x2[0] * step_value(&p.curvature, t) + step_value(&p.yaw_rate, t);
        let mut a_lead = step_value(&p.lead_accel, t);
        if p.clip_lead {
            a_lead = a_lead.clamp(-b.a_l * veh.g, b.a_l_acc * veh.g);
        }
        let mut flags = Vec::new();
        if clamp_pending {
            flags.push("vf_clamped".to_string());
            clamp_pending = false;
        }
        let u_nom = lk_nominal(&ctx.kbar, &x1, d);
        let lk = match lk_filter(&x1, x2[0], d, u_nom, &ctx.cert, veh, &ctx.gains, b) {
            Ok(o) => o,
            Err(e) => {
                truncated = Some(format!("t = {t:.3}: lateral filter failed: {e}"));
                break;
            }
        };
        let acc = acc_filter(x2, x1[1] * x1[3], &ctx.acc, &model, &ctx.gains, b.v_d);
        if !lk.feasible {
            flags.push("lk_infeasible".to_string());
        }
        if !acc.feasible {
            flags.push("acc_infeasible".to_string());
        }
        let h_lk = ctx.cert.h(&x1);
        let h_acc = ctx.acc.h(x2[0], x2[1], x2[2]);
        let headway = x2[2] / x2[0];
        for v in monitor.check(&MonitorInput {
            x1,
            x2,
            u1: lk.u,
            u2: acc.u,
            d,
            a_lead,
            h_lk,
            h_acc,
        }) {
            let tag = match v.kind {
                ViolationKind::Assumption => {
                    summary.assumption_violations += 1;
                    "assumption"
                }
                ViolationKind::Guarantee => {
                    summary.guarantee_violations += 1;
                    "guarantee"
                }
                ViolationKind::Excused => {
                    summary.excused_violations += 1;
                    "excused"
                }
            };
            flags.push(format!("{tag}: {}", v.what));
        }
        summary.min_h_lk = summary.min_h_lk.min(h_lk);
        summary.min_h_acc = summary.min_h_acc.min(h_acc);
        summary.max_u1 = summary.max_u1.max(lk.u.abs());
        summary.max_u2_g = summary.max_u2_g.max(acc.u.abs() / (veh.m * veh.g));
        summary.min_headway = summary.min_headway.min(headway);
        summary.samples += 1;
        records.push(TraceRecord {
            t,
            x1,
            x2,
            u1: lk.u,
            u2: acc.u,
            d,
            a_lead,
            h_lk,
            h_acc,
            headway,
            delta1: lk.delta,
            delta2: acc.delta,
            flags,
        });
        if k == steps {
            break;
        }
        let held = HeldInputs {
            u1: lk.u,
            u2: acc.u,
            d,
            a_lead,
        };
        let dt = scn.ts / scn.substeps as f64;
        for _ in 0..scn.substeps {
            let mut clamped = false;
            x = rk4_step(
                |s| {
                    let (f, c) = plant_field(s, &held, veh);
                    clamped |= c;
                    f
                },
                &x,
                dt,
            );
            clamp_pending |= clamped;
            x[5] = x[5].max(0.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(t + scn.ts));
        }
    }
    Ok(SimTrace {
        records,
        truncated,
        summary,
    })
}

pub const TRACE_HEADER: &str = "t,y,nu,dpsi,r,vf,vl,D,u1,u2,d,aL,h_lk,h_acc,headway,delta1,delta2,flags";

impl SimTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRACE_HEADER}");
        for r in &self.records {
            let vals = [
                r.t, r.x1[0], r.x1[1], r.x1[2], r.x1[3], r.x2[0], r.x2[1], r.x2[2], r.u1, r.u2, r.d, r.a_lead, r.h_lk,
                r.h_acc, r.headway, r.delta1, r.delta2,
            ];
            let row: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{},{}", row.join(","), r.flags.join(";"));
        }
        out
    }

    /// One CSV per figure panel: speeds, lateral states, wheel force,
    /// steering, yaw rate vs disturbance, headway, and both barriers.
    pub fn panels(&self, vehicle: &VehicleParams, bounds: &Bounds) -> Vec<(&'static str, String)> {
        let mg = vehicle.m * vehicle.g;
        type Row = Box<dyn Fn(&TraceRecord) -> Vec<f64>>;
        let (vd, af, afa, df, td) = (bounds.v_d, bounds.a_f, bounds.a_f_acc, bounds.delta_f, bounds.tau_d);
        let specs: Vec<(&'static str, &'static str, Row)> = vec![
            (
                "panel_a_speed.csv",
                "t,vf,vl,vd",
                Box::new(move |r| vec![r.x2[0], r.x2[1], vd]),
            ),
            ("panel_b_lateral.csv", "t,y,nu,dpsi,r", Box::new(|r| r.x1.to_vec())),
            (
                "panel_c_wheel_force.csv",
                "t,u2_over_mg,lower,upper",
                Box::new(move |r| vec![r.u2 / mg, -af, afa]),
            ),
            (
                "panel_d_steering.csv",
                "t,u1,lower,upper",
                Box::new(move |r| vec![r.u1, -df, df]),
            ),
            ("panel_e_yaw_rate.csv", "t,r,d", Box::new(|r| vec![r.x1[3], r.d])),
            (
                "panel_f_headway.csv",
                "t,headway,tau_d",
                Box::new(move |r| vec![r.headway, td]),
            ),
            ("panel_g_h_acc.csv", "t,h_acc,zero", Box::new(|r| vec![r.h_acc, 0.0])),
            ("panel_h_h_lk.csv", "t,h_lk,zero", Box::new(|r| vec![r.h_lk, 0.0])),
        ];
        specs
            .into_iter()
            .map(|(name, header, f)| {
                let mut s = String::new();
                let _ = writeln!(s, "{header}");
                for r in &self.records {
                    let vals: Vec<String> = std::iter::once(r.t).chain(f(r)).map(|v| v.to_string()).collect();
                    let _ = writeln!(s, "{}", vals.join(","));
                }
                (name, s)
            })
            .collect()
    }

    pub fn write_all(&self, dir: &Path, vehicle: &VehicleParams, bounds: &Bounds) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trace.csv"), self.to_csv())?;
        for (name, body) in self.panels(vehicle, bounds) {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

impl SimSummary {
    pub fn report(&self) -> String {
        format!(
            "samples {}\nmin h_lk {:.6e}\nmin h_acc {:.6e}\nmax |u1| {:.6} rad\nmax |u2|/(m g) {:.6}\nmin headway {:.4} s\nguarantee violations {}\nassumption violations {}\nexcused violations {}",
            self.samples,
            self.min_h_lk,
            self.min_h_acc,
            self.max_u1,
            self.max_u2_g,
            self.min_headway,
            self.guarantee_violations,
            self.assumption_violations,
            self.excused_violations
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lateral_equilibrium_and_disturbance() {
        let p = VehicleParams::default();
        assert_eq!(lateral_derivative(&[0.0; 4], 20.0, 0.0, 0.0, &p).unwrap(), [0.0; 4]);
        assert_eq!(
            lateral_derivative(&[0.0; 4], 20.0, 0.0, 0.1, &p).unwrap(),
            [0.0, 0.0, -0.1, 0.0]
        );
        assert!(lateral_derivative(&[0.0; 4], 0.0, 0.0, 0.0, &p).is_err());
    }

    #[test]
    fn drag_balance() {
        let p = VehicleParams::default();
        let dx = longitudinal_derivative(&[22.0, 20.0, 50.0], p.drag(22.0), 0.0, 0.0, &p);
        assert!(dx[0].abs() < 1e-15);
        assert_eq!(dx[2], -2.0);
        assert!((p.drag(22.0) - 288.8728).abs() < 1e-9);
    }

    #[test]
    fn rk4_decay() {
        let x = rk4_step(|x: &[f64; 1]| [-x[0]], &[1.0], 0.1);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-6);
        assert_eq!(rk4_step(|_: &[f64; 2]| [0.0; 2], &[3.0, 4.0], 0.5), [3.0, 4.0]);
    }

    #[test]
    fn profile_steps() {
        let s = [[1.0, 2.0], [3.0, -1.0]];
        assert_eq!(step_value(&s, 0.5), 0.0);
        assert_eq!(step_value(&s, 1.0), 2.0);
        assert_eq!(step_value(&s, 10.0), -1.0);
    }
}
