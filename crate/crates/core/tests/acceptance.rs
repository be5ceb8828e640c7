//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use std::time::Instant;

use iforge::acc_barrier::{effective_decel, AccBarrier, AccBarrierParams};
use iforge::cli::{cmd_verify, oracle_grid, DEFAULT_CERTIFICATE, VERIFY_SAMPLES};
use iforge::config::Config;
use iforge::conic::{self, check_residuals, Cone, ConicProblem, Settings};
use iforge::lk_synthesis::{synthesize_lk, verify_properties, BarrierCertificate, SynthesisConfig};
use iforge::params::{Bounds, VehicleParams};
use iforge::polyalg::{Polynomial, VarSpace};
use iforge::riccati::{care_residual, lateral_problem, lk_nominal_gain, solve_care, LqrProblem};
use iforge::safety_filter::FilterGains;
use iforge::simulator::{plant_field, rk4_step, run_closed_loop, HeldInputs, Profiles, Scenario, SimContext};
use iforge::sosprog::{Affine, PolyExpr, SosModel};
use nalgebra::{DMatrix, RowVector4};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ctx(cert: BarrierCertificate) -> SimContext {
    SimContext::new(
        VehicleParams::default(),
        Bounds::default(),
        FilterGains::default(),
        cert,
    )
    .unwrap()
}

fn default_cert() -> BarrierCertificate {
    BarrierCertificate::from_text(DEFAULT_CERTIFICATE).unwrap()
}

fn lk_certificate() -> (Outcome, Outcome) {
    let start = Instant::now();
    let (cert, prob, cfg) = synthesize_lk(
        &VehicleParams::default(),
        &Bounds::default(),
        &SynthesisConfig::default(),
    )
    .unwrap();
    let iterations = cert.history.iter().filter(|r| r.stage.starts_with("P2")).count();
    let rep = verify_properties(&prob, &cfg, &cert, VERIFY_SAMPLES, 1);
    let secs = start.elapsed().as_secs_f64();
    let c1 = outcome(
        iterations <= 15
            && rep.block_failures.is_empty()
            && rep.interior_violations == 0
            && rep.barrier_violations == 0
            && rep.interior_samples >= VERIFY_SAMPLES
            && rep.barrier_samples >= VERIFY_SAMPLES
            && secs <= 1800.0,
        format!(
            "{iterations} iterations, {} blocks ({} failed), interior {}/{} violations, barrier {}/{} violations (min {:.3e}), {secs:.1} s",
            rep.blocks.len(),
            rep.block_failures.len(),
            rep.interior_violations,
            rep.interior_samples,
            rep.barrier_violations,
            rep.barrier_samples,
            rep.barrier_min
        ),
    );
    let ks = cert.kappa_sequence();
    let worst_drop = ks.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let shown: Vec<String> = ks.iter().map(|k| format!("{k:.6e}")).collect();
    let c2 = outcome(
        ks.windows(2).all(|w| w[1] >= w[0] - 1e-6),
        format!("kappa {} (largest drop {worst_drop:.2e})", shown.join(" ")),
    );
    (c1, c2)
}

fn acc_barrier() -> Outcome {
    let (v, b) = (VehicleParams::default(), Bounds::default());
    let params = AccBarrierParams::new(&v, &b, 2.0).unwrap();
    let bar = AccBarrier::new(params);
    let r = oracle_grid(&params, 30.0, 200, 20);
    let af = effective_decel(&v, &b).unwrap();
    let (h1, h2) = (bar.hhat(20.0, 20.0), bar.hhat(25.0, 15.0));
    outcome(
        r.deviation <= 1e-6
            && r.rollouts == 400
            && r.rollout_min >= -1e-3
            && h1 == 0.0
            && (h2 - 51.4).abs() <= 0.1
            && (af - 0.2298).abs() < 1e-4
            && b.a_l == 0.25,
        format!(
            "oracle sup {:.2e}, {} rollouts min margin {:.2e} m, hhat(20,20) = {h1}, hhat(25,15) = {h2:.3}, a_f = {af:.4}",
            r.deviation, r.rollouts, r.rollout_min
        ),
    )
}

fn qp_closed_forms() -> Outcome {
    let n = 10_000;
    let lk = common::lk_agreement(FilterGains::default(), 11, n);
    let lk3 = common::lk_agreement(
        FilterGains {
            lateral_accel: true,
            ..FilterGains::default()
        },
        12,
        n,
    );
    let acc = common::acc_agreement(13, n);
    let proj = common::project_agreement(14, n);
    let all = [lk, lk3, acc, proj];
    outcome(
        all.iter().all(|a| a.ok(1e-8) && a.instances == n),
        format!(
            "worst deviation lk {:.1e}, lk+accel rows {:.1e}, acc {:.1e}, project {:.1e}; feasibility mismatches {}",
            lk.worst,
            lk3.worst,
            acc.worst,
            proj.worst,
            all.iter().map(|a| a.mismatched).sum::<usize>()
        ),
    )
}

fn closed_loop_invariance() -> Outcome {
    let c = ctx(default_cert());
    let start = Instant::now();
    let t = run_closed_loop(&Scenario::default(), &c).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let b = Bounds::default();
    let lim = b.lateral();
    let mg = c.vehicle.m * c.vehicle.g;
    let within = t.records.iter().all(|r| {
        (0..4).all(|i| r.x1[i].abs() <= lim[i])
            && r.headway >= b.tau_d
            && r.u1.abs() <= b.delta_f
            && r.u2 / mg >= -b.a_f
            && r.u2 / mg <= b.a_f_acc
    });
    let s = &t.summary;
    outcome(
        t.truncated.is_none()
            && t.records.len() == 6001
            && s.min_h_lk >= -1e-3
            && s.min_h_acc >= -1e-3
            && within
            && secs <= 10.0,
        format!(
            "min h_lk {:.3e}, min h_acc {:.3e}, min headway {:.3} s, max |u1| {:.4} rad, max |u2|/mg {:.3}, states in bounds {within}, {secs:.2} s",
            s.min_h_lk, s.min_h_acc, s.min_headway, s.max_u1, s.max_u2_g
        ),
    )
}

fn soft_constraints() -> Outcome {
    let scn = Scenario {
        vl: 22.0,
        dist: 1e6,
        profiles: Profiles {
            lead_accel: vec![],
            ..Profiles::default()
        },
        ..Scenario::default()
    };
    let t = run_closed_loop(&scn, &ctx(default_cert())).unwrap();
    // last seconds of each constant-curvature stretch
    let windows = [(15.0, 20.0), (23.0, 25.0), (40.0, 45.0), (55.0, 60.0)];
    let (mut speed_err, mut yaw_err) = (0.0f64, 0.0f64);
    for r in t
        .records
        .iter()
        .filter(|r| windows.iter().any(|w| r.t >= w.0 && r.t < w.1))
    {
        speed_err = speed_err.max((r.x2[0] - 22.0).abs());
        yaw_err = yaw_err.max((r.x1[3] - r.d).abs());
    }
    outcome(
        speed_err <= 0.5 && yaw_err <= 0.02,
        format!("steady-state |v_f - 22| <= {speed_err:.2e} m/s, |r - d| <= {yaw_err:.2e} rad/s"),
    )
}

fn numerics() -> Outcome {
    let one = DMatrix::from_element(1, 1, 1.0);
    let scalar = LqrProblem {
        a: one.clone(),
        b: one.clone(),
        q: one.clone(),
        r: one,
    };
    let rel = |prob: &LqrProblem, p: &DMatrix<f64>| care_residual(prob, p).norm() / (1.0 + p.norm().powi(2));
    let s = solve_care(&scalar).unwrap();
    let scalar_ok = (s.p[(0, 0)] - (1.0 + 2f64.sqrt())).abs() <= 1e-12 && rel(&scalar, &s.p) <= 1e-8;
    let v = VehicleParams::default();
    let c = RowVector4::new(1.0, 0.0, 10.0, 0.0);
    let (_, lk) = lk_nominal_gain(&v, 20.0, 5.0, 0.4, 600.0, c).unwrap();
    let a = v.a1(20.0);
    let ca = c * a;
    let qm = c.transpose() * c * 5.0 + ca.transpose() * ca * 0.4;
    let lk_prob = lateral_problem(&v, 20.0, DMatrix::from_iterator(4, 4, qm.iter().copied()), 600.0);
    let lk_res = rel(&lk_prob, &lk.p);
    let lk_abs = care_residual(&lk_prob, &lk.p).norm();

    let r2 = std::f64::consts::SQRT_2;
    let det = ConicProblem::from_triplets(
        vec![1.0, 0.0, 0.0, 0.0],
        3,
        &[(0, 1, 1.0), (0, 0, -1.0), (1, 3, 1.0), (1, 0, -1.0), (2, 2, 1.0 / r2)],
        vec![0.0, 0.0, 1.0],
        vec![Cone::Free(1), Cone::Psd(2)],
    )
    .unwrap();
    let lmin = ConicProblem::from_triplets(
        vec![-1.0, 0.0, 0.0, 0.0],
        3,
        &[(0, 0, 1.0), (0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 1.0)],
        vec![3.0, 0.0, 1.0],
        vec![Cone::Free(1), Cone::Psd(2)],
    )
    .unwrap();
    let vars = VarSpace::new(["x"]);
    let x = Polynomial::var_at(&vars, 0);
    let mut m = SosModel::new(&vars);
    let lam = m.scalar();
    let p = x.powi(4) - (&x * &x).scale(3.0);
    m.add_sos(
        "q",
        PolyExpr::known(p) + PolyExpr::var(lam, Polynomial::constant(&vars, 1.0)),
    )
    .unwrap();
    m.minimize(Affine::var(lam));
    let sos = m.compile().unwrap();
    let mut sdp_ok = true;
    let mut values = Vec::new();
    for (prob, want) in [(&det, 1.0), (&lmin, -1.0), (&sos, 2.25)] {
        let sol = conic::solve(prob, &Settings::default()).unwrap();
        let gap = check_residuals(prob, &sol).unwrap().gap;
        let obj: f64 = prob.c.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
        sdp_ok &= gap <= 1e-6 && (obj - want).abs() <= 1e-5;
        values.push(format!("{obj:.6} (gap {gap:.1e})"));
    }

    let held = HeldInputs {
        u1: 0.02,
        u2: 800.0,
        d: 0.03,
        a_lead: -1.0,
    };
    let x0 = [0.1, 0.2, 0.01, -0.05, 20.0, 18.0, 40.0];
    let integrate = |n: usize| {
        let dt = 1.0 / n as f64;
        (0..n).fold(x0, |x, _| rk4_step(|s| plant_field(s, &held, &v).0, &x, dt))
    };
    let err = |a: &[f64; 7], b: &[f64; 7]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let (i1, i2, i3) = (integrate(10), integrate(20), integrate(40));
    let order = (err(&i1, &i2) / err(&i2, &i3)).log2();
    outcome(
        scalar_ok && lk_res <= 1e-8 && sdp_ok && order >= 3.9,
        format!(
            "CARE scalar P = {:.12}, LK relative residual {lk_res:.1e} (absolute {lk_abs:.1e}), SDP objectives {}, RK4 order {order:.3}",
            s.p[(0, 0)],
            values.join(", ")
        ),
    )
}

fn monitor_semantics() -> Outcome {
    let b = Bounds::default();
    let c = ctx(default_cert());
    let disturbance = Scenario {
        horizon: 20.0,
        profiles: Profiles {
            yaw_rate: vec![[5.0, 2.0 * b.d_max], [8.0, 0.0]],
            ..Profiles::default()
        },
        ..Scenario::default()
    };
    let lead = Scenario {
        horizon: 20.0,
        profiles: Profiles {
            lead_accel: vec![[5.0, -2.0 * b.a_l * 9.81], [6.0, 0.0]],
            clip_lead: false,
            ..Profiles::default()
        },
        ..Scenario::default()
    };
    let mut breaches = Vec::new();
    let mut ok = true;
    for scn in [&disturbance, &lead] {
        let s = run_closed_loop(scn, &c).unwrap().summary;
        ok &= s.assumption_violations > 0 && s.guarantee_violations == 0;
        breaches.push(format!("{}/{}", s.assumption_violations, s.guarantee_violations));
    }
    let mut bad = default_cert();
    bad.kappa *= 1.1;
    let mut out = Vec::new();
    let code = cmd_verify(&Config::default(), &bad, 1, 30, &mut out);
    let text = String::from_utf8(out).unwrap();
    let witness = text
        .lines()
        .find(|l| l.trim_start().starts_with("witness"))
        .map(str::trim);
    ok &= code == 1 && witness.is_some();
    outcome(
        ok,
        format!(
            "assumption/guarantee counts: d breach {}, a_L breach {}; corrupted certificate exit {code}, {}",
            breaches[0],
            breaches[1],
            witness.unwrap_or("no witness")
        ),
    )
}

fn main() {
    let (c1, c2) = lk_certificate();
    let results = [
        ("LK certificate validity", c1),
        ("kappa monotonicity", c2),
        ("ACC barrier correctness", acc_barrier()),
        ("QP closed forms", qp_closed_forms()),
        ("closed-loop invariance", closed_loop_invariance()),
        ("soft-constraint behavior", soft_constraints()),
        ("numerics", numerics()),
        ("monitor semantics", monitor_semantics()),
    ];
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {} [{}] {name}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<usize> = (0..results.len())
        .filter(|&i| !results[i].1.pass)
        .map(|i| i + 1)
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
