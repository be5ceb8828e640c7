//! Command implementations behind the `iforge` binary. Reports go to the
//! given writer, diagnostics to stderr; each command returns its exit code.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::acc_barrier::{
    verify_acc_properties, worst_case_oracle, worst_case_rollout, AccBarrier, AccBarrierParams, LongitudinalModel,
};
use crate::config::Config;
use crate::lk_synthesis::{
    lk_problem, maximize_gamma, synthesize_lk, verify_properties, BarrierCertificate, SynthesisError,
};
use crate::simulator::{run_closed_loop, SimContext};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_BAD_INPUT: u8 = 3;

/// Certificate synthesized for the default configuration.
pub const DEFAULT_CERTIFICATE: &str = include_str!("../assets/lk_default.cert");

pub const VERIFY_SAMPLES: usize = 10_000;

macro_rules! out {
    ($w:expr, $($arg:tt)*) => {{
        let _ = writeln!($w, $($arg)*);
    }};
}

pub fn load_config(path: Option<&Path>) -> Result<Config, u8> {
    let r = match path {
        Some(p) => Config::load(p),
        None => Config::from_env(),
    };
    r.map_err(|e| {
        eprintln!("error: {e}");
        EXIT_BAD_INPUT
    })
}

pub fn load_certificate(path: Option<&Path>) -> Result<BarrierCertificate, u8> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| {
            eprintln!("error: cannot read {}: {e}", p.display());
            EXIT_BAD_INPUT
        })?,
        None => DEFAULT_CERTIFICATE.to_string(),
    };
    BarrierCertificate::from_text(&text).map_err(|e| {
        eprintln!("error: malformed certificate: {e}");
        EXIT_BAD_INPUT
    })
}

pub fn cmd_synthesize(cfg: &Config, out_path: &Path, seed: u64, w: &mut dyn Write) -> u8 {
    let start = Instant::now();
    let (mut cert, prob, scfg) = match synthesize_lk(&cfg.vehicle, &cfg.bounds, &cfg.synthesis) {
        Ok(r) => r,
        Err(e @ SynthesisError::Config(_)) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
        Err(e) => {
            eprintln!("synthesis failed: {e}");
            return EXIT_INFEASIBLE;
        }
    };
    out!(
        w,
        "iterations: {}",
        cert.history.iter().filter(|r| r.stage.starts_with("P2")).count()
    );
    let kappas: Vec<String> = cert.kappa_sequence().iter().map(|k| format!("{k:.6e}")).collect();
    out!(w, "kappa: {}", kappas.join(" "));
    let g = maximize_gamma(&prob, &scfg, &mut cert);
    out!(w, "gamma*: {g}");
    let report = verify_properties(&prob, &scfg, &cert, VERIFY_SAMPLES, seed);
    let _ = write!(w, "{}", report.summary());
    out!(w, "elapsed: {:.1} s", start.elapsed().as_secs_f64());
    if let Err(e) = std::fs::write(out_path, cert.to_text()) {
        eprintln!("error: cannot write {}: {e}", out_path.display());
        return EXIT_BAD_INPUT;
    }
    out!(w, "certificate written to {}", out_path.display());
    if report.pass {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

pub fn cmd_verify(cfg: &Config, cert: &BarrierCertificate, seed: u64, grid: usize, w: &mut dyn Write) -> u8 {
    let mut scfg = cfg.synthesis.clone();
    scfg.rho0 = cert.rho0;
    scfg.eps = cert.eps;
    scfg.gamma = cert.gamma;
    let prob = match lk_problem(&cfg.vehicle, &cfg.bounds, &scfg) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    out!(w, "lane keeping (kappa {:.6e}, gamma {}):", cert.kappa, cert.gamma);
    let lk = verify_properties(&prob, &scfg, cert, VERIFY_SAMPLES, seed);
    let _ = write!(w, "{}", lk.summary());
    let Some((bar, model)) = acc_setup(cfg) else {
        return EXIT_BAD_INPUT;
    };
    let acc = verify_acc_properties(&bar, &model, grid);
    out!(w, "adaptive cruise ({grid}-point grid):");
    match acc.p1_state {
        Some(s) => out!(w, "nonempty safe set, e.g. {s:?}"),
        None => out!(w, "safe set empty on the domain"),
    }
    out!(w, "min hhat {:.6e}", acc.p2_min);
    out!(
        w,
        "barrier rows: {} checked, min margin {:.6e}",
        acc.p3_checked,
        acc.p3_min
    );
    for wt in &acc.witnesses {
        out!(
            w,
            "  witness [{}] at {:?}, a_lead {}, nu_r {}: {:.6e}",
            wt.check,
            wt.state,
            wt.a_lead,
            wt.nu_r,
            wt.value
        );
    }
    out!(w, "{}", if acc.pass { "PASS" } else { "FAIL" });
    if lk.pass && acc.pass {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}

fn acc_setup(cfg: &Config) -> Option<(AccBarrier, LongitudinalModel)> {
    match AccBarrierParams::new(&cfg.vehicle, &cfg.bounds, cfg.gains.gamma2) {
        Ok(params) => Some((
            AccBarrier { params },
            LongitudinalModel {
                vehicle: cfg.vehicle,
                bounds: cfg.bounds,
            },
        )),
        Err(e) => {
            eprintln!("error: {e}");
            None
        }
    }
}

pub fn cmd_simulate(cfg: &Config, cert: BarrierCertificate, out_dir: &Path, seed: u64, w: &mut dyn Write) -> u8 {
    let mut scfg = cfg.synthesis.clone();
    scfg.rho0 = cert.rho0;
    scfg.eps = cert.eps;
    let cert_ok = match lk_problem(&cfg.vehicle, &cfg.bounds, &scfg) {
        Ok(prob) => {
            let r = verify_properties(&prob, &scfg, &cert, 1000, seed);
            if !r.pass {
                eprintln!("certificate does not verify under this configuration:\n{}", r.summary());
            }
            r.pass
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let ctx = match SimContext::new(cfg.vehicle, cfg.bounds, cfg.gains, cert) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let start = Instant::now();
    let trace = match run_closed_loop(&cfg.scenario(), &ctx) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    if let Err(e) = trace.write_all(out_dir, &cfg.vehicle, &cfg.bounds) {
        eprintln!("error: cannot write to {}: {e}", out_dir.display());
        return EXIT_BAD_INPUT;
    }
    out!(w, "{}", trace.summary.report());
    out!(w, "elapsed {:.3} s", start.elapsed().as_secs_f64());
    if let Some(t) = &trace.truncated {
        out!(w, "trace truncated: {t}");
    }
    if trace.summary.assumption_violations > 0 {
        out!(
            w,
            "note: assumptions were violated; later guarantee failures are excused"
        );
    }
    if !cert_ok || trace.summary.guarantee_violations > 0 || trace.truncated.is_some() {
        EXIT_VIOLATION
    } else {
        EXIT_OK
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub deviation: f64,
    pub worst_at: [f64; 2],
    pub rollouts: usize,
    pub rollout_min: f64,
    pub rollout_worst: [f64; 3],
}

/// Closed form against the integrating oracle on a `grid × grid` mesh of
/// `[0, v̄]²`, plus worst-case rollouts from `rollout_side²` states on the
/// barrier boundary.
pub fn oracle_grid(params: &AccBarrierParams, v_hi: f64, grid: usize, rollout_side: usize) -> OracleReport {
    let bar = AccBarrier { params: *params };
    let node = |k: usize, n: usize| if n <= 1 { 0.0 } else { v_hi * k as f64 / (n - 1) as f64 };
    let mut deviation = 0.0;
    let mut worst_at = [0.0; 2];
    for i in 0..grid {
        for j in 0..grid {
            let (vf, vl) = (node(i, grid), node(j, grid));
            let dev = (bar.hhat(vf, vl) - worst_case_oracle(vf, vl, params)).abs();
            if dev > deviation {
                deviation = dev;
                worst_at = [vf, vl];
            }
        }
    }
    let mut rollout_min = f64::INFINITY;
    let mut rollout_worst = [0.0; 3];
    for i in 0..rollout_side {
        for j in 0..rollout_side {
            let (vf, vl) = (node(i, rollout_side), node(j, rollout_side));
            let dist = params.tau_d * vf + params.d0 + bar.hhat(vf, vl);
            let m = worst_case_rollout(params, params.ell, [vf, vl, dist], 1e-3);
            if m < rollout_min {
                rollout_min = m;
                rollout_worst = [vf, vl, dist];
            }
        }
    }
    OracleReport {
        deviation,
        worst_at,
        rollouts: rollout_side * rollout_side,
        rollout_min,
        rollout_worst,
    }
}

pub fn cmd_oracle(cfg: &Config, grid: usize, w: &mut dyn Write) -> u8 {
    let Some((bar, _)) = acc_setup(cfg) else {
        return EXIT_BAD_INPUT;
    };
    let p = bar.params;
    out!(
        w,
        "effective follower braking {:.6} m/s², lead braking {:.6} m/s²",
        p.omega,
        p.ell
    );
    let r = oracle_grid(&p, cfg.bounds.v_hi, grid, 20);
    out!(
        w,
        "grid {grid}x{grid}: sup |hhat - oracle| = {:.3e} at {:?}",
        r.deviation,
        r.worst_at
    );
    out!(
        w,
        "{} worst-case rollouts: min (D - tau_d vf - D0) = {:.6e} from {:?}",
        r.rollouts,
        r.rollout_min,
        r.rollout_worst
    );
    if r.deviation <= 1e-6 && r.rollout_min >= -1e-3 {
        out!(w, "PASS");
        EXIT_OK
    } else {
        out!(w, "FAIL");
        EXIT_VIOLATION
    }
}
