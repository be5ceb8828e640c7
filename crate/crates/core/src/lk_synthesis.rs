//! Barrier-certificate synthesis for the lane-keeping subsystem.
//!
//! A [`BarrierProblem`] describes a polynomial control-affine system in box-scaled
//! coordinates: every state lives in `[−1, 1]`, extra variables (disturbance,
//! scheduling speed) too, and the single input `û` in `[−1, 1]`. Fields may
//! be multiplied through by a positive polynomial to clear denominators; the
//! barrier condition then reads
//!
//! `L_F h + L_G h · û + γ·w·h ≥ 0` on the domain,
//!
//! with `w` the same positive factor. Synthesis alternates a controller
//! search (P1) and a barrier search (P2) after a seed barrier (P0), each
//! step an SOS program that keeps the previous safe set inside the new one.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::Settings;
use crate::params::{Bounds, VehicleParams};
use crate::polyalg::{monomial_basis_in, Monomial, Polynomial, VarSpace};
use crate::riccati::{self, RiccatiError};
use crate::sosprog::{
    verify_certificate, Affine, PolyExpr, SosCertificate, SosError, SosModel, SosPoly, SosSolution, VerifyReport,
    VerifyTol,
};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("seed program infeasible after {attempts} attempt(s): {detail}")]
    SeedInfeasible { attempts: usize, detail: String },
    #[error("controller program infeasible at the current barrier: {0}")]
    ControllerInfeasible(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Sos(#[from] SosError),
}

#[derive(Debug, Error)]
pub enum CertificateParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing section `{0}`")]
    Missing(&'static str),
}

/// Right-hand side of `d x̂/dt` in scaled coordinates, for the sampled checks.
pub type RateFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct BarrierProblem {
    /// States first, then extra variables.
    pub vars: VarSpace,
    pub n_state: usize,
    pub drift: Vec<Polynomial>,
    pub input: Vec<Polynomial>,
    pub gamma_weight: Polynomial,
    /// Domain polynomials `≥ 0` for the extra variables.
    pub extra_box: Vec<Polynomial>,
    /// Seed controller `û` for the initial program.
    pub seed: Polynomial,
    /// Independent evaluation of the scaled vector field.
    pub rate: RateFn,
    pub scaling: Scaling,
}

impl BarrierProblem {
    fn state_idx(&self) -> Vec<usize> {
        (0..self.n_state).collect()
    }

    fn all_idx(&self) -> Vec<usize> {
        (0..self.vars.len()).collect()
    }

    fn state_box(&self, i: usize) -> Polynomial {
        let x = Polynomial::var_at(&self.vars, i);
        Polynomial::constant(&self.vars, 1.0) - &x * &x
    }

    fn all_boxes(&self) -> Vec<Polynomial> {
        (0..self.n_state)
            .map(|i| self.state_box(i))
            .chain(self.extra_box.iter().cloned())
            .collect()
    }

    fn p(&self) -> Polynomial {
        (0..self.n_state).fold(Polynomial::zero(&self.vars), |acc, i| {
            let x = Polynomial::var_at(&self.vars, i);
            acc + &x * &x
        })
    }
}

/// Affine map `x̂ = (x − offset)/scale` per variable, plus the input scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub names: Vec<String>,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub input_scale: f64,
}

impl Scaling {
    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(v, (s, o))| (v - o) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    /// barrier degree (even)
    pub alpha: u32,
    /// controller degree
    pub beta: u32,
    /// 1/s
    pub gamma: f64,
    /// radius of the initial sublevel set `{p ≤ ρ0}` in scaled coordinates
    pub rho0: f64,
    pub eps: f64,
    pub kappa_tol: f64,
    pub max_iter: usize,
    /// degree of multipliers over the full domain
    pub multiplier_degree: u32,
    pub bisection_steps: usize,
    /// Gram matrices are kept this far inside the PSD cone
    pub gram_margin: f64,
    /// speed of the LQR seed, m/s
    pub seed_vf: f64,
    pub seed_r: f64,
    pub gamma_resolution: f64,
    pub gamma_max: f64,
    pub solver_max_iter: usize,
    pub solver_eps: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            alpha: 2,
            beta: 2,
            gamma: 2.0,
            rho0: 1e-2,
            eps: 1e-4,
            kappa_tol: 1e-3,
            max_iter: 15,
            multiplier_degree: 2,
            bisection_steps: 6,
            gram_margin: 1e-6,
            seed_vf: 20.0,
            seed_r: 100.0,
            gamma_resolution: 1e-3,
            gamma_max: 50.0,
            solver_max_iter: 100_000,
            solver_eps: 1e-7,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: String| Err(SynthesisError::Config(m));
        if self.alpha < 2 || self.alpha % 2 == 1 {
            return bad(format!("alpha must be even and ≥ 2, got {}", self.alpha));
        }
        if self.beta < 1 {
            return bad("beta must be ≥ 1".into());
        }
        for (k, v) in [
            ("gamma", self.gamma),
            ("rho0", self.rho0),
            ("eps", self.eps),
            ("seed_r", self.seed_r),
            ("gamma_resolution", self.gamma_resolution),
            ("solver_eps", self.solver_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("synthesis.{k} must be positive, got {v}"));
            }
        }
        if !(self.kappa_tol > 0.0) {
            return bad("kappa_tol must be positive".into());
        }
        if self.gram_margin < 0.0 {
            return bad("gram_margin must be nonnegative".into());
        }
        Ok(())
    }

    fn settings(&self) -> Settings {
        Settings {
            max_iter: self.solver_max_iter,
            eps_primal: self.solver_eps,
            eps_dual: self.solver_eps,
            eps_gap: self.solver_eps * 10.0,
            ..Settings::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Cond {
    Contain,
    Grow,
    StateBound(usize),
    Barrier,
    InputUpper,
    InputLower,
}

impl Cond {
    fn name(self, prob: &BarrierProblem) -> String {
        match self {
            Cond::Contain => "contain".into(),
            Cond::Grow => "grow".into(),
            Cond::StateBound(i) => format!("bound_{}", prob.vars.names()[i]),
            Cond::Barrier => "barrier".into(),
            Cond::InputUpper => "input_upper".into(),
            Cond::InputLower => "input_lower".into(),
        }
    }
}

type MultFn<'a> = dyn FnMut(&str, &[usize], u32) -> Option<PolyExpr> + 'a;

struct Builder<'a> {
    prob: &'a BarrierProblem,
    alpha: u32,
    md: u32,
    eps: f64,
    rho0: f64,
}

impl Builder<'_> {
    fn lie(&self, h: &PolyExpr, field: &[Polynomial]) -> PolyExpr {
        h.map(|p| {
            (0..self.prob.n_state).fold(Polynomial::zero(&self.prob.vars), |acc, i| {
                acc + &p.differentiate_at(i) * &field[i]
            })
        })
    }

    /// Expression that must be SOS, or `None` if it would be bilinear in the
    /// decision variables or a multiplier is missing.
    fn build(
        &self,
        cond: Cond,
        h: &PolyExpr,
        u: &PolyExpr,
        h_old: Option<&Polynomial>,
        gamma: f64,
        mult: &mut MultFn<'_>,
    ) -> Option<PolyExpr> {
        let prob = self.prob;
        let vars = &prob.vars;
        let one = Polynomial::constant(vars, 1.0);
        let name = cond.name(prob);
        let state = prob.state_idx();
        let all = prob.all_idx();
        let lo = self.alpha - 2;
        Some(match cond {
            Cond::Contain => {
                let s = mult(&format!("{name}.s"), &state, lo)?;
                let ball = Polynomial::constant(vars, self.rho0) - &prob.p();
                h - &s.mul_poly(&ball)
            }
            Cond::Grow => {
                let s = mult(&format!("{name}.s"), &state, 0)?;
                h - &s.mul_poly(h_old?)
            }
            Cond::StateBound(i) => {
                let s = mult(&format!("{name}.s"), &state, lo)?;
                s.mul_poly(&prob.state_box(i)) - h.clone() - &one.scale(self.eps)
            }
            Cond::Barrier => {
                let mut e = self.lie(h, &prob.drift)
                    + self.lie(h, &prob.input).try_mul(u)?
                    + h.mul_poly(&prob.gamma_weight.scale(gamma));
                for (j, b) in prob.all_boxes().iter().enumerate() {
                    let s = mult(&format!("{name}.s{j}"), &all, self.md)?;
                    e = e - s.mul_poly(b);
                }
                e
            }
            Cond::InputUpper | Cond::InputLower => {
                let sign = if matches!(cond, Cond::InputUpper) { -1.0 } else { 1.0 };
                let sh = mult(&format!("{name}.sh"), &all, self.md)?;
                let mut e = PolyExpr::known(one.clone()) + u.scale(sign) - sh.try_mul(h)?;
                for (j, b) in prob.extra_box.iter().enumerate() {
                    let s = mult(&format!("{name}.s{j}"), &all, self.md)?;
                    e = e - s.mul_poly(b);
                }
                e
            }
        })
    }
}

/// Result of one SOS stage with verified certificates.
#[derive(Debug, Clone)]
struct Stage {
    hhat: Polynomial,
    kappa: f64,
    controller: Polynomial,
    conditions: Vec<SosCertificate>,
    multipliers: Vec<SosCertificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: String,
    pub kappa: f64,
    pub solves: usize,
    pub seconds: f64,
}

/// The synthesized barrier `h = κ − ĥ(x̂)` with its certificates.
#[derive(Debug, Clone)]
pub struct BarrierCertificate {
    pub hhat: Polynomial,
    pub kappa: f64,
    pub gamma: f64,
    pub eps: f64,
    /// radius of the seed sublevel set the certificate was built with
    pub rho0: f64,
    pub controller: Polynomial,
    pub scaling: Scaling,
    pub conditions: Vec<SosCertificate>,
    pub multipliers: Vec<SosCertificate>,
    pub history: Vec<StageRecord>,
}

enum Failure {
    Infeasible,
    Unverified(String),
}

struct Program<'a> {
    model: SosModel,
    allocated: Vec<(String, SosPoly)>,
    fixed: Vec<SosCertificate>,
    names: Vec<String>,
    builder: Builder<'a>,
}

impl<'a> Program<'a> {
    fn new(prob: &'a BarrierProblem, cfg: &SynthesisConfig) -> Self {
        let mut model = SosModel::new(&prob.vars);
        model.set_gram_margin(cfg.gram_margin);
        Program {
            model,
            allocated: Vec::new(),
            fixed: Vec::new(),
            names: Vec::new(),
            builder: Builder {
                prob,
                alpha: cfg.alpha,
                md: cfg.multiplier_degree,
                eps: cfg.eps,
                rho0: cfg.rho0,
            },
        }
    }

    /// Add a condition; multipliers named in `fixed` are reused instead of
    /// allocated.
    fn add(
        &mut self,
        cond: Cond,
        h: &PolyExpr,
        u: &PolyExpr,
        h_old: Option<&Polynomial>,
        gamma: f64,
        fixed: &[SosCertificate],
    ) -> Result<(), SosError> {
        let model = &mut self.model;
        let allocated = &mut self.allocated;
        let used_fixed = &mut self.fixed;
        let mut mult = |name: &str, subset: &[usize], deg: u32| -> Option<PolyExpr> {
            if let Some(c) = fixed.iter().find(|c| c.name == name) {
                used_fixed.push(c.clone());
                return Some(PolyExpr::known(c.expression.clone()));
            }
            let s = model.sos_poly(subset, deg);
            let e = s.expr().clone();
            allocated.push((name.to_string(), s));
            Some(e)
        };
        let expr = self
            .builder
            .build(cond, h, u, h_old, gamma, &mut mult)
            .expect("condition must be linear in the decision variables");
        let name = cond.name(self.builder.prob);
        if matches!(cond, Cond::Grow) {
            // identically zero at the previous point; no margin, checked by sampling
            self.model.add_sos_with_margin(&name, expr, 0.0)?;
        } else {
            self.model.add_sos(&name, expr)?;
        }
        self.names.push(name);
        Ok(())
    }

    fn solve(&self, cfg: &SynthesisConfig) -> Result<(SosSolution, Vec<SosCertificate>), Failure> {
        let tol = VerifyTol::default();
        let sol = match self.model.solve(&cfg.settings()) {
            Ok(s) => s,
            Err(SosError::NotOptimal { partial: Some(p), .. }) => *p,
            Err(SosError::Infeasible { .. }) => return Err(Failure::Infeasible),
            Err(e) => return Err(Failure::Unverified(e.to_string())),
        };
        let mut mults: Vec<SosCertificate> = self
            .allocated
            .iter()
            .map(|(n, s)| self.model.sos_certificate(n, s, sol.values()))
            .collect();
        mults.extend(self.fixed.iter().cloned());
        log::debug!("solve: {} iterations", sol.iterations);
        let failed: Vec<String> = sol
            .verify_all(tol)
            .into_iter()
            .chain(
                mults
                    .iter()
                    .map(|c| (c.name.clone(), verify_certificate(&c.expression, c, tol))),
            )
            .filter(|(n, r)| !r.pass && !n.starts_with("grow"))
            .map(|(n, r)| format!("{n}: floor {:.2e}, residual {:.2e}", r.psd_floor, r.max_coeff_residual))
            .collect();
        if !failed.is_empty() {
            return Err(Failure::Unverified(failed.join("; ")));
        }
        Ok((sol, mults))
    }
}

/// Normalize a free barrier `h` to `κ − ĥ` with `ĥ(0) = 0` and `ĥ(1,…,1) = 1`.
fn normalize(h: &Polynomial) -> Option<(f64, Polynomial)> {
    let n = h.vars().len();
    let one = Monomial::one(n);
    let c = h.coeff(&one);
    let q = (-(h - c)).pruned(0.0);
    let lam: f64 = q.terms().map(|(_, v)| v).sum();
    (lam > 0.0 && lam.is_finite()).then(|| (c / lam, q.scale(1.0 / lam)))
}

fn final_conditions(prob: &BarrierProblem) -> Vec<Cond> {
    let mut v: Vec<Cond> = (0..prob.n_state).map(Cond::StateBound).collect();
    v.extend([Cond::Barrier, Cond::InputUpper, Cond::InputLower]);
    v
}

fn h_expr(prob: &BarrierProblem, kappa: f64, hhat: &Polynomial) -> Polynomial {
    Polynomial::constant(&prob.vars, kappa) - hhat
}

/// Seed program: free barrier of degree α under the seed controller.
pub fn init_p0(prob: &BarrierProblem, cfg: &SynthesisConfig) -> Result<(f64, Polynomial), SynthesisError> {
    p0(prob, cfg).map(|s| (s.kappa, s.hhat))
}

fn p0(prob: &BarrierProblem, cfg: &SynthesisConfig) -> Result<Stage, SynthesisError> {
    let mut pr = Program::new(prob, cfg);
    let h = pr.model.free_poly_in(&prob.state_idx(), cfg.alpha);
    let h = h.expr().clone();
    let u = PolyExpr::known(prob.seed.clone());
    pr.add(Cond::Contain, &h, &u, None, cfg.gamma, &[])?;
    for i in 0..prob.n_state {
        pr.add(Cond::StateBound(i), &h, &u, None, cfg.gamma, &[])?;
    }
    pr.add(Cond::Barrier, &h, &u, None, cfg.gamma, &[])?;
    let infeasible = |d: String| SynthesisError::SeedInfeasible { attempts: 1, detail: d };
    let (sol, _) = pr.solve(cfg).map_err(|f| match f {
        Failure::Infeasible => infeasible("solver reports infeasibility".into()),
        Failure::Unverified(m) => infeasible(format!("no verified certificate ({m})")),
    })?;
    let hv = sol.poly(&h);
    let (kappa, hhat) =
        normalize(&hv).ok_or_else(|| infeasible("seed barrier has a degenerate normalization".into()))?;
    Ok(Stage {
        hhat,
        kappa,
        controller: prob.seed.clone(),
        conditions: Vec::new(),
        multipliers: Vec::new(),
    })
}

/// Controller program at fixed `ĥ` and level `κ`.
fn p1_at(prob: &BarrierProblem, cfg: &SynthesisConfig, hhat: &Polynomial, kappa: f64) -> Result<Stage, Failure> {
    let mut pr = Program::new(prob, cfg);
    let h = PolyExpr::known(h_expr(prob, kappa, hhat));
    let u = pr.model.free_poly_in(&prob.all_idx(), cfg.beta);
    let uexpr = u.expr().clone();
    let build = |pr: &mut Program| -> Result<(), SosError> {
        for c in final_conditions(prob) {
            pr.add(c, &h, &uexpr, None, cfg.gamma, &[])?;
        }
        Ok(())
    };
    build(&mut pr).map_err(|e| Failure::Unverified(e.to_string()))?;
    let (sol, mults) = pr.solve(cfg)?;
    let conditions = sol.certificates.iter().filter(|c| c.name != "grow").cloned().collect();
    Ok(Stage {
        hhat: hhat.clone(),
        kappa,
        controller: sol.poly(&uexpr),
        conditions,
        multipliers: mults.into_iter().filter(|c| !c.name.starts_with("grow")).collect(),
    })
}

/// Largest level the controller program could reach without input bounds.
fn p1_upper(prob: &BarrierProblem, cfg: &SynthesisConfig, hhat: &Polynomial) -> Option<f64> {
    let mut pr = Program::new(prob, cfg);
    let kappa = pr.model.scalar();
    let h = PolyExpr::var(kappa, Polynomial::constant(&prob.vars, 1.0)) - hhat;
    let u = pr.model.free_poly_in(&prob.all_idx(), cfg.beta);
    let uexpr = u.expr().clone();
    for i in 0..prob.n_state {
        pr.add(Cond::StateBound(i), &h, &uexpr, None, cfg.gamma, &[]).ok()?;
    }
    pr.add(Cond::Barrier, &h, &uexpr, None, cfg.gamma, &[]).ok()?;
    pr.model.maximize(Affine::var(kappa));
    let sol = match pr.model.solve(&cfg.settings()) {
        Ok(s) => s,
        Err(SosError::NotOptimal { partial: Some(p), .. }) => *p,
        Err(_) => return None,
    };
    let k = sol.value(kappa);
    k.is_finite().then_some(k)
}

/// P1: largest `κ` (by bisection) for which a bounded controller exists.
pub fn improve_controller_p1(
    prob: &BarrierProblem,
    cfg: &SynthesisConfig,
    hhat: &Polynomial,
    kappa_old: f64,
) -> Result<(f64, Polynomial), SynthesisError> {
    p1(prob, cfg, hhat, kappa_old, &mut 0).map(|s| (s.kappa, s.controller))
}

fn p1(
    prob: &BarrierProblem,
    cfg: &SynthesisConfig,
    hhat: &Polynomial,
    kappa_old: f64,
    solves: &mut usize,
) -> Result<Stage, SynthesisError> {
    // ĥ is fixed here, so raising κ can only enlarge the set
    *solves += 1;
    let mut best = p1_at(prob, cfg, hhat, kappa_old).map_err(|f| match f {
        Failure::Infeasible => SynthesisError::ControllerInfeasible("solver reports infeasibility".into()),
        Failure::Unverified(m) => SynthesisError::ControllerInfeasible(m),
    })?;
    // the state-bound conditions at the all-ones corner cap κ below 1 − ε
    let cap = 1.0 - cfg.eps;
    *solves += 1;
    let mut hi = p1_upper(prob, cfg, hhat).map_or(cap, |k| k.min(cap));
    let mut lo = kappa_old;
    if hi <= lo {
        return Ok(best);
    }
    // the unbounded optimum is often attainable; try it first
    *solves += 1;
    if let Ok(s) = p1_at(prob, cfg, hhat, hi) {
        return Ok(s);
    }
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        *solves += 1;
        match p1_at(prob, cfg, hhat, mid) {
            Ok(s) => {
                lo = mid;
                best = s;
            }
            Err(_) => hi = mid,
        }
    }
    Ok(best)
}

/// P2: new barrier shape with the controller and input multipliers fixed.
fn p2(prob: &BarrierProblem, cfg: &SynthesisConfig, prev: &Stage) -> Result<Stage, Failure> {
    let mut pr = Program::new(prob, cfg);
    let n = prob.vars.len();
    let basis: Vec<Monomial> = monomial_basis_in(n, &prob.state_idx(), cfg.alpha)
        .into_iter()
        .filter(|m| !m.is_one())
        .collect();
    let hhat = pr.model.free_poly(basis);
    let kappa = pr.model.scalar();
    pr.model.add_equality(
        Affine {
            terms: hhat.handles.iter().map(|&v| (v, 1.0)).collect(),
            constant: 0.0,
        },
        1.0,
    );
    let h = PolyExpr::var(kappa, Polynomial::constant(&prob.vars, 1.0)) - hhat.expr().clone();
    let u = PolyExpr::known(prev.controller.clone());
    let h_old = h_expr(prob, prev.kappa, &prev.hhat);
    let fixed: Vec<SosCertificate> = prev
        .multipliers
        .iter()
        .filter(|c| c.name.ends_with(".sh"))
        .cloned()
        .collect();
    let build = |pr: &mut Program| -> Result<(), SosError> {
        pr.add(Cond::Grow, &h, &u, Some(&h_old), cfg.gamma, &[])?;
        for c in final_conditions(prob) {
            pr.add(c, &h, &u, None, cfg.gamma, &fixed)?;
        }
        Ok(())
    };
    build(&mut pr).map_err(|e| Failure::Unverified(e.to_string()))?;
    pr.model.maximize(Affine::var(kappa));
    let (sol, mults) = pr.solve(cfg)?;
    Ok(Stage {
        hhat: sol.poly(hhat.expr()),
        kappa: sol.value(kappa),
        controller: prev.controller.clone(),
        conditions: sol.certificates.iter().filter(|c| c.name != "grow").cloned().collect(),
        multipliers: mults.into_iter().filter(|c| !c.name.starts_with("grow")).collect(),
    })
}

/// P2 on its own: returns the new `(κ, ĥ)`.
pub fn improve_barrier_p2(
    prob: &BarrierProblem,
    cfg: &SynthesisConfig,
    hhat: &Polynomial,
    kappa: f64,
    controller: &Polynomial,
) -> Result<(f64, Polynomial), SynthesisError> {
    let prev = p1_at(prob, cfg, hhat, kappa)
        .map_err(|_| SynthesisError::ControllerInfeasible("no input multipliers at the given level".into()))?;
    let prev = Stage {
        controller: controller.clone(),
        ..prev
    };
    p2(prob, cfg, &prev)
        .map(|s| (s.kappa, s.hhat))
        .map_err(|_| SynthesisError::ControllerInfeasible("barrier program failed".into()))
}

/// Algorithm: P0 once, then P1/P2 until `κ` settles.
pub fn synthesize(prob: &BarrierProblem, cfg: &SynthesisConfig) -> Result<BarrierCertificate, SynthesisError> {
    cfg.validate()?;
    let mut history = Vec::new();
    let t0 = Instant::now();
    let mut stage = p0(prob, cfg)?;
    history.push(StageRecord {
        stage: "P0".into(),
        kappa: stage.kappa,
        solves: 1,
        seconds: t0.elapsed().as_secs_f64(),
    });
    log::info!("P0: κ = {:.6}", stage.kappa);
    let mut certified: Option<Stage> = None;
    for it in 0..cfg.max_iter.max(1) {
        let start_kappa = stage.kappa;
        let t = Instant::now();
        let mut solves = 0;
        let s1 = p1(prob, cfg, &stage.hhat, stage.kappa, &mut solves)?;
        history.push(StageRecord {
            stage: format!("P1.{}", it + 1),
            kappa: s1.kappa,
            solves,
            seconds: t.elapsed().as_secs_f64(),
        });
        log::info!("P1.{}: κ = {:.6} ({solves} solves)", it + 1, s1.kappa);
        let t = Instant::now();
        stage = match p2(prob, cfg, &s1) {
            Ok(s2) if s2.kappa >= s1.kappa - 1e-6 => s2,
            Ok(s2) => {
                log::warn!("P2 returned κ = {:.6} below P1's {:.6}; keeping P1", s2.kappa, s1.kappa);
                s1
            }
            Err(e) => {
                let m = match e {
                    Failure::Infeasible => "infeasible".to_string(),
                    Failure::Unverified(m) => m,
                };
                log::warn!("P2 failed ({m}); keeping P1");
                s1
            }
        };
        history.push(StageRecord {
            stage: format!("P2.{}", it + 1),
            kappa: stage.kappa,
            solves: 1,
            seconds: t.elapsed().as_secs_f64(),
        });
        log::info!("P2.{}: κ = {:.6}", it + 1, stage.kappa);
        certified = Some(stage.clone());
        if (stage.kappa - start_kappa).abs() <= cfg.kappa_tol {
            break;
        }
    }
    let s = certified.expect("at least one iteration runs");
    Ok(BarrierCertificate {
        hhat: s.hhat,
        kappa: s.kappa,
        gamma: cfg.gamma,
        eps: cfg.eps,
        rho0: cfg.rho0,
        controller: s.controller,
        scaling: prob.scaling.clone(),
        conditions: s.conditions,
        multipliers: s.multipliers,
        history,
    })
}

fn barrier_at(
    prob: &BarrierProblem,
    cfg: &SynthesisConfig,
    cert: &BarrierCertificate,
    gamma: f64,
) -> Option<(SosCertificate, Vec<SosCertificate>)> {
    let mut pr = Program::new(prob, cfg);
    let h = PolyExpr::known(h_expr(prob, cert.kappa, &cert.hhat));
    let u = PolyExpr::known(cert.controller.clone());
    pr.add(Cond::Barrier, &h, &u, None, gamma, &[]).ok()?;
    let (sol, mults) = pr.solve(cfg).ok()?;
    Some((sol.certificates[0].clone(), mults))
}

/// Largest `γ` keeping the barrier condition certified, by bisection.
/// Replaces the barrier block of `cert` with the certificate at `γ*`.
pub fn maximize_gamma(prob: &BarrierProblem, cfg: &SynthesisConfig, cert: &mut BarrierCertificate) -> f64 {
    let mut lo = cert.gamma;
    let mut best: Option<(SosCertificate, Vec<SosCertificate>)> = None;
    let mut hi = lo;
    loop {
        let trial = (hi * 2.0).min(cfg.gamma_max);
        if trial <= hi {
            break;
        }
        match barrier_at(prob, cfg, cert, trial) {
            Some(b) => {
                lo = trial;
                hi = trial;
                best = Some(b);
            }
            None => {
                hi = trial;
                break;
            }
        }
    }
    while hi - lo > cfg.gamma_resolution {
        let mid = 0.5 * (lo + hi);
        match barrier_at(prob, cfg, cert, mid) {
            Some(b) => {
                lo = mid;
                best = Some(b);
            }
            None => hi = mid,
        }
    }
    if let Some((bc, mults)) = best {
        cert.conditions.retain(|c| c.name != "barrier");
        cert.conditions.push(bc);
        cert.multipliers.retain(|c| !c.name.starts_with("barrier."));
        cert.multipliers.extend(mults);
        cert.gamma = lo;
    }
    lo
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub check: String,
    /// physical coordinates: states then extras
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub blocks: Vec<(String, VerifyReport)>,
    pub block_failures: Vec<String>,
    pub interior_samples: usize,
    pub interior_violations: usize,
    pub barrier_samples: usize,
    pub barrier_violations: usize,
    pub barrier_min: f64,
    /// largest `|u|/δ̂_f` of the synthesized controller on the samples
    pub controller_max: f64,
    pub witnesses: Vec<Witness>,
    pub pass: bool,
}

impl PropertyReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "sos blocks: {} checked, {} failed",
            self.blocks.len(),
            self.block_failures.len()
        );
        for f in &self.block_failures {
            let _ = writeln!(s, "  block failure: {f}");
        }
        let _ = writeln!(
            s,
            "interior: {} samples, {} violations",
            self.interior_samples, self.interior_violations
        );
        let _ = writeln!(
            s,
            "barrier condition: {} samples, {} violations, min {:.3e}",
            self.barrier_samples, self.barrier_violations, self.barrier_min
        );
        let _ = writeln!(s, "controller max |u|/bound: {:.6}", self.controller_max);
        for w in &self.witnesses {
            let _ = writeln!(s, "  witness [{}] at {:?}: {:.6e}", w.check, w.point, w.value);
        }
        let _ = writeln!(s, "{}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

fn physical(scaling: &Scaling, xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .zip(scaling.scale.iter().zip(&scaling.offset))
        .map(|(v, (s, o))| v * s + o)
        .collect()
}

/// Re-verify every SOS block against expressions rebuilt from the barrier,
/// controller and stored multipliers, then sample the set and the barrier
/// condition with the independent vector field.
pub fn verify_properties(
    prob: &BarrierProblem,
    cfg: &SynthesisConfig,
    cert: &BarrierCertificate,
    samples: usize,
    seed: u64,
) -> PropertyReport {
    let tol = VerifyTol::default();
    let builder = Builder {
        prob,
        alpha: cfg.alpha,
        md: cfg.multiplier_degree,
        eps: cert.eps,
        rho0: cert.rho0,
    };
    let mut blocks = Vec::new();
    let mut block_failures = Vec::new();
    let compatible = cert.hhat.vars() == &prob.vars && cert.controller.vars() == &prob.vars;
    if !compatible {
        block_failures.push("variable space does not match the problem".to_string());
    }
    let h = PolyExpr::known(h_expr(prob, cert.kappa, &cert.hhat));
    let u = PolyExpr::known(cert.controller.clone());
    let mults: HashMap<&str, &SosCertificate> = cert.multipliers.iter().map(|c| (c.name.as_str(), c)).collect();
    for m in &cert.multipliers {
        let r = verify_certificate(&m.expression, m, tol);
        if !r.pass {
            block_failures.push(format!("multiplier {}: floor {:.2e}", m.name, r.psd_floor));
        }
        blocks.push((m.name.clone(), r));
    }
    for cond in final_conditions(prob) {
        let name = cond.name(prob);
        let Some(c) = cert.conditions.iter().find(|c| c.name == name) else {
            block_failures.push(format!("{name}: missing"));
            continue;
        };
        let mut missing = Vec::new();
        let mut mult = |n: &str, _: &[usize], _: u32| -> Option<PolyExpr> {
            match mults.get(n) {
                Some(c) => Some(PolyExpr::known(c.expression.clone())),
                None => {
                    missing.push(n.to_string());
                    None
                }
            }
        };
        let rebuilt = if compatible {
            builder.build(cond, &h, &u, None, cert.gamma, &mut mult)
        } else {
            None
        };
        match rebuilt {
            Some(e) => {
                let r = verify_certificate(e.constant_part(), c, tol);
                if !r.pass {
                    block_failures.push(format!(
                        "{name}: floor {:.2e}, coefficient residual {:.2e}",
                        r.psd_floor, r.max_coeff_residual
                    ));
                }
                blocks.push((name, r));
            }
            None => block_failures.push(format!("{name}: cannot rebuild (missing {:?})", missing)),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = prob.n_state;
    let nall = prob.vars.len();
    let hv = |x: &[f64]| -> f64 {
        let mut pt = x.to_vec();
        pt.resize(nall, 0.0);
        cert.kappa - cert.hhat.eval(&pt)
    };
    let grads: Vec<Polynomial> = (0..n).map(|i| cert.hhat.differentiate_at(i)).collect();
    let mut witnesses = Vec::new();
    let mut interior_samples = 0;
    let mut interior_violations = 0;
    let mut interior_pts: Vec<Vec<f64>> = Vec::new();
    let mut check_interior = |x: &[f64], witnesses: &mut Vec<Witness>| {
        interior_samples += 1;
        let worst = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if worst >= 1.0 {
            interior_violations += 1;
            if witnesses.len() < 8 {
                let mut pt = x.to_vec();
                pt.resize(nall, 0.0);
                let mut phys = physical(&cert.scaling, &pt);
                phys.truncate(n);
                witnesses.push(Witness {
                    check: "interior".into(),
                    point: phys,
                    value: worst,
                });
            }
        }
    };
    let half = samples / 2;
    // rays from the origin to the level-set boundary
    let tmax = 3.0 * (n as f64).sqrt();
    for _ in 0..half {
        let dir: Vec<f64> = loop {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nn > 1e-3 && nn <= 1.0 {
                break d.iter().map(|v| v / nn).collect();
            }
        };
        let at = |t: f64| -> Vec<f64> { dir.iter().map(|v| v * t).collect() };
        if hv(&at(0.0)) < 0.0 {
            check_interior(&at(0.0), &mut witnesses);
            continue;
        }
        let steps = 300;
        let mut lo = 0.0;
        let mut hi = None;
        for k in 1..=steps {
            let t = tmax * k as f64 / steps as f64;
            if hv(&at(t)) < 0.0 {
                hi = Some(t);
                break;
            }
            lo = t;
        }
        let tb = match hi {
            Some(mut hi) => {
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if hv(&at(mid)) >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
            None => tmax,
        };
        check_interior(&at(tb), &mut witnesses);
        let s: f64 = rng.random_range(0.0..1.0);
        interior_pts.push(at(tb * s));
    }
    // uniform points of the set, by rejection from an enlarged box
    let mut hits = 0;
    let mut tries = 0;
    while hits < samples - half && tries < 1000 * samples {
        tries += 1;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        if hv(&x) >= 0.0 {
            hits += 1;
            check_interior(&x, &mut witnesses);
            interior_pts.push(x);
        }
    }

    let mut barrier_samples = 0;
    let mut barrier_violations = 0;
    let mut barrier_min = f64::INFINITY;
    let mut controller_max: f64 = 0.0;
    if !interior_pts.is_empty() {
        for k in 0..samples {
            let x = &interior_pts[k % interior_pts.len()];
            let mut pt = x.clone();
            for _ in n..nall {
                pt.push(rng.random_range(-1.0..1.0));
            }
            let hval = hv(x);
            let g: Vec<f64> = grads.iter().map(|p| -p.eval(&pt)).collect();
            let cond = |uh: f64| -> f64 {
                let xd = (prob.rate)(&pt, uh);
                g.iter().zip(&xd).map(|(a, b)| a * b).sum::<f64>() + cert.gamma * hval
            };
            let v = cond(-1.0).max(cond(1.0));
            barrier_samples += 1;
            barrier_min = barrier_min.min(v);
            controller_max = controller_max.max(cert.controller.eval(&pt).abs());
            if v < -1e-6 {
                barrier_violations += 1;
                if witnesses.len() < 8 {
                    witnesses.push(Witness {
                        check: "barrier".into(),
                        point: physical(&cert.scaling, &pt),
                        value: v,
                    });
                }
            }
        }
    }
    if cert.kappa <= 0.0 {
        block_failures.push(format!("origin outside the safe set (κ = {})", cert.kappa));
    }
    let pass = block_failures.is_empty() && interior_violations == 0 && barrier_violations == 0 && barrier_samples > 0;
    PropertyReport {
        blocks,
        block_failures,
        interior_samples,
        interior_violations,
        barrier_samples,
        barrier_violations,
        barrier_min,
        controller_max,
        witnesses,
        pass,
    }
}

/// Scaled lane-keeping problem over `(y, ν, Δψ, r, d, v_f)`.
///
/// The field is multiplied by `v_f / v_c` (with `v_c` the mid speed) so the
/// `1/v_f` entries of `A1` become polynomial.
pub fn lk_problem(
    vehicle: &VehicleParams,
    bounds: &Bounds,
    cfg: &SynthesisConfig,
) -> Result<BarrierProblem, SynthesisError> {
    vehicle.validate().map_err(SynthesisError::Config)?;
    bounds.validate().map_err(SynthesisError::Config)?;
    let s = bounds.lateral();
    let vars = VarSpace::new(["y", "nu", "dpsi", "r", "d", "vf"]);
    let x: Vec<Polynomial> = (0..6).map(|i| Polynomial::var_at(&vars, i)).collect();
    let vc = 0.5 * (bounds.v_lo + bounds.v_hi);
    let vw = 0.5 * (bounds.v_hi - bounds.v_lo);
    let vf = x[5].scale(vw) + vc;
    let c = |v: f64| Polynomial::constant(&vars, v);
    let (m, cf, cr, a, b, iz) = (vehicle.m, vehicle.cf, vehicle.cr, vehicle.a, vehicle.b, vehicle.iz);
    // v_f · A1(v_f), entry by entry
    let mut va: Vec<Vec<Polynomial>> = vec![vec![Polynomial::zero(&vars); 4]; 4];
    va[0][1] = vf.clone();
    va[0][2] = &vf * &vf;
    va[1][1] = c(-(cf + cr) / m);
    va[1][3] = c((b * cr - a * cf) / m) - &(&vf * &vf);
    va[2][3] = vf.clone();
    va[3][1] = c((b * cr - a * cf) / iz);
    va[3][3] = c(-(a * a * cf + b * b * cr) / iz);
    let sc = 1.0 / vc;
    let b1 = vehicle.b1();
    let mut drift = Vec::with_capacity(4);
    let mut input = Vec::with_capacity(4);
    for i in 0..4 {
        let mut acc = Polynomial::zero(&vars);
        for j in 0..4 {
            acc = acc + &va[i][j] * &x[j].scale(s[j]);
        }
        if i == 2 {
            acc = acc - &(&vf * &x[4]).scale(bounds.d_max);
        }
        drift.push(acc.scale(sc / s[i]));
        input.push(vf.scale(b1[i] * bounds.delta_f * sc / s[i]));
    }
    let gamma_weight = vf.scale(sc);
    let one = c(1.0);
    let extra_box = vec![&one - &(&x[4] * &x[4]), &one - &(&x[5] * &x[5])];

    // linear seed: u = −K (x − [0, 0, 0, d])
    let qd = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(4, s.iter().map(|v| 1.0 / (v * v))));
    let lqr = riccati::solve_care(&riccati::lateral_problem(vehicle, cfg.seed_vf, qd, cfg.seed_r))?;
    let k: Vec<f64> = (0..4).map(|i| lqr.k[(0, i)]).collect();
    let seed = if bounds.delta_f > 0.0 {
        let mut kx = x[4].scale(k[3] * bounds.d_max);
        for i in 0..4 {
            kx = kx - &x[i].scale(k[i] * s[i]);
        }
        kx.scale(1.0 / bounds.delta_f)
    } else {
        Polynomial::zero(&vars)
    };

    let veh = *vehicle;
    let bnd = *bounds;
    let rate: RateFn = Arc::new(move |p: &[f64], uh: f64| {
        let s = bnd.lateral();
        let xs = Vector4::new(p[0] * s[0], p[1] * s[1], p[2] * s[2], p[3] * s[3]);
        let d = p[4] * bnd.d_max;
        let vf = 0.5 * (bnd.v_lo + bnd.v_hi) + 0.5 * (bnd.v_hi - bnd.v_lo) * p[5];
        let xd = veh.a1(vf) * xs + veh.b1() * (uh * bnd.delta_f) + veh.e1() * d;
        (0..4).map(|i| xd[i] / s[i]).collect()
    });
    Ok(BarrierProblem {
        vars,
        n_state: 4,
        drift,
        input,
        gamma_weight,
        extra_box,
        seed,
        rate,
        scaling: Scaling {
            names: ["y", "nu", "dpsi", "r", "d", "vf"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            scale: vec![s[0], s[1], s[2], s[3], bounds.d_max, vw],
            offset: vec![0.0, 0.0, 0.0, 0.0, 0.0, vc],
            input_scale: bounds.delta_f,
        },
    })
}

/// Full lane-keeping pipeline with the seed retry policy: halve `ρ0` twice,
/// then double the seed's control weight twice.
pub fn synthesize_lk(
    vehicle: &VehicleParams,
    bounds: &Bounds,
    cfg: &SynthesisConfig,
) -> Result<(BarrierCertificate, BarrierProblem, SynthesisConfig), SynthesisError> {
    cfg.validate()?;
    let mut attempts = vec![cfg.clone()];
    for k in 1..=2 {
        let mut c = cfg.clone();
        c.rho0 = cfg.rho0 / 2f64.powi(k);
        attempts.push(c);
    }
    for k in 1..=2 {
        let mut c = cfg.clone();
        c.rho0 = cfg.rho0 / 4.0;
        c.seed_r = cfg.seed_r * 2f64.powi(k);
        attempts.push(c);
    }
    let mut last = String::new();
    for (i, c) in attempts.iter().enumerate() {
        let prob = lk_problem(vehicle, bounds, c)?;
        match synthesize(&prob, c) {
            Ok(cert) => return Ok((cert, prob, c.clone())),
            Err(SynthesisError::SeedInfeasible { detail, .. }) => {
                log::warn!(
                    "seed attempt {} (ρ0 = {}, R = {}) failed: {detail}",
                    i + 1,
                    c.rho0,
                    c.seed_r
                );
                last = detail;
            }
            Err(e) => return Err(e),
        }
    }
    Err(SynthesisError::SeedInfeasible {
        attempts: attempts.len(),
        detail: format!("{last}; consider other LQR weights, a smaller γ or a smaller ρ0"),
    })
}

// ---------------------------------------------------------------------------
// certificate file

fn write_poly(out: &mut String, p: &Polynomial) {
    out.push_str(&p.to_text());
}

fn write_block(out: &mut String, kind: &str, c: &SosCertificate) {
    let n = c.basis.len();
    let _ = writeln!(out, "begin {kind} {}", c.name);
    let _ = writeln!(out, "basis {n}");
    for m in &c.basis {
        let _ = writeln!(out, "{m:?}");
    }
    let _ = writeln!(out, "gram");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:e}", c.gram[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let _ = writeln!(out, "expression");
    write_poly(out, &c.expression);
    let _ = writeln!(out, "end");
}

impl BarrierCertificate {
    /// `h` at a physical lateral state.
    pub fn h(&self, x: &[f64]) -> f64 {
        let pt = self.scaled_point(x);
        self.kappa - self.hhat.eval(&pt)
    }

    /// `∂h/∂x` at a physical lateral state.
    pub fn grad_h(&self, x: &[f64]) -> Vec<f64> {
        let pt = self.scaled_point(x);
        (0..x.len())
            .map(|i| -self.hhat.differentiate_at(i).eval(&pt) / self.scaling.scale[i])
            .collect()
    }

    fn scaled_point(&self, x: &[f64]) -> Vec<f64> {
        let n = self.hhat.vars().len();
        let mut pt: Vec<f64> = (0..n)
            .map(|i| {
                if i < x.len() {
                    (x[i] - self.scaling.offset[i]) / self.scaling.scale[i]
                } else {
                    0.0
                }
            })
            .collect();
        pt.truncate(n);
        pt
    }

    pub fn kappa_sequence(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.kappa).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "iforge-barrier-certificate 1");
        let _ = writeln!(out, "kappa {:e}", self.kappa);
        let _ = writeln!(out, "gamma {:e}", self.gamma);
        let _ = writeln!(out, "eps {:e}", self.eps);
        let _ = writeln!(out, "rho0 {:e}", self.rho0);
        let _ = writeln!(out, "input_scale {:e}", self.scaling.input_scale);
        for i in 0..self.scaling.names.len() {
            let _ = writeln!(
                out,
                "scale {} {:e} {:e}",
                self.scaling.names[i], self.scaling.scale[i], self.scaling.offset[i]
            );
        }
        for r in &self.history {
            let _ = writeln!(out, "history {} {:e} {} {:e}", r.stage, r.kappa, r.solves, r.seconds);
        }
        let _ = writeln!(out, "begin hhat");
        write_poly(&mut out, &self.hhat);
        let _ = writeln!(out, "end");
        let _ = writeln!(out, "begin controller");
        write_poly(&mut out, &self.controller);
        let _ = writeln!(out, "end");
        for c in &self.conditions {
            write_block(&mut out, "condition", c);
        }
        for c in &self.multipliers {
            write_block(&mut out, "multiplier", c);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<BarrierCertificate, CertificateParseError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let err = |line: usize, msg: &str| CertificateParseError::Syntax {
            line,
            msg: msg.to_string(),
        };
        let num = |line: usize, s: Option<&str>| -> Result<f64, CertificateParseError> {
            s.and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, "expected a finite number"))
        };
        let mut it = lines.into_iter().peekable();
        match it.next() {
            Some((_, "iforge-barrier-certificate 1")) => {}
            Some((l, _)) => return Err(err(l, "not a barrier certificate (bad magic line)")),
            None => return Err(err(1, "empty file")),
        }
        let (mut kappa, mut gamma, mut eps, mut rho0, mut input_scale) = (None, None, None, None, None);
        let mut scaling = Scaling {
            names: Vec::new(),
            scale: Vec::new(),
            offset: Vec::new(),
            input_scale: 0.0,
        };
        let mut history = Vec::new();
        let mut hhat = None;
        let mut controller = None;
        let mut conditions = Vec::new();
        let mut multipliers = Vec::new();
        let poly_until_end = |it: &mut std::iter::Peekable<std::vec::IntoIter<(usize, &str)>>,
                              start: usize|
         -> Result<Polynomial, CertificateParseError> {
            let mut buf = String::new();
            loop {
                match it.peek() {
                    Some((_, "end")) | None => break,
                    Some(&(_, l)) if l.starts_with("basis") || l == "gram" => break,
                    Some(&(_, l)) => {
                        buf.push_str(l);
                        buf.push('\n');
                        it.next();
                    }
                }
            }
            Polynomial::from_text(&buf).map_err(|e| err(start, &format!("polynomial: {e}")))
        };
        while let Some((ln, line)) = it.next() {
            let mut w = line.split_whitespace();
            match w.next() {
                Some("kappa") => kappa = Some(num(ln, w.next())?),
                Some("gamma") => gamma = Some(num(ln, w.next())?),
                Some("eps") => eps = Some(num(ln, w.next())?),
                Some("rho0") => rho0 = Some(num(ln, w.next())?),
                Some("input_scale") => input_scale = Some(num(ln, w.next())?),
                Some("scale") => {
                    let name = w.next().ok_or_else(|| err(ln, "scale needs a name"))?;
                    scaling.names.push(name.to_string());
                    scaling.scale.push(num(ln, w.next())?);
                    scaling.offset.push(num(ln, w.next())?);
                }
                Some("history") => {
                    let stage = w.next().ok_or_else(|| err(ln, "history needs a stage"))?.to_string();
                    let kappa = num(ln, w.next())?;
                    let solves = num(ln, w.next())? as usize;
                    let seconds = num(ln, w.next())?;
                    history.push(StageRecord {
                        stage,
                        kappa,
                        solves,
                        seconds,
                    });
                }
                Some("begin") => {
                    let kind = w.next().ok_or_else(|| err(ln, "begin needs a kind"))?;
                    match kind {
                        "hhat" | "controller" => {
                            let p = poly_until_end(&mut it, ln)?;
                            if kind == "hhat" {
                                hhat = Some(p);
                            } else {
                                controller = Some(p);
                            }
                        }
                        "condition" | "multiplier" => {
                            let name = w.next().ok_or_else(|| err(ln, "block needs a name"))?.to_string();
                            let (bl, bline) = it.next().ok_or_else(|| err(ln, "truncated block"))?;
                            let n: usize = bline
                                .strip_prefix("basis ")
                                .and_then(|v| v.trim().parse().ok())
                                .ok_or_else(|| err(bl, "expected `basis N`"))?;
                            let mut basis = Vec::with_capacity(n);
                            for _ in 0..n {
                                let (l, t) = it.next().ok_or_else(|| err(bl, "truncated basis"))?;
                                basis.push(parse_tuple(t).ok_or_else(|| err(l, "bad exponent tuple"))?);
                            }
                            match it.next() {
                                Some((_, "gram")) => {}
                                Some((l, _)) => return Err(err(l, "expected `gram`")),
                                None => return Err(err(bl, "truncated block")),
                            }
                            let mut gram = DMatrix::zeros(n, n);
                            for i in 0..n {
                                let (l, t) = it.next().ok_or_else(|| err(bl, "truncated gram"))?;
                                let row: Vec<f64> = t.split_whitespace().filter_map(|v| v.parse().ok()).collect();
                                if row.len() != n || row.iter().any(|v| !v.is_finite()) {
                                    return Err(err(l, "gram row has the wrong length or a bad value"));
                                }
                                for j in 0..n {
                                    gram[(i, j)] = row[j];
                                }
                            }
                            match it.next() {
                                Some((_, "expression")) => {}
                                Some((l, _)) => return Err(err(l, "expected `expression`")),
                                None => return Err(err(bl, "truncated block")),
                            }
                            let expression = poly_until_end(&mut it, bl)?;
                            let c = SosCertificate {
                                name,
                                basis,
                                gram,
                                expression,
                            };
                            if kind == "condition" {
                                conditions.push(c);
                            } else {
                                multipliers.push(c);
                            }
                        }
                        _ => return Err(err(ln, "unknown block kind")),
                    }
                    match it.next() {
                        Some((_, "end")) => {}
                        Some((l, _)) => return Err(err(l, "expected `end`")),
                        None => return Err(err(ln, "missing `end`")),
                    }
                }
                _ => return Err(err(ln, "unknown directive")),
            }
        }
        scaling.input_scale = input_scale.ok_or(CertificateParseError::Missing("input_scale"))?;
        let hhat = hhat.ok_or(CertificateParseError::Missing("hhat"))?;
        if scaling.names.len() != hhat.vars().len() {
            return Err(CertificateParseError::Missing("scale for every variable"));
        }
        Ok(BarrierCertificate {
            hhat,
            kappa: kappa.ok_or(CertificateParseError::Missing("kappa"))?,
            gamma: gamma.ok_or(CertificateParseError::Missing("gamma"))?,
            eps: eps.ok_or(CertificateParseError::Missing("eps"))?,
            rho0: rho0.ok_or(CertificateParseError::Missing("rho0"))?,
            controller: controller.ok_or(CertificateParseError::Missing("controller"))?,
            scaling,
            conditions,
            multipliers,
            history,
        })
    }
}

fn parse_tuple(t: &str) -> Option<Monomial> {
    let inner = t.strip_prefix('(')?.strip_suffix(')')?;
    if inner.trim().is_empty() {
        return Some(Monomial::new(Vec::new()));
    }
    let e: Option<Vec<u32>> = inner.split(',').map(|v| v.trim().parse().ok()).collect();
    e.map(Monomial::new)
}

/// One-dimensional example `ẋ = −x + u`, `|x| ≤ 1`, `|u| ≤ 1`.
pub fn scalar_example() -> BarrierProblem {
    let vars = VarSpace::new(["x"]);
    let x = Polynomial::var_at(&vars, 0);
    let k = 2f64.sqrt() - 1.0;
    BarrierProblem {
        drift: vec![-&x],
        input: vec![Polynomial::constant(&vars, 1.0)],
        gamma_weight: Polynomial::constant(&vars, 1.0),
        extra_box: Vec::new(),
        seed: x.scale(-k),
        rate: Arc::new(|p: &[f64], u: f64| vec![-p[0] + u]),
        scaling: Scaling {
            names: vec!["x".into()],
            scale: vec![1.0],
            offset: vec![0.0],
            input_scale: 1.0,
        },
        n_state: 1,
        vars,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg() -> SynthesisConfig {
        SynthesisConfig {
            rho0: 0.1,
            ..SynthesisConfig::default()
        }
    }

    #[test]
    fn normalization() {
        let v = VarSpace::new(["x", "y"]);
        let x = Polynomial::var_at(&v, 0);
        let y = Polynomial::var_at(&v, 1);
        let h = Polynomial::constant(&v, 0.5) - &(&x * &x).scale(2.0) - &(&y * &y).scale(2.0);
        let (k, hh) = normalize(&h).unwrap();
        assert!((k - 0.125).abs() < 1e-15);
        assert!((hh.eval(&[1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!(normalize(&(&x * &x)).is_none());
    }

    #[test]
    fn toy_seed_is_feasible() {
        let prob = scalar_example();
        let (k, hh) = init_p0(&prob, &toy_cfg()).unwrap();
        assert!(k > 0.0);
        // h ≥ 0 implies |x| < 1 on a fine grid
        for i in -300..=300 {
            let x = i as f64 / 100.0;
            if k - hh.eval(&[x]) >= 0.0 {
                assert!(x.abs() < 1.0, "x = {x}");
            }
        }
    }

    #[test]
    fn toy_pipeline() {
        let prob = scalar_example();
        let cfg = toy_cfg();
        let cert = synthesize(&prob, &cfg).unwrap();
        let ks = cert.kappa_sequence();
        assert!(ks.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{ks:?}");
        assert!(cert.history.iter().filter(|r| r.stage.starts_with("P2")).count() <= 5);
        assert!(cert.h(&[0.5]) >= 0.0 && cert.h(&[-0.5]) >= 0.0, "{}", cert.kappa);
        let rep = verify_properties(&prob, &cfg, &cert, 2000, 7);
        assert!(rep.pass, "{}", rep.summary());
        assert!(rep.controller_max <= 1.0 + 1e-6);
    }

    #[test]
    fn toy_gamma() {
        let prob = scalar_example();
        let cfg = SynthesisConfig {
            kappa_tol: f64::INFINITY,
            ..toy_cfg()
        };
        let mut cert = synthesize(&prob, &cfg).unwrap();
        assert_eq!(cert.history.len(), 3);
        let g = maximize_gamma(&prob, &cfg, &mut cert);
        assert!(g >= 2.0);
        let g_cfg = SynthesisConfig {
            gamma: g,
            ..cfg.clone()
        };
        assert!(verify_properties(&prob, &g_cfg, &cert, 1000, 3).pass);
    }

    #[test]
    fn no_authority_is_infeasible() {
        let mut prob = scalar_example();
        // unstable drift without input cannot keep |x| ≤ 1 with margin γ
        let x = Polynomial::var_at(&prob.vars, 0);
        prob.drift = vec![x.clone()];
        prob.input = vec![Polynomial::zero(&prob.vars)];
        prob.seed = Polynomial::zero(&prob.vars);
        prob.extra_box = Vec::new();
        let cfg = toy_cfg();
        assert!(matches!(
            init_p0(&prob, &cfg),
            Err(SynthesisError::SeedInfeasible { .. })
        ));
    }

    #[test]
    fn certificate_text_round_trip() {
        let prob = scalar_example();
        let cert = synthesize(&prob, &toy_cfg()).unwrap();
        let back = BarrierCertificate::from_text(&cert.to_text()).unwrap();
        assert_eq!(back.kappa, cert.kappa);
        assert_eq!(back.hhat, cert.hhat);
        assert_eq!(back.conditions.len(), cert.conditions.len());
        assert_eq!(back.multipliers[0].gram, cert.multipliers[0].gram);
        assert!(BarrierCertificate::from_text("garbage").is_err());
    }

    #[test]
    fn constant_barrier_fails_interior() {
        let prob = scalar_example();
        let cfg = toy_cfg();
        let mut cert = synthesize(&prob, &cfg).unwrap();
        cert.hhat = Polynomial::zero(&prob.vars);
        cert.kappa = 1.0;
        let rep = verify_properties(&prob, &cfg, &cert, 500, 1);
        assert!(!rep.pass && rep.interior_violations > 0);
        assert!(rep.witnesses.iter().any(|w| w.check == "interior"));
    }
}
