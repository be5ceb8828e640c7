//! Reference QP solves shared by the filter tests and the acceptance run.
#![allow(dead_code)]

use iforge::acc_barrier::{AccBarrier, AccBarrierParams, LongitudinalModel};
use iforge::cli::DEFAULT_CERTIFICATE;
use iforge::lk_synthesis::BarrierCertificate;
use iforge::params::{Bounds, VehicleParams};
use iforge::safety_filter::{
    acc_clf_row, acc_filter, acc_rows, dense_qp, lateral_field, lk_cbf_row, lk_filter, project_filter, FilterGains,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cert() -> BarrierCertificate {
    BarrierCertificate::from_text(DEFAULT_CERTIFICATE).unwrap()
}

pub fn model() -> LongitudinalModel {
    LongitudinalModel {
        vehicle: VehicleParams::default(),
        bounds: Bounds::default(),
    }
}

pub fn acc_barrier(gains: &FilterGains) -> AccBarrier {
    AccBarrier::new(AccBarrierParams::new(&VehicleParams::default(), &Bounds::default(), gains.gamma2).unwrap())
}

fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

/// Dense QP with at most one equality row `e·z = f`.
fn qp(q: &[f64], lin: &[f64], g: &[Vec<f64>], h: &[f64], eq: Option<(&[f64], f64)>) -> Option<DVector<f64>> {
    let n = lin.len();
    let gm = DMatrix::from_fn(g.len(), n, |i, j| g[i][j]);
    let (em, fv) = match eq {
        Some((e, f)) => (mat(1, n, e), DVector::from_element(1, f)),
        None => (DMatrix::zeros(0, n), DVector::zeros(0)),
    };
    dense_qp(
        &mat(n, n, q),
        &DVector::from_row_slice(lin),
        &gm,
        &DVector::from_row_slice(h),
        &em,
        &fv,
    )
}

pub struct LkCase {
    pub x1: [f64; 4],
    pub vf: f64,
    pub d: f64,
    pub u_nom: f64,
}

pub fn lk_case(rng: &mut ChaCha8Rng, b: &Bounds) -> LkCase {
    let lim = b.lateral();
    LkCase {
        x1: std::array::from_fn(|i| rng.random_range(-lim[i]..lim[i])),
        vf: rng.random_range(b.v_lo..b.v_hi),
        d: rng.random_range(-b.d_max..b.d_max),
        u_nom: rng.random_range(-2.0 * b.delta_f..2.0 * b.delta_f),
    }
}

/// The LK filter QP in the variables `(u, δ[, δ3])`, solved by active-set
/// enumeration.
fn lk_reference(c: &LkCase, cert: &BarrierCertificate, gains: &FilterGains, b: &Bounds) -> Option<f64> {
    let veh = VehicleParams::default();
    let (a, bb) = lk_cbf_row(&c.x1, c.vf, c.d, cert, &veh, gains.gamma1).unwrap();
    let df = b.delta_f;
    let z = if gains.lateral_accel {
        let f0 = lateral_field(&veh, &c.x1, c.vf, 0.0, c.d)[1];
        let g = veh.b1()[1];
        let nm = gains.nu_dot_max;
        qp(
            &[1.0, 0.0, 0.0, 0.0, gains.p2, 0.0, 0.0, 0.0, gains.p3],
            &[0.0, 0.0, 0.0],
            &[
                vec![a, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![-1.0, 0.0, 0.0],
                vec![g, 0.0, -1.0],
                vec![-g, 0.0, -1.0],
            ],
            &[bb, df, df, nm - f0, nm + f0],
            Some((&[1.0, -1.0, 0.0], c.u_nom)),
        )?
    } else {
        qp(
            &[1.0, 0.0, 0.0, gains.p2],
            &[0.0, 0.0],
            &[vec![a, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]],
            &[bb, df, df],
            Some((&[1.0, -1.0], c.u_nom)),
        )?
    };
    Some(z[0])
}

/// Filter output against the reference over a batch of random instances.
#[derive(Debug, Clone, Copy, Default)]
pub struct Agreement {
    pub instances: usize,
    /// both feasible
    pub feasible: usize,
    /// instances where exactly one side is infeasible
    pub mismatched: usize,
    /// largest `|u − u_ref| / (1 + |u_ref|)`
    pub worst: f64,
}

impl Agreement {
    fn record(&mut self, filter: Option<f64>, reference: Option<f64>) {
        self.instances += 1;
        match (filter, reference) {
            (Some(u), Some(r)) => {
                self.feasible += 1;
                self.worst = self.worst.max((u - r).abs() / (1.0 + r.abs()));
            }
            (None, None) => {}
            _ => self.mismatched += 1,
        }
    }

    pub fn ok(&self, tol: f64) -> bool {
        self.mismatched == 0 && self.worst <= tol && 2 * self.feasible > self.instances
    }
}

pub fn lk_agreement(gains: FilterGains, seed: u64, n: usize) -> Agreement {
    let b = Bounds::default();
    let cert = cert();
    let veh = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agg = Agreement::default();
    for _ in 0..n {
        let c = lk_case(&mut rng, &b);
        let out = lk_filter(&c.x1, c.vf, c.d, c.u_nom, &cert, &veh, &gains, &b).unwrap();
        agg.record(out.feasible.then_some(out.u), lk_reference(&c, &cert, &gains, &b));
    }
    agg
}

pub fn acc_agreement(seed: u64, n: usize) -> Agreement {
    let gains = FilterGains::default();
    let bar = acc_barrier(&gains);
    let model = model();
    let b = model.bounds;
    let veh = model.vehicle;
    let m2 = veh.m * veh.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agg = Agreement::default();
    for _ in 0..n {
        let vf = rng.random_range(b.v_lo..b.v_hi);
        let vl = rng.random_range(0.0..b.v_hi);
        let h = rng.random_range(-1.0..30.0);
        let dist = h + bar.params.tau_d * vf + bar.params.d0 + bar.hhat(vf, vl);
        let nu_r = rng.random_range(-b.nu_r_max()..b.nu_r_max());
        let v_d = rng.random_range(b.v_lo..b.v_hi);
        let x2 = [vf, vl, dist];
        let out = acc_filter(x2, nu_r, &bar, &model, &gains, v_d);
        let (alpha, beta) = acc_clf_row(x2, nu_r, &model, &gains, v_d);
        let (cbf, speed) = acc_rows(x2, nu_r, &bar, &model, &gains);
        let fr = veh.drag(vf);
        // variables (u, δ); the CLF row is α + β·u ≤ δ
        let solve = |rows: &[(f64, f64)]| {
            let mut g = vec![vec![beta, -1.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
            let mut h = vec![-alpha, model.u_max(), -model.u_min()];
            for &(a, bb) in rows {
                g.push(vec![a, 0.0]);
                h.push(bb);
            }
            qp(&[1.0 / m2, 0.0, 0.0, gains.p1], &[-fr / m2, 0.0], &g, &h, None)
        };
        // speed rows yield when they conflict with the barrier rows
        let all: Vec<(f64, f64)> = cbf.iter().chain(&speed).copied().collect();
        let reference = solve(&all).or_else(|| solve(&cbf)).map(|z| z[0]);
        agg.record(out.feasible.then_some(out.u), reference);
    }
    agg
}

pub fn project_agreement(seed: u64, n: usize) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agg = Agreement::default();
    for _ in 0..n {
        let rows: Vec<(f64, f64)> = (0..rng.random_range(0..4))
            .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-1.0..2.0)))
            .collect();
        let u_nom = rng.random_range(-3.0..3.0);
        let out = project_filter(u_nom, &rows, -1.0, 1.0);
        let mut g = vec![vec![1.0], vec![-1.0]];
        let mut h = vec![1.0, 1.0];
        for &(a, b) in &rows {
            g.push(vec![a]);
            h.push(b);
        }
        let reference = qp(&[1.0], &[-u_nom], &g, &h, None).map(|z| z[0]);
        agg.record(out.feasible.then_some(out.u), reference);
    }
    agg
}
