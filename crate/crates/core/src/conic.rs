//! Linear conic programs over products of free, nonnegative and PSD cones.
//!
//! Standard form:
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x = b,  x ∈ K = K_1 × … × K_p
//! ```
//!
//! PSD blocks store the lower triangle column by column with off-diagonal
//! entries scaled by √2, so that `svec(X)ᵀ svec(Y) = tr(XY)`. The dual is
//! `maximize bᵀy  s.t.  c − Aᵀy = s ∈ K*`.
//!
//! [`solve`] runs a homogeneous self-dual interior-point method with
//! Nesterov–Todd scaling by default. [`Method::Admm`] selects a first-order
//! splitting instead, alternating an exact projection onto `{Ax = b}` with a
//! projection onto `K`; its affine projection uses a dense Cholesky factor
//! of `AAᵀ`, computed once per solve.

mod ipm;

use std::fmt::Write as _;
use std::io;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("equality constraints are numerically rank deficient")]
    RankDeficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Free(usize),
    Nonneg(usize),
    /// Symmetric `n × n` matrix, stored as `n(n+1)/2` scaled entries.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Free(n) | Cone::Nonneg(n) => n,
            Cone::Psd(n) => n * (n + 1) / 2,
        }
    }
}

/// Position of entry `(i, j)`, `i >= j`, inside the svec of an `n × n` matrix.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * n - j * (j + 1) / 2 + i
}

pub fn svec_to_mat(n: usize, v: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = v[k] * r;
                m[(j, i)] = v[k] * r;
            }
            k += 1;
        }
    }
    m
}

pub fn mat_to_svec(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let s = std::f64::consts::SQRT_2;
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * s
            };
            k += 1;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub c: Vec<f64>,
    pub a: CsrMatrix<f64>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn new(c: Vec<f64>, a: CsrMatrix<f64>, b: Vec<f64>, cones: Vec<Cone>) -> Result<Self, ConicError> {
        let p = ConicProblem { c, a, b, cones };
        p.validate()?;
        Ok(p)
    }

    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        c: Vec<f64>,
        nrows: usize,
        triplets: &[(usize, usize, f64)],
        b: Vec<f64>,
        cones: Vec<Cone>,
    ) -> Result<Self, ConicError> {
        let ncols = c.len();
        let mut coo = CooMatrix::new(nrows, ncols);
        for &(r, col, v) in triplets {
            if r >= nrows || col >= ncols {
                return Err(ConicError::DimensionMismatch(format!(
                    "triplet ({r}, {col}) outside {nrows}×{ncols}"
                )));
            }
            coo.push(r, col, v);
        }
        ConicProblem::new(c, CsrMatrix::from(&coo), b, cones)
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    fn validate(&self) -> Result<(), ConicError> {
        let n: usize = self.cones.iter().map(Cone::dim).sum();
        if n != self.c.len() {
            return Err(ConicError::DimensionMismatch(format!(
                "cones cover {n} variables, objective has {}",
                self.c.len()
            )));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(ConicError::DimensionMismatch(format!(
                "A is {}×{}, expected {}×{n}",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("objective"));
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("right-hand side"));
        }
        if self.a.values().iter().any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("constraint matrix"));
        }
        Ok(())
    }

    /// Text dump: one `cone` line per block, then `c`, `b` and `A` sections
    /// of `index value` / `row col value` lines.
    pub fn write_dump<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "rows {} cols {}", self.num_rows(), self.num_vars())?;
        for cone in &self.cones {
            match cone {
                Cone::Free(n) => writeln!(w, "cone free {n}")?,
                Cone::Nonneg(n) => writeln!(w, "cone nonneg {n}")?,
                Cone::Psd(n) => writeln!(w, "cone psd {n}")?,
            }
        }
        writeln!(w, "c")?;
        for (i, v) in self.c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(w, "{i} {v:e}")?;
        }
        writeln!(w, "b")?;
        for (i, v) in self.b.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(w, "{i} {v:e}")?;
        }
        writeln!(w, "A")?;
        for (r, row) in self.a.row_iter().enumerate() {
            for (&col, &v) in row.col_indices().iter().zip(row.values()) {
                writeln!(w, "{r} {col} {v:e}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// stopped without converging; the returned point meets the tolerances
    /// loosened by a factor of 100
    Inaccurate,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    InteriorPoint,
    Admm,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub method: Method,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub eps_gap: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub scale: bool,
    pub rho: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub check_interval: usize,
    pub ipm_max_iter: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            method: Method::InteriorPoint,
            eps_primal: 1e-7,
            eps_dual: 1e-7,
            eps_gap: 1e-6,
            eps_infeasible: 1e-7,
            max_iter: 200_000,
            scale: true,
            rho: 1.0,
            alpha: 1.6,
            adaptive_rho: true,
            check_interval: 25,
            ipm_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: Status,
    /// Primal point; always inside the cone.
    pub x: Vec<f64>,
    /// Equality multipliers.
    pub y: Vec<f64>,
    /// Dual slack `s ∈ K*`.
    pub s: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// For `Infeasible`: `y` with `Aᵀy ∈ K*` and `bᵀy = −1`.
    /// For `Unbounded`: `d ∈ K` with `Ad = 0` and `cᵀd = −1`.
    pub certificate: Option<Vec<f64>>,
}

impl ConicSolution {
    pub fn primal_objective(&self, p: &ConicProblem) -> f64 {
        dot(&p.c, &self.x)
    }

    pub fn dual_objective(&self, p: &ConicProblem) -> f64 {
        dot(&p.b, &self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `‖Ax − b‖ / (1 + ‖b‖)`
    pub primal: f64,
    /// `dist(c − Aᵀy, K*) / (1 + ‖c‖)`
    pub dual: f64,
    /// `|cᵀx − bᵀy| / (1 + |cᵀx| + |bᵀy|)`
    pub gap: f64,
    /// Distance of `x` to the cone.
    pub cone_violation: f64,
    /// Minimum eigenvalue of every PSD block of `x`, in block order.
    pub psd_floors: Vec<f64>,
}

/// Recompute residuals of a primal/dual pair from the problem data alone.
pub fn check_residuals(p: &ConicProblem, sol: &ConicSolution) -> Result<ResidualReport, ConicError> {
    if sol.x.len() != p.num_vars() || sol.y.len() != p.num_rows() {
        return Err(ConicError::DimensionMismatch("solution does not match problem".into()));
    }
    let ax = spmv(&p.a, &sol.x);
    let r: Vec<f64> = ax.iter().zip(&p.b).map(|(a, b)| a - b).collect();
    let primal = norm(&r) / (1.0 + norm(&p.b));

    let aty = spmv_t(&p.a, &sol.y);
    let s: Vec<f64> = p.c.iter().zip(&aty).map(|(c, a)| c - a).collect();
    let mut sp = s.clone();
    project_cone(&p.cones, &mut sp, true);
    let dual = dist(&s, &sp) / (1.0 + norm(&p.c));

    let pobj = dot(&p.c, &sol.x);
    let dobj = dot(&p.b, &sol.y);
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

    let mut xp = sol.x.clone();
    project_cone(&p.cones, &mut xp, false);
    let cone_violation = dist(&sol.x, &xp);

    let mut psd_floors = Vec::new();
    let mut off = 0;
    for cone in &p.cones {
        if let Cone::Psd(n) = *cone {
            psd_floors.push(min_eigenvalue(&svec_to_mat(n, &sol.x[off..off + cone.dim()])));
        }
        off += cone.dim();
    }
    Ok(ResidualReport {
        primal,
        dual,
        gap,
        cone_violation,
        psd_floors,
    })
}

/// Optional starting point, in the original (unscaled) variables.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
}

impl From<&ConicSolution> for WarmStart {
    fn from(sol: &ConicSolution) -> Self {
        WarmStart {
            x: sol.x.clone(),
            s: sol.s.clone(),
        }
    }
}

pub fn solve(p: &ConicProblem, settings: &Settings) -> Result<ConicSolution, ConicError> {
    solve_warm(p, settings, None)
}

pub fn solve_warm(
    p: &ConicProblem,
    settings: &Settings,
    warm: Option<&WarmStart>,
) -> Result<ConicSolution, ConicError> {
    if settings.method == Method::InteriorPoint {
        return ipm::solve(p, settings);
    }
    p.validate()?;
    let scaled = Scaled::new(p, settings.scale);
    let factor = AffineProjector::new(&scaled.a)?;
    let n = p.num_vars();
    let m = p.num_rows();

    let mut rho = settings.rho;
    let mut z = vec![0.0; n];
    let mut u = vec![0.0; n];
    if let Some(w) = warm {
        if w.x.len() == n && w.s.len() == n {
            for i in 0..n {
                z[i] = w.x[i] / scaled.e[i];
                // s̃ = σ E s, and s̃ = −ρu
                u[i] = -(scaled.sigma * scaled.e[i] * w.s[i]) / rho;
            }
            project_cone(&p.cones, &mut z, false);
        }
    }

    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; m];
    let mut zprev = z.clone();
    let mut yprev = vec![0.0; m];
    let mut ytilde = vec![0.0; m];
    let mut last_rho_change = 0usize;

    let mut iter = 0;
    let result_status;
    let mut certificate = None;
    loop {
        // x-update: project z − u − c/ρ onto {Ãx = b̃}
        for i in 0..n {
            v[i] = z[i] - u[i] - scaled.c[i] / rho;
        }
        factor.project(&scaled.a, &scaled.b, &v, &mut x, &mut w);
        // multiplier of the affine projection
        yprev.copy_from_slice(&ytilde);
        for k in 0..m {
            ytilde[k] = -rho * w[k];
        }
        zprev.copy_from_slice(&z);
        for i in 0..n {
            let xr = settings.alpha * x[i] + (1.0 - settings.alpha) * z[i];
            v[i] = xr + u[i];
            x[i] = xr;
        }
        z.copy_from_slice(&v);
        project_cone(&p.cones, &mut z, false);
        for i in 0..n {
            u[i] = v[i] - z[i];
        }
        iter += 1;

        let check = iter % settings.check_interval == 0 || iter >= settings.max_iter;
        if !check {
            continue;
        }
        let (xo, yo, so) = scaled.unscale(&z, &ytilde, &u, rho);
        let rep = residuals_with_slack(p, &xo, &yo, &so);
        if rep.0 <= settings.eps_primal && rep.1 <= settings.eps_dual && rep.2 <= settings.eps_gap {
            result_status = Status::Optimal;
            break;
        }
        if iter > last_rho_change + 1 {
            if let Some(cert) = infeasibility_certificate(p, &scaled, &ytilde, &yprev, settings.eps_infeasible) {
                certificate = Some(cert);
                result_status = Status::Infeasible;
                break;
            }
            if let Some(cert) = unboundedness_certificate(p, &scaled, &z, &zprev, settings.eps_infeasible) {
                certificate = Some(cert);
                result_status = Status::Unbounded;
                break;
            }
        }
        if iter >= settings.max_iter {
            result_status = Status::MaxIter;
            break;
        }
        if settings.adaptive_rho && iter % (settings.check_interval * 4) == 0 {
            let new_rho = balanced_rho(&scaled, &x, &z, &zprev, &u, rho);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                for ui in u.iter_mut() {
                    *ui *= rho / new_rho;
                }
                rho = new_rho;
                last_rho_change = iter;
            }
        }
    }

    let (xo, yo, so) = scaled.unscale(&z, &ytilde, &u, rho);
    let (pr, dr, gap) = residuals_with_slack(p, &xo, &yo, &so);
    Ok(ConicSolution {
        status: result_status,
        x: xo,
        y: yo,
        s: so,
        primal_residual: pr,
        dual_residual: dr,
        gap,
        iterations: iter,
        certificate,
    })
}

fn residuals_with_slack(p: &ConicProblem, x: &[f64], y: &[f64], s: &[f64]) -> (f64, f64, f64) {
    let ax = spmv(&p.a, x);
    let rp: f64 = ax.iter().zip(&p.b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let aty = spmv_t(&p.a, y);
    let rd: f64 = (0..x.len())
        .map(|i| {
            let r = p.c[i] - aty[i] - s[i];
            r * r
        })
        .sum::<f64>()
        .sqrt();
    let pobj = dot(&p.c, x);
    let dobj = dot(&p.b, y);
    (
        rp / (1.0 + norm(&p.b)),
        rd / (1.0 + norm(&p.c)),
        (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
    )
}

fn infeasibility_certificate(
    p: &ConicProblem,
    scaled: &Scaled,
    y: &[f64],
    yprev: &[f64],
    tol: f64,
) -> Option<Vec<f64>> {
    // Diverging dual iterates: ŷ = −δy satisfies Aᵀŷ ∈ K*, bᵀŷ < 0.
    let mut cert: Vec<f64> = (0..y.len())
        .map(|k| -(y[k] - yprev[k]) * scaled.d[k] / scaled.sigma)
        .collect();
    let by = dot(&p.b, &cert);
    if !(by < 0.0) || !by.is_finite() {
        return None;
    }
    for c in cert.iter_mut() {
        *c /= -by;
    }
    if norm(&cert) * tol > 1.0 {
        return None;
    }
    let aty = spmv_t(&p.a, &cert);
    let mut proj = aty.clone();
    project_cone(&p.cones, &mut proj, true);
    (dist(&aty, &proj) <= tol).then_some(cert)
}

fn unboundedness_certificate(
    p: &ConicProblem,
    scaled: &Scaled,
    z: &[f64],
    zprev: &[f64],
    tol: f64,
) -> Option<Vec<f64>> {
    let mut d: Vec<f64> = (0..z.len()).map(|i| (z[i] - zprev[i]) * scaled.e[i]).collect();
    let cd = dot(&p.c, &d);
    if !(cd < 0.0) || !cd.is_finite() {
        return None;
    }
    for di in d.iter_mut() {
        *di /= -cd;
    }
    if norm(&d) * tol > 1.0 {
        return None;
    }
    let ad = spmv(&p.a, &d);
    let mut proj = d.clone();
    project_cone(&p.cones, &mut proj, false);
    (norm(&ad) <= tol && dist(&d, &proj) <= tol).then_some(d)
}

/// Step size that balances relative primal and dual residuals.
fn balanced_rho(s: &Scaled, x: &[f64], z: &[f64], zprev: &[f64], u: &[f64], rho: f64) -> f64 {
    let rp = dist(x, z) / norm(x).max(norm(z)).max(1e-12);
    let rd_abs = rho * dist(z, zprev);
    let rd = rd_abs / (rho * norm(u)).max(norm(&s.c)).max(1e-12);
    if rp <= 0.0 || rd <= 0.0 || !rp.is_finite() || !rd.is_finite() {
        return rho;
    }
    (rho * (rp / rd).sqrt()).clamp(1e-6, 1e6)
}

/// Diagonally equilibrated copy of the problem: `Ã = D A E`, `b̃ = D b`,
/// `c̃ = σ E c`. Column scales are constant within each cone block.
struct Scaled {
    a: CsrMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    sigma: f64,
}

impl Scaled {
    fn new(p: &ConicProblem, enable: bool) -> Scaled {
        let m = p.num_rows();
        let n = p.num_vars();
        let mut d = vec![1.0; m];
        let mut e = vec![1.0; n];
        let mut a = p.a.clone();
        if enable {
            for _ in 0..20 {
                let mut rmax = vec![0.0f64; m];
                let mut cmax = vec![0.0f64; n];
                for (r, row) in a.row_iter().enumerate() {
                    for (&col, &v) in row.col_indices().iter().zip(row.values()) {
                        rmax[r] = rmax[r].max(v.abs());
                        cmax[col] = cmax[col].max(v.abs());
                    }
                }
                let mut off = 0;
                for cone in &p.cones {
                    let k = cone.dim();
                    if let Cone::Psd(_) = cone {
                        let mx = cmax[off..off + k].iter().cloned().fold(0.0, f64::max);
                        cmax[off..off + k].iter_mut().for_each(|v| *v = mx);
                    }
                    off += k;
                }
                let dr: Vec<f64> = rmax
                    .iter()
                    .map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
                    .collect();
                let ec: Vec<f64> = cmax
                    .iter()
                    .map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
                    .collect();
                let (offsets, cols, vals) = a.csr_data_mut();
                for r in 0..m {
                    for k in offsets[r]..offsets[r + 1] {
                        vals[k] *= dr[r] * ec[cols[k]];
                    }
                }
                for r in 0..m {
                    d[r] *= dr[r];
                }
                for i in 0..n {
                    e[i] *= ec[i];
                }
                let spread = rmax
                    .iter()
                    .chain(cmax.iter())
                    .filter(|v| **v > 0.0)
                    .fold((f64::MAX, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                if spread.1 / spread.0 < 1.0 + 1e-3 {
                    break;
                }
            }
        }
        let b: Vec<f64> = p.b.iter().zip(&d).map(|(b, d)| b * d).collect();
        let ec: Vec<f64> = p.c.iter().zip(&e).map(|(c, e)| c * e).collect();
        let cn = ec.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let sigma = if enable && cn > 0.0 { 1.0 / cn } else { 1.0 };
        let c = ec.iter().map(|v| v * sigma).collect();
        Scaled { a, b, c, d, e, sigma }
    }

    fn unscale(&self, z: &[f64], ytilde: &[f64], u: &[f64], rho: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = z.iter().zip(&self.e).map(|(z, e)| z * e).collect();
        let y = ytilde.iter().zip(&self.d).map(|(y, d)| y * d / self.sigma).collect();
        let s = u
            .iter()
            .zip(&self.e)
            .map(|(u, e)| -rho * u / (e * self.sigma))
            .collect();
        (x, y, s)
    }
}

/// Exact projection onto `{x : Ax = b}` through a Cholesky factor of `AAᵀ`.
struct AffineProjector {
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    aat: DMatrix<f64>,
}

impl AffineProjector {
    fn new(a: &CsrMatrix<f64>) -> Result<Self, ConicError> {
        let m = a.nrows();
        if m == 0 {
            return Ok(AffineProjector {
                chol: None,
                aat: DMatrix::zeros(0, 0),
            });
        }
        // AAᵀ accumulated column by column from the transpose.
        let at = a.transpose();
        let mut aat = DMatrix::<f64>::zeros(m, m);
        for row in at.row_iter() {
            let idx = row.col_indices();
            let vals = row.values();
            for p in 0..idx.len() {
                for q in 0..=p {
                    let v = vals[p] * vals[q];
                    aat[(idx[p], idx[q])] += v;
                    if p != q {
                        aat[(idx[q], idx[p])] += v;
                    }
                }
            }
        }
        let maxdiag = (0..m).map(|i| aat[(i, i)]).fold(0.0f64, f64::max);
        if (0..m).any(|i| aat[(i, i)] <= 1e-14 * maxdiag.max(1.0)) {
            return Err(ConicError::RankDeficient);
        }
        let chol = nalgebra::Cholesky::new(aat.clone()).ok_or(ConicError::RankDeficient)?;
        let diag_min = (0..m).map(|i| chol.l_dirty()[(i, i)]).fold(f64::MAX, f64::min);
        if diag_min * diag_min <= 1e-13 * maxdiag {
            return Err(ConicError::RankDeficient);
        }
        Ok(AffineProjector { chol: Some(chol), aat })
    }

    /// `x = v − Aᵀ w` with `AAᵀ w = Av − b`; one step of iterative refinement.
    fn project(&self, a: &CsrMatrix<f64>, b: &[f64], v: &[f64], x: &mut [f64], w: &mut [f64]) {
        x.copy_from_slice(v);
        let Some(chol) = &self.chol else {
            return;
        };
        let av = spmv(a, v);
        let r = DVector::from_iterator(b.len(), av.iter().zip(b).map(|(a, b)| a - b));
        let mut sol = chol.solve(&r);
        let resid = &r - &self.aat * &sol;
        sol += chol.solve(&resid);
        w.copy_from_slice(sol.as_slice());
        let atw = spmv_t(a, w);
        for i in 0..x.len() {
            x[i] -= atw[i];
        }
    }
}

/// Project onto `K` (or `K*` when `dual`, which differs only on free blocks).
fn project_cone(cones: &[Cone], v: &mut [f64], dual: bool) {
    let mut off = 0;
    for cone in cones {
        let k = cone.dim();
        let blk = &mut v[off..off + k];
        match *cone {
            Cone::Free(_) => {
                if dual {
                    blk.iter_mut().for_each(|x| *x = 0.0);
                }
            }
            Cone::Nonneg(_) => blk.iter_mut().for_each(|x| *x = x.max(0.0)),
            Cone::Psd(n) => project_psd(n, blk),
        }
        off += k;
    }
}

fn project_psd(n: usize, blk: &mut [f64]) {
    if n == 1 {
        blk[0] = blk[0].max(0.0);
        return;
    }
    let m = svec_to_mat(n, blk);
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return;
    }
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let q = eig.eigenvectors.column(k);
            out.ger(l, &q, &q, 1.0);
        }
    }
    mat_to_svec(&out, blk);
}

pub(crate) fn spmv(a: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    a.row_iter()
        .map(|row| {
            row.col_indices()
                .iter()
                .zip(row.values())
                .map(|(&c, &v)| v * x[c])
                .sum()
        })
        .collect()
}

pub(crate) fn spmv_t(a: &CsrMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.ncols()];
    for (r, row) in a.row_iter().enumerate() {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        for (&c, &v) in row.col_indices().iter().zip(row.values()) {
            out[c] += v * yr;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Human-readable one-line summary.
pub fn summary(sol: &ConicSolution) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{:?} after {} iterations (primal {:.2e}, dual {:.2e}, gap {:.2e})",
        sol.status, sol.iterations, sol.primal_residual, sol.dual_residual, sol.gap
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const R2: f64 = std::f64::consts::SQRT_2;

    /// min x  s.t. [[x,1],[1,x]] ⪰ 0; variables (x | X11, √2·X21, X22).
    fn det_problem() -> ConicProblem {
        ConicProblem::from_triplets(
            vec![1.0, 0.0, 0.0, 0.0],
            3,
            &[(0, 1, 1.0), (0, 0, -1.0), (1, 3, 1.0), (1, 0, -1.0), (2, 2, 1.0 / R2)],
            vec![0.0, 0.0, 1.0],
            vec![Cone::Free(1), Cone::Psd(2)],
        )
        .unwrap()
    }

    #[test]
    fn svec_layout() {
        assert_eq!(svec_index(3, 0, 0), 0);
        assert_eq!(svec_index(3, 1, 0), 1);
        assert_eq!(svec_index(3, 2, 0), 2);
        assert_eq!(svec_index(3, 1, 1), 3);
        assert_eq!(svec_index(3, 2, 1), 4);
        assert_eq!(svec_index(3, 2, 2), 5);
        assert_eq!(svec_index(3, 0, 2), 2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let mut v = [0.0; 3];
        mat_to_svec(&m, &mut v);
        assert!((v[1] - 2.0 * R2).abs() < 1e-15);
        assert!((svec_to_mat(2, &v) - m).abs().max() < 1e-14);
    }

    #[test]
    fn determinant_case() {
        let p = det_problem();
        let sol = solve(&p, &Settings::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-5, "{}", sol.x[0]);
        let rep = check_residuals(&p, &sol).unwrap();
        assert!(rep.gap <= 1e-6 && rep.primal <= 1e-7);
        assert!(rep.psd_floors[0] >= -1e-7);
    }

    #[test]
    fn residual_check_on_exact_and_perturbed_points() {
        let p = det_problem();
        // primal X = [[1,1],[1,1]], dual y = (a, b, c) with s = c − Aᵀy ⪰ 0, bᵀy = 1
        let exact = ConicSolution {
            status: Status::Optimal,
            x: vec![1.0, 1.0, R2, 1.0],
            y: vec![-0.5, -0.5, 1.0],
            s: vec![0.0; 4],
            primal_residual: 0.0,
            dual_residual: 0.0,
            gap: 0.0,
            iterations: 0,
            certificate: None,
        };
        let rep = check_residuals(&p, &exact).unwrap();
        assert!(rep.primal <= 1e-10 && rep.dual <= 1e-10 && rep.gap <= 1e-10, "{rep:?}");
        let mut bad = exact.clone();
        bad.x[0] += 0.1;
        assert!(check_residuals(&p, &bad).unwrap().primal > 0.05);
    }

    #[test]
    fn lambda_min_case() {
        // max t s.t. diag(3,1) − tI = S ⪰ 0  →  min −t
        let p = ConicProblem::from_triplets(
            vec![-1.0, 0.0, 0.0, 0.0],
            3,
            &[(0, 0, 1.0), (0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 1.0)],
            vec![3.0, 0.0, 1.0],
            vec![Cone::Free(1), Cone::Psd(2)],
        )
        .unwrap();
        let sol = solve(&p, &Settings::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn infeasible_with_certificate() {
        let p = ConicProblem::from_triplets(vec![0.0], 1, &[(0, 0, 1.0)], vec![-1.0], vec![Cone::Nonneg(1)]).unwrap();
        let sol = solve(&p, &Settings::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
        let y = sol.certificate.unwrap();
        assert!((dot(&p.b, &y) + 1.0).abs() < 1e-9);
        assert!(spmv_t(&p.a, &y)[0] >= -1e-7);
    }

    #[test]
    fn unbounded_detection() {
        // min −x  s.t. x − t = 0, x ≥ 0, t ≥ 0
        let p = ConicProblem::from_triplets(
            vec![-1.0, 0.0],
            1,
            &[(0, 0, 1.0), (0, 1, -1.0)],
            vec![0.0],
            vec![Cone::Nonneg(2)],
        )
        .unwrap();
        let sol = solve(&p, &Settings::default()).unwrap();
        assert_eq!(sol.status, Status::Unbounded);
    }

    #[test]
    fn rejects_bad_input() {
        let e = ConicProblem::from_triplets(vec![0.0; 2], 1, &[(0, 0, 1.0)], vec![1.0], vec![Cone::Free(1)]);
        assert!(matches!(e, Err(ConicError::DimensionMismatch(_))));
        let e = ConicProblem::from_triplets(vec![f64::NAN], 1, &[(0, 0, 1.0)], vec![1.0], vec![Cone::Free(1)]);
        assert!(matches!(e, Err(ConicError::NonFinite(_))));
    }

    #[test]
    fn dump_lists_blocks_and_triplets() {
        let mut buf = Vec::new();
        det_problem().write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("cone psd 2"));
        assert!(text.lines().any(|l| l.starts_with("0 1 ")));
    }
}
