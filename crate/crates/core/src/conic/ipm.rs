//! Homogeneous self-dual interior-point method with Nesterov–Todd scaling.
//!
//! Each Newton step eliminates the cone variables, which leaves the Schur
//! matrix `M = A_c H⁻¹ A_cᵀ`. Rows coupled through a cone block form one
//! dense component; free variables and rows without cone entries are handled
//! by a small dense saddle system on top.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use nalgebra_sparse::CsrMatrix;

use super::{
    dot, mat_to_svec, norm, project_cone, residuals_with_slack, spmv, spmv_t, svec_to_mat, Cone, ConicError,
    ConicProblem, ConicSolution, Scaled, Settings, Status,
};

#[derive(Clone, Copy)]
enum Kind {
    Free,
    Nonneg,
    Psd,
}

struct PsdBlock {
    off: usize,
    n: usize,
    /// `(i, j)` of every svec slot
    idx: Vec<(usize, usize)>,
}

struct Structure {
    kind: Vec<Kind>,
    free: Vec<usize>,
    nonneg: Vec<usize>,
    psd: Vec<PsdBlock>,
    /// columns of A
    at: CsrMatrix<f64>,
    comps: Vec<Vec<usize>>,
    /// `(component, local index)`; `None` for rows without cone entries
    row_pos: Vec<Option<(usize, usize)>>,
    bare_rows: Vec<usize>,
    degree: f64,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl Structure {
    fn new(a: &CsrMatrix<f64>, cones: &[Cone]) -> Structure {
        let m = a.nrows();
        let n = a.ncols();
        let at = a.transpose();
        let mut kind = vec![Kind::Free; n];
        let mut free = Vec::new();
        let mut nonneg = Vec::new();
        let mut psd = Vec::new();
        let mut off = 0;
        let mut degree = 0.0;
        for cone in cones {
            match *cone {
                Cone::Free(k) => free.extend(off..off + k),
                Cone::Nonneg(k) => {
                    nonneg.extend(off..off + k);
                    kind[off..off + k].iter_mut().for_each(|t| *t = Kind::Nonneg);
                    degree += k as f64;
                }
                Cone::Psd(k) => {
                    let mut idx = Vec::with_capacity(cone.dim());
                    for j in 0..k {
                        for i in j..k {
                            idx.push((i, j));
                        }
                    }
                    kind[off..off + cone.dim()].iter_mut().for_each(|t| *t = Kind::Psd);
                    psd.push(PsdBlock { off, n: k, idx });
                    degree += k as f64;
                }
            }
            off += cone.dim();
        }

        let mut parent: Vec<usize> = (0..m).collect();
        let mut touched = vec![false; m];
        let mut union_cols = |cols: &mut dyn Iterator<Item = usize>| {
            let mut first = None;
            for c in cols {
                for &r in at.row(c).col_indices() {
                    touched[r] = true;
                    match first {
                        None => first = Some(r),
                        Some(f) => {
                            let (a, b) = (find(&mut parent, f), find(&mut parent, r));
                            if a != b {
                                parent[a] = b;
                            }
                        }
                    }
                }
            }
        };
        for &c in &nonneg {
            union_cols(&mut std::iter::once(c));
        }
        for b in &psd {
            union_cols(&mut (b.off..b.off + b.idx.len()));
        }
        let mut comp_of_root = vec![usize::MAX; m];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut row_pos = vec![None; m];
        let mut bare_rows = Vec::new();
        for r in 0..m {
            if !touched[r] {
                bare_rows.push(r);
                continue;
            }
            let root = find(&mut parent, r);
            if comp_of_root[root] == usize::MAX {
                comp_of_root[root] = comps.len();
                comps.push(Vec::new());
            }
            let c = comp_of_root[root];
            row_pos[r] = Some((c, comps[c].len()));
            comps[c].push(r);
        }
        Structure {
            kind,
            free,
            nonneg,
            psd,
            at,
            comps,
            row_pos,
            bare_rows,
            degree,
        }
    }
}

/// NT scaling of one PSD block: `rᵀ S r = Λ = r⁻¹ X r⁻ᵀ`, `W = r rᵀ`.
struct NtScaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
    w: DMatrix<f64>,
    winv: DMatrix<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = x.clone().cholesky()?.l();
    let ls = s.clone().cholesky()?.l();
    let svd = (ls.transpose() * &lx).svd(true, true);
    let v = svd.v_t?.transpose();
    let lambda = svd.singular_values;
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let n = x.nrows();
    let mut r = &lx * &v;
    let mut vt_lxinv = v.transpose() * lx.solve_lower_triangular(&DMatrix::identity(n, n))?;
    for k in 0..n {
        let sl = lambda[k].sqrt();
        r.column_mut(k).scale_mut(1.0 / sl);
        vt_lxinv.row_mut(k).scale_mut(sl);
    }
    let w = &r * r.transpose();
    let winv = vt_lxinv.transpose() * &vt_lxinv;
    Some(NtScaling {
        r,
        rinv: vt_lxinv,
        lambda,
        w,
        winv,
    })
}

struct Scalings {
    /// `x/s` on nonnegative columns
    d: Vec<f64>,
    psd: Vec<NtScaling>,
}

impl Scalings {
    fn new(st: &Structure, x: &[f64], s: &[f64]) -> Option<Scalings> {
        let d = st.nonneg.iter().map(|&i| x[i] / s[i]).collect::<Vec<_>>();
        if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return None;
        }
        let mut psd = Vec::with_capacity(st.psd.len());
        for b in &st.psd {
            let dim = b.idx.len();
            let xm = svec_to_mat(b.n, &x[b.off..b.off + dim]);
            let sm = svec_to_mat(b.n, &s[b.off..b.off + dim]);
            psd.push(nt_scaling(&xm, &sm)?);
        }
        Some(Scalings { d, psd })
    }

    /// `H v`, or `H⁻¹ v` when `inverse`; zero on free columns.
    fn apply(&self, st: &Structure, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, &i) in st.nonneg.iter().enumerate() {
            out[i] = if inverse { v[i] * self.d[k] } else { v[i] / self.d[k] };
        }
        for (b, sc) in st.psd.iter().zip(&self.psd) {
            let dim = b.idx.len();
            let vm = svec_to_mat(b.n, &v[b.off..b.off + dim]);
            let w = if inverse { &sc.w } else { &sc.winv };
            let res = w * vm * w;
            mat_to_svec(&res, &mut out[b.off..b.off + dim]);
        }
        out
    }
}

struct Kkt {
    chols: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    /// `M⁻¹ a_j` on cone rows for every free column, per component
    z: Vec<Vec<DVector<f64>>>,
    saddle: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

fn factor(st: &Structure, sc: &Scalings) -> Option<Kkt> {
    let mut mats: Vec<DMatrix<f64>> = st
        .comps
        .iter()
        .map(|rows| DMatrix::zeros(rows.len(), rows.len()))
        .collect();
    for (k, &col) in st.nonneg.iter().enumerate() {
        let row = st.at.row(col);
        let d = sc.d[k];
        let (idx, vals) = (row.col_indices(), row.values());
        for p in 0..idx.len() {
            let (c, lp) = st.row_pos[idx[p]]?;
            for q in 0..idx.len() {
                let (_, lq) = st.row_pos[idx[q]]?;
                mats[c][(lp, lq)] += vals[p] * vals[q] * d;
            }
        }
    }
    let s2 = std::f64::consts::SQRT_2;
    for (b, ns) in st.psd.iter().zip(&sc.psd) {
        let dim = b.idx.len();
        let w = &ns.w;
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut c = usize::MAX;
        for p in 0..dim {
            let row = st.at.row(b.off + p);
            for (&r, &v) in row.col_indices().iter().zip(row.values()) {
                let (comp, l) = st.row_pos[r]?;
                c = comp;
                entries.push((l, p, v));
            }
        }
        if entries.is_empty() {
            continue;
        }
        let cf: Vec<f64> = b.idx.iter().map(|&(i, j)| if i == j { 1.0 } else { s2 }).collect();
        let mut kmat = DMatrix::zeros(dim, dim);
        for p in 0..dim {
            let (i, j) = b.idx[p];
            for q in 0..=p {
                let (k, l) = b.idx[q];
                let v = cf[p] * cf[q] * 0.5 * (w[(i, k)] * w[(j, l)] + w[(i, l)] * w[(j, k)]);
                kmat[(p, q)] = v;
                kmat[(q, p)] = v;
            }
        }
        let mc = &mut mats[c];
        for &(r1, p, v1) in &entries {
            for &(r2, q, v2) in &entries {
                mc[(r1, r2)] += v1 * v2 * kmat[(p, q)];
            }
        }
    }
    let mut chols = Vec::with_capacity(mats.len());
    for mut mc in mats {
        let n = mc.nrows();
        let maxd = (0..n).map(|i| mc[(i, i)]).fold(0.0f64, f64::max);
        let mut reg = 1e-13 * maxd.max(1e-300);
        loop {
            for i in 0..n {
                mc[(i, i)] += reg;
            }
            if let Some(ch) = mc.clone().cholesky() {
                chols.push(ch);
                break;
            }
            if reg > 1e-4 * maxd.max(1.0) {
                return None;
            }
            reg *= 100.0;
        }
    }

    // free columns
    let nf = st.free.len();
    let mut z: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(nf); st.comps.len()];
    for &col in &st.free {
        let row = st.at.row(col);
        let mut rhs: Vec<DVector<f64>> = st.comps.iter().map(|rows| DVector::zeros(rows.len())).collect();
        let mut hit = vec![false; st.comps.len()];
        for (&r, &v) in row.col_indices().iter().zip(row.values()) {
            if let Some((c, l)) = st.row_pos[r] {
                rhs[c][l] = v;
                hit[c] = true;
            }
        }
        for (c, mut v) in rhs.into_iter().enumerate() {
            if hit[c] {
                chols[c].solve_mut(&mut v);
            }
            z[c].push(v);
        }
    }
    let nb = st.bare_rows.len();
    let saddle = if nf + nb > 0 {
        let mut t = DMatrix::<f64>::zeros(nf + nb, nf + nb);
        // −S with S = A_fᵀ M⁻¹ A_f
        for (jf, &col) in st.free.iter().enumerate() {
            let row = st.at.row(col);
            for (&r, &v) in row.col_indices().iter().zip(row.values()) {
                if let Some((c, l)) = st.row_pos[r] {
                    for kf in 0..nf {
                        t[(jf, kf)] -= v * z[c][kf][l];
                    }
                }
            }
        }
        let bare_index: std::collections::HashMap<usize, usize> =
            st.bare_rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
        for (jf, &col) in st.free.iter().enumerate() {
            let row = st.at.row(col);
            for (&r, &v) in row.col_indices().iter().zip(row.values()) {
                if let Some(&k) = bare_index.get(&r) {
                    t[(jf, nf + k)] += v;
                    t[(nf + k, jf)] += v;
                }
            }
        }
        let scale = (0..nf).map(|i| t[(i, i)].abs()).fold(1.0f64, f64::max);
        for i in 0..nf {
            t[(i, i)] -= 1e-14 * scale;
        }
        for k in 0..nb {
            t[(nf + k, nf + k)] += 1e-14;
        }
        Some(t.lu())
    } else {
        None
    };
    Some(Kkt { chols, z, saddle })
}

/// Solve `−H dx + Aᵀdy = p`, `A dx = q`.
fn solve_kkt(
    st: &Structure,
    a: &CsrMatrix<f64>,
    sc: &Scalings,
    kkt: &Kkt,
    p: &[f64],
    q: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let once = |p: &[f64], q: &[f64]| -> Option<(Vec<f64>, Vec<f64>)> {
        let nf = st.free.len();
        let m = q.len();
        let t = sc.apply(st, p, true);
        let at = spmv(a, &t);
        let r: Vec<f64> = (0..m).map(|i| q[i] + at[i]).collect();
        let mut g: Vec<DVector<f64>> = st
            .comps
            .iter()
            .map(|rows| DVector::from_iterator(rows.len(), rows.iter().map(|&i| r[i])))
            .collect();
        for (c, ch) in kkt.chols.iter().enumerate() {
            ch.solve_mut(&mut g[c]);
        }
        let mut dxf = vec![0.0; nf];
        let mut dy = vec![0.0; m];
        if let Some(lu) = &kkt.saddle {
            let nb = st.bare_rows.len();
            let mut rhs = DVector::zeros(nf + nb);
            for (jf, &col) in st.free.iter().enumerate() {
                let row = st.at.row(col);
                let mut acc = p[col];
                for (&rr, &v) in row.col_indices().iter().zip(row.values()) {
                    if let Some((c, l)) = st.row_pos[rr] {
                        acc -= v * g[c][l];
                    }
                }
                rhs[jf] = acc;
            }
            for (k, &rr) in st.bare_rows.iter().enumerate() {
                rhs[nf + k] = r[rr];
            }
            let sol = lu.solve(&rhs)?;
            dxf.copy_from_slice(&sol.as_slice()[..nf]);
            for (k, &rr) in st.bare_rows.iter().enumerate() {
                dy[rr] = sol[nf + k];
            }
        }
        for (c, rows) in st.comps.iter().enumerate() {
            let mut gc = g[c].clone();
            for (jf, v) in dxf.iter().enumerate() {
                if *v != 0.0 {
                    gc.axpy(-v, &kkt.z[c][jf], 1.0);
                }
            }
            for (l, &rr) in rows.iter().enumerate() {
                dy[rr] = gc[l];
            }
        }
        let aty = spmv_t(a, &dy);
        let hinv_aty = sc.apply(st, &aty, true);
        let mut dx: Vec<f64> = (0..p.len()).map(|i| hinv_aty[i] - t[i]).collect();
        for (jf, &col) in st.free.iter().enumerate() {
            dx[col] = dxf[jf];
        }
        Some((dx, dy))
    };
    let Some((mut dx, mut dy)) = once(p, q) else {
        return (vec![f64::NAN; p.len()], vec![f64::NAN; q.len()]);
    };
    for _ in 0..2 {
        let hdx = sc.apply(st, &dx, false);
        let aty = spmv_t(a, &dy);
        let rp: Vec<f64> = (0..p.len()).map(|i| p[i] + hdx[i] - aty[i]).collect();
        let adx = spmv(a, &dx);
        let rq: Vec<f64> = (0..q.len()).map(|i| q[i] - adx[i]).collect();
        let scale = norm(p).max(norm(q)).max(1e-300);
        if norm(&rp).max(norm(&rq)) <= 1e-14 * scale {
            break;
        }
        let Some((cx, cy)) = once(&rp, &rq) else { break };
        dx.iter_mut().zip(&cx).for_each(|(a, b)| *a += b);
        dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
    }
    (dx, dy)
}

fn sym_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a * b + b * a) * 0.5
}

/// Largest step keeping `λ + α·d` in the cone, for a scaled direction.
fn psd_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let mut t = d.clone();
    for i in 0..n {
        for j in 0..n {
            t[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
        }
    }
    let t = (&t + t.transpose()) * 0.5;
    let lmin = SymmetricEigen::new(t).eigenvalues.min();
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

/// Tolerance factor for [`Status::Inaccurate`].
const INACCURATE: f64 = 100.0;

pub(super) fn solve(p: &ConicProblem, settings: &Settings) -> Result<ConicSolution, ConicError> {
    p.validate()?;
    let sc = Scaled::new(p, settings.scale);
    let a = &sc.a;
    let st = Structure::new(a, &p.cones);
    let n = p.num_vars();
    let m = p.num_rows();
    let b = &sc.b;
    let c = &sc.c;

    let mut x = vec![0.0; n];
    for &i in &st.nonneg {
        x[i] = 1.0;
    }
    for blk in &st.psd {
        for (k, &(i, j)) in blk.idx.iter().enumerate() {
            if i == j {
                x[blk.off + k] = 1.0;
            }
        }
    }
    let mut s = x.clone();
    let mut y = vec![0.0; m];
    let (mut tau, mut kappa) = (1.0f64, 1.0f64);
    let nu = st.degree + 1.0;

    let unscale = |x: &[f64], y: &[f64], s: &[f64], t: f64| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            x.iter().zip(&sc.e).map(|(x, e)| x * e / t).collect(),
            y.iter().zip(&sc.d).map(|(y, d)| y * d / (sc.sigma * t)).collect(),
            s.iter().zip(&sc.e).map(|(s, e)| s / (e * sc.sigma * t)).collect(),
        )
    };

    let mut status = Status::MaxIter;
    let mut certificate = None;
    let mut iter = 0;
    let mut stalls = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    while iter < settings.ipm_max_iter {
        let ax = spmv(a, &x);
        let aty = spmv_t(a, &y);
        let rp: Vec<f64> = (0..m).map(|i| ax[i] - b[i] * tau).collect();
        let rd: Vec<f64> = (0..n).map(|i| aty[i] + s[i] - c[i] * tau).collect();
        let cx = dot(c, &x);
        let by = dot(b, &y);
        let rg = cx - by + kappa;
        let mu = (dot(&x, &s) + tau * kappa) / nu;

        let (xo, yo, so) = unscale(&x, &y, &s, tau);
        let (pr, dr, gap) = residuals_with_slack(p, &xo, &yo, &so);
        let score = (pr / settings.eps_primal)
            .max(dr / settings.eps_dual)
            .max(gap / settings.eps_gap);
        if score.is_finite() && best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, xo.clone(), yo.clone(), so.clone()));
        }
        log::trace!(
            "ipm {iter}: primal {pr:.2e} dual {dr:.2e} gap {gap:.2e} mu {mu:.2e} tau {tau:.2e} kappa {kappa:.2e}"
        );
        if pr <= settings.eps_primal && dr <= settings.eps_dual && gap <= settings.eps_gap {
            status = Status::Optimal;
            break;
        }
        if by > 0.0 {
            let cert: Vec<f64> = y.iter().zip(&sc.d).map(|(y, d)| -y * d / by).collect();
            let atc = spmv_t(&p.a, &cert);
            let mut proj = atc.clone();
            project_cone(&p.cones, &mut proj, true);
            let viol = super::dist(&atc, &proj);
            if viol <= settings.eps_infeasible {
                status = Status::Infeasible;
                certificate = Some(cert);
                break;
            }
        }
        if cx < 0.0 {
            let d: Vec<f64> = x.iter().zip(&sc.e).map(|(x, e)| x * e * sc.sigma / -cx).collect();
            let ad = norm(&spmv(&p.a, &d));
            if ad <= settings.eps_infeasible {
                status = Status::Unbounded;
                certificate = Some(d);
                break;
            }
        }
        if !(mu.is_finite()) || stalls >= 3 {
            break;
        }

        let Some(scal) = Scalings::new(&st, &x, &s) else { break };
        let Some(kkt) = factor(&st, &scal) else { break };
        let (dx2, dy2) = solve_kkt(&st, a, &scal, &kkt, c, b);

        // scaled complementarity pieces of the current iterate
        let direction = |eta: f64, xi: &[f64], zeta: f64| -> Direction {
            let pv: Vec<f64> = (0..n).map(|i| -eta * rd[i] - xi[i]).collect();
            let qv: Vec<f64> = (0..m).map(|i| -eta * rp[i]).collect();
            let (dx1, dy1) = solve_kkt(&st, a, &scal, &kkt, &pv, &qv);
            let denom = dot(c, &dx2) - dot(b, &dy2) - kappa / tau;
            let num = -eta * rg - dot(c, &dx1) + dot(b, &dy1) - zeta / tau;
            let dtau = num / denom;
            let dx: Vec<f64> = (0..n).map(|i| dx1[i] + dtau * dx2[i]).collect();
            let dy: Vec<f64> = (0..m).map(|i| dy1[i] + dtau * dy2[i]).collect();
            let hdx = scal.apply(&st, &dx, false);
            let mut ds: Vec<f64> = (0..n).map(|i| xi[i] - hdx[i]).collect();
            for &i in &st.free {
                ds[i] = 0.0;
            }
            let dkappa = (zeta - kappa * dtau) / tau;
            Direction {
                dx,
                dy,
                ds,
                dtau,
                dkappa,
            }
        };
        let scaled_dirs = |d: &Direction| -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
            st.psd
                .iter()
                .zip(&scal.psd)
                .map(|(blk, ns)| {
                    let dim = blk.idx.len();
                    let dxm = svec_to_mat(blk.n, &d.dx[blk.off..blk.off + dim]);
                    let dsm = svec_to_mat(blk.n, &d.ds[blk.off..blk.off + dim]);
                    (&ns.rinv * dxm * ns.rinv.transpose(), ns.r.transpose() * dsm * &ns.r)
                })
                .collect()
        };
        let max_step = |d: &Direction, sd: &[(DMatrix<f64>, DMatrix<f64>)]| -> f64 {
            let mut alpha = f64::INFINITY;
            for &i in &st.nonneg {
                if d.dx[i] < 0.0 {
                    alpha = alpha.min(-x[i] / d.dx[i]);
                }
                if d.ds[i] < 0.0 {
                    alpha = alpha.min(-s[i] / d.ds[i]);
                }
            }
            for (ns, (dxs, dss)) in scal.psd.iter().zip(sd) {
                alpha = alpha.min(psd_step(&ns.lambda, dxs)).min(psd_step(&ns.lambda, dss));
            }
            if d.dtau < 0.0 {
                alpha = alpha.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                alpha = alpha.min(-kappa / d.dkappa);
            }
            alpha
        };

        let xi_aff: Vec<f64> = (0..n)
            .map(|i| if matches!(st.kind[i], Kind::Free) { 0.0 } else { -s[i] })
            .collect();
        let aff = direction(1.0, &xi_aff, -tau * kappa);
        if aff.dx.iter().any(|v| !v.is_finite()) {
            break;
        }
        let sd_aff = scaled_dirs(&aff);
        let alpha_aff = max_step(&aff, &sd_aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        let mut xi = vec![0.0; n];
        for &i in &st.nonneg {
            xi[i] = (sigma * mu - x[i] * s[i] - aff.dx[i] * aff.ds[i]) / x[i];
        }
        for ((blk, ns), (dxs, dss)) in st.psd.iter().zip(&scal.psd).zip(&sd_aff) {
            let k = blk.n;
            let corr = sym_product(dxs, dss);
            let mut z = DMatrix::zeros(k, k);
            for i in 0..k {
                for j in 0..k {
                    let lam2 = if i == j { ns.lambda[i] * ns.lambda[i] } else { 0.0 };
                    let target = if i == j { sigma * mu } else { 0.0 };
                    z[(i, j)] = 2.0 * (target - lam2 - corr[(i, j)]) / (ns.lambda[i] + ns.lambda[j]);
                }
            }
            let xm = ns.rinv.transpose() * z * &ns.rinv;
            mat_to_svec(&xm, &mut xi[blk.off..blk.off + blk.idx.len()]);
        }
        let zeta = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
        let dir = direction(1.0 - sigma, &xi, zeta);
        if dir.dx.iter().any(|v| !v.is_finite()) {
            break;
        }
        let sd = scaled_dirs(&dir);
        let alpha = (0.99 * max_step(&dir, &sd)).min(1.0);
        if alpha < 1e-10 {
            stalls += 1;
        }
        for i in 0..n {
            x[i] += alpha * dir.dx[i];
            s[i] += alpha * dir.ds[i];
        }
        for i in 0..m {
            y[i] += alpha * dir.dy[i];
        }
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        iter += 1;
        if alpha < 1e-10 {
            continue;
        }
        // renormalize the homogeneous scale
        let scale = tau + kappa;
        if scale > 1e8 || scale < 1e-8 {
            x.iter_mut()
                .chain(s.iter_mut())
                .chain(y.iter_mut())
                .for_each(|v| *v /= scale);
            tau /= scale;
            kappa /= scale;
        }
    }

    let (xo, yo, so) = match (status, best) {
        (Status::Infeasible | Status::Unbounded, _) => unscale(&x, &y, &s, 1.0),
        // no convergence, but an earlier iterate came close
        (Status::MaxIter, Some((score, bx, by, bs))) if score <= INACCURATE => {
            status = Status::Inaccurate;
            (bx, by, bs)
        }
        _ => unscale(&x, &y, &s, tau),
    };
    let (pr, dr, gap) = residuals_with_slack(p, &xo, &yo, &so);
    Ok(ConicSolution {
        status,
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
