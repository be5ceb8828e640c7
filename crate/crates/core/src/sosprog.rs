//! Sum-of-squares programs compiled to conic form through Gram matrices.
//!
//! Decision quantities are scalar variables. Polynomials that depend on them
//! are [`PolyExpr`]s: a known polynomial plus, for every decision variable, a
//! coefficient polynomial. A constraint `p ∈ Σ` becomes one PSD block `Q`
//! with `p = m(x)ᵀ Q m(x)` matched coefficient by coefficient.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::conic::{self, Cone, ConicError, ConicProblem, ConicSolution, Settings, Status, WarmStart};
use crate::polyalg::{monomial_basis_in, Monomial, Polynomial, VarSpace};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("constraint `{0}` has odd degree with a fixed leading form that cannot be SOS")]
    OddDegree(String),
    #[error("constraint `{name}` requires coefficient {monomial} to equal {value:e}, which no Gram entry can produce")]
    Unmatched { name: String, monomial: String, value: f64 },
    #[error("infeasible")]
    Infeasible { certificate: Option<Vec<f64>> },
    #[error("solver stopped with status {status:?}")]
    NotOptimal {
        status: Status,
        partial: Option<Box<SosSolution>>,
    },
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("variable space mismatch: {0}")]
    VarSpace(String),
}

/// Handle to a scalar decision variable of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(usize);

/// Polynomial that is affine in the decision variables.
#[derive(Clone)]
pub struct PolyExpr {
    constant: Polynomial,
    linear: BTreeMap<VarId, Polynomial>,
}

impl PolyExpr {
    pub fn known(p: Polynomial) -> Self {
        PolyExpr {
            constant: p,
            linear: BTreeMap::new(),
        }
    }

    pub fn zero(vars: &VarSpace) -> Self {
        PolyExpr::known(Polynomial::zero(vars))
    }

    /// `coeff · v`
    pub fn var(v: VarId, coeff: Polynomial) -> Self {
        let mut linear = BTreeMap::new();
        let vars = coeff.vars().clone();
        if !coeff.is_zero() {
            linear.insert(v, coeff);
        }
        PolyExpr {
            constant: Polynomial::zero(&vars),
            linear,
        }
    }

    pub fn vars(&self) -> &VarSpace {
        self.constant.vars()
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn linear_parts(&self) -> impl Iterator<Item = (VarId, &Polynomial)> {
        self.linear.iter().map(|(k, v)| (*k, v))
    }

    pub fn degree(&self) -> u32 {
        self.linear
            .values()
            .map(Polynomial::degree)
            .chain(std::iter::once(self.constant.degree()))
            .max()
            .unwrap_or(0)
    }

    pub fn is_known(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn scale(&self, s: f64) -> PolyExpr {
        PolyExpr {
            constant: self.constant.scale(s),
            linear: self
                .linear
                .iter()
                .map(|(k, p)| (*k, p.scale(s)))
                .filter(|(_, p)| !p.is_zero())
                .collect(),
        }
    }

    pub fn mul_poly(&self, q: &Polynomial) -> PolyExpr {
        PolyExpr {
            constant: &self.constant * q,
            linear: self
                .linear
                .iter()
                .map(|(k, p)| (*k, p * q))
                .filter(|(_, p)| !p.is_zero())
                .collect(),
        }
    }

    /// Apply a linear map to every part.
    pub fn map(&self, f: impl Fn(&Polynomial) -> Polynomial) -> PolyExpr {
        PolyExpr {
            constant: f(&self.constant),
            linear: self
                .linear
                .iter()
                .map(|(k, p)| (*k, f(p)))
                .filter(|(_, p)| !p.is_zero())
                .collect(),
        }
    }

    /// Product of two expressions, defined when at least one is known.
    pub fn try_mul(&self, other: &PolyExpr) -> Option<PolyExpr> {
        if self.is_known() {
            Some(other.mul_poly(&self.constant))
        } else if other.is_known() {
            Some(self.mul_poly(&other.constant))
        } else {
            None
        }
    }

    fn add_expr(&self, other: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        out.constant = &out.constant + &other.constant;
        for (k, p) in &other.linear {
            let merged = match out.linear.remove(k) {
                Some(q) => &q + p,
                None => p.clone(),
            };
            if !merged.is_zero() {
                out.linear.insert(*k, merged);
            }
        }
        out
    }

    /// Embed every part into a common variable space.
    pub fn embed(&self, target: &VarSpace) -> Result<PolyExpr, SosError> {
        let e = |p: &Polynomial| p.embed(target).map_err(|e| SosError::VarSpace(e.to_string()));
        Ok(PolyExpr {
            constant: e(&self.constant)?,
            linear: self
                .linear
                .iter()
                .map(|(k, p)| Ok((*k, e(p)?)))
                .collect::<Result<_, SosError>>()?,
        })
    }

    /// Substitute numeric values for the decision variables.
    pub fn realize(&self, values: &[f64]) -> Polynomial {
        let mut out = self.constant.clone();
        for (k, p) in &self.linear {
            let v = values[k.0];
            if v != 0.0 {
                out = &out + &p.scale(v);
            }
        }
        out
    }

    /// Indices of polynomial variables that occur with nonzero exponent.
    fn support_vars(&self) -> Vec<usize> {
        let mut used = BTreeSet::new();
        for p in std::iter::once(&self.constant).chain(self.linear.values()) {
            for (m, _) in p.terms() {
                for (i, &e) in m.exponents().iter().enumerate() {
                    if e > 0 {
                        used.insert(i);
                    }
                }
            }
        }
        used.into_iter().collect()
    }
}

impl fmt::Debug for PolyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.constant)?;
        for (k, p) in &self.linear {
            write!(f, " + v{}·({:?})", k.0, p)?;
        }
        Ok(())
    }
}

impl From<Polynomial> for PolyExpr {
    fn from(p: Polynomial) -> Self {
        PolyExpr::known(p)
    }
}

impl From<&Polynomial> for PolyExpr {
    fn from(p: &Polynomial) -> Self {
        PolyExpr::known(p.clone())
    }
}

impl Add<&PolyExpr> for &PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: &PolyExpr) -> PolyExpr {
        self.add_expr(rhs)
    }
}

impl Add<PolyExpr> for PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: PolyExpr) -> PolyExpr {
        self.add_expr(&rhs)
    }
}

impl Add<&Polynomial> for PolyExpr {
    type Output = PolyExpr;
    fn add(mut self, rhs: &Polynomial) -> PolyExpr {
        self.constant = &self.constant + rhs;
        self
    }
}

impl Sub<&PolyExpr> for &PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: &PolyExpr) -> PolyExpr {
        self.add_expr(&rhs.scale(-1.0))
    }
}

impl Sub<PolyExpr> for PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: PolyExpr) -> PolyExpr {
        self.add_expr(&rhs.scale(-1.0))
    }
}

impl Sub<&Polynomial> for PolyExpr {
    type Output = PolyExpr;
    fn sub(mut self, rhs: &Polynomial) -> PolyExpr {
        self.constant = &self.constant - rhs;
        self
    }
}

impl Mul<&Polynomial> for &PolyExpr {
    type Output = PolyExpr;
    fn mul(self, rhs: &Polynomial) -> PolyExpr {
        self.mul_poly(rhs)
    }
}

impl Mul<&Polynomial> for PolyExpr {
    type Output = PolyExpr;
    fn mul(self, rhs: &Polynomial) -> PolyExpr {
        self.mul_poly(rhs)
    }
}

impl Mul<f64> for PolyExpr {
    type Output = PolyExpr;
    fn mul(self, rhs: f64) -> PolyExpr {
        self.scale(rhs)
    }
}

impl Neg for PolyExpr {
    type Output = PolyExpr;
    fn neg(self) -> PolyExpr {
        self.scale(-1.0)
    }
}

/// Affine scalar form `Σ aᵢ vᵢ + constant`.
#[derive(Debug, Clone, Default)]
pub struct Affine {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(v: VarId) -> Self {
        Affine {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    /// Value of a degree-zero expression, or of `expr` at a point.
    pub fn from_expr_at(expr: &PolyExpr, point: &[f64]) -> Self {
        Affine {
            terms: expr.linear.iter().map(|(k, p)| (*k, p.eval(point))).collect(),
            constant: expr.constant.eval(point),
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, a)| a * values[v.0]).sum::<f64>()
    }
}

/// Decision polynomial with one free coefficient per basis monomial.
#[derive(Debug, Clone)]
pub struct DecisionPoly {
    pub basis: Vec<Monomial>,
    pub handles: Vec<VarId>,
    expr: PolyExpr,
}

impl DecisionPoly {
    pub fn expr(&self) -> &PolyExpr {
        &self.expr
    }
}

/// SOS decision polynomial `m(x)ᵀ Q m(x)` with `Q` a PSD block of the model.
#[derive(Debug, Clone)]
pub struct SosPoly {
    pub basis: Vec<Monomial>,
    block: usize,
    expr: PolyExpr,
}

impl SosPoly {
    pub fn expr(&self) -> &PolyExpr {
        &self.expr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Free,
    Nonneg,
    Gram,
}

#[derive(Debug, Clone)]
struct Block {
    kind: BlockKind,
    /// matrix side for Gram blocks, scalar count otherwise
    size: usize,
    offset: usize,
}

impl Block {
    fn cone(&self) -> Cone {
        match self.kind {
            BlockKind::Free => Cone::Free(self.size),
            BlockKind::Nonneg => Cone::Nonneg(self.size),
            BlockKind::Gram => Cone::Psd(self.size),
        }
    }
}

#[derive(Debug, Clone)]
struct SosConstraint {
    name: String,
    expr: PolyExpr,
    basis: Vec<Monomial>,
    block: usize,
    margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

/// Builder for an SOS program over a fixed polynomial variable space.
#[derive(Debug, Clone)]
pub struct SosModel {
    vars: VarSpace,
    blocks: Vec<Block>,
    nscalars: usize,
    constraints: Vec<SosConstraint>,
    equalities: Vec<(Affine, f64)>,
    inequalities: Vec<(Affine, f64, usize)>,
    objective: Option<(Sense, Affine)>,
    margin: f64,
}

impl SosModel {
    pub fn new(vars: &VarSpace) -> Self {
        SosModel {
            vars: vars.clone(),
            blocks: Vec::new(),
            nscalars: 0,
            constraints: Vec::new(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            objective: None,
            margin: 0.0,
        }
    }

    pub fn vars(&self) -> &VarSpace {
        &self.vars
    }

    /// Every SOS constraint is imposed as `p − μ·m(x)ᵀm(x) ∈ Σ`, keeping
    /// the Gram matrices at least `μ` away from the boundary of the cone.
    pub fn set_gram_margin(&mut self, mu: f64) {
        self.margin = mu.max(0.0);
    }

    fn alloc(&mut self, kind: BlockKind, size: usize) -> usize {
        let offset = self.nscalars;
        let dim = match kind {
            BlockKind::Gram => size * (size + 1) / 2,
            _ => size,
        };
        self.nscalars += dim;
        self.blocks.push(Block { kind, size, offset });
        self.blocks.len() - 1
    }

    pub fn scalar(&mut self) -> VarId {
        let b = self.alloc(BlockKind::Free, 1);
        VarId(self.blocks[b].offset)
    }

    /// Decision polynomial with the given monomials (in the model's space).
    pub fn free_poly(&mut self, basis: Vec<Monomial>) -> DecisionPoly {
        let b = self.alloc(BlockKind::Free, basis.len());
        let off = self.blocks[b].offset;
        let handles: Vec<VarId> = (0..basis.len()).map(|i| VarId(off + i)).collect();
        let mut expr = PolyExpr::zero(&self.vars);
        for (m, &h) in basis.iter().zip(&handles) {
            expr = expr + PolyExpr::var(h, Polynomial::monomial(&self.vars, m.clone(), 1.0));
        }
        DecisionPoly { basis, handles, expr }
    }

    /// Decision polynomial with all monomials of degree `<= degree` in the
    /// variables `subset`.
    pub fn free_poly_in(&mut self, subset: &[usize], degree: u32) -> DecisionPoly {
        self.free_poly(monomial_basis_in(self.vars.len(), subset, degree))
    }

    /// SOS polynomial of degree `degree` (rounded down to even) in `subset`.
    pub fn sos_poly(&mut self, subset: &[usize], degree: u32) -> SosPoly {
        let basis = monomial_basis_in(self.vars.len(), subset, degree / 2);
        let b = self.alloc(BlockKind::Gram, basis.len());
        let expr = self.gram_expr(&basis, b, 1.0);
        SosPoly { basis, block: b, expr }
    }

    fn gram_expr(&self, basis: &[Monomial], block: usize, scale: f64) -> PolyExpr {
        let n = basis.len();
        let off = self.blocks[block].offset;
        let mut expr = PolyExpr::zero(&self.vars);
        for j in 0..n {
            for i in j..n {
                let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                let m = basis[i].mul(&basis[j]);
                let v = VarId(off + conic::svec_index(n, i, j));
                expr = expr + PolyExpr::var(v, Polynomial::monomial(&self.vars, m, w * scale));
            }
        }
        expr
    }

    /// Constrain `expr ∈ Σ`. The Gram basis spans the variables occurring
    /// in `expr`, up to half its degree (rounded up).
    pub fn add_sos(&mut self, name: &str, expr: PolyExpr) -> Result<usize, SosError> {
        let margin = self.margin;
        self.add_sos_with_margin(name, expr, margin)
    }

    /// As [`SosModel::add_sos`] with an explicit Gram margin for this constraint.
    pub fn add_sos_with_margin(&mut self, name: &str, expr: PolyExpr, margin: f64) -> Result<usize, SosError> {
        let expr = expr.embed(&self.vars)?;
        let deg = expr.degree();
        if deg % 2 == 1 {
            let fixed_top = expr.constant.terms().any(|(m, _)| m.degree() == deg);
            let free_top = expr.linear.values().any(|p| p.degree() == deg);
            if fixed_top && !free_top {
                return Err(SosError::OddDegree(name.to_string()));
            }
        }
        let subset = expr.support_vars();
        let basis = monomial_basis_in(self.vars.len(), &subset, deg.div_ceil(2));
        let block = self.alloc(BlockKind::Gram, basis.len());
        self.constraints.push(SosConstraint {
            name: name.to_string(),
            expr,
            basis,
            block,
            margin: margin.max(0.0),
        });
        Ok(self.constraints.len() - 1)
    }

    pub fn add_equality(&mut self, lhs: Affine, rhs: f64) {
        self.equalities.push((lhs, rhs));
    }

    /// `lhs <= rhs`, through a nonnegative slack.
    pub fn add_le(&mut self, lhs: Affine, rhs: f64) {
        let b = self.alloc(BlockKind::Nonneg, 1);
        let off = self.blocks[b].offset;
        self.inequalities.push((lhs, rhs, off));
    }

    pub fn maximize(&mut self, f: Affine) {
        self.objective = Some((Sense::Maximize, f));
    }

    pub fn minimize(&mut self, f: Affine) {
        self.objective = Some((Sense::Minimize, f));
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// `(name, Gram side)` for each SOS constraint.
    pub fn basis_sizes(&self) -> Vec<(String, usize)> {
        self.constraints
            .iter()
            .map(|c| (c.name.clone(), c.basis.len()))
            .collect()
    }

    pub fn has_objective(&self) -> bool {
        self.objective.is_some()
    }

    pub fn compile(&self) -> Result<ConicProblem, SosError> {
        let n = self.nscalars;
        let mut c = vec![0.0; n];
        if let Some((sense, f)) = &self.objective {
            let sign = if *sense == Sense::Maximize { -1.0 } else { 1.0 };
            for (v, a) in &f.terms {
                c[v.0] += sign * a;
            }
        }
        let mut trip: Vec<(usize, usize, f64)> = Vec::new();
        let mut b = Vec::new();
        for con in &self.constraints {
            self.compile_sos(con, &mut trip, &mut b)?;
        }
        for (lhs, rhs) in &self.equalities {
            let r = b.len();
            for (v, a) in &lhs.terms {
                trip.push((r, v.0, *a));
            }
            b.push(rhs - lhs.constant);
        }
        for (lhs, rhs, slack) in &self.inequalities {
            let r = b.len();
            for (v, a) in &lhs.terms {
                trip.push((r, v.0, *a));
            }
            trip.push((r, *slack, 1.0));
            b.push(rhs - lhs.constant);
        }
        let cones = self.blocks.iter().map(Block::cone).collect();
        Ok(ConicProblem::from_triplets(c, b.len(), &trip, b, cones)?)
    }

    /// Rows `Σ_k p_k(α) v_k − Σ Gram(α) = −p_0(α) + μ·diag(α)` per monomial α.
    fn compile_sos(
        &self,
        con: &SosConstraint,
        trip: &mut Vec<(usize, usize, f64)>,
        b: &mut Vec<f64>,
    ) -> Result<(), SosError> {
        let nb = con.basis.len();
        let off = self.blocks[con.block].offset;
        let mut rows: BTreeMap<Monomial, (Vec<(usize, f64)>, f64)> = BTreeMap::new();
        for j in 0..nb {
            for i in j..nb {
                let m = con.basis[i].mul(&con.basis[j]);
                let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                let e = rows.entry(m).or_default();
                e.0.push((off + conic::svec_index(nb, i, j), -w));
                if i == j {
                    e.1 += con.margin;
                }
            }
        }
        let mut decision: BTreeMap<Monomial, Vec<(usize, f64)>> = BTreeMap::new();
        for (v, p) in &con.expr.linear {
            for (m, a) in p.terms() {
                decision.entry(m.clone()).or_default().push((v.0, a));
            }
        }
        for (m, a) in con.expr.constant.terms() {
            match rows.get_mut(m) {
                Some(e) => e.1 -= a,
                None if decision.contains_key(m) => {
                    rows.insert(m.clone(), (Vec::new(), -a));
                }
                None => {
                    return Err(SosError::Unmatched {
                        name: con.name.clone(),
                        monomial: format!("{m:?}"),
                        value: a,
                    })
                }
            }
        }
        for (m, cols) in decision {
            let e = rows.entry(m).or_default();
            e.0.extend(cols);
        }
        for (_, (cols, rhs)) in rows {
            if cols.is_empty() {
                continue;
            }
            let r = b.len();
            trip.extend(cols.into_iter().map(|(c, a)| (r, c, a)));
            b.push(rhs);
        }
        Ok(())
    }

    pub fn solve(&self, settings: &Settings) -> Result<SosSolution, SosError> {
        self.solve_warm(settings, None)
    }

    pub fn solve_warm(&self, settings: &Settings, warm: Option<&WarmStart>) -> Result<SosSolution, SosError> {
        let problem = self.compile()?;
        let sol = conic::solve_warm(&problem, settings, warm)?;
        self.extract(&sol)
    }

    /// Realize decision values and rebuild an exact certificate for every
    /// SOS constraint.
    pub fn extract(&self, sol: &ConicSolution) -> Result<SosSolution, SosError> {
        match sol.status {
            Status::Infeasible => {
                return Err(SosError::Infeasible {
                    certificate: sol.certificate.clone(),
                })
            }
            Status::Unbounded => {
                return Err(SosError::NotOptimal {
                    status: sol.status,
                    partial: None,
                })
            }
            _ => {}
        }
        let values = sol.x.clone();
        let mut certificates = Vec::with_capacity(self.constraints.len());
        for con in &self.constraints {
            let expression = con.expr.realize(&values).pruned(0.0);
            let nb = con.basis.len();
            let off = self.blocks[con.block].offset;
            let mut gram = conic::svec_to_mat(nb, &values[off..off + nb * (nb + 1) / 2]);
            for i in 0..nb {
                gram[(i, i)] += con.margin;
            }
            repair_gram(&expression, &con.basis, &mut gram);
            certificates.push(SosCertificate {
                name: con.name.clone(),
                basis: con.basis.clone(),
                gram,
                expression,
            });
        }
        let out = SosSolution {
            values,
            objective: self.objective.as_ref().map(|(_, f)| f.eval(&sol.x)).unwrap_or(0.0),
            certificates,
            iterations: sol.iterations,
            warm: WarmStart::from(sol),
        };
        if sol.status == Status::MaxIter {
            return Err(SosError::NotOptimal {
                status: sol.status,
                partial: Some(Box::new(out)),
            });
        }
        Ok(out)
    }

    /// Certificate of the SOS decision polynomial `s` itself.
    pub fn sos_certificate(&self, name: &str, s: &SosPoly, values: &[f64]) -> SosCertificate {
        let n = s.basis.len();
        let off = self.blocks[s.block].offset;
        let gram = conic::svec_to_mat(n, &values[off..off + n * (n + 1) / 2]);
        SosCertificate {
            name: name.to_string(),
            basis: s.basis.clone(),
            expression: gram_polynomial(&self.vars, &s.basis, &gram),
            gram,
        }
    }

    pub fn sos_value(&self, s: &SosPoly, values: &[f64]) -> Polynomial {
        let n = s.basis.len();
        let off = self.blocks[s.block].offset;
        let g = conic::svec_to_mat(n, &values[off..off + n * (n + 1) / 2]);
        gram_polynomial(&self.vars, &s.basis, &g)
    }
}

/// Spread each coefficient residual evenly over the Gram entries that
/// produce that monomial: the minimum-Frobenius-norm exact correction.
fn repair_gram(expr: &Polynomial, basis: &[Monomial], gram: &mut DMatrix<f64>) {
    let n = basis.len();
    let mut cells: HashMap<Monomial, Vec<(usize, usize)>> = HashMap::new();
    for i in 0..n {
        for j in 0..n {
            cells.entry(basis[i].mul(&basis[j])).or_default().push((i, j));
        }
    }
    let recon = gram_polynomial(expr.vars(), basis, gram);
    let resid = expr - &recon;
    for (m, r) in resid.terms() {
        if let Some(c) = cells.get(m) {
            let delta = r / c.len() as f64;
            for &(i, j) in c {
                gram[(i, j)] += delta;
            }
        }
    }
}

/// `m(x)ᵀ G m(x)` for a symmetric `G`.
pub fn gram_polynomial(vars: &VarSpace, basis: &[Monomial], g: &DMatrix<f64>) -> Polynomial {
    let n = basis.len();
    let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            let v = g[(i, j)];
            if v != 0.0 {
                *acc.entry(basis[i].mul(&basis[j])).or_default() += v;
            }
        }
    }
    Polynomial::from_terms(vars, acc)
}

/// Gram certificate `expression = m(x)ᵀ gram m(x)` of one SOS constraint.
#[derive(Debug, Clone)]
pub struct SosCertificate {
    pub name: String,
    pub basis: Vec<Monomial>,
    pub gram: DMatrix<f64>,
    pub expression: Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyTol {
    pub eig: f64,
    pub coeff: f64,
}

impl Default for VerifyTol {
    fn default() -> Self {
        VerifyTol { eig: 1e-8, coeff: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyReport {
    pub psd_floor: f64,
    pub max_coeff_residual: f64,
    pub pass: bool,
}

/// Independently re-check `expression = m(x)ᵀ Q m(x)` and `Q ⪰ 0`.
pub fn verify_certificate(expression: &Polynomial, cert: &SosCertificate, tol: VerifyTol) -> VerifyReport {
    let n = cert.basis.len();
    let symmetric = (0..n).all(|i| (0..i).all(|j| (cert.gram[(i, j)] - cert.gram[(j, i)]).abs() <= 1e-12));
    let sym = (&cert.gram + cert.gram.transpose()) * 0.5;
    let psd_floor = conic::min_eigenvalue(&sym);
    let max_coeff_residual = match cert.basis.first() {
        Some(m) if m.len() != expression.vars().len() => f64::INFINITY,
        _ => {
            let recon = gram_polynomial(expression.vars(), &cert.basis, &sym);
            (expression - &recon).max_abs_coeff()
        }
    };
    VerifyReport {
        psd_floor,
        max_coeff_residual,
        pass: symmetric && psd_floor >= -tol.eig && max_coeff_residual <= tol.coeff,
    }
}

#[derive(Debug, Clone)]
pub struct SosSolution {
    values: Vec<f64>,
    pub objective: f64,
    pub certificates: Vec<SosCertificate>,
    pub iterations: usize,
    pub warm: WarmStart,
}

impl SosSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn poly(&self, e: &PolyExpr) -> Polynomial {
        e.realize(&self.values).pruned(0.0)
    }

    /// Re-verify every constraint certificate against its own expression.
    pub fn verify_all(&self, tol: VerifyTol) -> Vec<(String, VerifyReport)> {
        self.certificates
            .iter()
            .map(|c| (c.name.clone(), verify_certificate(&c.expression, c, tol)))
            .collect()
    }

    pub fn all_pass(&self, tol: VerifyTol) -> bool {
        self.verify_all(tol).iter().all(|(_, r)| r.pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_space() -> (VarSpace, Polynomial) {
        let v = VarSpace::new(["x"]);
        let x = Polynomial::var(&v, "x").unwrap();
        (v, x)
    }

    #[test]
    fn complete_the_square() {
        let (v, x) = x_space();
        let mut m = SosModel::new(&v);
        m.set_gram_margin(1e-6);
        let lam = m.scalar();
        let p = &x * &x + x.scale(2.0);
        let expr = PolyExpr::known(p) + PolyExpr::var(lam, Polynomial::constant(&v, 1.0));
        m.add_sos("sq", expr).unwrap();
        m.maximize(Affine {
            terms: vec![(lam, -1.0)],
            constant: 0.0,
        });
        let sol = m.solve(&Settings::default()).unwrap();
        assert!((sol.value(lam) - 1.0).abs() < 1e-5, "{}", sol.value(lam));
        assert!(sol.all_pass(VerifyTol::default()));
    }

    #[test]
    fn quartic_minimum_and_gram() {
        let (v, x) = x_space();
        let mut m = SosModel::new(&v);
        // the optimum sits on the cone boundary; keep repaired Grams inside
        m.set_gram_margin(1e-6);
        let lam = m.scalar();
        let p = x.powi(4) - (&x * &x).scale(3.0);
        let expr = PolyExpr::known(p) + PolyExpr::var(lam, Polynomial::constant(&v, 1.0));
        m.add_sos("q", expr).unwrap();
        m.minimize(Affine::var(lam));
        let sol = m.solve(&Settings::default()).unwrap();
        assert!((sol.value(lam) - 2.25).abs() < 1e-5, "{}", sol.value(lam));
        let cert = &sol.certificates[0];
        // (x² − 3/2)² over [1, x, x²]
        assert!((cert.gram[(0, 0)] - 2.25).abs() < 1e-4, "{}", cert.gram);
        assert!((cert.gram[(2, 2)] - 1.0).abs() < 1e-4);
        assert!(
            sol.all_pass(VerifyTol::default()),
            "{:?}",
            sol.verify_all(VerifyTol::default())
        );
    }

    #[test]
    fn negative_constant_is_infeasible() {
        let (v, x) = x_space();
        let mut m = SosModel::new(&v);
        m.add_sos("neg", PolyExpr::known(&x * &x - 1.0)).unwrap();
        assert!(matches!(
            m.solve(&Settings::default()),
            Err(SosError::Infeasible { .. })
        ));
    }

    #[test]
    fn empty_model_is_feasible() {
        let (v, _) = x_space();
        let m = SosModel::new(&v);
        let sol = m.solve(&Settings::default()).unwrap();
        assert!(sol.certificates.is_empty());
    }

    #[test]
    fn odd_fixed_leading_form_is_rejected() {
        let (v, x) = x_space();
        let mut m = SosModel::new(&v);
        assert!(matches!(
            m.add_sos("cubic", PolyExpr::known(x.powi(3))),
            Err(SosError::OddDegree(_))
        ));
    }

    #[test]
    fn s_procedure_pattern() {
        // −h − (y² − y_m²)s − ε ∈ Σ with h = 1 − y², y_m = 2: s = 1/4 works
        let v = VarSpace::new(["y"]);
        let y = Polynomial::var(&v, "y").unwrap();
        let h = Polynomial::constant(&v, 1.0) - &y * &y;
        let mut m = SosModel::new(&v);
        let s = m.sos_poly(&[0], 0);
        let expr = PolyExpr::known(-&h) - s.expr().mul_poly(&(&y * &y - 4.0)) - &Polynomial::constant(&v, 1e-4);
        m.add_sos("c1", expr).unwrap();
        assert_eq!(m.basis_sizes(), vec![("c1".to_string(), 2)]);
        let sol = m.solve(&Settings::default()).unwrap();
        assert!(sol.all_pass(VerifyTol::default()));
        let sv = m.sos_value(&s, sol.values());
        assert!(sv.coeff(&Monomial::new(vec![0])) >= 0.0);
    }

    #[test]
    fn verify_examples() {
        let (v, x) = x_space();
        let cert = SosCertificate {
            name: "t".into(),
            basis: vec![Monomial::new(vec![0]), Monomial::new(vec![1])],
            gram: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            expression: (&x + 1.0) * (&x + 1.0),
        };
        let ok = verify_certificate(&cert.expression, &cert, VerifyTol::default());
        assert!(ok.pass && ok.max_coeff_residual == 0.0);
        let other = &x * &x + x.scale(2.0) + 2.0;
        let bad = verify_certificate(&other, &cert, VerifyTol::default());
        assert!(!bad.pass && (bad.max_coeff_residual - 1.0).abs() < 1e-15);
        let _ = v;
    }
}
