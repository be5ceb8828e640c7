//! Sparse multivariate polynomials over named variables.
//!
//! A [`Polynomial`] stores only nonzero coefficients, keyed by [`Monomial`]
//! in graded-lexicographic order. Polynomials over different variable
//! spaces can be combined freely: the operands are embedded into the union
//! of both spaces, identifying variables by name.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

/// Absolute tolerance used when comparing coefficients.
pub const COEFF_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no value assigned to variable `{0}`")]
    MissingAssignment(String),
    #[error("variable `{0}` is not in the variable space")]
    UnknownVariable(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Ordered list of variable names shared by a set of polynomials.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VarSpace(Arc<[String]>);

impl VarSpace {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        VarSpace(names.into())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    /// Union by name; the order of `self` is kept and new names are appended.
    pub fn union(&self, other: &VarSpace) -> VarSpace {
        if self == other || other.0.iter().all(|n| self.index_of(n).is_some()) {
            return self.clone();
        }
        let mut names = self.0.to_vec();
        for n in other.0.iter() {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        VarSpace(names.into())
    }

    fn same(&self, other: &VarSpace) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl fmt::Debug for VarSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// Exponent tuple, one entry per variable of the owning space.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Box<[u32]>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents.into_boxed_slice())
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars].into_boxed_slice())
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial::new(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.len(), other.len());
        Monomial(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    /// Re-index into a larger space; `map[i]` is the target index of variable `i`.
    fn embed(&self, map: &[usize], nvars: usize) -> Monomial {
        let mut e = vec![0; nvars];
        for (i, &x) in self.0.iter().enumerate() {
            e[map[i]] = x;
        }
        Monomial::new(e)
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    /// Graded order: lower total degree first; within a degree, larger
    /// leading exponents first (so `x` precedes `y` in the space `[x, y]`).
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// All monomials in `nvars` variables of total degree `<= max_degree`, in
/// graded-lexicographic order. The count is `C(nvars + max_degree, max_degree)`.
pub fn monomial_basis(nvars: usize, max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut buf = vec![0u32; nvars];
    for d in 0..=max_degree {
        fill_degree(&mut out, &mut buf, 0, d);
    }
    out
}

/// Same as [`monomial_basis`], restricted to the variables listed in
/// `subset` (indices into a space of size `nvars`).
pub fn monomial_basis_in(nvars: usize, subset: &[usize], max_degree: u32) -> Vec<Monomial> {
    monomial_basis(subset.len(), max_degree)
        .into_iter()
        .map(|m| m.embed(subset, nvars))
        .collect()
}

fn fill_degree(out: &mut Vec<Monomial>, buf: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(Monomial::new(buf.to_vec()));
        buf[pos] = 0;
        return;
    }
    if buf.is_empty() {
        if remaining == 0 {
            out.push(Monomial::new(Vec::new()));
        }
        return;
    }
    for e in (0..=remaining).rev() {
        buf[pos] = e;
        fill_degree(out, buf, pos + 1, remaining - e);
    }
    buf[pos] = 0;
}

/// Sparse polynomial with real coefficients.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    vars: VarSpace,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(vars: &VarSpace) -> Self {
        Polynomial {
            vars: vars.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: &VarSpace, c: f64) -> Self {
        let mut p = Polynomial::zero(vars);
        p.add_term(Monomial::one(vars.len()), c);
        p
    }

    /// The polynomial `x` for the named variable.
    pub fn var(vars: &VarSpace, name: &str) -> Result<Self, PolyError> {
        let i = vars
            .index_of(name)
            .ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
        Ok(Polynomial::var_at(vars, i))
    }

    pub fn var_at(vars: &VarSpace, index: usize) -> Self {
        let mut p = Polynomial::zero(vars);
        p.add_term(Monomial::var(vars.len(), index), 1.0);
        p
    }

    pub fn monomial(vars: &VarSpace, m: Monomial, c: f64) -> Self {
        assert_eq!(m.len(), vars.len(), "monomial arity");
        let mut p = Polynomial::zero(vars);
        p.add_term(m, c);
        p
    }

    pub fn from_terms<I>(vars: &VarSpace, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut p = Polynomial::zero(vars);
        for (m, c) in terms {
            assert_eq!(m.len(), vars.len(), "monomial arity");
            p.add_term(m, c);
        }
        p
    }

    pub fn vars(&self) -> &VarSpace {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let v = *e.get() + c;
                if v == 0.0 {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
        }
    }

    /// Rebuild the term map, dropping exact zeros. A no-op on any polynomial
    /// produced by this module.
    pub fn normalized(&self) -> Polynomial {
        Polynomial::from_terms(&self.vars, self.terms.iter().map(|(m, &c)| (m.clone(), c)))
    }

    /// Drop terms whose magnitude is at most `tol`.
    pub fn pruned(&self, tol: f64) -> Polynomial {
        Polynomial {
            vars: self.vars.clone(),
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.abs() > tol)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Express `self` over `target`, which must contain every variable of `self`.
    pub fn embed(&self, target: &VarSpace) -> Result<Polynomial, PolyError> {
        if self.vars.same(target) {
            return Ok(self.clone());
        }
        let map = self
            .vars
            .names()
            .iter()
            .map(|n| target.index_of(n).ok_or_else(|| PolyError::UnknownVariable(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Polynomial {
            vars: target.clone(),
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| (m.embed(&map, target.len()), c))
                .collect(),
        })
    }

    fn aligned(&self, other: &Polynomial) -> (Polynomial, Polynomial) {
        if self.vars.same(&other.vars) {
            return (self.clone(), other.clone());
        }
        let u = self.vars.union(&other.vars);
        (
            self.embed(&u).expect("union contains operand"),
            other.embed(&u).expect("union contains operand"),
        )
    }

    fn add_ref(&self, other: &Polynomial) -> Polynomial {
        if self.vars.same(&other.vars) {
            let mut out = self.clone();
            for (m, &c) in &other.terms {
                out.add_term(m.clone(), c);
            }
            return out;
        }
        let (a, b) = self.aligned(other);
        a.add_ref(&b)
    }

    fn sub_ref(&self, other: &Polynomial) -> Polynomial {
        self.add_ref(&other.scale(-1.0))
    }

    fn mul_ref(&self, other: &Polynomial) -> Polynomial {
        if !self.vars.same(&other.vars) {
            let (a, b) = self.aligned(other);
            return a.mul_ref(&b);
        }
        let mut out = Polynomial::zero(&self.vars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(&self.vars);
        }
        Polynomial {
            vars: self.vars.clone(),
            terms: self.terms.iter().map(|(m, &c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn add_constant(&self, c: f64) -> Polynomial {
        let mut out = self.clone();
        out.add_term(Monomial::one(self.vars.len()), c);
        out
    }

    pub fn powi(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(&self.vars, 1.0);
        for _ in 0..k {
            out = out.mul_ref(self);
        }
        out
    }

    /// Formal partial derivative with respect to the named variable. A
    /// variable outside the space yields zero.
    pub fn differentiate(&self, var: &str) -> Polynomial {
        match self.vars.index_of(var) {
            Some(i) => self.differentiate_at(i),
            None => Polynomial::zero(&self.vars),
        }
    }

    pub fn differentiate_at(&self, index: usize) -> Polynomial {
        let mut out = Polynomial::zero(&self.vars);
        for (m, &c) in &self.terms {
            let e = m.0[index];
            if e == 0 {
                continue;
            }
            let mut d = m.0.to_vec();
            d[index] -= 1;
            out.add_term(Monomial::new(d), c * e as f64);
        }
        out
    }

    /// `Σ_i (∂self/∂x_i) · field[i]`, where `x_i` runs over the variables of
    /// `self` in order.
    pub fn lie_derivative(&self, field: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if field.len() != self.vars.len() {
            return Err(PolyError::DimensionMismatch {
                expected: self.vars.len(),
                actual: field.len(),
            });
        }
        let mut acc = Polynomial::zero(&self.vars);
        for (i, f) in field.iter().enumerate() {
            let d = self.differentiate_at(i);
            if !d.is_zero() {
                acc = acc.add_ref(&d.mul_ref(f));
            }
        }
        Ok(acc)
    }

    /// Evaluate with a by-name assignment; every variable must be assigned.
    pub fn evaluate(&self, point: &HashMap<&str, f64>) -> Result<f64, PolyError> {
        let values = self
            .vars
            .names()
            .iter()
            .map(|n| {
                point
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| PolyError::MissingAssignment(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.eval(&values))
    }

    /// Evaluate at a positional point (one value per variable of the space).
    ///
    /// Terms are visited in lexicographic order of their exponent tuples and
    /// folded Horner-fashion in the leading variable.
    pub fn eval(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.vars.len(), "point dimension");
        if self.terms.is_empty() {
            return 0.0;
        }
        let mut terms: Vec<(&[u32], f64)> = self.terms.iter().map(|(m, &c)| (&m.0[..], c)).collect();
        terms.sort_by(|a, b| b.0.cmp(a.0));
        horner(&terms, point, 0)
    }

    /// Substitute a polynomial for every variable: `self(subs[0], subs[1], ...)`.
    /// All substitutes must share one variable space, which becomes the result's.
    pub fn substitute(&self, subs: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if subs.len() != self.vars.len() {
            return Err(PolyError::DimensionMismatch {
                expected: self.vars.len(),
                actual: subs.len(),
            });
        }
        let target = subs.iter().fold(
            subs.first()
                .map(|s| s.vars.clone())
                .unwrap_or_else(|| self.vars.clone()),
            |acc, s| acc.union(&s.vars),
        );
        let subs: Vec<Polynomial> = subs.iter().map(|s| s.embed(&target)).collect::<Result<_, _>>()?;
        let maxdeg: Vec<u32> = (0..self.vars.len())
            .map(|i| self.terms.keys().map(|m| m.0[i]).max().unwrap_or(0))
            .collect();
        let powers: Vec<Vec<Polynomial>> = subs
            .iter()
            .zip(&maxdeg)
            .map(|(s, &d)| {
                let mut v = vec![Polynomial::constant(&target, 1.0)];
                for k in 1..=d as usize {
                    let next = v[k - 1].mul_ref(s);
                    v.push(next);
                }
                v
            })
            .collect();
        let mut out = Polynomial::zero(&target);
        for (m, &c) in &self.terms {
            let mut t = Polynomial::constant(&target, c);
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 {
                    t = t.mul_ref(&powers[i][e as usize]);
                }
            }
            out = out.add_ref(&t);
        }
        Ok(out)
    }

    /// Coefficient-wise comparison at absolute tolerance `tol`.
    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        let diff = self.sub_ref(other);
        diff.terms.values().all(|c| c.abs() <= tol)
    }

    /// Text form: a `vars` header line, then one `(e1,...,en) coefficient`
    /// line per term. Coefficients round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("vars");
        for n in self.vars.names() {
            s.push(' ');
            s.push_str(n);
        }
        s.push('\n');
        for (m, c) in &self.terms {
            s.push_str(&format!("{m:?} {c:e}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Polynomial, PolyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or(PolyError::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let mut words = header.split_whitespace();
        if words.next() != Some("vars") {
            return Err(PolyError::Parse {
                line: hl,
                msg: "expected `vars` header".into(),
            });
        }
        let vars = VarSpace::new(words);
        let mut p = Polynomial::zero(&vars);
        for (ln, line) in lines {
            let bad = |msg: &str| PolyError::Parse {
                line: ln,
                msg: msg.to_string(),
            };
            let close = line.find(')').ok_or_else(|| bad("missing `)`"))?;
            let inner = line
                .get(1..close)
                .filter(|_| line.starts_with('('))
                .ok_or_else(|| bad("missing `(`"))?;
            let exps: Vec<u32> = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(|e| e.trim().parse::<u32>().map_err(|_| bad("bad exponent")))
                    .collect::<Result<_, _>>()?
            };
            if exps.len() != vars.len() {
                return Err(bad("exponent arity does not match vars"));
            }
            let c: f64 = line[close + 1..].trim().parse().map_err(|_| bad("bad coefficient"))?;
            if !c.is_finite() {
                return Err(bad("non-finite coefficient"));
            }
            p.add_term(Monomial::new(exps), c);
        }
        Ok(p)
    }
}

fn horner(terms: &[(&[u32], f64)], point: &[f64], var: usize) -> f64 {
    if var == point.len() {
        return terms.iter().map(|t| t.1).sum();
    }
    // terms are sorted with descending exponent at `var`
    let x = point[var];
    let mut acc = 0.0;
    let mut prev_exp: Option<u32> = None;
    let mut start = 0;
    while start < terms.len() {
        let e = terms[start].0[var];
        let mut end = start + 1;
        while end < terms.len() && terms[end].0[var] == e {
            end += 1;
        }
        if let Some(pe) = prev_exp {
            acc *= x.powi((pe - e) as i32);
        }
        acc += horner(&terms[start..end], point, var + 1);
        prev_exp = Some(e);
        start = end;
    }
    if let Some(pe) = prev_exp {
        acc *= x.powi(pe as i32);
    }
    acc
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (name, &e) in self.vars.names().iter().zip(m.0.iter()) {
                match e {
                    0 => {}
                    1 => write!(f, "*{name}")?,
                    _ => write!(f, "*{name}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $call:ident) => {
        impl $tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                Polynomial::$call(self, rhs)
            }
        }
        impl $tr<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                Polynomial::$call(&self, &rhs)
            }
        }
        impl $tr<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                Polynomial::$call(&self, rhs)
            }
        }
    };
}

binop!(Add, add, add_ref);
binop!(Sub, sub, sub_ref);
binop!(Mul, mul, mul_ref);

impl Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl Mul<f64> for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl Add<f64> for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: f64) -> Polynomial {
        self.add_constant(rhs)
    }
}

impl Add<f64> for Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: f64) -> Polynomial {
        self.add_constant(rhs)
    }
}

impl Sub<f64> for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: f64) -> Polynomial {
        self.add_constant(-rhs)
    }
}

impl Sub<f64> for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: f64) -> Polynomial {
        self.add_constant(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy() -> (VarSpace, Polynomial, Polynomial) {
        let v = VarSpace::new(["x", "y"]);
        let x = Polynomial::var(&v, "x").unwrap();
        let y = Polynomial::var(&v, "y").unwrap();
        (v, x, y)
    }

    #[test]
    fn basis_sizes_and_order() {
        assert_eq!(monomial_basis(1, 0), vec![Monomial::new(vec![0])]);
        let b = monomial_basis(2, 1);
        assert_eq!(
            b,
            vec![
                Monomial::new(vec![0, 0]),
                Monomial::new(vec![1, 0]),
                Monomial::new(vec![0, 1])
            ]
        );
        assert_eq!(monomial_basis(4, 2).len(), 15);
        assert_eq!(monomial_basis(6, 3).len(), 84);
        let mut sorted = monomial_basis(3, 3);
        sorted.sort();
        assert_eq!(sorted, monomial_basis(3, 3));
    }

    #[test]
    fn subset_basis_embeds() {
        let b = monomial_basis_in(3, &[0, 2], 1);
        assert_eq!(b[1], Monomial::new(vec![1, 0, 0]));
        assert_eq!(b[2], Monomial::new(vec![0, 0, 1]));
    }

    #[test]
    fn arithmetic_examples() {
        let (v, x, _) = xy();
        let p = (&x + 1.0) * (&x - 1.0);
        let expect = &x * &x - Polynomial::constant(&v, 1.0);
        assert_eq!(p, expect);
        assert_eq!(&p + &Polynomial::zero(&v), p);
        let q = (&x * &x + &x).scale(2.0);
        assert_eq!(q.coeff(&Monomial::new(vec![2, 0])), 2.0);
        assert_eq!(q.coeff(&Monomial::new(vec![1, 0])), 2.0);
        assert_eq!((&x - &x).num_terms(), 0);
    }

    #[test]
    fn derivatives() {
        let (_, x, y) = xy();
        let p = &x * &x * &y;
        assert_eq!(p.differentiate("x"), (&x * &y).scale(2.0));
        assert!(Polynomial::constant(x.vars(), 3.0).differentiate("x").is_zero());
        assert_eq!(x.powi(4).differentiate("x"), x.powi(3).scale(4.0));
    }

    #[test]
    fn lie_derivative_examples() {
        let v = VarSpace::new(["x1", "x2"]);
        let x1 = Polynomial::var(&v, "x1").unwrap();
        let x2 = Polynomial::var(&v, "x2").unwrap();
        let h = &x1 * &x1 + &x2 * &x2;
        assert!(h.lie_derivative(&[x2.clone(), -&x1]).unwrap().is_zero());

        let vx = VarSpace::new(["x"]);
        let x = Polynomial::var(&vx, "x").unwrap();
        assert_eq!(x.lie_derivative(&[-&x]).unwrap(), -&x);

        // h = 1 - x^2, field -x + u with u a free variable
        let vu = VarSpace::new(["u"]);
        let u = Polynomial::var(&vu, "u").unwrap();
        let h = Polynomial::constant(&vx, 1.0) - &x * &x;
        let field = -&x + u.clone();
        let got = h.lie_derivative(&[field]).unwrap();
        let xe = x.embed(got.vars()).unwrap();
        let ue = u.embed(got.vars()).unwrap();
        let expect = (&xe * &xe).scale(2.0) - (&xe * &ue).scale(2.0);
        assert!(got.approx_eq(&expect, 0.0));
        assert!(matches!(
            h.lie_derivative(&[]),
            Err(PolyError::DimensionMismatch { expected: 1, actual: 0 })
        ));
    }

    #[test]
    fn evaluation() {
        let (_, x, _) = xy();
        let vx = VarSpace::new(["x"]);
        let xx = Polynomial::var(&vx, "x").unwrap();
        let p = &xx * &xx - 1.0;
        let pt = HashMap::from([("x", 2.0)]);
        assert_eq!(p.evaluate(&pt).unwrap(), 3.0);
        let g = (10f64).sqrt() / 2.0;
        let h1 = (&xx * &xx).scale(-1.0) + 5.0;
        let h2 = (&xx * &xx).scale(-0.2) + 3.0;
        assert!((h1.eval(&[g]) - 2.5).abs() < 1e-12);
        assert!((h2.eval(&[g]) - 2.5).abs() < 1e-12);
        assert_eq!(
            x.evaluate(&HashMap::from([("x", 1.0)])),
            Err(PolyError::MissingAssignment("y".into()))
        );
    }

    #[test]
    fn merge_by_name() {
        let a = Polynomial::var(&VarSpace::new(["x", "y"]), "y").unwrap();
        let b = Polynomial::var(&VarSpace::new(["y", "z"]), "y").unwrap();
        let s = &a + &b;
        assert_eq!(s.vars().names(), &["x", "y", "z"]);
        assert_eq!(s.num_terms(), 1);
        assert_eq!(s.eval(&[0.0, 3.0, 7.0]), 6.0);
    }

    #[test]
    fn substitute_affine() {
        let (v, x, y) = xy();
        let p = &x * &y + &x;
        // x -> 2x + 1, y -> y
        let q = p.substitute(&[x.scale(2.0) + 1.0, y.clone()]).unwrap();
        for pt in [[0.3, -0.7], [1.5, 2.0]] {
            let expect = p.eval(&[2.0 * pt[0] + 1.0, pt[1]]);
            assert!((q.eval(&pt) - expect).abs() < 1e-12);
        }
        assert_eq!(q.vars(), &v);
    }

    #[test]
    fn text_round_trip_exact() {
        let (_, x, y) = xy();
        let p = (&x * &y).scale(std::f64::consts::PI) + x.scale(-1.0 / 3.0) + 1e-300;
        let back = Polynomial::from_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
        assert!(Polynomial::from_text("vars x\n(1,2) 1.0\n").is_err());
        assert!(Polynomial::from_text("nope").is_err());
    }
}
