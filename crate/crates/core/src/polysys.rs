//! Likelihood equations as a polynomial system.
//!
//! Every gradient block of [`crate::likelihood`] is a polynomial in the entries
//! of `Σ`, their cofactors, `C`, `τ`, `β`, `r` and powers of `1 / det Σ`.
//! Substituting a fresh variable `γ` for `1 / det Σ` and adjoining
//! `γ · det Σ − 1 = 0` gives a square polynomial system whose real solutions
//! are exactly the critical points with nonsingular `Σ`.
//!
//! Coefficients are exact rationals. A finite `f64` is a dyadic rational, so
//! numeric covariance entries enter the system without rounding.
//!
//! For `(p, q) = (2, 1)` with symbolic `C` and the substitution `X = Σ`, the
//! ideal of the system splits into the two components whose generators are
//! exposed by [`j1_generators`] and [`j2_generators`]. This module checks that
//! splitting numerically; it does not compute decompositions.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{usage, Error, Result};
use crate::matcore::{corr_pairs, model_covariance, FactorParams, SampleCovariance};

/// Largest `p` accepted by the system builders.
pub const MAX_SYSTEM_P: usize = 4;

/// Default relative singular-value cutoff for [`jacobian_rank`].
pub const RANK_RTOL: f64 = 1e-7;

/// Default central-difference step for [`jacobian_rank`].
pub const JACOBIAN_STEP: f64 = 1e-6;

pub type Monomial = Vec<u32>;

/// Sparse multivariate polynomial with exact rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, BigRational>,
}

pub fn rational_from_f64(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite coefficient")
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: BigRational) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn from_int(nvars: usize, c: i64) -> Self {
        Self::constant(nvars, BigRational::from_integer(BigInt::from(c)))
    }

    pub fn from_f64(nvars: usize, c: f64) -> Self {
        Self::constant(nvars, rational_from_f64(c))
    }

    pub fn var(nvars: usize, idx: usize) -> Self {
        assert!(idx < nvars, "variable index out of range");
        let mut exps = vec![0; nvars];
        exps[idx] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(exps, BigRational::one());
        p
    }

    /// Adds `coef · x^exps`, dropping the term if it cancels.
    pub fn add_term(&mut self, exps: Monomial, coef: BigRational) {
        assert_eq!(exps.len(), self.nvars, "exponent vector length mismatch");
        if coef.is_zero() {
            return;
        }
        match self.terms.entry(exps) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(coef);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += coef;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Terms in descending graded-lexicographic order.
    pub fn terms_grlex(&self) -> Vec<(&Monomial, &BigRational)> {
        let mut v: Vec<_> = self.terms.iter().collect();
        v.sort_by(|(a, _), (b, _)| {
            let da: u32 = a.iter().sum();
            let db: u32 = b.iter().sum();
            db.cmp(&da).then_with(|| b.cmp(a))
        });
        v
    }

    pub fn scale(&self, s: &BigRational) -> Self {
        let mut out = Self::zero(self.nvars);
        if s.is_zero() {
            return out;
        }
        for (e, c) in &self.terms {
            out.terms.insert(e.clone(), c * s);
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::constant(self.nvars, BigRational::one());
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Floating-point value at `point` (one value per variable).
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.nvars, "point length mismatch");
        let mut sum = 0.0;
        for (exps, coef) in &self.terms {
            let mut term = coef.to_f64().unwrap_or(f64::NAN);
            for (x, &e) in point.iter().zip(exps) {
                if e != 0 {
                    term *= x.powi(e as i32);
                }
            }
            sum += term;
        }
        sum
    }

    /// Exact value at a rational point.
    pub fn evaluate_exact(&self, point: &[BigRational]) -> BigRational {
        assert_eq!(point.len(), self.nvars, "point length mismatch");
        let mut sum = BigRational::zero();
        for (exps, coef) in &self.terms {
            let mut term = coef.clone();
            for (x, &e) in point.iter().zip(exps) {
                if e != 0 {
                    term *= num_traits::pow(x.clone(), e as usize);
                }
            }
            sum += term;
        }
        sum
    }

    /// Substitutes `images[i]` for variable `i`; the result lives in the ring of
    /// the images.
    pub fn compose(&self, images: &[Polynomial]) -> Polynomial {
        assert_eq!(images.len(), self.nvars, "one image per variable required");
        let target = images.first().map(|p| p.nvars).unwrap_or(0);
        let mut powers: Vec<Vec<Polynomial>> = images
            .iter()
            .map(|p| vec![Polynomial::constant(target, BigRational::one()), p.clone()])
            .collect();
        let mut out = Polynomial::zero(target);
        for (exps, coef) in &self.terms {
            let mut term = Polynomial::constant(target, coef.clone());
            for (i, &e) in exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                while powers[i].len() <= e as usize {
                    let next = &powers[i][powers[i].len() - 1] * &images[i];
                    powers[i].push(next);
                }
                term = &term * &powers[i][e as usize];
            }
            out = &out + &term;
        }
        out
    }

    /// Central-difference partial derivatives at `point`.
    fn fd_partials(&self, point: &[f64], h: f64) -> Vec<f64> {
        let mut x = point.to_vec();
        (0..point.len())
            .map(|i| {
                x[i] = point[i] + h;
                let fp = self.evaluate(&x);
                x[i] = point[i] - h;
                let fm = self.evaluate(&x);
                x[i] = point[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -c.clone();
        }
        out
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Polynomial::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Monomial = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

/// Named, ordered variables plus a list of polynomials over them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolynomialSystem {
    pub variables: Vec<String>,
    pub polys: Vec<Polynomial>,
}

impl PolynomialSystem {
    pub fn nvars(&self) -> usize {
        self.variables.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.nvars() {
            return usage(format!(
                "point has {} coordinates, system has {} variables",
                point.len(),
                self.nvars()
            ));
        }
        Ok(self.polys.iter().map(|p| p.evaluate(point)).collect())
    }

    pub fn evaluate_exact(&self, point: &[BigRational]) -> Result<Vec<BigRational>> {
        if point.len() != self.nvars() {
            return usage(format!(
                "point has {} coordinates, system has {} variables",
                point.len(),
                self.nvars()
            ));
        }
        Ok(self.polys.iter().map(|p| p.evaluate_exact(point)).collect())
    }
}

pub fn evaluate_system(sys: &PolynomialSystem, point: &[f64]) -> Result<Vec<f64>> {
    sys.evaluate(point)
}

/// Variable naming shared by the exporters: `tau1`, `b_k_l`, `r_k_l`, `g`,
/// `x_i_j`, `c_i_j` (one-based).
#[derive(Debug, Clone)]
pub struct VarLayout {
    pub p: usize,
    pub q: usize,
    pub symbolic: bool,
    pub names: Vec<String>,
}

impl VarLayout {
    pub fn new(p: usize, q: usize, symbolic: bool) -> Self {
        let mut names = Vec::new();
        if symbolic {
            for i in 1..=p {
                for j in i..=p {
                    names.push(format!("c_{i}_{j}"));
                }
            }
        }
        names.extend((1..=p).map(|k| format!("tau{k}")));
        for k in 1..=q {
            for l in 1..=p {
                names.push(format!("b_{k}_{l}"));
            }
        }
        for (k, l) in corr_pairs(q) {
            names.push(format!("r_{}_{}", k + 1, l + 1));
        }
        names.push("g".into());
        if symbolic {
            for i in 1..=p {
                for j in i..=p {
                    names.push(format!("x_{i}_{j}"));
                }
            }
        }
        Self {
            p,
            q,
            symbolic,
            names,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn sym_offset(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        a * self.p - a * (a + 1) / 2 + b
    }

    fn tri_len(&self) -> usize {
        self.p * (self.p + 1) / 2
    }

    pub fn c(&self, i: usize, j: usize) -> usize {
        assert!(self.symbolic);
        self.sym_offset(i, j)
    }

    pub fn tau(&self, k: usize) -> usize {
        (if self.symbolic { self.tri_len() } else { 0 }) + k
    }

    pub fn beta(&self, k: usize, l: usize) -> usize {
        self.tau(self.p) + k * self.p + l
    }

    pub fn r(&self, idx: usize) -> usize {
        self.beta(self.q, 0) + idx
    }

    pub fn gamma(&self) -> usize {
        self.r(corr_pairs(self.q).len())
    }

    pub fn x(&self, i: usize, j: usize) -> usize {
        assert!(self.symbolic);
        self.gamma() + 1 + self.sym_offset(i, j)
    }

    fn var(&self, idx: usize) -> Polynomial {
        Polynomial::var(self.len(), idx)
    }

    /// Coordinates `(τ, β, r, γ)` of a parameter point in this layout; symbolic
    /// layouts also take `C` and set `X = Σ`.
    pub fn point(&self, params: &FactorParams, gamma: f64, c: Option<&SampleCovariance>) -> Result<Vec<f64>> {
        if params.p() != self.p || params.q() != self.q {
            return usage("parameter shape does not match the system layout");
        }
        let mut v = vec![0.0; self.len()];
        for (k, t) in params.tau().iter().enumerate() {
            v[self.tau(k)] = *t;
        }
        for k in 0..self.q {
            for l in 0..self.p {
                v[self.beta(k, l)] = params.beta(k, l);
            }
        }
        for (idx, r) in params.r().iter().enumerate() {
            v[self.r(idx)] = *r;
        }
        v[self.gamma()] = gamma;
        if self.symbolic {
            let c = c.ok_or_else(|| Error::Usage("symbolic layout needs C".into()))?;
            if c.dim() != self.p {
                return usage("covariance dimension does not match the system layout");
            }
            let sigma = model_covariance(params);
            for i in 0..self.p {
                for j in i..self.p {
                    v[self.c(i, j)] = c.get(i, j);
                    v[self.x(i, j)] = sigma.get(i, j);
                }
            }
        }
        Ok(v)
    }
}

type PolyMatrix = Vec<Polynomial>;

fn poly_det(m: &[Polynomial], n: usize, nvars: usize) -> Polynomial {
    match n {
        0 => Polynomial::from_int(nvars, 1),
        1 => m[0].clone(),
        2 => &(&m[0] * &m[3]) - &(&m[1] * &m[2]),
        _ => {
            let mut acc = Polynomial::zero(nvars);
            for j in 0..n {
                if m[j].is_zero() {
                    continue;
                }
                let term = &m[j] * &poly_det(&poly_minor(m, n, 0, j), n - 1, nvars);
                acc = if j % 2 == 0 { &acc + &term } else { &acc - &term };
            }
            acc
        }
    }
}

fn poly_minor(m: &[Polynomial], n: usize, row: usize, col: usize) -> PolyMatrix {
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for i in (0..n).filter(|&i| i != row) {
        for j in (0..n).filter(|&j| j != col) {
            out.push(m[i * n + j].clone());
        }
    }
    out
}

fn poly_cofactors(m: &[Polynomial], n: usize, nvars: usize) -> PolyMatrix {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d = poly_det(&poly_minor(m, n, i, j), n - 1, nvars);
            out.push(if (i + j) % 2 == 0 { d } else { -&d });
        }
    }
    out
}

fn poly_matmul(a: &[Polynomial], b: &[Polynomial], n: usize, nvars: usize) -> PolyMatrix {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Polynomial::zero(nvars);
            for k in 0..n {
                if a[i * n + k].is_zero() || b[k * n + j].is_zero() {
                    continue;
                }
                acc = &acc + &(&a[i * n + k] * &b[k * n + j]);
            }
            out.push(acc);
        }
    }
    out
}

fn transpose(a: &[Polynomial], n: usize) -> PolyMatrix {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(a[j * n + i].clone());
        }
    }
    out
}

/// `Σ_ij A_ij B_ji`.
fn trace_product(a: &[Polynomial], b: &[Polynomial], n: usize, nvars: usize) -> Polynomial {
    let mut acc = Polynomial::zero(nvars);
    for i in 0..n {
        for j in 0..n {
            if a[i * n + j].is_zero() || b[j * n + i].is_zero() {
                continue;
            }
            acc = &acc + &(&a[i * n + j] * &b[j * n + i]);
        }
    }
    acc
}

/// The γ-substituted gradient equations plus `γ det Σ − 1`, for a given
/// polynomial `Σ` and `C`.
fn likelihood_equations(layout: &VarLayout, sigma: &[Polynomial], c: &[Polynomial]) -> Vec<Polynomial> {
    let (p, q) = (layout.p, layout.q);
    let nv = layout.len();
    let two = Polynomial::from_int(nv, 2);
    let gamma = layout.var(layout.gamma());
    let gamma2 = &gamma * &gamma;
    let tau: Vec<Polynomial> = (0..p).map(|k| layout.var(layout.tau(k))).collect();
    let beta = |k: usize, l: usize| layout.var(layout.beta(k, l));
    let corr = |k: usize, m: usize| -> Polynomial {
        use std::cmp::Ordering::*;
        let pairs = corr_pairs(q);
        match k.cmp(&m) {
            Equal => Polynomial::from_int(nv, 1),
            Less => layout.var(layout.r(pairs.iter().position(|&pr| pr == (k, m)).unwrap())),
            Greater => layout.var(layout.r(pairs.iter().position(|&pr| pr == (m, k)).unwrap())),
        }
    };
    let r_beta = |k: usize, j: usize| -> Polynomial {
        let mut acc = Polynomial::zero(nv);
        for m in 0..q {
            acc = &acc + &(&corr(k, m) * &beta(m, j));
        }
        acc
    };

    let cof = poly_cofactors(sigma, p, nv);
    let adj = transpose(&cof, p);
    // adj C adj = det² Σ⁻¹ C Σ⁻¹
    let sandwich = poly_matmul(&poly_matmul(&adj, c, p, nv), &adj, p, nv);
    let mut eqs = Vec::new();

    // τ_k: 2τ_k γ Cof_kk − 2τ_k γ² Σ_ij c_ij Cof_jk Cof_ki
    for k in 0..p {
        let mut quad = Polynomial::zero(nv);
        for i in 0..p {
            for j in 0..p {
                if c[i * p + j].is_zero() {
                    continue;
                }
                quad = &quad + &(&c[i * p + j] * &(&cof[j * p + k] * &cof[k * p + i]));
            }
        }
        let scaled = &two * &tau[k];
        let lhs = &(&scaled * &gamma) * &cof[k * p + k];
        let rhs = &(&scaled * &gamma2) * &quad;
        eqs.push(&lhs - &rhs);
    }

    // β_kl: γ Σ_ij Cof_ij D_ij − γ² tr(C adj D adj),  D_ij = δ_il (Rβ)_kj + δ_jl (Rβ)_ki
    for k in 0..q {
        let rb: Vec<Polynomial> = (0..p).map(|j| r_beta(k, j)).collect();
        for l in 0..p {
            let mut d: PolyMatrix = vec![Polynomial::zero(nv); p * p];
            for j in 0..p {
                d[l * p + j] = &d[l * p + j] + &rb[j];
            }
            for i in 0..p {
                d[i * p + l] = &d[i * p + l] + &rb[i];
            }
            let mut term1 = Polynomial::zero(nv);
            for i in 0..p {
                for j in 0..p {
                    if d[i * p + j].is_zero() {
                        continue;
                    }
                    term1 = &term1 + &(&cof[i * p + j] * &d[i * p + j]);
                }
            }
            let term2 = trace_product(&sandwich, &d, p, nv);
            eqs.push(&(&gamma * &term1) - &(&gamma2 * &term2));
        }
    }

    // r_kl: γ tr(adj M) − γ² tr(adj M adj C),  M_ij = β_ki β_lj + β_li β_kj
    for (k, l) in corr_pairs(q) {
        let mut m: PolyMatrix = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                m.push(&(&beta(k, i) * &beta(l, j)) + &(&beta(l, i) * &beta(k, j)));
            }
        }
        let term1 = trace_product(&adj, &m, p, nv);
        let term2 = trace_product(&sandwich, &m, p, nv);
        eqs.push(&(&gamma * &term1) - &(&gamma2 * &term2));
    }

    let det = poly_det(sigma, p, nv);
    eqs.push(&(&gamma * &det) - &Polynomial::from_int(nv, 1));
    eqs
}

/// `Σ = diag(τ²) + β'Rβ` as polynomials in a layout's variables.
fn sigma_polys(layout: &VarLayout) -> PolyMatrix {
    let (p, q) = (layout.p, layout.q);
    let nv = layout.len();
    let pairs = corr_pairs(q);
    let corr = |k: usize, m: usize| -> Polynomial {
        if k == m {
            Polynomial::from_int(nv, 1)
        } else {
            let key = if k < m { (k, m) } else { (m, k) };
            layout.var(layout.r(pairs.iter().position(|&pr| pr == key).unwrap()))
        }
    };
    let mut out = vec![Polynomial::zero(nv); p * p];
    for i in 0..p {
        for j in i..p {
            let mut acc = Polynomial::zero(nv);
            for a in 0..q {
                for b in 0..q {
                    let bi = layout.var(layout.beta(a, i));
                    let bj = layout.var(layout.beta(b, j));
                    acc = &acc + &(&(&bi * &corr(a, b)) * &bj);
                }
            }
            if i == j {
                let t = layout.var(layout.tau(i));
                acc = &acc + &(&t * &t);
            }
            out[i * p + j] = acc.clone();
            out[j * p + i] = acc;
        }
    }
    out
}

fn check_system_shape(p: usize, q: usize) -> Result<()> {
    if p < 2 || q < 1 || q >= p {
        return usage(format!("need p >= 2 and 1 <= q < p, got p = {p}, q = {q}"));
    }
    if p > MAX_SYSTEM_P {
        return usage(format!(
            "p = {p} exceeds the polynomial-system size cap {MAX_SYSTEM_P}"
        ));
    }
    Ok(())
}

/// The likelihood equations for a numeric `C`, over `(τ, β, r, γ)`.
///
/// Equation count is `p + pq + q(q−1)/2 + 1`, one per variable.
pub fn build_system(c: &SampleCovariance, p: usize, q: usize) -> Result<PolynomialSystem> {
    check_system_shape(p, q)?;
    if c.dim() != p {
        return usage(format!("covariance has dimension {}, expected {p}", c.dim()));
    }
    let layout = VarLayout::new(p, q, false);
    let nv = layout.len();
    let sigma = sigma_polys(&layout);
    let cmat: PolyMatrix = (0..p * p)
        .map(|idx| Polynomial::from_f64(nv, c.get(idx / p, idx % p)))
        .collect();
    Ok(PolynomialSystem {
        polys: likelihood_equations(&layout, &sigma, &cmat),
        variables: layout.names,
    })
}

/// The likelihood equations with symbolic `C` and `X = Σ` substituted, followed
/// by the upper-triangle equations `x_ij − Σ_ij = 0`.
pub fn build_symbolic_system(p: usize, q: usize) -> Result<PolynomialSystem> {
    check_system_shape(p, q)?;
    let layout = VarLayout::new(p, q, true);
    let xmat: PolyMatrix = (0..p * p).map(|idx| layout.var(layout.x(idx / p, idx % p))).collect();
    let cmat: PolyMatrix = (0..p * p).map(|idx| layout.var(layout.c(idx / p, idx % p))).collect();
    let mut polys = likelihood_equations(&layout, &xmat, &cmat);
    let sigma = sigma_polys(&layout);
    for i in 0..p {
        for j in i..p {
            polys.push(&layout.var(layout.x(i, j)) - &sigma[i * p + j]);
        }
    }
    Ok(PolynomialSystem {
        polys,
        variables: layout.names,
    })
}

/// A point of the ambient 11-dimensional space of the `(2, 1)` symbolic system,
/// `(c11, c12, c22, τ1, τ2, β11, β12, γ, x11, x12, x22)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionPoint {
    pub c11: f64,
    pub c12: f64,
    pub c22: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub beta11: f64,
    pub beta12: f64,
    pub gamma: f64,
    pub x11: f64,
    pub x12: f64,
    pub x22: f64,
}

impl DecompositionPoint {
    pub const NAMES: [&'static str; 11] = [
        "c_1_1", "c_1_2", "c_2_2", "tau1", "tau2", "b_1_1", "b_1_2", "g", "x_1_1", "x_1_2", "x_2_2",
    ];

    /// Lifts `(C, params)` with `γ = 1/det Σ` and `X = Σ`.
    pub fn lift(c: &SampleCovariance, params: &FactorParams) -> Result<Self> {
        if c.dim() != 2 || params.p() != 2 || params.q() != 1 {
            return usage("decomposition points exist only for p = 2, q = 1");
        }
        let sigma = model_covariance(params);
        Ok(Self {
            c11: c.get(0, 0),
            c12: c.get(0, 1),
            c22: c.get(1, 1),
            tau1: params.tau()[0],
            tau2: params.tau()[1],
            beta11: params.beta(0, 0),
            beta12: params.beta(0, 1),
            gamma: 1.0 / sigma.det(),
            x11: sigma.get(0, 0),
            x12: sigma.get(0, 1),
            x22: sigma.get(1, 1),
        })
    }

    pub fn to_array(&self) -> [f64; 11] {
        [
            self.c11, self.c12, self.c22, self.tau1, self.tau2, self.beta11, self.beta12,
            self.gamma, self.x11, self.x12, self.x22,
        ]
    }

    pub fn from_array(v: [f64; 11]) -> Self {
        Self {
            c11: v[0],
            c12: v[1],
            c22: v[2],
            tau1: v[3],
            tau2: v[4],
            beta11: v[5],
            beta12: v[6],
            gamma: v[7],
            x11: v[8],
            x12: v[9],
            x22: v[10],
        }
    }
}

/// Term-list shorthand over the 11 decomposition coordinates:
/// each term is `(coefficient, [(variable, exponent)])`.
fn poly11(terms: &[(i64, &[(usize, u32)])]) -> Polynomial {
    let mut p = Polynomial::zero(11);
    for (coef, vars) in terms {
        let mut e = vec![0; 11];
        for &(v, k) in vars.iter() {
            e[v] += k;
        }
        p.add_term(e, BigRational::from_integer(BigInt::from(*coef)));
    }
    p
}

const C11: usize = 0;
const C12: usize = 1;
const C22: usize = 2;
const T1: usize = 3;
const T2: usize = 4;
const B11: usize = 5;
const B12: usize = 6;
const G: usize = 7;
const X11: usize = 8;
const X12: usize = 9;
const X22: usize = 10;

/// Generators of the four-dimensional component (the critical curve lifted over
/// free `C`).
pub fn j1_generators() -> Vec<Polynomial> {
    vec![
        poly11(&[(1, &[(X22, 1)]), (-1, &[(C22, 1)])]),
        poly11(&[(1, &[(X12, 1)]), (-1, &[(C12, 1)])]),
        poly11(&[(1, &[(X11, 1)]), (-1, &[(C11, 1)])]),
        poly11(&[(1, &[(B11, 1), (B12, 1)]), (-1, &[(C12, 1)])]),
        poly11(&[(1, &[(T2, 2)]), (1, &[(B12, 2)]), (-1, &[(C22, 1)])]),
        poly11(&[(1, &[(T1, 2)]), (1, &[(B11, 2)]), (-1, &[(C11, 1)])]),
        poly11(&[
            (1, &[(G, 1), (C12, 2)]),
            (-1, &[(G, 1), (C11, 1), (C22, 1)]),
            (1, &[]),
        ]),
    ]
}

/// Generators of the three-dimensional component (the isolated points lifted
/// over free `C`).
pub fn j2_generators() -> Vec<Polynomial> {
    vec![
        poly11(&[(1, &[(X22, 1)]), (-1, &[(C22, 1)])]),
        poly11(&[(1, &[(X12, 1)])]),
        poly11(&[(1, &[(X11, 1)]), (-1, &[(C11, 1)])]),
        poly11(&[(1, &[(B12, 1)])]),
        poly11(&[(1, &[(B11, 1)])]),
        poly11(&[(1, &[(T2, 2)]), (-1, &[(C22, 1)])]),
        poly11(&[(1, &[(T1, 2)]), (-1, &[(C11, 1)])]),
        poly11(&[(1, &[(G, 1), (C11, 1), (C22, 1)]), (-1, &[])]),
    ]
}

pub fn j1_residuals(pt: &DecompositionPoint) -> [f64; 7] {
    let x = pt.to_array();
    let mut out = [0.0; 7];
    for (o, g) in out.iter_mut().zip(j1_generators()) {
        *o = g.evaluate(&x);
    }
    out
}

pub fn j2_residuals(pt: &DecompositionPoint) -> [f64; 8] {
    let x = pt.to_array();
    let mut out = [0.0; 8];
    for (o, g) in out.iter_mut().zip(j2_generators()) {
        *o = g.evaluate(&x);
    }
    out
}

/// Numerical rank of the central-difference Jacobian of `generators` at `pt`:
/// singular values above `rtol` times the largest.
pub fn jacobian_rank_with(generators: &[Polynomial], pt: &[f64], h: f64, rtol: f64) -> usize {
    if generators.is_empty() {
        return 0;
    }
    let n = pt.len();
    let rows: Vec<Vec<f64>> = generators.iter().map(|g| g.fd_partials(pt, h)).collect();
    let jac = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let sv = jac.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * max).count()
}

pub fn jacobian_rank(generators: &[Polynomial], pt: &[f64], h: f64) -> usize {
    jacobian_rank_with(generators, pt, h, RANK_RTOL)
}

/// Text syntaxes understood by [`export_system`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// `coef*var^e*... + ...;`, one polynomial per line.
    Plain,
    /// A ring declaration plus an `ideal(...)`.
    M2,
    /// Equation count header followed by `;`-terminated polynomials.
    Phc,
}

impl FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "m2" | "m2-like" => Ok(Self::M2),
            "phc" | "phc-like" => Ok(Self::Phc),
            other => usage(format!(
                "unknown export format '{other}' (expected plain, m2 or phc)"
            )),
        }
    }
}

struct PolyDisplay<'a> {
    poly: &'a Polynomial,
    names: &'a [String],
}

impl fmt::Display for PolyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = self.poly.terms_grlex();
        if terms.is_empty() {
            return f.write_str("0");
        }
        for (n, (exps, coef)) in terms.into_iter().enumerate() {
            if n > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{coef}")?;
            for (name, &e) in self.names.iter().zip(exps) {
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

pub fn export_system(sys: &PolynomialSystem, format: ExportFormat) -> String {
    let show = |p: &Polynomial| PolyDisplay {
        poly: p,
        names: &sys.variables,
    }
    .to_string();
    let mut out = String::new();
    match format {
        ExportFormat::Plain => {
            for p in &sys.polys {
                let _ = writeln!(out, "{};", show(p));
            }
        }
        ExportFormat::M2 => {
            let _ = writeln!(out, "R = QQ[{}];", sys.variables.join(", "));
            let _ = writeln!(out, "I = ideal(");
            let n = sys.polys.len();
            for (i, p) in sys.polys.iter().enumerate() {
                let sep = if i + 1 < n { "," } else { "" };
                let _ = writeln!(out, "  {}{sep}", show(p));
            }
            let _ = writeln!(out, ");");
        }
        ExportFormat::Phc => {
            if sys.polys.len() == sys.nvars() {
                let _ = writeln!(out, "{}", sys.polys.len());
            } else {
                let _ = writeln!(out, "{} {}", sys.polys.len(), sys.nvars());
            }
            for p in &sys.polys {
                let _ = writeln!(out, "{};", show(p));
            }
        }
    }
    out
}

fn parse_coefficient(s: &str, line: usize) -> Result<BigRational> {
    let err = |msg: String| Error::Parse { line, msg };
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num
            .parse()
            .map_err(|_| err(format!("bad numerator '{num}'")))?;
        let d: BigInt = den
            .parse()
            .map_err(|_| err(format!("bad denominator '{den}'")))?;
        if d.is_zero() {
            return Err(err("zero denominator".into()));
        }
        return Ok(BigRational::new(n, d));
    }
    if let Ok(n) = s.parse::<BigInt>() {
        return Ok(BigRational::from_integer(n));
    }
    let v: f64 = s
        .parse()
        .map_err(|_| err(format!("bad coefficient '{s}'")))?;
    if !v.is_finite() {
        return Err(err(format!("non-finite coefficient '{s}'")));
    }
    Ok(rational_from_f64(v))
}

/// Parses the plain format back into a system over `variables`.
pub fn parse_plain(text: &str, variables: &[String]) -> Result<PolynomialSystem> {
    let nv = variables.len();
    let index: BTreeMap<&str, usize> = variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let mut polys = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        let body = l.strip_suffix(';').ok_or(Error::Parse {
            line,
            msg: "missing terminating ';'".into(),
        })?;
        let mut poly = Polynomial::zero(nv);
        for term in body.split(" + ") {
            let mut parts = term.split('*');
            let coef = parse_coefficient(parts.next().unwrap_or("").trim(), line)?;
            let mut exps = vec![0u32; nv];
            for factor in parts {
                let (name, e) = match factor.split_once('^') {
                    Some((n, e)) => (
                        n,
                        e.parse::<u32>().map_err(|_| Error::Parse {
                            line,
                            msg: format!("bad exponent '{e}'"),
                        })?,
                    ),
                    None => (factor, 1),
                };
                let idx = *index.get(name).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("unknown variable '{name}'"),
                })?;
                exps[idx] += e;
            }
            poly.add_term(exps, coef);
        }
        polys.push(poly);
    }
    Ok(PolynomialSystem {
        variables: variables.to_vec(),
        polys,
    })
}

/// Absolute value of the largest exact residual, as a rational.
pub fn max_abs_exact(values: &[BigRational]) -> BigRational {
    values
        .iter()
        .map(|v| v.abs())
        .max()
        .unwrap_or_else(BigRational::zero)
}
