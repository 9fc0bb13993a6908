//! Small dense symmetric linear algebra and the factor-model parameter types.
//!
//! Everything here works on matrices of dimension at most [`MAX_DIM`]. Determinants
//! are taken by explicit minor expansion up to 4×4 and by fraction-free (Bareiss)
//! elimination above that; cofactors are determinants of minors, so the cofactor
//! route is exact in the same sense as the determinant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Largest matrix dimension accepted by the cofactor-based code paths.
pub const MAX_DIM: usize = 8;

/// Relative singularity threshold: `|det| <= SINGULAR_RTOL * scale^dim` is singular,
/// where `scale` is the largest absolute entry.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Dense symmetric matrix in packed upper-triangle storage.
///
/// Symmetry is structural: `get(i, j)` and `get(j, i)` read the same slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    r + c * (c + 1) / 2
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return usage(format!("matrix dimension {dim} outside 1..={MAX_DIM}"));
        }
        Ok(Self {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(diag.len())?;
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        Ok(m)
    }

    /// Builds from the upper triangle of `f(i, j)` (`i <= j`).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for j in 0..dim {
            for i in 0..=j {
                m.set(i, j, f(i, j));
            }
        }
        Ok(m)
    }

    /// Builds from full rows, rejecting any asymmetry (tolerance 0).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return usage(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                ));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return usage(format!("entry ({i},{j}) is not finite"));
                }
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if rows[i][j] != rows[j][i] {
                    return usage(format!(
                        "matrix is not symmetric: entry ({i},{j}) = {} but ({j},{i}) = {}",
                        rows[i][j], rows[j][i]
                    ));
                }
            }
        }
        Self::from_fn(dim, |i, j| rows[i][j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[packed_index(i, j)] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn singularity_threshold(&self) -> f64 {
        SINGULAR_RTOL * self.max_abs().powi(self.dim as i32)
    }

    pub fn det(&self) -> f64 {
        det_dense(&self.to_dense(), self.dim)
    }

    /// `(-1)^(i+j)` times the determinant of `self` with row `i` and column `j` removed
    /// (zero-based indices).
    pub fn cofactor(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.dim || j >= self.dim {
            return usage(format!(
                "cofactor index ({i},{j}) out of range for dimension {}",
                self.dim
            ));
        }
        Ok(cofactor_dense(&self.to_dense(), self.dim, i, j))
    }

    /// Full `dim × dim` cofactor matrix, row-major.
    pub fn cofactor_matrix(&self) -> Vec<f64> {
        let n = self.dim;
        let dense = self.to_dense();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let c = cofactor_dense(&dense, n, i, j);
                out[i * n + j] = c;
                out[j * n + i] = c;
            }
        }
        out
    }

    /// Determinant and the adjugate inverse `inv(i,j) = Cof(j,i) / det`.
    pub fn det_adjugate_inverse(&self) -> Result<(f64, SymMatrix)> {
        let det = self.det();
        let threshold = self.singularity_threshold();
        if !(det.abs() > threshold) {
            return Err(Error::Singular { det, threshold });
        }
        let cof = self.cofactor_matrix();
        let n = self.dim;
        let inv = SymMatrix::from_fn(n, |i, j| cof[j * n + i] / det)?;
        Ok((det, inv))
    }

    /// Determinants of the leading `k × k` blocks, `k = 1..=dim`.
    pub fn leading_minors(&self) -> Vec<f64> {
        let dense = self.to_dense();
        let n = self.dim;
        (1..=n)
            .map(|k| {
                let mut block = Vec::with_capacity(k * k);
                for i in 0..k {
                    block.extend_from_slice(&dense[i * n..i * n + k]);
                }
                det_dense(&block, k)
            })
            .collect()
    }

    /// Sylvester's criterion on the leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        self.leading_minors().iter().all(|&m| m > 0.0)
    }

    /// `self * other` as a dense row-major matrix (the product of symmetric
    /// matrices is not symmetric in general).
    pub fn matmul_dense(&self, other: &SymMatrix) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| self.get(i, k) * other.get(k, j)).sum();
            }
        }
        out
    }
}

/// Determinant of a dense row-major `n × n` matrix.
pub(crate) fn det_dense(a: &[f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        4 => {
            // Laplace along the first row.
            let mut sum = 0.0;
            for j in 0..4 {
                if a[j] == 0.0 {
                    continue;
                }
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sum += sign * a[j] * det_dense(&minor_dense(a, 4, 0, j), 3);
            }
            sum
        }
        _ => det_bareiss(a, n),
    }
}

/// Fraction-free Gaussian elimination with row pivoting.
fn det_bareiss(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut sign = 1.0;
    let mut prev = 1.0;
    for k in 0..n - 1 {
        let pivot_row = (k..n)
            .max_by(|&x, &y| m[x * n + k].abs().total_cmp(&m[y * n + k].abs()))
            .unwrap_or(k);
        if m[pivot_row * n + k] == 0.0 {
            return 0.0;
        }
        if pivot_row != k {
            for c in 0..n {
                m.swap(k * n + c, pivot_row * n + c);
            }
            sign = -sign;
        }
        let pivot = m[k * n + k];
        for i in k + 1..n {
            for j in k + 1..n {
                m[i * n + j] = (m[i * n + j] * pivot - m[i * n + k] * m[k * n + j]) / prev;
            }
        }
        prev = pivot;
    }
    sign * m[n * n - 1]
}

fn minor_dense(a: &[f64], n: usize, row: usize, col: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for i in (0..n).filter(|&i| i != row) {
        for j in (0..n).filter(|&j| j != col) {
            out.push(a[i * n + j]);
        }
    }
    out
}

fn cofactor_dense(a: &[f64], n: usize, i: usize, j: usize) -> f64 {
    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
    sign * det_dense(&minor_dense(a, n, i, j), n - 1)
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    p: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<MatrixJson> for SymMatrix {
    type Error = Error;

    fn try_from(raw: MatrixJson) -> Result<Self> {
        if raw.entries.len() != raw.p {
            return usage(format!(
                "matrix declares p = {} but has {} rows",
                raw.p,
                raw.entries.len()
            ));
        }
        SymMatrix::from_rows(&raw.entries)
    }
}

impl From<SymMatrix> for MatrixJson {
    fn from(m: SymMatrix) -> Self {
        MatrixJson {
            p: m.dim,
            entries: m.to_rows(),
        }
    }
}

/// A positive definite sample covariance matrix `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrix", into = "SymMatrix")]
pub struct SampleCovariance(SymMatrix);

impl SampleCovariance {
    pub fn new(m: SymMatrix) -> Result<Self> {
        let minors = m.leading_minors();
        if let Some(k) = minors.iter().position(|&v| !(v > 0.0)) {
            return usage(format!(
                "covariance matrix is not positive definite: leading minor of order {} is {:e}",
                k + 1,
                minors[k]
            ));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

impl TryFrom<SymMatrix> for SampleCovariance {
    type Error = Error;
    fn try_from(m: SymMatrix) -> Result<Self> {
        SampleCovariance::new(m)
    }
}

impl From<SampleCovariance> for SymMatrix {
    fn from(c: SampleCovariance) -> Self {
        c.0
    }
}

/// Number of strictly-upper-triangular correlations for `q` factors.
pub fn num_correlations(q: usize) -> usize {
    q * q.saturating_sub(1) / 2
}

/// Parameter point `(τ, β, R)` of the factor model.
///
/// `tau` holds signed square roots of the uniquenesses, `beta` is the `q × p`
/// loading matrix in row-major order and `r` the strict upper triangle of the
/// correlation matrix `R` (row-major; empty when `q = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsJson", into = "ParamsJson")]
pub struct FactorParams {
    p: usize,
    q: usize,
    tau: Vec<f64>,
    beta: Vec<f64>,
    r: Vec<f64>,
}

impl FactorParams {
    pub fn new(p: usize, q: usize, tau: Vec<f64>, beta: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        check_shape(p, q)?;
        if tau.len() != p {
            return usage(format!("tau has length {}, expected p = {p}", tau.len()));
        }
        if beta.len() != p * q {
            return usage(format!(
                "beta has {} entries, expected q*p = {}",
                beta.len(),
                p * q
            ));
        }
        if r.len() != num_correlations(q) {
            return usage(format!(
                "r has length {}, expected q(q-1)/2 = {}",
                r.len(),
                num_correlations(q)
            ));
        }
        if let Some(v) = tau.iter().chain(&beta).chain(&r).find(|v| !v.is_finite()) {
            return usage(format!("parameter value {v} is not finite"));
        }
        if let Some(v) = r.iter().find(|v| v.abs() > 1.0) {
            return usage(format!("correlation {v} has magnitude above 1"));
        }
        Ok(Self { p, q, tau, beta, r })
    }

    /// Builds from `beta` given as `q` rows of length `p`.
    pub fn from_rows(tau: Vec<f64>, beta_rows: &[Vec<f64>], r: Vec<f64>) -> Result<Self> {
        let p = tau.len();
        let q = beta_rows.len();
        if let Some(row) = beta_rows.iter().find(|row| row.len() != p) {
            return usage(format!(
                "beta row has {} entries, expected p = {p}",
                row.len()
            ));
        }
        Self::new(p, q, tau, beta_rows.concat(), r)
    }

    /// Rebuilds from the flat `(τ, β, r)` layout used by [`FactorParams::to_vec`].
    pub fn from_vec(p: usize, q: usize, v: &[f64]) -> Result<Self> {
        let nr = num_correlations(q);
        if v.len() != p + p * q + nr {
            return usage(format!(
                "flat parameter vector has length {}, expected {}",
                v.len(),
                p + p * q + nr
            ));
        }
        Self::new(
            p,
            q,
            v[..p].to_vec(),
            v[p..p + p * q].to_vec(),
            v[p + p * q..].to_vec(),
        )
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.tau);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.r);
        v
    }

    /// Number of free parameters `p + pq + q(q-1)/2`.
    pub fn len(&self) -> usize {
        self.p + self.p * self.q + self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn beta_flat(&self) -> &[f64] {
        &self.beta
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    #[inline]
    pub fn beta(&self, k: usize, l: usize) -> f64 {
        self.beta[k * self.p + l]
    }

    pub fn beta_rows(&self) -> Vec<Vec<f64>> {
        self.beta.chunks(self.p).map(|c| c.to_vec()).collect()
    }

    /// Entry `R(k, l)` of the implied correlation matrix (unit diagonal).
    pub fn correlation(&self, k: usize, l: usize) -> f64 {
        match k.cmp(&l) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => self.r[corr_index(self.q, k, l)],
            std::cmp::Ordering::Greater => self.r[corr_index(self.q, l, k)],
        }
    }

    /// `(Rβ)(k, j)`.
    pub fn r_beta(&self, k: usize, j: usize) -> f64 {
        (0..self.q)
            .map(|m| self.correlation(k, m) * self.beta(m, j))
            .sum()
    }

    pub fn correlation_matrix(&self) -> Result<SymMatrix> {
        SymMatrix::from_fn(self.q, |k, l| self.correlation(k, l))
    }
}

/// Position of `r_kl` (`k < l`) in the row-major strict upper triangle.
pub fn corr_index(q: usize, k: usize, l: usize) -> usize {
    debug_assert!(k < l && l < q);
    k * (2 * q - k - 1) / 2 + (l - k - 1)
}

/// The `(k, l)` pairs, `k < l`, in storage order.
pub fn corr_pairs(q: usize) -> Vec<(usize, usize)> {
    (0..q)
        .flat_map(|k| ((k + 1)..q).map(move |l| (k, l)))
        .collect()
}

fn check_shape(p: usize, q: usize) -> Result<()> {
    if p < 2 {
        return usage(format!("p must be at least 2, got {p}"));
    }
    if q < 1 || q >= p {
        return usage(format!("q must satisfy 1 <= q < p, got q = {q}, p = {p}"));
    }
    if p > MAX_DIM {
        return usage(format!("p = {p} exceeds the supported maximum {MAX_DIM}"));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    p: usize,
    q: usize,
    tau: Vec<f64>,
    beta: Vec<Vec<f64>>,
    r: Vec<f64>,
}

impl TryFrom<ParamsJson> for FactorParams {
    type Error = Error;

    fn try_from(raw: ParamsJson) -> Result<Self> {
        if raw.beta.len() != raw.q {
            return usage(format!(
                "params declare q = {} but beta has {} rows",
                raw.q,
                raw.beta.len()
            ));
        }
        if raw.tau.len() != raw.p {
            return usage(format!(
                "params declare p = {} but tau has length {}",
                raw.p,
                raw.tau.len()
            ));
        }
        FactorParams::from_rows(raw.tau, &raw.beta, raw.r)
    }
}

impl From<FactorParams> for ParamsJson {
    fn from(fp: FactorParams) -> Self {
        ParamsJson {
            p: fp.p,
            q: fp.q,
            beta: fp.beta_rows(),
            tau: fp.tau,
            r: fp.r,
        }
    }
}

/// Partial derivatives of the objective, laid out like [`FactorParams`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientBundle {
    pub dtau: Vec<f64>,
    /// `q × p`, row-major.
    pub dbeta: Vec<f64>,
    pub dr: Vec<f64>,
}

impl GradientBundle {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.dtau.clone();
        v.extend_from_slice(&self.dbeta);
        v.extend_from_slice(&self.dr);
        v
    }

    pub fn from_vec(p: usize, q: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), p + p * q + num_correlations(q));
        Self {
            dtau: v[..p].to_vec(),
            dbeta: v[p..p + p * q].to_vec(),
            dr: v[p + p * q..].to_vec(),
        }
    }

    pub fn inf_norm(&self) -> f64 {
        self.dtau
            .iter()
            .chain(&self.dbeta)
            .chain(&self.dr)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `Σ = diag(τ²) + β'Rβ`.
pub fn model_covariance(params: &FactorParams) -> SymMatrix {
    let (p, q) = (params.p, params.q);
    let mut sigma = SymMatrix::zeros(p).expect("p validated by FactorParams");
    for j in 0..p {
        for i in 0..=j {
            let mut s = 0.0;
            for m in 0..q {
                s += params.beta(m, i) * params.r_beta(m, j);
            }
            if i == j {
                s += params.tau[i] * params.tau[i];
            }
            sigma.set(i, j, s);
        }
    }
    sigma
}

/// Draws `n` observations from the factor model and returns their centered sample
/// covariance (divisor `n`).
///
/// Each row is `Y_i = Z_i β + ε_i` with `Z_i ~ N_q(0, R)` and `ε_i ~ N_p(0, diag(τ²))`.
pub fn simulate_covariance(params: &FactorParams, n: usize, seed: u64) -> Result<SampleCovariance> {
    let (p, q) = (params.p, params.q);
    if n <= p {
        return usage(format!("sample size n = {n} must exceed p = {p}"));
    }
    let chol = cholesky_lower(&params.correlation_matrix()?).ok_or_else(|| {
        Error::Usage("correlation matrix R is not positive definite".into())
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![0.0; n * p];
    let mut u = vec![0.0; q];
    let mut z = vec![0.0; q];
    for row in rows.chunks_mut(p) {
        for ui in u.iter_mut() {
            *ui = StandardNormal.sample(&mut rng);
        }
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = (0..=k).map(|m| chol[k * q + m] * u[m]).sum();
        }
        for (j, y) in row.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *y = (0..q).map(|k| z[k] * params.beta(k, j)).sum::<f64>() + params.tau[j] * eps;
        }
    }

    let mut mean = vec![0.0; p];
    for row in rows.chunks(p) {
        for (m, y) in mean.iter_mut().zip(row) {
            *m += y;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let cov = SymMatrix::from_fn(p, |i, j| {
        rows.chunks(p)
            .map(|row| (row[i] - mean[i]) * (row[j] - mean[j]))
            .sum::<f64>()
            / n as f64
    })?;
    SampleCovariance::new(cov)
}

/// Lower Cholesky factor, row-major; `None` if not positive definite.
fn cholesky_lower(a: &SymMatrix) -> Option<Vec<f64>> {
    let n = a.dim();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a.get(i, j) - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}
