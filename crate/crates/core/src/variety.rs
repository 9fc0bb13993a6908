//! Explicit critical points of the two-variable, one-factor model and their
//! embeddings into larger models.
//!
//! For `p = 2, q = 1` every point of the curve
//!
//! ```text
//! β_11 = t,   β_12 = c_12 / t,   τ_1² = c_11 − t²,   τ_2² = c_22 − c_12² / t²
//! ```
//!
//! with `c_12²/c_22 ≤ t² ≤ c_11` reproduces `Σ = C` and is therefore critical.
//! The four points `β = 0, τ = (±√c_11, ±√c_22)` are the remaining isolated
//! critical points.

use serde::Serialize;

use crate::error::{usage, Error, Result};
use crate::likelihood::{gradient, objective, EvalPoint};
use crate::matcore::{
    model_covariance, num_correlations, FactorParams, GradientBundle, SampleCovariance, SymMatrix,
};

/// Shrink factor applied to both interval ends by [`sample_curve`].
pub const BOUNDARY_EPS: f64 = 1e-6;

/// Curve parameters with `|t|` below this are excluded when `c_12 = 0`.
pub const MIN_T: f64 = 1e-9;

/// Relative slack on the interval ends, so `t = √c_11` computed in floating
/// point still counts as feasible.
const ENDPOINT_SLACK: f64 = 8.0 * f64::EPSILON;

/// `t ∈ [−hi, −lo] ∪ [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibleSet {
    pub lo: f64,
    pub hi: f64,
    /// Set when `c_12 = 0`, where the lower end collapses to 0.
    pub degenerate: bool,
}

impl FeasibleSet {
    pub fn contains(&self, t: f64) -> bool {
        let a = t.abs();
        a >= self.lo * (1.0 - ENDPOINT_SLACK) && a <= self.hi * (1.0 + ENDPOINT_SLACK)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub params: FactorParams,
}

fn require_p2(c: &SampleCovariance) -> Result<()> {
    if c.dim() != 2 {
        return usage(format!("expected a 2×2 covariance, got dimension {}", c.dim()));
    }
    Ok(())
}

pub fn feasible_interval(c: &SampleCovariance) -> Result<FeasibleSet> {
    require_p2(c)?;
    let (c11, c12, c22) = (c.get(0, 0), c.get(0, 1), c.get(1, 1));
    Ok(FeasibleSet {
        lo: (c12 * c12 / c22).sqrt(),
        hi: c11.sqrt(),
        degenerate: c12 == 0.0,
    })
}

/// The curve point at parameter `t`, positive-τ branch.
pub fn curve_point(c: &SampleCovariance, t: f64) -> Result<CurvePoint> {
    let set = feasible_interval(c)?;
    if t == 0.0 {
        return Err(Error::Division("curve parameter t = 0 (β_12 = c_12/t)".into()));
    }
    if !set.contains(t) {
        return Err(Error::InfeasibleT {
            t,
            lo: set.lo,
            hi: set.hi,
        });
    }
    let (c11, c12, c22) = (c.get(0, 0), c.get(0, 1), c.get(1, 1));
    let snap = |v: f64, scale: f64| if v <= ENDPOINT_SLACK * scale { 0.0 } else { v };
    let tau1_sq = snap(c11 - t * t, c11);
    let tau2_sq = snap(c22 - c12 * c12 / (t * t), c22);
    let params = FactorParams::new(
        2,
        1,
        vec![tau1_sq.sqrt(), tau2_sq.sqrt()],
        vec![t, c12 / t],
        vec![],
    )?;
    Ok(CurvePoint { t, params })
}

/// `n` curve points with `t` equally spaced on `[lo(1+ε), hi(1−ε)]`; with
/// `mirrored` the negative branch `−t` follows.
pub fn sample_curve(c: &SampleCovariance, n: usize, mirrored: bool) -> Result<Vec<CurvePoint>> {
    if n < 2 {
        return usage(format!("need at least 2 curve samples, got {n}"));
    }
    let set = feasible_interval(c)?;
    let mut lo = set.lo * (1.0 + BOUNDARY_EPS);
    if set.degenerate {
        lo = lo.max(MIN_T);
    }
    let hi = set.hi * (1.0 - BOUNDARY_EPS);
    if !(lo < hi) {
        return usage(format!(
            "feasible interval [{}, {}] is degenerate",
            set.lo, set.hi
        ));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let ts: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect();
    let mut out = ts
        .iter()
        .map(|&t| curve_point(c, t))
        .collect::<Result<Vec<_>>>()?;
    if mirrored {
        for &t in &ts {
            out.push(curve_point(c, -t)?);
        }
    }
    Ok(out)
}

/// `β = 0, τ = (±√c_11, ±√c_22)` in the order `(+,+), (+,−), (−,+), (−,−)`.
pub fn isolated_points(c: &SampleCovariance) -> Result<[FactorParams; 4]> {
    require_p2(c)?;
    let (a, b) = (c.get(0, 0).sqrt(), c.get(1, 1).sqrt());
    let mk = |s1: f64, s2: f64| FactorParams::new(2, 1, vec![s1 * a, s2 * b], vec![0.0, 0.0], vec![]);
    Ok([mk(1.0, 1.0)?, mk(1.0, -1.0)?, mk(-1.0, 1.0)?, mk(-1.0, -1.0)?])
}

/// Block-diagonal covariance with `[[c11, c12], [c12, c22]]` on top and
/// `diag(d_3, …, d_p)` below. An empty `extra` means `d_k = 1`.
pub fn witness_covariance(
    p: usize,
    q: usize,
    c11: f64,
    c12: f64,
    c22: f64,
    extra: &[f64],
) -> Result<SampleCovariance> {
    if p < 2 || q < 1 || q >= p {
        return usage(format!("witness needs p >= 2 and 1 <= q < p, got p = {p}, q = {q}"));
    }
    if !(c11 > 0.0 && c11 * c22 - c12 * c12 > 0.0) {
        return usage(format!(
            "top block [[{c11}, {c12}], [{c12}, {c22}]] is not positive definite"
        ));
    }
    let tail: Vec<f64> = if extra.is_empty() {
        vec![1.0; p - 2]
    } else if extra.len() == p - 2 {
        extra.to_vec()
    } else {
        return usage(format!("expected {} trailing diagonal entries, got {}", p - 2, extra.len()));
    };
    if let Some(d) = tail.iter().find(|d| !(**d > 0.0)) {
        return usage(format!("trailing diagonal entry {d} must be positive"));
    }
    let m = SymMatrix::from_fn(p, |i, j| match (i, j) {
        (0, 0) => c11,
        (0, 1) => c12,
        (1, 1) => c22,
        (i, j) if i == j => tail[i - 2],
        _ => 0.0,
    })?;
    SampleCovariance::new(m)
}

/// Lifts the curve point at `t` of the top 2×2 block into a `(p, q)` model:
/// every other loading zero, `τ_k = √c_kk` for `k ≥ 3`, all correlations zero.
pub fn embed_curve(p: usize, q: usize, c: &SampleCovariance, t: f64) -> Result<FactorParams> {
    if c.dim() != p {
        return usage(format!("witness has dimension {}, expected p = {p}", c.dim()));
    }
    for i in 0..p {
        for j in 0..p {
            if i != j && (i >= 2 || j >= 2) && c.get(i, j) != 0.0 {
                return usage("covariance is not block diagonal beyond the top 2×2 block");
            }
        }
    }
    let block = SampleCovariance::from_rows(&[
        vec![c.get(0, 0), c.get(0, 1)],
        vec![c.get(1, 0), c.get(1, 1)],
    ])?;
    let cp = curve_point(&block, t)?;
    let mut tau = cp.params.tau().to_vec();
    tau.extend((2..p).map(|k| c.get(k, k).sqrt()));
    let mut beta = vec![0.0; q * p];
    beta[0] = cp.params.beta(0, 0);
    beta[1] = cp.params.beta(0, 1);
    FactorParams::new(p, q, tau, beta, vec![0.0; num_correlations(q)])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalReport {
    pub grad_inf: f64,
    pub f: f64,
    /// `1 / det Σ`.
    pub gamma: f64,
    pub pass: bool,
    pub gradient: GradientBundle,
}

/// Residual check for membership in the critical set: passes iff the gradient
/// ∞-norm is at most `tol`.
pub fn verify_critical(c: &SampleCovariance, params: &FactorParams, tol: f64) -> Result<CriticalReport> {
    let pt = EvalPoint::new(c, params)?;
    let g = gradient(&pt)?;
    let f = objective(&pt)?;
    let grad_inf = g.inf_norm();
    Ok(CriticalReport {
        grad_inf,
        f,
        gamma: 1.0 / model_covariance(params).det(),
        pass: grad_inf <= tol,
        gradient: g,
    })
}

/// Largest pairwise gap in objective value across `points`.
pub fn ridge_spread(points: &[FactorParams], c: &SampleCovariance) -> Result<f64> {
    if points.len() < 2 {
        return usage("ridge spread needs at least two points");
    }
    let values = points
        .iter()
        .map(|fp| objective(&EvalPoint::new(c, fp)?))
        .collect::<Result<Vec<_>>>()?;
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c21() -> SampleCovariance {
        SampleCovariance::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()
    }

    #[test]
    fn feasible_interval_examples() {
        let s = feasible_interval(&c21()).unwrap();
        assert!((s.lo - 1.0 / 2f64.sqrt()).abs() <= 1e-15);
        assert!((s.hi - 2f64.sqrt()).abs() <= 1e-15);
        assert!(!s.degenerate);
        assert!(s.contains(-1.0) && s.contains(1.0) && !s.contains(0.5) && !s.contains(1.5));

        let id = SampleCovariance::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = feasible_interval(&id).unwrap();
        assert_eq!((s.lo, s.hi, s.degenerate), (0.0, 1.0, true));
    }

    #[test]
    fn interval_is_nondegenerate_for_pd_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let c11: f64 = rng.random_range(0.1..5.0);
            let c22: f64 = rng.random_range(0.1..5.0);
            let rho: f64 = rng.random_range(-0.99..0.99);
            let c12 = rho * (c11 * c22).sqrt();
            let c = SampleCovariance::from_rows(&[vec![c11, c12], vec![c12, c22]]).unwrap();
            let s = feasible_interval(&c).unwrap();
            assert!(s.lo < s.hi);
        }
    }

    #[test]
    fn curve_point_examples() {
        let cp = curve_point(&c21(), 1.0).unwrap();
        assert_eq!(cp.params.beta_flat(), &[1.0, 1.0]);
        assert_eq!(cp.params.tau(), &[1.0, 1.0]);

        let s2 = 2f64.sqrt();
        let cp = curve_point(&c21(), s2).unwrap();
        assert_eq!(cp.params.tau()[0], 0.0);
        assert!((cp.params.tau()[1] - 1.5f64.sqrt()).abs() < 1e-15);
        assert!((cp.params.beta(0, 1) - 1.0 / s2).abs() < 1e-15);
    }

    #[test]
    fn curve_point_errors() {
        assert!(matches!(curve_point(&c21(), 0.0), Err(Error::Division(_))));
        assert!(matches!(curve_point(&c21(), 0.5), Err(Error::InfeasibleT { .. })));
        assert!(matches!(curve_point(&c21(), 1.5), Err(Error::InfeasibleT { .. })));
    }

    #[test]
    fn endpoint_degeneracy() {
        let c = SampleCovariance::from_rows(&[vec![3.0, 1.2], vec![1.2, 2.0]]).unwrap();
        let s = feasible_interval(&c).unwrap();
        assert_eq!(curve_point(&c, s.hi).unwrap().params.tau()[0], 0.0);
        assert_eq!(curve_point(&c, s.lo).unwrap().params.tau()[1], 0.0);
        assert_eq!(curve_point(&c, -s.hi).unwrap().params.tau()[0], 0.0);
    }

    #[test]
    fn reconstruction_and_sign_symmetry() {
        let c = SampleCovariance::from_rows(&[vec![1.7, -0.6], vec![-0.6, 0.9]]).unwrap();
        for cp in sample_curve(&c, 40, false).unwrap() {
            assert!(model_covariance(&cp.params).max_abs_diff(c.matrix()) <= 1e-14);
            let neg = curve_point(&c, -cp.t).unwrap();
            let flipped: Vec<f64> = cp.params.beta_flat().iter().map(|b| -b).collect();
            assert_eq!(neg.params.beta_flat(), flipped.as_slice());
            assert_eq!(neg.params.tau(), cp.params.tau());
            let f = |fp: &FactorParams| objective(&EvalPoint::new(&c, fp).unwrap()).unwrap();
            assert!((f(&neg.params) - f(&cp.params)).abs() < 1e-14);
        }
    }

    #[test]
    fn sample_curve_endpoints_and_mirror() {
        let c = c21();
        let s = feasible_interval(&c).unwrap();
        let pts = sample_curve(&c, 2, false).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].t, s.lo * (1.0 + BOUNDARY_EPS));
        assert_eq!(pts[1].t, s.hi * (1.0 - BOUNDARY_EPS));
        let both = sample_curve(&c, 5, true).unwrap();
        assert_eq!(both.len(), 10);
        assert_eq!(both[7].t, -both[2].t);
        assert!(sample_curve(&c, 1, false).is_err());
    }

    #[test]
    fn sample_curve_degenerate_c12_zero() {
        let c = SampleCovariance::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let pts = sample_curve(&c, 10, false).unwrap();
        assert!(pts[0].t >= MIN_T);
        for cp in &pts {
            assert!(verify_critical(&c, &cp.params, 1e-8).unwrap().pass);
        }
    }

    #[test]
    fn sampled_points_are_critical_on_a_flat_ridge() {
        let c = c21();
        let pts = sample_curve(&c, 50, true).unwrap();
        for cp in &pts {
            let rep = verify_critical(&c, &cp.params, 1e-8).unwrap();
            assert!(rep.pass, "t = {}: grad {}", cp.t, rep.grad_inf);
            assert!((rep.gamma - 1.0 / 3.0).abs() < 1e-14);
        }
        let params: Vec<_> = pts.into_iter().map(|cp| cp.params).collect();
        assert!(ridge_spread(&params, &c).unwrap() <= 1e-10 * (3f64.ln() + 2.0));
    }

    #[test]
    fn isolated_points_example() {
        let c = c21();
        let s2 = 2f64.sqrt();
        let pts = isolated_points(&c).unwrap();
        let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
        for (fp, (a, b)) in pts.iter().zip(signs) {
            assert_eq!(fp.tau(), &[a * s2, b * s2]);
            assert_eq!(fp.beta_flat(), &[0.0, 0.0]);
            let rep = verify_critical(&c, fp, 1e-9).unwrap();
            assert!(rep.pass);
            assert!((rep.f - (4f64.ln() + 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn perturbed_curve_point_is_not_critical() {
        let c = c21();
        let cp = curve_point(&c, 1.1).unwrap();
        let mut tau = cp.params.tau().to_vec();
        tau[0] += 0.1;
        let moved = FactorParams::new(2, 1, tau, cp.params.beta_flat().to_vec(), vec![]).unwrap();
        assert!(!verify_critical(&c, &moved, 1e-8).unwrap().pass);
    }

    #[test]
    fn ridge_spread_examples() {
        let c = c21();
        let cp = curve_point(&c, 1.0).unwrap().params;
        let iso = isolated_points(&c).unwrap()[0].clone();
        let spread = ridge_spread(&[cp.clone(), iso], &c).unwrap();
        assert!((spread - (4f64.ln() - 3f64.ln())).abs() < 1e-14);
        assert!((spread - 0.2877).abs() < 1e-4);
        assert_eq!(ridge_spread(&[cp.clone(), cp.clone()], &c).unwrap(), 0.0);
        assert!(ridge_spread(&[cp], &c).is_err());
    }

    #[test]
    fn witness_examples() {
        let w = witness_covariance(3, 2, 2.0, 1.0, 2.0, &[1.0]).unwrap();
        assert_eq!(
            w.matrix().to_rows(),
            vec![vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]]
        );
        assert_eq!(witness_covariance(3, 2, 2.0, 1.0, 2.0, &[]).unwrap(), w);
        let w2 = witness_covariance(2, 1, 2.0, 1.0, 2.0, &[]).unwrap();
        assert_eq!(w2, c21());
        assert!(witness_covariance(3, 1, 1.0, 2.0, 1.0, &[]).is_err());
        assert!(witness_covariance(3, 1, 2.0, 1.0, 2.0, &[-1.0]).is_err());
        assert!(witness_covariance(3, 3, 2.0, 1.0, 2.0, &[]).is_err());
    }

    #[test]
    fn embed_curve_example() {
        let w = witness_covariance(3, 2, 2.0, 1.0, 2.0, &[1.0]).unwrap();
        let fp = embed_curve(3, 2, &w, 1.0).unwrap();
        assert_eq!(fp.beta_rows(), vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]]);
        assert_eq!(fp.tau(), &[1.0, 1.0, 1.0]);
        assert_eq!(fp.r(), &[0.0]);
        assert!(model_covariance(&fp).max_abs_diff(w.matrix()) <= 1e-14);
        assert!(embed_curve(3, 2, &w, 0.1).is_err());
    }

    #[test]
    fn embedded_points_are_critical_for_p4_q2() {
        let w = witness_covariance(4, 2, 1.5, -0.7, 2.5, &[0.8, 3.0]).unwrap();
        let block = SampleCovariance::from_rows(&[vec![1.5, -0.7], vec![-0.7, 2.5]]).unwrap();
        for cp in sample_curve(&block, 20, false).unwrap() {
            let fp = embed_curve(4, 2, &w, cp.t).unwrap();
            let rep = verify_critical(&w, &fp, 1e-8).unwrap();
            assert!(rep.pass, "t = {}: {}", cp.t, rep.grad_inf);
        }
    }
}
