//! The factor-analysis discrepancy `f = log det Σ + tr(C Σ⁻¹)` and its partial
//! derivatives.
//!
//! The gradients are written term for term in cofactor form: with
//! `Σ⁻¹ = Cof(Σ)ᵀ / det Σ`, every block is a polynomial in the cofactors divided
//! by `det Σ` or `det Σ²`. That is the same structure the likelihood-equation
//! system in [`crate::polysys`] clears into polynomials.
//!
//! The correlation block uses `∂Σ/∂r_kl = β_kᵀβ_l + β_lᵀβ_k`, which follows from
//! `β'Rβ` being linear in each off-diagonal `r_kl` (stored once, appearing twice
//! in `R`). A prefactor of `2 r_kl` in place of the constant is *not* the
//! derivative; the finite-difference tests pin the constant form.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matcore::{
    corr_pairs, model_covariance, num_correlations, FactorParams, GradientBundle,
    SampleCovariance, SymMatrix,
};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// A covariance `C` paired with a parameter point of the same dimension.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint<'a> {
    pub c: &'a SampleCovariance,
    pub params: &'a FactorParams,
}

impl<'a> EvalPoint<'a> {
    pub fn new(c: &'a SampleCovariance, params: &'a FactorParams) -> Result<Self> {
        if c.dim() != params.p() {
            return Err(Error::Usage(format!(
                "covariance has dimension {} but parameters have p = {}",
                c.dim(),
                params.p()
            )));
        }
        Ok(Self { c, params })
    }
}

/// `det Σ` and the full cofactor matrix of `Σ` at a point.
struct CofactorForm {
    p: usize,
    det: f64,
    /// Row-major `Cof_ij(Σ)`.
    cof: Vec<f64>,
}

impl CofactorForm {
    fn at(pt: &EvalPoint) -> Result<Self> {
        let sigma = model_covariance(pt.params);
        let det = sigma.det();
        let threshold = sigma.singularity_threshold();
        if !(det.abs() > threshold) {
            return Err(Error::Infeasible(format!(
                "model covariance is singular (det = {det:e})"
            )));
        }
        Ok(Self {
            p: sigma.dim(),
            det,
            cof: sigma.cofactor_matrix(),
        })
    }

    #[inline]
    fn cof(&self, i: usize, j: usize) -> f64 {
        self.cof[i * self.p + j]
    }

    /// Adjugate `adj_ij = Cof_ji`, row-major.
    fn adjugate(&self) -> Vec<f64> {
        let p = self.p;
        let mut adj = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                adj[i * p + j] = self.cof(j, i);
            }
        }
        adj
    }
}

fn dense(c: &SampleCovariance) -> Vec<f64> {
    c.matrix().to_rows().concat()
}

fn matmul(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..p {
                out[i * p + j] += aik * b[k * p + j];
            }
        }
    }
    out
}

fn trace(a: &[f64], p: usize) -> f64 {
    (0..p).map(|i| a[i * p + i]).sum()
}

/// `f(τ², β, R) = log det Σ + tr(C Σ⁻¹)`, `Σ = diag(τ²) + β'Rβ`.
pub fn objective(pt: &EvalPoint) -> Result<f64> {
    let sigma = model_covariance(pt.params);
    let (det, inv) = sigma
        .det_adjugate_inverse()
        .map_err(|e| Error::Infeasible(format!("model covariance: {e}")))?;
    if det <= 0.0 {
        return Err(Error::Infeasible(format!(
            "det of model covariance is {det:e}, log undefined"
        )));
    }
    let p = sigma.dim();
    let mut tr = 0.0;
    for i in 0..p {
        for j in 0..p {
            tr += pt.c.get(i, j) * inv.get(j, i);
        }
    }
    Ok(det.ln() + tr)
}

/// `∂f/∂τ_k = 2τ_k Cof_kk/det − 2τ_k det⁻² Σ_ij c_ij Cof_jk Cof_ki`.
pub fn grad_tau(pt: &EvalPoint) -> Result<Vec<f64>> {
    let form = CofactorForm::at(pt)?;
    Ok(grad_tau_with(pt, &form))
}

fn grad_tau_with(pt: &EvalPoint, form: &CofactorForm) -> Vec<f64> {
    let p = form.p;
    let det = form.det;
    let tau = pt.params.tau();
    (0..p)
        .map(|k| {
            let mut quad = 0.0;
            for i in 0..p {
                for j in 0..p {
                    quad += pt.c.get(i, j) * form.cof(j, k) * form.cof(k, i);
                }
            }
            2.0 * tau[k] * form.cof(k, k) / det - 2.0 * tau[k] * quad / (det * det)
        })
        .collect()
}

/// Perturbation `∂Σ/∂β_kl`: entry `(i,j)` is `δ_il (Rβ)_kj + δ_jl (Rβ)_ki`.
fn beta_direction(params: &FactorParams, k: usize, l: usize) -> Vec<f64> {
    let p = params.p();
    let mut d = vec![0.0; p * p];
    for j in 0..p {
        d[l * p + j] += params.r_beta(k, j);
    }
    for i in 0..p {
        d[i * p + l] += params.r_beta(k, i);
    }
    d
}

/// `∂f/∂β_kl` as a `q × p` row-major matrix.
pub fn grad_beta(pt: &EvalPoint) -> Result<Vec<f64>> {
    let form = CofactorForm::at(pt)?;
    Ok(grad_beta_with(pt, &form))
}

fn grad_beta_with(pt: &EvalPoint, form: &CofactorForm) -> Vec<f64> {
    let (p, q) = (pt.params.p(), pt.params.q());
    let det = form.det;
    let adj = form.adjugate();
    let c = dense(pt.c);
    let c_adj = matmul(&c, &adj, p);
    let mut out = Vec::with_capacity(p * q);
    for k in 0..q {
        for l in 0..p {
            let d = beta_direction(pt.params, k, l);
            // det⁻¹ Σ_ij Cof_ij D_ij
            let mut term1 = 0.0;
            for i in 0..p {
                for j in 0..p {
                    term1 += form.cof(i, j) * d[i * p + j];
                }
            }
            // tr(C Σ⁻¹ D Σ⁻¹) = det⁻² tr(C adj D adj)
            let term2 = trace(&matmul(&matmul(&c_adj, &d, p), &adj, p), p);
            out.push(term1 / det - term2 / (det * det));
        }
    }
    out
}

/// `∂Σ/∂r_kl`: entry `(i,j)` is `β_ki β_lj + β_li β_kj`.
fn correlation_direction(params: &FactorParams, k: usize, l: usize) -> Vec<f64> {
    let p = params.p();
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            m[i * p + j] =
                params.beta(k, i) * params.beta(l, j) + params.beta(l, i) * params.beta(k, j);
        }
    }
    m
}

/// `∂f/∂r_kl = tr[Σ⁻¹ M_kl (I − Σ⁻¹ C)]` for `k < l`, in storage order.
pub fn grad_r(pt: &EvalPoint) -> Result<Vec<f64>> {
    let form = CofactorForm::at(pt)?;
    Ok(grad_r_with(pt, &form))
}

fn grad_r_with(pt: &EvalPoint, form: &CofactorForm) -> Vec<f64> {
    let q = pt.params.q();
    if q < 2 {
        return Vec::new();
    }
    let p = form.p;
    let inv: Vec<f64> = form.adjugate().iter().map(|a| a / form.det).collect();
    let c = dense(pt.c);
    let mut resid = matmul(&inv, &c, p);
    for v in resid.iter_mut() {
        *v = -*v;
    }
    for i in 0..p {
        resid[i * p + i] += 1.0;
    }
    corr_pairs(q)
        .into_iter()
        .map(|(k, l)| {
            let m = correlation_direction(pt.params, k, l);
            trace(&matmul(&matmul(&inv, &m, p), &resid, p), p)
        })
        .collect()
}

/// All three analytic gradient blocks.
pub fn gradient(pt: &EvalPoint) -> Result<GradientBundle> {
    let form = CofactorForm::at(pt)?;
    Ok(GradientBundle {
        dtau: grad_tau_with(pt, &form),
        dbeta: grad_beta_with(pt, &form),
        dr: grad_r_with(pt, &form),
    })
}

/// Central-difference gradient over the flat `(τ, β, r)` coordinates.
///
/// When a perturbed point is infeasible the step for that coordinate is shrunk
/// once by a factor of ten before giving up.
pub fn fd_gradient(pt: &EvalPoint, h: f64) -> Result<GradientBundle> {
    let (p, q) = (pt.params.p(), pt.params.q());
    let x = pt.params.to_vec();
    let eval_at = |v: &[f64]| -> Result<f64> {
        let fp = FactorParams::from_vec(p, q, v)
            .map_err(|e| Error::Infeasible(format!("perturbed point: {e}")))?;
        objective(&EvalPoint { c: pt.c, params: &fp })
    };
    let central = |i: usize, step: f64| -> Result<f64> {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        Ok((eval_at(&xp)? - eval_at(&xm)?) / (2.0 * step))
    };
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let d = match central(i, h) {
            Ok(d) => d,
            Err(_) => central(i, h / 10.0)?,
        };
        g.push(d);
    }
    Ok(GradientBundle::from_vec(p, q, &g))
}

/// Draws τ_k ∈ U[0.5, 1.5], β_kl ∈ U[−1, 1], r_kl ∈ U[−0.5, 0.5], rejecting
/// draws whose model covariance is not positive definite.
pub fn random_feasible_params<R: Rng>(p: usize, q: usize, rng: &mut R) -> Result<FactorParams> {
    loop {
        let tau = (0..p).map(|_| rng.random_range(0.5..=1.5)).collect();
        let beta = (0..p * q).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let r = (0..num_correlations(q))
            .map(|_| rng.random_range(-0.5..=0.5))
            .collect();
        let fp = FactorParams::new(p, q, tau, beta, r)?;
        if model_covariance(&fp).is_positive_definite() {
            return Ok(fp);
        }
    }
}

/// Seeded convenience wrapper around [`random_feasible_params`].
pub fn random_feasible_point(p: usize, q: usize, seed: u64) -> Result<FactorParams> {
    random_feasible_params(p, q, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Whether `Σ` at `params` is positive definite and `f` is defined there.
pub fn is_feasible(params: &FactorParams) -> bool {
    let sigma: SymMatrix = model_covariance(params);
    sigma.is_positive_definite() && sigma.det() > sigma.singularity_threshold()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cov(rows: &[[f64; 2]]) -> SampleCovariance {
        SampleCovariance::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn params2(tau: [f64; 2], beta: [f64; 2]) -> FactorParams {
        FactorParams::new(2, 1, tau.to_vec(), beta.to_vec(), vec![]).unwrap()
    }

    fn random_cov(p: usize, rng: &mut ChaCha8Rng) -> SampleCovariance {
        let a: Vec<f64> = (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = SymMatrix::from_fn(p, |i, j| {
            (0..p).map(|k| a[i * p + k] * a[j * p + k]).sum::<f64>() / p as f64
                + if i == j { 0.5 } else { 0.0 }
        })
        .unwrap();
        SampleCovariance::new(m).unwrap()
    }

    #[test]
    fn objective_worked_examples() {
        let c = cov(&[[2.0, 1.0], [1.0, 2.0]]);
        let fp = params2([1.0, 1.0], [1.0, 1.0]);
        let f = objective(&EvalPoint::new(&c, &fp).unwrap()).unwrap();
        assert!((f - (3.0f64.ln() + 2.0)).abs() < 1e-14);
        assert!((f - 3.0986123).abs() < 1e-7);

        let id = cov(&[[1.0, 0.0], [0.0, 1.0]]);
        let fp = params2([1.0, 1.0], [0.0, 0.0]);
        assert_eq!(objective(&EvalPoint::new(&id, &fp).unwrap()).unwrap(), 2.0);

        let s2 = 2.0f64.sqrt();
        let fp = params2([s2, s2], [0.0, 0.0]);
        let f = objective(&EvalPoint::new(&c, &fp).unwrap()).unwrap();
        assert!((f - (4.0f64.ln() + 2.0)).abs() < 1e-14);
        assert!((f - 3.3862944).abs() < 1e-7);
    }

    #[test]
    fn objective_rejects_singular_sigma() {
        let c = cov(&[[2.0, 1.0], [1.0, 2.0]]);
        let fp = params2([0.0, 0.0], [1.0, 1.0]);
        let err = objective(&EvalPoint::new(&c, &fp).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        assert!(matches!(
            gradient(&EvalPoint::new(&c, &fp).unwrap()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let c = cov(&[[2.0, 1.0], [1.0, 2.0]]);
        let fp = FactorParams::new(3, 1, vec![1.0; 3], vec![0.0; 3], vec![]).unwrap();
        assert!(matches!(EvalPoint::new(&c, &fp), Err(Error::Usage(_))));
    }

    #[test]
    fn grad_tau_diagonal_sigma_example() {
        // Σ = diag(2, 1): ∂f/∂τ_k = 2τ_k(1/σ_kk − c_kk/σ_kk²) = (0, −2)
        let c = cov(&[[2.0, 1.0], [1.0, 2.0]]);
        let fp = params2([1.0, 1.0], [1.0, 0.0]);
        let pt = EvalPoint::new(&c, &fp).unwrap();
        let g = grad_tau(&pt).unwrap();
        assert!(g[0].abs() < 1e-15);
        assert!((g[1] + 2.0).abs() < 1e-15);
        let fd = fd_gradient(&pt, 1e-6).unwrap();
        assert!((fd.dtau[0] - g[0]).abs() < 1e-7);
        assert!((fd.dtau[1] - g[1]).abs() < 1e-7);
    }

    #[test]
    fn grad_beta_diagonal_sigma_example() {
        // W = Σ⁻¹ − Σ⁻¹CΣ⁻¹ = [[0, −½], [−½, −1]]; ∂f/∂β_1l = 2(Wβ)_l = (0, −1)
        let c = cov(&[[2.0, 1.0], [1.0, 2.0]]);
        let fp = params2([1.0, 1.0], [1.0, 0.0]);
        let pt = EvalPoint::new(&c, &fp).unwrap();
        let g = grad_beta(&pt).unwrap();
        assert!(g[0].abs() < 1e-15);
        assert!((g[1] + 1.0).abs() < 1e-15);
        let fd = fd_gradient(&pt, 1e-6).unwrap();
        assert!((fd.dbeta[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn gradient_vanishes_when_sigma_equals_c() {
        let c = cov(&[[2.0, 1.0], [1.0, 2.0]]);
        let fp = params2([1.0, 1.0], [1.0, 1.0]);
        let pt = EvalPoint::new(&c, &fp).unwrap();
        assert!(gradient(&pt).unwrap().inf_norm() < 1e-15);
        assert!(fd_gradient(&pt, FD_STEP).unwrap().inf_norm() < 1e-6);
    }

    #[test]
    fn zero_tau_and_zero_beta_cases() {
        let c = cov(&[[2.0, 0.3], [0.3, 1.0]]);
        let c3 = SampleCovariance::from_rows(&[
            vec![2.0, 0.3, 0.1],
            vec![0.3, 1.0, 0.2],
            vec![0.1, 0.2, 1.5],
        ])
        .unwrap();
        let fp = FactorParams::from_rows(
            vec![0.0, 0.0, 0.0],
            &[vec![1.0, 0.2, 0.3], vec![0.1, 1.0, -0.5]],
            vec![0.2],
        )
        .unwrap();
        // all τ zero: Σ = β'Rβ has rank q < p
        assert!(grad_tau(&EvalPoint::new(&c3, &fp).unwrap()).is_err());
        let fp = FactorParams::from_rows(
            vec![0.0, 0.7, 0.9],
            &[vec![1.0, 0.2, 0.3], vec![0.1, 1.0, -0.5]],
            vec![0.2],
        )
        .unwrap();
        // a single zero τ_k zeroes its own component
        let g = grad_tau(&EvalPoint::new(&c3, &fp).unwrap()).unwrap();
        assert_eq!(g[0], 0.0);

        let fp = params2([0.8, 1.3], [0.0, 0.0]);
        let pt = EvalPoint::new(&c, &fp).unwrap();
        assert!(grad_beta(&pt).unwrap().iter().all(|&v| v == 0.0));

        let fp = FactorParams::from_rows(vec![1.0, 1.0, 1.0], &[vec![0.0; 3], vec![0.0; 3]], vec![0.3])
            .unwrap();
        let g = grad_r(&EvalPoint::new(&c3, &fp).unwrap()).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn grad_r_empty_for_single_factor() {
        let c = cov(&[[2.0, 1.0], [1.0, 2.0]]);
        let fp = params2([1.1, 0.9], [0.4, -0.2]);
        assert!(grad_r(&EvalPoint::new(&c, &fp).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn grad_r_matches_central_differences_p3_q2() {
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        for _ in 0..20 {
            let c = random_cov(3, &mut rng);
            let fp = random_feasible_params(3, 2, &mut rng).unwrap();
            let pt = EvalPoint::new(&c, &fp).unwrap();
            let g = grad_r(&pt).unwrap();
            let fd = fd_gradient(&pt, 1e-5).unwrap();
            assert!(
                (g[0] - fd.dr[0]).abs() <= 1e-6 * g[0].abs().max(1.0),
                "analytic {} vs fd {}",
                g[0],
                fd.dr[0]
            );
        }
    }

    #[test]
    fn fd_error_shrinks_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = random_cov(3, &mut rng);
        let fp = random_feasible_params(3, 1, &mut rng).unwrap();
        let pt = EvalPoint::new(&c, &fp).unwrap();
        let exact = gradient(&pt).unwrap().to_vec();
        let err = |h: f64| -> f64 {
            let fd = fd_gradient(&pt, h).unwrap().to_vec();
            exact
                .iter()
                .zip(&fd)
                .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fd_shrinks_step_near_correlation_bound() {
        // r at 1 − 5e-6: the +h probe crosses |r| ≤ 1 but the shrunk step does not
        let c = SampleCovariance::from_rows(&[
            vec![2.0, 0.3, 0.1],
            vec![0.3, 1.0, 0.2],
            vec![0.1, 0.2, 1.5],
        ])
        .unwrap();
        let fp = FactorParams::from_rows(
            vec![1.0, 1.0, 1.0],
            &[vec![0.5, 0.2, 0.3], vec![0.1, 0.5, -0.5]],
            vec![1.0 - 5e-6],
        )
        .unwrap();
        let pt = EvalPoint::new(&c, &fp).unwrap();
        let fd = fd_gradient(&pt, 1e-5).unwrap();
        let g = grad_r(&pt).unwrap();
        assert!((fd.dr[0] - g[0]).abs() < 1e-6);

        let fp = FactorParams::from_rows(
            vec![1.0, 1.0, 1.0],
            &[vec![0.5, 0.2, 0.3], vec![0.1, 0.5, -0.5]],
            vec![1.0],
        )
        .unwrap();
        assert!(fd_gradient(&EvalPoint::new(&c, &fp).unwrap(), 1e-5).is_err());
    }

    #[test]
    fn random_points_are_feasible_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let fp = random_feasible_params(4, 2, &mut rng).unwrap();
            assert!(is_feasible(&fp));
            assert!(fp.tau().iter().all(|t| (0.5..=1.5).contains(t)));
            assert!(fp.beta_flat().iter().all(|b| (-1.0..=1.0).contains(b)));
            assert!(fp.r().iter().all(|r| (-0.5..=0.5).contains(r)));
        }
        assert_eq!(random_feasible_point(3, 2, 9).unwrap(), random_feasible_point(3, 2, 9).unwrap());
    }

    #[test]
    fn concurrent_evaluation_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let c = random_cov(4, &mut rng);
        let fp = random_feasible_params(4, 2, &mut rng).unwrap();
        let pt = EvalPoint::new(&c, &fp).unwrap();
        let reference = (objective(&pt).unwrap(), gradient(&pt).unwrap());
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..4)
                .map(|_| s.spawn(|| (objective(&pt).unwrap(), gradient(&pt).unwrap())))
                .collect();
            for h in handles {
                let got = h.join().unwrap();
                assert_eq!(got.0.to_bits(), reference.0.to_bits());
                assert_eq!(got.1, reference.1);
            }
        });
    }

    /// 2τ_k[(Σ⁻¹)_kk − (Σ⁻¹CΣ⁻¹)_kk], written independently of the cofactor form.
    fn grad_tau_inverse_form(c: &SampleCovariance, fp: &FactorParams) -> Vec<f64> {
        let sigma = model_covariance(fp);
        let (_, inv) = sigma.det_adjugate_inverse().unwrap();
        let p = sigma.dim();
        (0..p)
            .map(|k| {
                let mut sandwich = 0.0;
                for i in 0..p {
                    for j in 0..p {
                        sandwich += inv.get(k, i) * c.get(i, j) * inv.get(j, k);
                    }
                }
                2.0 * fp.tau()[k] * (inv.get(k, k) - sandwich)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tau_gradient_two_routes_agree(p in 2usize..=5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = rng.random_range(1..p);
            let c = random_cov(p, &mut rng);
            let fp = random_feasible_params(p, q, &mut rng).unwrap();
            let cof = grad_tau(&EvalPoint::new(&c, &fp).unwrap()).unwrap();
            let inv = grad_tau_inverse_form(&c, &fp);
            for (a, b) in cof.iter().zip(&inv) {
                prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
        }

        #[test]
        fn objective_invariant_under_sign_flips(seed in any::<u64>(), mask in 0u8..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_cov(3, &mut rng);
            let fp = random_feasible_params(3, 1, &mut rng).unwrap();
            let f0 = objective(&EvalPoint::new(&c, &fp).unwrap()).unwrap();
            let tau: Vec<f64> = fp.tau().iter().enumerate()
                .map(|(k, t)| if mask & (1 << k) != 0 { -t } else { *t }).collect();
            let beta: Vec<f64> = fp.beta_flat().iter().map(|b| -b).collect();
            let flipped = FactorParams::new(3, 1, tau, beta, vec![]).unwrap();
            let f1 = objective(&EvalPoint::new(&c, &flipped).unwrap()).unwrap();
            prop_assert!((f0 - f1).abs() <= 1e-13 * f0.abs().max(1.0));
        }

        #[test]
        fn objective_invariant_under_factor_sign_conjugation(seed in any::<u64>()) {
            // flipping β row 0 and the sign of every r_0l leaves β'Rβ unchanged
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_cov(4, &mut rng);
            let fp = random_feasible_params(4, 3, &mut rng).unwrap();
            let mut beta = fp.beta_flat().to_vec();
            for v in beta[..4].iter_mut() { *v = -*v; }
            let mut r = fp.r().to_vec();
            for (idx, (k, _)) in corr_pairs(3).into_iter().enumerate() {
                if k == 0 { r[idx] = -r[idx]; }
            }
            let flipped = FactorParams::new(4, 3, fp.tau().to_vec(), beta, r).unwrap();
            let f0 = objective(&EvalPoint::new(&c, &fp).unwrap()).unwrap();
            let f1 = objective(&EvalPoint::new(&c, &flipped).unwrap()).unwrap();
            prop_assert!((f0 - f1).abs() <= 1e-13 * f0.abs().max(1.0));
        }
    }
}
