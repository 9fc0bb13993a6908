//! Multi-start steepest descent with Armijo backtracking.
//!
//! Trial points whose model covariance leaves the positive definite cone (or
//! whose correlations leave `[-1, 1]`) count as `f = +∞`, so the line search
//! backs off until it lands inside.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::likelihood::{gradient, is_feasible, objective, random_feasible_point, EvalPoint};
use crate::matcore::{FactorParams, SampleCovariance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_init: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub min_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            grad_tol: 1e-9,
            step_init: 1.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            min_step: 1e-14,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_tol, self.step_init, self.armijo_c, self.min_step];
        if self.max_iters == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return usage("solver options must all be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return usage(format!("backtrack factor {} must lie in (0, 1)", self.backtrack));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub params: FactorParams,
    pub f: f64,
    pub grad_inf: f64,
    pub iters: usize,
    pub converged: bool,
    pub termination: Termination,
    pub start_index: usize,
    /// Objective after every accepted step, starting with the initial value.
    #[serde(skip)]
    pub f_trace: Vec<f64>,
}

fn trial_value(c: &SampleCovariance, p: usize, q: usize, x: &[f64]) -> f64 {
    let Ok(fp) = FactorParams::from_vec(p, q, x) else {
        return f64::INFINITY;
    };
    if !is_feasible(&fp) {
        return f64::INFINITY;
    }
    objective(&EvalPoint { c, params: &fp }).unwrap_or(f64::INFINITY)
}

pub fn minimize(c: &SampleCovariance, init: &FactorParams, opts: &SolveOptions) -> Result<SolveResult> {
    opts.validate()?;
    let pt = EvalPoint::new(c, init)?;
    if !is_feasible(init) {
        return usage("initial point is infeasible: model covariance is not positive definite");
    }
    let (p, q) = (init.p(), init.q());
    let mut x = init.to_vec();
    let mut f = objective(&pt)?;
    let mut g = gradient(&pt)?.to_vec();
    let mut trace = vec![f];
    let mut iters = 0;

    let termination = loop {
        let grad_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_inf <= opts.grad_tol {
            break Termination::Converged;
        }
        if iters >= opts.max_iters {
            break Termination::MaxIters;
        }
        let g_sq: f64 = g.iter().map(|v| v * v).sum();
        let mut step = opts.step_init;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let ft = trial_value(c, p, q, &trial);
            if ft <= f - opts.armijo_c * step * g_sq {
                break Some((trial, ft));
            }
            step *= opts.backtrack;
            if step < opts.min_step {
                break None;
            }
        };
        let Some((next, fnext)) = accepted else {
            break Termination::StepUnderflow;
        };
        x = next;
        f = fnext;
        let params = FactorParams::from_vec(p, q, &x)?;
        g = gradient(&EvalPoint { c, params: &params })?.to_vec();
        trace.push(f);
        iters += 1;
    };

    let grad_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(SolveResult {
        params: FactorParams::from_vec(p, q, &x)?,
        f,
        grad_inf,
        iters,
        converged: termination == Termination::Converged,
        termination,
        start_index: 0,
        f_trace: trace,
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Runs `n_starts` descents from seeded random feasible points (start `k` uses
/// seed `seed + k`) and returns them sorted by objective, then parameters.
///
/// Starts run on the current rayon pool; the output does not depend on the
/// number of threads.
pub fn multi_start(
    c: &SampleCovariance,
    q: usize,
    n_starts: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<Vec<SolveResult>> {
    if n_starts == 0 {
        return usage("need at least one start");
    }
    let p = c.dim();
    let mut results = (0..n_starts)
        .into_par_iter()
        .map(|k| {
            let init = random_feasible_point(p, q, seed.wrapping_add(k as u64))?;
            let mut res = minimize(c, &init, opts)?;
            res.start_index = k;
            Ok(res)
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| {
        a.f.total_cmp(&b.f)
            .then_with(|| lex_cmp(&a.params.to_vec(), &b.params.to_vec()))
            .then_with(|| a.start_index.cmp(&b.start_index))
    });
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionCluster {
    pub representative: FactorParams,
    /// `start_index` of every member.
    pub members: Vec<usize>,
    pub f: f64,
    /// Another cluster reaches the same objective value at distinct parameters.
    pub is_ridge: bool,
}

fn inf_distance(a: &FactorParams, b: &FactorParams) -> f64 {
    a.to_vec()
        .iter()
        .zip(b.to_vec())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Greedy clustering of converged results by parameter ∞-distance.
pub fn cluster_solutions(results: &[SolveResult], param_tol: f64, f_tol: f64) -> Vec<SolutionCluster> {
    let mut clusters: Vec<SolutionCluster> = Vec::new();
    for res in results.iter().filter(|r| r.converged) {
        match clusters
            .iter_mut()
            .find(|cl| inf_distance(&cl.representative, &res.params) <= param_tol)
        {
            Some(cl) => cl.members.push(res.start_index),
            None => clusters.push(SolutionCluster {
                representative: res.params.clone(),
                members: vec![res.start_index],
                f: res.f,
                is_ridge: false,
            }),
        }
    }
    let values: Vec<f64> = clusters.iter().map(|cl| cl.f).collect();
    for (i, cl) in clusters.iter_mut().enumerate() {
        cl.is_ridge = values
            .iter()
            .enumerate()
            .any(|(j, v)| j != i && (v - cl.f).abs() <= f_tol);
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::model_covariance;
    use crate::variety::{curve_point, isolated_points, verify_critical};

    fn c21() -> SampleCovariance {
        SampleCovariance::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap()
    }

    #[test]
    fn curve_start_converges_immediately() {
        let c = c21();
        let cp = curve_point(&c, 1.2).unwrap();
        let res = minimize(&c, &cp.params, &SolveOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iters, 0);
        assert_eq!(res.params, cp.params);
    }

    #[test]
    fn reaches_ridge_value_from_fixed_start() {
        let c = c21();
        let init = FactorParams::new(2, 1, vec![1.2, 0.9], vec![0.8, 0.4], vec![]).unwrap();
        let res = minimize(&c, &init, &SolveOptions::default()).unwrap();
        assert!(res.converged, "{:?} after {} iters", res.termination, res.iters);
        assert!((res.f - (3f64.ln() + 2.0)).abs() <= 1e-8);
        assert!(res.f_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(res.f_trace.len(), res.iters + 1);
    }

    #[test]
    fn infeasible_init_and_bad_options_rejected() {
        let c = c21();
        let singular = FactorParams::new(2, 1, vec![0.0, 0.0], vec![1.0, 1.0], vec![]).unwrap();
        assert!(minimize(&c, &singular, &SolveOptions::default()).is_err());
        let ok = FactorParams::new(2, 1, vec![1.0, 1.0], vec![0.0, 0.0], vec![]).unwrap();
        let bad = SolveOptions {
            backtrack: 1.0,
            ..SolveOptions::default()
        };
        assert!(minimize(&c, &ok, &bad).is_err());
        assert!(multi_start(&c, 1, 0, 1, &SolveOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let c = c21();
        let init = FactorParams::new(2, 1, vec![1.2, 0.9], vec![0.8, 0.4], vec![]).unwrap();
        let opts = SolveOptions {
            max_iters: 2,
            ..SolveOptions::default()
        };
        let res = minimize(&c, &init, &opts).unwrap();
        assert_eq!(res.termination, Termination::MaxIters);
        assert!(!res.converged);
        assert_eq!(res.iters, 2);
    }

    #[test]
    fn multi_start_finds_distinct_ridge_points() {
        let c = c21();
        let opts = SolveOptions::default();
        let results = multi_start(&c, 1, 20, 7, &opts).unwrap();
        assert_eq!(results.len(), 20);
        let converged: Vec<_> = results.iter().filter(|r| r.converged).collect();
        assert!(converged.len() >= 2);
        let isolated = isolated_points(&c).unwrap();
        for r in &converged {
            assert!(verify_critical(&c, &r.params, 1e-8).unwrap().pass);
            let on_ridge = model_covariance(&r.params).max_abs_diff(c.matrix()) <= 1e-6;
            let near_iso = isolated.iter().any(|iso| inf_distance(iso, &r.params) <= 1e-6);
            assert!(on_ridge || near_iso);
            assert!(r.f_trace.windows(2).all(|w| w[1] <= w[0]));
        }
        let clusters = cluster_solutions(&results, 1e-4, 1e-8);
        assert!(clusters.iter().filter(|cl| cl.is_ridge).count() >= 2);
    }

    #[test]
    fn multi_start_is_deterministic_across_pools() {
        let c = SampleCovariance::from_rows(&[vec![1.5, 0.4], vec![0.4, 0.9]]).unwrap();
        let opts = SolveOptions::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| multi_start(&c, 1, 8, 3, &opts)).unwrap();
        let b = four.install(|| multi_start(&c, 1, 8, 3, &opts)).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn cluster_examples() {
        let c = c21();
        let cp = curve_point(&c, 1.0).unwrap();
        let res = minimize(&c, &cp.params, &SolveOptions::default()).unwrap();
        let dup = vec![res.clone(), SolveResult { start_index: 1, ..res.clone() }];
        let cl = cluster_solutions(&dup, 1e-6, 1e-8);
        assert_eq!(cl.len(), 1);
        assert_eq!(cl[0].members, vec![0, 1]);
        assert!(!cl[0].is_ridge);

        let other = minimize(&c, &curve_point(&c, 1.3).unwrap().params, &SolveOptions::default()).unwrap();
        let pair = vec![res.clone(), SolveResult { start_index: 1, ..other }];
        let cl = cluster_solutions(&pair, 1e-6, 1e-8);
        assert_eq!(cl.len(), 2);
        assert!(cl.iter().all(|c| c.is_ridge));
        assert_eq!(cluster_solutions(&pair, f64::INFINITY, 1e-8).len(), 1);
    }
}
