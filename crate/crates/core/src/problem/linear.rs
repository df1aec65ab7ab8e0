//! Decentralized sparse linear regression.
//!
//! Client `m` observes `y = <x, w_m> + e` with `x = (1, x_2, ..., x_d)`,
//! `x_i ~ N(0, sigma1^2)` (optionally truncated to `|x_i| <= C`) and
//! `e ~ N(0, sigma2^2)`. The global optimum is the mean of the local optima,
//! which the generator makes exactly `s`-sparse.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::gossip::column_mean;
use crate::rng::{derive_rng, StreamRng, StreamRole};

fn default_bound() -> f64 {
    3.0
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub dim: usize,
    pub sparsity: usize,
    pub clients: usize,
    /// Feature scale.
    #[serde(default = "one")]
    pub sigma1: f64,
    /// Label noise scale.
    #[serde(default = "one")]
    pub sigma2: f64,
    /// Covariate bound `C`; always used for the theoretical constants.
    #[serde(default = "default_bound")]
    pub bound: f64,
    /// Sample covariates from the truncated law instead of the plain Gaussian.
    #[serde(default)]
    pub truncate: bool,
    /// Magnitude of the nonzero entries of the global optimum.
    #[serde(default = "one")]
    pub signal: f64,
    /// Scale of the client-specific deviations from the global optimum.
    #[serde(default = "one")]
    pub heterogeneity: f64,
}

impl LinearSpec {
    pub fn new(dim: usize, sparsity: usize, clients: usize) -> Self {
        Self {
            dim,
            sparsity,
            clients,
            sigma1: 1.0,
            sigma2: 1.0,
            bound: default_bound(),
            truncate: false,
            signal: 1.0,
            heterogeneity: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sparsity < 1 || self.dim <= self.sparsity {
            return Err(Error::InvalidConfig(format!(
                "linear problem needs d > s >= 1 (d = {}, s = {})",
                self.dim, self.sparsity
            )));
        }
        if self.clients < 2 {
            return Err(Error::InvalidConfig(format!(
                "linear problem needs at least 2 clients, got {}",
                self.clients
            )));
        }
        for (name, v) in [
            ("sigma1", self.sigma1),
            ("bound", self.bound),
            ("signal", self.signal),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("sigma2", self.sigma2), ("heterogeneity", self.heterogeneity)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LinearProblem {
    pub spec: LinearSpec,
    pub local_optima: Vec<Vec<f64>>,
    pub w_star: Vec<f64>,
    /// Variance of each non-intercept covariate; `sigma1^2` unless truncated.
    pub feature_var: f64,
}

/// Variance of `N(0, sigma^2)` conditioned on `|x| <= c`.
pub fn truncated_normal_variance(sigma: f64, c: f64) -> f64 {
    let a = c / sigma;
    let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = erf(a / std::f64::consts::SQRT_2);
    sigma * sigma * (1.0 - 2.0 * a * phi / mass)
}

/// One coordinate of the covariate law: `N(0, sigma^2)`, optionally rejected outside `[-c, c]`.
pub(crate) fn draw_feature(rng: &mut StreamRng, sigma: f64, c: f64, truncate: bool) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = sigma * z;
        if !truncate || x.abs() <= c {
            return x;
        }
    }
}

/// Magnitude in `[0.5, 1.5] * scale` with a random sign.
pub(crate) fn draw_signed(rng: &mut StreamRng, scale: f64) -> f64 {
    let mag = scale * rng.random_range(0.5..1.5);
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Generate the local optima. The first `s` coordinates (intercept included)
/// carry the global optimum; clients `1..M-1` get i.i.d. Gaussian deviations on
/// every coordinate and client `M` gets minus their sum, so the off-support
/// block of the mean cancels exactly.
pub fn gen_linear(spec: &LinearSpec, seed: u64) -> Result<LinearProblem> {
    spec.validate()?;
    let (d, s, m) = (spec.dim, spec.sparsity, spec.clients);
    let mut rng = derive_rng(seed, 0, 0, StreamRole::ProblemGen);
    let center: Vec<f64> = (0..s).map(|_| draw_signed(&mut rng, spec.signal)).collect();

    let mut deviations: Vec<Vec<f64>> = (0..m - 1)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.heterogeneity * z
                })
                .collect()
        })
        .collect();
    let mut last = vec![0.0; d];
    for dev in &deviations {
        for (l, v) in last.iter_mut().zip(dev) {
            *l += v;
        }
    }
    deviations.push(last.into_iter().map(|v| -v).collect());

    let local_optima: Vec<Vec<f64>> = deviations
        .into_iter()
        .map(|mut w| {
            for (i, c) in center.iter().enumerate() {
                w[i] += c;
            }
            w
        })
        .collect();
    let mut w_star = column_mean(&local_optima);
    // Off-support entries are exact zeros already (x + (-x) in the same summation
    // order); pin them anyway so the invariant holds for any summation strategy.
    debug_assert!(w_star[s..].iter().all(|v| *v == 0.0));
    w_star[s..].iter_mut().for_each(|v| *v = 0.0);

    let feature_var = if spec.truncate {
        truncated_normal_variance(spec.sigma1, spec.bound)
    } else {
        spec.sigma1 * spec.sigma1
    };
    Ok(LinearProblem {
        spec: spec.clone(),
        local_optima,
        w_star,
        feature_var,
    })
}

impl LinearProblem {
    /// Closed-form `f_m(w)`.
    pub fn local_loss(&self, m: usize, w: &[f64]) -> f64 {
        let wt = &self.local_optima[m];
        let d0 = w[0] - wt[0];
        let rest: f64 = w[1..]
            .iter()
            .zip(&wt[1..])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        0.5 * (self.spec.sigma2 * self.spec.sigma2 + d0 * d0 + self.feature_var * rest)
    }

    pub fn global_loss(&self, w: &[f64]) -> f64 {
        let m = self.local_optima.len();
        (0..m).map(|i| self.local_loss(i, w)).sum::<f64>() / m as f64
    }

    /// `grad f_m(w) = (w_1 - wt_1, v (w_{-1} - wt_{-1}))`.
    pub fn population_grad(&self, m: usize, w: &[f64]) -> Vec<f64> {
        let wt = &self.local_optima[m];
        w.iter()
            .zip(wt)
            .enumerate()
            .map(|(i, (a, b))| if i == 0 { a - b } else { self.feature_var * (a - b) })
            .collect()
    }

    pub fn sample_grad(&self, m: usize, w: &[f64], batch: usize, rng: &mut StreamRng) -> Vec<f64> {
        let d = w.len();
        let diff: Vec<f64> = w.iter().zip(&self.local_optima[m]).map(|(a, b)| a - b).collect();
        let mut acc = vec![0.0; d];
        let mut x = vec![0.0; d];
        let spec = &self.spec;
        for _ in 0..batch {
            x[0] = 1.0;
            for xi in x[1..].iter_mut() {
                *xi = draw_feature(rng, spec.sigma1, spec.bound, spec.truncate);
            }
            let e: f64 = StandardNormal.sample(rng);
            // residual <x, w> - y with y = <x, wt> + sigma2 e
            let r = x.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() - spec.sigma2 * e;
            for (a, xi) in acc.iter_mut().zip(&x) {
                *a += r * xi;
            }
        }
        let inv = 1.0 / batch as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_client_cancellation() {
        let p = gen_linear(&LinearSpec::new(6, 2, 2), 5).unwrap();
        let (a, b) = (&p.local_optima[0], &p.local_optima[1]);
        for i in 2..6 {
            assert_eq!(a[i], -b[i]);
            assert_eq!(p.w_star[i], 0.0);
        }
        for i in 0..2 {
            assert!((p.w_star[i] - 0.5 * (a[i] + b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn local_optima_are_dense_and_mean_is_sparse() {
        let spec = LinearSpec::new(64, 4, 7);
        let p = gen_linear(&spec, 9).unwrap();
        let mean = column_mean(&p.local_optima);
        assert_eq!(mean, p.w_star);
        assert_eq!(crate::mirror::support(&p.w_star), vec![0, 1, 2, 3]);
        for w in &p.local_optima {
            assert!(crate::mirror::support(w).len() > 4);
        }
    }

    #[test]
    fn zero_gradient_at_local_optimum() {
        let p = gen_linear(&LinearSpec::new(10, 2, 3), 1).unwrap();
        let g = p.population_grad(1, &p.local_optima[1].clone());
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noiseless_sample_grad_vanishes_at_local_optimum() {
        let mut spec = LinearSpec::new(8, 2, 2);
        spec.sigma2 = 0.0;
        let p = gen_linear(&spec, 2).unwrap();
        let mut rng = derive_rng(1, 0, 0, StreamRole::LocalStep(0));
        let g = p.sample_grad(0, &p.local_optima[0].clone(), 80, &mut rng);
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn truncated_variance_limits() {
        assert!((truncated_normal_variance(1.0, 40.0) - 1.0).abs() < 1e-12);
        // uniform limit: a narrow truncation behaves like U(-c, c), variance c^2 / 3
        let c = 1e-3;
        assert!((truncated_normal_variance(1.0, c) / (c * c / 3.0) - 1.0).abs() < 1e-5);
        // Monte-Carlo cross-check
        let mut rng = derive_rng(3, 0, 0, StreamRole::Custom(0));
        let n = 200_000;
        let v: f64 = (0..n)
            .map(|_| draw_feature(&mut rng, 2.0, 1.5, true).powi(2))
            .sum::<f64>()
            / n as f64;
        let want = truncated_normal_variance(2.0, 1.5);
        assert!((v - want).abs() < 5.0 * want / (n as f64).sqrt() * 2.0, "{v} vs {want}");
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(gen_linear(&LinearSpec::new(4, 4, 2), 0).is_err());
        assert!(gen_linear(&LinearSpec::new(4, 0, 2), 0).is_err());
        assert!(gen_linear(&LinearSpec::new(4, 1, 1), 0).is_err());
        let mut s = LinearSpec::new(4, 1, 2);
        s.sigma1 = 0.0;
        assert!(gen_linear(&s, 0).is_err());
    }
}
