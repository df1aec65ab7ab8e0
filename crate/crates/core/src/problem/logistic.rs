//! Decentralized sparse logistic regression with paired local optima.
//!
//! Pair `i` contributes clients `2i` and `2i + 1` with optima `(alpha_i, beta_i)`
//! and `(alpha_i, -beta_i)`. Flipping the sign of the last `d - s` covariates
//! swaps the two members of each pair, so the global optimum vanishes off the
//! first `s` coordinates.
//!
//! Losses and population gradients are estimated on a fixed validation set.
//! The set is stored as base points `x`; each one is used together with its
//! mirror `(x_a, -x_b)`, which makes the empirical objective keep the same
//! symmetry exactly instead of up to sampling error.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linear::{draw_feature, draw_signed};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, StreamRng, StreamRole};

/// Validation points per parallel work unit. Fixed so that reductions are
/// summed in the same order regardless of thread count.
const CHUNK: usize = 512;

fn one() -> f64 {
    1.0
}

fn default_bound() -> f64 {
    3.0
}

fn default_validation() -> usize {
    200_000
}

fn default_ref_iters() -> usize {
    5_000
}

fn default_ref_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSpec {
    pub dim: usize,
    pub sparsity: usize,
    /// Number of client pairs; the problem has `2 * pairs` clients.
    pub pairs: usize,
    #[serde(default = "one")]
    pub sigma1: f64,
    #[serde(default = "default_bound")]
    pub bound: f64,
    #[serde(default)]
    pub truncate: bool,
    /// Scale of the shared block `alpha_i`.
    #[serde(default = "one")]
    pub alpha_scale: f64,
    /// Scale of the sign-flipped block `beta_i`.
    #[serde(default = "one")]
    pub beta_scale: f64,
    /// Total validation points (base points plus their mirrors).
    #[serde(default = "default_validation")]
    pub validation_size: usize,
    #[serde(default = "default_ref_iters")]
    pub reference_max_iters: usize,
    #[serde(default = "default_ref_tol")]
    pub reference_tol: f64,
}

impl LogisticSpec {
    pub fn new(dim: usize, sparsity: usize, pairs: usize) -> Self {
        Self {
            dim,
            sparsity,
            pairs,
            sigma1: 1.0,
            bound: default_bound(),
            truncate: false,
            alpha_scale: 1.0,
            beta_scale: 1.0,
            validation_size: default_validation(),
            reference_max_iters: default_ref_iters(),
            reference_tol: default_ref_tol(),
        }
    }

    pub fn clients(&self) -> usize {
        2 * self.pairs
    }

    pub fn validate(&self) -> Result<()> {
        if self.sparsity < 1 || self.dim <= self.sparsity {
            return Err(Error::InvalidConfig(format!(
                "logistic problem needs d > s >= 1 (d = {}, s = {})",
                self.dim, self.sparsity
            )));
        }
        if self.pairs < 1 {
            return Err(Error::InvalidConfig("logistic problem needs pairs >= 1".into()));
        }
        if self.validation_size < 2 {
            return Err(Error::InvalidConfig("validation_size must be >= 2".into()));
        }
        for (name, v) in [("sigma1", self.sigma1), ("bound", self.bound)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("alpha_scale", self.alpha_scale), ("beta_scale", self.beta_scale)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.reference_tol >= 0.0) {
            return Err(Error::InvalidConfig("reference_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LogisticProblem {
    pub spec: LogisticSpec,
    pub local_optima: Vec<Vec<f64>>,
    /// Reference optimum of the validation objective.
    pub w_star: Vec<f64>,
    /// Residual `||grad||_2` the reference solver stopped at.
    pub reference_residual: f64,
    /// Row-major base validation points, `n_base x d`.
    features: Vec<f32>,
    n_base: usize,
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// Cross-entropy of logit `a` against soft label `t`.
fn soft_ce(a: f64, t: f64) -> f64 {
    // -t log s(a) - (1-t) log s(-a)
    t * softplus(-a) + (1.0 - t) * softplus(a)
}

/// Generate the paired optima and validation set, then solve for the reference optimum.
pub fn gen_logistic(spec: &LogisticSpec, seed: u64) -> Result<LogisticProblem> {
    let mut p = gen_logistic_unsolved(spec, seed)?;
    let start = vec![0.0; spec.dim];
    let (w, residual) = super::gradient_descent(
        |w| p.global_loss(w),
        |w| p.global_grad(w),
        start,
        spec.reference_max_iters,
        spec.reference_tol,
    )?;
    p.w_star = w;
    p.reference_residual = residual;
    Ok(p)
}

/// Like [`gen_logistic`] but leaves `w_star` at zero.
pub fn gen_logistic_unsolved(spec: &LogisticSpec, seed: u64) -> Result<LogisticProblem> {
    spec.validate()?;
    let (d, s) = (spec.dim, spec.sparsity);
    let mut rng = derive_rng(seed, 0, 0, StreamRole::ProblemGen);
    let mut local_optima = Vec::with_capacity(spec.clients());
    for _ in 0..spec.pairs {
        let alpha: Vec<f64> = (0..s).map(|_| draw_signed(&mut rng, spec.alpha_scale)).collect();
        let beta: Vec<f64> = (0..d - s).map(|_| draw_signed(&mut rng, spec.beta_scale)).collect();
        let plus: Vec<f64> = alpha.iter().chain(&beta).copied().collect();
        let minus: Vec<f64> = alpha.iter().copied().chain(beta.iter().map(|b| -b)).collect();
        local_optima.push(plus);
        local_optima.push(minus);
    }
    let n_base = spec.validation_size / 2;
    let mut vrng = derive_rng(seed, 0, 0, StreamRole::Validation);
    let features: Vec<f32> = (0..n_base * d)
        .map(|_| draw_feature(&mut vrng, spec.sigma1, spec.bound, spec.truncate) as f32)
        .collect();
    Ok(LogisticProblem {
        spec: spec.clone(),
        local_optima,
        w_star: vec![0.0; d],
        reference_residual: f64::NAN,
        features,
        n_base,
    })
}

impl LogisticProblem {
    pub fn validation_points(&self) -> usize {
        2 * self.n_base
    }

    fn split_dot(&self, x: &[f32], w: &[f64]) -> (f64, f64) {
        let s = self.spec.sparsity;
        let a = x[..s].iter().zip(&w[..s]).map(|(x, w)| *x as f64 * w).sum();
        let b = x[s..].iter().zip(&w[s..]).map(|(x, w)| *x as f64 * w).sum();
        (a, b)
    }

    /// Soft labels `(t(x), t(x_mirror))` averaged over the given clients.
    fn soft_labels(&self, x: &[f32], clients: &[usize]) -> (f64, f64) {
        let (mut t, mut tm) = (0.0, 0.0);
        let mut i = 0;
        while i < clients.len() {
            let m = clients[i];
            let (a, b) = self.split_dot(x, &self.local_optima[m]);
            if m % 2 == 0 && clients.get(i + 1) == Some(&(m + 1)) {
                // Both members of a pair: the partner's logit is a - b, and the
                // mirrored point sees the same two terms in swapped order.
                t += sigmoid(a + b) + sigmoid(a - b);
                tm += sigmoid(a - b) + sigmoid(a + b);
                i += 2;
            } else {
                t += sigmoid(a + b);
                tm += sigmoid(a - b);
                i += 1;
            }
        }
        let inv = 1.0 / clients.len() as f64;
        (t * inv, tm * inv)
    }

    /// Mean over the validation set of `(sigmoid(<x,w>) - t(x)) x` and the soft CE loss.
    fn accumulate(&self, w: &[f64], clients: &[usize], want_grad: bool) -> (f64, Vec<f64>) {
        let d = self.spec.dim;
        let s = self.spec.sparsity;
        let parts: Vec<(f64, Vec<f64>)> = self
            .features
            .par_chunks(CHUNK * d)
            .map(|chunk| {
                let mut loss = 0.0;
                let mut g = if want_grad { vec![0.0; d] } else { Vec::new() };
                for x in chunk.chunks_exact(d) {
                    let (a, b) = self.split_dot(x, w);
                    let (t, tm) = self.soft_labels(x, clients);
                    loss += soft_ce(a + b, t) + soft_ce(a - b, tm);
                    if want_grad {
                        let r = sigmoid(a + b) - t;
                        let rm = sigmoid(a - b) - tm;
                        for j in 0..s {
                            g[j] += (r + rm) * x[j] as f64;
                        }
                        for j in s..d {
                            let xj = x[j] as f64;
                            // pair contribution first, so equal residuals cancel exactly
                            g[j] += r * xj - rm * xj;
                        }
                    }
                }
                (loss, g)
            })
            .collect();
        let n = self.validation_points() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; if want_grad { d } else { 0 }];
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|v| *v /= n);
        (loss / n, grad)
    }

    fn all_clients(&self) -> Vec<usize> {
        (0..self.local_optima.len()).collect()
    }

    pub fn global_loss(&self, w: &[f64]) -> f64 {
        self.accumulate(w, &self.all_clients(), false).0
    }

    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        self.accumulate(w, &self.all_clients(), true).1
    }

    pub fn local_loss(&self, m: usize, w: &[f64]) -> f64 {
        self.accumulate(w, &[m], false).0
    }

    /// Validation-set estimate of `grad f_m(w)`.
    pub fn population_grad(&self, m: usize, w: &[f64]) -> Vec<f64> {
        self.accumulate(w, &[m], true).1
    }

    pub fn sample_grad(&self, m: usize, w: &[f64], batch: usize, rng: &mut StreamRng) -> Vec<f64> {
        let d = self.spec.dim;
        let spec = &self.spec;
        let wt = &self.local_optima[m];
        let mut acc = vec![0.0; d];
        let mut x = vec![0.0; d];
        for _ in 0..batch {
            for xi in x.iter_mut() {
                *xi = draw_feature(rng, spec.sigma1, spec.bound, spec.truncate);
            }
            let y = if rng.random::<f64>() < sigmoid(crate::mirror::dot(&x, wt)) {
                1.0
            } else {
                0.0
            };
            let r = sigmoid(crate::mirror::dot(&x, w)) - y;
            if spec.truncate {
                debug_assert!(x.iter().all(|xi| (r * xi).abs() <= spec.bound));
            }
            for (a, xi) in acc.iter_mut().zip(&x) {
                *a += r * xi;
            }
        }
        let inv = 1.0 / batch as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}
