//! Synthetic decentralized benchmark problems and their gradient oracles.

pub mod linear;
pub mod logistic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::{p_norm, support};
use crate::rng::StreamRng;

pub use linear::{gen_linear, LinearProblem, LinearSpec};
pub use logistic::{gen_logistic, LogisticProblem, LogisticSpec};

/// Mean of `batch_size` per-example gradients for one client.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub gradient: Vec<f64>,
    pub client: usize,
    pub batch_size: usize,
}

/// Per-client gradient access used by the optimizers.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;

    fn clients(&self) -> usize;

    /// Unbiased estimate of `grad f_m(w)` from `batch` fresh samples.
    fn sample_grad(&self, m: usize, w: &[f64], batch: usize, rng: &mut StreamRng) -> GradSample;

    /// `grad f_m(w)` itself (or its fixed validation-set estimate).
    fn population_grad(&self, m: usize, w: &[f64]) -> Vec<f64>;
}

/// How the optimizers query the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GradientMode {
    Stochastic { batch: usize },
    /// Noiseless full-batch gradients.
    Exact,
}

impl GradientMode {
    /// Samples drawn per query (`0` for exact gradients).
    pub fn samples_per_query(&self) -> usize {
        match self {
            GradientMode::Stochastic { batch } => *batch,
            GradientMode::Exact => 0,
        }
    }

    pub fn query<O: GradientOracle + ?Sized>(
        &self,
        oracle: &O,
        m: usize,
        w: &[f64],
        rng: &mut StreamRng,
    ) -> Vec<f64> {
        match self {
            GradientMode::Stochastic { batch } => oracle.sample_grad(m, w, *batch, rng).gradient,
            GradientMode::Exact => oracle.population_grad(m, w),
        }
    }
}

/// JSON description of a problem: parameters only, samples are regenerated from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Linear(LinearSpec),
    Logistic(LogisticSpec),
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProblemSpec::Linear(s) => s.validate(),
            ProblemSpec::Logistic(s) => s.validate(),
        }
    }

    pub fn clients(&self) -> usize {
        match self {
            ProblemSpec::Linear(s) => s.clients,
            ProblemSpec::Logistic(s) => s.clients(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Linear(s) => s.dim,
            ProblemSpec::Logistic(s) => s.dim,
        }
    }

    pub fn sparsity(&self) -> usize {
        match self {
            ProblemSpec::Linear(s) => s.sparsity,
            ProblemSpec::Logistic(s) => s.sparsity,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Problem> {
        Ok(match self {
            ProblemSpec::Linear(s) => Problem::Linear(gen_linear(s, seed)?),
            ProblemSpec::Logistic(s) => Problem::Logistic(gen_logistic(s, seed)?),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ProblemSpec = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Local strong convexity as a function of the ball radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum StrongConvexity {
    Constant(f64),
    /// `sigma1^2 sigmoid(C sqrt(Q)) sigmoid(-C sqrt(Q))`
    Logistic { sigma1_sq: f64, bound: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProblemConstants {
    /// `l1 -> l_inf` smoothness constant.
    pub l_smooth: f64,
    pub strong_convexity: StrongConvexity,
    /// Sub-Gaussian parameter of the gradient-noise coordinates.
    pub sigma_noise: f64,
    pub dim: usize,
    pub sparsity: usize,
}

impl ProblemConstants {
    pub fn mu(&self, radius_sq: f64) -> f64 {
        match self.strong_convexity {
            StrongConvexity::Constant(mu) => mu,
            StrongConvexity::Logistic { sigma1_sq, bound } => {
                let a = bound * radius_sq.sqrt();
                sigma1_sq * logistic::sigmoid(a) * logistic::sigmoid(-a)
            }
        }
    }

    /// `L / mu(Q)`
    pub fn kappa(&self, radius_sq: f64) -> f64 {
        self.l_smooth / self.mu(radius_sq)
    }
}

#[derive(Clone, Debug)]
pub enum Problem {
    Linear(LinearProblem),
    Logistic(LogisticProblem),
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Linear(_) => "linear",
            Problem::Logistic(_) => "logistic",
        }
    }

    pub fn sparsity(&self) -> usize {
        match self {
            Problem::Linear(p) => p.spec.sparsity,
            Problem::Logistic(p) => p.spec.sparsity,
        }
    }

    pub fn w_star(&self) -> &[f64] {
        match self {
            Problem::Linear(p) => &p.w_star,
            Problem::Logistic(p) => &p.w_star,
        }
    }

    pub fn local_optima(&self) -> &[Vec<f64>] {
        match self {
            Problem::Linear(p) => &p.local_optima,
            Problem::Logistic(p) => &p.local_optima,
        }
    }

    pub fn global_loss(&self, w: &[f64]) -> f64 {
        match self {
            Problem::Linear(p) => p.global_loss(w),
            Problem::Logistic(p) => p.global_loss(w),
        }
    }

    pub fn local_loss(&self, m: usize, w: &[f64]) -> f64 {
        match self {
            Problem::Linear(p) => p.local_loss(m, w),
            Problem::Logistic(p) => p.local_loss(m, w),
        }
    }

    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        match self {
            Problem::Linear(p) => {
                let m = p.local_optima.len();
                let mut g = vec![0.0; w.len()];
                for i in 0..m {
                    for (a, b) in g.iter_mut().zip(p.population_grad(i, w)) {
                        *a += b;
                    }
                }
                g.iter_mut().for_each(|a| *a /= m as f64);
                g
            }
            Problem::Logistic(p) => p.global_grad(w),
        }
    }

    /// Tolerance below zero allowed for `f(w) - f(w*)`: zero for the closed-form
    /// linear loss, the reference solver's first-order residual bound otherwise.
    pub fn gap_tolerance(&self) -> f64 {
        match self {
            Problem::Linear(_) => 0.0,
            Problem::Logistic(p) => {
                // f(w*) - min f <= ||grad f(w*)||^2 / (2 mu); mu from the unit ball is a
                // conservative floor for this isotropic design.
                let mu = self.constants().mu(1.0);
                let r = if p.reference_residual.is_finite() { p.reference_residual } else { 0.0 };
                r * r / (2.0 * mu) + 1e-12
            }
        }
    }

    pub fn constants(&self) -> ProblemConstants {
        match self {
            Problem::Linear(p) => {
                let v = p.feature_var;
                let sig_t_sq = v.max(1.0);
                let c = p.spec.bound;
                // noise bound C~ (C^2 + max(v,1)) + C sigma2 with C~ the l1 spread of the
                // local optima around w*
                let spread = p
                    .local_optima
                    .iter()
                    .map(|w| {
                        let d: Vec<f64> = w.iter().zip(&p.w_star).map(|(a, b)| a - b).collect();
                        p_norm(&d, 1.0)
                    })
                    .fold(0.0, f64::max);
                ProblemConstants {
                    l_smooth: sig_t_sq,
                    strong_convexity: StrongConvexity::Constant(v.min(1.0)),
                    sigma_noise: spread * (c * c + sig_t_sq) + c * p.spec.sigma2,
                    dim: p.spec.dim,
                    sparsity: p.spec.sparsity,
                }
            }
            Problem::Logistic(p) => {
                let c = p.spec.bound;
                ProblemConstants {
                    l_smooth: c * c / 4.0,
                    strong_convexity: StrongConvexity::Logistic {
                        sigma1_sq: p.spec.sigma1 * p.spec.sigma1,
                        bound: c,
                    },
                    sigma_noise: c,
                    dim: p.spec.dim,
                    sparsity: p.spec.sparsity,
                }
            }
        }
    }

    /// `(1/M) sum_m ||grad f_m(w*)||_p^2`
    pub fn heterogeneity(&self, p: f64) -> f64 {
        let m = self.clients();
        let w = self.w_star().to_vec();
        (0..m)
            .map(|i| {
                let n = p_norm(&self.population_grad(i, &w), p);
                n * n
            })
            .sum::<f64>()
            / m as f64
    }

    /// Support of `w*`.
    pub fn true_support(&self) -> Vec<usize> {
        support(self.w_star())
    }

    /// Full-batch gradient descent with backtracking on the global objective.
    pub fn reference_solve(&self, start: Vec<f64>, max_iters: usize, tol: f64) -> Result<Vec<f64>> {
        gradient_descent(
            |w| self.global_loss(w),
            |w| self.global_grad(w),
            start,
            max_iters,
            tol,
        )
        .map(|(w, _)| w)
    }
}

impl GradientOracle for Problem {
    fn dim(&self) -> usize {
        match self {
            Problem::Linear(p) => p.spec.dim,
            Problem::Logistic(p) => p.spec.dim,
        }
    }

    fn clients(&self) -> usize {
        self.local_optima().len()
    }

    fn sample_grad(&self, m: usize, w: &[f64], batch: usize, rng: &mut StreamRng) -> GradSample {
        let gradient = match self {
            Problem::Linear(p) => p.sample_grad(m, w, batch, rng),
            Problem::Logistic(p) => p.sample_grad(m, w, batch, rng),
        };
        GradSample {
            gradient,
            client: m,
            batch_size: batch,
        }
    }

    fn population_grad(&self, m: usize, w: &[f64]) -> Vec<f64> {
        match self {
            Problem::Linear(p) => p.population_grad(m, w),
            Problem::Logistic(p) => p.population_grad(m, w),
        }
    }
}

/// Gradient descent with Armijo backtracking until `||grad||_2 <= tol`.
/// Returns the point and its final gradient norm.
pub(crate) fn gradient_descent(
    loss: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut w = start;
    let mut g = grad(&w);
    let mut gn = p_norm(&g, 2.0);
    if gn <= tol {
        return Ok((w, gn));
    }
    let mut f = loss(&w);
    let mut step = 1.0;
    for _ in 0..max_iters {
        let predicted = 0.5 * step * gn * gn;
        let mut cand: Vec<f64>;
        if predicted < 1e-13 * f.abs().max(1.0) {
            // Decrease is below the loss's rounding error: the Armijo test is
            // meaningless here, keep the last accepted step without growing it.
            cand = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            f = loss(&cand);
        } else {
            loop {
                cand = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let fc = loss(&cand);
                if fc <= f - 0.5 * step * gn * gn {
                    f = fc;
                    break;
                }
                step *= 0.5;
                if step < 1e-30 {
                    return Err(Error::NotConverged { iters: 0, residual: gn });
                }
            }
            step *= 2.0;
        }
        w = cand;
        g = grad(&w);
        gn = p_norm(&g, 2.0);
        if gn <= tol {
            return Ok((w, gn));
        }
    }
    Err(Error::NotConverged {
        iters: max_iters,
        residual: gn,
    })
}
