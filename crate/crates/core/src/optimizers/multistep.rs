use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::MirrorPair;
use crate::problem::{GradientMode, GradientOracle, ProblemConstants};
use crate::rng::{derive_rng, StreamRole};

use super::{
    recommend_stepsize, run_refedda_gt, Participation, RestrictedConfig, RoundView, StepParams, TraceOptions,
    Trajectory, Variant,
};

/// Leading constants of the round and local-step schedule.
///
/// The theory uses `round_const = 64` and `step_const = 2^14`; both are
/// exposed so small experiments can shrink the schedule while keeping its shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleRule {
    #[serde(default = "default_round_const")]
    pub round_const: f64,
    #[serde(default = "default_step_const")]
    pub step_const: f64,
}

fn default_round_const() -> f64 {
    64.0
}

fn default_step_const() -> f64 {
    16384.0
}

impl Default for ScheduleRule {
    fn default() -> Self {
        Self {
            round_const: default_round_const(),
            step_const: default_step_const(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StagePlan {
    pub radius_sq: f64,
    pub rounds: usize,
    pub local_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub stages: Vec<StagePlan>,
}

impl Schedule {
    /// Stage radii `Q_0 2^{-n}`.
    pub fn from_counts(q0: f64, counts: &[(usize, usize)]) -> Self {
        let mut q = q0;
        let stages = counts
            .iter()
            .map(|&(rounds, local_steps)| {
                let plan = StagePlan {
                    radius_sq: q,
                    rounds,
                    local_steps,
                };
                q /= 2.0;
                plan
            })
            .collect();
        Self { stages }
    }
}

fn to_count(name: &str, v: f64) -> Result<usize> {
    // 2^53: beyond this the ceiling is no longer an exact integer
    if !(v.is_finite() && v >= 0.0 && v <= 9.007_199_254_740_992e15) {
        return Err(Error::InvalidConfig(format!("{name} = {v} is not a usable count")));
    }
    Ok(v.ceil().max(1.0) as usize)
}

/// Stage schedule, natural logarithms throughout.
///
/// `N = ceil(log2(Q0/eps))`, `R_n = ceil(c_R s kappa ln d)` and
/// `K_n = ceil(c_K 2^n s^2 sigma^2 / (mu^2 Q0 R_n) ((ln d)^4 + 2 ln(2 n d / delta) / (R_n M)))`
/// for `n = 1..=N`.
#[allow(clippy::too_many_arguments)]
pub fn schedule_multistep(
    sparsity: usize,
    kappa: f64,
    dim: usize,
    sigma: f64,
    mu_q0: f64,
    q0: f64,
    epsilon: f64,
    delta: f64,
    clients: usize,
    rule: &ScheduleRule,
) -> Result<Schedule> {
    for (name, v) in [("kappa", kappa), ("mu", mu_q0), ("Q0", q0), ("epsilon", epsilon)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
        }
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidConfig(format!("delta must be in (0, 1], got {delta}")));
    }
    if sparsity == 0 || dim < 2 || clients == 0 {
        return Err(Error::InvalidConfig(format!(
            "schedule needs s >= 1, d >= 2, M >= 1 (s = {sparsity}, d = {dim}, M = {clients})"
        )));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {sigma}")));
    }
    let n_stages = (q0 / epsilon).log2().ceil().max(0.0) as usize;
    let s = sparsity as f64;
    let d = dim as f64;
    let ln_d = d.ln();
    let rounds = to_count("R_n", rule.round_const * s * kappa * ln_d)?;
    let r = rounds as f64;
    let mut counts = Vec::with_capacity(n_stages);
    for i in 0..n_stages {
        let n = (i + 1) as f64;
        let bracket = ln_d.powi(4) + 2.0 * (2.0 * n * d / delta).ln() / (r * clients as f64);
        let k = rule.step_const * n.exp2() * s * s * sigma * sigma / (mu_q0 * mu_q0 * q0 * r) * bracket;
        counts.push((rounds, to_count("K_n", k)?));
    }
    Ok(Schedule::from_counts(q0, &counts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StageSource {
    Auto(ScheduleRule),
    /// `(R_n, K_n)` per stage.
    Explicit(Vec<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultistepConfig {
    pub w0: Vec<f64>,
    pub q0: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub stages: StageSource,
    /// Multiplies the recommended client step of every stage.
    pub eta_scale: f64,
    /// Fixed client step for every stage instead of the recommendation.
    pub eta_c: Option<f64>,
    pub sparsity: usize,
    pub mirror: MirrorPair,
    pub gradient: GradientMode,
    pub participation: Participation,
}

impl MultistepConfig {
    pub fn new(w0: Vec<f64>, q0: f64, epsilon: f64, mirror: MirrorPair, sparsity: usize) -> Self {
        Self {
            w0,
            q0,
            epsilon,
            delta: 0.1,
            stages: StageSource::Auto(ScheduleRule::default()),
            eta_scale: 1.0,
            eta_c: None,
            sparsity,
            mirror,
            gradient: GradientMode::Stochastic { batch: 10 },
            participation: Participation::Full,
        }
    }

    pub fn schedule(&self, constants: &ProblemConstants, clients: usize) -> Result<Schedule> {
        match &self.stages {
            StageSource::Auto(rule) => schedule_multistep(
                self.sparsity,
                constants.kappa(self.q0),
                constants.dim,
                constants.sigma_noise,
                constants.mu(self.q0),
                self.q0,
                self.epsilon,
                self.delta,
                clients,
                rule,
            ),
            StageSource::Explicit(counts) => {
                if !(self.q0.is_finite() && self.q0 > 0.0) {
                    return Err(Error::InvalidConfig(format!("Q0 must be > 0, got {}", self.q0)));
                }
                Ok(Schedule::from_counts(self.q0, counts))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub radius_sq: f64,
    pub rounds: usize,
    pub local_steps: usize,
    pub eta_c: f64,
    pub start: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultistepResult {
    pub w_hat: Vec<f64>,
    pub stages: Vec<StageReport>,
    /// Stage trajectories joined end to end; rounds and samples are cumulative.
    pub trajectory: Trajectory,
}

/// Restarted restricted dual averaging: stage `n` starts from the previous
/// output with radius `Q_0 2^{-n}` and zero trackers.
pub fn run_multistep<O: GradientOracle + ?Sized>(
    oracle: &O,
    constants: &ProblemConstants,
    cfg: &MultistepConfig,
    seed: u64,
    opts: &TraceOptions,
    observer: &mut dyn FnMut(usize, &RoundView<'_>),
) -> Result<MultistepResult> {
    if !(cfg.eta_scale.is_finite() && cfg.eta_scale > 0.0) {
        return Err(Error::InvalidConfig(format!("eta_scale must be > 0, got {}", cfg.eta_scale)));
    }
    let m = oracle.clients();
    let d = oracle.dim();
    let schedule = cfg.schedule(constants, m)?;
    let mut w = cfg.w0.clone();
    let mut reports = Vec::with_capacity(schedule.stages.len());
    let mut traj = Trajectory::default();
    for (n, plan) in schedule.stages.iter().enumerate() {
        let eta_c = match cfg.eta_c {
            Some(eta) => eta,
            None => {
                let params = StepParams {
                    l_smooth: constants.l_smooth,
                    local_steps: plan.local_steps,
                    rounds: plan.rounds,
                    sigma: constants.sigma_noise,
                    dim: d,
                    h_star: f64::NAN,
                    heterogeneity: f64::NAN,
                    mixing: None,
                    radius_sq: plan.radius_sq,
                    clients: m,
                    delta: cfg.delta,
                };
                recommend_stepsize(Variant::RefeddaGt, &params)?.0 * cfg.eta_scale
            }
        };
        let stage_cfg = RestrictedConfig {
            w0: w.clone(),
            radius_sq: plan.radius_sq,
            eta_c,
            eta_s: 1.0,
            local_steps: plan.local_steps,
            rounds: plan.rounds,
            c0: vec![0.0; d],
            participation: cfg.participation,
            sparsity: cfg.sparsity,
            mirror: cfg.mirror,
            gradient: cfg.gradient,
        };
        let stage_seed = derive_rng(seed, 0, n, StreamRole::Custom(0x5374_6167)).next_u64();
        let (out, t) = run_refedda_gt(oracle, &stage_cfg, stage_seed, opts, &mut |v| observer(n, v))?;
        let offset = traj.rounds;
        let base = traj.total_samples;
        traj.snapshots.extend(t.snapshots.into_iter().map(|mut s| {
            s.round += offset;
            s.samples += base;
            s
        }));
        traj.rounds += t.rounds;
        traj.total_samples += t.total_samples;
        traj.init_samples += t.init_samples;
        reports.push(StageReport {
            radius_sq: plan.radius_sq,
            rounds: plan.rounds,
            local_steps: plan.local_steps,
            eta_c,
            start: w,
            output: out.clone(),
        });
        w = out;
    }
    Ok(MultistepResult {
        w_hat: w,
        stages: reports,
        trajectory: traj,
    })
}
