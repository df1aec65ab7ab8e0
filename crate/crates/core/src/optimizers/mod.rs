//! Dual-averaging optimizers: decentralized (with or without gradient tracking),
//! restricted centralized with tracking, and its multistep restart wrapper.

mod decentralized;
mod multistep;
mod restricted;
mod stepsize;

pub use decentralized::{run_dfedda, DecentralizedConfig};
pub use multistep::{
    run_multistep, schedule_multistep, MultistepConfig, MultistepResult, Schedule, ScheduleRule, StagePlan, StageReport,
    StageSource,
};
pub use restricted::{run_refedda_gt, Participation, RestrictedConfig};
pub use stepsize::{h_upper_from_radius, recommend_stepsize, StepParams, Variant};

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gossip::{mix_columns, GossipMatrix};
use crate::mirror::{mirror_inverse, prox_restricted, BallConstraint, MirrorPair};
use crate::problem::{GradientMode, GradientOracle};
use crate::rng::{derive_rng, StreamRole};

/// How a client turns its dual iterate into a primal point.
#[derive(Clone, Copy, Debug)]
pub enum Retrieval<'a> {
    /// `w = grad h*(z)`
    Mirror(&'a MirrorPair),
    /// `w = Prox(w0, z; Q)` on the q-ball around `ball.center`.
    Restricted { mirror: &'a MirrorPair, ball: &'a BallConstraint },
}

impl Retrieval<'_> {
    pub fn primal(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Retrieval::Mirror(mp) => Ok(mirror_inverse(z, mp)),
            Retrieval::Restricted { mirror, ball } => prox_restricted(z, ball, mirror),
        }
    }
}

/// Inputs common to every local round of a run.
#[derive(Clone, Copy, Debug)]
pub struct LocalRoundSpec<'a> {
    pub eta_c: f64,
    pub local_steps: usize,
    pub gradient: GradientMode,
    pub retrieval: Retrieval<'a>,
    pub seed: u64,
    pub round: usize,
}

/// Result of `K` local dual steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalRound {
    /// Primal point at step 0.
    pub w0: Vec<f64>,
    pub z_end: Vec<f64>,
}

/// `K` dual steps `z <- z - eta_c (grad F(w, xi) + tracking)`, re-retrieving `w` each step.
/// Step `k` draws from the `(seed, client, round, LocalStep(k))` stream.
pub fn client_local_round<O: GradientOracle + ?Sized>(
    oracle: &O,
    client: usize,
    z_start: &[f64],
    tracking: Option<&[f64]>,
    spec: &LocalRoundSpec<'_>,
) -> Result<LocalRound> {
    if spec.local_steps == 0 {
        return Err(Error::InvalidConfig("local steps K must be >= 1".into()));
    }
    let mut z = z_start.to_vec();
    let mut w0 = Vec::new();
    for k in 0..spec.local_steps {
        let w = spec.retrieval.primal(&z)?;
        let mut rng = derive_rng(spec.seed, client, spec.round, StreamRole::LocalStep(k));
        let g = spec.gradient.query(oracle, client, &w, &mut rng);
        if g.len() != z.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                got: g.len(),
            });
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(non_finite(spec.round, client, k, format!("gradient[{i}] = {}", g[i])));
        }
        match tracking {
            Some(c) => {
                for ((zi, gi), ci) in z.iter_mut().zip(&g).zip(c) {
                    *zi -= spec.eta_c * (gi + ci);
                }
            }
            None => {
                for (zi, gi) in z.iter_mut().zip(&g) {
                    *zi -= spec.eta_c * gi;
                }
            }
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(non_finite(spec.round, client, k, format!("dual iterate z[{i}] = {}", z[i])));
        }
        if k == 0 {
            w0 = w;
        }
    }
    Ok(LocalRound { w0, z_end: z })
}

fn non_finite(round: usize, client: usize, step: usize, what: String) -> Error {
    Error::NonFinite {
        round,
        client,
        step,
        what,
    }
}

/// `(z_K - z_0) / (K eta_c)`
pub(crate) fn normalized_delta(z_end: &[f64], z_start: &[f64], local_steps: usize, eta_c: f64) -> Vec<f64> {
    let scale = 1.0 / (local_steps as f64 * eta_c);
    z_end.iter().zip(z_start).map(|(a, b)| (a - b) * scale).collect()
}

/// Decentralized tracker recursion `c^m <- c^m + Delta^m - sum_j u_jm Delta^j`.
/// Keeps `sum_m c^m` fixed because the columns of `U` sum to one.
pub fn tracker_update_decentralized(
    trackers: &[Vec<f64>],
    deltas: &[Vec<f64>],
    u: &GossipMatrix,
) -> Result<Vec<Vec<f64>>> {
    let mixed = mix_columns(deltas, u)?;
    Ok(trackers
        .iter()
        .zip(deltas)
        .zip(&mixed)
        .map(|((c, d), md)| c.iter().zip(d).zip(md).map(|((c, d), md)| c + (d - md)).collect())
        .collect())
}

/// Output of one centralized tracker update.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedUpdate {
    /// New trackers for the participating clients, in the order of `participants`.
    pub client_trackers: Vec<Vec<f64>>,
    pub server_tracker: Vec<f64>,
    /// Server dual direction: the participants' mean tracked gradient.
    pub delta: Vec<f64>,
}

/// Centralized tracker recursion.
///
/// `c^m <- c^m - c - (z_K^m - z_0)/(K eta_c)` and `c <- c + mean_S(c^m_new - c^m)`.
/// The server direction is `-mean_S (z_K^m - z_0)/(K eta_c)`, the mean of the
/// corrected gradients actually applied by the participants.
/// `z_deltas` holds the normalized displacements `(z_K^m - z_0)/(K eta_c)`.
pub fn tracker_update_centralized(
    client_trackers: &[&[f64]],
    server_tracker: &[f64],
    z_deltas: &[Vec<f64>],
) -> CentralizedUpdate {
    let n = client_trackers.len() as f64;
    let d = server_tracker.len();
    let mut new_clients = Vec::with_capacity(client_trackers.len());
    let mut shift = vec![0.0; d];
    let mut delta = vec![0.0; d];
    for (c_m, zd) in client_trackers.iter().zip(z_deltas) {
        let new: Vec<f64> = c_m
            .iter()
            .zip(server_tracker)
            .zip(zd)
            .map(|((cm, c), zd)| cm - c - zd)
            .collect();
        for i in 0..d {
            shift[i] += new[i] - c_m[i];
            delta[i] -= zd[i];
        }
        new_clients.push(new);
    }
    let server = server_tracker.iter().zip(&shift).map(|(c, s)| c + s / n).collect();
    delta.iter_mut().for_each(|v| *v /= n);
    CentralizedUpdate {
        client_trackers: new_clients,
        server_tracker: server,
        delta,
    }
}

/// What the optimizer would output after `round` completed rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub round: usize,
    /// One point per client for decentralized runs, a single point for centralized ones.
    pub w_hat: Vec<Vec<f64>>,
    /// Gradient samples consumed by the round loop so far.
    pub samples: u64,
    /// Zero unless wall-time recording is enabled.
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// Samples spent on tracker initialization (not part of the round loop).
    pub init_samples: u64,
    pub total_samples: u64,
    pub rounds: usize,
}

/// State exposed to an observer after initialization (`round = 0`) and after every round.
#[derive(Clone, Copy, Debug)]
pub struct RoundView<'a> {
    pub round: usize,
    /// Round-start dual iterates per client (decentralized) or the server dual (centralized).
    pub z: &'a [Vec<f64>],
    pub trackers: &'a [Vec<f64>],
    pub server_tracker: Option<&'a [f64]>,
}

/// Recording and execution switches that never change the numbers produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceOptions {
    /// Snapshot every `every` rounds (the final round is always recorded); `0` records only the end.
    pub every: usize,
    pub wall_time: bool,
    /// Run client rounds on the rayon pool.
    pub parallel: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            every: 0,
            wall_time: false,
            parallel: true,
        }
    }
}

impl TraceOptions {
    pub(crate) fn records(&self, round: usize, total: usize) -> bool {
        round == total || (self.every > 0 && round % self.every == 0)
    }
}

pub(crate) struct Clock {
    start: Option<Instant>,
}

impl Clock {
    pub(crate) fn new(enabled: bool) -> Self {
        Self {
            start: enabled.then(Instant::now),
        }
    }

    pub(crate) fn ms(&self) -> f64 {
        self.start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
    }
}

/// Map clients through `f`, in parallel or serially, returning results in index order.
pub(crate) fn for_clients<T: Send>(
    clients: &[usize],
    parallel: bool,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if parallel {
        clients.par_iter().map(|&m| f(m)).collect()
    } else {
        clients.iter().map(|&m| f(m)).collect()
    }
}

pub(crate) fn check_step(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be a positive finite number, got {v}")))
    }
}
