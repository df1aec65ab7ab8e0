use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::{sparse_top_s, BallConstraint, MirrorPair};
use crate::problem::{GradientMode, GradientOracle};
use crate::rng::{derive_rng, StreamRole};

use super::{
    check_step, client_local_round, for_clients, normalized_delta, tracker_update_centralized, Clock,
    LocalRoundSpec, Retrieval, RoundView, Snapshot, TraceOptions, Trajectory,
};

/// Which clients take part in a round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Participation {
    #[default]
    Full,
    /// Experimental: `clients` chosen uniformly without replacement each round.
    Uniform { clients: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestrictedConfig {
    pub w0: Vec<f64>,
    /// Squared radius `Q` of the q-norm ball around `w0`; may be `+inf`.
    pub radius_sq: f64,
    pub eta_c: f64,
    pub eta_s: f64,
    pub local_steps: usize,
    pub rounds: usize,
    /// Initial server tracker; every client tracker starts at the same value.
    pub c0: Vec<f64>,
    pub participation: Participation,
    pub sparsity: usize,
    pub mirror: MirrorPair,
    pub gradient: GradientMode,
}

impl RestrictedConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w0: Vec<f64>,
        radius_sq: f64,
        mirror: MirrorPair,
        eta_c: f64,
        local_steps: usize,
        rounds: usize,
        sparsity: usize,
    ) -> Self {
        let d = w0.len();
        Self {
            w0,
            radius_sq,
            eta_c,
            eta_s: 1.0,
            local_steps,
            rounds,
            c0: vec![0.0; d],
            participation: Participation::Full,
            sparsity,
            mirror,
            gradient: GradientMode::Stochastic { batch: 10 },
        }
    }

    pub fn validate(&self, clients: usize, dim: usize) -> Result<()> {
        check_step("eta_c", self.eta_c)?;
        check_step("eta_s", self.eta_s)?;
        if self.radius_sq.is_nan() || self.radius_sq <= 0.0 {
            return Err(Error::InvalidConstraint(format!(
                "squared radius Q must be > 0, got {}",
                self.radius_sq
            )));
        }
        if self.local_steps == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig(format!(
                "K and R must be >= 1 (K = {}, R = {})",
                self.local_steps, self.rounds
            )));
        }
        if self.sparsity == 0 {
            return Err(Error::InvalidConfig("sparsity s must be >= 1".into()));
        }
        if matches!(self.gradient, GradientMode::Stochastic { batch: 0 }) {
            return Err(Error::InvalidConfig("batch must be >= 1".into()));
        }
        if let Participation::Uniform { clients: k } = self.participation {
            if k == 0 || k > clients {
                return Err(Error::InvalidConfig(format!(
                    "participating clients must be in 1..={clients}, got {k}"
                )));
            }
        }
        for (what, len) in [("w0", self.w0.len()), ("c0", self.c0.len())] {
            if len != dim {
                return Err(Error::InvalidConfig(format!("{what} has length {len}, expected {dim}")));
            }
        }
        Ok(())
    }

    pub(crate) fn participants(&self, clients: usize, seed: u64, round: usize) -> Vec<usize> {
        match self.participation {
            Participation::Full => (0..clients).collect(),
            Participation::Uniform { clients: k } => {
                let mut rng = derive_rng(seed, 0, round, StreamRole::Participation);
                let mut s = sample(&mut rng, clients, k).into_vec();
                s.sort_unstable();
                s
            }
        }
    }
}

/// Restricted federated dual averaging with gradient tracking.
///
/// The server dual starts at zero; clients retrieve primal points with the
/// ball-restricted prox around `w0` and step along `grad F - c^m + c`. The
/// server moves its dual by `-K eta_s eta_c Delta_r` where `Delta_r` is the
/// participants' mean corrected gradient. Returns `Sparse(mean_r w_{r,0}; s)`.
pub fn run_refedda_gt<O: GradientOracle + ?Sized>(
    oracle: &O,
    cfg: &RestrictedConfig,
    seed: u64,
    opts: &TraceOptions,
    observer: &mut dyn FnMut(&RoundView<'_>),
) -> Result<(Vec<f64>, Trajectory)> {
    let (m, d) = (oracle.clients(), oracle.dim());
    cfg.validate(m, d)?;
    let ball = BallConstraint::new(cfg.w0.clone(), cfg.radius_sq)?;
    let retrieval = Retrieval::Restricted {
        mirror: &cfg.mirror,
        ball: &ball,
    };
    let clock = Clock::new(opts.wall_time);
    let mut traj = Trajectory {
        rounds: cfg.rounds,
        ..Default::default()
    };

    let mut z = vec![vec![0.0; d]];
    let mut c = cfg.c0.clone();
    let mut trackers = vec![cfg.c0.clone(); m];
    observer(&RoundView {
        round: 0,
        z: &z,
        trackers: &trackers,
        server_tracker: Some(&c),
    });

    let send_scale = cfg.local_steps as f64 * cfg.eta_s * cfg.eta_c;
    let mut w_sum = vec![0.0; d];
    let mut output = Vec::new();
    for r in 0..cfg.rounds {
        let active = cfg.participants(m, seed, r);
        let spec = LocalRoundSpec {
            eta_c: cfg.eta_c,
            local_steps: cfg.local_steps,
            gradient: cfg.gradient,
            retrieval,
            seed,
            round: r,
        };
        let z0 = &z[0];
        let outs = for_clients(&active, opts.parallel, |j| {
            let tracking: Vec<f64> = c.iter().zip(&trackers[j]).map(|(c, cm)| c - cm).collect();
            client_local_round(oracle, j, z0, Some(&tracking), &spec)
        })?;
        // Every participant starts from the same server dual, so w_{r,0} is shared.
        let w_r0 = match outs.first() {
            Some(o) => o.w0.clone(),
            None => retrieval.primal(z0)?,
        };
        w_sum.iter_mut().zip(&w_r0).for_each(|(a, b)| *a += b);

        let z_deltas: Vec<Vec<f64>> = outs
            .iter()
            .map(|o| normalized_delta(&o.z_end, z0, cfg.local_steps, cfg.eta_c))
            .collect();
        let old: Vec<&[f64]> = active.iter().map(|&j| trackers[j].as_slice()).collect();
        let upd = tracker_update_centralized(&old, &c, &z_deltas);
        for (&j, t) in active.iter().zip(upd.client_trackers) {
            trackers[j] = t;
        }
        c = upd.server_tracker;
        let next: Vec<f64> = z0.iter().zip(&upd.delta).map(|(a, b)| a - send_scale * b).collect();
        z[0] = next;
        traj.total_samples += (cfg.local_steps * cfg.gradient.samples_per_query() * active.len()) as u64;

        observer(&RoundView {
            round: r + 1,
            z: &z,
            trackers: &trackers,
            server_tracker: Some(&c),
        });
        if opts.records(r + 1, cfg.rounds) {
            let inv = 1.0 / (r + 1) as f64;
            let avg: Vec<f64> = w_sum.iter().map(|v| v * inv).collect();
            let out = sparse_top_s(&avg, cfg.sparsity);
            if r + 1 == cfg.rounds {
                output = out.clone();
            }
            traj.snapshots.push(Snapshot {
                round: r + 1,
                w_hat: vec![out],
                samples: traj.total_samples,
                wall_ms: clock.ms(),
            });
        }
    }
    Ok((output, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirror::{mirror_inverse, p_norm, support};
    use crate::problem::{gen_linear, LinearSpec, Problem};

    fn problem(d: usize, s: usize, m: usize, seed: u64) -> Problem {
        Problem::Linear(gen_linear(&LinearSpec::new(d, s, m), seed).unwrap())
    }

    /// Wraps an oracle and checks that every query point is inside the ball.
    struct Fenced<'a> {
        inner: &'a Problem,
        center: Vec<f64>,
        radius_sq: f64,
        q: f64,
    }

    impl GradientOracle for Fenced<'_> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn clients(&self) -> usize {
            self.inner.clients()
        }
        fn sample_grad(
            &self,
            m: usize,
            w: &[f64],
            batch: usize,
            rng: &mut crate::rng::StreamRng,
        ) -> crate::problem::GradSample {
            let diff: Vec<f64> = w.iter().zip(&self.center).map(|(a, b)| a - b).collect();
            assert!(p_norm(&diff, self.q).powi(2) <= self.radius_sq * (1.0 + 1e-12));
            self.inner.sample_grad(m, w, batch, rng)
        }
        fn population_grad(&self, m: usize, w: &[f64]) -> Vec<f64> {
            self.inner.population_grad(m, w)
        }
    }

    #[test]
    fn every_query_is_feasible_and_output_is_sparse() {
        let p = problem(32, 3, 4, 1);
        let mp = MirrorPair::for_dimension(32).unwrap();
        let w0 = vec![0.1; 32];
        let cfg = RestrictedConfig::new(w0.clone(), 0.25, mp, 0.05, 5, 30, 3);
        let fenced = Fenced {
            inner: &p,
            center: w0,
            radius_sq: 0.25,
            q: mp.q(),
        };
        let (w, _) = run_refedda_gt(&fenced, &cfg, 3, &TraceOptions::default(), &mut |_| {}).unwrap();
        assert!(support(&w).len() <= 3);
    }

    #[test]
    fn unconstrained_full_participation_is_tracked_dual_averaging() {
        // With Q = inf the server dual follows z <- z - K eta mean(g), the clients' w
        // is w0 + grad h*(z), and c - mean(c^m) stays at zero.
        let p = problem(16, 2, 3, 5);
        let mp = MirrorPair::new(3.0).unwrap();
        let w0 = vec![0.2; 16];
        let mut cfg = RestrictedConfig::new(w0.clone(), f64::INFINITY, mp, 0.03, 4, 12, 2);
        cfg.gradient = GradientMode::Exact;
        let mut duals = Vec::new();
        run_refedda_gt(&p, &cfg, 0, &TraceOptions::default(), &mut |v| {
            let c = v.server_tracker.unwrap();
            for i in 0..16 {
                let mean = v.trackers.iter().map(|t| t[i]).sum::<f64>() / 3.0;
                assert!((mean - c[i]).abs() < 1e-12);
            }
            duals.push(v.z[0].clone());
        })
        .unwrap();

        // independent oracle: every client applies exact gradients with the
        // previous round's average correction removed
        let mut z = vec![0.0; 16];
        let mut c_m = vec![vec![0.0; 16]; 3];
        let mut c = vec![0.0; 16];
        let prim = |z: &[f64]| -> Vec<f64> {
            mirror_inverse(z, &mp).iter().zip(&w0).map(|(a, b)| a + b).collect()
        };
        for want in &duals {
            for (a, b) in z.iter().zip(want) {
                assert!((a - b).abs() < 1e-10);
            }
            let mut mean_g = vec![0.0; 16];
            let mut new_c = Vec::new();
            for (j, cm) in c_m.iter().enumerate() {
                let mut zl = z.clone();
                let mut gsum = vec![0.0; 16];
                for _ in 0..4 {
                    let g = p.population_grad(j, &prim(&zl));
                    for i in 0..16 {
                        let gi = g[i] - cm[i] + c[i];
                        zl[i] -= 0.03 * gi;
                        gsum[i] += g[i];
                    }
                }
                let avg: Vec<f64> = gsum.iter().map(|v| v / 4.0).collect();
                for i in 0..16 {
                    mean_g[i] += (avg[i] - cm[i] + c[i]) / 3.0;
                }
                new_c.push(avg);
            }
            let mean_new: Vec<f64> = (0..16).map(|i| new_c.iter().map(|v| v[i]).sum::<f64>() / 3.0).collect();
            c = mean_new;
            c_m = new_c;
            z.iter_mut().zip(&mean_g).for_each(|(a, b)| *a -= 4.0 * 0.03 * b);
        }
    }

    #[test]
    fn client_tracker_becomes_average_sampled_gradient() {
        let p = problem(10, 2, 2, 2);
        let mp = MirrorPair::new(2.0).unwrap();
        let mut cfg = RestrictedConfig::new(vec![0.0; 10], 4.0, mp, 0.05, 3, 1, 2);
        cfg.gradient = GradientMode::Exact;
        let mut last = Vec::new();
        run_refedda_gt(&p, &cfg, 0, &TraceOptions::default(), &mut |v| last = v.trackers.to_vec()).unwrap();
        // recompute client 1's average gradient over its 3 steps
        let ball = BallConstraint::new(vec![0.0; 10], 4.0).unwrap();
        let mut z = vec![0.0; 10];
        let mut sum = vec![0.0; 10];
        for _ in 0..3 {
            let w = crate::mirror::prox_restricted(&z, &ball, &mp).unwrap();
            let g = p.population_grad(1, &w);
            z.iter_mut().zip(&g).for_each(|(a, b)| *a -= 0.05 * b);
            sum.iter_mut().zip(&g).for_each(|(a, b)| *a += b / 3.0);
        }
        for (a, b) in last[1].iter().zip(&sum) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn partial_participation_counts_samples_and_is_deterministic() {
        let p = problem(12, 2, 6, 3);
        let mp = MirrorPair::new(2.0).unwrap();
        let mut cfg = RestrictedConfig::new(vec![0.0; 12], 1.0, mp, 0.05, 2, 8, 2);
        cfg.participation = Participation::Uniform { clients: 2 };
        let a = run_refedda_gt(&p, &cfg, 11, &TraceOptions::default(), &mut |_| {}).unwrap();
        let b = run_refedda_gt(&p, &cfg, 11, &TraceOptions::default(), &mut |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.total_samples, 8 * 2 * 10 * 2);
        let s = cfg.participants(6, 11, 3);
        assert_eq!(s.len(), 2);
        assert!(s[0] < s[1]);
        cfg.participation = Participation::Uniform { clients: 7 };
        assert!(run_refedda_gt(&p, &cfg, 0, &TraceOptions::default(), &mut |_| {}).is_err());
    }
}
