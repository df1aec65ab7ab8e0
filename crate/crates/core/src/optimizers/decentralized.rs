use crate::error::{Error, Result};
use crate::gossip::{mix_columns, GossipMatrix};
use crate::mirror::{mirror_forward, MirrorPair};
use crate::problem::{GradientMode, GradientOracle};
use crate::rng::{derive_rng, StreamRole};

use super::{
    check_step, client_local_round, for_clients, normalized_delta, tracker_update_decentralized, Clock,
    LocalRoundSpec, Retrieval, RoundView, Snapshot, TraceOptions, Trajectory,
};

#[derive(Clone, Debug, PartialEq)]
pub struct DecentralizedConfig {
    pub eta_c: f64,
    pub eta_s: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub gradient_tracking: bool,
    pub mirror: MirrorPair,
    pub w0: Vec<f64>,
    pub gradient: GradientMode,
}

impl DecentralizedConfig {
    /// Defaults: `eta_s = 1`, tracking on, `w0 = 0`, batches of 10.
    pub fn new(dim: usize, mirror: MirrorPair, eta_c: f64, local_steps: usize, rounds: usize) -> Self {
        Self {
            eta_c,
            eta_s: 1.0,
            local_steps,
            rounds,
            gradient_tracking: true,
            mirror,
            w0: vec![0.0; dim],
            gradient: GradientMode::Stochastic { batch: 10 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_step("eta_c", self.eta_c)?;
        check_step("eta_s", self.eta_s)?;
        if self.local_steps == 0 || self.rounds == 0 {
            return Err(Error::InvalidConfig(format!(
                "K and R must be >= 1 (K = {}, R = {})",
                self.local_steps, self.rounds
            )));
        }
        if matches!(self.gradient, GradientMode::Stochastic { batch: 0 }) {
            return Err(Error::InvalidConfig("batch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Decentralized federated dual averaging, optionally with gradient tracking.
///
/// Every client starts from `z = grad h(w0)`. Each round runs `K` local dual
/// steps per client, updates the trackers, and gossips
/// `z_{r,0}^j + K eta_s eta_c Delta^j` with `U`. Snapshots hold the running
/// averages of the round-start primal points `w_{r,0}^m`.
pub fn run_dfedda<O: GradientOracle + ?Sized>(
    oracle: &O,
    u: &GossipMatrix,
    cfg: &DecentralizedConfig,
    seed: u64,
    opts: &TraceOptions,
    observer: &mut dyn FnMut(&RoundView<'_>),
) -> Result<Trajectory> {
    cfg.validate()?;
    let (m, d) = (oracle.clients(), oracle.dim());
    if u.clients() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: u.clients(),
        });
    }
    if cfg.w0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cfg.w0.len(),
        });
    }
    let clients: Vec<usize> = (0..m).collect();
    let clock = Clock::new(opts.wall_time);
    let mut traj = Trajectory {
        rounds: cfg.rounds,
        ..Default::default()
    };

    let mut z = vec![mirror_forward(&cfg.w0, &cfg.mirror); m];
    let mut trackers = vec![vec![0.0; d]; m];
    if cfg.gradient_tracking {
        // c_0^m = -grad F_m(w0) + sum_j u_jm grad F_j(w0)
        let grads = for_clients(&clients, opts.parallel, |j| {
            let mut rng = derive_rng(seed, j, 0, StreamRole::TrackerInit);
            Ok(cfg.gradient.query(oracle, j, &cfg.w0, &mut rng))
        })?;
        let mixed = mix_columns(&grads, u)?;
        trackers = grads
            .iter()
            .zip(&mixed)
            .map(|(g, mg)| mg.iter().zip(g).map(|(a, b)| a - b).collect())
            .collect();
        traj.init_samples = (m * cfg.gradient.samples_per_query()) as u64;
    }
    observer(&RoundView {
        round: 0,
        z: &z,
        trackers: &trackers,
        server_tracker: None,
    });

    let per_round = (cfg.local_steps * cfg.gradient.samples_per_query() * m) as u64;
    let send_scale = cfg.local_steps as f64 * cfg.eta_s * cfg.eta_c;
    let mut w_sum = vec![vec![0.0; d]; m];
    for r in 0..cfg.rounds {
        let spec = LocalRoundSpec {
            eta_c: cfg.eta_c,
            local_steps: cfg.local_steps,
            gradient: cfg.gradient,
            retrieval: Retrieval::Mirror(&cfg.mirror),
            seed,
            round: r,
        };
        let outs = for_clients(&clients, opts.parallel, |j| {
            let tracking = cfg.gradient_tracking.then(|| trackers[j].as_slice());
            client_local_round(oracle, j, &z[j], tracking, &spec)
        })?;
        let deltas: Vec<Vec<f64>> = outs
            .iter()
            .zip(&z)
            .map(|(o, z0)| normalized_delta(&o.z_end, z0, cfg.local_steps, cfg.eta_c))
            .collect();
        for (s, o) in w_sum.iter_mut().zip(&outs) {
            s.iter_mut().zip(&o.w0).for_each(|(a, b)| *a += b);
        }
        if cfg.gradient_tracking {
            trackers = tracker_update_decentralized(&trackers, &deltas, u)?;
        }
        let sent: Vec<Vec<f64>> = z
            .iter()
            .zip(&deltas)
            .map(|(z0, dl)| z0.iter().zip(dl).map(|(a, b)| a + send_scale * b).collect())
            .collect();
        z = mix_columns(&sent, u)?;
        traj.total_samples += per_round;

        observer(&RoundView {
            round: r + 1,
            z: &z,
            trackers: &trackers,
            server_tracker: None,
        });
        if opts.records(r + 1, cfg.rounds) {
            let inv = 1.0 / (r + 1) as f64;
            traj.snapshots.push(Snapshot {
                round: r + 1,
                w_hat: w_sum.iter().map(|s| s.iter().map(|v| v * inv).collect()).collect(),
                samples: traj.total_samples,
                wall_ms: clock.ms(),
            });
        }
    }
    Ok(traj)
}
