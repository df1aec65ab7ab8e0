use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gossip::{load_gossip_csv, make_gossip, spectral_info, GossipMatrix, Topology};
use crate::mirror::{p_norm, MirrorPair};
use crate::optimizers::{
    h_upper_from_radius, recommend_stepsize, run_dfedda, run_multistep, run_refedda_gt, DecentralizedConfig,
    MultistepConfig, RestrictedConfig, ScheduleRule, Snapshot, StageSource, StepParams, TraceOptions, Variant,
};
use crate::problem::{GradientMode, GradientOracle, Problem};

use super::config::{Algorithm, MethodSpec, RunConfig};
use super::metrics::{evaluate, MetricsRow};

/// A (method, seed) cell that did not finish.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFailure {
    pub method: String,
    pub seed: u64,
    pub error: String,
    pub validation: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by seed, then method (config order), then round.
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<CellFailure>,
}

/// Gossip matrix for `clients` nodes; file topologies are read here.
pub fn build_gossip(topology: &Topology, clients: usize) -> Result<GossipMatrix> {
    let u = match topology {
        Topology::File { path } => load_gossip_csv(path)?,
        t => make_gossip(t, clients)?,
    };
    if u.clients() != clients {
        return Err(Error::InvalidGossip(format!(
            "topology has {} nodes but the problem has {clients} clients",
            u.clients()
        )));
    }
    Ok(u)
}

/// Run every (method, seed) cell. Cells fail independently; only an unusable
/// topology aborts the whole experiment.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    let clients = cfg.problem.clients();
    let needs_graph = cfg.methods.iter().any(|m| m.algorithm.is_decentralized());
    let u = if needs_graph {
        Some(build_gossip(&cfg.topology, clients)?)
    } else {
        None
    };

    let problems: Vec<Result<Problem>> = map_maybe_par(cfg.parallel, &cfg.seeds, |&seed| {
        cfg.problem.generate(cfg.problem_seed.unwrap_or(seed))
    });

    let cells: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..cfg.methods.len()).map(move |m| (s, m)))
        .collect();
    let outcomes: Vec<Result<Vec<MetricsRow>>> = map_maybe_par(cfg.parallel, &cells, |&(si, mi)| {
        let problem = problems[si].as_ref().map_err(clone_error)?;
        run_cell(problem, u.as_ref(), &cfg.methods[mi], cfg.seeds[si], cfg)
    });

    let mut result = ExperimentResult::default();
    for (&(si, mi), outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(rows) => result.rows.extend(rows),
            Err(e) => result.failures.push(CellFailure {
                method: cfg.methods[mi].label().to_string(),
                seed: cfg.seeds[si],
                validation: e.is_validation(),
                error: e.to_string(),
            }),
        }
    }
    Ok(result)
}

fn map_maybe_par<T: Sync, U: Send>(parallel: bool, items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    if parallel {
        items.par_iter().map(&f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Problem-generation errors are shared by every cell of a seed.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::NotConverged { iters, residual } => Error::NotConverged {
            iters: *iters,
            residual: *residual,
        },
        e if e.is_validation() => Error::InvalidConfig(e.to_string()),
        e => Error::Parse(e.to_string()),
    }
}

/// `||w*||_1^2`, which bounds `||0 - w*||_q^2` for every `q >= 1`.
fn oracle_radius(problem: &Problem) -> f64 {
    let r = p_norm(problem.w_star(), 1.0).powi(2);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

fn run_cell(
    problem: &Problem,
    u: Option<&GossipMatrix>,
    method: &MethodSpec,
    seed: u64,
    cfg: &RunConfig,
) -> Result<Vec<MetricsRow>> {
    let d = problem.dim();
    let m = problem.clients();
    let s = problem.sparsity();
    let mirror = match method.mirror_p {
        Some(p) => MirrorPair::new(p)?,
        None => MirrorPair::for_dimension(d)?,
    };
    let gradient = if method.exact_gradients {
        GradientMode::Exact
    } else {
        GradientMode::Stochastic { batch: method.batch }
    };
    let radius = method.radius_sq.unwrap_or_else(|| oracle_radius(problem));
    let constants = problem.constants();
    let mut opts = TraceOptions {
        every: cfg.cadence(method.rounds),
        wall_time: cfg.record_wall_time,
        parallel: cfg.parallel,
    };
    let step_params = |mixing| StepParams {
        l_smooth: constants.l_smooth,
        local_steps: method.local_steps,
        rounds: method.rounds,
        sigma: constants.sigma_noise,
        dim: d,
        h_star: method.h_star.unwrap_or_else(|| h_upper_from_radius(radius, &mirror)),
        heterogeneity: problem.heterogeneity(mirror.p()),
        mixing,
        radius_sq: radius,
        clients: m,
        delta: method.delta,
    };

    let snapshots: Vec<Snapshot> = match method.algorithm {
        Algorithm::Dfedda | Algorithm::DfeddaGt => {
            let u = u.ok_or_else(|| Error::InvalidConfig("decentralized method needs a topology".into()))?;
            let tracking = method.algorithm == Algorithm::DfeddaGt;
            let eta_c = match method.eta_c {
                Some(eta) => eta,
                None => {
                    let variant = if tracking { Variant::DfeddaGt } else { Variant::Dfedda };
                    let params = step_params(Some(spectral_info(u)?));
                    recommend_stepsize(variant, &params)?.0 * method.eta_scale
                }
            };
            let mut dc = DecentralizedConfig::new(d, mirror, eta_c, method.local_steps, method.rounds);
            dc.eta_s = method.eta_s;
            dc.gradient_tracking = tracking;
            dc.gradient = gradient;
            run_dfedda(problem, u, &dc, seed, &opts, &mut |_| {})?.snapshots
        }
        Algorithm::RefeddaGt => {
            let eta_c = match method.eta_c {
                Some(eta) => eta,
                None => recommend_stepsize(Variant::RefeddaGt, &step_params(None))?.0 * method.eta_scale,
            };
            let mut rc = RestrictedConfig::new(vec![0.0; d], radius, mirror, eta_c, method.local_steps, method.rounds, s);
            rc.eta_s = method.eta_s;
            rc.participation = method.participation;
            rc.gradient = gradient;
            run_refedda_gt(problem, &rc, seed, &opts, &mut |_| {})?.1.snapshots
        }
        Algorithm::Multistep => {
            let mut mc = MultistepConfig::new(vec![0.0; d], radius, method.epsilon.unwrap_or(radius / 16.0), mirror, s);
            mc.delta = method.delta;
            mc.stages = match &method.stages {
                Some(st) => StageSource::Explicit(st.clone()),
                None => StageSource::Auto(ScheduleRule {
                    round_const: method.round_const,
                    step_const: method.step_const,
                }),
            };
            mc.eta_scale = method.eta_scale;
            mc.eta_c = method.eta_c;
            mc.gradient = gradient;
            mc.participation = method.participation;
            let total: usize = mc.schedule(&constants, m)?.stages.iter().map(|st| st.rounds).sum();
            opts.every = cfg.cadence(total.max(1));
            run_multistep(problem, &constants, &mc, seed, &opts, &mut |_, _| {})?.trajectory.snapshots
        }
    };

    let w_star = problem.w_star();
    Ok(snapshots
        .iter()
        .map(|snap| {
            let e = evaluate(problem, &snap.w_hat, w_star, s);
            MetricsRow {
                method: method.label().to_string(),
                seed,
                round: snap.round * method.round_scale,
                samples: snap.samples,
                gap: e.gap,
                l1: e.l1,
                l2: e.l2,
                support: e.support,
                wall_ms: snap.wall_ms,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub final_round: usize,
    pub seeds: usize,
    pub median_gap: f64,
    pub median_l1: f64,
    pub median_l2: f64,
    /// Fraction of seeds whose final estimate has the true support.
    pub support_rate: f64,
}

/// Seed-by-seed comparison of final l1 errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairOrdering {
    pub a: String,
    pub b: String,
    /// Seeds where `a` ends with strictly lower l1 error than `b`.
    pub a_lower: usize,
    pub compared: usize,
    pub median_l1_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub methods: Vec<MethodSummary>,
    pub pairwise: Vec<PairOrdering>,
    pub failures: Vec<CellFailure>,
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Final-round medians per method and pairwise l1 orderings.
pub fn summarize(cfg: &RunConfig, result: &ExperimentResult) -> Summary {
    let labels: Vec<&str> = cfg.methods.iter().map(|m| m.label()).collect();
    // final row per (method, seed)
    let finals: Vec<Vec<Option<&MetricsRow>>> = labels
        .iter()
        .map(|&label| {
            cfg.seeds
                .iter()
                .map(|&seed| {
                    result
                        .rows
                        .iter()
                        .filter(|r| r.method == label && r.seed == seed)
                        .max_by_key(|r| r.round)
                })
                .collect()
        })
        .collect();

    let methods = labels
        .iter()
        .zip(&finals)
        .map(|(&label, rows)| {
            let done: Vec<&MetricsRow> = rows.iter().flatten().copied().collect();
            let n = done.len();
            MethodSummary {
                method: label.to_string(),
                final_round: done.iter().map(|r| r.round).max().unwrap_or(0),
                seeds: n,
                median_gap: median(done.iter().map(|r| r.gap).collect()),
                median_l1: median(done.iter().map(|r| r.l1).collect()),
                median_l2: median(done.iter().map(|r| r.l2).collect()),
                support_rate: if n == 0 {
                    0.0
                } else {
                    done.iter().filter(|r| r.support).count() as f64 / n as f64
                },
            }
        })
        .collect();

    let mut pairwise = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let diffs: Vec<f64> = finals[i]
                .iter()
                .zip(&finals[j])
                .filter_map(|(a, b)| Some(a.as_ref()?.l1 - b.as_ref()?.l1))
                .collect();
            pairwise.push(PairOrdering {
                a: labels[i].to_string(),
                b: labels[j].to_string(),
                a_lower: diffs.iter().filter(|d| **d < 0.0).count(),
                compared: diffs.len(),
                median_l1_diff: median(diffs),
            });
        }
    }
    Summary {
        methods,
        pairwise,
        failures: result.failures.clone(),
    }
}

/// Run the experiment and summarize it.
pub fn compare_methods(cfg: &RunConfig) -> Result<(ExperimentResult, Summary)> {
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("compare needs at least one method".into()));
    }
    let result = run_experiment(cfg)?;
    let summary = summarize(cfg, &result);
    Ok((result, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;

    fn config(methods: &str) -> RunConfig {
        RunConfig::from_json(&format!(
            r#"{{
                "problem": {{"kind": "linear", "dim": 24, "sparsity": 3, "clients": 4}},
                "topology": {{"kind": "ring"}},
                "methods": {methods},
                "seeds": [1, 2, 3]
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn identical_methods_give_identical_summaries() {
        let cfg = config(
            r#"[{"algorithm": "dfedda_gt", "rounds": 20, "eta_c": 0.05},
                {"algorithm": "dfedda_gt", "rounds": 20, "eta_c": 0.05}]"#,
        );
        let (_, s) = compare_methods(&cfg).unwrap();
        let (a, b) = (&s.methods[0], &s.methods[1]);
        assert_eq!(b.method, "dfedda_gt_2");
        assert_eq!(
            (a.median_gap, a.median_l1, a.median_l2, a.support_rate),
            (b.median_gap, b.median_l1, b.median_l2, b.support_rate)
        );
        assert_eq!(s.pairwise[0].a_lower, 0);
        assert_eq!(s.pairwise[0].median_l1_diff, 0.0);
    }

    #[test]
    fn empty_method_list_is_rejected() {
        let mut cfg = config(r#"[{"algorithm": "dfedda"}]"#);
        cfg.methods.clear();
        assert!(compare_methods(&cfg).unwrap_err().is_validation());
    }

    #[test]
    fn failing_cell_does_not_stop_others() {
        // a huge fixed step overflows the dual iterate for one method only
        let cfg = config(
            r#"[{"algorithm": "dfedda", "rounds": 10, "eta_c": 1e300, "exact_gradients": true},
                {"algorithm": "refedda_gt", "rounds": 10, "eta_c": 0.01}]"#,
        );
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.failures.len(), 3);
        assert!(res.failures.iter().all(|f| f.method == "dfedda" && !f.validation));
        assert!(res.rows.iter().all(|r| r.method == "refedda_gt"));
        assert!(!res.rows.is_empty());
    }

    #[test]
    fn round_scale_and_cadence() {
        let cfg = config(r#"[{"algorithm": "refedda_gt", "rounds": 10, "eta_c": 0.01, "round_scale": 4}]"#);
        let mut cfg = cfg;
        cfg.eval_every = Some(5);
        let res = run_experiment(&cfg).unwrap();
        let rounds: Vec<usize> = res.rows.iter().filter(|r| r.seed == 1).map(|r| r.round).collect();
        assert_eq!(rounds, vec![20, 40]);
        let samples: Vec<u64> = res.rows.iter().filter(|r| r.seed == 1).map(|r| r.samples).collect();
        assert_eq!(samples, vec![5 * 10 * 10 * 4, 10 * 10 * 10 * 4]);
    }

    #[test]
    fn topology_size_mismatch_is_a_validation_error() {
        let mut cfg = config(r#"[{"algorithm": "dfedda"}]"#);
        cfg.topology = Topology::Custom {
            entries: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        assert!(run_experiment(&cfg).unwrap_err().is_validation());
    }
}
