use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gossip::Topology;
use crate::optimizers::Participation;
use crate::problem::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dfedda,
    DfeddaGt,
    RefeddaGt,
    Multistep,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dfedda => "dfedda",
            Algorithm::DfeddaGt => "dfedda_gt",
            Algorithm::RefeddaGt => "refedda_gt",
            Algorithm::Multistep => "multistep",
        }
    }

    pub fn is_decentralized(&self) -> bool {
        matches!(self, Algorithm::Dfedda | Algorithm::DfeddaGt)
    }
}

fn ten() -> usize {
    10
}

fn default_rounds() -> usize {
    500
}

fn one_f() -> f64 {
    1.0
}

fn one_u() -> usize {
    1
}

fn default_delta() -> f64 {
    0.1
}

fn default_round_const() -> f64 {
    64.0
}

fn default_step_const() -> f64 {
    16384.0
}

/// One optimizer run per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub algorithm: Algorithm,
    /// Name in the CSV `method` column; defaults to the algorithm name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default = "ten")]
    pub local_steps: usize,
    /// Communication rounds (per stage for `multistep` with explicit stages ignored).
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "ten")]
    pub batch: usize,
    /// Use exact local gradients instead of minibatches.
    #[serde(default)]
    pub exact_gradients: bool,
    /// Client step size; `null` uses the recommended value.
    #[serde(default)]
    pub eta_c: Option<f64>,
    /// Factor applied to the recommended client step.
    #[serde(default = "one_f")]
    pub eta_scale: f64,
    #[serde(default = "one_f")]
    pub eta_s: f64,
    /// Mirror exponent; `null` means `2 ln d`.
    #[serde(default)]
    pub mirror_p: Option<f64>,
    /// Squared q-norm radius `Q`; `null` uses `||w*||_1^2`, which bounds
    /// `||w0 - w*||_q^2` for the synthetic problems (`w0 = 0`).
    #[serde(default)]
    pub radius_sq: Option<f64>,
    /// Override for `h(w*)` in the decentralized step-size rules.
    #[serde(default)]
    pub h_star: Option<f64>,
    #[serde(default)]
    pub participation: Participation,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Multistep target accuracy; `null` means `Q / 16`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_round_const")]
    pub round_const: f64,
    #[serde(default = "default_step_const")]
    pub step_const: f64,
    /// Explicit `[R_n, K_n]` stages for multistep.
    #[serde(default)]
    pub stages: Option<Vec<(usize, usize)>>,
    /// Multiplier for the `round` column, e.g. `M` to put centralized
    /// baselines on a decentralized round axis.
    #[serde(default = "one_u")]
    pub round_scale: usize,
}

impl MethodSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        serde_json::from_value(serde_json::json!({ "algorithm": algorithm })).expect("defaults are valid")
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.algorithm.name())
    }

    fn validate(&self, at: &str) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::InvalidConfig(format!("{at}.{key}: {why}")));
        if self.local_steps == 0 {
            return bad("local_steps", "must be >= 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds", "must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch", "must be >= 1".into());
        }
        if self.round_scale == 0 {
            return bad("round_scale", "must be >= 1".into());
        }
        for (key, v) in [
            ("eta_c", self.eta_c),
            ("radius_sq", self.radius_sq),
            ("h_star", self.h_star),
            ("epsilon", self.epsilon),
            ("eta_scale", Some(self.eta_scale)),
            ("eta_s", Some(self.eta_s)),
            ("round_const", Some(self.round_const)),
            ("step_const", Some(self.step_const)),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return bad(key, format!("must be a positive number, got {v}"));
                }
            }
        }
        if let Some(p) = self.mirror_p {
            if !(p.is_finite() && p >= 2.0) {
                return bad("mirror_p", format!("must be >= 2, got {p}"));
            }
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta", format!("must be in (0, 1], got {}", self.delta));
        }
        if let Some(stages) = &self.stages {
            if stages.iter().any(|&(r, k)| r == 0 || k == 0) {
                return bad("stages", "every [R, K] pair must be >= 1".into());
            }
        }
        Ok(())
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> String {
    "results".into()
}

fn default_name() -> String {
    "experiment".into()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub problem: ProblemSpec,
    pub topology: Topology,
    /// Shorthand for a single method; folded into `methods` on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodSpec>,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Fixed problem instance for every seed; `null` draws one per seed.
    #[serde(default)]
    pub problem_seed: Option<u64>,
    /// Evaluate every `k` rounds; `null` means `max(1, R / 200)`.
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Fill the `wall_ms` column (makes the CSV non-reproducible).
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "yes")]
    pub parallel: bool,
}

impl RunConfig {
    /// Parse and resolve: fold `method` into `methods`, give duplicate labels a
    /// numeric suffix, validate every field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.resolve()
    }

    pub fn resolve(mut self) -> Result<Self> {
        if let Some(m) = self.method.take() {
            self.methods.insert(0, m);
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no method given (set `method` or `methods`)".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds: list is empty".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::InvalidConfig("eval_every: must be >= 1".into()));
        }
        self.problem.validate()?;
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, m) in self.methods.iter_mut().enumerate() {
            m.validate(&format!("methods[{i}]"))?;
            let base = m.label().to_string();
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            if *count > 1 {
                m.label = Some(format!("{base}_{count}"));
            } else {
                m.label = Some(base);
            }
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Evaluation cadence for a run of `rounds` rounds.
    pub fn cadence(&self, rounds: usize) -> usize {
        self.eval_every.unwrap_or((rounds / 200).max(1))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text)
}
