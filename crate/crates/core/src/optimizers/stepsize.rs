use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gossip::MixingInfo;
use crate::mirror::MirrorPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dfedda,
    DfeddaGt,
    RefeddaGt,
}

/// Symbols the step-size rules draw on. Fields a rule does not use are ignored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub l_smooth: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub sigma: f64,
    pub dim: usize,
    /// `h(w*)`, or an upper bound such as [`h_upper_from_radius`].
    pub h_star: f64,
    /// `(1/M) sum_m ||grad f_m(w*)||_p^2`
    pub heterogeneity: f64,
    /// Required by the decentralized rules.
    pub mixing: Option<MixingInfo>,
    pub radius_sq: f64,
    pub clients: usize,
    pub delta: f64,
}

/// `Q / (2 (q - 1))`, the largest `h(w - w0)` on the ball `||w - w0||_q^2 <= Q`.
pub fn h_upper_from_radius(radius_sq: f64, mirror: &MirrorPair) -> f64 {
    radius_sq / (2.0 * (mirror.q() - 1.0))
}

/// Recommended `(eta_c, eta_s)`; `eta_s` is always 1. All logarithms are natural.
pub fn recommend_stepsize(variant: Variant, p: &StepParams) -> Result<(f64, f64)> {
    if p.local_steps == 0 || p.rounds == 0 {
        return Err(Error::InvalidConfig("K and R must be >= 1".into()));
    }
    if !(p.l_smooth > 0.0) || p.dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "step-size rule needs L > 0 and d >= 2 (L = {}, d = {})",
            p.l_smooth, p.dim
        )));
    }
    let k = p.local_steps as f64;
    let r = p.rounds as f64;
    let l = p.l_smooth;
    let ln_d = (p.dim as f64).ln();
    let mixing = || {
        p.mixing
            .ok_or_else(|| Error::InvalidConfig("decentralized step size needs the mixing time".into()))
    };
    let eta = match variant {
        Variant::Dfedda => {
            let tau = mixing()?.tau_base4;
            let a = 1.0 / (tau * l * k);
            let b = p.h_star.cbrt() / ((tau * tau * l * r * p.heterogeneity).cbrt() * k);
            let c = p.h_star.sqrt() / ((tau * r * k).sqrt() * ln_d * ln_d * p.sigma);
            a.min(b).min(c)
        }
        Variant::DfeddaGt => {
            let tau = mixing()?.tau_base8;
            let a = 1.0 / (tau * tau * l * k);
            let b = p.h_star.sqrt() / (tau * (r * k).sqrt() * ln_d * ln_d * p.sigma);
            a.min(b)
        }
        Variant::RefeddaGt => {
            let q = p.radius_sq;
            let m = p.clients.max(1) as f64;
            let s2 = p.sigma * p.sigma;
            let a = 1.0 / (48.0 * l * k);
            let b = (2.0 * q / (r * k * s2 * ln_d)).sqrt();
            let c = (2.0 * q * m * ln_d / (k * s2 * (2.0 * p.dim as f64 / p.delta).ln())).sqrt();
            a.min(b).min(c)
        }
    };
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidConfig(format!("step-size rule produced {eta}")));
    }
    Ok((eta, 1.0))
}
