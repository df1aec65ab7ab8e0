use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gossip::column_mean;
use crate::mirror::{p_norm, sparse_top_s, support};
use crate::problem::Problem;

pub const CSV_HEADER: [&str; 9] = ["method", "seed", "round", "samples", "gap", "l1", "l2", "support", "wall_ms"];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub round: usize,
    pub samples: u64,
    pub gap: f64,
    pub l1: f64,
    pub l2: f64,
    pub support: bool,
    pub wall_ms: f64,
}

/// Quality of a set of per-client estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// `(1/M) sum_m f(w_m) - f(w*)`
    pub gap: f64,
    pub l1: f64,
    pub l2: f64,
    /// `Sparse(mean_m w_m; s)` has exactly the support of `w*`.
    pub support: bool,
}

pub fn evaluate(problem: &Problem, w_hat: &[Vec<f64>], w_star: &[f64], sparsity: usize) -> Evaluation {
    let n = w_hat.len() as f64;
    let f_star = problem.global_loss(w_star);
    let (mut gap, mut l1, mut l2) = (0.0, 0.0, 0.0);
    for w in w_hat {
        let diff: Vec<f64> = w.iter().zip(w_star).map(|(a, b)| a - b).collect();
        gap += problem.global_loss(w) - f_star;
        l1 += p_norm(&diff, 1.0);
        l2 += p_norm(&diff, 2.0);
    }
    let mean = column_mean(w_hat);
    Evaluation {
        gap: gap / n,
        l1: l1 / n,
        l2: l2 / n,
        support: support(&sparse_top_s(&mean, sparsity)) == support(w_star),
    }
}

/// Write rows with the fixed header. Floats use Rust's shortest round-trip
/// formatting (exponent form for extreme magnitudes), independent of locale.
pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.round.to_string(),
            r.samples.to_string(),
            format!("{:?}", r.gap),
            format!("{:?}", r.l1),
            format!("{:?}", r.l2),
            r.support.to_string(),
            format!("{:?}", r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

pub fn emit_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rows, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{gen_linear, LinearSpec};

    fn problem() -> Problem {
        Problem::Linear(gen_linear(&LinearSpec::new(10, 3, 3), 1).unwrap())
    }

    #[test]
    fn perfect_estimates() {
        let p = problem();
        let w = p.w_star().to_vec();
        let e = evaluate(&p, &[w.clone(), w.clone()], &w, 3);
        assert_eq!(e.gap, 0.0);
        assert_eq!(e.l1, 0.0);
        assert_eq!(e.l2, 0.0);
        assert!(e.support);
    }

    #[test]
    fn local_optima_gap_in_closed_form() {
        // f is a quadratic minimized at w*, so f(w) - f(w*) = (d0^2 + v ||rest||^2) / 2
        let p = problem();
        let Problem::Linear(lp) = &p else { unreachable!() };
        let w_star = p.w_star().to_vec();
        let e = evaluate(&p, &lp.local_optima, &w_star, 3);
        let want: f64 = lp
            .local_optima
            .iter()
            .map(|w| {
                let d0 = w[0] - w_star[0];
                let rest: f64 = w[1..].iter().zip(&w_star[1..]).map(|(a, b)| (a - b).powi(2)).sum();
                0.5 * (d0 * d0 + lp.feature_var * rest)
            })
            .sum::<f64>()
            / 3.0;
        assert!((e.gap - want).abs() < 1e-12 * want.max(1.0));
        // the mean of the local optima is w*
        assert!(e.support);
    }

    #[test]
    fn flipped_off_support_coordinate_breaks_support() {
        let p = problem();
        let w_star = p.w_star().to_vec();
        let mut w = w_star.clone();
        w[2] = 0.0;
        w[7] = 5.0;
        assert!(!evaluate(&p, &[w], &w_star, 3).support);
    }

    #[test]
    fn csv_header_and_formatting() {
        let rows = vec![MetricsRow {
            method: "dfedda_gt".into(),
            seed: 3,
            round: 20,
            samples: 4000,
            gap: 0.125,
            l1: 1e-20,
            l2: 2.0,
            support: true,
            wall_ms: 0.0,
        }];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("method,seed,round,samples,gap,l1,l2,support,wall_ms"));
        assert_eq!(lines.next(), Some("dfedda_gt,3,20,4000,0.125,1e-20,2.0,true,0.0"));
    }
}
