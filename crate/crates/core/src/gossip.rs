//! Gossip matrices: construction, validation, spectral gap, and one mixing step.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::p_norm;

/// Entry-wise tolerance for symmetry and stochasticity checks.
pub const GOSSIP_TOL: f64 = 1e-12;

/// Above this size sigma_2 comes from power iteration instead of a dense eigensolve.
const DENSE_EIGEN_MAX: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Topology {
    Complete,
    /// Path graph with Metropolis-Hastings weights.
    Chain,
    /// Cycle with Metropolis-Hastings weights.
    Ring,
    /// Row-major M x M matrix.
    Custom { entries: Vec<Vec<f64>> },
    /// M x M matrix read from a comma-separated file.
    File { path: String },
}

/// Symmetric doubly-stochastic mixing matrix with its cached `sigma_2`.
#[derive(Clone, Debug)]
pub struct GossipMatrix {
    m: usize,
    // row-major
    entries: Vec<f64>,
    sigma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingInfo {
    pub sigma2: f64,
    pub spectral_gap: f64,
    /// `ln(4M) / (2 ln(1/sigma_2))`, at least 1.
    pub tau_base4: f64,
    /// `ln(8M) / (2 ln(1/sigma_2))`, at least 1.
    pub tau_base8: f64,
}

impl GossipMatrix {
    /// Validate a row-major `m x m` matrix and compute its `sigma_2`.
    pub fn new(m: usize, entries: Vec<f64>) -> Result<Self> {
        if m == 0 || entries.len() != m * m {
            return Err(Error::InvalidGossip(format!(
                "expected {m}x{m} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGossip("non-finite entry".into()));
        }
        for i in 0..m {
            for j in 0..m {
                let (a, b) = (entries[i * m + j], entries[j * m + i]);
                if (a - b).abs() > GOSSIP_TOL {
                    return Err(Error::InvalidGossip(format!(
                        "not symmetric: u[{i}][{j}] = {a} but u[{j}][{i}] = {b}"
                    )));
                }
                if i != j && a < 0.0 {
                    return Err(Error::InvalidGossip(format!(
                        "negative off-diagonal entry u[{i}][{j}] = {a}"
                    )));
                }
            }
        }
        for i in 0..m {
            let row: f64 = entries[i * m..(i + 1) * m].iter().sum();
            if (row - 1.0).abs() > GOSSIP_TOL {
                return Err(Error::InvalidGossip(format!(
                    "not doubly stochastic: row {i} sums to {row}"
                )));
            }
            let col: f64 = (0..m).map(|r| entries[r * m + i]).sum();
            if (col - 1.0).abs() > GOSSIP_TOL {
                return Err(Error::InvalidGossip(format!(
                    "not doubly stochastic: column {i} sums to {col}"
                )));
            }
        }
        let sigma2 = if m <= DENSE_EIGEN_MAX {
            sigma2_dense(m, &entries)
        } else {
            sigma2_power_iteration(m, &entries, 1e-10, 1_000_000)
        };
        if sigma2 >= 1.0 - GOSSIP_TOL {
            return Err(Error::AssumptionViolated { sigma2 });
        }
        Ok(Self { m, entries, sigma2 })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::InvalidGossip(format!(
                "row {i} has {} entries, expected {m}",
                r.len()
            )));
        }
        Self::new(m, rows.concat())
    }

    pub fn clients(&self) -> usize {
        self.m
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `u_ij`
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_complete(&self) -> bool {
        let v = 1.0 / self.m as f64;
        self.entries.iter().all(|u| (u - v).abs() <= GOSSIP_TOL)
    }
}

/// Build the gossip matrix for `topology` over `m` clients.
pub fn make_gossip(topology: &Topology, m: usize) -> Result<GossipMatrix> {
    if m < 2 {
        return Err(Error::InvalidGossip(format!("need at least 2 clients, got {m}")));
    }
    match topology {
        Topology::Complete => GossipMatrix::new(m, vec![1.0 / m as f64; m * m]),
        Topology::Chain => {
            let edges: Vec<(usize, usize)> = (0..m - 1).map(|i| (i, i + 1)).collect();
            metropolis(m, &edges)
        }
        Topology::Ring => {
            let mut edges: Vec<(usize, usize)> = (0..m - 1).map(|i| (i, i + 1)).collect();
            // a 2-cycle is the single edge again
            if m > 2 {
                edges.push((m - 1, 0));
            }
            metropolis(m, &edges)
        }
        Topology::Custom { entries } => {
            let g = GossipMatrix::from_rows(entries)?;
            check_size(&g, m)?;
            Ok(g)
        }
        Topology::File { path } => {
            let g = load_gossip_csv(path)?;
            check_size(&g, m)?;
            Ok(g)
        }
    }
}

fn check_size(g: &GossipMatrix, m: usize) -> Result<()> {
    if g.clients() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: g.clients(),
        });
    }
    Ok(())
}

/// Metropolis-Hastings weights `1 / (1 + max(deg_i, deg_j))` on edges,
/// with the diagonal filling each row to 1.
fn metropolis(m: usize, edges: &[(usize, usize)]) -> Result<GossipMatrix> {
    let mut deg = vec![0usize; m];
    for &(i, j) in edges {
        deg[i] += 1;
        deg[j] += 1;
    }
    let mut u = vec![0.0; m * m];
    for &(i, j) in edges {
        let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        u[i * m + j] = w;
        u[j * m + i] = w;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| u[i * m + j]).sum();
        u[i * m + i] = 1.0 - off;
    }
    GossipMatrix::new(m, u)
}

/// Parse an `M x M` comma-separated matrix (no header, `#` comments allowed).
pub fn parse_gossip_csv(text: &str) -> Result<GossipMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {i}, column {j}: {e} ({f:?})")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidGossip("empty matrix".into()));
    }
    GossipMatrix::from_rows(&rows)
}

pub fn load_gossip_csv(path: impl AsRef<Path>) -> Result<GossipMatrix> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_gossip_csv(&text)
}

/// Largest eigenvalue modulus of `U - J_M` via a dense symmetric eigensolve.
pub fn sigma2_dense(m: usize, entries: &[f64]) -> f64 {
    let inv = 1.0 / m as f64;
    let b = DMatrix::from_fn(m, m, |i, j| entries[i * m + j] - inv);
    let eig = b.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs()))
}

/// Largest eigenvalue modulus of `U - J_M` by power iteration.
///
/// Iterates `v <- (U - J) v / ||(U - J) v||` and tracks `||(U - J) v||`,
/// which converges to the spectral radius even when `+/-lambda` are both present.
pub fn sigma2_power_iteration(m: usize, entries: &[f64], tol: f64, max_iters: usize) -> f64 {
    let apply = |v: &[f64]| -> Vec<f64> {
        let mean = v.iter().sum::<f64>() / m as f64;
        (0..m)
            .map(|i| {
                let row = &entries[i * m..(i + 1) * m];
                row.iter().zip(v).map(|(u, x)| u * x).sum::<f64>() - mean
            })
            .collect()
    };
    // deterministic start with no component along the all-ones vector
    let mut v: Vec<f64> = (0..m).map(|i| ((i as f64 + 1.0) * 0.7548776662).fract() - 0.5).collect();
    let mean = v.iter().sum::<f64>() / m as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let n = p_norm(&v, 2.0);
    if n == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= n);
    let mut est = 0.0;
    for _ in 0..max_iters {
        // two applications per step so the +/- eigenpair cannot make the estimate oscillate
        let w = apply(&apply(&v));
        let n = p_norm(&w, 2.0);
        if n == 0.0 {
            return 0.0;
        }
        let next = n.sqrt();
        v = w.into_iter().map(|x| x / n).collect();
        if (next - est).abs() <= tol * next.max(1e-300) {
            return next;
        }
        est = next;
    }
    est
}

fn tau(sigma2: f64, factor: f64, m: usize) -> f64 {
    if sigma2 <= 0.0 {
        return 1.0;
    }
    let t = (factor * m as f64).ln() / (2.0 * (1.0 / sigma2).ln());
    t.max(1.0)
}

pub fn spectral_info(u: &GossipMatrix) -> Result<MixingInfo> {
    let s = u.sigma2;
    if !(0.0..1.0).contains(&s) {
        return Err(Error::AssumptionViolated { sigma2: s });
    }
    Ok(MixingInfo {
        sigma2: s,
        spectral_gap: 1.0 - s,
        tau_base4: tau(s, 4.0, u.m),
        tau_base8: tau(s, 8.0, u.m),
    })
}

/// `Z U` for `Z` stored as one column (client vector) per entry.
/// Column `m` of the result is `sum_j u_jm z_j`, summed in index order.
pub fn mix_columns(z: &[Vec<f64>], u: &GossipMatrix) -> Result<Vec<Vec<f64>>> {
    if z.len() != u.m {
        return Err(Error::DimensionMismatch {
            expected: u.m,
            got: z.len(),
        });
    }
    let d = z.first().map_or(0, |c| c.len());
    if let Some(c) = z.iter().find(|c| c.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: c.len(),
        });
    }
    let mut out = vec![vec![0.0; d]; u.m];
    for (m, col) in out.iter_mut().enumerate() {
        for (j, zj) in z.iter().enumerate() {
            let w = u.get(j, m);
            if w == 0.0 {
                continue;
            }
            for (o, x) in col.iter_mut().zip(zj) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// Column average, summed in index order.
pub fn column_mean(z: &[Vec<f64>]) -> Vec<f64> {
    let d = z.first().map_or(0, |c| c.len());
    let mut mean = vec![0.0; d];
    for col in z {
        for (a, x) in mean.iter_mut().zip(col) {
            *a += x;
        }
    }
    let inv = 1.0 / z.len().max(1) as f64;
    mean.iter_mut().for_each(|a| *a *= inv);
    mean
}

/// `||A||_{p,2} = (sum_j ||a_j||_p^2)^{1/2}` over columns `a_j`.
pub fn norm_p2(z: &[Vec<f64>], p: f64) -> f64 {
    z.iter()
        .map(|c| {
            let n = p_norm(c, p);
            n * n
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph() {
        let g = make_gossip(&Topology::Complete, 4).unwrap();
        assert!(g.entries().iter().all(|&u| u == 0.25));
        assert!(g.sigma2() < 1e-15);
        assert!(g.is_complete());
        let info = spectral_info(&g).unwrap();
        assert_eq!(info.tau_base4, 1.0);
        assert_eq!(info.tau_base8, 1.0);
    }

    #[test]
    fn chain_of_two_is_complete() {
        // Metropolis weight on the single edge is 1/(1 + max(1, 1)) = 1/2,
        // so U = [[1/2, 1/2], [1/2, 1/2]] with eigenvalues {1, 0}.
        let g = make_gossip(&Topology::Chain, 2).unwrap();
        assert_eq!(g.entries(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(g.sigma2().abs() < 1e-15);
    }

    #[test]
    fn chain_of_four_by_hand() {
        // interior weights 1/3; diagonal (2/3, 1/3, 1/3, 2/3); eigenvalues of this
        // tridiagonal matrix are 1/3 + (2/3) cos(k pi / 4), k = 0..3
        let g = make_gossip(&Topology::Chain, 4).unwrap();
        let want = 1.0 / 3.0 + 2.0 / 3.0 * (std::f64::consts::PI / 4.0).cos();
        assert!((g.sigma2() - want).abs() < 1e-12);
    }

    #[test]
    fn chain_sixteen_matches_reported_gap() {
        let g = make_gossip(&Topology::Chain, 16).unwrap();
        assert!((g.sigma2() - 0.987).abs() < 0.002, "sigma2 = {}", g.sigma2());
    }

    #[test]
    fn ring_eigenvalues_two_ways() {
        for m in [4, 5, 9] {
            let g = make_gossip(&Topology::Ring, m).unwrap();
            let dense = sigma2_dense(m, g.entries());
            let power = sigma2_power_iteration(m, g.entries(), 1e-14, 1_000_000);
            assert!((dense - power).abs() < 1e-8, "m={m}: {dense} vs {power}");
        }
    }

    #[test]
    fn custom_validation_names_property() {
        let e = GossipMatrix::from_rows(&[vec![0.5, 0.6], vec![0.4, 0.5]]).unwrap_err();
        assert!(e.to_string().contains("symmetric"), "{e}");
        let e = GossipMatrix::from_rows(&[vec![0.5, 0.6], vec![0.6, 0.5]]).unwrap_err();
        assert!(e.to_string().contains("doubly stochastic"), "{e}");
        let e = GossipMatrix::from_rows(&[vec![1.5, -0.5], vec![-0.5, 1.5]]).unwrap_err();
        assert!(e.to_string().contains("negative"), "{e}");
        let e = GossipMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap_err();
        assert!(matches!(e, Error::AssumptionViolated { .. }), "{e}");
    }

    #[test]
    fn csv_round_trip() {
        let g = parse_gossip_csv("# 3-node\n0.5, 0.25, 0.25\n0.25,0.5,0.25\n0.25,0.25,0.5\n").unwrap();
        assert_eq!(g.clients(), 3);
        assert!((g.sigma2() - 0.25).abs() < 1e-12);
        assert!(parse_gossip_csv("1,2\n3").is_err());
        assert!(parse_gossip_csv("a,b\nc,d").is_err());
        assert!(parse_gossip_csv("").is_err());
    }

    #[test]
    fn mixing_preserves_identical_columns() {
        let g = make_gossip(&Topology::Chain, 5).unwrap();
        let z = vec![vec![1.0, -2.0, 3.5]; 5];
        let out = mix_columns(&z, &g).unwrap();
        for c in out {
            for (a, b) in c.iter().zip(&z[0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn complete_mixing_averages() {
        let g = make_gossip(&Topology::Complete, 3).unwrap();
        let z = vec![vec![1.0, 0.0], vec![2.0, 3.0], vec![6.0, -3.0]];
        let out = mix_columns(&z, &g).unwrap();
        for c in &out {
            assert!((c[0] - 3.0).abs() < 1e-15 && c[1].abs() < 1e-15);
        }
        assert!(mix_columns(&z[..2], &g).is_err());
    }
}
