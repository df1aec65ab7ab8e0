//! Primal/dual geometry induced by the pair of conjugate norms `(q, p)`.
//!
//! The potential is `h(w) = ||w||_q^2 / (2(q-1))` with conjugate
//! `h*(z) = ||z||_p^2 / (2(p-1))`. `h` is 1-strongly convex in `||.||_q` and
//! `h*` is 1-smooth in `||.||_p`, so `grad h` and `grad h*` are mutual inverses.
//!
//! Every norm and signed power factors out `max |x_i|` first so that exponents
//! around `2 ln d` (p ~ 14 for d ~ 10^3) cannot overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conjugate exponents. `p >= 2` is the dual norm, `q = p / (p - 1)` the primal norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MirrorPairRepr", into = "MirrorPairRepr")]
pub struct MirrorPair {
    p: f64,
    q: f64,
}

#[derive(Serialize, Deserialize)]
struct MirrorPairRepr {
    p: f64,
}

impl TryFrom<MirrorPairRepr> for MirrorPair {
    type Error = Error;

    fn try_from(r: MirrorPairRepr) -> Result<Self> {
        MirrorPair::new(r.p)
    }
}

impl From<MirrorPair> for MirrorPairRepr {
    fn from(mp: MirrorPair) -> Self {
        MirrorPairRepr { p: mp.p }
    }
}

impl MirrorPair {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() || p < 2.0 {
            return Err(Error::InvalidExponent(format!(
                "p must be finite and >= 2, got {p}"
            )));
        }
        Ok(Self { p, q: p / (p - 1.0) })
    }

    /// The pair with `p = 2 ln d`.
    pub fn for_dimension(d: usize) -> Result<Self> {
        Self::new(default_p(d)?)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// A `||w - center||_q^2 <= radius_sq` ball. `radius_sq` may be `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallConstraint {
    pub center: Vec<f64>,
    pub radius_sq: f64,
}

impl BallConstraint {
    pub fn new(center: Vec<f64>, radius_sq: f64) -> Result<Self> {
        if radius_sq.is_nan() || radius_sq < 0.0 {
            return Err(Error::InvalidConstraint(format!(
                "squared radius must be >= 0, got {radius_sq}"
            )));
        }
        Ok(Self { center, radius_sq })
    }

    pub fn unconstrained(center: Vec<f64>) -> Self {
        Self {
            center,
            radius_sq: f64::INFINITY,
        }
    }
}

/// `2 ln d`, the exponent that makes `||.||_p` within a factor `sqrt(e)` of `||.||_inf`.
pub fn default_p(d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::InvalidDimension(format!(
            "default exponent needs d >= 3, got {d}"
        )));
    }
    Ok(2.0 * (d as f64).ln())
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `||x||_p` for `p >= 1` or `p = inf`, overflow-safe.
pub fn p_norm(x: &[f64], p: f64) -> f64 {
    let m = max_abs(x);
    if m == 0.0 || !m.is_finite() || p.is_infinite() {
        return m;
    }
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    let s: f64 = x.iter().map(|v| (v.abs() / m).powf(p)).sum();
    m * s.powf(1.0 / p)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(1/(r-1)) ||x||_r^{2-r} x^{r-1}` with `x^a` the signed power.
/// With `r = q` this is `grad h`, with `r = p` it is `grad h* = (grad h)^{-1}`.
fn power_map(x: &[f64], r: f64) -> Vec<f64> {
    let m = max_abs(x);
    if m == 0.0 {
        return vec![0.0; x.len()];
    }
    // Work on u = x / m: the map is 1-homogeneous, so scale back by m at the end.
    let s: f64 = x.iter().map(|v| (v.abs() / m).powf(r)).sum();
    let norm_u = s.powf(1.0 / r);
    let scale = m * norm_u.powf(2.0 - r) / (r - 1.0);
    x.iter()
        .map(|v| {
            let a = (v.abs() / m).powf(r - 1.0);
            scale * a.copysign(*v)
        })
        .collect()
}

/// `grad h(w)`, the primal-to-dual map. `grad h(0) = 0`.
pub fn mirror_forward(w: &[f64], mp: &MirrorPair) -> Vec<f64> {
    power_map(w, mp.q)
}

/// `grad h*(z) = (grad h)^{-1}(z)`, the dual-to-primal map. `grad h*(0) = 0`.
pub fn mirror_inverse(z: &[f64], mp: &MirrorPair) -> Vec<f64> {
    power_map(z, mp.p)
}

pub fn h_value(w: &[f64], mp: &MirrorPair) -> f64 {
    let n = p_norm(w, mp.q);
    n * n / (2.0 * (mp.q - 1.0))
}

/// The conjugate potential `h*(z) = ||z||_p^2 / (2(p-1))`.
pub fn h_conj_value(z: &[f64], mp: &MirrorPair) -> f64 {
    let n = p_norm(z, mp.p);
    n * n / (2.0 * (mp.p - 1.0))
}

/// Minimizer of `<w - w0, -z_shift> + h(w - w0)` over the ball `||w - w0||_q^2 <= Q`.
///
/// `z_shift` is the dual displacement `z - z0`. Because `h` is 2-homogeneous the
/// KKT point lies on the ray through the unconstrained solution
/// `w0 + grad h*(z_shift)`, so the constrained answer is a radial clip of it.
pub fn prox_restricted(z_shift: &[f64], ball: &BallConstraint, mp: &MirrorPair) -> Result<Vec<f64>> {
    if ball.radius_sq.is_nan() || ball.radius_sq < 0.0 {
        return Err(Error::InvalidConstraint(format!(
            "squared radius must be >= 0, got {}",
            ball.radius_sq
        )));
    }
    if ball.center.len() != z_shift.len() {
        return Err(Error::DimensionMismatch {
            expected: ball.center.len(),
            got: z_shift.len(),
        });
    }
    let mut v = mirror_inverse(z_shift, mp);
    if ball.radius_sq.is_finite() {
        let nq = p_norm(&v, mp.q);
        if nq * nq > ball.radius_sq {
            let t = ball.radius_sq.sqrt() / nq;
            v.iter_mut().for_each(|x| *x *= t);
        }
    }
    Ok(ball.center.iter().zip(&v).map(|(c, x)| c + x).collect())
}

/// Keep the `s` largest-magnitude entries, zero the rest.
/// Ties go to the lowest index. `s >= len` returns `x` unchanged.
pub fn sparse_top_s(x: &[f64], s: usize) -> Vec<f64> {
    if s >= x.len() {
        return x.to_vec();
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    // Stable sort keeps ascending index order among equal magnitudes.
    idx.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()));
    let mut out = vec![0.0; x.len()];
    for &i in &idx[..s] {
        out[i] = x[i];
    }
    out
}

/// Indices of the nonzero entries.
pub fn support(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        p_norm(&diff, 2.0) / p_norm(b, 2.0).max(1e-300)
    }

    #[test]
    fn default_p_values() {
        assert!((default_p(20).unwrap() - 2.0 * 20f64.ln()).abs() < 1e-12);
        assert!((default_p(20).unwrap() - 6.0).abs() < 0.02);
        assert!((default_p(1024).unwrap() - 13.8629).abs() < 1e-3);
        assert!(default_p(2).is_err());
        assert!(default_p(1).is_err());
        assert!(MirrorPair::new(1.9).is_err());
        assert!(MirrorPair::new(f64::INFINITY).is_err());
    }

    #[test]
    fn conjugate_exponents() {
        for p in [2.0, 4.0, 12.0, 13.86] {
            let mp = MirrorPair::new(p).unwrap();
            assert!((1.0 / mp.p() + 1.0 / mp.q() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn p_norm_examples() {
        assert_eq!(p_norm(&[3.0, 4.0], 2.0), 5.0);
        let d = 1024;
        let ones = vec![1.0; d];
        let p = default_p(d).unwrap();
        assert!((p_norm(&ones, p) - 0.5f64.exp()).abs() < 1e-12);
        assert_eq!(p_norm(&[0.0; 5], 12.0), 0.0);
        assert_eq!(p_norm(&[1.0, -7.0, 2.0], f64::INFINITY), 7.0);
    }

    #[test]
    fn p_norm_does_not_overflow() {
        let x = [1e300, 1e300];
        let got = p_norm(&x, 14.0);
        // log-space oracle: log ||x|| = (1/p) log(sum exp(p log|x_i|))
        let logs: Vec<f64> = x.iter().map(|v| 14.0 * v.ln()).collect();
        let mx = logs.iter().cloned().fold(f64::MIN, f64::max);
        let lse = mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        let want = (lse / 14.0).exp();
        assert!(got.is_finite());
        assert!((got - want).abs() / want < 1e-12);
        assert!((got / 1e300 - 2f64.powf(1.0 / 14.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_at_p2() {
        let mp = MirrorPair::new(2.0).unwrap();
        let w = [1.5, -2.0, 0.25];
        assert!(rel_err(&mirror_forward(&w, &mp), &w) < 1e-15);
        assert!(rel_err(&mirror_inverse(&w, &mp), &w) < 1e-15);
        let h = h_value(&w, &mp);
        assert!((h - 0.5 * dot(&w, &w)).abs() < 1e-14);
    }

    #[test]
    fn maps_vanish_at_zero() {
        let mp = MirrorPair::new(12.0).unwrap();
        assert_eq!(mirror_forward(&[0.0; 4], &mp), vec![0.0; 4]);
        assert_eq!(mirror_inverse(&[0.0; 4], &mp), vec![0.0; 4]);
        assert_eq!(h_value(&[0.0; 4], &mp), 0.0);
    }

    #[test]
    fn forward_on_basis_vector() {
        for p in [2.5, 4.0, 12.0] {
            let mp = MirrorPair::new(p).unwrap();
            let mut e = vec![0.0; 6];
            e[3] = 1.0;
            let g = mirror_forward(&e, &mp);
            let want = 1.0 / (mp.q() - 1.0);
            assert!((g[3] - want).abs() < 1e-12 * want);
            assert!(g.iter().enumerate().all(|(i, v)| i == 3 || *v == 0.0));
        }
    }

    #[test]
    fn inverse_is_one_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mp = MirrorPair::new(12.0).unwrap();
        let z = rand_vec(&mut rng, 50, 5.0);
        let zt: Vec<f64> = z.iter().map(|v| 3.7 * v).collect();
        let a = mirror_inverse(&zt, &mp);
        let b: Vec<f64> = mirror_inverse(&z, &mp).iter().map(|v| 3.7 * v).collect();
        assert!(rel_err(&a, &b) < 1e-13);
    }

    #[test]
    fn euler_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mp = MirrorPair::new(12.0).unwrap();
        for _ in 0..50 {
            let w = rand_vec(&mut rng, 40, 10.0);
            let lhs = dot(&w, &mirror_forward(&w, &mp));
            let rhs = 2.0 * h_value(&w, &mp);
            assert!((lhs - rhs).abs() <= 1e-10 * rhs);
        }
    }

    #[test]
    fn prox_unconstrained_matches_shifted_inverse() {
        let mp = MirrorPair::new(6.0).unwrap();
        let w0 = vec![1.0, -1.0, 0.5];
        let z = vec![0.3, 0.2, -0.9];
        let ball = BallConstraint::unconstrained(w0.clone());
        let got = prox_restricted(&z, &ball, &mp).unwrap();
        let v = mirror_inverse(&z, &mp);
        for i in 0..3 {
            assert!((got[i] - (w0[i] + v[i])).abs() < 1e-15);
        }
        assert_eq!(prox_restricted(&[0.0; 3], &ball, &mp).unwrap(), w0);
    }

    #[test]
    fn prox_rejects_negative_radius() {
        let mp = MirrorPair::new(6.0).unwrap();
        assert!(BallConstraint::new(vec![0.0], -1.0).is_err());
        let bad = BallConstraint {
            center: vec![0.0],
            radius_sq: -1.0,
        };
        assert!(matches!(
            prox_restricted(&[1.0], &bad, &mp),
            Err(Error::InvalidConstraint(_))
        ));
    }

    fn prox_objective(w: &[f64], ball: &BallConstraint, z: &[f64], mp: &MirrorPair) -> f64 {
        let v: Vec<f64> = w.iter().zip(&ball.center).map(|(a, c)| a - c).collect();
        -dot(&v, z) + h_value(&v, mp)
    }

    #[test]
    fn prox_clipped_beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mp = MirrorPair::new(8.0).unwrap();
        let d = 10;
        let w0 = rand_vec(&mut rng, d, 1.0);
        let z = rand_vec(&mut rng, d, 5.0);
        let free = mirror_inverse(&z, &mp);
        let rq = p_norm(&free, mp.q());
        let ball = BallConstraint::new(w0.clone(), 0.25 * rq * rq).unwrap();
        let w = prox_restricted(&z, &ball, &mp).unwrap();
        let v: Vec<f64> = w.iter().zip(&w0).map(|(a, c)| a - c).collect();
        assert!((p_norm(&v, mp.q()) - ball.radius_sq.sqrt()).abs() < 1e-12 * rq);
        let best = prox_objective(&w, &ball, &z, &mp);
        // brute-force sampling oracle over the feasible set
        for _ in 0..100 {
            let dir = rand_vec(&mut rng, d, 1.0);
            let r = rng.random_range(0.0..1.0f64).sqrt() * ball.radius_sq.sqrt();
            let n = p_norm(&dir, mp.q());
            let cand: Vec<f64> = w0.iter().zip(&dir).map(|(c, u)| c + u * r / n).collect();
            assert!(best <= prox_objective(&cand, &ball, &z, &mp) + 1e-12);
        }
        // also against perturbations of the optimum pulled back into the ball
        for _ in 0..100 {
            let mut cand: Vec<f64> = v.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect();
            let n = p_norm(&cand, mp.q());
            if n * n > ball.radius_sq {
                let t = ball.radius_sq.sqrt() / n;
                cand.iter_mut().for_each(|x| *x *= t);
            }
            let cand: Vec<f64> = cand.iter().zip(&w0).map(|(a, c)| a + c).collect();
            assert!(best <= prox_objective(&cand, &ball, &z, &mp) + 1e-12);
        }
    }

    #[test]
    fn sparse_examples() {
        assert_eq!(sparse_top_s(&[5.0, -7.0, 1.0, 0.0], 2), vec![5.0, -7.0, 0.0, 0.0]);
        let x = [0.0, 3.0, 0.0, -1.0];
        assert_eq!(sparse_top_s(&x, 2), x.to_vec());
        assert_eq!(sparse_top_s(&[2.0, -2.0, 2.0], 2), vec![2.0, -2.0, 0.0]);
        assert_eq!(sparse_top_s(&[1.0, 2.0], 0), vec![0.0, 0.0]);
        assert_eq!(sparse_top_s(&[1.0, 2.0], 5), vec![1.0, 2.0]);
    }

    #[test]
    fn sparse_error_inequality_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 64;
        let s = 5;
        for _ in 0..1000 {
            let mut wstar = vec![0.0; d];
            for i in 0..s {
                wstar[(i * 13) % d] = rng.random_range(-3.0..3.0);
            }
            let x: Vec<f64> = wstar.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let sx = sparse_top_s(&x, s);
            let e: Vec<f64> = sx.iter().zip(&wstar).map(|(a, b)| a - b).collect();
            let ex: Vec<f64> = x.iter().zip(&wstar).map(|(a, b)| a - b).collect();
            let l1 = p_norm(&e, 1.0);
            let l2 = p_norm(&e, 2.0);
            let lx = p_norm(&ex, 2.0);
            assert!(l1 * l1 <= 2.0 * s as f64 * l2 * l2 * (1.0 + 1e-12));
            assert!(2.0 * s as f64 * l2 * l2 <= 8.0 * s as f64 * lx * lx * (1.0 + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn round_trip(w in proptest::collection::vec(-10.0f64..10.0, 1..64), p in 2.0f64..20.0) {
            let mp = MirrorPair::new(p).unwrap();
            let back = mirror_inverse(&mirror_forward(&w, &mp), &mp);
            let n = p_norm(&w, 2.0);
            if n > 0.0 {
                prop_assert!(rel_err(&back, &w) <= 1e-9);
            }
        }

        #[test]
        fn sparse_is_idempotent_and_sparse(x in proptest::collection::vec(-5.0f64..5.0, 1..40), s in 0usize..40) {
            let y = sparse_top_s(&x, s);
            prop_assert_eq!(sparse_top_s(&y, s), y.clone());
            prop_assert!(support(&y).len() <= s);
        }

        #[test]
        fn sparse_is_permutation_equivariant(
            x in proptest::collection::vec(-5.0f64..5.0, 2..30),
            s in 0usize..30,
            rot in 0usize..30,
        ) {
            // distinct magnitudes so tie-breaking plays no role
            let mut seen = std::collections::HashSet::new();
            prop_assume!(x.iter().all(|v| seen.insert(v.abs().to_bits())));
            let n = x.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let a = sparse_top_s(&px, s);
            let b = sparse_top_s(&x, s);
            let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
            prop_assert_eq!(a, pb);
        }

        #[test]
        fn prox_is_feasible(
            z in proptest::collection::vec(-5.0f64..5.0, 1..20),
            radius_sq in 0.0f64..4.0,
            p in 2.0f64..14.0,
        ) {
            let mp = MirrorPair::new(p).unwrap();
            let center = vec![0.5; z.len()];
            let ball = BallConstraint::new(center.clone(), radius_sq).unwrap();
            let w = prox_restricted(&z, &ball, &mp).unwrap();
            let v: Vec<f64> = w.iter().zip(&center).map(|(a, c)| a - c).collect();
            let n = p_norm(&v, mp.q());
            prop_assert!(n * n <= radius_sq * (1.0 + 1e-12) + 1e-300);
            let free = mirror_inverse(&z, &mp);
            let nf = p_norm(&free, mp.q());
            if nf * nf <= radius_sq {
                for i in 0..z.len() {
                    prop_assert!((w[i] - center[i] - free[i]).abs() <= 1e-15 * (1.0 + free[i].abs()));
                }
            }
        }
    }
}
