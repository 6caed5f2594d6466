//! Poincaré ball primitives under per-pair negative curvature.
//!
//! All points live in the ball of radius `1/sqrt(-kappa)` for their
//! curvature `kappa < 0`. Distances use a scalar-denominator form
//!
//! ```text
//! d(x, y) = 2/sqrt(-kappa) * atanh( ||x - y|| / |1 - kappa <x, y>| )
//! ```
//!
//! which is cheap, symmetric, and zero exactly at coincident points. The
//! denominator can go negative for strongly anti-correlated points, hence
//! the absolute value; the atanh argument is clamped to `1 - EPS_ATANH` so
//! every distance is finite. No triangle inequality is claimed for this
//! form. Exponential/logarithmic maps are the standard Möbius ones and are
//! mutual inverses to high accuracy for moderate tangent norms.

use thiserror::Error;

/// Lower clamp bound for curvature values.
pub const KAPPA_MIN: f64 = -5.0;
/// Upper clamp bound for curvature values (strictly negative).
pub const KAPPA_MAX: f64 = -0.01;
/// Relative safety margin keeping points strictly inside the ball.
pub const EPS_BALL: f64 = 1e-5;
/// Clamp margin for atanh arguments, keeping distances finite.
pub const EPS_ATANH: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("curvature must be finite and in [{KAPPA_MIN}, {KAPPA_MAX}], got {0}")]
    InvalidCurvature(f64),
    #[error("radius must be finite and positive, got {0}")]
    InvalidRadius(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite coordinate in input")]
    NonFiniteInput,
}

/// Strictly negative sectional curvature, kept within the clamp range.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(value: f64) -> Result<Self, GeometryError> {
        if !value.is_finite() || !(KAPPA_MIN..=KAPPA_MAX).contains(&value) {
            return Err(GeometryError::InvalidCurvature(value));
        }
        Ok(Curvature(value))
    }

    /// Clamps an arbitrary finite value into the valid range.
    pub fn clamped(value: f64) -> Self {
        Curvature(value.clamp(KAPPA_MIN, KAPPA_MAX))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Radius of the ball this curvature induces, `1/sqrt(-kappa)`.
    pub fn ball_radius(self) -> f64 {
        (-1.0 / self.0).sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

fn check_finite(v: &[f64]) -> Result<(), GeometryError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFiniteInput)
    }
}

/// Radius-weighted harmonic mean of two entity curvatures.
///
/// The result always lies between the two inputs (inclusive), so blending
/// valid curvatures yields a valid curvature. Equal curvatures are a fixed
/// point regardless of the radii.
pub fn effective_curvature(
    r_a: f64,
    kappa_a: Curvature,
    r_b: f64,
    kappa_b: Curvature,
) -> Result<Curvature, GeometryError> {
    if !(r_a.is_finite() && r_a > 0.0) {
        return Err(GeometryError::InvalidRadius(r_a));
    }
    if !(r_b.is_finite() && r_b > 0.0) {
        return Err(GeometryError::InvalidRadius(r_b));
    }
    let raw = (r_a + r_b) / (r_a / kappa_a.value() + r_b / kappa_b.value());
    let lo = kappa_a.value().min(kappa_b.value());
    let hi = kappa_a.value().max(kappa_b.value());
    // The exact mean lies in [lo, hi]; clamping only absorbs float rounding.
    Ok(Curvature(raw.clamp(lo, hi)))
}

/// Geodesic distance between two ball points under a shared curvature.
pub fn geodesic_distance(a: &[f64], b: &[f64], kappa: Curvature) -> Result<f64, GeometryError> {
    if a.len() != b.len() {
        return Err(GeometryError::DimensionMismatch(a.len(), b.len()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let k = kappa.value();
    let diff_norm = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let denom = (1.0 - k * dot(a, b)).abs();
    let arg = (diff_norm / denom).clamp(0.0, 1.0 - EPS_ATANH);
    Ok(2.0 / (-k).sqrt() * arg.atanh())
}

/// Plain Euclidean distance, used when the geometry is ablated away.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Möbius addition on the ball of curvature `-c` (`c > 0`).
pub fn mobius_add(a: &[f64], b: &[f64], c: f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let aa = norm_sq(a);
    let bb = norm_sq(b);
    let ab = dot(a, b);
    let denom = 1.0 + 2.0 * c * ab + c * c * aa * bb;
    let ca = (1.0 + 2.0 * c * ab + c * bb) / denom;
    let cb = (1.0 - c * aa) / denom;
    a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect()
}

/// Rescales a point radially whenever it leaves the safe interior of the
/// ball for this curvature. Points already inside come back untouched.
pub fn project_to_ball(p: &[f64], kappa: Curvature) -> Vec<f64> {
    let mut out = p.to_vec();
    project_to_ball_in_place(&mut out, kappa);
    out
}

pub fn project_to_ball_in_place(p: &mut [f64], kappa: Curvature) {
    let limit_sq = (1.0 - EPS_BALL) * (-1.0 / kappa.value());
    let nsq = norm_sq(p);
    if nsq >= limit_sq {
        let target = kappa.ball_radius() * (1.0 - EPS_BALL);
        let scale = target / nsq.sqrt();
        for x in p.iter_mut() {
            *x *= scale;
        }
    }
}

/// Whether a point sits strictly inside the safe interior for `kappa`.
pub fn is_in_ball(p: &[f64], kappa: Curvature) -> bool {
    norm_sq(p) < (1.0 - EPS_BALL) * (-1.0 / kappa.value())
}

/// Exponential map at `base`, followed by projection back into the ball.
pub fn exp_map(base: &[f64], tangent: &[f64], kappa: Curvature) -> Vec<f64> {
    assert_eq!(base.len(), tangent.len());
    let c = -kappa.value();
    let t_norm = norm(tangent);
    if t_norm < 1e-15 {
        return base.to_vec();
    }
    let lambda = 2.0 / (1.0 - c * norm_sq(base));
    let scale = (c.sqrt() * lambda * t_norm / 2.0).tanh() / (c.sqrt() * t_norm);
    let moved: Vec<f64> = tangent.iter().map(|v| v * scale).collect();
    let mut out = mobius_add(base, &moved, c);
    project_to_ball_in_place(&mut out, kappa);
    out
}

/// Logarithmic map at `base`; inverse of [`exp_map`] for moderate tangents.
pub fn log_map(base: &[f64], target: &[f64], kappa: Curvature) -> Vec<f64> {
    assert_eq!(base.len(), target.len());
    let c = -kappa.value();
    let neg_base: Vec<f64> = base.iter().map(|x| -x).collect();
    let w = mobius_add(&neg_base, target, c);
    let w_norm = norm(&w);
    if w_norm < 1e-15 {
        return vec![0.0; base.len()];
    }
    let lambda = 2.0 / (1.0 - c * norm_sq(base));
    let arg = (c.sqrt() * w_norm).min(1.0 - EPS_ATANH);
    let scale = 2.0 / (c.sqrt() * lambda) * arg.atanh() / w_norm;
    w.iter().map(|x| x * scale).collect()
}

/// Scaling that converts a Euclidean gradient at `p` into its Riemannian
/// counterpart on the ball: `((1 + kappa ||p||^2)^2) / 4`, in `(0, 1/4]`.
pub fn conformal_factor(p: &[f64], kappa: Curvature) -> f64 {
    let t = 1.0 + kappa.value() * norm_sq(p);
    t * t / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn k(v: f64) -> Curvature {
        Curvature::new(v).unwrap()
    }

    #[test]
    fn effective_curvature_weighted_pair() {
        let got = effective_curvature(0.5, k(-1.0), 2.0, k(-4.0)).unwrap();
        assert_eq!(got.value(), -2.5);
    }

    #[test]
    fn effective_curvature_equal_inputs_fixed_point() {
        for (ra, rb, kk) in [(1.0, 1.0, -1.0), (1.0, 1.0, -2.0), (0.3, 7.0, -0.5)] {
            let got = effective_curvature(ra, k(kk), rb, k(kk)).unwrap();
            assert_relative_eq!(got.value(), kk, max_relative = 1e-14);
        }
    }

    #[test]
    fn effective_curvature_symmetric_and_between() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let ra = rng.gen_range(0.05..4.0);
            let rb = rng.gen_range(0.05..4.0);
            let ka = rng.gen_range(KAPPA_MIN..KAPPA_MAX);
            let kb = rng.gen_range(KAPPA_MIN..KAPPA_MAX);
            let ab = effective_curvature(ra, k(ka), rb, k(kb)).unwrap().value();
            let ba = effective_curvature(rb, k(kb), ra, k(ka)).unwrap().value();
            assert_eq!(ab, ba);
            assert!(ab >= ka.min(kb) && ab <= ka.max(kb), "{ab} vs [{ka},{kb}]");
        }
    }

    #[test]
    fn effective_curvature_rejects_bad_radius() {
        assert!(matches!(
            effective_curvature(0.0, k(-1.0), 1.0, k(-1.0)),
            Err(GeometryError::InvalidRadius(_))
        ));
        assert!(effective_curvature(-1.0, k(-1.0), 1.0, k(-1.0)).is_err());
        assert!(effective_curvature(f64::NAN, k(-1.0), 1.0, k(-1.0)).is_err());
    }

    #[test]
    fn curvature_rejects_out_of_range() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(1.0).is_err());
        assert!(Curvature::new(-6.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert!(Curvature::new(-0.01).is_ok());
        assert!(Curvature::new(-5.0).is_ok());
        assert_eq!(Curvature::clamped(-80.0).value(), -5.0);
        assert_eq!(Curvature::clamped(3.0).value(), -0.01);
    }

    #[test]
    fn distance_matches_worked_example() {
        // x = (0.3, 0), y = (-0.3, 0), kappa = -1:
        // ||x - y|| = 0.6, denom = |1 - (-1)(-0.09)| = 0.91,
        // d = 2 atanh(0.6/0.91).
        let d = geodesic_distance(&[0.3, 0.0], &[-0.3, 0.0], k(-1.0)).unwrap();
        assert_relative_eq!(d, 1.583292632329778, max_relative = 1e-15);
    }

    #[test]
    fn distance_zero_iff_coincident() {
        let x = [0.21, -0.37, 0.05];
        assert_eq!(geodesic_distance(&x, &x, k(-1.7)).unwrap(), 0.0);
        let y = [0.21, -0.37, 0.0500001];
        assert!(geodesic_distance(&x, &y, k(-1.7)).unwrap() > 0.0);
    }

    #[test]
    fn distance_symmetric_nonnegative() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..1000 {
            let kk = k(rng.gen_range(KAPPA_MIN..KAPPA_MAX));
            let cap = kk.ball_radius() * 0.7;
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-cap / 2.0..cap / 2.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-cap / 2.0..cap / 2.0)).collect();
            let dxy = geodesic_distance(&x, &y, kk).unwrap();
            let dyx = geodesic_distance(&y, &x, kk).unwrap();
            assert_eq!(dxy, dyx);
            assert!(dxy >= 0.0);
            assert!(dxy.is_finite());
        }
    }

    #[test]
    fn distance_finite_at_clamp() {
        // Anti-correlated near-boundary points push the atanh argument past
        // one; the clamp keeps the distance finite.
        let kk = k(-2.0);
        let r = kk.ball_radius() * (1.0 - EPS_BALL) * 0.999;
        let d = geodesic_distance(&[r, 0.0], &[-r, 0.0], kk).unwrap();
        assert!(d.is_finite());
        let expected = 2.0 / 2.0_f64.sqrt() * (1.0 - EPS_ATANH).atanh();
        assert_relative_eq!(d, expected, max_relative = 1e-12);
    }

    #[test]
    fn distance_rejects_bad_input() {
        assert_eq!(
            geodesic_distance(&[0.1], &[0.1, 0.2], k(-1.0)),
            Err(GeometryError::DimensionMismatch(1, 2))
        );
        assert_eq!(
            geodesic_distance(&[f64::NAN], &[0.1], k(-1.0)),
            Err(GeometryError::NonFiniteInput)
        );
    }

    #[test]
    fn atanh_argument_monotone_in_curvature_for_anticorrelated_points() {
        // The full distance is not monotone in curvature magnitude (the
        // 2/sqrt(-kappa) prefactor fights the denominator), but the atanh
        // argument itself is: for <x,y> <= 0 the denominator |1 - kappa<x,y>|
        // shrinks as kappa grows more negative.
        let mut rng = StdRng::seed_from_u64(11);
        let k1 = k(-1.0);
        let k2 = k(-2.0);
        for _ in 0..1000 {
            let cap = k2.ball_radius() * 0.69;
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-cap..cap)).collect();
            let mut y: Vec<f64> = (0..3).map(|_| rng.gen_range(-cap..cap)).collect();
            if dot(&x, &y) > 0.0 {
                y.iter_mut().for_each(|v| *v = -*v);
            }
            let frac = |kk: Curvature| {
                euclidean_distance(&x, &y) / (1.0 - kk.value() * dot(&x, &y)).abs()
            };
            assert!(frac(k2) >= frac(k1) - 1e-12);
        }
    }

    #[test]
    fn distance_curvature_ordering_examples_both_ways() {
        // Pinned pairs documenting that the end-to-end distance ordering
        // between kappa = -2 and kappa = -1 flips with the configuration.
        let k1 = k(-1.0);
        let k2 = k(-2.0);
        // Orthogonal points: prefactor wins, stronger curvature is shorter.
        let a = [0.3, 0.0];
        let b = [0.0, 0.3];
        assert!(
            geodesic_distance(&a, &b, k2).unwrap() < geodesic_distance(&a, &b, k1).unwrap()
        );
        // Asymmetric anti-correlated pair with the stronger curvature's
        // atanh argument near its clamp: denominator wins.
        let p = [0.65, 0.0];
        let q = [-0.14, 0.0];
        assert!(
            geodesic_distance(&p, &q, k2).unwrap() > geodesic_distance(&p, &q, k1).unwrap()
        );
    }

    #[test]
    fn exp_map_at_origin_is_scaled_tanh() {
        let v = [0.2, -0.1, 0.4];
        let got = exp_map(&[0.0, 0.0, 0.0], &v, k(-1.0));
        let n = norm(&v);
        for (g, x) in got.iter().zip(&v) {
            assert_relative_eq!(*g, n.tanh() * x / n, max_relative = 1e-14);
        }
    }

    #[test]
    fn exp_map_zero_tangent_returns_base() {
        let base = [0.1, 0.2];
        assert_eq!(exp_map(&base, &[0.0, 0.0], k(-1.0)), base.to_vec());
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..1000 {
            let kk = k(rng.gen_range(KAPPA_MIN..KAPPA_MAX));
            let cap = kk.ball_radius() * 0.6;
            let base: Vec<f64> = (0..5).map(|_| rng.gen_range(-cap / 3.0..cap / 3.0)).collect();
            let mut tangent: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tn = norm(&tangent);
            let want = rng.gen_range(0.01..0.5);
            tangent.iter_mut().for_each(|x| *x *= want / tn);

            let there = exp_map(&base, &tangent, kk);
            assert!(is_in_ball(&there, kk));
            let back = log_map(&base, &there, kk);
            for (t, b) in tangent.iter().zip(&back) {
                assert!((t - b).abs() < 1e-6, "round trip off: {t} vs {b}");
            }
        }
    }

    #[test]
    fn project_leaves_interior_points_untouched() {
        let p = [0.1, -0.2, 0.05];
        assert_eq!(project_to_ball(&p, k(-1.0)), p.to_vec());
    }

    #[test]
    fn project_pulls_outside_points_to_margin() {
        let kk = k(-1.0);
        let p = [2.0, 0.0];
        let got = project_to_ball(&p, kk);
        assert_relative_eq!(norm(&got), 1.0 - EPS_BALL, max_relative = 1e-14);
        assert!(is_in_ball(&got, kk));
        // Idempotent.
        assert_eq!(project_to_ball(&got, kk), got);
    }

    #[test]
    fn project_respects_curvature_scaled_ball() {
        let kk = k(-4.0);
        // Ball radius is 0.5; a point at norm 0.6 must come inside.
        let got = project_to_ball(&[0.6, 0.0], kk);
        assert_relative_eq!(norm(&got), 0.5 * (1.0 - EPS_BALL), max_relative = 1e-14);
    }

    #[test]
    fn conformal_factor_examples() {
        assert_eq!(conformal_factor(&[0.0, 0.0], k(-1.0)), 0.25);
        assert_eq!(conformal_factor(&[0.5, 0.0], k(-1.0)), 0.140625);
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..200 {
            let kk = k(rng.gen_range(KAPPA_MIN..KAPPA_MAX));
            let cap = kk.ball_radius() * (1.0 - EPS_BALL) * 0.999;
            let p = [rng.gen_range(-cap..cap) * 0.7, rng.gen_range(-cap..cap) * 0.7];
            let f = conformal_factor(&p, kk);
            assert!(f > 0.0 && f <= 0.25, "factor {f} out of range");
        }
    }

    #[test]
    fn mobius_identity_and_inverse() {
        let a = [0.3, -0.2];
        let zero = [0.0, 0.0];
        assert_eq!(mobius_add(&a, &zero, 1.0), a.to_vec());
        assert_eq!(mobius_add(&zero, &a, 1.0), a.to_vec());
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        for x in mobius_add(&neg, &a, 1.0) {
            assert!(x.abs() < 1e-15);
        }
    }
}
