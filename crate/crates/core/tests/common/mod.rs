//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use nodal_tangent::geometry::{FieldSpec, SpherePoint};
use nodal_tangent::quadrature::gauss_legendre_on;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E|XY|` for a centred Gaussian pair with covariance `[[m11, m12], [m12, m22]]`,
/// by quadrature in polar coordinates of the whitened pair.
///
/// With `X = a Z₁`, `Y = b Z₁ + c Z₂` and `Z = r (cos ψ, sin ψ)`, the radial
/// factor has `E r² = 2`, leaving `(1/π) ∫₀^{2π} |a cos ψ (b cos ψ + c sin ψ)| dψ`.
/// The integrand is a trigonometric polynomial between its zeros, so Gauss–
/// Legendre on each piece is exact to rounding.
pub fn abs_moment_quadrature(m11: f64, m12: f64, m22: f64) -> f64 {
    if m11 <= 0.0 {
        return 0.0;
    }
    let a = m11.sqrt();
    let b = m12 / a;
    let c = (m22 - b * b).max(0.0).sqrt();
    let g = |psi: f64| (a * psi.cos() * (b * psi.cos() + c * psi.sin())).abs();
    let root = (-b).atan2(c).rem_euclid(PI);
    let mut cuts = vec![0.0, 0.5 * PI, 1.5 * PI, root, root + PI, TAU];
    cuts.retain(|x| (0.0..=TAU).contains(x));
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        if w[1] - w[0] < 1e-15 {
            continue;
        }
        let (x, wt) = gauss_legendre_on(24, w[0], w[1]);
        total += x.iter().zip(&wt).map(|(p, q)| q * g(*p)).sum::<f64>();
    }
    total / PI
}

/// Uniform points on the sphere kept `margin` away from the poles and from
/// the declared zeros of `field`.
pub fn random_points(field: &FieldSpec, n: usize, margin: f64, seed: u64) -> Vec<SpherePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let theta = rng.random_range(0.0..TAU);
        let phi = rng.random_range(-1.0f64..1.0).acos();
        if phi < margin || phi > PI - margin {
            continue;
        }
        let p = SpherePoint::new(theta, phi).unwrap();
        if field.zeros.points().iter().all(|z| p.distance_to(&z.unit) > margin) {
            out.push(p);
        }
    }
    out
}

/// Embedding of the coordinate vector `v1 ∂θ + v2 ∂φ` at `p` in R³.
pub fn embed(p: &SpherePoint, v1: f64, v2: f64) -> [f64; 3] {
    let (st, ct) = p.theta().sin_cos();
    let (sp, cp) = p.phi().sin_cos();
    [
        -v1 * sp * st + v2 * cp * ct,
        v1 * sp * ct + v2 * cp * st,
        -v2 * sp,
    ]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}
