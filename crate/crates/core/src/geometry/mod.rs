//! Spherical coordinates on the open chart `[0, 2π) × (0, π)`, the round
//! metric `diag(sin²φ, 1)`, and vector fields given by their coordinate
//! components `V = v1 ∂θ + v2 ∂φ`.

mod expr;
mod field;

pub use expr::Expr;
pub use field::{field_components, field_jet, FieldKind, FieldSpec, ZeroSet, ZeroPoint};

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// A point of the sphere in the coordinate chart. `theta` is the longitude,
/// `phi` the colatitude; the poles are not representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    theta: f64,
    phi: f64,
}

impl SpherePoint {
    /// Builds a chart point, wrapping `theta` into `[0, 2π)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::arg(format!("non-finite coordinates ({theta}, {phi})")));
        }
        if phi <= 0.0 || phi >= PI {
            return Err(Error::arg(format!("colatitude {phi} outside the open chart (0, pi)")));
        }
        Ok(SpherePoint { theta: wrap_theta(theta), phi })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Ambient unit vector `(sin φ cos θ, sin φ sin θ, cos φ)`.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [sp * ct, sp * st, cp]
    }

    /// Great-circle distance to an ambient unit vector.
    pub fn distance_to(&self, u: &[f64; 3]) -> f64 {
        angle_between(&self.to_unit_vector(), u)
    }

    pub fn geodesic_distance(&self, other: &SpherePoint) -> f64 {
        self.distance_to(&other.to_unit_vector())
    }
}

pub(crate) fn wrap_theta(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Angle between two unit vectors, accurate for nearby and antipodal pairs.
pub fn angle_between(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    sin.atan2(cos)
}

/// Round metric `g = diag(sin²φ, 1)` in the coordinate basis `(∂θ, ∂φ)`.
pub fn metric_at(p: &SpherePoint) -> [[f64; 2]; 2] {
    let s = p.phi.sin();
    [[s * s, 0.0], [0.0, 1.0]]
}

/// `det g = sin²φ`.
pub fn metric_det(p: &SpherePoint) -> f64 {
    let s = p.phi.sin();
    s * s
}

/// `h(x, y) = cos φx cos φy + sin φx sin φy cos(θx − θy)`, the cosine of the
/// geodesic distance, clamped to `[-1, 1]`.
pub fn kernel_argument(x: &SpherePoint, y: &SpherePoint) -> f64 {
    let h = x.phi.cos() * y.phi.cos() + x.phi.sin() * y.phi.sin() * (x.theta - y.theta).cos();
    h.clamp(-1.0, 1.0)
}

/// Components `(v1, v2)` of a field and their first coordinate partials at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldJet {
    pub v1: f64,
    pub v2: f64,
    pub d_theta_v1: f64,
    pub d_phi_v1: f64,
    pub d_theta_v2: f64,
    pub d_phi_v2: f64,
}

/// Components of `V⊥ = v2 ∂θ − sin²φ v1 ∂φ`, the positively oriented
/// orthogonal companion of `V`.
pub fn perp_components(j: &FieldJet, p: &SpherePoint) -> (f64, f64) {
    let s = p.phi.sin();
    (j.v2, -s * s * j.v1)
}

/// `(‖V‖_g, ‖V⊥‖_g)` with `‖V⊥‖ = ‖V‖ sin φ`.
pub fn norms(j: &FieldJet, p: &SpherePoint) -> (f64, f64) {
    let s = p.phi.sin();
    let norm = (j.v1 * j.v1 * s * s + j.v2 * j.v2).sqrt();
    (norm, norm * s)
}

/// `⟨a, b⟩_g` for coordinate vectors `a = (a1, a2)`, `b = (b1, b2)`.
pub fn inner(p: &SpherePoint, a: (f64, f64), b: (f64, f64)) -> f64 {
    let s = p.phi.sin();
    a.0 * b.0 * s * s + a.1 * b.1
}
