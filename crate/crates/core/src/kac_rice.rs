//! Kac–Rice first intensity of the V-tangent nodal set and its integral.
//!
//! For `F = (f, Vf)` the coordinate Jacobian at a zero of `F` satisfies
//! `|det DF| = |V⊥f · VVf| / ‖V‖²`, so the expected number of points per unit
//! area is
//!
//! ```text
//! K_V(x) = E[ |V⊥f · VVf| | f = Vf = 0 ] / (2π sqrt(det C_11) ‖V‖ ‖V⊥‖)
//! ```
//!
//! where the conditional moment is the exact bivariate absolute moment of
//! the Schur complement `Δ_l`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::covariance::{covariance_closed_form, symmetric_eigenvalues, Cov4, ZERO_FIELD_NORM};
use crate::error::{Error, Result};
use crate::geometry::{field_jet, norms, FieldJet, FieldSpec, SpherePoint};
use crate::quadrature::gauss_legendre_on;

/// Conditional covariance of `(V⊥f, VVf)` given `(f, Vf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondCov2 {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

impl CondCov2 {
    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m12
    }

    /// Correlation, clamped to `[-1, 1]`; zero if either variance vanishes.
    pub fn rho(&self) -> f64 {
        let denom = (self.m11 * self.m22).sqrt();
        if denom > 0.0 {
            (self.m12 / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn trace(&self) -> f64 {
        self.m11 + self.m22
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues([[self.m11, self.m12], [self.m12, self.m22]])[0]
    }
}

/// Schur complement `C_22 - C_21 C_11⁻¹ C_12` for the split
/// `(f, Vf) | (V⊥f, VVf)`.
pub fn conditional_covariance(c: &Cov4) -> Result<CondCov2> {
    let a22 = c.get(1, 1);
    if a22 <= 0.0 || a22.is_nan() {
        return Err(Error::DegenerateConditioning(a22));
    }
    let (a11, a12) = (c.get(0, 0), c.get(0, 1));
    let det = a11 * a22 - a12 * a12;
    if det <= 0.0 || det.is_nan() {
        return Err(Error::DegenerateConditioning(det));
    }
    // C_11⁻¹ = [[a22, -a12], [-a12, a11]] / det
    let inv = [[a22 / det, -a12 / det], [-a12 / det, a11 / det]];
    let cross = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for p in 0..2 {
            for q in 0..2 {
                s += c.get(i, p) * inv[p][q] * c.get(q, j);
            }
        }
        s
    };
    Ok(CondCov2 {
        m11: c.get(2, 2) - cross(2, 2),
        m12: c.get(2, 3) - cross(2, 3),
        m22: c.get(3, 3) - cross(3, 3),
    })
}

/// Relative tolerance on negative eigenvalues accepted as rounding.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// `E|XY|` for a centred Gaussian pair with covariance `d`:
/// `(2/π) sqrt(m11 m22) (sqrt(1 - ρ²) + ρ arcsin ρ)`.
pub fn abs_moment(d: &CondCov2) -> Result<f64> {
    let tol = PSD_TOLERANCE * d.trace().abs().max(f64::MIN_POSITIVE);
    let min_eig = d.min_eigenvalue();
    if min_eig.is_nan() || min_eig < -tol {
        return Err(Error::InvalidCovariance { min_eigenvalue: min_eig });
    }
    let (m11, m22) = (d.m11.max(0.0), d.m22.max(0.0));
    let rho = d.rho();
    Ok(2.0 / PI * (m11 * m22).sqrt() * ((1.0 - rho * rho).max(0.0).sqrt() + rho * rho.asin()))
}

/// First intensity at one point with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityValue {
    pub point: SpherePoint,
    /// Expected points per unit area.
    pub value: f64,
    pub det_c11: f64,
    pub det_delta: f64,
    pub rho: f64,
}

impl IntensityValue {
    /// Density with respect to `dθ dφ`.
    pub fn chart_density(&self) -> f64 {
        self.value * self.point.phi().sin()
    }
}

pub fn first_intensity(l: usize, spec: &FieldSpec, p: &SpherePoint) -> Result<IntensityValue> {
    let fj = field_jet(spec, p)?;
    intensity_from_jet(l, &fj, p)
}

/// [`first_intensity`] from an already evaluated field jet.
pub fn intensity_from_jet(l: usize, fj: &FieldJet, p: &SpherePoint) -> Result<IntensityValue> {
    let (nv, nperp) = norms(fj, p);
    if nv < ZERO_FIELD_NORM {
        return Err(Error::DegeneratePoint { theta: p.theta(), phi: p.phi(), norm: nv });
    }
    let cov = covariance_closed_form(l, fj, p)?;
    let det_c11 = cov.get(0, 0) * cov.get(1, 1) - cov.get(0, 1).powi(2);
    let delta = conditional_covariance(&cov)?;
    let moment = abs_moment(&delta)?;
    Ok(IntensityValue {
        point: *p,
        value: moment / (2.0 * PI * det_c11.sqrt() * nv * nperp),
        det_c11,
        det_delta: delta.det(),
        rho: delta.rho(),
    })
}

/// Treatment of the region `‖V‖ < l^{-α}` near the zeros of `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExcisionPolicy {
    /// Integrate over the whole sphere.
    #[default]
    None,
    /// Set the integrand to zero on the excised region.
    Exclude,
    /// Hold the integrand at the nearest retained node of the same longitude.
    Clamp,
}

impl std::str::FromStr for ExcisionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Self::None),
            "exclude" => Ok(Self::Exclude),
            "clamp" => Ok(Self::Clamp),
            other => Err(Error::arg(format!("unknown excision policy {other:?}"))),
        }
    }
}

impl std::fmt::Display for ExcisionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Exclude => "exclude",
            Self::Clamp => "clamp",
        })
    }
}

/// Admissible open window for the excision exponent.
pub const ALPHA_WINDOW: (f64, f64) = (5.0 / 54.0, 1.0 / 3.0);

/// Largest node count per axis reached by automatic doubling.
pub const MAX_NODES: usize = 4096;

/// Relative change between doublings accepted as converged.
pub const CONVERGED: f64 = 1e-4;

/// Relative change still accepted (with its error estimate) at [`MAX_NODES`].
pub const RESOLUTION_LIMIT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub n_phi: usize,
    pub n_theta: usize,
    pub excision_alpha: f64,
    pub policy: ExcisionPolicy,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { n_phi: 256, n_theta: 256, excision_alpha: 0.2, policy: ExcisionPolicy::None }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = ALPHA_WINDOW;
        if !(self.excision_alpha > lo && self.excision_alpha < hi) {
            return Err(Error::arg(format!(
                "excision alpha must lie in ({lo:.6}, {hi:.6}), got {}",
                self.excision_alpha
            )));
        }
        // at least one doubling must fit under the cap
        let cap = MAX_NODES / 2;
        if self.n_phi < 2 || self.n_theta < 2 || self.n_phi > cap || self.n_theta > cap {
            return Err(Error::arg(format!("node counts must lie in 2..={cap}")));
        }
        Ok(())
    }
}

/// Integrated intensity with its doubling error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountEstimate {
    pub value: f64,
    /// `|I(2n) - I(n)|` for the last doubling.
    pub error_estimate: f64,
    pub n_phi: usize,
    pub n_theta: usize,
}

/// `∫_{S²} K_V dA`: Gauss–Legendre in `φ` times the trapezoid rule in `θ`,
/// doubling both node counts until the relative change drops below `1e-4`.
pub fn expected_count(l: usize, spec: &FieldSpec, q: &QuadratureSpec) -> Result<CountEstimate> {
    q.validate()?;
    let (mut n_phi, mut n_theta) = (q.n_phi, q.n_theta);
    let mut prev = integrate_fixed(l, spec, q, n_phi, n_theta)?;
    loop {
        let (np, nt) = (n_phi * 2, n_theta * 2);
        let next = integrate_fixed(l, spec, q, np, nt)?;
        let change = (next - prev).abs();
        let rel = change / next.abs().max(f64::MIN_POSITIVE);
        n_phi = np;
        n_theta = nt;
        let at_cap = n_phi * 2 > MAX_NODES || n_theta * 2 > MAX_NODES;
        if rel < CONVERGED || (at_cap && rel <= RESOLUTION_LIMIT) {
            return Ok(CountEstimate { value: next, error_estimate: change, n_phi, n_theta });
        }
        if at_cap {
            return Err(Error::Resolution { relative_change: rel, nodes: n_phi.max(n_theta) });
        }
        prev = next;
    }
}

/// The product rule at fixed node counts, without doubling.
pub fn integrate_fixed(l: usize, spec: &FieldSpec, q: &QuadratureSpec, n_phi: usize, n_theta: usize) -> Result<f64> {
    let (phis, weights) = gauss_legendre_on(n_phi, 0.0, PI);
    let threshold = match q.policy {
        ExcisionPolicy::None => 0.0,
        _ => (l as f64).powf(-q.excision_alpha),
    };
    let d_theta = 2.0 * PI / n_theta as f64;
    // rows are chart densities per dθ dφ along one θ column
    let columns: Vec<Result<Vec<f64>>> = (0..n_theta)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 * d_theta;
            let mut vals = Vec::with_capacity(n_phi);
            let mut kept = Vec::with_capacity(n_phi);
            for &phi in &phis {
                let p = SpherePoint::new(theta, phi)?;
                let fj = field_jet(spec, &p)?;
                let (nv, _) = norms(&fj, &p);
                if nv < ZERO_FIELD_NORM.max(threshold) {
                    vals.push(0.0);
                    kept.push(false);
                } else {
                    vals.push(intensity_from_jet(l, &fj, &p)?.chart_density());
                    kept.push(true);
                }
            }
            if q.policy == ExcisionPolicy::Clamp {
                clamp_column(&mut vals, &kept);
            }
            Ok(vals)
        })
        .collect();
    let mut col_sums = Vec::with_capacity(n_theta);
    for col in columns {
        let col = col?;
        let terms: Vec<f64> = col.iter().zip(&weights).map(|(v, w)| v * w).collect();
        col_sums.push(pairwise_sum(&terms));
    }
    Ok(d_theta * pairwise_sum(&col_sums))
}

/// Replaces excised entries by the value at the nearest retained index (ties
/// toward smaller `φ`); zero if the whole column is excised.
fn clamp_column(vals: &mut [f64], kept: &[bool]) {
    let n = vals.len();
    let original = vals.to_vec();
    for i in 0..n {
        if kept[i] {
            continue;
        }
        let mut best = None;
        for d in 1..n {
            if i >= d && kept[i - d] {
                best = Some(i - d);
                break;
            }
            if i + d < n && kept[i + d] {
                best = Some(i + d);
                break;
            }
        }
        vals[i] = best.map_or(0.0, |j| original[j]);
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn equator_cov(l: usize) -> Cov4 {
        let p = SpherePoint::new(0.0, FRAC_PI_2).unwrap();
        covariance_closed_form(l, &field_jet(&FieldSpec::rotation(), &p).unwrap(), &p).unwrap()
    }

    #[test]
    fn schur_complement_rotation_equator() {
        let d = conditional_covariance(&equator_cov(2)).unwrap();
        assert!((d.m11 - 3.0).abs() < 1e-13);
        assert!(d.m12.abs() < 1e-13);
        assert!((d.m22 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_conditioning() {
        let mut c = equator_cov(2);
        c.entries[1][1] = 0.0;
        assert!(matches!(conditional_covariance(&c), Err(Error::DegenerateConditioning(_))));
    }

    #[test]
    fn abs_moment_examples() {
        let id = CondCov2 { m11: 1.0, m12: 0.0, m22: 1.0 };
        assert!((abs_moment(&id).unwrap() - 2.0 / PI).abs() < 1e-15);
        let one = CondCov2 { m11: 1.0, m12: 1.0, m22: 1.0 };
        assert!((abs_moment(&one).unwrap() - 1.0).abs() < 1e-15);
        let bad = CondCov2 { m11: 1.0, m12: 2.0, m22: 1.0 };
        assert!(matches!(abs_moment(&bad), Err(Error::InvalidCovariance { .. })));
    }

    #[test]
    fn intensity_rotation_equator() {
        let p = SpherePoint::new(1.0, FRAC_PI_2).unwrap();
        let k = first_intensity(2, &FieldSpec::rotation(), &p).unwrap();
        assert!((k.value - 3f64.sqrt() / (PI * PI)).abs() < 1e-14);
        let q = SpherePoint::new(4.0, FRAC_PI_2).unwrap();
        let k2 = first_intensity(2, &FieldSpec::rotation(), &q).unwrap();
        assert!((k.value - k2.value).abs() < 1e-12 * k.value);
    }

    #[test]
    fn zero_of_field_is_rejected() {
        let p = SpherePoint::new(0.0, FRAC_PI_2).unwrap();
        assert!(matches!(
            first_intensity(5, &FieldSpec::tilted(), &p),
            Err(Error::DegeneratePoint { .. })
        ));
    }

    #[test]
    fn alpha_window_enforced() {
        let mut q = QuadratureSpec::default();
        q.excision_alpha = 0.05;
        assert!(q.validate().unwrap_err().is_argument());
        q.excision_alpha = 1.0 / 3.0;
        assert!(q.validate().is_err());
        q.excision_alpha = 0.2;
        assert!(q.validate().is_ok());
    }

    #[test]
    fn clamp_fills_from_nearest_kept() {
        let mut v = vec![0.0, 0.0, 5.0, 7.0, 0.0];
        clamp_column(&mut v, &[false, false, true, true, false]);
        assert_eq!(v, vec![5.0, 5.0, 5.0, 7.0, 7.0]);
        let mut w = vec![0.0; 3];
        clamp_column(&mut w, &[false; 3]);
        assert_eq!(w, vec![0.0; 3]);
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&xs) - xs.iter().sum::<f64>()).abs() < 1e-12);
    }
}
