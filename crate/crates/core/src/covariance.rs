//! Covariance of `(f, Vf, V⊥f, VVf)` at a point.
//!
//! Every entry is a differential operator in `x` and `y` applied to the
//! kernel `P_l(h(x, y))` and restricted to the diagonal. The closed forms
//! reduce to `P_l'(1)`, `P_l''(1)` and three field-dependent scalars
//! ([`TildeCoeffs`]); [`covariance_fd_oracle`] evaluates the same operators
//! by nested finite differences as an independent check.

use crate::error::{Error, Result};
use crate::geometry::{field_components, field_jet, metric_det, norms, FieldJet, FieldSpec, SpherePoint};
use crate::kac_rice::conditional_covariance;
use crate::legendre::{derivative_at_one, second_derivative_at_one, MAX_DEGREE};

/// Row/column labels of [`Cov4`].
pub const LABELS: [&str; 4] = ["f", "Vf", "Vperp_f", "VVf"];

/// Symmetric covariance of `(f, Vf, V⊥f, VVf)`, zero-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cov4 {
    pub l: usize,
    pub point: SpherePoint,
    pub entries: [[f64; 4]; 4],
}

impl Cov4 {
    fn from_upper(l: usize, point: SpherePoint, upper: [(usize, usize, f64); 10]) -> Self {
        let mut entries = [[0.0; 4]; 4];
        for (i, j, v) in upper {
            entries[i][j] = v;
            entries[j][i] = v;
        }
        Cov4 { l, point, entries }
    }

    /// Entry `(i, j)`, zero-indexed.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.entries[i][i]).sum()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        symmetric_eigenvalues(self.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// The field-dependent factors multiplying `P_l'(1)` in the entries
/// `a_24`, `a_34` and (partly) `a_44`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeCoeffs {
    pub a24_tilde: f64,
    pub a34_tilde: f64,
    pub a44_1_tilde: f64,
}

/// Evaluates the three scalar polynomials in the field components, their
/// partials and `sin φ`, `cos φ`.
pub fn tilde_coeffs(fj: &FieldJet, p: &SpherePoint) -> TildeCoeffs {
    let (s, c) = p.phi().sin_cos();
    let (a, b) = (fj.v1, fj.v2);
    let (at, ap) = (fj.d_theta_v1, fj.d_phi_v1);
    let (bt, bp) = (fj.d_theta_v2, fj.d_phi_v2);
    let (s2, sc, c2) = (s * s, s * c, c * c);

    let a24 = a * a * at * s2 + a * ap * b * s2 + a * a * b * sc + a * b * bt + b * b * bp;

    let a34 = b * a * at * s2 + b * b * a * sc + b * b * ap * s2 + b * b * a * sc + a * a * a * c * s * s2
        - a * a * bt * s2
        - a * b * bp * s2;

    // term by term, in the printed order
    let terms = [
        a * at * a * at * s2,
        a.powi(4) * s2,
        -a.powi(3) * bt * sc,
        a * a * at * b * sc,
        a * at * ap * b * s2,
        a * a * at * b * sc,
        -a * a * b * bp * sc,
        a * a * b * b * s2,
        a * a * at * b * sc,
        -a.powi(3) * bt * sc,
        a * a * bt * bt,
        a * a * b * b * c2,
        a * ap * b * b * sc,
        a * a * b * b * c2,
        a * bt * b * bp,
        b * ap * a * at * s2,
        b * a * a * at * sc,
        a * a * b * b * c2,
        a * ap * b * b * sc,
        a * ap * b * b * sc,
        ap * ap * b * b * s2,
        a * ap * b * b * sc,
        a * a * b * b * c2,
        -a * a * b * bp * sc,
        a * a * b * b * s2,
        a * b * bp * bt,
        bp * bp * b * b,
        b.powi(4),
    ];
    TildeCoeffs { a24_tilde: a24, a34_tilde: a34, a44_1_tilde: terms.iter().sum() }
}

/// How `a_44` is assembled from its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum A44Form {
    /// `3 P_l''(1) ‖V‖⁴ + ã¹_44 P_l'(1)`.
    #[default]
    Grouped,
    /// `3/8 ‖V‖⁴ l⁴ + 6/8 ‖V‖⁴ l³ + ã¹_44 l²/2 + (ã¹_44/2 − 3/8 ‖V‖⁴) l`.
    /// Kept for comparison only: it disagrees with the grouped form (and the
    /// finite-difference oracle) at orders `l²` and `l`.
    DegreePolynomial,
}

/// Closed-form covariance with the grouped `a_44`.
pub fn covariance_closed_form(l: usize, fj: &FieldJet, p: &SpherePoint) -> Result<Cov4> {
    covariance_closed_form_with(l, fj, p, A44Form::Grouped)
}

pub fn covariance_closed_form_with(l: usize, fj: &FieldJet, p: &SpherePoint, form: A44Form) -> Result<Cov4> {
    check_degree(l)?;
    let d1 = derivative_at_one(l);
    let d2 = second_derivative_at_one(l);
    let (nv, nperp) = norms(fj, p);
    let nv2 = nv * nv;
    let nv4 = nv2 * nv2;
    let t = tilde_coeffs(fj, p);
    let a44 = match form {
        A44Form::Grouped => 3.0 * d2 * nv4 + t.a44_1_tilde * d1,
        A44Form::DegreePolynomial => {
            let lf = l as f64;
            0.375 * nv4 * lf.powi(4) + 0.75 * nv4 * lf.powi(3) + 0.5 * t.a44_1_tilde * lf * lf
                + (0.5 * t.a44_1_tilde - 0.375 * nv4) * lf
        }
    };
    Ok(Cov4::from_upper(
        l,
        *p,
        [
            (0, 0, 1.0),
            (0, 1, 0.0),
            (0, 2, 0.0),
            (0, 3, -nv2 * d1),
            (1, 1, nv2 * d1),
            (1, 2, 0.0),
            (1, 3, t.a24_tilde * d1),
            (2, 2, nperp * nperp * d1),
            (2, 3, t.a34_tilde * d1),
            (3, 3, a44),
        ],
    ))
}

fn check_degree(l: usize) -> Result<()> {
    if l == 0 || l > MAX_DEGREE {
        return Err(Error::arg(format!("degree must be in 1..={MAX_DEGREE}, got {l}")));
    }
    Ok(())
}

/// Range of admissible finite-difference steps for the oracle.
pub const FD_STEP_RANGE: (f64, f64) = (1e-5, 1e-3);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Along,
    Perp,
}

type Op = (Var, Dir);

const VX: Op = (Var::X, Dir::Along);
const VY: Op = (Var::Y, Dir::Along);
const PX: Op = (Var::X, Dir::Perp);
const PY: Op = (Var::Y, Dir::Perp);

struct Oracle<'a> {
    l: usize,
    spec: &'a FieldSpec,
    step: f64,
}

impl Oracle<'_> {
    /// `P_l(h) - 1`, computed from `u = 1 - h` without cancellation so that
    /// high-order differences near the diagonal keep their precision.
    fn kernel_minus_one(&self, x: (f64, f64), y: (f64, f64)) -> f64 {
        let dphi = 0.5 * (x.1 - y.1);
        let dtheta = 0.5 * (x.0 - y.0);
        let u = 2.0 * dphi.sin().powi(2) + 2.0 * x.1.sin() * y.1.sin() * dtheta.sin().powi(2);
        let (mut prev, mut cur) = (0.0, -u);
        for n in 1..self.l {
            let nf = n as f64;
            let next = ((2.0 * nf + 1.0) * (cur - u * (1.0 + cur)) - nf * prev) / (nf + 1.0);
            prev = cur;
            cur = next;
        }
        cur
    }

    fn stencil(&self, g: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        let h = self.step;
        Ok((g(-2.0 * h)? - 8.0 * g(-h)? + 8.0 * g(h)? - g(2.0 * h)?) / (12.0 * h))
    }

    /// Applies `ops` (outermost first) to `P_l(h) - 1` at `(x, y)`.
    fn apply(&self, ops: &[Op], x: (f64, f64), y: (f64, f64)) -> Result<f64> {
        let Some((&(var, dir), rest)) = ops.split_first() else {
            return Ok(self.kernel_minus_one(x, y));
        };
        let z = if var == Var::X { x } else { y };
        let (v1, v2) = field_components(self.spec, &SpherePoint::new(z.0, z.1)?)?;
        let (w1, w2) = match dir {
            Dir::Along => (v1, v2),
            Dir::Perp => (v2, -z.1.sin().powi(2) * v1),
        };
        let shifted = |dt: f64, dp: f64| -> ((f64, f64), (f64, f64)) {
            let moved = (z.0 + dt, z.1 + dp);
            if var == Var::X {
                (moved, y)
            } else {
                (x, moved)
            }
        };
        let mut out = 0.0;
        if w1 != 0.0 {
            out += w1 * self.stencil(|d| {
                let (a, b) = shifted(d, 0.0);
                self.apply(rest, a, b)
            })?;
        }
        if w2 != 0.0 {
            out += w2 * self.stencil(|d| {
                let (a, b) = shifted(0.0, d);
                self.apply(rest, a, b)
            })?;
        }
        Ok(out)
    }
}

/// Every entry by nested 4th-order central differences of `P_l(h(x, y))`
/// in the four coordinates `(θ_x, φ_x, θ_y, φ_y)`, restricted to `x = y = p`.
pub fn covariance_fd_oracle(l: usize, spec: &FieldSpec, p: &SpherePoint, step: f64) -> Result<Cov4> {
    check_degree(l)?;
    if !(FD_STEP_RANGE.0..=FD_STEP_RANGE.1).contains(&step) {
        return Err(Error::arg(format!(
            "finite-difference step must lie in [{:e}, {:e}], got {step:e}",
            FD_STEP_RANGE.0, FD_STEP_RANGE.1
        )));
    }
    let margin = 4.0 * step;
    if p.phi() < margin || p.phi() > std::f64::consts::PI - margin {
        return Err(Error::arg("stencil would cross a pole"));
    }
    let oracle = Oracle { l, spec, step };
    let z = (p.theta(), p.phi());
    let e = |ops: &[Op]| oracle.apply(ops, z, z);
    Ok(Cov4::from_upper(
        l,
        *p,
        [
            (0, 0, 1.0 + e(&[])?),
            (0, 1, e(&[VY])?),
            (0, 2, e(&[PY])?),
            (0, 3, e(&[VY, VY])?),
            (1, 1, e(&[VX, VY])?),
            (1, 2, e(&[VX, PY])?),
            (1, 3, e(&[VX, VY, VY])?),
            (2, 2, e(&[PX, PY])?),
            (2, 3, e(&[PX, VY, VY])?),
            (3, 3, e(&[VX, VX, VY, VY])?),
        ],
    ))
}

/// Outcome of [`nondegeneracy_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nondegeneracy {
    pub nondegenerate: bool,
    /// `min(det C_11 / (‖V‖² P_l'(1)), det Δ_l / (‖V‖⁶ det g l⁶ / 16))`.
    pub margin: f64,
    pub det_c11: f64,
    pub det_delta: f64,
}

/// Below this `‖V‖` a point is treated as a zero of the field.
pub const ZERO_FIELD_NORM: f64 = 1e-10;

/// Checks that both the conditioning block and the conditional covariance
/// have positive determinant at `p`.
pub fn nondegeneracy_check(l: usize, spec: &FieldSpec, p: &SpherePoint) -> Result<Nondegeneracy> {
    let fj = field_jet(spec, p)?;
    let (nv, _) = norms(&fj, p);
    if nv < ZERO_FIELD_NORM {
        return Err(Error::DegeneratePoint { theta: p.theta(), phi: p.phi(), norm: nv });
    }
    let cov = covariance_closed_form(l, &fj, p)?;
    let det_c11 = cov.get(0, 0) * cov.get(1, 1) - cov.get(0, 1).powi(2);
    let delta = conditional_covariance(&cov)?;
    let det_delta = delta.det();
    let lf = l as f64;
    let scale_c11 = nv * nv * derivative_at_one(l);
    let scale_delta = nv.powi(6) * metric_det(p) * lf.powi(6) / 16.0;
    Ok(Nondegeneracy {
        nondegenerate: det_c11 > 0.0 && det_delta > 0.0,
        margin: (det_c11 / scale_c11).min(det_delta / scale_delta),
        det_c11,
        det_delta,
    })
}

/// Cyclic Jacobi eigenvalues of a small symmetric matrix, ascending.
pub(crate) fn symmetric_eigenvalues<const N: usize>(mut a: [[f64; N]; N]) -> [f64; N] {
    for _ in 0..100 {
        let off: f64 = (0..N).flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev = [0.0; N];
    for i in 0..N {
        ev[i] = a[i][i];
    }
    ev.sort_by(f64::total_cmp);
    ev
}
