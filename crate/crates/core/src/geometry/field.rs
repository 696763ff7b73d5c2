use std::fmt;
use std::str::FromStr;

use super::{Expr, FieldJet, SpherePoint};
use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-6;

/// The component formulas of a vector field.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    /// Rotation about the z-axis: `v1 = 1, v2 = 0`.
    Rotation,
    /// Gradient of the height function `z = cos φ`: `v1 = 0, v2 = -sin φ`.
    ZGradient,
    /// Rotation about the x-axis: `v1 = -cot φ cos θ, v2 = -sin θ`. Its zeros
    /// `±e_x` lie inside the chart.
    Tilted,
    /// Components given as expressions in `theta` and `phi`; partials are
    /// taken by central differences.
    Custom { v1: Expr, v2: Expr, source: String },
}

/// An isolated zero of a field with its order of vanishing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPoint {
    /// Ambient unit vector of the zero (the poles are allowed here).
    pub unit: [f64; 3],
    pub order: u32,
}

/// Declared zero set of a field, used by the excision and cap logic.
#[derive(Debug, Clone, PartialEq)]
pub enum ZeroSet {
    Points(Vec<ZeroPoint>),
    /// The field vanishes along a curve; no point caps are applied.
    Curve,
}

impl ZeroSet {
    pub fn points(&self) -> &[ZeroPoint] {
        match self {
            ZeroSet::Points(p) => p,
            ZeroSet::Curve => &[],
        }
    }

    /// Largest declared order of vanishing, if any zeros are declared.
    pub fn max_order(&self) -> Option<u32> {
        self.points().iter().map(|z| z.order).max()
    }
}

/// A smooth vector field on the chart plus its declared zero set.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub zeros: ZeroSet,
    /// Constant multiplier on both components.
    pub scale: f64,
}

const NORTH: [f64; 3] = [0.0, 0.0, 1.0];
const SOUTH: [f64; 3] = [0.0, 0.0, -1.0];

fn simple_zeros(a: [f64; 3], b: [f64; 3]) -> ZeroSet {
    ZeroSet::Points(vec![ZeroPoint { unit: a, order: 1 }, ZeroPoint { unit: b, order: 1 }])
}

impl FieldSpec {
    pub fn rotation() -> Self {
        FieldSpec { kind: FieldKind::Rotation, zeros: simple_zeros(NORTH, SOUTH), scale: 1.0 }
    }

    pub fn z_gradient() -> Self {
        FieldSpec { kind: FieldKind::ZGradient, zeros: simple_zeros(NORTH, SOUTH), scale: 1.0 }
    }

    pub fn tilted() -> Self {
        FieldSpec {
            kind: FieldKind::Tilted,
            zeros: simple_zeros([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]),
            scale: 1.0,
        }
    }

    /// A field from component expressions, with no declared zeros.
    pub fn custom(v1: &str, v2: &str) -> Result<Self> {
        Ok(FieldSpec {
            kind: FieldKind::Custom {
                v1: Expr::parse(v1)?,
                v2: Expr::parse(v2)?,
                source: format!("{};{}", v1.trim(), v2.trim()),
            },
            zeros: ZeroSet::Points(Vec::new()),
            scale: 1.0,
        })
    }

    /// The built-in fields.
    pub fn catalog() -> Vec<FieldSpec> {
        vec![Self::rotation(), Self::z_gradient(), Self::tilted()]
    }

    pub fn with_zeros(mut self, zeros: ZeroSet) -> Self {
        self.zeros = zeros;
        self
    }

    /// The same field multiplied by a constant `c`.
    pub fn scaled(mut self, c: f64) -> Self {
        self.scale *= c;
        self
    }

    /// Short identifier as accepted by [`FieldSpec::from_str`].
    pub fn name(&self) -> String {
        match &self.kind {
            FieldKind::Rotation => "rotation".into(),
            FieldKind::ZGradient => "zgrad".into(),
            FieldKind::Tilted => "tilted".into(),
            FieldKind::Custom { source, .. } => format!("custom:{source}"),
        }
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 1.0 {
            write!(f, "{}", self.name())
        } else {
            write!(f, "{}*{}", self.scale, self.name())
        }
    }
}

impl FromStr for FieldSpec {
    type Err = Error;

    /// Parses `rotation`, `zgrad`, `tilted` or `custom:<v1-expr>;<v2-expr>`,
    /// optionally wrapped in double quotes.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(s).trim();
        match s {
            "rotation" => Ok(Self::rotation()),
            "zgrad" => Ok(Self::z_gradient()),
            "tilted" => Ok(Self::tilted()),
            _ => {
                let body = s
                    .strip_prefix("custom:")
                    .ok_or_else(|| Error::arg(format!("unknown field {s:?}")))?;
                let (v1, v2) = body
                    .split_once(';')
                    .ok_or_else(|| Error::arg("custom field needs '<v1-expr>;<v2-expr>'"))?;
                Self::custom(v1, v2)
            }
        }
    }
}

fn checked(name: &str, v: f64, p: &SpherePoint) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::FieldEvaluation(format!(
            "{name} is not finite at (theta={}, phi={})",
            p.theta(),
            p.phi()
        )))
    }
}

/// `(v1, v2)` at `p`, without partials.
pub fn field_components(spec: &FieldSpec, p: &SpherePoint) -> Result<(f64, f64)> {
    let (theta, phi) = (p.theta(), p.phi());
    let (v1, v2) = match &spec.kind {
        FieldKind::Rotation => (1.0, 0.0),
        FieldKind::ZGradient => (0.0, -phi.sin()),
        FieldKind::Tilted => (-theta.cos() * phi.cos() / phi.sin(), -theta.sin()),
        FieldKind::Custom { v1, v2, .. } => (
            checked("v1", v1.eval(theta, phi), p)?,
            checked("v2", v2.eval(theta, phi), p)?,
        ),
    };
    Ok((spec.scale * v1, spec.scale * v2))
}

/// Components and first partials of the field at `p`: analytic for the
/// built-in fields, central differences with step `1e-6` for custom ones.
pub fn field_jet(spec: &FieldSpec, p: &SpherePoint) -> Result<FieldJet> {
    let (theta, phi) = (p.theta(), p.phi());
    let c = spec.scale;
    let jet = match &spec.kind {
        FieldKind::Rotation => FieldJet { v1: 1.0, ..Default::default() },
        FieldKind::ZGradient => FieldJet { v2: -phi.sin(), d_phi_v2: -phi.cos(), ..Default::default() },
        FieldKind::Tilted => {
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            FieldJet {
                v1: -ct * cp / sp,
                v2: -st,
                d_theta_v1: st * cp / sp,
                d_phi_v1: ct / (sp * sp),
                d_theta_v2: -ct,
                d_phi_v2: 0.0,
            }
        }
        FieldKind::Custom { v1, v2, .. } => {
            let h = FD_STEP;
            let ev = |e: &Expr, name: &str, t: f64, f: f64| checked(name, e.eval(t, f), p);
            let d = |e: &Expr, name: &str, dt: f64, dp: f64| -> Result<f64> {
                let plus = ev(e, name, theta + dt, phi + dp)?;
                let minus = ev(e, name, theta - dt, phi - dp)?;
                Ok((plus - minus) / (2.0 * h))
            };
            FieldJet {
                v1: ev(v1, "v1", theta, phi)?,
                v2: ev(v2, "v2", theta, phi)?,
                d_theta_v1: d(v1, "v1", h, 0.0)?,
                d_phi_v1: d(v1, "v1", 0.0, h)?,
                d_theta_v2: d(v2, "v2", h, 0.0)?,
                d_phi_v2: d(v2, "v2", 0.0, h)?,
            }
        }
    };
    Ok(FieldJet {
        v1: c * jet.v1,
        v2: c * jet.v2,
        d_theta_v1: c * jet.d_theta_v1,
        d_phi_v1: c * jet.d_phi_v1,
        d_theta_v2: c * jet.d_theta_v2,
        d_phi_v2: c * jet.d_phi_v2,
    })
}
