//! Gaussian random spherical harmonics of a fixed degree and their 2-jets.
//!
//! A sample is `f(x) = sqrt(4π/N) Σ_k a_k Y_k(x)` with `N = 2l+1`, `a_k` i.i.d.
//! standard normal and `Y_k` the real L²-orthonormal basis
//!
//! ```text
//! Y_0   = P̄_l^0(cos φ) / sqrt(2π)
//! Y_m^c = P̄_l^m(cos φ) cos(mθ) / sqrt(π),   Y_m^s = P̄_l^m(cos φ) sin(mθ) / sqrt(π)
//! ```
//!
//! so that `E[f(x) f(y)] = P_l(h(x, y))`. Coefficients are stored in the
//! order `[a_0, a_1^c, a_1^s, a_2^c, a_2^s, ...]`.
//!
//! Evaluation at a point uses the three-term recurrence in the order `m` at
//! fixed degree (run downward from `m = l`, normalized by the addition
//! theorem `P̄_0² + 2 Σ P̄_m² = (2l+1)/2`), which costs O(l) per point.

use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{kernel_argument, perp_components, FieldJet, SpherePoint};
use crate::legendre::{legendre_jet, MAX_DEGREE};

/// One draw from the degree-`l` ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSample {
    l: usize,
    coeffs: Vec<f64>,
    seed: u64,
}

/// Value and coordinate partials of a function through order two.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub f: f64,
    pub f_theta: f64,
    pub f_phi: f64,
    pub f_theta_theta: f64,
    pub f_theta_phi: f64,
    pub f_phi_phi: f64,
}

/// `(Vf, V⊥f, VVf)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Directional {
    pub vf: f64,
    pub vperp_f: f64,
    pub vvf: f64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` in an experiment keyed by `base`. Depends only on
/// `(base, index)`, so trials can run in any order on any worker.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

/// Draws `2l+1` standard normal coefficients from a ChaCha8 stream keyed by `seed`.
pub fn sample_harmonic(l: usize, seed: u64) -> Result<HarmonicSample> {
    if l == 0 || l > MAX_DEGREE {
        return Err(Error::arg(format!("degree must be in 1..={MAX_DEGREE}, got {l}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..2 * l + 1).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(HarmonicSample { l, coeffs, seed })
}

impl HarmonicSample {
    /// Builds a sample from explicit coefficients (`2l+1` of them).
    pub fn from_coeffs(l: usize, coeffs: Vec<f64>, seed: u64) -> Result<Self> {
        if l == 0 || l > MAX_DEGREE {
            return Err(Error::arg(format!("degree must be in 1..={MAX_DEGREE}, got {l}")));
        }
        if coeffs.len() != 2 * l + 1 {
            return Err(Error::arg(format!("expected {} coefficients, got {}", 2 * l + 1, coeffs.len())));
        }
        Ok(HarmonicSample { l, coeffs, seed })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Cosine and sine coefficients of order `m` (`b_0 = 0`).
    pub fn order_coeffs(&self, m: usize) -> (f64, f64) {
        if m == 0 {
            (self.coeffs[0], 0.0)
        } else {
            (self.coeffs[2 * m - 1], self.coeffs[2 * m])
        }
    }

    /// True when every non-zonal coefficient vanishes.
    pub fn is_zonal(&self) -> bool {
        self.coeffs[1..].iter().all(|&c| c == 0.0)
    }

    /// `sqrt(4π/N)` times the basis normalization of order `m`.
    pub fn order_weight(&self, m: usize) -> f64 {
        let n = (2 * self.l + 1) as f64;
        if m == 0 {
            (2.0 / n).sqrt()
        } else {
            2.0 / n.sqrt()
        }
    }

    /// Value and all coordinate partials through order two.
    pub fn eval_jet2(&self, p: &SpherePoint) -> Jet2 {
        let row = AssocRow::new(self.l, p.phi());
        self.eval_jet2_with(&row, p.theta())
    }

    pub fn value(&self, p: &SpherePoint) -> f64 {
        self.eval_jet2(p).f
    }

    /// 2-jet at longitude `theta` on the latitude described by `row`.
    pub fn eval_jet2_with(&self, row: &AssocRow, theta: f64) -> Jet2 {
        let mut out = Jet2::default();
        let (s1, c1) = theta.sin_cos();
        let (mut s, mut c) = (0.0f64, 1.0f64);
        for m in 0..=self.l {
            if m > 0 {
                if m % 16 == 0 {
                    let (sm, cm) = (m as f64 * theta).sin_cos();
                    s = sm;
                    c = cm;
                } else {
                    let cn = c * c1 - s * s1;
                    s = s * c1 + c * s1;
                    c = cn;
                }
            }
            let (a, b) = self.order_coeffs(m);
            let w = self.order_weight(m);
            let mf = m as f64;
            let even = w * (a * c + b * s);
            let odd = w * mf * (b * c - a * s);
            out.f += even * row.values[m];
            out.f_theta += odd * row.values[m];
            out.f_phi += even * row.d1[m];
            out.f_theta_theta -= mf * mf * even * row.values[m];
            out.f_theta_phi += odd * row.d1[m];
            out.f_phi_phi += even * row.d2[m];
        }
        out
    }

    /// `(f, f_θ, f_φ)` at longitude `theta` on the latitude of `row`.
    pub fn eval_jet1_with(&self, row: &AssocRow, theta: f64) -> (f64, f64, f64) {
        let (mut f, mut ft, mut fp) = (0.0, 0.0, 0.0);
        let (s1, c1) = theta.sin_cos();
        let (mut s, mut c) = (0.0f64, 1.0f64);
        for m in 0..=self.l {
            if m > 0 {
                if m % 16 == 0 {
                    (s, c) = (m as f64 * theta).sin_cos();
                } else {
                    (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
                }
            }
            let (a, b) = self.order_coeffs(m);
            let w = self.order_weight(m);
            let even = w * (a * c + b * s);
            f += even * row.values[m];
            ft += w * m as f64 * (b * c - a * s) * row.values[m];
            fp += even * row.d1[m];
        }
        (f, ft, fp)
    }

    /// Writes the flat binary dump: `l` and `seed` as little-endian u64,
    /// then the `2l+1` coefficients as little-endian IEEE doubles.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.l as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for c in &self.coeffs {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let l = u64::from_le_bytes(buf) as usize;
        r.read_exact(&mut buf)?;
        let seed = u64::from_le_bytes(buf);
        if l == 0 || l > MAX_DEGREE {
            return Err(Error::arg(format!("dump declares degree {l}")));
        }
        let mut coeffs = Vec::with_capacity(2 * l + 1);
        for _ in 0..2 * l + 1 {
            r.read_exact(&mut buf)?;
            coeffs.push(f64::from_le_bytes(buf));
        }
        Self::from_coeffs(l, coeffs, seed)
    }

    /// CSV dump: a `l,seed` header row, its values, then one coefficient per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "l,seed")?;
        writeln!(w, "{},{}", self.l, self.seed)?;
        for c in &self.coeffs {
            writeln!(w, "{c:?}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::arg("truncated coefficient dump"))
        };
        let header = next()?;
        if header.trim() != "l,seed" {
            return Err(Error::arg(format!("bad dump header {header:?}")));
        }
        let meta = next()?;
        let (l, seed) = meta
            .trim()
            .split_once(',')
            .ok_or_else(|| Error::arg(format!("bad dump metadata {meta:?}")))?;
        let l: usize = l.parse().map_err(|_| Error::arg(format!("bad degree {l:?}")))?;
        let seed: u64 = seed.parse().map_err(|_| Error::arg(format!("bad seed {seed:?}")))?;
        let mut coeffs = Vec::with_capacity(2 * l + 1);
        for _ in 0..2 * l + 1 {
            let line = next()?;
            coeffs.push(
                line.trim()
                    .parse()
                    .map_err(|_| Error::arg(format!("bad coefficient {line:?}")))?,
            );
        }
        Self::from_coeffs(l, coeffs, seed)
    }
}

/// Free-function form of [`HarmonicSample::eval_jet2`].
pub fn eval_jet2(s: &HarmonicSample, p: &SpherePoint) -> Jet2 {
    s.eval_jet2(p)
}

// squares of rescaled values must stay far from overflow in the norm sum
const RESCALE_AT: f64 = 1e100;

/// Degree-dependent constants of the order recurrence, shared by all rows.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    l: usize,
    /// `c_m = sqrt((l+m)(l-m+1))` for `m = 0..=l+1` (so `c_{l+1} = 0`).
    coupling: Vec<f64>,
    inv_coupling: Vec<f64>,
}

impl LegendreTable {
    pub fn new(l: usize) -> Self {
        let lf = l as f64;
        let coupling: Vec<f64> = (0..=l + 1)
            .map(|m| {
                let mf = m as f64;
                ((lf + mf) * (lf - mf + 1.0)).max(0.0).sqrt()
            })
            .collect();
        let inv_coupling = coupling.iter().map(|c| if *c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        LegendreTable { l, coupling, inv_coupling }
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn row(&self, phi: f64) -> AssocRow {
        let mut row = AssocRow { l: self.l, phi, values: Vec::new(), d1: Vec::new(), d2: Vec::new() };
        self.fill(phi, &mut row);
        row
    }

    /// Recomputes `row` in place at colatitude `phi`.
    pub fn fill(&self, phi: f64, row: &mut AssocRow) {
        let l = self.l;
        let c = &self.coupling;
        let (s, cs) = phi.sin_cos();
        let cot = cs / s;
        let lf = l as f64;
        row.l = l;
        row.phi = phi;
        let p = &mut row.values;
        p.clear();
        p.resize(l + 1, 0.0);
        p[l] = 1.0;
        let mut above = 0.0;
        for m in (1..=l).rev() {
            let next = (2.0 * m as f64 * cot * p[m] - c[m + 1] * above) * self.inv_coupling[m];
            above = p[m];
            p[m - 1] = next;
            if next.abs() > RESCALE_AT {
                for v in &mut p[m - 1..=l] {
                    *v /= RESCALE_AT;
                }
                above /= RESCALE_AT;
            }
        }
        let sum: f64 = p[0] * p[0] + 2.0 * p[1..].iter().map(|v| v * v).sum::<f64>();
        let norm = ((2.0 * lf + 1.0) / 2.0 / sum).sqrt();
        for v in p.iter_mut() {
            *v *= norm;
        }
        let eig = lf * (lf + 1.0);
        let inv_s2 = 1.0 / (s * s);
        row.d1.clear();
        row.d2.clear();
        for m in 0..=l {
            let upper = if m < l { c[m + 1] * p[m + 1] } else { 0.0 };
            let d1 = if m == 0 { -upper } else { 0.5 * (c[m] * p[m - 1] - upper) };
            let mf = m as f64;
            row.d1.push(d1);
            row.d2.push(-cot * d1 - (eig - mf * mf * inv_s2) * p[m]);
        }
    }
}

/// Orthonormal factors `P̄_l^m(cos φ)`, `m = 0..=l`, at one colatitude, with
/// their first and second derivatives in `φ`.
#[derive(Debug, Clone)]
pub struct AssocRow {
    pub l: usize,
    pub phi: f64,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl AssocRow {
    pub fn new(l: usize, phi: f64) -> Self {
        LegendreTable::new(l).row(phi)
    }
}

/// Reusable evaluator of one sample: caches the recurrence table and the
/// row buffers so repeated point evaluations do not allocate.
#[derive(Debug, Clone)]
pub struct JetEvaluator<'a> {
    sample: &'a HarmonicSample,
    table: LegendreTable,
    row: AssocRow,
}

impl<'a> JetEvaluator<'a> {
    pub fn new(sample: &'a HarmonicSample) -> Self {
        let table = LegendreTable::new(sample.l());
        let row = table.row(std::f64::consts::FRAC_PI_2);
        JetEvaluator { sample, table, row }
    }

    pub fn sample(&self) -> &HarmonicSample {
        self.sample
    }

    fn load(&mut self, phi: f64) {
        if self.row.phi != phi {
            self.table.fill(phi, &mut self.row);
        }
    }

    pub fn jet2(&mut self, p: &SpherePoint) -> Jet2 {
        self.load(p.phi());
        self.sample.eval_jet2_with(&self.row, p.theta())
    }

    /// `(f, f_θ, f_φ)`.
    pub fn jet1(&mut self, p: &SpherePoint) -> (f64, f64, f64) {
        self.load(p.phi());
        self.sample.eval_jet1_with(&self.row, p.theta())
    }
}

/// Covariance kernel `E[f(x) f(y)] = P_l(h(x, y))`.
pub fn kernel(l: usize, x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
    Ok(legendre_jet(l, kernel_argument(x, y), 0)?.value())
}

/// `Vf = v1 f_θ + v2 f_φ`, `V⊥f` likewise with the perpendicular components,
/// and `VVf = v1 ∂θ(Vf) + v2 ∂φ(Vf)` expanded by the product rule.
pub fn directional_values(j: &Jet2, fj: &FieldJet, p: &SpherePoint) -> Directional {
    let (w1, w2) = perp_components(fj, p);
    let vf = fj.v1 * j.f_theta + fj.v2 * j.f_phi;
    let (gt, gp) = vf_gradient(j, fj);
    Directional {
        vf,
        vperp_f: w1 * j.f_theta + w2 * j.f_phi,
        vvf: fj.v1 * gt + fj.v2 * gp,
    }
}

/// Coordinate gradient `(∂θ(Vf), ∂φ(Vf))`.
pub fn vf_gradient(j: &Jet2, fj: &FieldJet) -> (f64, f64) {
    let gt = fj.d_theta_v1 * j.f_theta + fj.v1 * j.f_theta_theta + fj.d_theta_v2 * j.f_phi + fj.v2 * j.f_theta_phi;
    let gp = fj.d_phi_v1 * j.f_theta + fj.v1 * j.f_theta_phi + fj.d_phi_v2 * j.f_phi + fj.v2 * j.f_phi_phi;
    (gt, gp)
}
