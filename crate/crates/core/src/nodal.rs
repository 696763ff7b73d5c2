//! Counting the V-tangent nodal points `{f = 0, Vf = 0}` of one sample.
//!
//! The chart is covered by an `n × n` grid with `n = density·l + 1`. Values of
//! `f` and `Vf` at all nodes of a latitude row come from three inverse FFTs
//! over the orders `m`. Every cell in which both `f` and `Vf` may vanish seeds
//! a damped Newton iteration on `(θ, φ) ↦ (f, Vf)`; converged points are
//! filtered, de-duplicated and counted.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::ensemble::{directional_values, vf_gradient, HarmonicSample, JetEvaluator, LegendreTable};
use crate::error::{Error, Result};
use crate::geometry::{field_components, field_jet, FieldSpec, SpherePoint};
use crate::legendre::assoc_legendre_jet;

/// Smallest accepted grid density (cells per wavelength-scaled unit).
pub const MIN_DENSITY: usize = 4;
/// Density used by [`count`].
pub const DEFAULT_DENSITY: usize = 8;
/// Geodesic merge radius, in units of `1/l`.
pub const MERGE_FACTOR: f64 = 0.2;
/// Geodesic radius of the excluded caps around the poles and zeros of `V`.
pub const CAP_RADIUS: f64 = 1e-3;
/// More than this many distinct candidates per `l²` signals a curve of solutions.
pub const CLUSTER_FACTOR: f64 = 8.0;

const MAX_ITERATIONS: usize = 50;
const STEP_TOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-11;

/// A refined point of `Z_V(f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPoint {
    pub location: SpherePoint,
    /// `max(|f|, |Vf|)` at the returned location.
    pub residual: f64,
    /// Determinant of the coordinate Jacobian of `(f, Vf)`.
    pub jacobian_det: f64,
    pub iterations: usize,
}

/// Result of [`find_tangent_points`].
#[derive(Debug, Clone, PartialEq)]
pub struct CountReport {
    pub count: usize,
    pub points: Vec<TangentPoint>,
    /// Cells whose corner values admitted a common zero.
    pub seeded_cells: usize,
    /// Seeds whose Newton iteration failed.
    pub diverged: usize,
    /// Converged points dropped for lying in a pole or zero cap.
    pub excluded_in_caps: usize,
    /// Converged points absorbed by an earlier point within the merge radius.
    pub merged: usize,
    pub cap_radius: f64,
}

/// Damped Newton from `start`. `Ok(None)` signals divergence: the iteration
/// cap was hit, the chart was left, or the Jacobian became singular.
pub fn newton_refine(s: &HarmonicSample, spec: &FieldSpec, start: &SpherePoint) -> Result<Option<TangentPoint>> {
    refine(&mut JetEvaluator::new(s), spec, start)
}

fn refine(ev: &mut JetEvaluator<'_>, spec: &FieldSpec, start: &SpherePoint) -> Result<Option<TangentPoint>> {
    let l = ev.sample().l() as f64;
    let max_step = 0.5 / l;
    let max_drift = 2.0 / l;
    let (mut theta, mut phi) = (start.theta(), start.phi());
    for it in 1..=MAX_ITERATIONS {
        let p = SpherePoint::new(theta, phi)?;
        let (f, vf, jac) = system(ev, spec, &p)?;
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return Ok(None);
        }
        let mut dt = -(jac[1][1] * f - jac[0][1] * vf) / det;
        let mut dp = -(-jac[1][0] * f + jac[0][0] * vf) / det;
        let len = dt.hypot(dp);
        if len > max_step {
            dt *= max_step / len;
            dp *= max_step / len;
        }
        // halve until the residual does not grow
        let r0 = f.abs().max(vf.abs());
        let mut accepted = None;
        let mut lambda = 1.0;
        for _ in 0..12 {
            let (nt, np) = (theta + lambda * dt, phi + lambda * dp);
            if np > 0.0 && np < PI {
                let q = SpherePoint::new(nt, np)?;
                let (f1, vf1) = values(ev, spec, &q)?;
                if f1.abs().max(vf1.abs()) <= r0 {
                    accepted = Some(q);
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some(q) = accepted else {
            return Ok(None);
        };
        let step = lambda * len.min(max_step);
        theta = q.theta();
        phi = q.phi();
        if q.geodesic_distance(start) > max_drift {
            // a root this far away is seeded by its own cell
            return Ok(None);
        }
        if step < STEP_TOL {
            let q = SpherePoint::new(theta, phi)?;
            let (f1, vf1, jac1) = system(ev, spec, &q)?;
            let residual = f1.abs().max(vf1.abs());
            if residual < RESIDUAL_TOL {
                return Ok(Some(TangentPoint {
                    location: q,
                    residual,
                    jacobian_det: jac1[0][0] * jac1[1][1] - jac1[0][1] * jac1[1][0],
                    iterations: it,
                }));
            }
            if lambda < 1.0 {
                // stalled away from a root
                return Ok(None);
            }
        }
    }
    Ok(None)
}

/// `f`, `Vf` and the coordinate Jacobian of `(f, Vf)`.
fn system(ev: &mut JetEvaluator<'_>, spec: &FieldSpec, p: &SpherePoint) -> Result<(f64, f64, [[f64; 2]; 2])> {
    let j = ev.jet2(p);
    let fj = field_jet(spec, p)?;
    let d = directional_values(&j, &fj, p);
    let (gt, gp) = vf_gradient(&j, &fj);
    Ok((j.f, d.vf, [[j.f_theta, j.f_phi], [gt, gp]]))
}

/// `f` and `Vf` only.
fn values(ev: &mut JetEvaluator<'_>, spec: &FieldSpec, p: &SpherePoint) -> Result<(f64, f64)> {
    let (f, f_theta, f_phi) = ev.jet1(p);
    let (v1, v2) = field_components(spec, p)?;
    Ok((f, v1 * f_theta + v2 * f_phi))
}

/// Values of `f` and `Vf` on the seeding grid.
struct Grid {
    n_theta: usize,
    phis: Vec<f64>,
    f: Vec<Vec<f64>>,
    vf: Vec<Vec<f64>>,
}

impl Grid {
    fn theta(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.n_theta as f64
    }
}

fn evaluate_grid(s: &HarmonicSample, spec: &FieldSpec, n: usize) -> Result<Grid> {
    let l = s.l();
    let n_theta = n - 1;
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_inverse(n_theta);
    let phis: Vec<f64> = (0..n).map(|j| CAP_RADIUS + (PI - 2.0 * CAP_RADIUS) * j as f64 / (n - 1) as f64).collect();
    let mut f_rows = Vec::with_capacity(n);
    let mut vf_rows = Vec::with_capacity(n);
    let mut buf_f = vec![Complex64::default(); n_theta];
    let mut buf_t = vec![Complex64::default(); n_theta];
    let mut buf_p = vec![Complex64::default(); n_theta];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let table = LegendreTable::new(l);
    let mut row = table.row(phis[0]);
    for &phi in &phis {
        table.fill(phi, &mut row);
        for b in [&mut buf_f, &mut buf_t, &mut buf_p] {
            b.iter_mut().for_each(|c| *c = Complex64::default());
        }
        for m in 0..=l {
            let (a, b) = s.order_coeffs(m);
            let base = Complex64::new(a, -b) * s.order_weight(m);
            // orders beyond the Nyquist index fold back; n_theta > 2l avoids this
            let k = m % n_theta;
            buf_f[k] += base * row.values[m];
            buf_t[k] += base * Complex64::new(0.0, m as f64) * row.values[m];
            buf_p[k] += base * row.d1[m];
        }
        fft.process_with_scratch(&mut buf_f, &mut scratch);
        fft.process_with_scratch(&mut buf_t, &mut scratch);
        fft.process_with_scratch(&mut buf_p, &mut scratch);
        let mut fr = Vec::with_capacity(n_theta);
        let mut vr = Vec::with_capacity(n_theta);
        for i in 0..n_theta {
            let theta = 2.0 * PI * i as f64 / n_theta as f64;
            let (v1, v2) = field_components(spec, &SpherePoint::new(theta, phi)?)?;
            fr.push(buf_f[i].re);
            vr.push(v1 * buf_t[i].re + v2 * buf_p[i].re);
        }
        f_rows.push(fr);
        vf_rows.push(vr);
    }
    Ok(Grid { n_theta, phis, f: f_rows, vf: vf_rows })
}

/// True when the four corner values admit a zero inside the cell: a sign
/// change, an exact zero, or a smallest magnitude below the corner spread.
fn may_vanish(q: [f64; 4]) -> bool {
    let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 && hi >= 0.0 {
        return true;
    }
    let min_abs = q.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    min_abs < hi - lo
}

/// How far outside the unit cell a root of the bilinear model may lie and
/// still seed the cell, in cell widths.
const BILINEAR_MARGIN: f64 = 0.5;

/// Relative size of a negative discriminant below which the model is
/// treated as possibly hiding a close pair of roots.
const NEAR_DOUBLE: f64 = 0.5;

/// Common roots of the bilinear interpolants of `f` and `g` over the cell
/// `[0, 1]²` (corner order `(0,0), (1,0), (0,1), (1,1)`), searched in the
/// cell widened by [`BILINEAR_MARGIN`], plus a flag raised when the model is
/// degenerate or the two zero curves nearly touch, so that it cannot tell
/// zero roots from a close pair.
fn bilinear_model(f: [f64; 4], g: [f64; 4]) -> (Vec<(f64, f64)>, bool) {
    let coeffs = |q: [f64; 4]| [q[0], q[1] - q[0], q[2] - q[0], q[3] - q[1] - q[2] + q[0]];
    let a = coeffs(f);
    let b = coeffs(g);
    // eliminate w through f: (b0 + b1 u)(a2 + a3 u) - (b2 + b3 u)(a0 + a1 u) = 0
    let qa = b[1] * a[3] - b[3] * a[1];
    let qb = b[0] * a[3] + b[1] * a[2] - b[2] * a[1] - b[3] * a[0];
    let qc = b[0] * a[2] - b[2] * a[0];
    let scale = qa.abs().max(qb.abs()).max(qc.abs());
    if scale == 0.0 || !scale.is_finite() {
        return (vec![(0.5, 0.5)], true);
    }
    let mut roots = Vec::with_capacity(2);
    if qa.abs() <= 1e-12 * scale {
        if qb.abs() <= 1e-12 * scale {
            return (vec![(0.5, 0.5)], true);
        }
        roots.push(-qc / qb);
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            let vertex = -qb / (2.0 * qa);
            let inside = (-BILINEAR_MARGIN..=1.0 + BILINEAR_MARGIN).contains(&vertex);
            let near = -disc < NEAR_DOUBLE * (qb * qb + (4.0 * qa * qc).abs());
            return (Vec::new(), inside && near);
        }
        let sq = disc.sqrt();
        let q = -0.5 * (qb + qb.signum() * sq);
        roots.push(q / qa);
        if q != 0.0 {
            roots.push(qc / q);
        }
    }
    let (lo, hi) = (-BILINEAR_MARGIN, 1.0 + BILINEAR_MARGIN);
    let mut out = Vec::with_capacity(2);
    for u in roots {
        if !(lo..=hi).contains(&u) {
            continue;
        }
        let (fd, gd) = (a[2] + a[3] * u, b[2] + b[3] * u);
        let w = if fd.abs() >= gd.abs() {
            if fd == 0.0 {
                out.push((u, 0.5));
                continue;
            }
            -(a[0] + a[1] * u) / fd
        } else {
            -(b[0] + b[1] * u) / gd
        };
        if (lo..=hi).contains(&w) {
            out.push((u, w));
        }
    }
    (out, false)
}

/// A grid cell with corner values in the order `(θ0,φ0), (θ1,φ0), (θ0,φ1), (θ1,φ1)`.
struct Cell {
    theta: (f64, f64),
    phi: (f64, f64),
    f: [f64; 4],
    vf: [f64; 4],
}

/// Deepest level of 2×2 subdivision for ambiguous cells.
const MAX_SUBDIVISION: usize = 3;

/// Pushes Newton starting points for `cell`, subdividing it with exact
/// evaluations while the bilinear model cannot resolve a close pair.
fn seed_cell(
    ev: &mut JetEvaluator<'_>,
    spec: &FieldSpec,
    cell: &Cell,
    depth: usize,
    seeds: &mut Vec<SpherePoint>,
) -> Result<()> {
    if !(may_vanish(cell.f) && may_vanish(cell.vf)) {
        return Ok(());
    }
    let (roots, ambiguous) = bilinear_model(cell.f, cell.vf);
    let (t0, t1) = cell.theta;
    let (p0, p1) = cell.phi;
    if ambiguous && depth < MAX_SUBDIVISION {
        let (tm, pm) = (0.5 * (t0 + t1), 0.5 * (p0 + p1));
        let mut at = |t: f64, p: f64| -> Result<(f64, f64)> { values(ev, spec, &SpherePoint::new(t, p)?) };
        // 3×3 node values, row-major in φ
        let mid = [at(tm, p0)?, at(t0, pm)?, at(tm, pm)?, at(t1, pm)?, at(tm, p1)?];
        let corner = |k: usize| (cell.f[k], cell.vf[k]);
        let nodes = [
            [corner(0), mid[0], corner(1)],
            [mid[1], mid[2], mid[3]],
            [corner(2), mid[4], corner(3)],
        ];
        let ts = [t0, tm, t1];
        let ps = [p0, pm, p1];
        for a in 0..2 {
            for b in 0..2 {
                let pick = [nodes[a][b], nodes[a][b + 1], nodes[a + 1][b], nodes[a + 1][b + 1]];
                let sub = Cell {
                    theta: (ts[b], ts[b + 1]),
                    phi: (ps[a], ps[a + 1]),
                    f: pick.map(|x| x.0),
                    vf: pick.map(|x| x.1),
                };
                seed_cell(ev, spec, &sub, depth + 1, seeds)?;
            }
        }
        return Ok(());
    }
    // the bilinear model can miss a close pair the prefilter still sees
    let mut roots = roots;
    if changes_sign(cell.f) && changes_sign(cell.vf) {
        roots.push((0.5, 0.5));
    }
    for (u, w) in roots {
        let theta = t0 + u * (t1 - t0);
        let phi = (p0 + w * (p1 - p0)).clamp(0.5 * CAP_RADIUS, PI - 0.5 * CAP_RADIUS);
        seeds.push(SpherePoint::new(theta, phi)?);
    }
    Ok(())
}

fn changes_sign(q: [f64; 4]) -> bool {
    q.iter().any(|&x| x > 0.0) && q.iter().any(|&x| x < 0.0)
}

fn in_cap(p: &SpherePoint, spec: &FieldSpec) -> bool {
    if p.phi() < CAP_RADIUS || p.phi() > PI - CAP_RADIUS {
        return true;
    }
    spec.zeros.points().iter().any(|z| p.distance_to(&z.unit) < CAP_RADIUS)
}

/// Finds and counts the V-tangent nodal points of `s`.
pub fn find_tangent_points(s: &HarmonicSample, spec: &FieldSpec, grid_density: usize) -> Result<CountReport> {
    if grid_density < MIN_DENSITY {
        return Err(Error::arg(format!("grid density must be at least {MIN_DENSITY}, got {grid_density}")));
    }
    let l = s.l();
    let lf = l as f64;
    let n = grid_density * l + 1;
    let grid = evaluate_grid(s, spec, n)?;

    let max_f = grid.f.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let max_vf = grid.vf.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if max_vf <= 1e-12 * lf * max_f {
        return Err(Error::DegenerateSample(
            "Vf vanishes identically, so the solution set is a curve".into(),
        ));
    }

    let mut ev = JetEvaluator::new(s);
    let mut seeds = Vec::new();
    let mut seeded_cells = 0;
    for j in 0..n - 1 {
        for i in 0..grid.n_theta {
            let i1 = (i + 1) % grid.n_theta;
            let cell = Cell {
                theta: (grid.theta(i), grid.theta(i) + 2.0 * PI / grid.n_theta as f64),
                phi: (grid.phis[j], grid.phis[j + 1]),
                f: [grid.f[j][i], grid.f[j][i1], grid.f[j + 1][i], grid.f[j + 1][i1]],
                vf: [grid.vf[j][i], grid.vf[j][i1], grid.vf[j + 1][i], grid.vf[j + 1][i1]],
            };
            let before = seeds.len();
            seed_cell(&mut ev, spec, &cell, 0, &mut seeds)?;
            if seeds.len() > before {
                seeded_cells += 1;
            }
        }
    }

    let floor = 1e-12 * lf.powi(3);
    let mut diverged = 0;
    let mut excluded = 0;
    let mut found = Vec::new();
    for seed in &seeds {
        match refine(&mut ev, spec, seed)? {
            Some(tp) if tp.jacobian_det.abs() > floor => {
                if in_cap(&tp.location, spec) {
                    excluded += 1;
                } else {
                    found.push(tp);
                }
            }
            _ => diverged += 1,
        }
    }

    found.sort_by(|a, b| {
        a.location
            .phi()
            .total_cmp(&b.location.phi())
            .then(a.location.theta().total_cmp(&b.location.theta()))
    });
    let radius = MERGE_FACTOR / lf;
    let mut points: Vec<TangentPoint> = Vec::new();
    let mut merged = 0;
    for tp in found {
        let phi = tp.location.phi();
        let duplicate = points
            .iter()
            .rev()
            .take_while(|q| phi - q.location.phi() <= radius)
            .any(|q| q.location.geodesic_distance(&tp.location) <= radius);
        if duplicate {
            merged += 1;
        } else {
            points.push(tp);
        }
    }

    if points.len() as f64 > CLUSTER_FACTOR * lf * lf {
        return Err(Error::DegenerateSample(format!(
            "{} distinct candidates exceed {CLUSTER_FACTOR}·l², indicating a curve of solutions",
            points.len()
        )));
    }
    Ok(CountReport {
        count: points.len(),
        points,
        seeded_cells,
        diverged,
        excluded_in_caps: excluded,
        merged,
        cap_radius: CAP_RADIUS,
    })
}

/// Number of V-tangent nodal points at the default grid density.
pub fn count(s: &HarmonicSample, spec: &FieldSpec) -> Result<usize> {
    Ok(find_tangent_points(s, spec, DEFAULT_DENSITY)?.count)
}

/// `(f, Vf)` by direct summation over the basis with the degree-recurrence
/// Legendre factors, independent of the grid and jet code paths.
pub fn direct_values(s: &HarmonicSample, spec: &FieldSpec, p: &SpherePoint) -> Result<(f64, f64)> {
    let (theta, phi) = (p.theta(), p.phi());
    let (sin_phi, t) = (phi.sin(), phi.cos());
    let (mut f, mut f_theta, mut f_phi) = (0.0, 0.0, 0.0);
    for m in 0..=s.l() {
        let jet = assoc_legendre_jet(s.l(), m, t)?;
        let (a, b) = s.order_coeffs(m);
        let w = s.order_weight(m);
        let (sm, cm) = (m as f64 * theta).sin_cos();
        f += w * (a * cm + b * sm) * jet.value;
        f_theta += w * m as f64 * (b * cm - a * sm) * jet.value;
        f_phi += w * (a * cm + b * sm) * (-sin_phi * jet.d1);
    }
    let (v1, v2) = field_components(spec, p)?;
    Ok((f, v1 * f_theta + v2 * f_phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::sample_harmonic;

    fn bilinear_roots(f: [f64; 4], g: [f64; 4]) -> Vec<(f64, f64)> {
        bilinear_model(f, g).0
    }

    #[test]
    fn predicate() {
        assert!(may_vanish([1.0, -1.0, 2.0, 3.0]));
        assert!(may_vanish([0.0, 1.0, 2.0, 3.0]));
        assert!(may_vanish([0.1, 1.0, 1.0, 1.0]));
        assert!(!may_vanish([1.0, 1.1, 1.2, 1.05]));
    }

    #[test]
    fn bilinear_model_roots() {
        // f = u - 0.3, g = w - 0.6
        let f = [-0.3, 0.7, -0.3, 0.7];
        let g = [-0.6, -0.6, 0.4, 0.4];
        let r = bilinear_roots(f, g);
        assert_eq!(r.len(), 1);
        let (u, w) = r[0];
        assert!((u - 0.3).abs() < 1e-14 && (w - 0.6).abs() < 1e-14);
        // root at u = 3 is outside the widened cell
        let f = [-3.0, -2.0, -3.0, -2.0];
        assert!(bilinear_roots(f, g).is_empty());
        // f = uw - 0.1, g = u - w: roots u = w = ±sqrt(0.1), both in the widened cell
        let f = [-0.1, -0.1, -0.1, 0.9];
        let g = [0.0, 1.0, -1.0, 0.0];
        let mut r = bilinear_roots(f, g);
        r.sort_by(|x, y| x.0.total_cmp(&y.0));
        assert_eq!(r.len(), 2);
        assert!((r[0].0 + 0.1f64.sqrt()).abs() < 1e-14 && (r[1].1 - 0.1f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn zonal_rotation_is_degenerate() {
        let mut coeffs = vec![0.0; 9];
        coeffs[0] = 1.0;
        let s = HarmonicSample::from_coeffs(4, coeffs, 0).unwrap();
        assert!(matches!(
            find_tangent_points(&s, &FieldSpec::rotation(), 8),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn low_density_rejected() {
        let s = sample_harmonic(4, 1).unwrap();
        assert!(find_tangent_points(&s, &FieldSpec::rotation(), 3).unwrap_err().is_argument());
    }

    #[test]
    fn points_are_roots_and_refinement_stable() {
        let s = sample_harmonic(4, 1).unwrap();
        let spec = FieldSpec::rotation();
        let r8 = find_tangent_points(&s, &spec, 8).unwrap();
        let r16 = find_tangent_points(&s, &spec, 16).unwrap();
        assert_eq!(r8.count, r16.count);
        assert!(r8.count > 0);
        for tp in &r8.points {
            let (f, vf) = direct_values(&s, &spec, &tp.location).unwrap();
            assert!(f.abs() + vf.abs() < 1e-10, "{f} {vf}");
        }
    }

    #[test]
    fn fixed_point_converges_in_one_step() {
        let s = sample_harmonic(6, 3).unwrap();
        let spec = FieldSpec::rotation();
        let r = find_tangent_points(&s, &spec, 8).unwrap();
        let p = r.points[0].location;
        let again = newton_refine(&s, &spec, &p).unwrap().unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.location.geodesic_distance(&p) < 1e-12);
    }

    #[test]
    fn grid_matches_direct_summation() {
        let s = sample_harmonic(7, 11).unwrap();
        let spec = FieldSpec::tilted();
        let g = evaluate_grid(&s, &spec, 29).unwrap();
        for &(i, j) in &[(0usize, 0usize), (3, 5), (27, 28), (14, 14)] {
            let p = SpherePoint::new(g.theta(i), g.phis[j]).unwrap();
            let (f, vf) = direct_values(&s, &spec, &p).unwrap();
            assert!((g.f[j][i] - f).abs() < 1e-12);
            assert!((g.vf[j][i] - vf).abs() < 1e-10 * (1.0 + vf.abs()));
        }
    }
}
