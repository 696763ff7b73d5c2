mod common;

use std::f64::consts::PI;

use nodal_tangent::covariance::{covariance_closed_form, covariance_fd_oracle, nondegeneracy_check};
use nodal_tangent::ensemble::{directional_values, sample_harmonic};
use nodal_tangent::geometry::{field_jet, FieldSpec, SpherePoint};
use nodal_tangent::kac_rice::{
    abs_moment, conditional_covariance, expected_count, first_intensity, CondCov2, QuadratureSpec,
};

use common::{abs_moment_quadrature, random_points, rel_err};

#[test]
fn closed_form_matches_monte_carlo_moments() {
    let l = 3;
    let spec = FieldSpec::tilted();
    let p = SpherePoint::new(0.9, 1.2).unwrap();
    let fj = field_jet(&spec, &p).unwrap();
    let cov = covariance_closed_form(l, &fj, &p).unwrap();
    let n = 20_000;
    let mut acc = [[0.0; 4]; 4];
    for seed in 0..n as u64 {
        let s = sample_harmonic(l, 5_000_000 + seed).unwrap();
        let j = s.eval_jet2(&p);
        let d = directional_values(&j, &fj, &p);
        let x = [j.f, d.vf, d.vperp_f, d.vvf];
        for a in 0..4 {
            for b in 0..4 {
                acc[a][b] += x[a] * x[b];
            }
        }
    }
    let nf = n as f64;
    for a in 0..4 {
        for b in a..4 {
            let got = acc[a][b] / nf;
            let want = cov.get(a, b);
            let sd = (cov.get(a, a) * cov.get(b, b) + want * want).sqrt();
            assert!((got - want).abs() < 4.5 * sd / nf.sqrt(), "({a},{b}): {got} vs {want}");
        }
    }
}

#[test]
fn closed_form_matches_oracle_for_a_custom_field() {
    let spec = FieldSpec::custom("cos(phi) + 0.3*sin(theta)", "0.5*sin(2*theta)*sin(phi)").unwrap();
    for l in [2usize, 5, 11] {
        for p in random_points(&spec, 5, 0.3, l as u64) {
            let fj = field_jet(&spec, &p).unwrap();
            let closed = covariance_closed_form(l, &fj, &p).unwrap();
            let fd = covariance_fd_oracle(l, &spec, &p, 1e-3).unwrap();
            let scale = closed.entries.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for a in 0..4 {
                for b in 0..4 {
                    let (c, o) = (closed.get(a, b), fd.get(a, b));
                    assert!((c - o).abs() <= 1e-4 * c.abs() + 1e-9 * scale, "l={l} ({a},{b}): {c} vs {o}");
                }
            }
        }
    }
}

#[test]
fn covariance_is_symmetric_positive_semidefinite() {
    for spec in FieldSpec::catalog() {
        for l in [2usize, 7, 30, 60] {
            for p in random_points(&spec, 6, 0.1, l as u64) {
                let c = covariance_closed_form(l, &field_jet(&spec, &p).unwrap(), &p).unwrap();
                for a in 0..4 {
                    for b in 0..4 {
                        assert_eq!(c.get(a, b), c.get(b, a));
                    }
                }
                assert!(c.min_eigenvalue() >= -1e-9 * c.trace(), "{spec} l={l}");
            }
        }
    }
}

#[test]
fn schur_complement_reduces_to_the_sparse_form() {
    for spec in FieldSpec::catalog() {
        for p in random_points(&spec, 6, 0.2, 11) {
            let c = covariance_closed_form(9, &field_jet(&spec, &p).unwrap(), &p).unwrap();
            let d = conditional_covariance(&c).unwrap();
            let a = |i: usize, j: usize| c.get(i - 1, j - 1);
            let m22 = a(4, 4) - a(1, 4).powi(2) - a(2, 4).powi(2) / a(2, 2);
            assert!(rel_err(d.m11, a(3, 3)) < 1e-12);
            assert!((d.m12 - a(3, 4)).abs() < 1e-10 * a(3, 3).max(1.0));
            assert!(rel_err(d.m22, m22) < 1e-10);
            assert!(d.min_eigenvalue() >= -1e-9 * d.trace());
        }
    }
}

#[test]
fn abs_moment_matches_polar_quadrature() {
    let cases = [
        (1.0, 0.0, 1.0),
        (2.0, 1.999, 2.0),
        (3.0, -2.9999, 3.0),
        (1e-3, 0.0, 50.0),
        (4.0, 2.0, 1.0),
        (1.0, 1.0, 1.0),
        (1.0, -1.0, 1.0),
        (0.0, 0.0, 3.0),
    ];
    for (m11, m12, m22) in cases {
        let got = abs_moment(&CondCov2 { m11, m12, m22 }).unwrap();
        let want = abs_moment_quadrature(m11, m12, m22);
        assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300, "{m11},{m12},{m22}: {got} vs {want}");
    }
    assert!(abs_moment(&CondCov2 { m11: 1.0, m12: 2.0, m22: 1.0 }).is_err());
}

#[test]
fn intensity_at_degree_two_on_the_equator() {
    let k = first_intensity(2, &FieldSpec::rotation(), &SpherePoint::new(0.0, PI / 2.0).unwrap()).unwrap();
    assert!((k.value - 3f64.sqrt() / (PI * PI)).abs() < 1e-14);
}

#[test]
fn expected_count_is_invariant_under_isometry_and_scaling() {
    // the ensemble is rotation invariant and the tilted field is the
    // rotation field conjugated by a rotation of the sphere; its zeros sit
    // inside the chart, where the product rule converges only like 1/n
    let q = QuadratureSpec::default();
    for l in [3usize, 8] {
        let rot = expected_count(l, &FieldSpec::rotation(), &q).unwrap();
        let tilted = expected_count(l, &FieldSpec::tilted(), &q).unwrap();
        let scaled = expected_count(l, &FieldSpec::rotation().scaled(-3.0), &q).unwrap();
        let tol = 2.0 * (rot.error_estimate + tilted.error_estimate);
        assert!((tilted.value - rot.value).abs() <= tol, "l={l}: {tilted:?} vs {rot:?}");
        assert!(rel_err(tilted.value, rot.value) < 1e-3);
        assert!(rel_err(scaled.value, rot.value) < 1e-12);
    }
}

#[test]
fn expected_count_matches_independent_midpoint_rule() {
    let l = 4;
    let spec = FieldSpec::rotation();
    let want = expected_count(l, &spec, &QuadratureSpec::default()).unwrap().value;
    // by symmetry the intensity of the rotation field depends on φ only
    let n = 4000;
    let mut sum = 0.0;
    for j in 0..n {
        let phi = PI * (j as f64 + 0.5) / n as f64;
        let k = first_intensity(l, &spec, &SpherePoint::new(0.0, phi).unwrap()).unwrap();
        sum += k.value * phi.sin();
    }
    let got = 2.0 * PI * sum * PI / n as f64;
    assert!(rel_err(got, want) < 1e-4, "{got} vs {want}");
}

#[test]
fn degree_one_is_degenerate() {
    let p = SpherePoint::new(0.4, 1.3).unwrap();
    let r = nondegeneracy_check(1, &FieldSpec::tilted(), &p).unwrap();
    assert!(!r.nondegenerate);
}
