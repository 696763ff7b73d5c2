//! Legendre polynomials and L²-orthonormal associated Legendre functions.
//!
//! `P_l` and its first three derivatives come from the three-term recurrence
//! in the degree, differentiated term by term (the "derivative tower"), so a
//! call is O(l) with uniform accuracy. Within `1e-9` of `t = ±1` the jet is
//! instead rebuilt from the exact endpoint derivatives
//! `P_l^(k)(1) = (l+k)! / (2^k k! (l-k)!)` by a short Taylor expansion.
//!
//! Associated functions are normalized so that `∫_{-1}^{1} P̄_l^m(t)² dt = 1`
//! and carry no Condon-Shortley phase. The sectoral seed is propagated with a
//! separate binary exponent so that degrees of a few hundred do not underflow
//! near the poles.

use crate::error::{Error, Result};

/// Largest degree accepted by the evaluators.
pub const MAX_DEGREE: usize = 4096;

/// Highest derivative order of `P_l` that is ever needed.
pub const MAX_DERIVATIVE: usize = 3;

const ENDPOINT_BAND: f64 = 1e-9;

/// `P_l(t)` and derivatives `d^k P_l / dt^k` for `k ≤ k_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreJet {
    pub l: usize,
    pub t: f64,
    /// `values[k]` is the k-th derivative; orders above `k_max` are zero.
    pub values: [f64; MAX_DERIVATIVE + 1],
}

impl LegendreJet {
    pub fn value(&self) -> f64 {
        self.values[0]
    }

    pub fn derivative(&self, k: usize) -> f64 {
        self.values[k]
    }
}

/// Orthonormalized associated Legendre factor and its first two `t`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssocLegendreJet {
    pub l: usize,
    pub m: usize,
    pub t: f64,
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

fn check_argument(t: f64) -> Result<()> {
    if !t.is_finite() || t.abs() > 1.0 {
        return Err(Error::arg(format!("Legendre argument {t} outside [-1, 1]")));
    }
    Ok(())
}

fn check_degree(l: usize) -> Result<()> {
    if l > MAX_DEGREE {
        return Err(Error::arg(format!("degree {l} exceeds {MAX_DEGREE}")));
    }
    Ok(())
}

/// `d^k P_l / dt^k` at `t = 1`, zero for `k > l`.
pub fn endpoint_derivative(l: usize, k: usize) -> f64 {
    if k > l {
        return 0.0;
    }
    let lf = l as f64;
    (1..=k).fold(1.0, |acc, j| {
        let j = j as f64;
        acc * (lf + j) * (lf - j + 1.0) / (2.0 * j)
    })
}

/// `P_l'(1) = l(l+1)/2`.
pub fn derivative_at_one(l: usize) -> f64 {
    endpoint_derivative(l, 1)
}

/// `P_l''(1) = (l-1) l (l+1) (l+2) / 8`.
pub fn second_derivative_at_one(l: usize) -> f64 {
    endpoint_derivative(l, 2)
}

/// Evaluates `P_l` and its derivatives up to order `k_max ≤ 3` at `t`.
pub fn legendre_jet(l: usize, t: f64, k_max: usize) -> Result<LegendreJet> {
    check_degree(l)?;
    check_argument(t)?;
    if k_max > MAX_DERIVATIVE {
        return Err(Error::arg(format!("derivative order {k_max} exceeds {MAX_DERIVATIVE}")));
    }
    let values = if t.abs() >= 1.0 - ENDPOINT_BAND {
        endpoint_taylor(l, t, k_max)
    } else {
        tower(l, t, k_max)
    };
    Ok(LegendreJet { l, t, values })
}

fn tower(l: usize, t: f64, k_max: usize) -> [f64; MAX_DERIVATIVE + 1] {
    let mut prev = [0.0; MAX_DERIVATIVE + 1];
    let mut cur = [0.0; MAX_DERIVATIVE + 1];
    prev[0] = 1.0;
    if l == 0 {
        return prev;
    }
    cur[0] = t;
    cur[1] = 1.0;
    for n in 1..l {
        let nf = n as f64;
        let mut next = [0.0; MAX_DERIVATIVE + 1];
        for k in 0..=k_max {
            let lower = if k > 0 { k as f64 * cur[k - 1] } else { 0.0 };
            next[k] = ((2.0 * nf + 1.0) * (t * cur[k] + lower) - nf * prev[k]) / (nf + 1.0);
        }
        prev = cur;
        cur = next;
    }
    for v in cur.iter_mut().skip(k_max + 1) {
        *v = 0.0;
    }
    cur
}

/// Taylor expansion about the nearer endpoint. Exact at `t = ±1`; the
/// truncation after 12 terms is below rounding for `|t ∓ 1| ≤ 1e-9`.
fn endpoint_taylor(l: usize, t: f64, k_max: usize) -> [f64; MAX_DERIVATIVE + 1] {
    let e = t.signum();
    let dt = t - e;
    let mut out = [0.0; MAX_DERIVATIVE + 1];
    for (k, slot) in out.iter_mut().enumerate().take(k_max + 1) {
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 1.0;
        for j in 0..=12usize {
            let order = k + j;
            if order > l {
                break;
            }
            if j > 0 {
                pow *= dt;
                fact *= j as f64;
            }
            // P^(i)(-1) = (-1)^(l+i) P^(i)(1)
            let sign = if e < 0.0 && (l + order) % 2 == 1 { -1.0 } else { 1.0 };
            sum += sign * endpoint_derivative(l, order) * pow / fact;
        }
        *slot = sum;
    }
    out
}

const SCALE_EXP: i32 = 600;

/// Orthonormal `P̄_l^m(t)` with its first two derivatives in `t`.
///
/// At `t = ±1` the non-zonal factors vanish but their `t`-derivatives are
/// unbounded for odd `m`, so `m ≥ 1` is rejected there.
pub fn assoc_legendre_jet(l: usize, m: usize, t: f64) -> Result<AssocLegendreJet> {
    check_degree(l)?;
    check_argument(t)?;
    if m > l {
        return Err(Error::arg(format!("order m = {m} exceeds degree l = {l}")));
    }
    let norm0 = ((2 * l + 1) as f64 / 2.0).sqrt();
    if m == 0 {
        let jet = legendre_jet(l, t, 2)?;
        return Ok(AssocLegendreJet {
            l,
            m,
            t,
            value: norm0 * jet.values[0],
            d1: norm0 * jet.values[1],
            d2: norm0 * jet.values[2],
        });
    }
    if t.abs() >= 1.0 {
        return Err(Error::arg(format!(
            "t-derivatives of the order-{m} factor are singular at t = {t}"
        )));
    }
    let (value, prev) = assoc_pair(l, m, t);
    let one_minus = 1.0 - t * t;
    let (lf, mf) = (l as f64, m as f64);
    // (t²-1) P' = l t P_l^m - (l+m) P_{l-1}^m, rewritten for the orthonormal factors
    let ratio = if l > m {
        ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf * lf - mf * mf)).sqrt()
    } else {
        0.0
    };
    let d1 = (lf * t * value - ratio * prev) / (t * t - 1.0);
    let d2 = (2.0 * t * d1 - (lf * (lf + 1.0) - mf * mf / one_minus) * value) / one_minus;
    Ok(AssocLegendreJet { l, m, t, value, d1, d2 })
}

/// `(P̄_l^m(t), P̄_{l-1}^m(t))` by the sectoral recurrence in `m` followed by the
/// three-term recurrence in the degree. `P̄_{m-1}^m` is taken as 0.
fn assoc_pair(l: usize, m: usize, t: f64) -> (f64, f64) {
    let s = (1.0 - t * t).sqrt();
    let mut mant = std::f64::consts::FRAC_1_SQRT_2;
    let mut exp: i32 = 0;
    for k in 1..=m {
        let kf = k as f64;
        mant *= ((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
        if mant != 0.0 && mant.abs() < 2f64.powi(-SCALE_EXP) {
            mant *= 2f64.powi(SCALE_EXP);
            exp -= SCALE_EXP;
        }
    }
    let mf = m as f64;
    let mut prev = 0.0;
    let mut cur = mant;
    for n in (m + 1)..=l {
        let nf = n as f64;
        let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
        let b = (((nf - 1.0) * (nf - 1.0) - mf * mf) / (4.0 * (nf - 1.0) * (nf - 1.0) - 1.0)).sqrt();
        let next = a * (t * cur - b * prev);
        prev = cur;
        cur = next;
    }
    (ldexp(cur, exp), ldexp(prev, exp))
}

fn ldexp(x: f64, exp: i32) -> f64 {
    if exp == 0 {
        return x;
    }
    // split so the intermediate factor never underflows to zero prematurely
    let mut v = x;
    let mut e = exp;
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn p3_closed_form() {
        let jet = legendre_jet(3, 0.5, 3).unwrap();
        assert!(close(jet.value(), -0.4375, 1e-15));
        // (15t² - 3)/2, 15t, 15
        assert!(close(jet.derivative(1), 0.375, 1e-14));
        assert!(close(jet.derivative(2), 7.5, 1e-14));
        assert!(close(jet.derivative(3), 15.0, 1e-14));
    }

    #[test]
    fn endpoint_values() {
        let jet = legendre_jet(5, 1.0, 3).unwrap();
        assert_eq!(jet.value(), 1.0);
        assert_eq!(jet.derivative(1), 15.0);
        let jet = legendre_jet(2, 1.0, 2).unwrap();
        assert_eq!(jet.derivative(2), 3.0);
        assert_eq!(jet.derivative(3), 0.0);
        for l in 0..40 {
            let jet = legendre_jet(l, 1.0, 3).unwrap();
            assert_eq!(jet.value(), 1.0);
            assert_eq!(jet.derivative(1), (l * (l + 1)) as f64 / 2.0);
            if l < 3 {
                assert_eq!(jet.derivative(3), 0.0);
            }
        }
    }

    #[test]
    fn endpoint_band_matches_tower() {
        // just inside and just outside the Taylor band
        for &l in &[1usize, 7, 50, 200] {
            for &t in &[1.0 - 2e-9, -1.0 + 2e-9] {
                let a = tower(l, t, 3);
                let b = endpoint_taylor(l, t, 3);
                for k in 0..4 {
                    assert!(close(a[k], b[k], 1e-11), "l={l} t={t} k={k}: {} vs {}", a[k], b[k]);
                }
            }
        }
    }

    #[test]
    fn parity() {
        for l in 0..30 {
            for &t in &[0.1, 0.37, 0.9, 1.0] {
                let a = legendre_jet(l, t, 3).unwrap();
                let b = legendre_jet(l, -t, 3).unwrap();
                for k in 0..4 {
                    let sign = if (l + k) % 2 == 0 { 1.0 } else { -1.0 };
                    assert!((a.values[k] - sign * b.values[k]).abs() <= 1e-12 * (1.0 + a.values[k].abs()));
                }
            }
        }
    }

    #[test]
    fn argument_errors() {
        assert!(legendre_jet(3, 1.5, 1).is_err());
        assert!(legendre_jet(3, f64::NAN, 1).is_err());
        assert!(legendre_jet(3, 0.2, 4).is_err());
        assert!(legendre_jet(MAX_DEGREE + 1, 0.2, 1).is_err());
        assert!(assoc_legendre_jet(3, 4, 0.2).is_err());
        assert!(assoc_legendre_jet(3, 1, 1.0).is_err());
        assert!(assoc_legendre_jet(3, 0, 1.0).is_ok());
    }

    #[test]
    fn degree_one_and_zonal_values() {
        for &t in &[-0.8, -0.1, 0.0, 0.3, 0.95] {
            let jet = assoc_legendre_jet(1, 0, t).unwrap();
            assert!(close(jet.value, (1.5f64).sqrt() * t, 1e-15));
        }
        let jet = assoc_legendre_jet(4, 0, 0.0).unwrap();
        assert!(close(jet.value, (4.5f64).sqrt() * 3.0 / 8.0, 1e-15));
    }

    #[test]
    fn sectoral_survives_high_degree_near_pole() {
        // P̄_200^200 at sin = 1e-3 is ~1e-600: must underflow cleanly, not NaN
        let jet = assoc_legendre_jet(200, 200, (1.0f64 - 1e-6).sqrt()).unwrap();
        assert!(jet.value.is_finite());
        let jet = assoc_legendre_jet(200, 150, 0.2).unwrap();
        assert!(jet.value.is_finite() && jet.value != 0.0);
    }
}
