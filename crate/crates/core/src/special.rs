//! Log-gamma, log-beta and the regularized incomplete beta function.

use alloc::format;

use crate::error::{Error, Result};

const CF_MAX_ITER: usize = 2000;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `I_x(a, b)`, relative accuracy around 1e-13.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    check_shape(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("x = {x} outside [0, 1]")));
    }
    let (lower, upper) = ln_tails(a, b, x);
    Ok(if lower <= upper {
        libm::exp(lower)
    } else {
        -libm::expm1(upper)
    })
}

fn check_shape(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta shape ({a}, {b}) must be positive"
        )));
    }
    Ok(())
}

/// `(ln I_x(a,b), ln(1 - I_x(a,b)))`, each accurate in relative terms.
///
/// The continued fraction is evaluated on whichever side of
/// `x = (a+1)/(a+b+2)` converges; the other tail is derived with `expm1`.
pub fn ln_tails(a: f64, b: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if x >= 1.0 {
        return (0.0, f64::NEG_INFINITY);
    }
    if x < (a + 1.0) / (a + b + 2.0) {
        let lower = ln_cf_tail(a, b, x);
        (lower, ln_one_minus_exp(lower))
    } else {
        let upper = ln_cf_tail(b, a, 1.0 - x);
        (ln_one_minus_exp(upper), upper)
    }
}

/// `ln(1 - e^v)` for `v <= 0`.
fn ln_one_minus_exp(v: f64) -> f64 {
    if v > -core::f64::consts::LN_2 {
        libm::log(-libm::expm1(v))
    } else {
        libm::log1p(-libm::exp(v))
    }
}

/// `ln I_x(a,b)` via the modified Lentz continued fraction; valid for
/// `x < (a+1)/(a+b+2)`.
fn ln_cf_tail(a: f64, b: f64, x: f64) -> f64 {
    let ln_front = a * libm::log(x) + b * libm::log1p(-x) - ln_beta(a, b) - libm::log(a);

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    ln_front + libm::log(h)
}

/// `ln(I_u(a,b) - I_l(a,b))`: log of the Beta(a,b) mass on `[l, u]`.
pub fn ln_beta_interval(a: f64, b: f64, l: f64, u: f64) -> f64 {
    if u <= l {
        return f64::NEG_INFINITY;
    }
    let (ll, ul) = ln_tails(a, b, l);
    let (lu, uu) = ln_tails(a, b, u);
    let half = -core::f64::consts::LN_2;
    if lu <= half {
        // both lower tails small
        lu + ln_one_minus_exp(ll - lu)
    } else if ul <= half {
        // both upper tails small
        ul + ln_one_minus_exp(uu - ul)
    } else {
        libm::log1p(-(libm::exp(ll) + libm::exp(uu)))
    }
}

/// `E[θ^k]` for Beta(a, b) truncated to `[l, u]`, `k ∈ {1, 2}`.
pub fn truncated_beta_moment(a: f64, b: f64, l: f64, u: f64, k: u32) -> Result<f64> {
    check_shape(a, b)?;
    if !(0.0..=1.0).contains(&l) || !(0.0..=1.0).contains(&u) || l >= u {
        return Err(Error::InvalidParameter(format!(
            "truncation interval [{l}, {u}]"
        )));
    }
    if !(1..=2).contains(&k) {
        return Err(Error::InvalidParameter(format!("moment order {k}")));
    }
    let ln_norm = ln_beta_interval(a, b, l, u);
    if ln_norm < libm::log(1e-300) {
        return Err(Error::DegenerateTruncation(libm::exp(ln_norm)));
    }
    let k = k as f64;
    let ln_num = ln_beta(a + k, b) + ln_beta_interval(a + k, b, l, u);
    Ok(libm::exp(ln_num - ln_beta(a, b) - ln_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Composite Simpson rule for `∫_l^u θ^{a-1}(1-θ)^{b-1} dθ / B(a,b)`,
    /// only for `a, b >= 1` where the integrand is smooth.
    fn simpson_mass(a: f64, b: f64, l: f64, u: f64) -> f64 {
        let n = 20_000;
        let h = (u - l) / n as f64;
        let f = |t: f64| {
            libm::exp((a - 1.0) * libm::log(t) + (b - 1.0) * libm::log(1.0 - t) - ln_beta(a, b))
        };
        let g = |t: f64| {
            if t <= 0.0 || t >= 1.0 {
                if (t <= 0.0 && a == 1.0) || (t >= 1.0 && b == 1.0) {
                    libm::exp(-ln_beta(a, b))
                } else {
                    0.0
                }
            } else {
                f(t)
            }
        };
        let mut s = g(l) + g(u);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(l + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn incomplete_beta_examples() {
        assert_relative_eq!(
            regularized_incomplete_beta(1.0, 1.0, 0.3).unwrap(),
            0.3,
            max_relative = 1e-13
        );
        assert_eq!(regularized_incomplete_beta(2.5, 7.0, 1.0).unwrap(), 1.0);
        assert_eq!(regularized_incomplete_beta(2.5, 7.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            regularized_incomplete_beta(2.0, 2.0, 0.5).unwrap(),
            0.5,
            max_relative = 1e-13
        );
        assert!(regularized_incomplete_beta(0.0, 1.0, 0.5).is_err());
        assert!(regularized_incomplete_beta(1.0, -2.0, 0.5).is_err());
        assert!(regularized_incomplete_beta(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(a, 1) = x^a and I_x(1, b) = 1 - (1-x)^b
        for &x in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            for &a in &[0.5, 1.0, 3.0, 40.0, 201.0] {
                let exact = libm::pow(x, a);
                assert_relative_eq!(
                    regularized_incomplete_beta(a, 1.0, x).unwrap(),
                    exact,
                    max_relative = 1e-12
                );
                let exact = 1.0 - libm::pow(1.0 - x, a);
                assert_relative_eq!(
                    regularized_incomplete_beta(1.0, a, x).unwrap(),
                    exact,
                    max_relative = 1e-12
                );
            }
        }
        // I_x(2,2) = 3x^2 - 2x^3
        for &x in &[0.1, 0.4, 0.9] {
            assert_relative_eq!(
                regularized_incomplete_beta(2.0, 2.0, x).unwrap(),
                3.0 * x * x - 2.0 * x * x * x,
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn incomplete_beta_matches_quadrature() {
        for &(a, b) in &[(2.0, 3.0), (5.5, 1.5), (12.0, 30.0), (1.0, 1.0)] {
            for &x in &[0.05, 0.3, 0.6, 0.95] {
                let q = simpson_mass(a, b, 0.0, x);
                assert_relative_eq!(
                    regularized_incomplete_beta(a, b, x).unwrap(),
                    q,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn tiny_tail_masses_keep_relative_accuracy() {
        // Beta(1, 201) on [0.9, 1]: (0.1)^201
        let m = ln_beta_interval(1.0, 201.0, 0.9, 1.0);
        assert_relative_eq!(m, 201.0 * libm::log(0.1), max_relative = 1e-12);
        // Beta(201, 1) on [0, 0.25]: 0.25^201
        let m = ln_beta_interval(201.0, 1.0, 0.0, 0.25);
        assert_relative_eq!(m, 201.0 * libm::log(0.25), max_relative = 1e-12);
        // interval inside the upper tail: (1-0.5)^b - (1-0.75)^b for a = 1
        let m = ln_beta_interval(1.0, 60.0, 0.5, 0.75);
        let exact = libm::log(libm::pow(0.5, 60.0) - libm::pow(0.25, 60.0));
        assert_relative_eq!(m, exact, max_relative = 1e-12);
    }

    #[test]
    fn truncated_moment_examples() {
        assert_relative_eq!(
            truncated_beta_moment(1.0, 1.0, 0.0, 1.0, 1).unwrap(),
            0.5,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            truncated_beta_moment(1.0, 1.0, 0.0, 0.5, 1).unwrap(),
            0.25,
            max_relative = 1e-13
        );
        // ∫ 2θ^3 dθ
        assert_relative_eq!(
            truncated_beta_moment(2.0, 1.0, 0.0, 1.0, 2).unwrap(),
            0.5,
            max_relative = 1e-13
        );
        assert!(truncated_beta_moment(1.0, 1.0, 0.5, 0.5, 1).is_err());
        assert!(truncated_beta_moment(1.0, 1.0, 0.0, 1.0, 3).is_err());
        assert!(matches!(
            truncated_beta_moment(2000.0, 1.0, 0.0, 0.1, 1),
            Err(Error::DegenerateTruncation(_))
        ));
    }

    #[test]
    fn untruncated_moments_are_closed_form() {
        for &(a, b) in &[(1.0, 1.0), (3.0, 7.0), (30.5, 2.0), (150.0, 60.0)] {
            let m1 = a / (a + b);
            let m2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0));
            assert_relative_eq!(
                truncated_beta_moment(a, b, 0.0, 1.0, 1).unwrap(),
                m1,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                truncated_beta_moment(a, b, 0.0, 1.0, 2).unwrap(),
                m2,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn truncated_moment_matches_quadrature() {
        for &(a, b, l, u) in &[
            (2.0, 3.0, 0.25, 0.5),
            (4.0, 1.0, 0.9, 1.0),
            (1.0, 9.0, 0.5, 0.75),
        ] {
            let z = simpson_mass(a, b, l, u);
            let m1 =
                simpson_mass(a + 1.0, b, l, u) * libm::exp(ln_beta(a + 1.0, b) - ln_beta(a, b)) / z;
            assert_relative_eq!(
                truncated_beta_moment(a, b, l, u, 1).unwrap(),
                m1,
                max_relative = 1e-8
            );
        }
    }
}
