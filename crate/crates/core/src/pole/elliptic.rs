use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_AGM_STEPS: usize = 64;

/// Complete elliptic integral of the first kind `K(m)` (parameter
/// convention, `m = k²`) by the arithmetic–geometric mean.
pub fn elliptic_k<T: Real>(m: T) -> Result<T> {
    if !(m >= T::zero() && m < T::one()) {
        return Err(Error::Domain(format!("elliptic K needs 0 <= m < 1, got {}", m.to_f64_lossy())));
    }
    let mut a = T::one();
    let mut b = (T::one() - m).sqrt();
    let tol = T::epsilon();
    for _ in 0..MAX_AGM_STEPS {
        if (a - b).abs() <= tol * a {
            break;
        }
        let an = T::lit(0.5) * (a + b);
        b = (a * b).sqrt();
        a = an;
    }
    Ok(T::lit(std::f64::consts::FRAC_PI_2) / a)
}

/// Jacobi elliptic functions `(sn, cn, dn)(u | m)` for real `u` and
/// `0 <= m <= 1`, by the descending Landen (AGM) scheme.
pub fn jacobi_elliptic<T: Real>(u: T, m: T) -> Result<(T, T, T)> {
    if !(m >= T::zero() && m <= T::one()) {
        return Err(Error::Domain(format!("Jacobi parameter must lie in [0, 1], got {}", m.to_f64_lossy())));
    }
    if !u.is_finite() {
        return Err(Error::Domain("Jacobi argument must be finite".into()));
    }
    if m == T::zero() {
        return Ok((u.sin(), u.cos(), T::one()));
    }
    if m == T::one() {
        let sech = T::one() / u.cosh();
        return Ok((u.tanh(), sech, sech));
    }
    let tol = T::epsilon();
    let mut a = [T::zero(); MAX_AGM_STEPS + 1];
    let mut c = [T::zero(); MAX_AGM_STEPS + 1];
    a[0] = T::one();
    c[0] = m.sqrt();
    let mut b = (T::one() - m).sqrt();
    let mut n = 0;
    while c[n].abs() > tol && n < MAX_AGM_STEPS {
        a[n + 1] = T::lit(0.5) * (a[n] + b);
        c[n + 1] = T::lit(0.5) * (a[n] - b);
        b = (a[n] * b).sqrt();
        n += 1;
    }
    let mut phi = T::lit(2.0).powi(n as i32) * a[n] * u;
    for k in (1..=n).rev() {
        phi = T::lit(0.5) * (phi + (c[k] / a[k] * phi.sin()).asin());
    }
    let sn = phi.sin();
    let cn = phi.cos();
    // dn > 0 on the real line; the identity form avoids the phase ratio,
    // whose cancellation grows with |u|.
    let dn = (T::one() - m * sn * sn).max(T::zero()).sqrt();
    Ok((sn, cn, dn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn k_at_zero() {
        assert_eq!(elliptic_k(0.0f64).unwrap(), FRAC_PI_2);
    }

    #[test]
    fn k_reference_values() {
        // mpmath.ellipk at 30 digits
        let cases = [
            (0.5, 1.8540746773013719184),
            (0.2, 1.6596235986105280064),
            (0.999, 4.8411325605502965870),
            (0.999999, 8.2940514636010622019),
        ];
        for (m, k) in cases {
            let got: f64 = elliptic_k(m).unwrap();
            assert!((got - k).abs() <= 1e-14 * k, "K({m}) = {got}");
        }
    }

    #[test]
    fn k_monotone_and_domain() {
        assert!(elliptic_k(0.8f64).unwrap() > elliptic_k(0.2).unwrap());
        assert!(elliptic_k(1.0f64).is_err());
        assert!(elliptic_k(-0.1f64).is_err());
    }

    #[test]
    fn jacobi_reference_values() {
        // mpmath.ellipfun at 30 digits
        let cases = [
            (0.3, 0.5, 0.29341273316845537748, 0.95598586182778707744, 0.97824050417436120533),
            (1.7, 0.9, 0.95223054210801865053, 0.30538008231819723530, 0.42887211987841085076),
            (-2.2, 0.3, -0.91657293210726644094, -0.39986755323267771164, 0.86485155838356822166),
            (3.0, 0.99, 0.99717031290000182933, 0.07517557496230039004, 0.12487935538031628416),
            (5.0, 0.999999, 0.99990945384100706496, 0.01345674995602436351, 0.01349384816480721636),
            (0.8, 0.01, 0.71683307160878861857, 0.69724482604599464217, 0.99742744271173885382),
            (10.0, 0.7, 0.97807328035751238944, 0.20826103392304324462, 0.57477026782488194468),
        ];
        for (u, m, sn, cn, dn) in cases {
            let (s, c, d): (f64, f64, f64) = jacobi_elliptic(u, m).unwrap();
            assert!((s - sn).abs() < 1e-12, "sn({u}|{m}) = {s}");
            assert!((c - cn).abs() < 1e-12, "cn({u}|{m}) = {c}");
            assert!((d - dn).abs() < 1e-12, "dn({u}|{m}) = {d}");
        }
    }

    #[test]
    fn degenerate_parameters() {
        let (s, c, d) = jacobi_elliptic(0.7f64, 0.0).unwrap();
        assert_eq!((s, c, d), (0.7f64.sin(), 0.7f64.cos(), 1.0));
        let (s, c, d) = jacobi_elliptic(0.7f64, 1.0).unwrap();
        assert!((s - 0.7f64.tanh()).abs() < 1e-15);
        assert!((c - 1.0 / 0.7f64.cosh()).abs() < 1e-15);
        assert_eq!(c, d);
    }

    #[test]
    fn single_precision() {
        let (s, c, d) = jacobi_elliptic(0.3f32, 0.5).unwrap();
        assert!((s - 0.293_412_73).abs() < 1e-6);
        assert!((c - 0.955_985_9).abs() < 1e-6);
        assert!((d - 0.978_240_5).abs() < 1e-6);
        assert!((elliptic_k(0.5f32).unwrap() - 1.854_074_7).abs() < 1e-6);
    }
}
