use crate::error::{Error, Result};
use crate::scalar::Real;

/// `T_0(x), ..., T_{n-1}(x)` by the three-term recurrence
/// `T_{k+1} = 2x T_k - T_{k-1}`.
pub fn chebyshev_values<T: Real>(x: T, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(T::one());
    if n == 1 {
        return out;
    }
    out.push(x);
    let two_x = T::lit(2.0) * x;
    for k in 2..n {
        let next = two_x * out[k - 1] - out[k - 2];
        out.push(next);
    }
    out
}

pub(crate) fn check_point<T: Real>(x: &[T]) -> Result<()> {
    for (k, &v) in x.iter().enumerate() {
        if !(v >= -T::one() && v <= T::one()) {
            return Err(Error::Domain(format!(
                "coordinate {k} = {} outside [-1, 1]",
                v.to_f64_lossy()
            )));
        }
    }
    Ok(())
}

/// Tensor-product basis values `T_{i_1}(x^1) ... T_{i_d}(x^d)` for every
/// multi-index, flattened with the first axis varying slowest.
pub fn tensor_basis<T: Real>(x: &[T], n_cheb: usize) -> Vec<T> {
    let d = x.len();
    let per_axis: Vec<Vec<T>> = x.iter().map(|&xk| chebyshev_values(xk, n_cheb)).collect();
    let total = n_cheb.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let mut v = T::one();
        for (axis, &i) in idx.iter().enumerate() {
            v *= per_axis[axis][i];
        }
        out.push(v);
        // odometer increment, last axis fastest
        for axis in (0..d).rev() {
            idx[axis] += 1;
            if idx[axis] < n_cheb {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

/// Precomputed tensor-product Chebyshev basis at every data point
/// (`N x n_cheb^d`, row-major).
#[derive(Debug, Clone)]
pub struct ChebyshevBasis<T> {
    n_points: usize,
    n_terms: usize,
    n_cheb: usize,
    values: Vec<T>,
}

impl<T: Real> ChebyshevBasis<T> {
    pub fn new(points: &[T], d: usize, n_cheb: usize) -> Self {
        let n_points = points.len() / d;
        let n_terms = n_cheb.pow(d as u32);
        let mut values = Vec::with_capacity(n_points * n_terms);
        for p in points.chunks_exact(d) {
            values.extend(tensor_basis(p, n_cheb));
        }
        Self { n_points, n_terms, n_cheb, values }
    }

    #[inline]
    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    #[inline]
    pub fn n_cheb(&self) -> usize {
        self.n_cheb
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.n_terms..(i + 1) * self.n_terms]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_matches_trig_form() {
        for &x in &[-1.0f64, -0.73, 0.0, 0.2, 0.999, 1.0] {
            let t = chebyshev_values(x, 12);
            for (n, &tn) in t.iter().enumerate() {
                let expected = (n as f64 * x.acos()).cos();
                assert!((tn - expected).abs() < 1e-12, "T_{n}({x})");
            }
        }
    }

    #[test]
    fn endpoints_are_exact() {
        let t = chebyshev_values(1.0f64, 20);
        assert!(t.iter().all(|&v| v == 1.0));
        let t = chebyshev_values(-1.0f64, 20);
        for (n, &v) in t.iter().enumerate() {
            assert_eq!(v, if n % 2 == 0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn tensor_order_is_first_axis_slowest() {
        let b = tensor_basis(&[0.5f64, -0.25], 2);
        // (0,0) (0,1) (1,0) (1,1)
        assert_eq!(b, vec![1.0, -0.25, 0.5, -0.125]);
    }

    #[test]
    fn out_of_box_is_rejected() {
        assert!(check_point(&[0.0f64, 1.5]).is_err());
        assert!(check_point(&[f64::NAN]).is_err());
        assert!(check_point(&[1.0f64, -1.0]).is_ok());
    }
}
