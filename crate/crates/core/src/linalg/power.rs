use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::random::standard_normal_vec;
use crate::scalar::{dot, norm, Real};

/// Seed of the power method's random start vector.
pub const POWER_METHOD_SEED: u64 = 0x5eed_0f_9e7;

/// Rayleigh-quotient estimate of the spectral radius of a symmetric
/// operator after `iters` power iterations from a fixed random start.
///
/// The estimate never exceeds `λ_max` beyond round-off.
pub fn power_method<T: Real, O: LinearOperator<T> + ?Sized>(op: &O, iters: usize) -> Result<T> {
    if iters == 0 {
        return Err(Error::InvalidConfig("power method needs at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_METHOD_SEED);
    let mut v: Vec<T> = standard_normal_vec(&mut rng, op.dim());
    let vn = norm(&v);
    v.iter_mut().for_each(|x| *x /= vn);
    let mut estimate = T::zero();
    for _ in 0..iters {
        let w = op.apply(&v)?;
        let wn = norm(&w);
        if wn == T::zero() {
            return Ok(T::zero());
        }
        estimate = dot(&v, &w) / dot(&v, &v);
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Diagonal;

    #[test]
    fn dominant_eigenvalue() {
        let est: f64 = power_method(&Diagonal(vec![3.0, 1.0]), 10).unwrap();
        assert!((est - 3.0).abs() < 1e-6);
        assert!(est <= 3.0 + 1e-12);
    }

    #[test]
    fn scaled_identity_exact_after_one_step() {
        let est: f64 = power_method(&Diagonal(vec![2.5; 6]), 1).unwrap();
        assert!((est - 2.5).abs() < 1e-14);
    }

    #[test]
    fn zero_operator() {
        assert_eq!(power_method(&Diagonal(vec![0.0; 4]), 10).unwrap(), 0.0);
    }
}
