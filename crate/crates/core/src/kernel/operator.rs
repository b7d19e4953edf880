use rayon::prelude::*;

use super::{HyperParams, KernelModel};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, Real};

/// Rows per streamed block.
pub const DEFAULT_TILE_ROWS: usize = 1024;

/// Matrix-free `A(θ) = σ² I + K(θ)` over a [`KernelModel`].
///
/// Every product streams over row blocks of `tile` rows and evaluates kernel
/// entries on the fly, so temporaries are `O(N)`. Row `i` of any product is
/// reduced over `j = 0..N` in ascending order regardless of how blocks are
/// scheduled, which keeps results bitwise reproducible.
#[derive(Debug, Clone)]
pub struct KernelOperator<'a, T> {
    model: &'a KernelModel<T>,
    hp: HyperParams<T>,
    amp: Vec<T>,
    noise_variance: T,
    inv_two_ell_sq: T,
    tile: usize,
}

/// Per-vector accumulators produced by one streamed pass.
struct PassOutput<T> {
    /// `w_i = Σ_j G_ij a_j z_j` where `G` is the Gaussian factor and `a` the
    /// amplitude `exp(C_θ)`.
    w: Vec<Vec<T>>,
    /// `q_i = Σ_j G_ij r_ij² a_j z_j`, only when requested.
    q: Option<Vec<Vec<T>>>,
}

impl<'a, T: Real> KernelOperator<'a, T> {
    pub fn new(model: &'a KernelModel<T>, hp: HyperParams<T>) -> Result<Self> {
        if hp.d() != model.data().dim() {
            return Err(Error::DimensionMismatch { expected: model.data().dim(), got: hp.d() });
        }
        if hp.n_cheb() != model.basis().n_cheb() {
            return Err(Error::DimensionMismatch {
                expected: model.basis().n_cheb(),
                got: hp.n_cheb(),
            });
        }
        let basis = model.basis();
        let amp: Vec<T> =
            (0..model.len()).map(|i| dot(basis.row(i), hp.cheb()).exp()).collect();
        if !all_finite(&amp) {
            return Err(Error::NumericalOverflow("exp(C_θ) overflowed at a data point".into()));
        }
        Ok(Self {
            model,
            noise_variance: hp.noise_variance(),
            inv_two_ell_sq: T::one() / hp.two_ell_sq(),
            hp,
            amp,
            tile: DEFAULT_TILE_ROWS,
        })
    }

    pub fn with_tile(mut self, tile: usize) -> Self {
        self.tile = tile.max(1);
        self
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.model.len()
    }

    #[inline]
    pub fn hyperparams(&self) -> &HyperParams<T> {
        &self.hp
    }

    #[inline]
    pub fn model(&self) -> &'a KernelModel<T> {
        self.model
    }

    #[inline]
    pub fn noise_variance(&self) -> T {
        self.noise_variance
    }

    /// `exp(C_θ(x_i))` at every data point.
    #[inline]
    pub fn amplitudes(&self) -> &[T] {
        &self.amp
    }

    fn check_len(&self, z: &[T]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        Ok(())
    }

    fn pass(&self, vectors: &[&[T]], with_r2: bool) -> PassOutput<T> {
        let n = self.dim();
        let d = self.model.data().dim();
        let pts = self.model.data().points();
        let nv = vectors.len();
        let scaled: Vec<Vec<T>> = vectors
            .iter()
            .map(|z| z.iter().zip(&self.amp).map(|(&zi, &ai)| zi * ai).collect())
            .collect();
        let inv = self.inv_two_ell_sq;
        let stride = if with_r2 { 2 * nv } else { nv };

        let blocks: Vec<(usize, Vec<T>)> = (0..n)
            .step_by(self.tile)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let end = (start + self.tile).min(n);
                let mut acc = vec![T::zero(); (end - start) * stride];
                let mut row_acc = vec![T::zero(); stride];
                for i in start..end {
                    row_acc.iter_mut().for_each(|v| *v = T::zero());
                    let xi = &pts[i * d..(i + 1) * d];
                    for j in 0..n {
                        let xj = &pts[j * d..(j + 1) * d];
                        let mut r2 = T::zero();
                        for k in 0..d {
                            let diff = xi[k] - xj[k];
                            r2 += diff * diff;
                        }
                        let g = (-r2 * inv).exp();
                        if with_r2 {
                            let gr = g * r2;
                            for v in 0..nv {
                                let s = scaled[v][j];
                                row_acc[v] += g * s;
                                row_acc[nv + v] += gr * s;
                            }
                        } else {
                            for v in 0..nv {
                                row_acc[v] += g * scaled[v][j];
                            }
                        }
                    }
                    acc[(i - start) * stride..(i - start + 1) * stride].copy_from_slice(&row_acc);
                }
                (start, acc)
            })
            .collect();

        let mut w = vec![vec![T::zero(); n]; nv];
        let mut q = with_r2.then(|| vec![vec![T::zero(); n]; nv]);
        for (start, acc) in blocks {
            for (row, chunk) in acc.chunks_exact(stride).enumerate() {
                let i = start + row;
                for v in 0..nv {
                    w[v][i] = chunk[v];
                }
                if let Some(q) = q.as_mut() {
                    for v in 0..nv {
                        q[v][i] = chunk[nv + v];
                    }
                }
            }
        }
        PassOutput { w, q }
    }

    /// `K(θ) z`
    pub fn apply_kernel(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z)?;
        let out = self.pass(&[z], false);
        let kz: Vec<T> = out.w[0].iter().zip(&self.amp).map(|(&w, &a)| a * w).collect();
        finite_or_overflow(kz)
    }

    /// `K(θ) z` for several vectors in one pass.
    pub fn apply_kernel_many(&self, zs: &[&[T]]) -> Result<Vec<Vec<T>>> {
        for z in zs {
            self.check_len(z)?;
        }
        let out = self.pass(zs, false);
        out.w
            .into_iter()
            .map(|w| finite_or_overflow(w.iter().zip(&self.amp).map(|(&w, &a)| a * w).collect()))
            .collect()
    }

    /// `A(θ) z`
    pub fn apply(&self, z: &[T]) -> Result<Vec<T>> {
        let mut kz = self.apply_kernel(z)?;
        for (o, &zi) in kz.iter_mut().zip(z) {
            *o += self.noise_variance * zi;
        }
        finite_or_overflow(kz)
    }

    /// `∇_θ [zᵀ A(θ) z]` for a `z` independent of `θ`.
    pub fn quad_form_grad(&self, z: &[T]) -> Result<Vec<T>> {
        let (_, mut grads) = self.apply_with_quad_form_grads(&[z])?;
        Ok(grads.pop().expect("one gradient"))
    }

    /// For each `z`, returns `A(θ) z` together with `∇_θ [zᵀ A(θ) z]`,
    /// sharing a single streamed pass over the kernel entries.
    pub fn apply_with_quad_form_grads(&self, zs: &[&[T]]) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
        for z in zs {
            self.check_len(z)?;
        }
        let with_r2 = self.hp.infers_ell();
        let out = self.pass(zs, with_r2);
        let basis = self.model.basis();
        let nt = basis.n_terms();
        let two = T::lit(2.0);
        let mut applied = Vec::with_capacity(zs.len());
        let mut grads = Vec::with_capacity(zs.len());
        for (v, z) in zs.iter().enumerate() {
            let w = &out.w[v];
            let mut grad = vec![T::zero(); self.hp.dim()];
            let mut az = Vec::with_capacity(z.len());
            for i in 0..z.len() {
                let kzi = self.amp[i] * w[i];
                az.push(self.noise_variance * z[i] + kzi);
                // ∂K_ij/∂Θ_I = (T_I(x_i) + T_I(x_j)) K_ij, so the block is
                // 2 Σ_i T_I(x_i) z_i (Kz)_i.
                let c = two * z[i] * kzi;
                for (g, &b) in grad[..nt].iter_mut().zip(basis.row(i)) {
                    *g += c * b;
                }
            }
            if let Some(k) = self.hp.sigma_index() {
                let zz = dot(z, z);
                grad[k] = two * self.hp.sigma() * self.hp.log_sigma().exp() * zz;
            }
            if let Some(k) = self.hp.ell_index() {
                let q = &out.q.as_ref().expect("r² pass")[v];
                let s: T = (0..z.len()).map(|i| z[i] * self.amp[i] * q[i]).sum();
                grad[k] = s * self.hp.log_ell().exp() * self.inv_two_ell_sq * self.inv_two_ell_sq;
            }
            applied.push(finite_or_overflow(az)?);
            grads.push(finite_or_overflow(grad)?);
        }
        Ok((applied, grads))
    }

    /// `K_θ(x, x_j)` for all data points `x_j`.
    pub fn cross_covariance(&self, x: &[T]) -> Result<Vec<T>> {
        let d = self.model.data().dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let ax = super::chebyshev_field(&self.hp, x)?.exp();
        let data = self.model.data();
        let out = (0..self.dim())
            .map(|j| {
                let r2: T = x.iter().zip(data.point(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
                ax * self.amp[j] * (-r2 * self.inv_two_ell_sq).exp()
            })
            .collect();
        finite_or_overflow(out)
    }

    /// `K_θ(x, x) = exp(2 C_θ(x))`
    pub fn prior_variance(&self, x: &[T]) -> Result<T> {
        let c = super::chebyshev_field(&self.hp, x)?;
        Ok((c + c).exp())
    }

    /// Dense `K(θ)`; `O(N²)` memory, for validation and the determinant target.
    pub fn dense_kernel(&self) -> DenseMatrix<T> {
        let n = self.dim();
        let data = self.model.data();
        let mut k = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let r2: T = data
                    .point(i)
                    .iter()
                    .zip(data.point(j))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                let v = self.amp[i] * self.amp[j] * (-r2 * self.inv_two_ell_sq).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Dense `A(θ)`.
    pub fn dense_matrix(&self) -> DenseMatrix<T> {
        let mut a = self.dense_kernel();
        for i in 0..self.dim() {
            a[(i, i)] += self.noise_variance;
        }
        a
    }
}

fn finite_or_overflow<T: Real>(v: Vec<T>) -> Result<Vec<T>> {
    if all_finite(&v) {
        Ok(v)
    } else {
        Err(Error::NumericalOverflow("non-finite kernel product (extreme θ?)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Dataset, HyperParams};

    fn model(n: usize, d: usize, n_cheb: usize) -> KernelModel<f64> {
        let pts: Vec<f64> = (0..n * d).map(|k| ((k * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        KernelModel::new(Dataset::new(d, pts, y).unwrap(), n_cheb)
    }

    #[test]
    fn single_point_operator() {
        let m = model(1, 1, 2);
        let mut hp = HyperParams::new(1, 2, 0.1, 1.0).unwrap();
        hp.set_cheb(&[0.3, -0.2]).unwrap();
        let op = m.operator(&hp).unwrap();
        let c = crate::kernel::chebyshev_field(&hp, m.data().point(0)).unwrap();
        let a = 0.1 + (2.0 * c).exp();
        let out = op.apply(&[2.0]).unwrap();
        assert!((out[0] - 2.0 * a).abs() < 1e-14);
    }

    #[test]
    fn tiling_does_not_change_results() {
        let m = model(37, 2, 2);
        let mut hp = HyperParams::new(2, 2, 0.2, 0.7).unwrap().inferring_ell(true);
        hp.set_cheb(&[0.1, 0.2, -0.3, 0.05]).unwrap();
        let z: Vec<f64> = (0..37).map(|i| (i as f64).cos()).collect();
        let a = m.operator(&hp).unwrap().with_tile(1);
        let b = m.operator(&hp).unwrap().with_tile(5);
        let c = m.operator(&hp).unwrap().with_tile(1000);
        let (ra, ga) = a.apply_with_quad_form_grads(&[&z]).unwrap();
        let (rb, gb) = b.apply_with_quad_form_grads(&[&z]).unwrap();
        let (rc, gc) = c.apply_with_quad_form_grads(&[&z]).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra, rc);
        assert_eq!(ga, gb);
        assert_eq!(ga, gc);
    }

    #[test]
    fn overflow_is_reported() {
        let m = model(4, 1, 1);
        let mut hp = HyperParams::new(1, 1, 0.1, 1.0).unwrap();
        hp.set_cheb(&[800.0]).unwrap();
        assert!(matches!(m.operator(&hp), Err(Error::NumericalOverflow(_))));
        hp.set_cheb(&[360.0]).unwrap();
        let op = m.operator(&hp).unwrap();
        assert!(matches!(op.apply(&[1.0; 4]), Err(Error::NumericalOverflow(_))));
    }

    #[test]
    fn zero_vector_has_zero_gradient() {
        let m = model(6, 1, 3);
        let hp = HyperParams::new(1, 3, 0.1, 1.0).unwrap().inferring_sigma(true).inferring_ell(true);
        let op = m.operator(&hp).unwrap();
        let g = op.quad_form_grad(&[0.0; 6]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigma_component_is_diagonal_derivative() {
        let m = model(5, 1, 2);
        let mut hp = HyperParams::new(1, 2, 0.1, 1.0).unwrap().inferring_sigma(true);
        hp.set_log_sigma(-0.4);
        let op = m.operator(&hp).unwrap();
        let z = [0.3, -1.0, 0.5, 2.0, 0.1];
        let g = op.quad_form_grad(&z).unwrap();
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let expect = 2.0 * hp.sigma() * (-0.4f64).exp() * zz;
        assert!((g[2] - expect).abs() < 1e-13 * expect);
    }

    #[test]
    fn dense_matches_apply() {
        let m = model(9, 2, 2);
        let mut hp = HyperParams::new(2, 2, 0.3, 0.5).unwrap();
        hp.set_cheb(&[0.2, -0.1, 0.3, 0.0]).unwrap();
        let op = m.operator(&hp).unwrap();
        let z: Vec<f64> = (0..9).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let dense = op.dense_matrix().matvec(&z);
        let mf = op.apply(&z).unwrap();
        for (a, b) in dense.iter().zip(&mf) {
            assert!((a - b).abs() < 1e-13 * a.abs().max(1.0));
        }
    }

    #[test]
    fn generic_over_f32() {
        let pts: Vec<f32> = vec![-0.5, 0.0, 0.5];
        let m = KernelModel::new(Dataset::new(1, pts, vec![1.0f32; 3]).unwrap(), 2);
        let hp = HyperParams::new(1, 2, 0.1f32, 1.0).unwrap();
        let out = m.operator(&hp).unwrap().apply(&[1.0, 0.0, 0.0]).unwrap();
        assert!((out[0] - 1.1).abs() < 1e-6);
        assert!((out[1] - (-0.25f32).exp()).abs() < 1e-6);
    }
}
