//! Mean-zero Gaussian fields with covariance `k` and the squared-field
//! intensity `g = Σ_i Y_i²`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelMatrix, JITTER, PSD_TOLERANCE};
use crate::rng::Stream;
use crate::stats::{gaussian_even_moment, Estimate};

/// Square-root factor `F` with `F Fᵀ ≈ K`.
#[derive(Debug, Clone)]
pub struct FieldFactor {
    factor: DMatrix<f64>,
    jitter: f64,
}

impl FieldFactor {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Diagonal jitter that was added before factorising (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cells(&self) -> usize {
        self.factor.nrows()
    }

    /// `F Fᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// One field `F ξ` with ξ standard normal drawn from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.ncols();
        let xi = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.factor * xi).iter().copied().collect()
    }
}

pub fn factorize(k: &KernelMatrix) -> Result<FieldFactor> {
    factor_from_eigen(k.eigen())
}

/// Factorises an arbitrary symmetric matrix under the same jitter policy.
pub fn factorize_matrix(values: &DMatrix<f64>) -> Result<FieldFactor> {
    if values.nrows() != values.ncols() {
        return Err(Error::NotSquare {
            rows: values.nrows(),
            cols: values.ncols(),
        });
    }
    factor_from_eigen(&SymmetricEigen::new(values.clone()))
}

/// Symmetric eigen-factorisation with negative eigenvalues clamped.
///
/// Spectra with a smallest eigenvalue in `(-1e-8 λ_max, 0)` get a diagonal
/// jitter of `1e-10 λ_max` first; anything more negative is rejected.
fn factor_from_eigen(eigen: &SymmetricEigen<f64, nalgebra::Dyn>) -> Result<FieldFactor> {
    let lambdas = &eigen.eigenvalues;
    let max = lambdas.iter().copied().fold(0.0f64, f64::max);
    let min = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE * max || (max == 0.0 && min < 0.0) {
        return Err(Error::FactorizationFailed(format!(
            "smallest eigenvalue {min:e} below tolerance (largest {max:e})"
        )));
    }
    let jitter = if min < 0.0 { JITTER * max } else { 0.0 };
    let roots = lambdas.map(|l| (l + jitter).max(0.0).sqrt());
    let mut factor = eigen.eigenvectors.clone();
    for (mut col, r) in factor.column_iter_mut().zip(roots.iter()) {
        col *= *r;
    }
    Ok(FieldFactor { factor, jitter })
}

/// `l` independent fields on the grid and their summed squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFieldSample {
    pub fields: Vec<Vec<f64>>,
    pub intensity: Vec<f64>,
}

impl GaussianFieldSample {
    pub fn l(&self) -> usize {
        self.fields.len()
    }
}

/// Draws `l` fields; field `i` uses substream `stream.index(i)`.
pub fn sample_fields(factor: &FieldFactor, l: usize, stream: &Stream) -> Result<GaussianFieldSample> {
    if l == 0 {
        return Err(Error::InvalidArgument("number of fields l must be at least 1".into()));
    }
    let fields: Vec<Vec<f64>> = (0..l).map(|i| factor.draw(&mut stream.index(i as u64).rng())).collect();
    let mut intensity = vec![0.0; factor.cells()];
    for f in &fields {
        for (g, y) in intensity.iter_mut().zip(f) {
            *g += y * y;
        }
    }
    Ok(GaussianFieldSample { fields, intensity })
}

/// Empirical `E[g(x)^n]` with its standard error.
pub fn intensity_moments(samples: &[GaussianFieldSample], cell: usize, n: u32) -> Result<Estimate> {
    if n == 0 || n > 4 {
        return Err(Error::InvalidArgument(format!("moment order {n} outside 1..=4")));
    }
    if samples.len() < 1000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1000 samples, got {}",
            samples.len()
        )));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.intensity[cell].powi(n as i32)).collect();
    Ok(Estimate::from_samples(&xs))
}

/// Gaussian moment bound `(2n)!/(2^n n!) k(x,x)^n`.
pub fn moment_bound(k_xx: f64, n: u32) -> f64 {
    gaussian_even_moment(n) * k_xx.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel_matrix, ConvolutionKernel};
    use crate::state_space::build_grid;
    use rand::SeedableRng;

    #[test]
    fn diagonal_factor_is_elementwise_root() {
        let grid = build_grid(1, 2.0, 4, true).unwrap();
        let v = 2.0;
        let kappa = ConvolutionKernel::point_mass(v, grid.spacing()).unwrap();
        let k = build_kernel_matrix(&grid, &kappa).unwrap();
        let f = factorize(&k).unwrap();
        let want = v * grid.cell_volume().sqrt();
        let r = f.reconstruct();
        for i in 0..4 {
            // eigenvectors of a multiple of I may be any orthonormal basis;
            // check F Fᵀ and the column norms instead of F itself.
            assert!((f.matrix().column(i).norm() - want).abs() < 1e-12);
            for j in 0..4 {
                let e = if i == j { want * want } else { 0.0 };
                assert!((r[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstructs_random_psd_matrix() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(12, 7, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose();
        let f = factorize_matrix(&m).unwrap();
        let r = f.reconstruct();
        for (x, y) in r.iter().zip(m.iter()) {
            assert!((x - y).abs() <= 1e-8);
        }
    }

    #[test]
    fn indefinite_matrix_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(factorize_matrix(&m), Err(Error::FactorizationFailed(_))));
    }

    #[test]
    fn jitter_applies_to_tiny_negative_spectrum() {
        // eigenvalues 2 and -1e-12
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1e-12]));
        let m = &v * d * v.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let f = factorize_matrix(&m).unwrap();
        assert!((f.jitter() - 2e-10).abs() < 1e-15);
    }

    #[test]
    fn intensity_is_sum_of_squares() {
        let grid = build_grid(1, 2.0, 8, true).unwrap();
        let kappa = ConvolutionKernel::gaussian(1.0, 0.3).unwrap();
        let k = build_kernel_matrix(&grid, &kappa).unwrap();
        let f = factorize(&k).unwrap();
        let s = sample_fields(&f, 3, &Stream::new(5)).unwrap();
        for c in 0..8 {
            let want: f64 = s.fields.iter().map(|y| y[c] * y[c]).sum();
            assert_eq!(s.intensity[c], want);
            assert!(s.intensity[c] >= 0.0);
        }
        assert_eq!(s, sample_fields(&f, 3, &Stream::new(5)).unwrap());
        assert!(sample_fields(&f, 0, &Stream::new(5)).is_err());
    }

    #[test]
    fn moment_argument_checks() {
        assert!(intensity_moments(&[], 0, 1).is_err());
        assert_eq!(moment_bound(2.0, 2), 12.0);
    }
}
