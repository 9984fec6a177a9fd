//! Fixtures shared by the benchmarks in `benches/`.

use permadyn_core::alpha_permanent::SquareMatrix;
use permadyn_core::kernel::{build_kernel_matrix, ConvolutionKernel, KernelMatrix};
use permadyn_core::rng::Stream;
use permadyn_core::{build_grid, Result};
use rand::Rng;

/// Random matrix with entries uniform in [-1, 1).
pub fn random_matrix(n: usize, seed: u64) -> Result<SquareMatrix> {
    let mut rng = Stream::new(seed).rng();
    SquareMatrix::new(n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Gaussian-kernel matrix on a d = 1 torus of side 2 with `m` cells.
pub fn line_kernel(m: usize, amplitude: f64, lengthscale: f64) -> Result<KernelMatrix> {
    let grid = build_grid(1, 2.0, m, true)?;
    build_kernel_matrix(&grid, &ConvolutionKernel::gaussian(amplitude, lengthscale)?)
}
