//! Covariance kernels built from a convolution root.
//!
//! The covariance is the discrete self-convolution
//! `k_ij = Δ Σ_u κ(x_i - x_u) κ(x_j - x_u)`, which is symmetric and positive
//! semidefinite by construction. The module also carries the canonical
//! Gaussian semimetric `D` and a covering-number (Dudley entropy) diagnostic.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state_space::{norm, GridSpec, Point};
use crate::stats::NeumaierSum;

/// Relative tolerance on the smallest eigenvalue.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Diagonal jitter relative to the largest eigenvalue.
pub const JITTER: f64 = 1e-10;

/// Radial profile of the convolution root κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// `exp(-|z|² / 2ℓ²)`
    Gaussian,
    /// `exp(1 - sqrt(1 + |z|²/ℓ²))`: exponential tails, smooth at the origin.
    ExponentialSmoothed,
    /// Linear interpolation of `(|z|, value)` knots, zero past the last knot.
    /// The lengthscale is ignored.
    Table(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionKernel {
    pub shape: KernelShape,
    pub amplitude: f64,
    pub lengthscale: f64,
}

impl ConvolutionKernel {
    pub fn gaussian(amplitude: f64, lengthscale: f64) -> Result<Self> {
        Self::new(KernelShape::Gaussian, amplitude, lengthscale)
    }

    pub fn exponential_smoothed(amplitude: f64, lengthscale: f64) -> Result<Self> {
        Self::new(KernelShape::ExponentialSmoothed, amplitude, lengthscale)
    }

    /// Tabulated profile; knots must have strictly increasing non-negative
    /// displacements.
    pub fn table(knots: Vec<(f64, f64)>, amplitude: f64) -> Result<Self> {
        Self::new(KernelShape::Table(knots), amplitude, 1.0)
    }

    /// κ concentrated on a single cell: `value` at the origin, zero from one
    /// grid spacing outwards.
    pub fn point_mass(value: f64, spacing: f64) -> Result<Self> {
        Self::table(vec![(0.0, 1.0), (spacing, 0.0)], value)
    }

    pub fn new(shape: KernelShape, amplitude: f64, lengthscale: f64) -> Result<Self> {
        if !amplitude.is_finite() {
            return Err(Error::InvalidKernel("amplitude must be finite".into()));
        }
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "lengthscale must be positive (got {lengthscale})"
            )));
        }
        if let KernelShape::Table(knots) = &shape {
            if knots.is_empty() {
                return Err(Error::InvalidKernel("table has no knots".into()));
            }
            if knots[0].0 < 0.0 {
                return Err(Error::InvalidKernel("table displacements must be non-negative".into()));
            }
            if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidKernel(
                    "table displacements must be strictly increasing".into(),
                ));
            }
            if knots.iter().any(|(r, v)| !r.is_finite() || !v.is_finite()) {
                return Err(Error::InvalidKernel("table entries must be finite".into()));
            }
        }
        Ok(Self {
            shape,
            amplitude,
            lengthscale,
        })
    }

    /// Parses a table file: one `displacement value` pair per line; `#`
    /// starts a comment.
    pub fn parse_table(text: &str) -> Result<Vec<(f64, f64)>> {
        let mut knots = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|f| !f.is_empty())
                .collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidKernel(format!("line {}: cannot parse `{s}`", lineno + 1)))
            };
            match fields.as_slice() {
                [r, v] => knots.push((parse(r)?, parse(v)?)),
                _ => {
                    return Err(Error::InvalidKernel(format!(
                        "line {}: expected `displacement value`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(knots)
    }

    /// κ evaluated at displacement `z`.
    pub fn eval(&self, z: &Point) -> f64 {
        self.eval_radius(norm(z))
    }

    pub fn eval_radius(&self, r: f64) -> f64 {
        let l = self.lengthscale;
        let profile = match &self.shape {
            KernelShape::Gaussian => (-0.5 * (r / l) * (r / l)).exp(),
            KernelShape::ExponentialSmoothed => (1.0 - (1.0 + (r / l) * (r / l)).sqrt()).exp(),
            KernelShape::Table(knots) => interpolate(knots, r),
        };
        self.amplitude * profile
    }

    /// Matrix `κ(x_i - x_u)` over all cell pairs (row `i`, column `u`).
    fn root_matrix(&self, grid: &GridSpec) -> DMatrix<f64> {
        let n = grid.total_cells();
        DMatrix::from_fn(n, n, |i, u| self.eval(&grid.displacement(u, i)))
    }
}

fn interpolate(knots: &[(f64, f64)], r: f64) -> f64 {
    let (last_r, last_v) = knots[knots.len() - 1];
    if r >= last_r {
        return if r == last_r { last_v } else { 0.0 };
    }
    if r <= knots[0].0 {
        return knots[0].1;
    }
    let k = knots.partition_point(|&(x, _)| x <= r);
    let (r0, v0) = knots[k - 1];
    let (r1, v1) = knots[k];
    v0 + (v1 - v0) * (r - r0) / (r1 - r0)
}

/// Discretised covariance `k(x_i, x_j)` together with its spectrum.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grid: GridSpec,
    kernel: ConvolutionKernel,
    values: DMatrix<f64>,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl KernelMatrix {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn kernel(&self) -> &ConvolutionKernel {
        &self.kernel
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.cell_volume()
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn eigen(&self) -> &SymmetricEigen<f64, nalgebra::Dyn> {
        &self.eigen
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigen.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_diagonal(&self) -> f64 {
        self.values.diagonal().iter().copied().fold(0.0, f64::max)
    }

    /// Whether the smallest eigenvalue is within tolerance of zero.
    pub fn is_psd(&self) -> bool {
        psd_within_tolerance(self.min_eigenvalue(), self.max_eigenvalue())
    }

    /// Builds from explicit values, bypassing the convolution. Used for
    /// covariance matrices that are not self-convolutions (tests, fixed
    /// intensities). Symmetry is required; positive semidefiniteness is not
    /// checked here.
    pub fn from_values(grid: GridSpec, kernel: ConvolutionKernel, values: DMatrix<f64>) -> Result<Self> {
        let n = grid.total_cells();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::NotSquare {
                rows: values.nrows(),
                cols: values.ncols(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if values[(i, j)] != values[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "kernel values not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eigen = SymmetricEigen::new(values.clone());
        Ok(Self {
            grid,
            kernel,
            values,
            eigen,
        })
    }
}

fn psd_within_tolerance(min: f64, max: f64) -> bool {
    min >= -PSD_TOLERANCE * max.max(0.0)
}

/// Builds `k_ij = Δ Σ_u κ(x_i - x_u) κ(x_j - x_u)`.
///
/// On a torus the first row is computed once and the rest is filled by
/// displacement class, so equivalent pairs receive bitwise equal values.
pub fn build_kernel_matrix(grid: &GridSpec, kernel: &ConvolutionKernel) -> Result<KernelMatrix> {
    let n = grid.total_cells();
    let delta = grid.cell_volume();
    let mut values = DMatrix::zeros(n, n);
    if grid.is_torus() {
        let root: Vec<f64> = (0..n).map(|u| kernel.eval(&grid.displacement(u, 0))).collect();
        let row: Vec<f64> = (0..n)
            .map(|j| {
                let mut s = NeumaierSum::default();
                for (u, &r0) in root.iter().enumerate() {
                    s.add(r0 * kernel.eval(&grid.displacement(u, j)));
                }
                delta * s.value()
            })
            .collect();
        // row[c] and row[-c] agree mathematically; pick one so the matrix is
        // exactly symmetric.
        let canonical: Vec<f64> = (0..n)
            .map(|c| {
                let neg = grid
                    .offset_cell(0, negate(grid.index_offset(0, c)))
                    .expect("torus offsets always resolve");
                row[c.min(neg)]
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let c = grid
                    .offset_cell(0, grid.index_offset(i, j))
                    .expect("torus offsets always resolve");
                values[(i, j)] = canonical[c];
            }
        }
    } else {
        let root = kernel.root_matrix(grid);
        for i in 0..n {
            for j in i..n {
                let mut s = NeumaierSum::default();
                for u in 0..n {
                    s.add(root[(i, u)] * root[(j, u)]);
                }
                let v = delta * s.value();
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
    }
    let eigen = SymmetricEigen::new(values.clone());
    let km = KernelMatrix {
        grid: grid.clone(),
        kernel: kernel.clone(),
        values,
        eigen,
    };
    if !km.is_psd() {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: km.min_eigenvalue(),
            max_eigenvalue: km.max_eigenvalue(),
        });
    }
    Ok(km)
}

fn negate(o: [i64; 3]) -> [i64; 3] {
    [-o[0], -o[1], -o[2]]
}

/// Local trace and Hilbert–Schmidt norm of `√K P_Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceCheck {
    pub trace: f64,
    pub hs_norm_sq: f64,
}

impl TraceCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.trace - self.hs_norm_sq).abs() / self.trace.abs().max(self.hs_norm_sq.abs()).max(f64::MIN_POSITIVE)
    }
}

/// `Δ Σ_{i∈Λ} k_ii` against `Δ² Σ_{i∈Λ} Σ_u κ(x_i - x_u)²`.
pub fn local_trace_check(k: &KernelMatrix, window: &[usize]) -> Result<TraceCheck> {
    if window.is_empty() {
        return Err(Error::InvalidArgument("window must be non-empty".into()));
    }
    let grid = k.grid();
    let delta = grid.cell_volume();
    let mut trace = NeumaierSum::default();
    let mut hs = NeumaierSum::default();
    for &i in window {
        grid.validate_cell(i)?;
        trace.add(k.get(i, i));
        for u in 0..grid.total_cells() {
            let v = k.kernel().eval(&grid.displacement(u, i));
            hs.add(v * v);
        }
    }
    Ok(TraceCheck {
        trace: delta * trace.value(),
        hs_norm_sq: delta * delta * hs.value(),
    })
}

/// Canonical semimetric `D(x_i, x_j) = (Δ Σ_u κ(x_i-x_u)(κ(x_i-x_u) - κ(x_j-x_u)))^{1/2}`.
pub fn metric_d(kernel: &ConvolutionKernel, grid: &GridSpec, i: usize, j: usize) -> Result<f64> {
    grid.validate_cell(i)?;
    grid.validate_cell(j)?;
    if i == j {
        return Ok(0.0);
    }
    let mut s = NeumaierSum::default();
    let mut scale = NeumaierSum::default();
    for u in 0..grid.total_cells() {
        let a = kernel.eval(&grid.displacement(u, i));
        let b = kernel.eval(&grid.displacement(u, j));
        s.add(a * (a - b));
        scale.add(a * a);
    }
    let delta = grid.cell_volume();
    let value = delta * s.value();
    let threshold = 1e-12 * (delta * scale.value()).max(1.0);
    if value < -threshold {
        return Err(Error::NegativeSemimetric { value });
    }
    Ok(value.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub delta: f64,
    /// Upper bound on the minimal δ-net size.
    pub net_size: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DudleyReport {
    pub rows: Vec<EntropyRow>,
    /// Trapezoid estimate of `∫ sqrt(H(D, δ)) dδ` over the ladder.
    pub dudley_integral: f64,
    /// Grid points inside the unit ball.
    pub ball_points: usize,
    /// Largest D-distance between ball points.
    pub diameter: f64,
}

/// Cells whose centres lie in the closed unit ball around the origin.
pub fn unit_ball_cells(grid: &GridSpec) -> Vec<usize> {
    (0..grid.total_cells())
        .filter(|&c| norm(&grid.center(c)) <= 1.0 + 1e-12)
        .collect()
}

/// Covering numbers of the unit ball under `D` by greedy closed δ-balls.
///
/// Greedy covers are upper bounds on the minimal net. Since a δ'-net is also a
/// δ-net for δ ≥ δ', each reported count is the smallest greedy count over all
/// ladder values `≤ δ`, which keeps the table monotone and still an upper
/// bound.
pub fn dudley_entropy(kernel: &ConvolutionKernel, grid: &GridSpec, deltas: &[f64]) -> Result<DudleyReport> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("empty δ ladder".into()));
    }
    if deltas.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
        return Err(Error::InvalidArgument("δ values must lie in (0, 1]".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("δ ladder must be strictly descending".into()));
    }
    let pts = unit_ball_cells(grid);
    let p = pts.len();
    let mut dist = vec![0.0; p * p];
    let mut diameter: f64 = 0.0;
    for a in 0..p {
        for b in 0..p {
            if a != b {
                let d = metric_d(kernel, grid, pts[a], pts[b])?;
                dist[a * p + b] = d;
                diameter = diameter.max(d);
            }
        }
    }
    let greedy = |delta: f64| -> usize {
        let mut covered = vec![false; p];
        let mut centres = 0;
        for a in 0..p {
            if covered[a] {
                continue;
            }
            centres += 1;
            for b in 0..p {
                if dist[a * p + b] <= delta {
                    covered[b] = true;
                }
            }
        }
        centres
    };
    let raw: Vec<usize> = deltas.iter().map(|&d| greedy(d)).collect();
    // deltas descend, so "ladder values ≤ δ_k" are indices ≥ k.
    let mut rows = Vec::with_capacity(deltas.len());
    for k in 0..deltas.len() {
        let n = raw[k..].iter().copied().min().unwrap_or(1).max(1);
        rows.push(EntropyRow {
            delta: deltas[k],
            net_size: n,
            entropy: (n as f64).ln(),
        });
    }
    let mut integral = 0.0;
    for w in rows.windows(2) {
        integral += (w[0].delta - w[1].delta) * 0.5 * (w[0].entropy.sqrt() + w[1].entropy.sqrt());
    }
    Ok(DudleyReport {
        rows,
        dudley_integral: integral,
        ball_points: p,
        diameter,
    })
}
