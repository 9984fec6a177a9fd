//! Cox sampling of the permanental process, empirical correlation functions
//! and configuration weights.
//!
//! Given `l` independent fields `Y_i ~ N(0, k)`, the intensity is
//! `g = Σ Y_i²` and cell counts are independent `Poisson(g_x Δ)` given `g`.
//!
//! Configuration weights `P(γ) = E[Π_x e^{-g_x Δ} (g_x Δ)^{n_x} / n_x!]` are
//! available three ways: Monte Carlo over the field prior, deterministic
//! quadrature on one or two cells, and a closed cycle-cover form. The closed
//! form is locked until [`CoxWeights::validate`] has compared it against the
//! other two on sub-blocks of the covariance.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha_permanent::{per_alpha, per_alpha_subset, permanent_ryser, SquareMatrix, MAX_SUBSET_ORDER};
use crate::error::{Error, Result};
use crate::gaussian_field::{factorize, factorize_matrix, sample_fields, FieldFactor};
use crate::kernel::KernelMatrix;
use crate::rng::Stream;
use crate::state_space::{Configuration, GridSpec};
use crate::stats::{factorial, falling_factorial, gauss_hermite, Estimate, NeumaierSum};

/// Largest particle number accepted by the closed-form weight.
pub const MAX_PERM_POINTS: u64 = 10;

/// One draw of the point process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSample {
    pub configuration: Configuration,
    /// Key of the substream the draw came from.
    pub seed: u64,
    pub replica: u64,
    /// Intensity the counts were drawn from, when retained.
    pub intensity: Option<Vec<f64>>,
}

/// Independent `Poisson(g_x Δ)` counts.
pub fn poisson_counts<R: Rng + ?Sized>(intensity: &[f64], delta: f64, rng: &mut R) -> Result<Vec<u32>> {
    intensity
        .iter()
        .enumerate()
        .map(|(cell, &g)| {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::NegativeIntensity { cell, value: g });
            }
            let mean = g * delta;
            if mean == 0.0 {
                return Ok(0);
            }
            let dist = Poisson::new(mean).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(dist.sample(rng) as u32)
        })
        .collect()
}

/// Poisson process with a fixed intensity vector.
pub fn sample_poisson(grid: &GridSpec, intensity: &[f64], stream: &Stream, replica: u64) -> Result<ProcessSample> {
    if intensity.len() != grid.total_cells() {
        return Err(Error::InvalidArgument(format!(
            "intensity has {} cells, grid has {}",
            intensity.len(),
            grid.total_cells()
        )));
    }
    let s = stream.index(replica);
    let counts = poisson_counts(intensity, grid.cell_volume(), &mut s.child("counts").rng())?;
    Ok(ProcessSample {
        configuration: Configuration::from_counts(counts),
        seed: s.key(),
        replica,
        intensity: None,
    })
}

/// Batch of Poisson draws, one substream per replica.
pub fn sample_poisson_batch(
    grid: &GridSpec,
    intensity: &[f64],
    stream: &Stream,
    replicas: usize,
) -> Result<Vec<ProcessSample>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| sample_poisson(grid, intensity, stream, r))
        .collect()
}

/// The Cox process driven by `l` squared Gaussian fields.
#[derive(Debug, Clone)]
pub struct CoxProcess {
    kernel: KernelMatrix,
    factor: FieldFactor,
    l: usize,
}

impl CoxProcess {
    pub fn new(kernel: KernelMatrix, l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidArgument("l must be at least 1".into()));
        }
        let factor = factorize(&kernel)?;
        Ok(Self { kernel, factor, l })
    }

    pub fn kernel(&self) -> &KernelMatrix {
        &self.kernel
    }

    pub fn grid(&self) -> &GridSpec {
        self.kernel.grid()
    }

    pub fn factor(&self) -> &FieldFactor {
        &self.factor
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// First-order correlation `l k(x, x)`.
    pub fn density(&self, cell: usize) -> f64 {
        self.l as f64 * self.kernel.get(cell, cell)
    }

    /// Expected particle number in the whole window.
    pub fn expected_total(&self) -> f64 {
        let d = self.kernel.cell_volume();
        (0..self.kernel.size()).map(|c| d * self.density(c)).sum()
    }

    pub fn sample(&self, stream: &Stream, replica: u64, retain_intensity: bool) -> ProcessSample {
        sample_cox(self, stream, replica, retain_intensity)
    }

    pub fn sample_batch(&self, stream: &Stream, replicas: usize, retain_intensity: bool) -> Vec<ProcessSample> {
        (0..replicas as u64)
            .into_par_iter()
            .map(|r| sample_cox(self, stream, r, retain_intensity))
            .collect()
    }
}

/// Draws fields, then conditionally independent Poisson counts.
pub fn sample_cox(process: &CoxProcess, stream: &Stream, replica: u64, retain_intensity: bool) -> ProcessSample {
    let s = stream.index(replica);
    let fields = sample_fields(&process.factor, process.l, &s.child("fields")).expect("l >= 1");
    let counts = poisson_counts(
        &fields.intensity,
        process.kernel.cell_volume(),
        &mut s.child("counts").rng(),
    )
    .expect("squared fields are non-negative");
    ProcessSample {
        configuration: Configuration::from_counts(counts),
        seed: s.key(),
        replica,
        intensity: retain_intensity.then_some(fields.intensity),
    }
}

/// Empirical correlation value at a tuple of cells and its predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub order: usize,
    pub cells: Vec<usize>,
    pub empirical: f64,
    pub se: f64,
    /// `per_{l/2}(l k(x_i, x_j))`.
    pub theory_half_l: f64,
    /// `per_{2/l}(l k(x_i, x_j))`, the Gaussian moment identity.
    pub theory_two_over_l: f64,
}

/// `per_α(l k(x_i, x_j))_{i,j}` over the given cells.
pub fn correlation_theory(kernel: &KernelMatrix, l: usize, cells: &[usize], alpha: f64) -> Result<f64> {
    let n = cells.len();
    let lf = l as f64;
    let m = SquareMatrix::from_fn(n, |i, j| lf * kernel.get(cells[i], cells[j]))?;
    per_alpha(&m, alpha)
}

/// Factorial-moment estimator of the n-point correlation function.
///
/// Per sample the statistic is the number of ordered tuples of distinct
/// particles with the k-th particle in `cells[k]`, divided by `Δⁿ`; repeated
/// cells use falling factorials of the counts.
pub fn estimate_correlations(
    samples: &[ProcessSample],
    tuples: &[Vec<usize>],
    kernel: &KernelMatrix,
    l: usize,
) -> Result<Vec<CorrelationEstimate>> {
    let delta = kernel.cell_volume();
    tuples
        .iter()
        .map(|cells| {
            let n = cells.len();
            if n == 0 || n > 4 {
                return Err(Error::InvalidArgument(format!("correlation order {n} outside 1..=4")));
            }
            let mut mult: Vec<(usize, u32)> = Vec::new();
            for &c in cells {
                kernel.grid().validate_cell(c)?;
                match mult.iter_mut().find(|(cell, _)| *cell == c) {
                    Some((_, m)) => *m += 1,
                    None => mult.push((c, 1)),
                }
            }
            let scale = delta.powi(n as i32);
            let xs: Vec<f64> = samples
                .iter()
                .map(|s| {
                    mult.iter()
                        .map(|&(c, m)| falling_factorial(s.configuration.count(c), m))
                        .product::<f64>()
                        / scale
                })
                .collect();
            let est = Estimate::from_samples(&xs);
            let lf = l as f64;
            Ok(CorrelationEstimate {
                order: n,
                cells: cells.clone(),
                empirical: est.mean,
                se: est.se,
                theory_half_l: correlation_theory(kernel, l, cells, lf / 2.0)?,
                theory_two_over_l: correlation_theory(kernel, l, cells, 2.0 / lf)?,
            })
        })
        .collect()
}

/// Ordered pairs of distinct cells no farther apart than `budget`.
pub fn pair_tuples(grid: &GridSpec, budget: f64) -> Vec<Vec<usize>> {
    let n = grid.total_cells();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if grid.distance(i, j) <= budget + 1e-12 {
                out.push(vec![i, j]);
            }
        }
    }
    out
}

/// How a configuration weight is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMethod {
    /// Average over `draws` prior intensity draws.
    MonteCarlo { draws: usize, stream: Stream },
    /// Deterministic integration; grids of one or two cells only.
    Quadrature,
    /// Closed cycle-cover form; requires prior validation.
    Perm,
}

impl WeightMethod {
    fn name(&self) -> &'static str {
        match self {
            Self::MonteCarlo { .. } => "mc",
            Self::Quadrature => "quadrature",
            Self::Perm => "perm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightValue {
    pub value: f64,
    /// Standard error (zero for deterministic methods).
    pub se: f64,
}

/// Closed form `det(I + 2Δk)^{-l/2} per_{2/l}(J[n]) Δ^{|n|} / Π n_x!` with
/// `J = l k (I + 2Δk)^{-1}`.
#[derive(Debug, Clone)]
pub struct PermForm {
    alpha: f64,
    j: DMatrix<f64>,
    log_norm: f64,
    delta: f64,
}

impl PermForm {
    fn new(cov: &DMatrix<f64>, delta: f64, l: usize) -> Self {
        let lf = l as f64;
        let eig = SymmetricEigen::new(cov.clone());
        let n = cov.nrows();
        let mut log_det = 0.0;
        let mut scaled = DMatrix::zeros(n, n);
        for k in 0..n {
            let lam = eig.eigenvalues[k].max(0.0);
            log_det += (1.0 + 2.0 * delta * lam).ln();
            scaled[(k, k)] = lf * lam / (1.0 + 2.0 * delta * lam);
        }
        let v = &eig.eigenvectors;
        let j = v * scaled * v.transpose();
        let j = (&j + j.transpose()) * 0.5;
        Self {
            alpha: 2.0 / lf,
            j,
            log_norm: -0.5 * lf * log_det,
            delta,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tilted_kernel(&self) -> &DMatrix<f64> {
        &self.j
    }

    /// `per_α(J[points])`, with cells repeated by multiplicity. Above
    /// [`MAX_SUBSET_ORDER`] points only `α = 1` (`l = 2`) is supported, via Ryser.
    pub fn cycle_sum(&self, points: &[usize]) -> Result<f64> {
        let n = points.len();
        if n > MAX_SUBSET_ORDER && self.alpha == 1.0 {
            let m = SquareMatrix::from_fn(n, |a, b| self.j[(points[a], points[b])])?;
            return permanent_ryser(&m);
        }
        if n > MAX_SUBSET_ORDER {
            return Err(Error::MatrixTooLarge {
                order: n,
                limit: MAX_SUBSET_ORDER,
            });
        }
        let m = SquareMatrix::from_fn(n, |a, b| self.j[(points[a], points[b])])?;
        per_alpha_subset(&m, self.alpha)
    }

    pub fn weight(&self, gamma: &Configuration) -> Result<f64> {
        if gamma.total() > MAX_PERM_POINTS {
            return Err(Error::MethodNotApplicable {
                method: "perm",
                reason: format!("{} points exceed the limit of {MAX_PERM_POINTS}", gamma.total()),
            });
        }
        let per = self.cycle_sum(&gamma.points())?;
        let fact: f64 = gamma.counts().iter().map(|&n| factorial(n)).product();
        Ok(self.log_norm.exp() * per * self.delta.powi(gamma.total() as i32) / fact)
    }

    /// Discrete Papangelou intensity `P(γ∪x)(n_x+1) / (P(γ) Δ)`, which reduces
    /// to `per_α(J[γ∪x]) / per_α(J[γ])`.
    pub fn papangelou(&self, cell: usize, gamma: &Configuration) -> Result<f64> {
        let mut pts = gamma.points();
        let den = self.cycle_sum(&pts)?;
        let pos = pts.partition_point(|&p| p <= cell);
        pts.insert(pos, cell);
        let num = self.cycle_sum(&pts)?;
        Ok(if den > 0.0 { num / den } else { 0.0 })
    }
}

/// Summary of one closed-form validation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCase {
    pub cells: Vec<usize>,
    pub counts: Vec<u32>,
    pub reference: String,
    pub perm: f64,
    pub reference_value: f64,
    pub reference_se: f64,
    /// Relative error (quadrature) or z-score (Monte Carlo).
    pub discrepancy: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub cases: Vec<ValidationCase>,
    pub max_relative_error: f64,
    pub max_z: f64,
    pub pass: bool,
}

/// Tolerance of the closed form against quadrature.
pub const QUADRATURE_TOLERANCE: f64 = 1e-6;
/// z-score tolerance of the closed form against Monte Carlo.
pub const MC_Z_TOLERANCE: f64 = 5.0;
const VALIDATION_DRAWS: usize = 100_000;

/// Configuration weights of the Cox process with covariance `cov` on cells of
/// volume `delta`.
#[derive(Debug, Clone)]
pub struct CoxWeights {
    cov: DMatrix<f64>,
    delta: f64,
    l: usize,
    factor: FieldFactor,
    perm: Option<PermForm>,
}

impl CoxWeights {
    pub fn new(cov: DMatrix<f64>, delta: f64, l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidArgument("l must be at least 1".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("cell volume must be positive".into()));
        }
        let factor = factorize_matrix(&cov)?;
        Ok(Self {
            cov,
            delta,
            l,
            factor,
            perm: None,
        })
    }

    pub fn from_kernel(kernel: &KernelMatrix, l: usize) -> Result<Self> {
        Self::new(kernel.values().clone(), kernel.cell_volume(), l)
    }

    pub fn cells(&self) -> usize {
        self.cov.nrows()
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_validated(&self) -> bool {
        self.perm.is_some()
    }

    /// Weights of the marginal process on a subset of cells.
    pub fn restrict(&self, cells: &[usize]) -> Result<Self> {
        let sub = DMatrix::from_fn(cells.len(), cells.len(), |a, b| self.cov[(cells[a], cells[b])]);
        Self::new(sub, self.delta, self.l)
    }

    /// The closed form, once validated.
    pub fn perm_form(&self) -> Result<&PermForm> {
        self.perm
            .as_ref()
            .ok_or_else(|| Error::UnvalidatedFormula(self.class_label()))
    }

    fn class_label(&self) -> String {
        format!("l={}, cells={}, delta={}", self.l, self.cells(), self.delta)
    }

    /// Probability of `γ` under the chosen method.
    pub fn weight(&self, gamma: &Configuration, method: WeightMethod) -> Result<WeightValue> {
        if gamma.cells() != self.cells() {
            return Err(Error::InvalidArgument(format!(
                "configuration has {} cells, weights cover {}",
                gamma.cells(),
                self.cells()
            )));
        }
        match method {
            WeightMethod::Perm => Ok(WeightValue {
                value: self.perm_form()?.weight(gamma)?,
                se: 0.0,
            }),
            WeightMethod::Quadrature => Ok(WeightValue {
                value: self.quadrature_weight(gamma)?,
                se: 0.0,
            }),
            WeightMethod::MonteCarlo { draws, stream } => {
                let intensities = self.prior_intensities(draws, &stream);
                let est = Estimate::from_samples(
                    &intensities
                        .iter()
                        .map(|g| self.poisson_likelihood(g, gamma))
                        .collect::<Vec<_>>(),
                );
                Ok(WeightValue {
                    value: est.mean,
                    se: est.se,
                })
            }
        }
    }

    /// Prior intensity draws `g = Σ Y_i²`, one substream per draw.
    pub fn prior_intensities(&self, draws: usize, stream: &Stream) -> Vec<Vec<f64>> {
        (0..draws as u64)
            .into_par_iter()
            .map(|r| {
                sample_fields(&self.factor, self.l, &stream.index(r))
                    .expect("l >= 1")
                    .intensity
            })
            .collect()
    }

    /// `Π_x e^{-g_x Δ} (g_x Δ)^{n_x} / n_x!`.
    pub fn poisson_likelihood(&self, intensity: &[f64], gamma: &Configuration) -> f64 {
        poisson_likelihood(intensity, gamma.counts(), self.delta)
    }

    fn quadrature_weight(&self, gamma: &Configuration) -> Result<f64> {
        let counts = gamma.counts();
        let d = self.delta;
        let f = |g: f64, n: u32| (-g * d).exp() * (g * d).powi(n as i32) / factorial(n);
        let lf = self.l as f64;
        match self.cells() {
            1 => {
                // g = k χ²_l
                let k = self.cov[(0, 0)];
                let chi = ChiSquareRule::new(lf, QUAD_NODES);
                Ok(chi.expect(|t| f(k * t, counts[0])))
            }
            2 => {
                // Bartlett: W = A Aᵀ ~ Wishart_2(l, I), A lower triangular with
                // A11² ~ χ²_l, A22² ~ χ²_{l-1}, A21 ~ N(0, 1); fields are L A.
                let (l11, l21, l22) = cholesky2(&self.cov);
                let chi_l = ChiSquareRule::new(lf, QUAD_NODES);
                let chi_l1 = ChiSquareRule::new(lf - 1.0, QUAD_NODES);
                let (hx, hw) = gauss_hermite(QUAD_NODES);
                let mut total = NeumaierSum::default();
                for (t1, w1) in chi_l.nodes.iter().zip(&chi_l.weights) {
                    let a11 = t1.sqrt();
                    let g1 = l11 * l11 * t1;
                    let f1 = f(g1, counts[0]);
                    if f1 == 0.0 {
                        continue;
                    }
                    let mut inner = NeumaierSum::default();
                    for (t2, w2) in chi_l1.nodes.iter().zip(&chi_l1.weights) {
                        for (z, wz) in hx.iter().zip(&hw) {
                            let y = l21 * a11 + l22 * z;
                            let g2 = y * y + l22 * l22 * t2;
                            inner.add(w2 * wz * f(g2, counts[1]));
                        }
                    }
                    total.add(w1 * f1 * inner.value());
                }
                Ok(total.value())
            }
            n => Err(Error::MethodNotApplicable {
                method: "quadrature",
                reason: format!("{n} cells; quadrature supports one or two"),
            }),
        }
    }

    /// Compares the closed form with quadrature (1–2 cell blocks, all
    /// configurations with at most three points, relative 1e-6) and Monte
    /// Carlo (3–4 cell blocks, at most two points, 5 SE). Unlocks
    /// [`WeightMethod::Perm`] on success.
    pub fn validate(&mut self, stream: &Stream) -> Result<ValidationReport> {
        let n = self.cells();
        let anchor = 0usize;
        // neighbours of the anchor ordered by covariance strength
        let mut others: Vec<usize> = (0..n).filter(|&c| c != anchor).collect();
        others.sort_by(|&a, &b| {
            self.cov[(anchor, b)]
                .abs()
                .total_cmp(&self.cov[(anchor, a)].abs())
                .then(a.cmp(&b))
        });
        let block = |size: usize| -> Vec<usize> {
            let mut v = vec![anchor];
            v.extend(others.iter().copied().take(size - 1));
            v
        };
        let mut cases = Vec::new();
        for size in 1..=n.min(2) {
            let cells = block(size);
            let mut sub = self.restrict(&cells)?;
            sub.perm = Some(PermForm::new(&sub.cov, sub.delta, sub.l));
            for counts in configurations_up_to(size, 3) {
                let gamma = Configuration::from_counts(counts.clone());
                let p = sub.perm_form()?.weight(&gamma)?;
                let q = sub.quadrature_weight(&gamma)?;
                let rel = (p - q).abs() / q.abs().max(f64::MIN_POSITIVE);
                let rel = if p == q { 0.0 } else { rel };
                cases.push(ValidationCase {
                    cells: cells.clone(),
                    counts,
                    reference: "quadrature".into(),
                    perm: p,
                    reference_value: q,
                    reference_se: 0.0,
                    discrepancy: rel,
                    pass: rel <= QUADRATURE_TOLERANCE,
                });
            }
        }
        for size in 3..=n.min(4) {
            let cells = block(size);
            let mut sub = self.restrict(&cells)?;
            sub.perm = Some(PermForm::new(&sub.cov, sub.delta, sub.l));
            let draws = sub.prior_intensities(VALIDATION_DRAWS, &stream.child("validate").index(size as u64));
            for counts in configurations_up_to(size, 2) {
                let gamma = Configuration::from_counts(counts.clone());
                let p = sub.perm_form()?.weight(&gamma)?;
                let xs: Vec<f64> = draws.iter().map(|g| sub.poisson_likelihood(g, &gamma)).collect();
                let est = Estimate::from_samples(&xs);
                let z = est.z_score(p);
                cases.push(ValidationCase {
                    cells: cells.clone(),
                    counts,
                    reference: "mc".into(),
                    perm: p,
                    reference_value: est.mean,
                    reference_se: est.se,
                    discrepancy: z,
                    pass: z <= MC_Z_TOLERANCE,
                });
            }
        }
        let max_rel = cases
            .iter()
            .filter(|c| c.reference == "quadrature")
            .map(|c| c.discrepancy)
            .fold(0.0, f64::max);
        let max_z = cases
            .iter()
            .filter(|c| c.reference == "mc")
            .map(|c| c.discrepancy)
            .fold(0.0, f64::max);
        let pass = cases.iter().all(|c| c.pass);
        let report = ValidationReport {
            cases,
            max_relative_error: max_rel,
            max_z,
            pass,
        };
        if pass {
            self.perm = Some(PermForm::new(&self.cov, self.delta, self.l));
            Ok(report)
        } else {
            Err(Error::ValidationFailed(format!(
                "max relative error {max_rel:e}, max z {max_z:.2}"
            )))
        }
    }
}

pub fn poisson_likelihood(intensity: &[f64], counts: &[u32], delta: f64) -> f64 {
    intensity
        .iter()
        .zip(counts)
        .map(|(&g, &n)| {
            let m = g * delta;
            (-m).exp() * m.powi(n as i32) / factorial(n)
        })
        .product()
}

/// Convenience wrapper matching the operation name.
pub fn config_weight(weights: &CoxWeights, gamma: &Configuration, method: WeightMethod) -> Result<WeightValue> {
    weights.weight(gamma, method).map_err(|e| match e {
        Error::MethodNotApplicable { reason, .. } => Error::MethodNotApplicable {
            method: method.name(),
            reason,
        },
        other => other,
    })
}

/// All count vectors over `cells` cells with total at most `max_points`.
pub fn configurations_up_to(cells: usize, max_points: u32) -> Vec<Vec<u32>> {
    fn rec(cells: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == cells {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(cells, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(cells, max_points, &mut Vec::new(), &mut out);
    out.sort_by_key(|c| (c.iter().sum::<u32>(), std::cmp::Reverse(c.clone())));
    out
}

const QUAD_NODES: usize = 64;

/// Generalised Gauss–Laguerre rule for `χ²_ν` (point mass at 0 for ν = 0).
struct ChiSquareRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChiSquareRule {
    fn new(dof: f64, m: usize) -> Self {
        if dof <= 0.0 {
            return Self {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        // χ²_ν = 2U with U ~ Gamma(ν/2, 1): Laguerre weight u^a e^{-u}, a = ν/2 - 1.
        let a = 0.5 * dof - 1.0;
        let jacobi = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                2.0 * i as f64 + a + 1.0
            } else if i + 1 == j || j + 1 == i {
                let k = i.max(j) as f64;
                (k * (k + a)).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..m)
            .map(|k| (2.0 * eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Self { nodes, weights }
    }

    fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut s = NeumaierSum::default();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s.add(w * f(*x));
        }
        s.value()
    }
}

fn cholesky2(cov: &DMatrix<f64>) -> (f64, f64, f64) {
    let a = cov[(0, 0)].max(0.0);
    let l11 = a.sqrt();
    if l11 == 0.0 {
        return (0.0, 0.0, cov[(1, 1)].max(0.0).sqrt());
    }
    let l21 = cov[(1, 0)] / l11;
    let l22 = (cov[(1, 1)] - l21 * l21).max(0.0).sqrt();
    (l11, l21, l22)
}

/// Memoised `per_α(J[γ])` for repeated Papangelou evaluations.
#[derive(Debug, Default)]
pub struct CycleSumCache {
    map: HashMap<Vec<usize>, f64>,
}

impl CycleSumCache {
    pub fn get(&mut self, form: &PermForm, points: &[usize]) -> Result<f64> {
        if let Some(v) = self.map.get(points) {
            return Ok(*v);
        }
        let v = form.cycle_sum(points)?;
        if self.map.len() > 200_000 {
            self.map.clear();
        }
        self.map.insert(points.to_vec(), v);
        Ok(v)
    }

    /// Same value as [`PermForm::papangelou`], with the denominator cached.
    pub fn papangelou(&mut self, form: &PermForm, cell: usize, gamma: &Configuration) -> Result<f64> {
        let mut pts = gamma.points();
        let den = self.get(form, &pts)?;
        let pos = pts.partition_point(|&p| p <= cell);
        pts.insert(pos, cell);
        let num = self.get(form, &pts)?;
        Ok(if den > 0.0 { num / den } else { 0.0 })
    }
}
