//! Papangelou intensity `r(x, γ)` of the permanental process.
//!
//! Two routes: a Bayes ratio over prior field draws (`papangelou_mc`) and the
//! exact discrete ratio of closed-form weights (`papangelou_ratio`). The
//! [`Intensity`] trait is what the dynamics and the scaling estimators consume.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::sampler::{CoxWeights, CycleSumCache, PermForm, ProcessSample};
use crate::state_space::Configuration;
use crate::stats::{effective_sample_size, ratio_estimate, Estimate, NeumaierSum};

/// Minimum number of prior draws for the Monte-Carlo route.
pub const MIN_MC_DRAWS: usize = 10_000;
/// Minimum effective sample size of the likelihood weights.
pub const MIN_ESS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PapangelouMethod {
    Mc,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PapangelouEstimate {
    pub cell: usize,
    pub configuration: Configuration,
    pub value: f64,
    pub method: PapangelouMethod,
    /// Monte-Carlo standard error; `None` for the exact ratio.
    pub se: Option<f64>,
}

/// `E[g(x) w_γ(g)] / E[w_γ(g)]` over prior draws, with a delta-method SE.
pub fn papangelou_mc(
    weights: &CoxWeights,
    cell: usize,
    gamma: &Configuration,
    n_mc: usize,
    stream: &Stream,
) -> Result<PapangelouEstimate> {
    if n_mc < MIN_MC_DRAWS {
        return Err(Error::InvalidArgument(format!("n_mc = {n_mc} below {MIN_MC_DRAWS}")));
    }
    check_cell(weights, cell, gamma)?;
    let draws = weights.prior_intensities(n_mc, stream);
    let (num, den): (Vec<f64>, Vec<f64>) = draws
        .iter()
        .map(|g| {
            let w = weights.poisson_likelihood(g, gamma);
            (g[cell] * w, w)
        })
        .unzip();
    let ess = effective_sample_size(&den);
    if !(ess >= MIN_ESS) {
        return Err(Error::DegenerateWeight { ess, min: MIN_ESS });
    }
    let est = ratio_estimate(&num, &den);
    Ok(PapangelouEstimate {
        cell,
        configuration: gamma.clone(),
        value: est.mean,
        method: PapangelouMethod::Mc,
        se: Some(est.se),
    })
}

/// Exact discrete intensity `P(γ∪x)(n_x+1) / (P(γ) Δ)` from validated weights.
pub fn papangelou_ratio(weights: &CoxWeights, cell: usize, gamma: &Configuration) -> Result<PapangelouEstimate> {
    check_cell(weights, cell, gamma)?;
    let value = weights.perm_form()?.papangelou(cell, gamma)?;
    Ok(PapangelouEstimate {
        cell,
        configuration: gamma.clone(),
        value,
        method: PapangelouMethod::Ratio,
        se: None,
    })
}

fn check_cell(weights: &CoxWeights, cell: usize, gamma: &Configuration) -> Result<()> {
    if gamma.cells() != weights.cells() {
        return Err(Error::InvalidArgument(format!(
            "configuration has {} cells, weights cover {}",
            gamma.cells(),
            weights.cells()
        )));
    }
    if cell >= weights.cells() {
        return Err(Error::CellOutOfRange {
            index: cell,
            cells: weights.cells(),
        });
    }
    Ok(())
}

/// Source of Papangelou intensities. Implementations may cache, hence `&mut`;
/// parallel callers clone one instance per worker.
pub trait Intensity: Clone + Send + Sync {
    fn value(&mut self, cell: usize, gamma: &Configuration) -> Result<f64>;

    /// `r(x, γ)` for every cell.
    fn all(&mut self, gamma: &Configuration) -> Result<Vec<f64>> {
        (0..gamma.cells()).map(|x| self.value(x, gamma)).collect()
    }
}

/// Poisson baseline: `r(x, γ) = g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonIntensity {
    pub intensity: Vec<f64>,
}

impl Intensity for PoissonIntensity {
    fn value(&mut self, cell: usize, _gamma: &Configuration) -> Result<f64> {
        self.intensity.get(cell).copied().ok_or(Error::CellOutOfRange {
            index: cell,
            cells: self.intensity.len(),
        })
    }

    fn all(&mut self, _gamma: &Configuration) -> Result<Vec<f64>> {
        Ok(self.intensity.clone())
    }
}

/// Closed-form ratio with memoised cycle sums. Clones share the form and start
/// with an empty cache.
#[derive(Debug)]
pub struct RatioIntensity {
    form: Arc<PermForm>,
    cache: CycleSumCache,
}

impl RatioIntensity {
    pub fn new(weights: &CoxWeights) -> Result<Self> {
        Ok(Self {
            form: Arc::new(weights.perm_form()?.clone()),
            cache: CycleSumCache::default(),
        })
    }

    pub fn form(&self) -> &PermForm {
        &self.form
    }
}

impl Clone for RatioIntensity {
    fn clone(&self) -> Self {
        Self {
            form: Arc::clone(&self.form),
            cache: CycleSumCache::default(),
        }
    }
}

impl Intensity for RatioIntensity {
    fn value(&mut self, cell: usize, gamma: &Configuration) -> Result<f64> {
        if cell >= gamma.cells() {
            return Err(Error::CellOutOfRange {
                index: cell,
                cells: gamma.cells(),
            });
        }
        self.cache.papangelou(&self.form, cell, gamma)
    }
}

/// Test functionals `F(x, γ)` for the GNZ identity, supported on a window Λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunctional {
    Zero,
    /// `1_Λ(x)`.
    Indicator {
        window: Vec<usize>,
    },
    /// `1_Λ(x) 1{γ(Λ) = 1}`: x is the only point of γ in Λ.
    Isolated {
        window: Vec<usize>,
    },
    /// `1_Λ(x) / γ(Λ')`, with Λ ⊆ Λ' so the count is at least one.
    Damped {
        window: Vec<usize>,
        outer: Vec<usize>,
    },
}

impl TestFunctional {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Indicator { .. } => "indicator",
            Self::Isolated { .. } => "isolated",
            Self::Damped { .. } => "damped",
        }
    }

    /// Cells outside which `F(x, ·)` vanishes.
    pub fn support(&self) -> &[usize] {
        match self {
            Self::Zero => &[],
            Self::Indicator { window } | Self::Isolated { window } | Self::Damped { window, .. } => window,
        }
    }

    /// `F(x, γ)`; `γ` is assumed to contain `x`.
    pub fn eval(&self, cell: usize, gamma: &Configuration) -> f64 {
        if !self.support().contains(&cell) {
            return 0.0;
        }
        match self {
            Self::Zero => 0.0,
            Self::Indicator { .. } => 1.0,
            Self::Isolated { window } => f64::from(gamma.count_in(window) == 1),
            Self::Damped { outer, .. } => {
                let n = gamma.count_in(outer);
                if n == 0 {
                    0.0
                } else {
                    1.0 / n as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnzReport {
    pub functional: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Standard error of the per-sample difference.
    pub pooled_se: f64,
    pub z: f64,
    pub pass: bool,
}

/// z-score threshold of [`gnz_check`].
pub const GNZ_Z_TOLERANCE: f64 = 4.0;

/// Both sides of `E Σ_{x∈γ} F(x,γ) = E Δ Σ_x r(x,γ) F(x,γ∪x)` over samples.
pub fn gnz_check<I: Intensity>(
    samples: &[ProcessSample],
    intensity: &I,
    delta: f64,
    functional: &TestFunctional,
) -> Result<GnzReport> {
    let support = functional.support().to_vec();
    let pairs: Vec<(f64, f64)> = samples
        .par_iter()
        .map_init(
            || intensity.clone(),
            |r, s| -> Result<(f64, f64)> {
                let gamma = &s.configuration;
                let mut lhs = NeumaierSum::default();
                let mut rhs = NeumaierSum::default();
                for &x in &support {
                    let n = gamma.count(x);
                    if n > 0 {
                        lhs.add(f64::from(n) * functional.eval(x, gamma));
                    }
                    let f = functional.eval(x, &gamma.add_point(x)?);
                    if f != 0.0 {
                        rhs.add(delta * r.value(x, gamma)? * f);
                    }
                }
                Ok((lhs.value(), rhs.value()))
            },
        )
        .collect::<Result<_>>()?;
    let (l, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let diff: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let lhs = Estimate::from_samples(&l);
    let rhs = Estimate::from_samples(&r);
    let d = Estimate::from_samples(&diff);
    let z = d.z_score(0.0);
    Ok(GnzReport {
        functional: functional.name().into(),
        lhs,
        rhs,
        pooled_se: d.se,
        z,
        pass: z <= GNZ_Z_TOLERANCE || (d.mean == 0.0 && d.se == 0.0),
    })
}

/// Empirical moments `E r(x,γ)^n` over samples against the Gaussian bound
/// `(2n)!/(2^n n!) k(x,x)^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundRow {
    pub order: u32,
    pub empirical: Estimate,
    pub bound: f64,
    pub pass: bool,
}

pub fn moment_bound_check<I: Intensity>(
    samples: &[ProcessSample],
    intensity: &I,
    cell: usize,
    k_xx: f64,
    orders: &[u32],
) -> Result<Vec<MomentBoundRow>> {
    let values: Vec<f64> = samples
        .par_iter()
        .map_init(|| intensity.clone(), |r, s| r.value(cell, &s.configuration))
        .collect::<Result<_>>()?;
    Ok(orders
        .iter()
        .map(|&n| {
            let xs: Vec<f64> = values.iter().map(|v| v.powi(n as i32)).collect();
            let e = Estimate::from_samples(&xs);
            let bound = crate::gaussian_field::moment_bound(k_xx, n);
            let rel = if e.mean > 0.0 { e.se / e.mean } else { 0.0 };
            MomentBoundRow {
                order: n,
                empirical: e,
                bound,
                pass: e.mean <= (1.0 + 5.0 * rel) * bound,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample_poisson_batch, WeightMethod};
    use crate::state_space::build_grid;
    use nalgebra::DMatrix;

    fn one_cell(s2: f64, d: f64) -> CoxWeights {
        CoxWeights::new(DMatrix::from_element(1, 1, s2), d, 1).unwrap()
    }

    #[test]
    fn mc_matches_gaussian_integral_ratios() {
        let (s2, d) = (1.2, 0.4);
        let w = one_cell(s2, d);
        let base = 1.0 + 2.0 * s2 * d;
        for (n, want) in [(0, s2 / base), (1, 3.0 * s2 / base)] {
            let g = Configuration::from_counts(vec![n]);
            let e = papangelou_mc(&w, 0, &g, 200_000, &Stream::new(8).index(n as u64)).unwrap();
            let se = e.se.unwrap();
            assert!(
                (e.value - want).abs() <= 5.0 * se,
                "n={n}: {} vs {want} (se {se})",
                e.value
            );
        }
    }

    #[test]
    fn ratio_single_cell_closed_forms() {
        let (s2, d) = (1.2, 0.4);
        let mut w = one_cell(s2, d);
        w.validate(&Stream::new(1)).unwrap();
        let base = 1.0 + 2.0 * s2 * d;
        let r0 = papangelou_ratio(&w, 0, &Configuration::from_counts(vec![0]))
            .unwrap()
            .value;
        let r1 = papangelou_ratio(&w, 0, &Configuration::from_counts(vec![1]))
            .unwrap()
            .value;
        assert!((r0 - s2 / base).abs() < 1e-12);
        assert!((r1 - 3.0 * s2 / base).abs() < 1e-12);
        assert!(r1 > r0);
    }

    #[test]
    fn ratio_is_weight_ratio() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]);
        let mut w = CoxWeights::new(cov, 0.5, 2).unwrap();
        w.validate(&Stream::new(2)).unwrap();
        let g = Configuration::from_counts(vec![1, 2]);
        let p = |c: &Configuration| w.weight(c, WeightMethod::Perm).unwrap().value;
        let want = p(&g.add_point(1).unwrap()) * 3.0 / (p(&g) * 0.5);
        let got = papangelou_ratio(&w, 1, &g).unwrap().value;
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn mc_guards() {
        let w = one_cell(1.0, 0.5);
        let g = Configuration::from_counts(vec![0]);
        assert!(papangelou_mc(&w, 0, &g, 100, &Stream::new(0)).is_err());
        // 40 points in a cell with mean 0.5 is far out in the tail
        let g = Configuration::from_counts(vec![40]);
        assert!(matches!(
            papangelou_mc(&w, 0, &g, 10_000, &Stream::new(0)),
            Err(Error::DegenerateWeight { .. })
        ));
        assert!(matches!(
            papangelou_ratio(&w, 0, &Configuration::from_counts(vec![0])),
            Err(Error::UnvalidatedFormula(_))
        ));
    }

    #[test]
    fn poisson_intensity_ignores_configuration() {
        let mut p = PoissonIntensity {
            intensity: vec![0.5, 2.0],
        };
        for c in [vec![0, 0], vec![3, 1], vec![0, 7]] {
            let g = Configuration::from_counts(c);
            assert_eq!(p.all(&g).unwrap(), vec![0.5, 2.0]);
        }
    }

    #[test]
    fn zero_functional_gives_zero_sides() {
        let grid = build_grid(1, 2.0, 4, true).unwrap();
        let samples = sample_poisson_batch(&grid, &[1.0; 4], &Stream::new(1), 100).unwrap();
        let r = PoissonIntensity {
            intensity: vec![1.0; 4],
        };
        let rep = gnz_check(&samples, &r, grid.cell_volume(), &TestFunctional::Zero).unwrap();
        assert_eq!(rep.lhs.mean, 0.0);
        assert_eq!(rep.rhs.mean, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn mecke_for_poisson_sampler() {
        let grid = build_grid(1, 2.0, 6, true).unwrap();
        let g = vec![0.5, 1.0, 2.0, 1.5, 0.2, 0.8];
        let samples = sample_poisson_batch(&grid, &g, &Stream::new(3), 20_000).unwrap();
        let r = PoissonIntensity { intensity: g };
        for f in [
            TestFunctional::Indicator { window: vec![1, 2] },
            TestFunctional::Isolated { window: vec![1, 2, 3] },
            TestFunctional::Damped {
                window: vec![2],
                outer: vec![1, 2, 3],
            },
        ] {
            let rep = gnz_check(&samples, &r, grid.cell_volume(), &f).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
    }

    #[test]
    fn ratio_intensity_clone_shares_form() {
        let mut w = one_cell(1.0, 0.5);
        w.validate(&Stream::new(1)).unwrap();
        let mut a = RatioIntensity::new(&w).unwrap();
        let mut b = a.clone();
        let g = Configuration::from_counts(vec![2]);
        assert_eq!(a.value(0, &g).unwrap(), b.value(0, &g).unwrap());
        assert!(a.value(3, &g).is_err());
    }
}
