//! Summation and Monte-Carlo summary helpers.

use serde::{Deserialize, Serialize};

/// Neumaier (improved Kahan) compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// Mean and standard error of i.i.d. observations, summed in order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mut s = NeumaierSum::default();
        xs.iter().for_each(|&x| s.add(x));
        let mean = s.value() / n as f64;
        if n == 1 {
            return Self { mean, se: 0.0, n };
        }
        let mut ss = NeumaierSum::default();
        xs.iter().for_each(|&x| ss.add((x - mean) * (x - mean)));
        let var = ss.value() / (n - 1) as f64;
        Self {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Number of standard errors separating the mean from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.se
        }
    }
}

/// Sample covariance of paired observations.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let mx = Estimate::from_samples(xs).mean;
    let my = Estimate::from_samples(ys).mean;
    let mut s = NeumaierSum::default();
    for (x, y) in xs.iter().zip(ys) {
        s.add((x - mx) * (y - my));
    }
    s.value() / (n as f64 - 1.0)
}

/// Ratio `E[num] / E[den]` with a delta-method standard error.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> Estimate {
    let n = num.len();
    let a = Estimate::from_samples(num);
    let b = Estimate::from_samples(den);
    let r = a.mean / b.mean;
    let nf = n as f64;
    let va = a.se * a.se * nf;
    let vb = b.se * b.se * nf;
    let cab = covariance(num, den);
    let var = (va - 2.0 * r * cab + r * r * vb) / (b.mean * b.mean * nf);
    Estimate {
        mean: r,
        se: var.max(0.0).sqrt(),
        n,
    }
}

/// Kish effective sample size of non-negative weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let mut s = NeumaierSum::default();
    let mut s2 = NeumaierSum::default();
    for &w in weights {
        s.add(w);
        s2.add(w * w);
    }
    let (s, s2) = (s.value(), s2.value());
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Double factorial `(2n-1)!! = (2n)! / (2^n n!)`, the n-th even Gaussian moment.
pub fn gaussian_even_moment(n: u32) -> f64 {
    (1..=n).map(|k| (2 * k - 1) as f64).product()
}

pub fn falling_factorial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).map(|i| f64::from(n - i)).product()
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Gauss–Hermite rule for the standard normal law (probabilists' weight),
/// via the Golub–Welsch eigenvalue method. Weights sum to one.
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    use nalgebra::{DMatrix, SymmetricEigen};
    let jacobi = DMatrix::from_fn(nodes, nodes, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..nodes)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_integrates_normal_moments() {
        let (x, w) = gauss_hermite(20);
        let moment = |p: i32| -> f64 { x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum() };
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-12);
        assert!((moment(8) - 105.0).abs() < 1e-9);
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let mut s = NeumaierSum::default();
        for x in [1.0, 1e100, 1.0, -1e100] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn estimate_of_constant_has_zero_se() {
        let e = Estimate::from_samples(&[2.0; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.se, 0.0);
        assert_eq!(e.z_score(2.0), 0.0);
    }

    #[test]
    fn moments_and_factorials() {
        assert_eq!(gaussian_even_moment(1), 1.0);
        assert_eq!(gaussian_even_moment(2), 3.0);
        assert_eq!(gaussian_even_moment(3), 15.0);
        assert_eq!(falling_factorial(5, 2), 20.0);
        assert_eq!(falling_factorial(1, 2), 0.0);
        assert_eq!(factorial(4), 24.0);
    }

    #[test]
    fn ess_bounds() {
        assert_eq!(effective_sample_size(&[1.0; 8]), 8.0);
        assert_eq!(effective_sample_size(&[0.0, 0.0, 5.0]), 1.0);
    }
}
