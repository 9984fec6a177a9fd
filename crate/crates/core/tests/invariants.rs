//! Cross-module invariants: kernel symmetries, field positivity, rate balance,
//! generator structure and Papangelou intensities.

use permadyn_core::dynamics::{
    build_generator, check_balance, DynamicsKind, HopKernel, HopShape, HopTable, RateModel, TruncatedSpace,
};
use permadyn_core::gaussian_field::{factorize, moment_bound, sample_fields};
use permadyn_core::kernel::{build_kernel_matrix, ConvolutionKernel, KernelMatrix};
use permadyn_core::papangelou::{moment_bound_check, papangelou_mc, papangelou_ratio, RatioIntensity};
use permadyn_core::rng::Stream;
use permadyn_core::sampler::{configurations_up_to, CoxProcess, CoxWeights};
use permadyn_core::stats::Estimate;
use permadyn_core::{build_grid, Configuration};
use proptest::prelude::*;

fn kernel(dimension: usize, m: usize, amp: f64, ls: f64) -> KernelMatrix {
    let grid = build_grid(dimension, 1.0, m, true).unwrap();
    build_kernel_matrix(&grid, &ConvolutionKernel::gaussian(amp, ls).unwrap()).unwrap()
}

fn validated(k: &KernelMatrix, l: usize, seed: u64) -> CoxWeights {
    let mut w = CoxWeights::from_kernel(k, l).unwrap();
    w.validate(&Stream::new(seed).child("validate")).unwrap();
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kernel_is_symmetric_and_translation_invariant(
        dimension in 1usize..=2,
        m in 3usize..=7,
        amp in 0.2f64..3.0,
        ls in 0.05f64..0.5,
    ) {
        let k = kernel(dimension, m, amp, ls);
        let grid = k.grid().clone();
        let n = k.size();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(k.get(i, j).to_bits(), k.get(j, i).to_bits());
                let shifted = grid.offset_cell(0, grid.index_offset(i, j)).unwrap();
                let (a, b) = (k.get(i, j), k.get(0, shifted));
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
            }
        }
        prop_assert!(k.is_psd());
    }

    #[test]
    fn field_intensity_is_nonnegative(l in 1usize..=3, seed in any::<u64>()) {
        let k = kernel(1, 8, 1.0, 0.2);
        let factor = factorize(&k).unwrap();
        let s = sample_fields(&factor, l, &Stream::new(seed)).unwrap();
        prop_assert_eq!(s.l(), l);
        prop_assert!(s.intensity.iter().all(|g| *g >= 0.0));
    }

    #[test]
    fn balance_holds_for_any_rates(
        s in 0.0f64..=1.0,
        rs in proptest::collection::vec(prop_oneof![Just(0.0), 1e-6f64..1e3], 1..8),
    ) {
        let hop = HopKernel::new(HopShape::Box, 0.5, 1.0).unwrap();
        let model = RateModel::new(s, hop, 1e-12).unwrap();
        let report = check_balance(&model, &rs);
        prop_assert!(report.pass, "{report:?}");
    }

    #[test]
    fn generator_rows_sum_to_zero(
        m in 1usize..=3,
        l in 1usize..=2,
        s in 0.0f64..=1.0,
        kawasaki in any::<bool>(),
    ) {
        let k = kernel(1, m, 1.0, 0.2);
        let grid = k.grid().clone();
        let w = validated(&k, l, 3);
        let mut r = RatioIntensity::new(&w).unwrap();
        let model = RateModel::new(s, HopKernel::new(HopShape::Box, 0.5, 1.0).unwrap(), 1e-12).unwrap();
        let table = HopTable::new(&grid, &model.hop);
        let kind = if kawasaki { DynamicsKind::Kawasaki } else { DynamicsKind::Glauber };
        let space = TruncatedSpace::new(m, 3).unwrap();
        let q = build_generator(&space, &grid, &model, &table, &mut r, kind).unwrap();
        let scale = q.diagonal.iter().fold(1.0f64, |a, d| a.max(d.abs()));
        prop_assert!(q.max_row_sum() <= 1e-12 * scale);
        prop_assert!(q.rows.iter().flatten().all(|(_, rate)| *rate > 0.0));
    }
}

#[test]
fn field_covariance_matches_kernel() {
    let k = kernel(1, 6, 1.3, 0.25);
    let factor = factorize(&k).unwrap();
    let stream = Stream::new(11);
    let draws: Vec<Vec<f64>> = (0..100_000u64)
        .map(|i| sample_fields(&factor, 1, &stream.index(i)).unwrap().fields.remove(0))
        .collect();
    for j in 0..k.size() {
        let xs: Vec<f64> = draws.iter().map(|y| y[0] * y[j]).collect();
        let e = Estimate::from_samples(&xs);
        let z = (e.mean - k.get(0, j)) / e.se;
        assert!(
            z.abs() <= 5.0,
            "cov(0, {j}): {} vs {} (z = {z:.2})",
            e.mean,
            k.get(0, j)
        );
    }
}

/// Monte-Carlo and ratio intensities agree on 2 to 4 cells for every
/// configuration of at most 4 points, and the ratio is positive throughout.
#[test]
fn papangelou_methods_agree_on_small_grids() {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for m in 2..=4usize {
        let k = kernel(1, m, 1.0, 0.2);
        for l in 1..=2usize {
            let w = validated(&k, l, 5);
            let stream = Stream::new(17).child(&format!("m{m}l{l}"));
            for (c, counts) in configurations_up_to(m, 4).into_iter().enumerate() {
                let gamma = Configuration::from_counts(counts);
                for x in 0..m {
                    let ratio = papangelou_ratio(&w, x, &gamma).unwrap().value;
                    assert!(ratio > 0.0, "r({x}, {gamma:?}) = {ratio}");
                    let mc = papangelou_mc(&w, x, &gamma, 20_000, &stream.index(c as u64)).unwrap();
                    let z = (mc.value - ratio) / mc.se.unwrap();
                    worst = worst.max(z.abs());
                    compared += 1;
                }
            }
        }
    }
    assert!(worst <= 5.0, "max |z| = {worst:.2} over {compared} comparisons");
}

#[test]
fn intensity_moments_respect_gaussian_bound() {
    let k = kernel(1, 8, 1.0, 0.2);
    let w = validated(&k, 1, 9);
    let r = RatioIntensity::new(&w).unwrap();
    let process = CoxProcess::new(k.clone(), 1).unwrap();
    let samples = process.sample_batch(&Stream::new(23), 20_000, false);
    let rows = moment_bound_check(&samples, &r, 3, k.get(3, 3), &[1, 2, 3]).unwrap();
    for row in &rows {
        assert_eq!(row.bound, moment_bound(k.get(3, 3), row.order));
        assert!(row.pass, "{row:?}");
    }
}
