//! One function per acceptance criterion. Each returns its checks and tables;
//! module errors become failed checks.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::report::{CheckRecord, Table};
use crate::alpha_permanent::{determinant, per_alpha, permanent_ryser, SquareMatrix};
use crate::dynamics::{
    build_generator, check_balance, check_balance_with, estimate_form_mass, reversibility_check, simulate,
    DynamicsKind, EventKind, HopKernel, HopShape, HopTable, PerturbedIntensity, RateModel, SimulationLimits,
    TruncatedSpace,
};
use crate::error::Result;
use crate::gaussian_field::{factorize_matrix, intensity_moments, sample_fields};
use crate::kernel::{build_kernel_matrix, local_trace_check, ConvolutionKernel};
use crate::papangelou::{
    gnz_check, papangelou_mc, papangelou_ratio, PoissonIntensity, RatioIntensity, TestFunctional, GNZ_Z_TOLERANCE,
};
use crate::rng::Stream;
use crate::sampler::{
    configurations_up_to, estimate_correlations, pair_tuples, sample_poisson_batch, CoxProcess, CoxWeights,
    ProcessSample, WeightMethod,
};
use crate::scaling::{diffusion_constant, scaling_ladder, LADDER_RELATIVE, LADDER_Z};
use crate::state_space::{Configuration, GridSpec};
use crate::stats::{covariance, Estimate};

/// Replicas for the Gaussian moment check.
pub const MOMENT_REPLICAS: usize = 100_000;
/// Random matrices for the α-permanent identities.
pub const PERMANENT_MATRICES: usize = 200;
/// Random (grid, κ, Λ) triples for the trace identity.
pub const TRACE_TRIPLES: usize = 20;
pub const IDENTITY_TOLERANCE: f64 = 1e-9;
/// Tolerance for invariances that hold exactly in exact arithmetic.
pub const INVARIANCE_TOLERANCE: f64 = 1e-12;
pub const MOMENT_Z: f64 = 4.0;
pub const CORRELATION_Z: f64 = 5.0;
pub const OVERDISPERSION_Z: f64 = 4.0;
pub const PAPANGELOU_Z: f64 = 5.0;
pub const RATIO_TOLERANCE: f64 = 1e-6;
pub const BALANCE_SCALE_TOLERANCE: f64 = 1e-12;
pub const REVERSIBILITY_TOLERANCE: f64 = 1e-8;
pub const PERTURBATION_THRESHOLD: f64 = 1e-3;
pub const STATIONARITY_Z: f64 = 5.0;
pub const DIFFUSION_TOLERANCE: f64 = 0.01;

/// Checks and tables produced by one criterion.
#[derive(Debug, Default)]
pub struct Section {
    pub checks: Vec<CheckRecord>,
    pub tables: Vec<Table>,
}

impl Section {
    fn push(&mut self, c: CheckRecord) {
        self.checks.push(c);
    }
}

pub(crate) fn guarded(criterion: u32, name: &str, f: impl FnOnce(&mut Section) -> Result<()>) -> Section {
    let mut s = Section::default();
    if let Err(e) = f(&mut s) {
        s.push(CheckRecord::failed(format!("{name}: aborted"), criterion, &e));
    }
    s
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn random_matrix(rng: &mut impl Rng, n: usize) -> Result<SquareMatrix> {
    let entries: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    SquareMatrix::new(n, entries)
}

fn abs_matrix(a: &SquareMatrix) -> SquareMatrix {
    SquareMatrix::new(a.order(), a.entries().iter().map(|x| x.abs()).collect()).expect("same shape")
}

/// Criterion 1: α-permanent identities on random matrices.
pub fn permanent_identities(root: &Stream) -> Section {
    guarded(1, "alpha-permanent identities", |s| {
        let mut rng = root.child("c1").child("matrices").rng();
        const ALPHAS: [f64; 5] = [-1.0, 0.5, 1.0, 2.0, 3.7];
        let (mut det_err, mut perm_err, mut block_err, mut sym_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for t in 0..PERMANENT_MATRICES {
            let n = rng.random_range(1..=6usize);
            let a = random_matrix(&mut rng, n)?;
            let abs = abs_matrix(&a);
            let scale = permanent_ryser(&abs)?.max(f64::MIN_POSITIVE);
            det_err = det_err.max((per_alpha(&a, -1.0)? - determinant(&a)).abs() / scale);
            perm_err = perm_err.max((per_alpha(&a, 1.0)? - permanent_ryser(&a)?).abs() / scale);

            let alpha = ALPHAS[t % ALPHAS.len()];
            let pa = per_alpha(&a, alpha)?;
            let scale_a = per_alpha(&abs, alpha.abs())?.max(f64::MIN_POSITIVE);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            sym_err = sym_err.max((per_alpha(&a.permuted(&perm), alpha)? - pa).abs() / scale_a);

            let m = rng.random_range(1..=3usize);
            let b = random_matrix(&mut rng, m)?;
            let pb = per_alpha(&b, alpha)?;
            let scale_b = per_alpha(&abs_matrix(&b), alpha.abs())?.max(f64::MIN_POSITIVE);
            block_err = block_err.max((per_alpha(&a.direct_sum(&b), alpha)? - pa * pb).abs() / (scale_a * scale_b));
        }
        let detail = format!("{PERMANENT_MATRICES} random matrices, n <= 6; relative to per_|α|(|A|)");
        s.push(CheckRecord::at_most("per_alpha(-1) = det", 1, det_err, IDENTITY_TOLERANCE).with_detail(&detail));
        s.push(
            CheckRecord::at_most("per_alpha(1) = ryser permanent", 1, perm_err, IDENTITY_TOLERANCE)
                .with_detail(&detail),
        );
        s.push(CheckRecord::at_most("block invariance", 1, block_err, INVARIANCE_TOLERANCE).with_detail(&detail));
        s.push(CheckRecord::at_most("permutation invariance", 1, sym_err, INVARIANCE_TOLERANCE).with_detail(&detail));
        Ok(())
    })
}

/// Criterion 2: local trace equals the Hilbert–Schmidt norm, and PSD kernel
/// matrices, on random (grid, κ, Λ) triples.
pub fn kernel_identities(root: &Stream) -> Section {
    guarded(2, "kernel identities", |s| {
        let mut rng = root.child("c2").child("triples").rng();
        let mut gap = 0.0f64;
        let mut non_psd = 0usize;
        let mut worst_eig = 0.0f64;
        for _ in 0..TRACE_TRIPLES {
            let d = rng.random_range(1..=3usize);
            let m = match d {
                1 => rng.random_range(8..=40usize),
                2 => rng.random_range(3..=8usize),
                _ => rng.random_range(2..=4usize),
            };
            let side = rng.random_range(1.0..4.0);
            let grid = GridSpec::new(d, side, m, rng.random_bool(0.5))?;
            let amp = rng.random_range(0.5..2.0);
            let ls = rng.random_range(0.05..0.3) * side;
            let kernel = if rng.random_bool(0.5) {
                ConvolutionKernel::gaussian(amp, ls)?
            } else {
                ConvolutionKernel::exponential_smoothed(amp, ls)?
            };
            let k = build_kernel_matrix(&grid, &kernel)?;
            let mut window: Vec<usize> = (0..grid.total_cells()).filter(|_| rng.random_bool(0.3)).collect();
            if window.is_empty() {
                window.push(rng.random_range(0..grid.total_cells()));
            }
            gap = gap.max(local_trace_check(&k, &window)?.relative_gap());
            if !k.is_psd() {
                non_psd += 1;
            }
            worst_eig = worst_eig.min(k.min_eigenvalue() / k.max_eigenvalue());
        }
        s.push(
            CheckRecord::at_most("local trace = HS norm squared", 2, gap, IDENTITY_TOLERANCE)
                .with_detail(format!("{TRACE_TRIPLES} random (grid, kernel, window) triples")),
        );
        s.push(
            CheckRecord::at_most("kernel matrices PSD", 2, non_psd as f64, 0.0)
                .with_detail(format!("most negative λmin/λmax = {worst_eig:e}")),
        );
        Ok(())
    })
}

/// Criterion 3: `E Y² = 1` and `E Y⁴ = 3` for a unit-variance field.
pub fn gaussian_moments(root: &Stream, cfg: &ExperimentConfig) -> Section {
    guarded(3, "gaussian moments", |s| {
        let grid = cfg.grid.build()?;
        let k = build_kernel_matrix(&grid, &cfg.kernel.build()?)?;
        let cell = 0;
        let unit = k.values() / k.get(cell, cell);
        let factor = factorize_matrix(&unit)?;
        let stream = root.child("c3").child("fields");
        let samples = (0..MOMENT_REPLICAS as u64)
            .into_par_iter()
            .map(|i| sample_fields(&factor, 1, &stream.index(i)))
            .collect::<Result<Vec<_>>>()?;
        let m2 = intensity_moments(&samples, cell, 1)?;
        let m4 = intensity_moments(&samples, cell, 2)?;
        s.push(CheckRecord::z_test("E Y^2 = 1", 3, m2.mean, 1.0, m2.se, MOMENT_Z));
        s.push(CheckRecord::z_test("E Y^4 = 3", 3, m4.mean, 3.0, m4.se, MOMENT_Z));
        Ok(())
    })
}

/// `E[n(n-1)] - (E n)²` per cell with a delta-method SE.
fn overdispersion(samples: &[ProcessSample], cell: usize) -> Estimate {
    let n: Vec<f64> = samples.iter().map(|s| f64::from(s.configuration.count(cell))).collect();
    let a: Vec<f64> = n.iter().map(|x| x * (x - 1.0)).collect();
    let en = Estimate::from_samples(&n);
    let ea = Estimate::from_samples(&a);
    let len = n.len() as f64;
    let m = en.mean;
    let var = ea.se * ea.se + 4.0 * m * m * en.se * en.se - 4.0 * m * covariance(&a, &n) / len;
    Estimate {
        mean: ea.mean - m * m,
        se: var.max(0.0).sqrt(),
        n: n.len(),
    }
}

/// Criterion 4: one- and two-point correlation functions of the Cox process.
pub fn correlations(root: &Stream, cfg: &ExperimentConfig) -> Section {
    let mut out = Section::default();
    let mut table = Table::new(
        "correlations",
        &[
            "l",
            "order",
            "cells",
            "empirical",
            "se",
            "theory_half_l",
            "z_half_l",
            "theory_two_over_l",
            "z_two_over_l",
        ],
    );
    for l in cfg.l_values() {
        let sec = guarded(4, &format!("correlations l={l}"), |s| {
            let grid = cfg.grid.build()?;
            let k = build_kernel_matrix(&grid, &cfg.kernel.build()?)?;
            let process = CoxProcess::new(k.clone(), l)?;
            let samples = process.sample_batch(&root.child("c4").index(l as u64), cfg.replicas(), false);
            let mut tuples: Vec<Vec<usize>> = (0..grid.total_cells()).map(|c| vec![c]).collect();
            tuples.extend((0..grid.total_cells()).map(|c| vec![c, c]));
            tuples.extend(pair_tuples(&grid, cfg.process.pair_budget * grid.spacing()));
            let est = estimate_correlations(&samples, &tuples, &k, l)?;
            let z = |e: f64, t: f64, se: f64| if e == t { 0.0 } else { (e - t).abs() / se };
            let (mut z1, mut z2, mut z2_alt) = (0.0f64, 0.0f64, 0.0f64);
            for e in &est {
                let zh = z(e.empirical, e.theory_half_l, e.se);
                let zt = z(e.empirical, e.theory_two_over_l, e.se);
                if e.order == 1 {
                    z1 = z1.max(zh);
                } else {
                    z2 = z2.max(zh);
                    z2_alt = z2_alt.max(zt);
                }
                let cells: Vec<String> = e.cells.iter().map(|c| c.to_string()).collect();
                table.push(vec![
                    l.to_string(),
                    e.order.to_string(),
                    cells.join(";"),
                    fmt(e.empirical),
                    fmt(e.se),
                    fmt(e.theory_half_l),
                    fmt(zh),
                    fmt(e.theory_two_over_l),
                    fmt(zt),
                ]);
            }
            let n1 = grid.total_cells();
            let n2 = est.len() - n1;
            s.push(
                CheckRecord::at_most(format!("k1 = l k(x,x), l={l}"), 4, z1, CORRELATION_Z)
                    .with_detail(format!("max z over {n1} cells")),
            );
            s.push(
                CheckRecord::at_most(format!("k2 = per_(l/2)(l k), l={l}"), 4, z2, CORRELATION_Z)
                    .with_detail(format!("max z over {n2} cell pairs")),
            );
            s.push(
                CheckRecord::at_most(format!("k2 = per_(2/l)(l k), l={l}"), 4, z2_alt, CORRELATION_Z)
                    .with_detail(format!("max z over {n2} cell pairs; Gaussian moment prediction"))
                    .informational(),
            );
            let min_z = (0..n1)
                .map(|c| {
                    let o = overdispersion(&samples, c);
                    if o.se > 0.0 {
                        o.mean / o.se
                    } else {
                        0.0
                    }
                })
                .fold(f64::INFINITY, f64::min);
            let mut c = CheckRecord::new(
                format!("over-dispersion detected, l={l}"),
                4,
                min_z,
                OVERDISPERSION_Z,
                OVERDISPERSION_Z,
                min_z > OVERDISPERSION_Z,
            );
            c.detail = "min over cells of (E[n(n-1)] - (E n)^2) / SE".into();
            s.push(c);
            Ok(())
        });
        out.checks.extend(sec.checks);
    }
    out.tables.push(table);
    out
}

/// Criterion 5: Monte-Carlo and ratio Papangelou intensities against
/// analytic and quadrature values.
pub fn papangelou(root: &Stream, cfg: &ExperimentConfig) -> Section {
    guarded(5, "papangelou", |s| {
        let stream = root.child("c5");
        let (s2, delta) = (1.0, 0.5);
        let one = CoxWeights::new(DMatrix::from_element(1, 1, s2), delta, 1)?;
        let empty = Configuration::empty(1);
        let e = papangelou_mc(&one, 0, &empty, cfg.process.mc_draws, &stream.child("mc-empty"))?;
        let want = s2 / (1.0 + 2.0 * s2 * delta);
        s.push(CheckRecord::z_test(
            "mc r(x, empty) = s2/(1+2 s2 D)",
            5,
            e.value,
            want,
            e.se.unwrap_or(0.0),
            PAPANGELOU_Z,
        ));
        let single = Configuration::from_counts(vec![1]);
        let e = papangelou_mc(&one, 0, &single, cfg.process.mc_draws, &stream.child("mc-one"))?;
        s.push(CheckRecord::z_test(
            "mc r(x, {x}) = 3 s2/(1+2 s2 D)",
            5,
            e.value,
            3.0 * want,
            e.se.unwrap_or(0.0),
            PAPANGELOU_Z,
        ));

        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 0.8]);
        for l in [1usize, 2] {
            let mut w = CoxWeights::new(cov.clone(), delta, l)?;
            w.validate(&stream.child("validate").index(l as u64))?;
            let mut worst = 0.0f64;
            for counts in configurations_up_to(2, 2) {
                let gamma = Configuration::from_counts(counts);
                let base = w.weight(&gamma, WeightMethod::Quadrature)?.value;
                for x in 0..2 {
                    let up = w.weight(&gamma.add_point(x)?, WeightMethod::Quadrature)?.value;
                    let quad = up * f64::from(gamma.count(x) + 1) / (base * delta);
                    let ratio = papangelou_ratio(&w, x, &gamma)?.value;
                    worst = worst.max((ratio - quad).abs() / quad.abs());
                }
            }
            s.push(
                CheckRecord::at_most(format!("ratio = quadrature, 2 cells, l={l}"), 5, worst, RATIO_TOLERANCE)
                    .with_detail("max relative error over configurations with <= 2 points"),
            );
            let gamma = Configuration::from_counts(vec![1, 0]);
            let r = papangelou_ratio(&w, 1, &gamma)?.value;
            let m = papangelou_mc(
                &w,
                1,
                &gamma,
                cfg.process.mc_draws,
                &stream.child("mc-two").index(l as u64),
            )?;
            s.push(
                CheckRecord::z_test(
                    format!("mc = ratio, 2 cells, l={l}"),
                    5,
                    m.value,
                    r,
                    m.se.unwrap_or(0.0),
                    PAPANGELOU_Z,
                )
                .informational(),
            );
        }
        Ok(())
    })
}

fn gnz_functionals(cells: usize) -> Vec<TestFunctional> {
    let mid = cells / 2;
    let window: Vec<usize> = (mid.saturating_sub(2)..(mid + 2).min(cells)).collect();
    let outer: Vec<usize> = (mid.saturating_sub(4)..(mid + 4).min(cells)).collect();
    vec![
        TestFunctional::Indicator { window: window.clone() },
        TestFunctional::Isolated { window: window.clone() },
        TestFunctional::Damped { window, outer },
    ]
}

/// Criterion 6: GNZ/Mecke identity for the Poisson baseline and μ^(l).
pub fn gnz(root: &Stream, cfg: &ExperimentConfig) -> Section {
    let mut out = Section::default();
    let stream = root.child("c6");
    let n = cfg.process.gnz_samples;
    let functionals = gnz_functionals(cfg.grid.build().map(|g| g.total_cells()).unwrap_or(1));
    let record = |s: &mut Section, label: &str, f: &TestFunctional, rep: crate::papangelou::GnzReport| {
        let mut c = CheckRecord::new(
            format!("gnz {label} {}", f.name()),
            6,
            rep.lhs.mean,
            rep.rhs.mean,
            GNZ_Z_TOLERANCE,
            rep.pass,
        )
        .with_se(rep.pooled_se);
        c.detail = format!("z = {:.3}; lhs se {:e}, rhs se {:e}", rep.z, rep.lhs.se, rep.rhs.se);
        s.push(c);
    };
    let sec = guarded(6, "gnz poisson", |s| {
        let grid = cfg.grid.build()?;
        let k = build_kernel_matrix(&grid, &cfg.kernel.build()?)?;
        let g: Vec<f64> = (0..grid.total_cells()).map(|c| k.get(c, c)).collect();
        let samples = sample_poisson_batch(&grid, &g, &stream.child("poisson"), n)?;
        let r = PoissonIntensity { intensity: g };
        for f in &functionals {
            record(s, "poisson", f, gnz_check(&samples, &r, grid.cell_volume(), f)?);
        }
        Ok(())
    });
    out.checks.extend(sec.checks);
    for l in [1usize, 2] {
        let sec = guarded(6, &format!("gnz mu^({l})"), |s| {
            let grid = cfg.grid.build()?;
            let k = build_kernel_matrix(&grid, &cfg.kernel.build()?)?;
            let mut w = CoxWeights::from_kernel(&k, l)?;
            w.validate(&stream.child("validate").index(l as u64))?;
            let r = RatioIntensity::new(&w)?;
            let samples = CoxProcess::new(k, l)?.sample_batch(&stream.child("cox").index(l as u64), n, false);
            for f in &functionals {
                record(
                    s,
                    &format!("mu^({l})"),
                    f,
                    gnz_check(&samples, &r, grid.cell_volume(), f)?,
                );
            }
            Ok(())
        });
        out.checks.extend(sec.checks);
    }
    out
}

/// Balance-check r values: zero, values at and below the clamp, and a
/// log-spaced grid over 16 decades.
pub fn balance_grid(clamp: f64) -> Vec<f64> {
    let mut rs = vec![0.0, 0.5 * clamp, clamp];
    rs.extend((0..=40).map(|k| 10f64.powf(-8.0 + 0.4 * f64::from(k))));
    rs
}

/// Criterion 7: birth/death and hop balance identities.
pub fn balance() -> Section {
    guarded(7, "balance", |s| {
        let hop = HopKernel::new(HopShape::Box, 0.5, 1.0)?;
        let clamp = 1e-12;
        let rs = balance_grid(clamp);
        for sv in [0.0, 0.5, 1.0] {
            let model = RateModel::new(sv, hop, clamp)?;
            let rep = check_balance(&model, &rs);
            s.push(CheckRecord::at_most(
                format!("birth = death * r, s={sv}"),
                7,
                rep.birth_death_residual,
                BALANCE_SCALE_TOLERANCE,
            ));
            s.push(CheckRecord::at_most(
                format!("r_x c_xy = r_y c_yx, s={sv}"),
                7,
                rep.hop_residual,
                BALANCE_SCALE_TOLERANCE,
            ));
            let skewed = check_balance_with(&model, &rs, |i, j| if i < j { 1.0 } else { 1.01 });
            let mut c = CheckRecord::new(
                format!("injected asymmetry flagged, s={sv}"),
                7,
                skewed.hop_residual,
                0.01,
                BALANCE_SCALE_TOLERANCE,
                !skewed.pass,
            );
            c.detail = "a(x,y) = 1.01 a(y,x) for x > y; residual must exceed tolerance".into();
            s.push(c);
        }
        Ok(())
    })
}

/// Reversibility grid with `m` cells: d = 1 torus of side `m/4`.
pub fn reversibility_grid(m: usize) -> Result<GridSpec> {
    GridSpec::new(1, 0.25 * m as f64, m, true)
}

/// Criterion 8: detailed balance of the exact generators on truncated spaces.
pub fn reversibility(root: &Stream, cfg: &ExperimentConfig) -> Section {
    let mut table = Table::new(
        "reversibility",
        &[
            "kind",
            "cells",
            "l",
            "s",
            "states",
            "residual",
            "perturbed_residual",
            "truncated_births",
        ],
    );
    let mut sec = guarded(8, "reversibility", |s| {
        let hop = HopKernel::new(HopShape::Box, 0.5, 1.0)?;
        let kernel = cfg.dynamics.kernel.build()?;
        let mut worst = [0.0f64; 2];
        let mut weakest = [f64::INFINITY; 2];
        for m in 1..=4usize {
            let grid = reversibility_grid(m)?;
            let k = build_kernel_matrix(&grid, &kernel)?;
            let table_h = HopTable::new(&grid, &hop);
            let space = TruncatedSpace::new(m, 4)?;
            for l in [1usize, 2] {
                let mut w = CoxWeights::from_kernel(&k, l)?;
                w.validate(&root.child("c8").index(m as u64).index(l as u64))?;
                let form = w.perm_form()?;
                let mu = space
                    .states
                    .iter()
                    .map(|g| form.weight(g))
                    .collect::<Result<Vec<f64>>>()?;
                let clamp = RateModel::clamp_for(l, k.max_diagonal());
                for sv in [0.5, 1.0] {
                    let model = RateModel::new(sv, hop, clamp)?;
                    for (ki, kind) in [DynamicsKind::Glauber, DynamicsKind::Kawasaki].into_iter().enumerate() {
                        let mut r = RatioIntensity::new(&w)?;
                        let q = build_generator(&space, &grid, &model, &table_h, &mut r, kind)?;
                        let res = reversibility_check(&q, &mu)?;
                        worst[ki] = worst[ki].max(res);
                        // Kawasaki on one cell has no moves to perturb.
                        let perturbed = if kind == DynamicsKind::Kawasaki && m == 1 {
                            f64::NAN
                        } else {
                            let mut p = PerturbedIntensity {
                                inner: RatioIntensity::new(&w)?,
                                state: Configuration::empty(m),
                                cell: 0,
                                factor: 1.01,
                            };
                            let qp = build_generator(&space, &grid, &model, &table_h, &mut p, kind)?;
                            let v = reversibility_check(&qp, &mu)?;
                            weakest[ki] = weakest[ki].min(v);
                            v
                        };
                        table.push(vec![
                            format!("{kind:?}").to_lowercase(),
                            m.to_string(),
                            l.to_string(),
                            sv.to_string(),
                            space.len().to_string(),
                            fmt(res),
                            fmt(perturbed),
                            q.truncated_births.to_string(),
                        ]);
                    }
                }
            }
        }
        for (ki, name) in ["glauber", "kawasaki"].into_iter().enumerate() {
            s.push(
                CheckRecord::at_most(
                    format!("{name} detailed balance"),
                    8,
                    worst[ki],
                    REVERSIBILITY_TOLERANCE,
                )
                .with_detail("max over 1-4 cells, <= 4 points, l in {1,2}, s in {1/2,1}"),
            );
            let mut c = CheckRecord::new(
                format!("{name} perturbation flagged"),
                8,
                weakest[ki],
                PERTURBATION_THRESHOLD,
                PERTURBATION_THRESHOLD,
                weakest[ki] >= PERTURBATION_THRESHOLD,
            );
            c.detail = "r(0, empty) scaled by 1.01; min residual over spaces".into();
            s.push(c);
        }
        Ok(())
    });
    sec.tables.push(table);
    sec
}

/// Criterion 9: stationary-start simulations keep the occupancy profile.
pub fn stationarity(root: &Stream, cfg: &ExperimentConfig) -> Section {
    let mut table = Table::new("stationarity", &["kind", "cell", "occupancy", "se", "expected", "z"]);
    let mut sec = guarded(9, "stationarity", |s| {
        let d = &cfg.dynamics;
        let stream = root.child("c9");
        let grid = d.grid.build()?;
        let k = build_kernel_matrix(&grid, &d.kernel.build()?)?;
        let mut w = CoxWeights::from_kernel(&k, d.l)?;
        w.validate(&stream.child("validate"))?;
        let r = RatioIntensity::new(&w)?;
        let model = d.rate_model(RateModel::clamp_for(d.l, k.max_diagonal()))?;
        let hops = HopTable::new(&grid, &model.hop);
        let process = CoxProcess::new(k.clone(), d.l)?;
        let starts: Vec<Configuration> = process
            .sample_batch(&stream.child("initial"), d.replicas, false)
            .into_iter()
            .map(|p| p.configuration)
            .collect();
        let limits = SimulationLimits {
            horizon: d.horizon,
            max_events: d.max_events,
        };
        let delta = grid.cell_volume();
        for kind in [DynamicsKind::Glauber, DynamicsKind::Kawasaki] {
            let label = format!("{kind:?}").to_lowercase();
            let ks = stream.child(&label);
            let runs = starts
                .par_iter()
                .enumerate()
                .map_init(
                    || r.clone(),
                    |ri, (i, g)| simulate(kind, g, &grid, &model, &hops, ri, limits, &mut ks.index(i as u64).rng()),
                )
                .collect::<Result<Vec<_>>>()?;
            let occ = runs
                .iter()
                .map(|t| t.occupancy_time_average())
                .collect::<Result<Vec<_>>>()?;
            let mut zmax = 0.0f64;
            for cell in 0..grid.total_cells() {
                let xs: Vec<f64> = occ.iter().map(|o| o[cell]).collect();
                let e = Estimate::from_samples(&xs);
                let want = delta * d.l as f64 * k.get(cell, cell);
                let z = e.z_score(want);
                zmax = zmax.max(z);
                table.push(vec![
                    label.clone(),
                    cell.to_string(),
                    fmt(e.mean),
                    fmt(e.se),
                    fmt(want),
                    fmt(z),
                ]);
            }
            let truncated = runs.iter().filter(|t| t.truncated).count();
            let events: usize = runs.iter().map(|t| t.events.len()).sum();
            s.push(
                CheckRecord::at_most(format!("{label} occupancy = D l k(x,x)"), 9, zmax, STATIONARITY_Z).with_detail(
                    format!(
                        "max z over cells; {} replicas, {events} events, {truncated} hit the event cap",
                        runs.len()
                    ),
                ),
            );
            if kind == DynamicsKind::Kawasaki {
                let mut broken = 0usize;
                for t in &runs {
                    let end = t.final_configuration()?;
                    if end.total() != t.initial.total() || t.events.iter().any(|e| e.kind != EventKind::Hop) {
                        broken += 1;
                    }
                }
                s.push(CheckRecord::at_most(
                    "kawasaki conserves particle number",
                    9,
                    broken as f64,
                    0.0,
                ));
            }
        }
        let window: Vec<usize> = (0..grid.total_cells()).take(2).collect();
        let mass = estimate_form_mass(&starts, &grid, &model, &hops, &r, &window)?;
        s.push(
            CheckRecord::new(
                "form mass finite",
                9,
                mass.death.mean + mass.hop.mean,
                f64::NAN,
                f64::NAN,
                { (mass.death.mean + mass.hop.mean).is_finite() },
            )
            .with_detail(format!(
                "death {:e} (se {:e}), hop {:e} (se {:e}) on cells 0-1",
                mass.death.mean, mass.death.se, mass.hop.mean, mass.hop.se
            ))
            .informational(),
        );
        Ok(())
    });
    sec.tables.push(table);
    sec
}

/// Criterion 10: the scaled Kawasaki form converges to the gradient form.
pub fn scaling(root: &Stream, cfg: &ExperimentConfig) -> Section {
    let mut table = Table::new(
        "ladder",
        &[
            "function",
            "eps",
            "form",
            "form_se",
            "gap",
            "gap_se",
            "snap_error",
            "sqrt_r_gap",
            "sqrt_r_gap_se",
            "limit",
            "limit_se",
        ],
    );
    let mut sec = guarded(10, "scaling", |s| {
        let sc = &cfg.scaling;
        let stream = root.child("c10");
        let grid = sc.grid.build()?;
        let k = build_kernel_matrix(&grid, &sc.kernel.build()?)?;
        let mut w = CoxWeights::from_kernel(&k, sc.l)?;
        w.validate(&stream.child("validate"))?;
        let r = RatioIntensity::new(&w)?;
        let hop = sc.hop()?;
        let samples: Vec<Configuration> = CoxProcess::new(k, sc.l)?
            .sample_batch(&stream.child("samples"), sc.samples, false)
            .into_iter()
            .map(|p| p.configuration)
            .collect();
        for (i, f) in sc.functions.iter().enumerate() {
            let name = format!("f{i}-{}", format!("{:?}", f.outer).to_lowercase());
            let gf = f.on_grid(&grid)?;
            let rep = scaling_ladder(&gf, &sc.eps, &samples, &grid, &hop, sc.discretization, &r)?;
            for row in &rep.rows {
                table.push(vec![
                    name.clone(),
                    row.eps.to_string(),
                    fmt(row.form.value),
                    fmt(row.form.se),
                    fmt(row.gap),
                    fmt(row.gap_se),
                    fmt(row.snap_error),
                    fmt(row.sqrt_r_gap.mean),
                    fmt(row.sqrt_r_gap.se),
                    fmt(rep.limit.value),
                    fmt(rep.limit.se),
                ]);
            }
            let last = rep.rows.last().expect("non-empty ladder");
            let mut c = CheckRecord::new(
                format!("{name} gap non-increasing"),
                10,
                rep.last_step_change,
                0.0,
                LADDER_Z * rep.last_step_se,
                rep.monotone,
            )
            .with_se(rep.last_step_se);
            c.detail = "paired change of |gap| over the last two eps".into();
            s.push(c);
            let tol = (LADDER_RELATIVE * rep.limit.value.abs()).max(LADDER_Z * last.gap_se);
            let mut c = CheckRecord::new(
                format!("{name} final gap"),
                10,
                last.gap.abs(),
                0.0,
                tol,
                rep.final_within_tolerance,
            )
            .with_se(last.gap_se);
            c.detail = format!(
                "limit form {:e} (se {:e}), c = {}",
                rep.limit.value, rep.limit.se, rep.diffusion_constant
            );
            s.push(c);
            if i > 0 {
                continue;
            }
            s.push(
                CheckRecord::new("sqrt-r gap", 10, last.sqrt_r_gap.mean, 0.0, f64::NAN, true)
                    .with_se(last.sqrt_r_gap.se)
                    .with_detail("diagnostic at the smallest eps")
                    .informational(),
            );
        }
        Ok(())
    });
    let dc = guarded(10, "diffusion constant", |s| {
        let grid = GridSpec::new(1, 8.0, 2048, true)?;
        let a = HopKernel::new(HopShape::Box, 1.0, 1.0)?;
        let c = diffusion_constant(&a, &grid).c;
        let rel = (c - 1.0 / 3.0).abs() * 3.0;
        let mut rec = CheckRecord::new(
            "diffusion constant of 1_[-1,1]",
            10,
            c,
            1.0 / 3.0,
            DIFFUSION_TOLERANCE,
            rel <= DIFFUSION_TOLERANCE,
        );
        rec.detail = format!("relative error {rel:e}; d=1, M=2048, L=8");
        s.push(rec);
        Ok(())
    });
    sec.checks.extend(dc.checks);
    sec.tables.push(table);
    sec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn balance_suite_passes() {
        let s = balance();
        assert!(s.checks.iter().all(|c| c.pass), "{:#?}", s.checks);
        assert_eq!(s.checks.len(), 9);
    }

    #[test]
    fn permanent_identities_pass() {
        let s = permanent_identities(&Stream::new(3));
        assert!(s.checks.iter().all(|c| c.pass), "{:#?}", s.checks);
    }

    #[test]
    fn errors_become_failed_checks() {
        let s = guarded(4, "x", |_| Err(Error::InvalidArgument("boom".into())));
        assert_eq!(s.checks.len(), 1);
        assert!(!s.checks[0].pass);
        assert!(s.checks[0].error.as_deref().unwrap().contains("boom"));
    }

    #[test]
    fn gnz_windows_fit_small_grids() {
        for cells in [1, 2, 5, 16] {
            for f in gnz_functionals(cells) {
                assert!(!f.support().is_empty());
                assert!(f.support().iter().all(|&c| c < cells));
            }
        }
    }
}
