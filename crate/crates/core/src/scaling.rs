//! Diffusive scaling of the Kawasaki form at `s = 1/2`.
//!
//! `ℰ_ε(F,G) = ½ E Δ² Σ_x Σ_y a(y) √(r(x+εy) r(x)) ΔF ΔG / ε²` with
//! `ΔF = F(γ∪(x+εy)) − F(γ∪x)`, `y` on the unscaled lattice support of `a`
//! and `x+εy` snapped to the nearest cell. The limit form is
//! `ℰ_0(F,G) = c E Δ Σ_x r(x) ∇_x F(γ∪x)·∇_x G(γ∪x)` with
//! `c = ½ Δ Σ_z a(z) z₁²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::HopKernel;
use crate::error::{Error, Result};
use crate::papangelou::Intensity;
use crate::state_space::{Configuration, GridSpec, Point};
use crate::stats::{Estimate, NeumaierSum};

/// Smooth bump `φ(x) = exp(1 − 1/(1 − |x−c|²/w²))` on `|x−c| < w`, `φ(c) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpProfile {
    pub center: Vec<f64>,
    pub width: f64,
}

impl BumpProfile {
    pub fn new(center: Vec<f64>, width: f64) -> Result<Self> {
        if center.is_empty() || center.len() > 3 {
            return Err(Error::InvalidArgument("profile centre needs 1 to 3 coordinates".into()));
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "profile width must be positive, got {width}"
            )));
        }
        Ok(Self { center, width })
    }

    fn offset(&self, x: &Point, grid: Option<&GridSpec>) -> Point {
        let mut z = [0.0; 3];
        for (k, c) in self.center.iter().enumerate() {
            let v = x[k] - c;
            z[k] = match grid {
                Some(g) => g.wrap(v),
                None => v,
            };
        }
        z
    }

    fn value_and_gradient(&self, x: &Point, grid: Option<&GridSpec>) -> (f64, Point) {
        let z = self.offset(x, grid);
        let w2 = self.width * self.width;
        let rho2 = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]) / w2;
        if rho2 >= 1.0 {
            return (0.0, [0.0; 3]);
        }
        let q = 1.0 - rho2;
        let phi = (1.0 - 1.0 / q).exp();
        let dphi_drho2 = -phi / (q * q);
        let g = z.map(|zk| dphi_drho2 * 2.0 * zk / w2);
        (phi, g)
    }
}

/// Outer function `g` of a cylinder function, from a fixed catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterFunction {
    /// `Σ_k t_k`.
    Linear,
    /// `tanh(Σ_k t_k)`.
    Tanh,
    /// `Π_k tanh(t_k)`.
    Product,
}

impl OuterFunction {
    pub fn value(&self, t: &[f64]) -> f64 {
        match self {
            Self::Linear => t.iter().sum(),
            Self::Tanh => t.iter().sum::<f64>().tanh(),
            Self::Product => t.iter().map(|v| v.tanh()).product(),
        }
    }

    pub fn gradient(&self, t: &[f64]) -> Vec<f64> {
        match self {
            Self::Linear => vec![1.0; t.len()],
            Self::Tanh => {
                let th = t.iter().sum::<f64>().tanh();
                vec![1.0 - th * th; t.len()]
            }
            Self::Product => (0..t.len())
                .map(|k| {
                    t.iter()
                        .enumerate()
                        .map(|(j, v)| {
                            let th = v.tanh();
                            if j == k {
                                1.0 - th * th
                            } else {
                                th
                            }
                        })
                        .product()
                })
                .collect(),
        }
    }
}

/// `F(γ) = g(⟨φ_1,γ⟩, …, ⟨φ_N,γ⟩)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderFunction {
    pub profiles: Vec<BumpProfile>,
    pub outer: OuterFunction,
}

impl CylinderFunction {
    pub fn new(profiles: Vec<BumpProfile>, outer: OuterFunction) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::InvalidArgument(
                "cylinder function needs at least one profile".into(),
            ));
        }
        Ok(Self { profiles, outer })
    }

    /// Largest profile width (the locality radius around the centres).
    pub fn locality_radius(&self) -> f64 {
        self.profiles.iter().map(|p| p.width).fold(0.0, f64::max)
    }

    /// `F` at free particle positions.
    pub fn value_at(&self, points: &[Point]) -> f64 {
        let t: Vec<f64> = self
            .profiles
            .iter()
            .map(|p| points.iter().map(|x| p.value_and_gradient(x, None).0).sum())
            .collect();
        self.outer.value(&t)
    }

    /// Gradient of `F` in the position of particle `i`.
    pub fn gradient_at(&self, points: &[Point], i: usize) -> Point {
        let t: Vec<f64> = self
            .profiles
            .iter()
            .map(|p| points.iter().map(|x| p.value_and_gradient(x, None).0).sum())
            .collect();
        let dg = self.outer.gradient(&t);
        let mut out = [0.0; 3];
        for (p, d) in self.profiles.iter().zip(dg) {
            let (_, g) = p.value_and_gradient(&points[i], None);
            for k in 0..3 {
                out[k] += d * g[k];
            }
        }
        out
    }

    /// Profile values and gradients tabulated on the cell centres.
    pub fn on_grid(&self, grid: &GridSpec) -> Result<GridCylinder> {
        for p in &self.profiles {
            if p.center.len() != grid.dimension() {
                return Err(Error::InvalidArgument(format!(
                    "profile centre has {} coordinates on a {}-dimensional grid",
                    p.center.len(),
                    grid.dimension()
                )));
            }
        }
        let wrap = grid.is_torus().then_some(grid);
        let (phi, grad) = self
            .profiles
            .iter()
            .map(|p| {
                (0..grid.total_cells())
                    .map(|c| p.value_and_gradient(&grid.center(c), wrap))
                    .unzip()
            })
            .unzip();
        Ok(GridCylinder {
            outer: self.outer,
            phi,
            grad,
        })
    }
}

/// Functions evaluated as `F(γ ∪ x)` for every cell `x`.
pub trait GridFunction: Sync {
    fn cells(&self) -> usize;
    /// `F(γ ∪ x)` for every cell `x`.
    fn with_point(&self, gamma: &Configuration) -> Vec<f64>;
    /// `∇_x F(γ ∪ x)` for every cell `x`.
    fn gradient_with_point(&self, gamma: &Configuration) -> Vec<Point>;
}

/// A [`CylinderFunction`] with tabulated profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCylinder {
    outer: OuterFunction,
    phi: Vec<Vec<f64>>,
    grad: Vec<Vec<Point>>,
}

impl GridCylinder {
    fn statistics(&self, gamma: &Configuration) -> Vec<f64> {
        self.phi.iter().map(|p| gamma.pair_with(p)).collect()
    }

    pub fn value(&self, gamma: &Configuration) -> f64 {
        self.outer.value(&self.statistics(gamma))
    }
}

impl GridFunction for GridCylinder {
    fn cells(&self) -> usize {
        self.phi[0].len()
    }

    fn with_point(&self, gamma: &Configuration) -> Vec<f64> {
        let base = self.statistics(gamma);
        let mut t = base.clone();
        (0..self.cells())
            .map(|x| {
                for (k, p) in self.phi.iter().enumerate() {
                    t[k] = base[k] + p[x];
                }
                self.outer.value(&t)
            })
            .collect()
    }

    fn gradient_with_point(&self, gamma: &Configuration) -> Vec<Point> {
        let base = self.statistics(gamma);
        let mut t = base.clone();
        (0..self.cells())
            .map(|x| {
                for (k, p) in self.phi.iter().enumerate() {
                    t[k] = base[k] + p[x];
                }
                let dg = self.outer.gradient(&t);
                let mut out = [0.0; 3];
                for (k, d) in dg.iter().enumerate() {
                    for (o, g) in out.iter_mut().zip(self.grad[k][x]) {
                        *o += d * g;
                    }
                }
                out
            })
            .collect()
    }
}

/// `F + sign·G`.
pub struct Combination<'a> {
    pub f: &'a dyn GridFunction,
    pub g: &'a dyn GridFunction,
    pub sign: f64,
}

impl GridFunction for Combination<'_> {
    fn cells(&self) -> usize {
        self.f.cells()
    }

    fn with_point(&self, gamma: &Configuration) -> Vec<f64> {
        let a = self.f.with_point(gamma);
        let b = self.g.with_point(gamma);
        a.iter().zip(&b).map(|(x, y)| x + self.sign * y).collect()
    }

    fn gradient_with_point(&self, gamma: &Configuration) -> Vec<Point> {
        let a = self.f.gradient_with_point(gamma);
        let b = self.g.gradient_with_point(gamma);
        a.iter()
            .zip(&b)
            .map(|(x, y)| [0, 1, 2].map(|k| x[k] + self.sign * y[k]))
            .collect()
    }
}

/// How displacements `εy` are placed on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// `y` on the unscaled lattice, `x + εy` rounded to the nearest cell.
    Snap,
    /// `a_ε` sampled at exact grid displacements; no rounding.
    #[default]
    Lattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormEstimate {
    pub value: f64,
    pub se: f64,
    /// Scale parameter; 0 for the limit form.
    pub eps: f64,
    pub samples: usize,
}

impl FormEstimate {
    fn from_values(xs: &[f64], eps: f64) -> Self {
        let e = Estimate::from_samples(xs);
        Self {
            value: e.mean,
            se: e.se,
            eps,
            samples: xs.len(),
        }
    }
}

/// `a_ε`, checking that its support still spans at least one cell.
pub fn scale_hop_kernel(a: &HopKernel, eps: f64, grid: &GridSpec) -> Result<HopKernel> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    let support = eps * a.radius;
    if support < grid.spacing() * (1.0 - 1e-12) {
        return Err(Error::UnresolvableScale {
            eps,
            support,
            spacing: grid.spacing(),
        });
    }
    Ok(a.scaled(eps, grid.dimension()))
}

/// Lattice offsets `y` (in cells) with `a(y h) > 0`, together with `a`.
fn lattice_support(a: &HopKernel, grid: &GridSpec) -> Vec<([i64; 3], Point, f64)> {
    let h = grid.spacing();
    let d = grid.dimension();
    let k = (a.radius / h).floor() as i64 + 1;
    let range = |axis: usize| if axis < d { -k..=k } else { 0..=0 };
    let mut out = Vec::new();
    for i in range(0) {
        for j in range(1) {
            for l in range(2) {
                let off = [i, j, l];
                let z = off.map(|o| o as f64 * h);
                let v = a.eval(&z);
                if v > 0.0 {
                    out.push((off, z, v));
                }
            }
        }
    }
    out
}

/// Lattice second moments of a hop kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConstant {
    /// `½ Δ Σ_z a(z) z₁²`.
    pub c: f64,
    /// `max_{i≠j} |Δ Σ a(z) z_i z_j|`.
    pub off_diagonal: f64,
    /// Largest relative difference between diagonal moments.
    pub diagonal_spread: f64,
    pub isotropic: bool,
}

pub fn diffusion_constant(a: &HopKernel, grid: &GridSpec) -> DiffusionConstant {
    let delta = grid.cell_volume();
    let d = grid.dimension();
    let mut m = [[NeumaierSum::default(); 3]; 3];
    for (_, z, v) in lattice_support(a, grid) {
        for i in 0..d {
            for j in 0..d {
                m[i][j].add(delta * v * z[i] * z[j]);
            }
        }
    }
    let diag: Vec<f64> = (0..d).map(|i| m[i][i].value()).collect();
    let mut off = 0.0f64;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                off = off.max(v.value().abs());
            }
        }
    }
    let spread = diag
        .iter()
        .map(|v| (v - diag[0]).abs() / diag[0].abs().max(1e-300))
        .fold(0.0, f64::max);
    DiffusionConstant {
        c: 0.5 * diag[0],
        off_diagonal: off,
        diagonal_spread: spread,
        isotropic: off <= 1e-12 && spread <= 1e-12,
    }
}

/// Per-sample terms of one ε row.
struct EpsTerms {
    form: f64,
    sqrt_r_gap: f64,
}

struct SnapTable {
    /// (offset in cells after snapping, a(y), snap distance)
    hops: Vec<([i64; 3], f64, f64)>,
    mean_snap: f64,
    a_mass: f64,
}

fn snap_table(a: &HopKernel, grid: &GridSpec, eps: f64, disc: Discretization) -> SnapTable {
    let h = grid.spacing();
    let mut hops = Vec::new();
    let mut snap = NeumaierSum::default();
    let mut mass = NeumaierSum::default();
    match disc {
        Discretization::Snap => {
            for (off, _, v) in lattice_support(a, grid) {
                let scaled = off.map(|o| eps * o as f64);
                let snapped = scaled.map(|s| s.round() as i64);
                let dist = (0..3)
                    .map(|k| (scaled[k] - snapped[k] as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    * h;
                snap.add(v * dist);
                mass.add(v);
                hops.push((snapped, v, dist));
            }
        }
        Discretization::Lattice => {
            // Δ Σ_z a_ε(z) (…) = (Δ/ε²) Σ_z ε^{-d} a(z/ε) (…)
            let scaled = a.scaled(eps, grid.dimension());
            for (off, _, v) in lattice_support(&scaled, grid) {
                let w = v * eps * eps;
                mass.add(w);
                hops.push((off, w, 0.0));
            }
        }
    }
    let mass = mass.value();
    SnapTable {
        hops,
        mean_snap: snap.value() / mass / (eps * a.radius),
        a_mass: mass,
    }
}

fn eps_terms(f: &[f64], g: &[f64], r: &[f64], table: &SnapTable, grid: &GridSpec, eps: f64) -> EpsTerms {
    let delta = grid.cell_volume();
    let mut form = NeumaierSum::default();
    let mut gap = NeumaierSum::default();
    for x in 0..f.len() {
        for &(off, a, _) in &table.hops {
            let Some(y) = grid.offset_cell(x, off) else {
                continue;
            };
            let (sx, sy) = (r[x].max(0.0).sqrt(), r[y].max(0.0).sqrt());
            gap.add(delta * a * (sy - sx) * (sy - sx));
            if y == x {
                continue;
            }
            let df = f[y] - f[x];
            let dg = g[y] - g[x];
            if df == 0.0 || dg == 0.0 {
                continue;
            }
            form.add(a * sx * sy * df * dg);
        }
    }
    EpsTerms {
        form: 0.5 * delta * delta * form.value() / (eps * eps),
        sqrt_r_gap: delta * gap.value() / table.a_mass,
    }
}

fn limit_term(gf: &[Point], gg: &[Point], r: &[f64], c: f64, delta: f64) -> f64 {
    let mut s = NeumaierSum::default();
    for x in 0..r.len() {
        let dot = gf[x][0] * gg[x][0] + gf[x][1] * gg[x][1] + gf[x][2] * gg[x][2];
        if dot != 0.0 {
            s.add(r[x] * dot);
        }
    }
    c * delta * s.value()
}

fn intensities<I: Intensity>(samples: &[Configuration], intensity: &I) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map_init(|| intensity.clone(), |r, g| r.all(g))
        .collect()
}

/// Monte-Carlo estimate of `ℰ_ε(F, G)`; also returns the mean snap distance
/// relative to `εR`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_form_eps<I: Intensity>(
    f: &dyn GridFunction,
    g: &dyn GridFunction,
    eps: f64,
    samples: &[Configuration],
    grid: &GridSpec,
    hop: &HopKernel,
    disc: Discretization,
    intensity: &I,
) -> Result<(FormEstimate, f64)> {
    scale_hop_kernel(hop, eps, grid)?;
    let table = snap_table(hop, grid, eps, disc);
    let rs = intensities(samples, intensity)?;
    let xs: Vec<f64> = samples
        .par_iter()
        .zip(&rs)
        .map(|(gamma, r)| eps_terms(&f.with_point(gamma), &g.with_point(gamma), r, &table, grid, eps).form)
        .collect();
    Ok((FormEstimate::from_values(&xs, eps), table.mean_snap))
}

/// Monte-Carlo estimate of `ℰ_0(F, G)` with analytic gradients.
pub fn estimate_form_limit<I: Intensity>(
    f: &dyn GridFunction,
    g: &dyn GridFunction,
    samples: &[Configuration],
    grid: &GridSpec,
    c: f64,
    intensity: &I,
) -> Result<FormEstimate> {
    let rs = intensities(samples, intensity)?;
    let delta = grid.cell_volume();
    let xs: Vec<f64> = samples
        .par_iter()
        .zip(&rs)
        .map(|(gamma, r)| {
            limit_term(
                &f.gradient_with_point(gamma),
                &g.gradient_with_point(gamma),
                r,
                c,
                delta,
            )
        })
        .collect();
    Ok(FormEstimate::from_values(&xs, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub eps: f64,
    pub form: FormEstimate,
    /// `ℰ_ε − ℰ_0` with the paired standard error.
    pub gap: f64,
    pub gap_se: f64,
    /// Mean snap distance over `εR`.
    pub snap_error: f64,
    /// Normalised `E Δ Σ_x avg_y (√r(x+εy) − √r(x))²`.
    pub sqrt_r_gap: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub rows: Vec<LadderRow>,
    pub limit: FormEstimate,
    pub diffusion_constant: f64,
    /// `|gap|` at the last ε minus `|gap|` at the one before, with paired SE.
    pub last_step_change: f64,
    pub last_step_se: f64,
    pub monotone: bool,
    pub final_within_tolerance: bool,
    pub pass: bool,
}

/// Relative tolerance on the final gap.
pub const LADDER_RELATIVE: f64 = 0.10;
/// SE multiple on the final gap and on monotonicity.
pub const LADDER_Z: f64 = 3.0;

/// `ℰ_ε(F,F)` along a descending ε list against `ℰ_0(F,F)`, reusing the same
/// samples and intensities for every ε.
pub fn scaling_ladder<I: Intensity>(
    f: &dyn GridFunction,
    eps_list: &[f64],
    samples: &[Configuration],
    grid: &GridSpec,
    hop: &HopKernel,
    disc: Discretization,
    intensity: &I,
) -> Result<LadderReport> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("empty eps list".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("eps list must be strictly descending".into()));
    }
    for &e in eps_list {
        scale_hop_kernel(hop, e, grid)?;
    }
    let tables: Vec<SnapTable> = eps_list.iter().map(|&e| snap_table(hop, grid, e, disc)).collect();
    let c = diffusion_constant(hop, grid).c;
    let delta = grid.cell_volume();
    let rs = intensities(samples, intensity)?;
    // per sample: limit term, then (form, sqrt gap) per ε
    let per: Vec<(f64, Vec<EpsTerms>)> = samples
        .par_iter()
        .zip(&rs)
        .map(|(gamma, r)| {
            let fv = f.with_point(gamma);
            let gv = f.gradient_with_point(gamma);
            let lim = limit_term(&gv, &gv, r, c, delta);
            let rows = eps_list
                .iter()
                .zip(&tables)
                .map(|(&e, t)| eps_terms(&fv, &fv, r, t, grid, e))
                .collect();
            (lim, rows)
        })
        .collect();
    let lim: Vec<f64> = per.iter().map(|p| p.0).collect();
    let limit = FormEstimate::from_values(&lim, 0.0);
    let mut diffs: Vec<Vec<f64>> = Vec::new();
    let mut rows = Vec::new();
    for (k, &eps) in eps_list.iter().enumerate() {
        let xs: Vec<f64> = per.iter().map(|p| p.1[k].form).collect();
        let d: Vec<f64> = xs.iter().zip(&lim).map(|(a, b)| a - b).collect();
        let de = Estimate::from_samples(&d);
        let gaps: Vec<f64> = per.iter().map(|p| p.1[k].sqrt_r_gap).collect();
        rows.push(LadderRow {
            eps,
            form: FormEstimate::from_values(&xs, eps),
            gap: de.mean,
            gap_se: de.se,
            snap_error: tables[k].mean_snap,
            sqrt_r_gap: Estimate::from_samples(&gaps),
        });
        diffs.push(d);
    }
    let last = rows.last().expect("non-empty");
    let (change, change_se, monotone) = if rows.len() >= 2 {
        let n = rows.len();
        let (a, b) = (&diffs[n - 2], &diffs[n - 1]);
        // paired difference of |gap| using the signs of the two mean gaps
        let sa = rows[n - 2].gap.signum();
        let sb = rows[n - 1].gap.signum();
        let x: Vec<f64> = a.iter().zip(b).map(|(u, v)| sb * v - sa * u).collect();
        let e = Estimate::from_samples(&x);
        (e.mean, e.se, e.mean <= LADDER_Z * e.se)
    } else {
        (0.0, 0.0, true)
    };
    let tol = (LADDER_RELATIVE * limit.value.abs()).max(LADDER_Z * last.gap_se);
    let final_ok = last.gap.abs() <= tol;
    Ok(LadderReport {
        rows,
        limit,
        diffusion_constant: c,
        last_step_change: change,
        last_step_se: change_se,
        monotone,
        final_within_tolerance: final_ok,
        pass: monotone && final_ok,
    })
}
