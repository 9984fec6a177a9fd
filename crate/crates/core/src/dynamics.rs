//! Glauber (birth/death) and Kawasaki (hopping) dynamics built from a
//! Papangelou intensity `r`:
//!
//! * death `d = r^{s-1}`, birth `b = r^s`, so `b = d r`;
//! * hop `c(x, y) = a(x - y) r(x)^{s-1} r(y)^s`, so `r(x) c(x, y) = r(y) c(y, x)`.
//!
//! Intensities at or below the clamp `ε_r` count as zero and switch every rate
//! that involves them off.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::papangelou::Intensity;
use crate::state_space::{norm, Configuration, GridSpec, Point};
use crate::stats::{Estimate, NeumaierSum};

/// Largest admissible single event rate.
pub const RATE_LIMIT: f64 = 1e12;
/// Relative clamp: `ε_r = 1e-12 · l · max_x k(x, x)`.
pub const CLAMP_FACTOR: f64 = 1e-12;
/// Largest truncated state space accepted by [`build_generator`].
pub const MAX_STATES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HopShape {
    /// `1{|z| ≤ R}`.
    Box,
    /// `(1 - |z|²/R²)²` on `|z| ≤ R`.
    Biweight,
}

/// Radial hop kernel `a(z) = amplitude · shape(|z| / R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopKernel {
    pub shape: HopShape,
    pub radius: f64,
    pub amplitude: f64,
}

impl HopKernel {
    pub fn new(shape: HopShape, radius: f64, amplitude: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "hop radius must be positive, got {radius}"
            )));
        }
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidKernel(format!(
                "hop amplitude must be non-negative, got {amplitude}"
            )));
        }
        Ok(Self {
            shape,
            radius,
            amplitude,
        })
    }

    pub fn eval(&self, z: &Point) -> f64 {
        self.eval_radius(norm(z))
    }

    pub fn eval_radius(&self, r: f64) -> f64 {
        // tolerate rounding in grid displacements that sit exactly on the edge
        let u = r / self.radius;
        if u > 1.0 + 1e-12 {
            return 0.0;
        }
        match self.shape {
            HopShape::Box => self.amplitude,
            HopShape::Biweight => {
                let v = (1.0 - u * u).max(0.0);
                self.amplitude * v * v
            }
        }
    }

    /// `a_ε(z) = ε^{-d-2} a(z / ε)`.
    pub fn scaled(&self, eps: f64, dimension: usize) -> Self {
        Self {
            shape: self.shape,
            radius: self.radius * eps,
            amplitude: self.amplitude * eps.powi(-(dimension as i32) - 2),
        }
    }
}

/// Parameters shared by both dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub s: f64,
    pub hop: HopKernel,
    pub clamp: f64,
}

impl RateModel {
    pub fn new(s: f64, hop: HopKernel, clamp: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!("s must lie in [0, 1], got {s}")));
        }
        if !(clamp >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clamp must be non-negative, got {clamp}"
            )));
        }
        Ok(Self { s, hop, clamp })
    }

    /// Clamp `1e-12 · l · max_x k(x, x)`.
    pub fn clamp_for(l: usize, max_diagonal: f64) -> f64 {
        CLAMP_FACTOR * l as f64 * max_diagonal
    }
}

pub fn death_rate(r: f64, model: &RateModel) -> f64 {
    if r <= model.clamp {
        0.0
    } else if model.s == 1.0 {
        1.0
    } else {
        r.powf(model.s - 1.0)
    }
}

pub fn birth_rate(r: f64, model: &RateModel) -> f64 {
    death_rate(r, model) * r
}

/// `c = a · d(r_from) · b(r_to)`.
pub fn hop_rate(a: f64, r_from: f64, r_to: f64, model: &RateModel) -> f64 {
    a * death_rate(r_from, model) * birth_rate(r_to, model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub s: f64,
    /// `max |b - d r| / max(|b|, tiny)`.
    pub birth_death_residual: f64,
    /// `max |r_i c_ij - r_j c_ji| / max(r_i c_ij, r_j c_ji, tiny)`.
    pub hop_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Tolerance of [`check_balance`].
pub const BALANCE_TOLERANCE: f64 = 1e-12;

/// Balance identities over all (ordered pairs of) `rs`, with hop weights
/// `a(i, j)` supplied by the caller so that asymmetric kernels can be injected.
pub fn check_balance_with(model: &RateModel, rs: &[f64], a: impl Fn(usize, usize) -> f64) -> BalanceReport {
    let rel = |x: f64, y: f64| {
        let scale = x.abs().max(y.abs()).max(1e-300);
        (x - y).abs() / scale
    };
    let mut bd = 0.0f64;
    for &r in rs {
        bd = bd.max(rel(birth_rate(r, model), death_rate(r, model) * r));
    }
    let mut hop = 0.0f64;
    for (i, &ri) in rs.iter().enumerate() {
        for (j, &rj) in rs.iter().enumerate() {
            let fwd = ri * hop_rate(a(i, j), ri, rj, model);
            let bwd = rj * hop_rate(a(j, i), rj, ri, model);
            hop = hop.max(rel(fwd, bwd));
        }
    }
    BalanceReport {
        s: model.s,
        birth_death_residual: bd,
        hop_residual: hop,
        tolerance: BALANCE_TOLERANCE,
        pass: bd <= BALANCE_TOLERANCE && hop <= BALANCE_TOLERANCE,
    }
}

/// [`check_balance_with`] using the model's hop kernel at distance `|i - j|·R/n`.
pub fn check_balance(model: &RateModel, rs: &[f64]) -> BalanceReport {
    let n = rs.len().max(1) as f64;
    let step = model.hop.radius / n;
    check_balance_with(model, rs, |i, j| {
        model.hop.eval_radius((i as f64 - j as f64).abs() * step)
    })
}

/// Hop targets `y ≠ x` with `a(y - x) > 0`, per source cell.
#[derive(Debug, Clone, PartialEq)]
pub struct HopTable {
    targets: Vec<Vec<(usize, f64)>>,
    mass: f64,
}

impl HopTable {
    pub fn new(grid: &GridSpec, hop: &HopKernel) -> Self {
        let n = grid.total_cells();
        let delta = grid.cell_volume();
        let mut mass = 0.0f64;
        let targets: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|x| {
                let row: Vec<(usize, f64)> = (0..n)
                    .filter(|&y| y != x)
                    .filter_map(|y| {
                        let a = hop.eval(&grid.displacement(x, y));
                        (a > 0.0).then_some((y, a))
                    })
                    .collect();
                mass = mass.max(delta * row.iter().map(|(_, a)| a).sum::<f64>());
                row
            })
            .collect();
        Self { targets, mass }
    }

    pub fn targets(&self, x: usize) -> &[(usize, f64)] {
        &self.targets[x]
    }

    /// `sup_x Δ Σ_{y≠x} a(x - y)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn cells(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Glauber,
    Kawasaki,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Birth,
    Death,
    Hop,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Birth => "birth",
            Self::Death => "death",
            Self::Hop => "hop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub from: Option<usize>,
    pub to: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: Configuration,
    pub events: Vec<Event>,
    /// End of the observation window.
    pub final_time: f64,
    /// True when the event cap stopped the run before the horizon.
    pub truncated: bool,
}

impl Trajectory {
    pub fn final_configuration(&self) -> Result<Configuration> {
        let mut g = self.initial.clone();
        for e in &self.events {
            apply(&mut g, e)?;
        }
        Ok(g)
    }

    /// `(1/T) ∫_0^T n_x(t) dt` per cell.
    pub fn occupancy_time_average(&self) -> Result<Vec<f64>> {
        let mut g = self.initial.clone();
        let mut acc: Vec<NeumaierSum> = vec![NeumaierSum::default(); g.cells()];
        let mut t = 0.0;
        for e in &self.events {
            for (a, &n) in acc.iter_mut().zip(g.counts()) {
                if n > 0 {
                    a.add(f64::from(n) * (e.time - t));
                }
            }
            t = e.time;
            apply(&mut g, e)?;
        }
        for (a, &n) in acc.iter_mut().zip(g.counts()) {
            if n > 0 {
                a.add(f64::from(n) * (self.final_time - t));
            }
        }
        Ok(acc.iter().map(|a| a.value() / self.final_time).collect())
    }

    /// CSV with columns `time,kind,cell_from,cell_to`; missing cells are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,kind,cell_from,cell_to\n");
        let cell = |c: Option<usize>| c.map(|c| c.to_string()).unwrap_or_default();
        for e in &self.events {
            out.push_str(&format!(
                "{:e},{},{},{}\n",
                e.time,
                e.kind.as_str(),
                cell(e.from),
                cell(e.to)
            ));
        }
        out
    }
}

fn apply(g: &mut Configuration, e: &Event) -> Result<()> {
    match e.kind {
        EventKind::Birth => g.insert(e.to.expect("birth has a target")),
        EventKind::Death => g.take(e.from.expect("death has a source")),
        EventKind::Hop => g.shift(e.from.expect("hop has a source"), e.to.expect("hop has a target")),
    }
}

/// Horizon and event cap of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationLimits {
    pub horizon: f64,
    pub max_events: usize,
}

fn check_rate(rate: f64) -> Result<f64> {
    if rate > RATE_LIMIT || !rate.is_finite() {
        Err(Error::RateOverflow {
            rate,
            limit: RATE_LIMIT,
        })
    } else {
        Ok(rate)
    }
}

/// All transitions out of `gamma`: (rate, event with time 0).
pub fn transitions<I: Intensity>(
    kind: DynamicsKind,
    gamma: &Configuration,
    model: &RateModel,
    table: &HopTable,
    delta: f64,
    intensity: &mut I,
) -> Result<Vec<(f64, Event)>> {
    let mut out = Vec::new();
    let ev = |kind, from, to| Event {
        time: 0.0,
        kind,
        from,
        to,
    };
    match kind {
        DynamicsKind::Glauber => {
            for x in 0..gamma.cells() {
                let n = gamma.count(x);
                if n > 0 {
                    let rest = gamma.remove_point(x)?;
                    let rate = check_rate(f64::from(n) * death_rate(intensity.value(x, &rest)?, model))?;
                    if rate > 0.0 {
                        out.push((rate, ev(EventKind::Death, Some(x), None)));
                    }
                }
            }
            let rs = intensity.all(gamma)?;
            for (x, r) in rs.into_iter().enumerate() {
                let rate = check_rate(delta * birth_rate(r, model))?;
                if rate > 0.0 {
                    out.push((rate, ev(EventKind::Birth, None, Some(x))));
                }
            }
        }
        DynamicsKind::Kawasaki => {
            for x in 0..gamma.cells() {
                let n = gamma.count(x);
                if n == 0 || table.targets(x).is_empty() {
                    continue;
                }
                let rest = gamma.remove_point(x)?;
                let rx = intensity.value(x, &rest)?;
                if rx <= model.clamp {
                    continue;
                }
                for &(y, a) in table.targets(x) {
                    let ry = intensity.value(y, &rest)?;
                    let rate = check_rate(f64::from(n) * hop_rate(a, rx, ry, model) * delta)?;
                    if rate > 0.0 {
                        out.push((rate, ev(EventKind::Hop, Some(x), Some(y))));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact event-driven (Gillespie) simulation; all rates recomputed per event.
#[allow(clippy::too_many_arguments)]
pub fn simulate<I: Intensity, R: Rng + ?Sized>(
    kind: DynamicsKind,
    initial: &Configuration,
    grid: &GridSpec,
    model: &RateModel,
    table: &HopTable,
    intensity: &mut I,
    limits: SimulationLimits,
    rng: &mut R,
) -> Result<Trajectory> {
    if initial.cells() != grid.total_cells() {
        return Err(Error::InvalidArgument(
            "initial configuration does not match the grid".into(),
        ));
    }
    if !(limits.horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let delta = grid.cell_volume();
    let mut gamma = initial.clone();
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut truncated = false;
    loop {
        if events.len() >= limits.max_events {
            truncated = true;
            break;
        }
        let moves = transitions(kind, &gamma, model, table, delta, intensity)?;
        let mut total = NeumaierSum::default();
        moves.iter().for_each(|(r, _)| total.add(*r));
        let total = total.value();
        if total <= 0.0 {
            break;
        }
        let wait = Exp::new(total)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sample(rng);
        if t + wait > limits.horizon {
            break;
        }
        t += wait;
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = moves.len() - 1;
        for (i, (r, _)) in moves.iter().enumerate() {
            acc += r;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let mut e = moves[chosen].1;
        e.time = t;
        apply(&mut gamma, &e)?;
        events.push(e);
    }
    Ok(Trajectory {
        initial: initial.clone(),
        events,
        final_time: if truncated { t } else { limits.horizon },
        truncated,
    })
}

pub fn simulate_glauber<I: Intensity, R: Rng + ?Sized>(
    initial: &Configuration,
    grid: &GridSpec,
    model: &RateModel,
    intensity: &mut I,
    limits: SimulationLimits,
    rng: &mut R,
) -> Result<Trajectory> {
    let table = HopTable {
        targets: vec![Vec::new(); grid.total_cells()],
        mass: 0.0,
    };
    simulate(
        DynamicsKind::Glauber,
        initial,
        grid,
        model,
        &table,
        intensity,
        limits,
        rng,
    )
}

pub fn simulate_kawasaki<I: Intensity, R: Rng + ?Sized>(
    initial: &Configuration,
    grid: &GridSpec,
    model: &RateModel,
    table: &HopTable,
    intensity: &mut I,
    limits: SimulationLimits,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate(
        DynamicsKind::Kawasaki,
        initial,
        grid,
        model,
        table,
        intensity,
        limits,
        rng,
    )
}

/// All configurations on `cells` cells with at most `n_max` points.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSpace {
    pub cells: usize,
    pub n_max: u32,
    pub states: Vec<Configuration>,
    index: HashMap<Configuration, usize>,
}

impl TruncatedSpace {
    pub fn new(cells: usize, n_max: u32) -> Result<Self> {
        // C(cells + n_max, n_max) states
        let mut count = 1.0f64;
        for k in 1..=n_max as usize {
            count *= (cells + k) as f64 / k as f64;
        }
        if count.round() > MAX_STATES as f64 {
            return Err(Error::StateSpaceTooLarge {
                states: count.round() as usize,
                limit: MAX_STATES,
            });
        }
        let states: Vec<Configuration> = crate::sampler::configurations_up_to(cells, n_max)
            .into_iter()
            .map(Configuration::from_counts)
            .collect();
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            cells,
            n_max,
            states,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn position(&self, gamma: &Configuration) -> Option<usize> {
        self.index.get(gamma).copied()
    }
}

/// Sparse generator: off-diagonal rates per row plus the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub kind: DynamicsKind,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub diagonal: Vec<f64>,
    /// Number of birth transitions dropped at the top layer.
    pub truncated_births: usize,
}

impl Generator {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diagonal[i];
        }
        self.rows[i].iter().filter(|(k, _)| *k == j).map(|(_, q)| q).sum()
    }

    /// Largest `|Σ_j q_ij|`.
    pub fn max_row_sum(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.diagonal)
            .map(|(row, d)| {
                let mut s = NeumaierSum::default();
                s.add(*d);
                row.iter().for_each(|(_, q)| s.add(*q));
                s.value().abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.diagonal.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            m[(i, i)] = self.diagonal[i];
            for &(j, q) in row {
                m[(i, j)] += q;
            }
        }
        m
    }
}

/// Exact generator on a truncated space; births out of the top layer are
/// deleted.
pub fn build_generator<I: Intensity>(
    space: &TruncatedSpace,
    grid: &GridSpec,
    model: &RateModel,
    table: &HopTable,
    intensity: &mut I,
    kind: DynamicsKind,
) -> Result<Generator> {
    if grid.total_cells() != space.cells {
        return Err(Error::InvalidArgument(
            "space and grid disagree on the number of cells".into(),
        ));
    }
    let delta = grid.cell_volume();
    let mut rows = Vec::with_capacity(space.len());
    let mut diagonal = Vec::with_capacity(space.len());
    let mut dropped = 0;
    for gamma in &space.states {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (rate, e) in transitions(kind, gamma, model, table, delta, intensity)? {
            let mut next = gamma.clone();
            apply(&mut next, &e)?;
            match space.position(&next) {
                Some(j) => match row.iter_mut().find(|(k, _)| *k == j) {
                    Some((_, q)) => *q += rate,
                    None => row.push((j, rate)),
                },
                None => dropped += 1,
            }
        }
        let mut s = NeumaierSum::default();
        row.iter().for_each(|(_, q)| s.add(*q));
        diagonal.push(-s.value());
        rows.push(row);
    }
    Ok(Generator {
        kind,
        rows,
        diagonal,
        truncated_births: dropped,
    })
}

/// Largest relative detailed-balance residual
/// `|μ_i q_ij − μ_j q_ji| / max(μ_i q_ij, μ_j q_ji, 1e-300)`.
pub fn reversibility_check(q: &Generator, weights: &[f64]) -> Result<f64> {
    if weights.len() != q.diagonal.len() {
        return Err(Error::InvalidArgument("one weight per state required".into()));
    }
    if let Some(i) = weights.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument(format!("weight of state {i} is not positive")));
    }
    let mut worst = 0.0f64;
    for (i, row) in q.rows.iter().enumerate() {
        for &(j, qij) in row {
            let a = weights[i] * qij;
            let b = weights[j] * q.get(j, i);
            worst = worst.max((a - b).abs() / a.max(b).max(1e-300));
        }
    }
    Ok(worst)
}

/// Intensity that multiplies `r(cell, state)` by `factor` at one point.
#[derive(Debug, Clone)]
pub struct PerturbedIntensity<I> {
    pub inner: I,
    pub state: Configuration,
    pub cell: usize,
    pub factor: f64,
}

impl<I: Intensity> Intensity for PerturbedIntensity<I> {
    fn value(&mut self, cell: usize, gamma: &Configuration) -> Result<f64> {
        let r = self.inner.value(cell, gamma)?;
        Ok(if cell == self.cell && *gamma == self.state {
            r * self.factor
        } else {
            r
        })
    }
}

/// Monte-Carlo estimates of the two integrability conditions on a window Λ:
/// `E Σ_{x∈γ∩Λ} d(x, γ∖x)` and
/// `E Σ_{x∈γ} Δ Σ_y c(x, y, γ∖x)(1_Λ(x) + 1_Λ(y))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormMass {
    pub death: Estimate,
    pub hop: Estimate,
}

pub fn estimate_form_mass<I: Intensity>(
    samples: &[Configuration],
    grid: &GridSpec,
    model: &RateModel,
    table: &HopTable,
    intensity: &I,
    window: &[usize],
) -> Result<FormMass> {
    use rayon::prelude::*;
    let delta = grid.cell_volume();
    let inside = |c: usize| window.contains(&c);
    let pairs: Vec<(f64, f64)> = samples
        .par_iter()
        .map_init(
            || intensity.clone(),
            |r, gamma| -> Result<(f64, f64)> {
                let mut death = NeumaierSum::default();
                let mut hop = NeumaierSum::default();
                for x in 0..gamma.cells() {
                    let n = gamma.count(x);
                    if n == 0 {
                        continue;
                    }
                    let rest = gamma.remove_point(x)?;
                    let rx = r.value(x, &rest)?;
                    if inside(x) {
                        death.add(f64::from(n) * death_rate(rx, model));
                    }
                    for &(y, a) in table.targets(x) {
                        let w = f64::from(u8::from(inside(x)) + u8::from(inside(y)));
                        if w > 0.0 {
                            let ry = r.value(y, &rest)?;
                            hop.add(f64::from(n) * delta * hop_rate(a, rx, ry, model) * w);
                        }
                    }
                }
                Ok((death.value(), hop.value()))
            },
        )
        .collect::<Result<_>>()?;
    let (d, h): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(FormMass {
        death: Estimate::from_samples(&d),
        hop: Estimate::from_samples(&h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::papangelou::{PoissonIntensity, RatioIntensity};
    use crate::rng::Stream;
    use crate::sampler::{CoxWeights, WeightMethod};
    use crate::state_space::build_grid;
    use nalgebra::DMatrix;

    fn model(s: f64) -> RateModel {
        RateModel::new(s, HopKernel::new(HopShape::Box, 1.0, 1.0).unwrap(), 1e-12).unwrap()
    }

    #[test]
    fn rate_examples() {
        let m = model(1.0);
        assert_eq!(death_rate(3.0, &m), 1.0);
        assert_eq!(birth_rate(3.0, &m), 3.0);
        let m = model(0.5);
        assert_eq!(death_rate(4.0, &m), 0.5);
        assert_eq!(birth_rate(4.0, &m), 2.0);
        assert_eq!(death_rate(0.0, &m), 0.0);
        assert_eq!(birth_rate(0.0, &m), 0.0);
        assert_eq!(hop_rate(1.0, 0.0, 2.0, &m), 0.0);
        assert_eq!(hop_rate(1.0, 2.0, 0.0, &m), 0.0);
        // s = 1/2: c = a (r_j / r_i)^{1/2}
        assert!((hop_rate(2.0, 4.0, 9.0, &m) - 2.0 * 1.5).abs() < 1e-15);
        // equal r: c = a r^{2s-1}
        let m = model(0.8);
        let c = hop_rate(1.5, 2.0, 2.0, &m);
        assert!((c - 1.5 * 2f64.powf(0.6)).abs() < 1e-14);
    }

    #[test]
    fn balance_holds_and_asymmetry_is_flagged() {
        let rs = [0.0, 1e-14, 0.3, 1.0, 2.5, 17.0];
        for s in [0.0, 0.5, 1.0] {
            assert!(check_balance(&model(s), &rs).pass);
        }
        let bad = check_balance_with(&model(0.5), &rs, |i, j| if i < j { 1.0 } else { 1.1 });
        assert!(!bad.pass);
        assert!(bad.hop_residual > 0.05);
    }

    #[test]
    fn scaled_kernel_keeps_second_moment() {
        let grid = build_grid(1, 16.0, 4096, true).unwrap();
        let a = HopKernel::new(HopShape::Box, 1.0, 1.0).unwrap();
        for eps in [1.0, 0.5, 0.25] {
            let s = a.scaled(eps, 1);
            let m: f64 = (0..grid.total_cells())
                .map(|c| {
                    let z = grid.displacement(0, c);
                    grid.cell_volume() * s.eval(&z) * z[0] * z[0]
                })
                .sum();
            assert!((m - 2.0 / 3.0).abs() < 0.05 * 2.0 / 3.0, "eps={eps}: {m}");
        }
        assert_eq!(a.scaled(1.0, 1), a);
    }

    #[test]
    fn one_cell_glauber_generator_is_tridiagonal() {
        let (s2, d) = (1.0, 0.5);
        let grid = build_grid(1, d, 1, false).unwrap();
        let mut w = CoxWeights::new(DMatrix::from_element(1, 1, s2), d, 1).unwrap();
        w.validate(&Stream::new(1)).unwrap();
        let m = model(1.0);
        let table = HopTable::new(&grid, &m.hop);
        let space = TruncatedSpace::new(1, 2).unwrap();
        let mut r = RatioIntensity::new(&w).unwrap();
        let q = build_generator(&space, &grid, &m, &table, &mut r, DynamicsKind::Glauber).unwrap();
        let base = 1.0 + 2.0 * s2 * d;
        // birth 0 -> 1: Δ r(∅) ; death 1 -> 0: 1
        assert!((q.get(0, 1) - d * s2 / base).abs() < 1e-12);
        assert!((q.get(1, 0) - 1.0).abs() < 1e-12);
        assert!((q.get(1, 2) - d * 3.0 * s2 / base).abs() < 1e-12);
        assert!((q.get(2, 1) - 2.0).abs() < 1e-12);
        assert_eq!(q.get(0, 2), 0.0);
        assert_eq!(q.truncated_births, 1);
        assert!(q.max_row_sum() < 1e-12);
    }

    fn small_case(l: usize, s: f64, kind: DynamicsKind) -> (f64, f64) {
        let grid = build_grid(1, 1.0, 3, true).unwrap();
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.5, 0.2, 0.5, 1.0]);
        let mut w = CoxWeights::new(cov, grid.cell_volume(), l).unwrap();
        w.validate(&Stream::new(5)).unwrap();
        let m = RateModel::new(s, HopKernel::new(HopShape::Box, 0.5, 1.0).unwrap(), 1e-12).unwrap();
        let table = HopTable::new(&grid, &m.hop);
        let space = TruncatedSpace::new(3, 3).unwrap();
        let mu: Vec<f64> = space
            .states
            .iter()
            .map(|g| w.weight(g, WeightMethod::Perm).unwrap().value)
            .collect();
        let mut r = RatioIntensity::new(&w).unwrap();
        let q = build_generator(&space, &grid, &m, &table, &mut r, kind).unwrap();
        assert!(q.max_row_sum() < 1e-12);
        let exact = reversibility_check(&q, &mu).unwrap();
        let mut bad = PerturbedIntensity {
            inner: RatioIntensity::new(&w).unwrap(),
            state: Configuration::from_counts(vec![1, 0, 0]),
            cell: 1,
            factor: 1.01,
        };
        let qp = build_generator(&space, &grid, &m, &table, &mut bad, kind).unwrap();
        (exact, reversibility_check(&qp, &mu).unwrap())
    }

    #[test]
    fn generators_are_reversible_and_perturbation_is_flagged() {
        for kind in [DynamicsKind::Glauber, DynamicsKind::Kawasaki] {
            for l in [1, 2] {
                for s in [0.5, 1.0] {
                    let (exact, perturbed) = small_case(l, s, kind);
                    assert!(exact < 1e-10, "{kind:?} l={l} s={s}: {exact}");
                    assert!(perturbed > 1e-3, "{kind:?} l={l} s={s}: {perturbed}");
                }
            }
        }
    }

    #[test]
    fn kawasaki_generator_preserves_total() {
        let grid = build_grid(1, 1.0, 2, true).unwrap();
        let m = model(0.5);
        let table = HopTable::new(&grid, &m.hop);
        let space = TruncatedSpace::new(2, 2).unwrap();
        let mut r = PoissonIntensity {
            intensity: vec![1.0, 2.0],
        };
        let q = build_generator(&space, &grid, &m, &table, &mut r, DynamicsKind::Kawasaki).unwrap();
        for (i, row) in q.rows.iter().enumerate() {
            for &(j, _) in row {
                assert_eq!(space.states[i].total(), space.states[j].total());
            }
        }
        assert_eq!(q.truncated_births, 0);
    }

    #[test]
    fn state_space_limit() {
        assert!(matches!(
            TruncatedSpace::new(40, 5),
            Err(Error::StateSpaceTooLarge { .. })
        ));
        assert_eq!(TruncatedSpace::new(4, 4).unwrap().len(), 70);
    }

    #[test]
    fn zero_intensity_glauber_empties() {
        let grid = build_grid(1, 2.0, 4, true).unwrap();
        let m = model(0.5);
        let mut r = PoissonIntensity {
            intensity: vec![0.0; 4],
        };
        let g0 = Configuration::from_counts(vec![2, 0, 1, 3]);
        // r = 0 switches deaths off as well, so the configuration is frozen
        let limits = SimulationLimits {
            horizon: 10.0,
            max_events: 1000,
        };
        let t = simulate_glauber(&g0, &grid, &m, &mut r, limits, &mut Stream::new(1).rng()).unwrap();
        assert!(t.events.is_empty());
        // positive death propensity, zero births: the window empties
        let mut r = PoissonIntensity {
            intensity: vec![1e-6; 4],
        };
        let m = RateModel::new(1.0, m.hop, 1e-12).unwrap();
        let t = simulate_glauber(
            &g0,
            &grid,
            &m,
            &mut r,
            SimulationLimits {
                horizon: 200.0,
                max_events: 1000,
            },
            &mut Stream::new(2).rng(),
        )
        .unwrap();
        assert!(t.events.iter().filter(|e| e.kind == EventKind::Death).count() >= 6);
        let end = t.final_configuration().unwrap();
        assert!(end.total() <= 1);
    }

    #[test]
    fn rate_overflow_is_reported() {
        let grid = build_grid(1, 1.0, 2, true).unwrap();
        let m = RateModel::new(0.0, HopKernel::new(HopShape::Box, 1.0, 1.0).unwrap(), 1e-300).unwrap();
        let mut r = PoissonIntensity {
            intensity: vec![1e-14, 1.0],
        };
        let g0 = Configuration::from_counts(vec![1, 0]);
        let limits = SimulationLimits {
            horizon: 1.0,
            max_events: 10,
        };
        assert!(matches!(
            simulate_glauber(&g0, &grid, &m, &mut r, limits, &mut Stream::new(1).rng()),
            Err(Error::RateOverflow { .. })
        ));
    }

    #[test]
    fn poisson_glauber_occupancy() {
        // s = 1, fixed g: each cell is an M/M/∞ queue with mean gΔ
        let grid = build_grid(1, 2.0, 4, true).unwrap();
        let g = vec![0.5, 1.0, 2.0, 3.0];
        let m = model(1.0);
        let limits = SimulationLimits {
            horizon: 50.0,
            max_events: 1_000_000,
        };
        let reps: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let mut r = PoissonIntensity { intensity: g.clone() };
                let t = simulate_glauber(
                    &grid.empty_configuration(),
                    &grid,
                    &m,
                    &mut r,
                    limits,
                    &mut Stream::new(7).index(i).rng(),
                )
                .unwrap();
                t.occupancy_time_average().unwrap()
            })
            .collect();
        for c in 0..4 {
            let xs: Vec<f64> = reps.iter().map(|v| v[c]).collect();
            let e = Estimate::from_samples(&xs);
            // burn-in from empty biases the average by about gΔ/T
            let want = g[c] * grid.cell_volume() * (1.0 - 1.0 / limits.horizon);
            assert!(e.z_score(want) < 4.0, "cell {c}: {e:?} vs {want}");
        }
    }

    #[test]
    fn kawasaki_conserves_and_walks_with_a() {
        let grid = build_grid(1, 4.0, 8, true).unwrap();
        let m = RateModel::new(1.0, HopKernel::new(HopShape::Biweight, 1.2, 1.0).unwrap(), 1e-12).unwrap();
        let table = HopTable::new(&grid, &m.hop);
        let mut r = PoissonIntensity {
            intensity: vec![1.0; 8],
        };
        let g0 = Configuration::from_counts(vec![1, 0, 0, 0, 0, 0, 0, 0]);
        let limits = SimulationLimits {
            horizon: 5000.0,
            max_events: 20_000,
        };
        let t = simulate_kawasaki(&g0, &grid, &m, &table, &mut r, limits, &mut Stream::new(3).rng()).unwrap();
        let mut g = g0.clone();
        let mut jumps: HashMap<i64, usize> = HashMap::new();
        for e in &t.events {
            let (f, to) = (e.from.unwrap(), e.to.unwrap());
            *jumps.entry(grid.index_offset(f, to)[0]).or_default() += 1;
            apply(&mut g, e).unwrap();
            assert_eq!(g.total(), 1);
        }
        let n = t.events.len() as f64;
        let targets = table.targets(0);
        let total_a: f64 = targets.iter().map(|(_, a)| a).sum();
        for &(y, a) in targets {
            let k = grid.index_offset(0, y)[0];
            let p = a / total_a;
            let obs = *jumps.get(&k).unwrap_or(&0) as f64 / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((obs - p).abs() < 4.0 * se, "offset {k}: {obs} vs {p}");
        }
    }

    #[test]
    fn trajectory_csv_header() {
        let t = Trajectory {
            initial: Configuration::empty(2),
            events: vec![Event {
                time: 0.5,
                kind: EventKind::Birth,
                from: None,
                to: Some(1),
            }],
            final_time: 1.0,
            truncated: false,
        };
        let csv = t.to_csv();
        assert!(csv.starts_with("time,kind,cell_from,cell_to\n"));
        assert!(csv.contains(",birth,,1"));
        assert_eq!(t.occupancy_time_average().unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn form_mass_constant_death_rate() {
        let grid = build_grid(1, 2.0, 4, true).unwrap();
        let m = model(1.0);
        let table = HopTable::new(&grid, &m.hop);
        let r = PoissonIntensity {
            intensity: vec![0.0; 4],
        };
        let samples = vec![Configuration::empty(4); 10];
        let fm = estimate_form_mass(&samples, &grid, &m, &table, &r, &[0, 1]).unwrap();
        assert_eq!(fm.death.mean, 0.0);
        assert_eq!(fm.hop.mean, 0.0);
    }
}
