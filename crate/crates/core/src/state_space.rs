//! Grid discretisation of the window and configuration arithmetic.
//!
//! The reference measure is replaced by `cell_volume` times counting measure on
//! cell centres, so every integral over the window becomes a weighted sum over
//! cells. Configurations are multisets of cells stored as occupation counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of cells.
pub const MAX_CELLS: usize = 4096;

/// A point or displacement in up to three dimensions; unused axes are zero.
pub type Point = [f64; 3];

pub fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Regular grid of `cells_per_side^dimension` cubic cells covering
/// `[-L/2, L/2]^d`, optionally with periodic boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dimension: usize,
    side_length: f64,
    cells_per_side: usize,
    torus: bool,
    cell_volume: f64,
    total_cells: usize,
}

impl GridSpec {
    /// Validates the parameters and builds the grid.
    pub fn new(dimension: usize, side_length: f64, cells_per_side: usize, torus: bool) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1, 2 or 3 (got {dimension})"
            )));
        }
        if !(side_length.is_finite() && side_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "side length must be positive (got {side_length})"
            )));
        }
        if cells_per_side == 0 {
            return Err(Error::InvalidGrid("cells per side must be at least 1".into()));
        }
        let total_cells = cells_per_side
            .checked_pow(dimension as u32)
            .filter(|&n| n <= MAX_CELLS)
            .ok_or_else(|| {
                Error::InvalidGrid(format!(
                    "{cells_per_side}^{dimension} cells exceeds the cap of {MAX_CELLS}"
                ))
            })?;
        let spacing = side_length / cells_per_side as f64;
        Ok(Self {
            dimension,
            side_length,
            cells_per_side,
            torus,
            cell_volume: spacing.powi(dimension as i32),
            total_cells,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn is_torus(&self) -> bool {
        self.torus
    }

    /// Volume Δ of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn total_cells(&self) -> usize {
        self.total_cells
    }

    /// Edge length of one cell.
    pub fn spacing(&self) -> f64 {
        self.side_length / self.cells_per_side as f64
    }

    /// Per-axis integer coordinates of a cell; axis 0 varies fastest.
    pub fn multi_index(&self, cell: usize) -> [usize; 3] {
        let m = self.cells_per_side;
        let mut out = [0; 3];
        let mut rest = cell;
        for slot in out.iter_mut().take(self.dimension) {
            *slot = rest % m;
            rest /= m;
        }
        out
    }

    pub fn cell_of(&self, idx: [usize; 3]) -> usize {
        let m = self.cells_per_side;
        (0..self.dimension).rev().fold(0, |acc, a| acc * m + idx[a])
    }

    pub fn center(&self, cell: usize) -> Point {
        let h = self.spacing();
        let idx = self.multi_index(cell);
        let mut p = [0.0; 3];
        for a in 0..self.dimension {
            p[a] = (idx[a] as f64 + 0.5) * h - 0.5 * self.side_length;
        }
        p
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.total_cells).map(|c| self.center(c)).collect()
    }

    /// Displacement `x_to - x_from`, using the minimum image on a torus.
    ///
    /// Computed from integer index offsets so that all pairs in the same
    /// displacement class produce bitwise identical vectors.
    pub fn displacement(&self, from: usize, to: usize) -> Point {
        let offset = self.index_offset(from, to);
        let h = self.spacing();
        let mut d = [0.0; 3];
        for ax in 0..self.dimension {
            d[ax] = offset[ax] as f64 * h;
        }
        d
    }

    /// Integer offset `to - from` per axis; on a torus reduced into
    /// `(-M/2, M/2]`.
    pub fn index_offset(&self, from: usize, to: usize) -> [i64; 3] {
        let a = self.multi_index(from);
        let b = self.multi_index(to);
        let m = self.cells_per_side as i64;
        let mut out = [0i64; 3];
        for ax in 0..self.dimension {
            let mut k = b[ax] as i64 - a[ax] as i64;
            if self.torus {
                k = k.rem_euclid(m);
                if 2 * k > m {
                    k -= m;
                }
            }
            out[ax] = k;
        }
        out
    }

    /// Wraps a coordinate difference into `(-L/2, L/2]` on a torus.
    pub fn wrap(&self, delta: f64) -> f64 {
        if !self.torus {
            return delta;
        }
        let l = self.side_length;
        let mut d = delta - l * (delta / l).round();
        if d <= -0.5 * l {
            d += l;
        }
        d
    }

    pub fn distance(&self, from: usize, to: usize) -> f64 {
        norm(&self.displacement(from, to))
    }

    /// Cell containing `point` (nearest centre), or `None` outside a
    /// non-periodic window.
    pub fn snap(&self, point: &Point) -> Option<usize> {
        let h = self.spacing();
        let m = self.cells_per_side as i64;
        let mut idx = [0usize; 3];
        for a in 0..self.dimension {
            let k = ((point[a] + 0.5 * self.side_length) / h - 0.5).round() as i64;
            let k = if self.torus {
                k.rem_euclid(m)
            } else if (0..m).contains(&k) {
                k
            } else {
                return None;
            };
            idx[a] = k as usize;
        }
        Some(self.cell_of(idx))
    }

    /// Cell reached from `from` by an integer offset per axis.
    pub fn offset_cell(&self, from: usize, offset: [i64; 3]) -> Option<usize> {
        let m = self.cells_per_side as i64;
        let base = self.multi_index(from);
        let mut idx = [0usize; 3];
        for a in 0..self.dimension {
            let k = base[a] as i64 + offset[a];
            let k = if self.torus {
                k.rem_euclid(m)
            } else if (0..m).contains(&k) {
                k
            } else {
                return None;
            };
            idx[a] = k as usize;
        }
        Some(self.cell_of(idx))
    }

    fn check_cell(&self, cell: usize) -> Result<()> {
        if cell < self.total_cells {
            Ok(())
        } else {
            Err(Error::CellOutOfRange {
                index: cell,
                cells: self.total_cells,
            })
        }
    }

    pub fn empty_configuration(&self) -> Configuration {
        Configuration::empty(self.total_cells)
    }

    /// Configuration from explicit counts, checked against the grid size.
    pub fn configuration(&self, counts: Vec<u32>) -> Result<Configuration> {
        if counts.len() != self.total_cells {
            return Err(Error::InvalidArgument(format!(
                "configuration has {} cells, grid has {}",
                counts.len(),
                self.total_cells
            )));
        }
        Ok(Configuration::from_counts(counts))
    }

    pub fn validate_cell(&self, cell: usize) -> Result<()> {
        self.check_cell(cell)
    }
}

/// `build_grid` in operation form.
pub fn build_grid(dimension: usize, side_length: f64, cells_per_side: usize, torus: bool) -> Result<GridSpec> {
    GridSpec::new(dimension, side_length, cells_per_side, torus)
}

/// Finite multiset of grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    counts: Vec<u32>,
    total: u64,
}

impl Configuration {
    pub fn empty(cells: usize) -> Self {
        Self {
            counts: vec![0; cells],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        let total = counts.iter().map(|&c| u64::from(c)).sum();
        Self { counts, total }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, cell: usize) -> u32 {
        self.counts[cell]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn cells(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn check(&self, cell: usize) -> Result<()> {
        if cell < self.counts.len() {
            Ok(())
        } else {
            Err(Error::CellOutOfRange {
                index: cell,
                cells: self.counts.len(),
            })
        }
    }

    /// Adds one particle at `cell` in place.
    pub fn insert(&mut self, cell: usize) -> Result<()> {
        self.check(cell)?;
        self.counts[cell] += 1;
        self.total += 1;
        Ok(())
    }

    /// Removes one particle from `cell` in place.
    pub fn take(&mut self, cell: usize) -> Result<()> {
        self.check(cell)?;
        if self.counts[cell] == 0 {
            return Err(Error::EmptyCell(cell));
        }
        self.counts[cell] -= 1;
        self.total -= 1;
        Ok(())
    }

    /// Moves one particle from `from` to `to` in place.
    pub fn shift(&mut self, from: usize, to: usize) -> Result<()> {
        self.check(to)?;
        self.take(from)?;
        self.counts[to] += 1;
        self.total += 1;
        Ok(())
    }

    /// γ ∪ x
    pub fn add_point(&self, cell: usize) -> Result<Self> {
        let mut next = self.clone();
        next.insert(cell)?;
        Ok(next)
    }

    /// γ ∖ x
    pub fn remove_point(&self, cell: usize) -> Result<Self> {
        let mut next = self.clone();
        next.take(cell)?;
        Ok(next)
    }

    /// γ ∖ x ∪ y
    pub fn hop_point(&self, from: usize, to: usize) -> Result<Self> {
        let mut next = self.clone();
        next.shift(from, to)?;
        Ok(next)
    }

    /// Occupied cells listed once per particle, in cell order.
    pub fn points(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total as usize);
        for (cell, &n) in self.counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(cell, n as usize));
        }
        out
    }

    /// Number of particles in a set of cells.
    pub fn count_in(&self, cells: &[usize]) -> u64 {
        cells.iter().map(|&c| u64::from(self.counts[c])).sum()
    }

    /// Sum of `phi` over the particles, ⟨φ, γ⟩.
    pub fn pair_with(&self, phi: &[f64]) -> f64 {
        self.counts.iter().zip(phi).map(|(&n, &p)| f64::from(n) * p).sum()
    }

    pub fn consistent(&self) -> bool {
        self.total == self.counts.iter().map(|&c| u64::from(c)).sum::<u64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_volume_and_count() {
        let g = build_grid(1, 1.0, 4, true).unwrap();
        assert_eq!(g.cell_volume(), 0.25);
        assert_eq!(g.total_cells(), 4);

        let g = build_grid(2, 2.0, 3, false).unwrap();
        assert!((g.cell_volume() - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(g.total_cells(), 9);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(build_grid(1, 1.0, 0, true).is_err());
        assert!(build_grid(0, 1.0, 4, true).is_err());
        assert!(build_grid(4, 1.0, 4, true).is_err());
        assert!(build_grid(1, 0.0, 4, true).is_err());
        assert!(build_grid(1, -1.0, 4, true).is_err());
        assert!(build_grid(2, 1.0, 65, true).is_err());
    }

    #[test]
    fn centres_are_distinct() {
        let g = build_grid(2, 2.0, 5, false).unwrap();
        let c = g.centers();
        for i in 0..c.len() {
            for j in 0..i {
                assert_ne!(c[i], c[j]);
            }
        }
    }

    #[test]
    fn torus_uses_minimum_image() {
        let g = build_grid(1, 1.0, 4, true).unwrap();
        // centres at -0.375, -0.125, 0.125, 0.375
        let d = g.displacement(0, 3);
        assert!((d[0] + 0.25).abs() < 1e-15);
        let flat = build_grid(1, 1.0, 4, false).unwrap();
        assert!((flat.displacement(0, 3)[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn snap_round_trips_centres() {
        let g = build_grid(2, 3.0, 6, true).unwrap();
        for c in 0..g.total_cells() {
            assert_eq!(g.snap(&g.center(c)), Some(c));
        }
        let flat = build_grid(1, 1.0, 4, false).unwrap();
        assert_eq!(flat.snap(&[2.0, 0.0, 0.0]), None);
    }

    #[test]
    fn remove_from_empty_is_error() {
        let g = build_grid(1, 1.0, 4, true).unwrap();
        let empty = g.empty_configuration();
        assert_eq!(empty.remove_point(1), Err(Error::EmptyCell(1)));
        assert_eq!(empty.hop_point(1, 2), Err(Error::EmptyCell(1)));
        assert!(empty.add_point(7).is_err());
    }

    #[test]
    fn add_then_remove_is_identity() {
        let g = build_grid(1, 1.0, 4, true).unwrap();
        let gamma = g.configuration(vec![1, 0, 2, 0]).unwrap();
        assert_eq!(gamma.add_point(1).unwrap().remove_point(1).unwrap(), gamma);
        assert_eq!(gamma.hop_point(2, 3).unwrap().total(), gamma.total());
        assert_eq!(gamma.points(), vec![0, 2, 2]);
    }

    #[derive(Debug, Clone)]
    enum Move {
        Add(usize),
        Remove(usize),
        Hop(usize, usize),
    }

    fn moves() -> impl Strategy<Value = Move> {
        prop_oneof![
            (0usize..6).prop_map(Move::Add),
            (0usize..6).prop_map(Move::Remove),
            (0usize..6, 0usize..6).prop_map(|(a, b)| Move::Hop(a, b)),
        ]
    }

    proptest! {
        #[test]
        fn total_tracks_counts(ops in proptest::collection::vec(moves(), 0..64)) {
            let mut gamma = Configuration::empty(6);
            for op in ops {
                let before = gamma.clone();
                let res = match op {
                    Move::Add(i) => gamma.insert(i),
                    Move::Remove(i) => gamma.take(i),
                    Move::Hop(i, j) => gamma.shift(i, j),
                };
                if res.is_err() {
                    prop_assert_eq!(&gamma, &before);
                }
                prop_assert!(gamma.consistent());
            }
        }

        #[test]
        fn hop_is_remove_then_add(counts in proptest::collection::vec(0u32..3, 5), i in 0usize..5, j in 0usize..5) {
            let gamma = Configuration::from_counts(counts);
            let hop = gamma.hop_point(i, j);
            let composed = gamma.remove_point(i).and_then(|g| g.add_point(j));
            prop_assert_eq!(hop, composed);
        }
    }
}
