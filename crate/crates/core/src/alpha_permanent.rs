//! α-permanents of real square matrices.
//!
//! `per_α(A) = Σ_σ α^{n - m(σ)} Π_i a_{i σ(i)}` where `m(σ)` counts the cycles
//! of σ. α = 1 is the permanent and α = -1 the determinant.
//!
//! Three routes are provided:
//! * [`per_alpha`]: reference enumeration of all n! permutations,
//! * [`per_alpha_subset`]: exact dynamic programme over cycle covers,
//!   `O(3^n + 2^n n^2)`, used wherever weights are evaluated repeatedly,
//! * [`permanent_ryser`]: Ryser's inclusion-exclusion formula for α = 1.

use crate::error::{Error, Result};
use crate::stats::NeumaierSum;

/// Largest order accepted by the enumeration path.
pub const MAX_REFERENCE_ORDER: usize = 12;
/// Largest order accepted by Ryser's formula.
pub const MAX_RYSER_ORDER: usize = 24;
/// Largest order accepted by the cycle-cover dynamic programme.
pub const MAX_SUBSET_ORDER: usize = 16;

/// Dense row-major square matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(order: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != order * order {
            return Err(Error::NotSquare {
                rows: order,
                cols: entries.len().checked_div(order).unwrap_or(entries.len()),
            });
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEntry {
                row: pos / order,
                col: pos % order,
            });
        }
        Ok(Self { order, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::NotSquare { rows: n, cols: r.len() });
        }
        Self::new(n, rows.iter().flatten().copied().collect())
    }

    /// Builds `(f(i, j))` for `i, j < order`.
    pub fn from_fn(order: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(order * order);
        for i in 0..order {
            for j in 0..order {
                entries.push(f(i, j));
            }
        }
        Self::new(order, entries)
    }

    pub fn identity(order: usize) -> Self {
        Self::from_fn(order, |i, j| if i == j { 1.0 } else { 0.0 }).expect("finite")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.order + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `P A Pᵀ` for the permutation sending row `i` to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.order;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[perm[i] * n + perm[j]] = self.get(i, j);
            }
        }
        Self { order: n, entries: out }
    }

    /// Block-diagonal direct sum `A ⊕ B`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let (a, b) = (self.order, other.order);
        let n = a + b;
        let mut out = vec![0.0; n * n];
        for i in 0..a {
            for j in 0..a {
                out[i * n + j] = self.get(i, j);
            }
        }
        for i in 0..b {
            for j in 0..b {
                out[(a + i) * n + a + j] = other.get(i, j);
            }
        }
        Self { order: n, entries: out }
    }
}

fn ensure_order(m: &SquareMatrix, limit: usize) -> Result<()> {
    if m.order > limit {
        Err(Error::MatrixTooLarge { order: m.order, limit })
    } else {
        Ok(())
    }
}

/// Reference α-permanent by enumerating permutations (Heap's algorithm).
///
/// Each Heap step composes σ with a transposition, which changes the cycle
/// count by exactly one, so the count is maintained incrementally.
pub fn per_alpha(a: &SquareMatrix, alpha: f64) -> Result<f64> {
    ensure_order(a, MAX_REFERENCE_ORDER)?;
    let n = a.order;
    if n == 0 {
        return Ok(1.0);
    }
    let powers: Vec<f64> = (0..n).map(|k| alpha.powi(k as i32)).collect();
    let mut sigma: Vec<usize> = (0..n).collect();
    let mut cycles = n;
    let mut sum = NeumaierSum::default();

    let term = |sigma: &[usize], cycles: usize| -> f64 {
        let prod: f64 = sigma.iter().enumerate().map(|(i, &s)| a.get(i, s)).product();
        powers[n - cycles] * prod
    };
    sum.add(term(&sigma, cycles));

    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let j = if i % 2 == 0 { 0 } else { c[i] };
            if same_cycle(&sigma, i, j) {
                cycles += 1;
            } else {
                cycles -= 1;
            }
            sigma.swap(i, j);
            sum.add(term(&sigma, cycles));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(sum.value())
}

fn same_cycle(sigma: &[usize], i: usize, j: usize) -> bool {
    let mut k = sigma[i];
    while k != i {
        if k == j {
            return true;
        }
        k = sigma[k];
    }
    false
}

/// α-permanent as a sum over cycle covers.
///
/// `per_α(A) = Σ over set partitions into cycles of Π α^{|C|-1} w(C)`, where
/// `w(C)` sums the products along all directed Hamiltonian cycles on `C`.
pub fn per_alpha_subset(a: &SquareMatrix, alpha: f64) -> Result<f64> {
    ensure_order(a, MAX_SUBSET_ORDER)?;
    let n = a.order;
    if n == 0 {
        return Ok(1.0);
    }
    let full = 1usize << n;
    // cycle[T]: weighted sum of directed cycles covering exactly T.
    let mut cycle = vec![0.0f64; full];
    // path[mask * n + last]: paths from min(mask) through mask ending at last.
    let mut path = vec![0.0f64; full * n];
    for start in 0..n {
        let base = 1usize << start;
        path[base * n + start] = 1.0;
        // masks whose minimum element is `start`
        let higher = !((base << 1) - 1) & (full - 1);
        let mut sub = 0usize;
        loop {
            let mask = base | sub;
            let size = mask.count_ones() as i32;
            let weight = alpha.powi(size - 1);
            let mut closing = 0.0;
            for last in 0..n {
                let p = path[mask * n + last];
                if p == 0.0 {
                    continue;
                }
                closing += p * a.get(last, start);
                let mut free = higher & !mask;
                while free != 0 {
                    let next = free.trailing_zeros() as usize;
                    free &= free - 1;
                    path[(mask | (1 << next)) * n + next] += p * a.get(last, next);
                }
            }
            cycle[mask] = weight * closing;
            if sub == higher {
                break;
            }
            sub = (sub.wrapping_sub(higher)) & higher;
        }
    }
    let mut cover = vec![0.0f64; full];
    cover[0] = 1.0;
    for s in 1..full {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        let mut acc = 0.0;
        // T = low | sub for every subset `sub` of `rest`
        let mut sub = rest;
        loop {
            let t = low | sub;
            acc += cycle[t] * cover[s ^ t];
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        cover[s] = acc;
    }
    Ok(cover[full - 1])
}

/// Permanent by Ryser's formula with Gray-code row-sum updates.
pub fn permanent_ryser(a: &SquareMatrix) -> Result<f64> {
    ensure_order(a, MAX_RYSER_ORDER)?;
    let n = a.order;
    if n == 0 {
        return Ok(1.0);
    }
    let mut row_sums = vec![0.0f64; n];
    let mut in_set = vec![false; n];
    let mut sum = NeumaierSum::default();
    let total: u64 = 1 << n;
    for k in 1..total {
        let col = k.trailing_zeros() as usize;
        in_set[col] = !in_set[col];
        let sign = if in_set[col] { 1.0 } else { -1.0 };
        for (i, rs) in row_sums.iter_mut().enumerate() {
            *rs += sign * a.get(i, col);
        }
        let size = (k ^ (k >> 1)).count_ones() as usize;
        let prod: f64 = row_sums.iter().product();
        if (n - size).is_multiple_of(2) {
            sum.add(prod);
        } else {
            sum.add(-prod);
        }
    }
    Ok(sum.value())
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &SquareMatrix) -> f64 {
    let n = a.order;
    let mut m = a.entries.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .unwrap_or(col);
        if m[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(pivot * n + j, col * n + j);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            if f != 0.0 {
                for j in col..n {
                    m[r * n + j] -= f * m[col * n + j];
                }
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> SquareMatrix {
        SquareMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Brute-force oracle: enumerate permutations recursively and count cycles
    /// from scratch.
    fn oracle(a: &SquareMatrix, alpha: f64) -> f64 {
        fn rec(a: &SquareMatrix, alpha: f64, used: &mut Vec<bool>, sigma: &mut Vec<usize>, acc: &mut f64) {
            let n = a.order();
            if sigma.len() == n {
                let mut seen = vec![false; n];
                let mut cycles = 0;
                for s in 0..n {
                    if !seen[s] {
                        cycles += 1;
                        let mut k = s;
                        while !seen[k] {
                            seen[k] = true;
                            k = sigma[k];
                        }
                    }
                }
                let prod: f64 = (0..n).map(|i| a.get(i, sigma[i])).product();
                *acc += alpha.powi((n - cycles) as i32) * prod;
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    sigma.push(j);
                    rec(a, alpha, used, sigma, acc);
                    sigma.pop();
                    used[j] = false;
                }
            }
        }
        let mut acc = 0.0;
        rec(a, alpha, &mut vec![false; a.order()], &mut Vec::new(), &mut acc);
        acc
    }

    #[test]
    fn two_by_two_cases() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(per_alpha(&a, -1.0).unwrap(), -2.0);
        assert_eq!(per_alpha(&a, 1.0).unwrap(), 10.0);
        for alpha in [-2.0, -0.5, 0.0, 0.5, 3.0] {
            assert_eq!(per_alpha(&a, alpha).unwrap(), 4.0 + alpha * 6.0);
            assert_eq!(per_alpha_subset(&a, alpha).unwrap(), 4.0 + alpha * 6.0);
        }
    }

    #[test]
    fn all_ones_three_by_three() {
        // S_3: identity (3 cycles), three transpositions (2), two 3-cycles (1).
        let ones = SquareMatrix::from_fn(3, |_, _| 1.0).unwrap();
        for alpha in [-1.0, 0.5, 1.0, 2.0, 3.5] {
            let expected = 1.0 + 3.0 * alpha + 2.0 * alpha * alpha;
            assert!((per_alpha(&ones, alpha).unwrap() - expected).abs() < 1e-12);
            assert!((per_alpha_subset(&ones, alpha).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ryser_small_cases() {
        assert_eq!(permanent_ryser(&SquareMatrix::identity(5)).unwrap(), 1.0);
        assert_eq!(permanent_ryser(&m(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap(), 2.0);
        assert_eq!(permanent_ryser(&m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap(), 10.0);
    }

    #[test]
    fn empty_matrix_is_one() {
        let e = SquareMatrix::new(0, vec![]).unwrap();
        assert_eq!(per_alpha(&e, 0.3).unwrap(), 1.0);
        assert_eq!(per_alpha_subset(&e, 0.3).unwrap(), 1.0);
        assert_eq!(permanent_ryser(&e).unwrap(), 1.0);
    }

    #[test]
    fn size_limits() {
        let big = SquareMatrix::identity(13);
        assert!(matches!(per_alpha(&big, 1.0), Err(Error::MatrixTooLarge { .. })));
        let huge = SquareMatrix::identity(25);
        assert!(matches!(permanent_ryser(&huge), Err(Error::MatrixTooLarge { .. })));
        assert!(matches!(
            per_alpha_subset(&SquareMatrix::identity(17), 1.0),
            Err(Error::MatrixTooLarge { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            SquareMatrix::new(2, vec![1.0, f64::NAN, 0.0, 1.0]),
            Err(Error::InvalidEntry { row: 0, col: 1 })
        ));
        assert!(SquareMatrix::new(2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn determinant_matches_known_values() {
        assert_eq!(determinant(&m(&[&[1.0, 2.0], &[3.0, 4.0]])), -2.0);
        assert_eq!(determinant(&m(&[&[0.0, 1.0], &[1.0, 0.0]])), -1.0);
        assert_eq!(determinant(&SquareMatrix::identity(4)), 1.0);
    }

    fn matrix(max: usize) -> impl Strategy<Value = SquareMatrix> {
        (1..=max).prop_flat_map(|n| {
            proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| SquareMatrix::new(n, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn reference_matches_oracle(a in matrix(5), alpha in -2.0f64..3.0) {
            let want = oracle(&a, alpha);
            let got = per_alpha(&a, alpha).unwrap();
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }

        #[test]
        fn subset_matches_reference(a in matrix(7), alpha in -2.0f64..3.0) {
            let want = per_alpha(&a, alpha).unwrap();
            let got = per_alpha_subset(&a, alpha).unwrap();
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }

        #[test]
        fn ryser_matches_reference(a in matrix(7)) {
            let want = per_alpha(&a, 1.0).unwrap();
            let got = permanent_ryser(&a).unwrap();
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }

        #[test]
        fn diagonal_is_product(d in proptest::collection::vec(-2.0f64..2.0, 1..7), alpha in -2.0f64..2.0) {
            let n = d.len();
            let a = SquareMatrix::from_fn(n, |i, j| if i == j { d[i] } else { 0.0 }).unwrap();
            let want: f64 = d.iter().product();
            prop_assert!((per_alpha(&a, alpha).unwrap() - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}
