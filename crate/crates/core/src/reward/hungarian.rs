//! Rectangular min-cost assignment (Kuhn–Munkres with potentials, O(n²m)).

use std::ops::{Add, Sub};

use crate::error::{Error, Result};

/// Cost scalar usable by the solver. Implemented for `f64` and for exact
/// `i128` costs.
pub trait AssignCost: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> {
    const ZERO: Self;
    const INF: Self;
}

impl AssignCost for f64 {
    const ZERO: Self = 0.0;
    const INF: Self = f64::INFINITY;
}

impl AssignCost for i128 {
    const ZERO: Self = 0;
    const INF: Self = i128::MAX / 4;
}

/// Dense `rows × cols` cost matrix, rows are predictions and columns GT instances.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl AssignmentMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: costs.len(),
            });
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("assignment costs"));
        }
        Ok(Self { rows, cols, costs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.costs[r * self.cols + c]
    }

    pub fn total(&self, assignment: &[(usize, usize)]) -> f64 {
        assignment.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Min-cost partial injection of size `min(rows, cols)`, as `(row, col)`
/// pairs sorted by row.
pub fn hungarian_match(costs: &AssignmentMatrix) -> Vec<(usize, usize)> {
    solve(costs.rows, costs.cols, |r, c| costs.get(r, c))
}

/// Generic solver over any [`AssignCost`]. Rows and columns are scanned in
/// ascending order with strict comparisons, so results are deterministic.
pub fn solve<T: AssignCost>(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> T) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let mut t = solve_wide(cols, rows, |r, c| cost(c, r))
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect::<Vec<_>>();
        t.sort_unstable();
        return t;
    }
    solve_wide(rows, cols, cost)
}

/// Requires `n <= m`. 1-based potentials with a sentinel column 0.
fn solve_wide<T: AssignCost>(n: usize, m: usize, cost: impl Fn(usize, usize) -> T) -> Vec<(usize, usize)> {
    let mut u = vec![T::ZERO; n + 1];
    let mut v = vec![T::ZERO; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![T::INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = T::INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        let m = AssignmentMatrix::from_rows(&[vec![3.5]]).unwrap();
        assert_eq!(hungarian_match(&m), vec![(0, 0)]);
    }

    #[test]
    fn two_by_two() {
        let m = AssignmentMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let a = hungarian_match(&m);
        assert_eq!(a, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total(&a), 2.0);
    }

    #[test]
    fn empty_axes() {
        assert!(hungarian_match(&AssignmentMatrix::new(0, 3, vec![]).unwrap()).is_empty());
        assert!(hungarian_match(&AssignmentMatrix::new(3, 0, vec![]).unwrap()).is_empty());
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = AssignmentMatrix::from_rows(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(hungarian_match(&wide), vec![(0, 1)]);
        let tall = AssignmentMatrix::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(hungarian_match(&tall), vec![(1, 0)]);
    }

    #[test]
    fn negative_costs() {
        let m = AssignmentMatrix::from_rows(&[vec![-1.0, -0.2], vec![-0.9, -0.8]]).unwrap();
        assert_eq!(hungarian_match(&m), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(AssignmentMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(AssignmentMatrix::new(2, 1, vec![0.0]).is_err());
        assert!(AssignmentMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn all_equal_costs_prefer_low_indices() {
        let m = AssignmentMatrix::from_rows(&[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert_eq!(hungarian_match(&m), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn exact_integer_costs() {
        let c = [[4i128, 1, 3], [2, 0, 5], [3, 2, 2]];
        let a = solve(3, 3, |r, k| c[r][k]);
        let total: i128 = a.iter().map(|&(r, k)| c[r][k]).sum();
        assert_eq!(total, 5);
    }
}
