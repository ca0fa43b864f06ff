//! Rectangular linear assignment with forbidden entries.
//!
//! The solver returns, among all one-to-one matchings that only use allowed
//! entries, one of maximum cardinality and, within those, of minimum total
//! cost. It pads the matrix to a square, prices forbidden and padding cells
//! above any achievable allowed total, and runs the O(n^3) shortest
//! augmenting path form of the Hungarian method.

use serde::{Deserialize, Serialize};

/// Marker for a pair that must never be matched.
pub const FORBIDDEN: f64 = f64::INFINITY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![FORBIDDEN; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = CostMatrix::new(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged cost matrix");
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        !self.get(row, col).is_finite()
    }

    /// Forbids every entry whose cost exceeds `threshold`.
    pub fn gate(&mut self, threshold: f64) {
        for v in &mut self.data {
            if *v > threshold {
                *v = FORBIDDEN;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }
}

pub fn solve_assignment(costs: &CostMatrix) -> Assignment {
    let (rows, cols) = (costs.rows(), costs.cols());
    let n = rows.max(cols);
    let mut out = Assignment::default();
    if n == 0 {
        return out;
    }
    let max_allowed = costs
        .data
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    if !costs.data.iter().any(|v| v.is_finite()) {
        out.unmatched_rows = (0..rows).collect();
        out.unmatched_cols = (0..cols).collect();
        return out;
    }
    // Any matching with one more allowed pair is strictly cheaper.
    let big = (n as f64 + 1.0) * (max_allowed + 1.0);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            let v = costs.get(i, j);
            if v.is_finite() {
                return v;
            }
        }
        big
    };

    // 1-based potentials; p[j] is the row assigned to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
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
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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

    let mut row_match = vec![None; rows];
    let mut col_used = vec![false; cols];
    for j in 1..=n {
        let (i, c) = (p[j] - 1, j - 1);
        if i < rows && c < cols && !costs.is_forbidden(i, c) {
            row_match[i] = Some(c);
            col_used[c] = true;
        }
    }
    for (i, m) in row_match.iter().enumerate() {
        match m {
            Some(c) => out.matches.push((i, *c)),
            None => out.unmatched_rows.push(i),
        }
    }
    out.unmatched_cols = (0..cols).filter(|&c| !col_used[c]).collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]);
        let a = solve_assignment(&m);
        assert_eq!(a.matches, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&m), 1.0);
    }

    #[test]
    fn zero_diagonal_gives_identity() {
        let n = 5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
            .collect();
        let a = solve_assignment(&CostMatrix::from_rows(&rows));
        assert_eq!(a.matches, (0..n).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn all_forbidden_matches_nothing() {
        let m = CostMatrix::new(3, 2);
        let a = solve_assignment(&m);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_rows, vec![0, 1, 2]);
        assert_eq!(a.unmatched_cols, vec![0, 1]);
    }

    #[test]
    fn prefers_cardinality_over_cost() {
        // Matching (0,0) alone costs 0 but blocks row 1; two pairs win.
        let m = CostMatrix::from_rows(&[vec![0.0, 0.9], vec![0.8, FORBIDDEN]]);
        let a = solve_assignment(&m);
        assert_eq!(a.matches, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn rectangular_shapes() {
        let m = CostMatrix::from_rows(&[vec![0.5, 0.1, 0.7]]);
        let a = solve_assignment(&m);
        assert_eq!(a.matches, vec![(0, 1)]);
        assert_eq!(a.unmatched_cols, vec![0, 2]);
        let t = CostMatrix::from_rows(&[vec![0.5], vec![0.2], vec![0.9]]);
        let a = solve_assignment(&t);
        assert_eq!(a.matches, vec![(1, 0)]);
        assert_eq!(a.unmatched_rows, vec![0, 2]);
        assert!(solve_assignment(&CostMatrix::new(0, 4)).matches.is_empty());
    }
}
