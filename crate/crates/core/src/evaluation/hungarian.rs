//! Optimal one-to-one assignment on rectangular profit matrices.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs, one per row of the smaller side, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Maximum-profit matching of `min(rows, cols)` pairs.
pub fn hungarian(profit: &Matrix) -> Result<Assignment> {
    let (r, c) = (profit.rows(), profit.cols());
    if r == 0 || c == 0 {
        return Err(Error::invalid("hungarian needs a non-empty matrix"));
    }
    if !profit.is_finite() {
        return Err(Error::invalid("hungarian needs finite entries"));
    }
    let transpose = r > c;
    let (n, m) = if transpose { (c, r) } else { (r, c) };
    let at = |i: usize, j: usize| if transpose { profit.row(j)[i] } else { profit.row(i)[j] };
    let max = profit.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // Shortest augmenting paths with potentials on cost = max - profit.
    // Rows and columns are 1-based; column 0 is the virtual start.
    let cost = |i: usize, j: usize| max - at(i - 1, j - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (i, j) = (owner[j] - 1, j - 1);
            if transpose {
                (j, i)
            } else {
                (i, j)
            }
        })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| profit.row(i)[j]).sum();
    Ok(Assignment { pairs, total })
}
