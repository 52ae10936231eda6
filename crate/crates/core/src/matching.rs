//! Cosine-similarity alignment of hidden units via exact linear assignment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Scalar;

/// `C[i][j] = cos(W1_i, W2_j)`; a zero row has similarity 0 with everything.
pub fn cosine_similarity_matrix<T: Scalar>(w1: &Matrix<T>, w2: &Matrix<T>) -> Result<Matrix<f64>> {
    if w1.cols() != w2.cols() {
        return Err(Error::Dimension(format!(
            "cannot compare rows of width {} and {}",
            w1.cols(),
            w2.cols()
        )));
    }
    let unit = |w: &Matrix<T>| -> Vec<Vec<f64>> {
        (0..w.rows())
            .map(|r| {
                let row: Vec<f64> = w.row(r).iter().map(|v| v.to_f64_lossy()).collect();
                let n = norm(&row);
                if n > 0.0 {
                    row.iter().map(|v| v / n).collect()
                } else {
                    vec![0.0; row.len()]
                }
            })
            .collect()
    };
    let (a, b) = (unit(w1), unit(w2));
    let data: Vec<f64> = a
        .par_iter()
        .flat_map_iter(|ra| b.iter().map(move |rb| dot(ra, rb).clamp(-1.0, 1.0)))
        .collect();
    Matrix::from_vec(w1.rows(), w2.rows(), data)
}

/// Injective matching between the rows and columns of a score matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// Number of rows and columns of the score matrix that was solved.
    pub rows: usize,
    pub cols: usize,
    /// For each index `k` of the smaller side, the matched index on the larger
    /// side. When `rows <= cols` this is indexed by row, otherwise by column.
    pub map: Vec<usize>,
    /// Total score of the matched pairs.
    pub value: f64,
}

impl Matching {
    pub fn rows_are_smaller(&self) -> bool {
        self.rows <= self.cols
    }

    /// Matched `(row, col)` pairs ordered by the smaller side's index.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.map
            .iter()
            .enumerate()
            .map(|(k, &m)| if self.rows_are_smaller() { (k, m) } else { (m, k) })
            .collect()
    }

    /// Column matched to each row, `None` for unmatched rows.
    pub fn row_to_col(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.rows];
        for (r, c) in self.pairs() {
            out[r] = Some(c);
        }
        out
    }
}

/// Exact maximum-score rectangular assignment.
///
/// Shortest augmenting paths with dual potentials (Jonker-Volgenant family),
/// run on the negated scores with the smaller side as rows. Candidate columns
/// are scanned in index order with strict improvement, so ties resolve toward
/// lower indices.
pub fn solve_lap(scores: &Matrix<f64>) -> Result<Matching> {
    if !scores.is_finite() {
        return Err(Error::Validation("assignment scores must be finite".into()));
    }
    let (rows, cols) = scores.shape();
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| -> f64 {
        if transposed {
            -scores[(j, i)]
        } else {
            -scores[(i, j)]
        }
    };

    // 1-based arrays; column 0 is the virtual source of each augmentation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut min_slack = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        min_slack.iter_mut().for_each(|s| *s = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
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

    let mut map = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            map[owner[j] - 1] = j - 1;
        }
    }
    let value = map
        .iter()
        .enumerate()
        .map(|(k, &j)| if transposed { scores[(j, k)] } else { scores[(k, j)] })
        .sum();
    Ok(Matching {
        rows,
        cols,
        map,
        value,
    })
}

/// Aligns the rows of `w1` with the rows of `w2` by cosine similarity.
pub fn match_rows<T: Scalar>(w1: &Matrix<T>, w2: &Matrix<T>) -> Result<Matching> {
    solve_lap(&cosine_similarity_matrix(w1, w2)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_two_by_two() {
        let m = solve_lap(&Matrix::identity(3)).unwrap();
        assert_eq!(m.map, vec![0, 1, 2]);
        assert_eq!(m.value, 3.0);

        let c = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.8, 0.2]]).unwrap();
        let m = solve_lap(&c).unwrap();
        assert_eq!(m.pairs(), vec![(0, 1), (1, 0)]);
        assert!((m.value - 1.7).abs() < 1e-15);
    }

    #[test]
    fn ties_resolve_to_identity() {
        let m = solve_lap(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(m.map, vec![0, 1, 2, 3]);
    }

    #[test]
    fn tall_matrices_index_by_column() {
        let c = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.5]]).unwrap();
        let m = solve_lap(&c).unwrap();
        assert!(!m.rows_are_smaller());
        assert_eq!(m.pairs(), vec![(1, 0)]);
        assert_eq!(m.row_to_col(), vec![None, Some(0), None]);
    }

    #[test]
    fn cosine_conventions() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0], vec![0.0, 0.0]]).unwrap();
        let c = cosine_similarity_matrix(&w, &w).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((c[(0, 1)] + 1.0).abs() < 1e-14);
        assert_eq!(c[(2, 2)], 0.0);
        assert_eq!(c[(0, 2)], 0.0);
        assert!(cosine_similarity_matrix(&w, &Matrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let mut c = Matrix::<f64>::zeros(2, 2);
        c[(0, 1)] = f64::NAN;
        assert!(solve_lap(&c).is_err());
    }
}
