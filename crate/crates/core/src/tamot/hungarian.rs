use crate::error::{ensure, Result};
use crate::numerics::Matrix;

/// Affinity given to padding cells when squaring a rectangular matrix.
pub const PAD_AFFINITY: f64 = -1e9;

/// Maximum-affinity one-to-one assignment over an `N x M` matrix.
///
/// Returns `(row, col)` pairs sorted by row; `min(N, M)` pairs in total.
pub fn hungarian(a: &Matrix) -> Result<Vec<(usize, usize)>> {
    ensure!(a.is_finite(), "assignment matrix has non-finite entries");
    let (n, m) = a.shape();
    let k = n.max(m);
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    // costs are negated affinities; 1-based potentials over a k x k square
    let cost = |i: usize, j: usize| -> f64 {
        if i < n && j < m {
            -a.get(i, j)
        } else {
            -PAD_AFFINITY
        }
    };
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
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
            for j in 0..=k {
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
    let mut pairs: Vec<(usize, usize)> = (1..=k)
        .filter(|j| p[*j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|(i, j)| *i < n && *j < m)
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Hungarian assignment keeping only pairs whose affinity strictly exceeds `tau`.
pub fn match_pairs(a: &Matrix, tau: f64) -> Result<Vec<(usize, usize)>> {
    Ok(hungarian(a)?
        .into_iter()
        .filter(|(i, j)| a.get(*i, *j) > tau)
        .collect())
}

/// Sum of affinities over `pairs`.
pub fn total_affinity(a: &Matrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|(i, j)| a.get(*i, *j)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = Matrix::identity(2);
        assert_eq!(match_pairs(&a, 0.75).unwrap(), vec![(0, 0), (1, 1)]);
        let low = Matrix::filled(3, 2, 0.7);
        assert!(match_pairs(&low, 0.75).unwrap().is_empty());
        let edge = Matrix::filled(1, 1, 0.75);
        assert!(match_pairs(&edge, 0.75).unwrap().is_empty());
        assert!(hungarian(&Matrix::zeros(0, 3)).unwrap().is_empty());
    }

    #[test]
    fn rectangular() {
        let a = Matrix::from_rows(&[vec![0.1, 0.9, 0.3], vec![0.8, 0.85, 0.2]]).unwrap();
        assert_eq!(hungarian(&a).unwrap(), vec![(0, 1), (1, 0)]);
        let t = a.transpose();
        assert_eq!(hungarian(&t).unwrap(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn negative_affinities_still_assigned() {
        let a = Matrix::from_rows(&[vec![-0.4, -0.1], vec![-0.2, -0.3]]).unwrap();
        assert_eq!(hungarian(&a).unwrap(), vec![(0, 1), (1, 0)]);
    }
}
