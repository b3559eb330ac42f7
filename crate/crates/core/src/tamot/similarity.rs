use crate::error::{ensure, Result};
use crate::numerics::{ops, Matrix, Tape, Var};

/// Mean of a tracklet's history features, re-normalized to unit length.
pub fn representative(history: &[Vec<f64>]) -> Result<Vec<f64>> {
    ensure!(!history.is_empty(), "representative of an empty history");
    let d = history[0].len();
    ensure!(
        history.iter().all(|h| h.len() == d),
        "history features have mixed widths"
    );
    let mut mean = vec![0.0; d];
    for h in history {
        for (m, v) in mean.iter_mut().zip(h) {
            *m += v;
        }
    }
    let n = ops::norm(&mean);
    ensure!(n > 0.0, "tracklet representative has zero norm");
    Ok(mean.into_iter().map(|v| v / n).collect())
}

/// The three `N x M` matrices behind an assignment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    /// Bi-softmax term.
    pub s1: Matrix,
    /// Cosine term.
    pub s2: Matrix,
    /// `(s1 + s2) / 2`.
    pub a: Matrix,
}

/// Row softmax (over candidates) and column softmax (over tracklets) of an
/// `N x M` logit matrix.
pub fn bi_softmax(logits: &Matrix) -> Result<(Matrix, Matrix)> {
    let over_candidates = ops::softmax_rows(logits)?;
    let over_tracklets = ops::softmax_rows(&logits.transpose())?.transpose();
    Ok((over_candidates, over_tracklets))
}

/// Assignment matrix between `N` representatives (rows of `reps`) and `M`
/// candidate features (rows of `features`).
///
/// The bi-softmax logits are `scale * f_m . rep_n`; with `scale = 1` they are
/// the raw dot products.
pub fn similarity_matrix(features: &Matrix, reps: &Matrix, scale: f64) -> Result<Similarity> {
    let (m, n) = (features.rows(), reps.rows());
    ensure!(m > 0 && n > 0, "similarity needs at least one candidate and one tracklet");
    ensure!(
        features.cols() == reps.cols(),
        "candidate width {} differs from tracklet width {}",
        features.cols(),
        reps.cols()
    );
    ensure!(scale.is_finite() && scale > 0.0, "similarity scale must be positive");
    for r in 0..n {
        ensure!(ops::norm(reps.row(r)) > 0.0, "tracklet representative {r} has zero norm");
    }
    let dots = reps.matmul(&features.transpose())?;
    let logits = dots.scale(scale);
    let (over_candidates, over_tracklets) = bi_softmax(&logits)?;
    let s1 = over_candidates.add(&over_tracklets)?.scale(0.5);
    let s2 = Matrix::from_fn(n, m, |i, j| {
        ops::cosine(features.row(j), reps.row(i)).unwrap_or(0.0)
    });
    let a = s1.add(&s2)?.scale(0.5);
    Ok(Similarity { s1, s2, a })
}

/// Differentiable assignment matrix for unit-norm `features` (`M x D`) and
/// unit-norm `reps` (`N x D`), where the cosine term reduces to the dot product.
pub(crate) fn similarity_tape(tape: &mut Tape, features: Var, reps: Var, scale: f64) -> Result<Var> {
    let ft = tape.transpose(features)?;
    let dots = tape.matmul(reps, ft)?;
    let logits = tape.scale(dots, scale)?;
    let over_candidates = tape.softmax_rows(logits)?;
    let lt = tape.transpose(logits)?;
    let over_tracklets = tape.softmax_rows(lt)?;
    let over_tracklets = tape.transpose(over_tracklets)?;
    let s1 = tape.add(over_candidates, over_tracklets)?;
    let s1 = tape.scale(s1, 0.5)?;
    let a = tape.add(s1, dots)?;
    tape.scale(a, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_cases() {
        let f = Matrix::row_vector(&[0.6, 0.8]).unwrap();
        let s = similarity_matrix(&f, &f, 1.0).unwrap();
        assert!((s.s1.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((s.a.get(0, 0) - 1.0).abs() < 1e-12);

        let g = Matrix::row_vector(&[1.0, 0.0]).unwrap();
        let s = similarity_matrix(&f, &g, 10.0).unwrap();
        assert!((s.a.get(0, 0) - 0.5 * (1.0 + 0.6)).abs() < 1e-12);
    }

    #[test]
    fn two_candidates_one_tracklet() {
        let f = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = Matrix::row_vector(&[1.0, 0.0]).unwrap();
        let s = similarity_matrix(&f, &g, 1.0).unwrap();
        let soft = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((s.s1.get(0, 0) - 0.5 * (soft + 1.0)).abs() < 1e-12);
        assert!((s.s1.get(0, 0) - 0.9404).abs() < 1e-4);
    }

    #[test]
    fn tape_matches_plain() {
        let f = Matrix::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![0.8, 0.6], vec![0.0, 1.0]]).unwrap();
        let plain = similarity_matrix(&f, &g, 4.0).unwrap();
        let mut tape = Tape::new(crate::numerics::Precision::F64);
        let fv = tape.constant(f).unwrap();
        let gv = tape.constant(g).unwrap();
        let a = similarity_tape(&mut tape, fv, gv, 4.0).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(plain.a.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn representative_mean() {
        let r = representative(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r[0] - h).abs() < 1e-15 && (r[1] - h).abs() < 1e-15);
        assert!(representative(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).is_err());
        assert!(representative(&[]).is_err());
    }
}
