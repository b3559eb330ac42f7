use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::Matrix;
use crate::error::{ensure, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    ensure!(!logits.is_empty(), "softmax of an empty vector");
    ensure!(
        logits.iter().all(|x| x.is_finite()),
        "softmax input must be finite"
    );
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    ensure!(m.cols() > 0, "softmax over zero columns");
    let mut out = m.clone();
    for r in 0..m.rows() {
        let s = softmax(m.row(r))?;
        out.row_mut(r).copy_from_slice(&s);
    }
    Ok(out)
}

/// Exact GELU, `x * Phi(x)` with the Gaussian CDF taken from `erf`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu_scalar`]: `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| gelu_scalar(*v)).collect()
}

/// Indices of the `k` largest scores, in descending score order.
///
/// Ties go to the lower index.
pub fn top_k_select(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    ensure!(
        k >= 1 && k <= scores.len(),
        "top-k with k={k} over {} scores",
        scores.len()
    );
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps ascending index order among equal scores
    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    idx.truncate(k);
    Ok(idx)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    ensure!(u.len() == v.len(), "cosine of vectors with different lengths");
    let (nu, nv) = (norm(u), norm(v));
    ensure!(nu > 0.0 && nv > 0.0, "cosine of a zero-norm vector");
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn mse(a: &Matrix, b: &Matrix) -> Result<f64> {
    let diff = a.sub(b)?;
    if diff.is_empty() {
        return Ok(0.0);
    }
    Ok(diff.data().iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

/// Scaled dot-product attention, `softmax(Q K^T / sqrt(d)) V` row by row.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    ensure!(
        q.cols() == k.cols(),
        "attention query width {} != key width {}",
        q.cols(),
        k.cols()
    );
    ensure!(
        k.rows() == v.rows(),
        "attention has {} keys but {} values",
        k.rows(),
        v.rows()
    );
    ensure!(k.rows() > 0, "attention over an empty key set");
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul(&k.transpose())?.scale(scale);
    softmax_rows(&scores)?.matmul(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Phi(x) by composite Simpson quadrature of the Gaussian density from 0.
    fn simpson_cdf(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        let mut acc = pdf(0.0) + pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * pdf(i as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 0.0]).unwrap();
        assert!((big[0] - 1.0).abs() < 1e-12 && big[1] < 1e-300 + 1e-12);
        assert!(big.iter().all(|x| x.is_finite()));
        // e^2 / (e^2 + e^1) evaluated by hand: 0.731058578630...
        let s = softmax(&[2.0, 1.0]).unwrap();
        assert!((s[0] - 0.7311).abs() < 1e-4);
        assert!((s[1] - 0.2689).abs() < 1e-4);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(12.0) - 12.0).abs() < 1e-12);
        let oracle = 1.0 * simpson_cdf(1.0);
        assert!((oracle - 0.8413).abs() < 1e-4);
        assert!((gelu_scalar(1.0) - oracle).abs() < 1e-9);
        assert!((gelu_scalar(1.0) - 0.8413).abs() < 1e-4);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for i in -40..=40 {
            let x = i as f64 * 0.15;
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn top_k_examples() {
        let mut s = top_k_select(&[0.1, 0.9, 0.5, 0.5], 2).unwrap();
        s.sort();
        assert_eq!(s, vec![1, 2]);
        let mut all = top_k_select(&[3.0, 1.0, 2.0], 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert_eq!(top_k_select(&[3.0, 1.0, 2.0], 1).unwrap(), vec![0]);
        assert!(top_k_select(&[1.0], 0).is_err());
        assert!(top_k_select(&[1.0], 2).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.7071).abs() < 1e-4);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = Matrix::filled(2, 3, 1.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &Matrix::zeros(2, 3)).unwrap(), 1.0);
        let x = Matrix::row_vector(&[1.0, 2.0]).unwrap();
        assert_eq!(mse(&x, &Matrix::zeros(1, 2)).unwrap(), 2.5);
        assert!(mse(&x, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn attention_examples() {
        let v = Matrix::row_vector(&[3.0, -1.0]).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.2, 0.7]]).unwrap();
        let k = Matrix::row_vector(&[0.5, 0.5]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        assert_eq!(out.row(0), v.row(0));
        assert_eq!(out.row(1), v.row(0));

        // zero logits: uniform weights give the column mean of V
        let q = Matrix::row_vector(&[0.0, 1.0]).unwrap();
        let k = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let v = Matrix::from_rows(&[vec![1.0, 4.0], vec![3.0, 0.0]]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        assert!((out.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((out.get(0, 1) - 2.0).abs() < 1e-12);

        // softmax([1/sqrt 2, 0]) = [0.66976, 0.33024]
        let q = Matrix::row_vector(&[1.0, 0.0]).unwrap();
        let id = Matrix::identity(2);
        let out = attention(&q, &id, &id).unwrap();
        assert!((out.get(0, 0) - 0.6698).abs() < 1e-3);
        assert!((out.get(0, 1) - 0.3302).abs() < 1e-3);

        assert!(attention(&q, &Matrix::zeros(2, 3), &id).is_err());
        assert!(attention(&q, &id, &Matrix::zeros(3, 2)).is_err());
    }
}
