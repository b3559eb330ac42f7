use super::ops::{softmax, top_k_select};
use crate::error::{ensure, Result};

/// Sparse expert gate for one token.
///
/// `weights` is dense over all experts; entries outside `active` are exactly
/// zero and the active weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector {
    expert_count: usize,
    active: Vec<usize>,
    weights: Vec<f64>,
}

impl GateVector {
    /// Softmax over all logits, keep the top `k`, renormalize over the kept set.
    pub fn from_logits(logits: &[f64], k: usize) -> Result<Self> {
        let probs = softmax(logits)?;
        let active = top_k_select(&probs, k)?;
        let kept: f64 = active.iter().map(|i| probs[*i]).sum();
        let mut weights = vec![0.0; logits.len()];
        for &i in &active {
            weights[i] = probs[i] / kept;
        }
        Ok(Self {
            expert_count: logits.len(),
            active,
            weights,
        })
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        ensure!(
            weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            "gate weights must be finite and nonnegative"
        );
        let total: f64 = weights.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-6, "gate weights sum to {total}");
        let active = (0..weights.len()).filter(|i| weights[*i] > 0.0).collect();
        Ok(Self {
            expert_count: weights.len(),
            active,
            weights,
        })
    }

    pub fn expert_count(&self) -> usize {
        self.expert_count
    }

    /// Active experts in descending gate order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, expert: usize) -> f64 {
        self.weights[expert]
    }

    pub fn is_active(&self, expert: usize) -> bool {
        self.weights[expert] > 0.0 || self.active.contains(&expert)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_pick_lowest_indices() {
        let g = GateVector::from_logits(&[0.3; 4], 2).unwrap();
        assert_eq!(g.active(), &[0, 1]);
        assert_eq!(g.weights(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn renormalized_pair() {
        let g = GateVector::from_logits(&[2.0, 1.0, 0.5, 0.1], 2).unwrap();
        assert_eq!(g.active(), &[0, 1]);
        assert!((g.weight(0) - 0.7311).abs() < 1e-4);
        assert!((g.weight(1) - 0.2689).abs() < 1e-4);
        assert_eq!(g.weight(2), 0.0);
        assert_eq!(g.weight(3), 0.0);
    }

    #[test]
    fn full_activation_is_plain_softmax() {
        let logits = [0.4, -1.0, 2.0];
        let g = GateVector::from_logits(&logits, 3).unwrap();
        let s = softmax(&logits).unwrap();
        for (a, b) in g.weights().iter().zip(&s) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn new_validates_sum() {
        assert!(GateVector::new(vec![0.5, 0.4]).is_err());
        assert!(GateVector::new(vec![0.5, 0.5]).is_ok());
    }
}
