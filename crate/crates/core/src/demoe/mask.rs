use rand::seq::index::sample;
use rand::Rng;

use crate::error::{ensure, Result};
use crate::numerics::rng::{stream_rng, streams};

/// Which modality branch a mask applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Rgb,
    Tde,
}

/// Token rows replaced by the mask token, one list per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub branch: Branch,
    pub rows: Vec<Vec<usize>>,
}

impl MaskPlan {
    pub fn none(layers: usize) -> Self {
        Self {
            branch: Branch::Rgb,
            rows: vec![Vec::new(); layers],
        }
    }

    /// Draws `ceil(ratio * tokens)` distinct rows per layer of one branch.
    ///
    /// Without an auxiliary frame only the RGB branch can be masked.
    pub fn sample(
        seed: u64,
        layers: usize,
        tokens: usize,
        ratio: f64,
        tde_present: bool,
    ) -> Result<Self> {
        ensure!(
            (0.0..=1.0).contains(&ratio),
            "mask ratio {ratio} outside [0, 1]"
        );
        let mut rng = stream_rng(seed, streams::MASKING);
        let branch = if tde_present && rng.random::<bool>() {
            Branch::Tde
        } else {
            Branch::Rgb
        };
        let count = ((ratio * tokens as f64).ceil() as usize).min(tokens);
        let rows = (0..layers)
            .map(|_| {
                let mut r = sample(&mut rng, tokens, count).into_vec();
                r.sort_unstable();
                r
            })
            .collect();
        Ok(Self { branch, rows })
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }
}
