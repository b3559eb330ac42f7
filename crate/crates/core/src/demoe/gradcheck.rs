use serde::Serialize;

use crate::error::Result;
use crate::numerics::Gradients;
use crate::params::ParamBlocks;

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub frozen: bool,
    pub entries: usize,
    /// For frozen blocks this is the largest analytic magnitude, which must be 0.
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&BlockCheck> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_error <= self.tolerance) || (b.frozen && b.max_rel_error != 0.0))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .filter(|b| !b.frozen)
            .fold(0.0, |m, b| m.max(b.max_rel_error))
    }
}

fn perturbed<P: ParamBlocks + Clone>(p: &P, block: usize, index: usize, delta: f64) -> P {
    let mut q = p.clone();
    let mut b = 0;
    q.visit_mut("", &mut |_, m, _| {
        if b == block {
            m.data_mut()[index] += delta;
        }
        b += 1;
    });
    q
}

/// Compares analytic gradients from `loss_fn` with central differences on
/// every trainable block. Gradient names must match the `visit("")` names.
pub fn grad_check<P, F>(params: &P, loss_fn: F, epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    P: ParamBlocks + Clone,
    F: Fn(&P) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = loss_fn(params)?;
    let mut layout = Vec::new();
    params.visit("", &mut |name, m, frozen| layout.push((name.to_string(), m.len(), frozen)));

    let mut blocks = Vec::with_capacity(layout.len());
    for (bi, (name, len, frozen)) in layout.into_iter().enumerate() {
        let grad = analytic.get(&name);
        let a_at = |i: usize| grad.map_or(0.0, |g| g.data()[i]);
        let max_abs_analytic = (0..len).fold(0.0f64, |m, i| m.max(a_at(i).abs()));
        let max_rel_error = if frozen {
            max_abs_analytic
        } else {
            let mut worst = 0.0f64;
            for i in 0..len {
                let (fp, _) = loss_fn(&perturbed(params, bi, i, epsilon))?;
                let (fm, _) = loss_fn(&perturbed(params, bi, i, -epsilon))?;
                let numeric = (fp - fm) / (2.0 * epsilon);
                let a = a_at(i);
                let denom = 1.0f64.max(a.abs()).max(numeric.abs());
                worst = worst.max((a - numeric).abs() / denom);
            }
            worst
        };
        blocks.push(BlockCheck {
            name,
            frozen,
            entries: len,
            max_rel_error,
            max_abs_analytic,
        });
    }
    Ok(GradCheckReport {
        epsilon,
        tolerance,
        blocks,
    })
}
