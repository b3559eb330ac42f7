use super::geometry::BBox;
use crate::error::{ensure, Result};
use crate::numerics::Matrix;

/// Token features laid out on their spatial grid, one row per cell
/// (row-major over `rows x cols`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Matrix,
}

impl FeatureMap {
    pub fn new(rows: usize, cols: usize, values: Matrix) -> Result<Self> {
        ensure!(
            rows * cols == values.rows() && rows > 0 && cols > 0,
            "feature map {}x{} does not match {} token rows",
            rows,
            cols,
            values.rows()
        );
        Ok(Self { rows, cols, values })
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

/// Bilinear weights that sample `g x g` bin centers of `b` from a
/// `rows x cols` grid; row `i * g + j` of the result is bin `(i, j)`.
///
/// Cell `(r, c)` is centered at normalized `((c + 0.5) / cols, (r + 0.5) / rows)`;
/// samples outside the grid clamp to the border.
pub fn roi_sampling_matrix(rows: usize, cols: usize, b: &BBox, g: usize) -> Result<Matrix> {
    ensure!(b.w > 0.0 && b.h > 0.0, "degenerate RoI box");
    ensure!(g > 0, "RoI grid must be positive");
    ensure!(rows > 0 && cols > 0, "RoI over an empty feature map");
    let mut s = Matrix::zeros(g * g, rows * cols);
    let axis = |pos: f64, n: usize| -> [(usize, f64); 2] {
        let u = (pos * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = u.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let t = u - lo as f64;
        [(lo, 1.0 - t), (hi, t)]
    };
    for i in 0..g {
        let y = b.y0() + b.h * (i as f64 + 0.5) / g as f64;
        for j in 0..g {
            let x = b.x0() + b.w * (j as f64 + 0.5) / g as f64;
            let bin = i * g + j;
            for (r, wy) in axis(y, rows) {
                for (c, wx) in axis(x, cols) {
                    let k = r * cols + c;
                    s.set(bin, k, s.get(bin, k) + wy * wx);
                }
            }
        }
    }
    Ok(s)
}

/// RoI-Align with one bilinear sample per bin center; output is `g^2 x C`.
pub fn roi_align(map: &FeatureMap, b: &BBox, g: usize) -> Result<Matrix> {
    roi_sampling_matrix(map.rows, map.cols, b, g)?.matmul(&map.values)
}
