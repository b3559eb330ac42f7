use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Axis-aligned box in normalized image coordinates (center, size).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        ensure!(
            [cx, cy, w, h].iter().all(|v| v.is_finite()),
            "box has non-finite coordinates"
        );
        ensure!(
            (0.0..=1.0).contains(&cx) && (0.0..=1.0).contains(&cy),
            "box center ({cx}, {cy}) outside the unit square"
        );
        ensure!(
            w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0,
            "box size ({w}, {h}) outside (0, 1]"
        );
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let ih = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Serializes a box as `[cx, cy, w, h]`.
pub(crate) mod box_array {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use super::BBox;

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(b.to_array())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        let v = <[f64; 4]>::deserialize(d)?;
        BBox::from_array(v).map_err(D::Error::custom)
    }
}

/// Binary mask on a fixed `height x width` raster covering the whole image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            "mask data length {} does not match {height}x{width}",
            data.len()
        );
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    /// Pixels whose centers fall inside `b`.
    pub fn from_box(b: &BBox, height: usize, width: usize) -> Self {
        let mut m = Self::empty(height, width);
        for y in 0..height {
            let py = (y as f64 + 0.5) / height as f64;
            if py < b.y0() || py > b.y1() {
                continue;
            }
            for x in 0..width {
                let px = (x as f64 + 0.5) / width as f64;
                if px >= b.x0() && px <= b.x1() {
                    m.data[y * width + x] = true;
                }
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    /// Tight normalized box around the set pixels, `None` for an empty mask.
    pub fn tight_box(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            return None;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        BBox::from_corners(
            x0 as f64 / w,
            y0 as f64 / h,
            (x1 + 1) as f64 / w,
            (y1 + 1) as f64 / h,
        )
        .ok()
    }

    /// Average-pools the crop under `b` into `g x g` bins, row-major.
    ///
    /// A bin containing no pixel center takes the pixel under its center.
    pub fn pool(&self, b: &BBox, g: usize) -> Vec<f64> {
        let mut out = vec![0.0; g * g];
        if self.height == 0 || self.width == 0 {
            return out;
        }
        let (h, w) = (self.height as f64, self.width as f64);
        for i in 0..g {
            let by0 = b.y0() + b.h * i as f64 / g as f64;
            let by1 = b.y0() + b.h * (i + 1) as f64 / g as f64;
            for j in 0..g {
                let bx0 = b.x0() + b.w * j as f64 / g as f64;
                let bx1 = b.x0() + b.w * (j + 1) as f64 / g as f64;
                let ys = pixel_range(by0, by1, h, self.height);
                let xs = pixel_range(bx0, bx1, w, self.width);
                let (mut sum, mut n) = (0.0, 0usize);
                for y in ys.clone() {
                    for x in xs.clone() {
                        sum += f64::from(u8::from(self.get(y, x)));
                        n += 1;
                    }
                }
                out[i * g + j] = if n > 0 {
                    sum / n as f64
                } else {
                    let y = (((by0 + by1) / 2.0 * h).floor().max(0.0) as usize).min(self.height - 1);
                    let x = (((bx0 + bx1) / 2.0 * w).floor().max(0.0) as usize).min(self.width - 1);
                    f64::from(u8::from(self.get(y, x)))
                };
            }
        }
        out
    }

    /// Run lengths alternating zero/one, starting with the (possibly empty)
    /// zero run, row-major.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &v in &self.data {
            if v == current {
                run += 1;
            } else {
                counts.push(run);
                current = v;
                run = 1;
            }
        }
        if run > 0 || counts.is_empty() {
            counts.push(run);
        }
        counts
    }

    pub fn from_rle(counts: &[u32], height: usize, width: usize) -> Result<Self> {
        let total: u64 = counts.iter().map(|c| u64::from(*c)).sum();
        ensure!(
            total == (height * width) as u64,
            "run lengths cover {total} pixels, mask has {}",
            height * width
        );
        let mut data = Vec::with_capacity(height * width);
        for (i, c) in counts.iter().enumerate() {
            data.extend(std::iter::repeat_n(i % 2 == 1, *c as usize));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

/// Pixel indices whose centers lie in `[lo, hi)` on an axis of `n` pixels.
fn pixel_range(lo: f64, hi: f64, scale: f64, n: usize) -> std::ops::Range<usize> {
    let start = (lo * scale - 0.5).ceil().max(0.0) as usize;
    let end = ((hi * scale - 0.5).ceil().max(0.0) as usize).min(n);
    start.min(end)..end
}
