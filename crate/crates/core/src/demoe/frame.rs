use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::Matrix;

/// Image stored height x width x channels, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == height * width * channels,
            "frame data length {} does not match {height}x{width}x{channels}",
            data.len()
        );
        ensure!(data.iter().all(|x| x.is_finite()), "frame has non-finite pixels");
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Token grid size `(rows, cols)` for patch size `p`.
    pub fn grid(&self, p: usize) -> Result<(usize, usize)> {
        ensure!(p > 0, "patch size must be positive");
        ensure!(
            self.height % p == 0 && self.width % p == 0 && self.height > 0 && self.width > 0,
            "frame {}x{} is not divisible by patch size {p}",
            self.height,
            self.width
        );
        Ok((self.height / p, self.width / p))
    }

    /// One row per `p x p` patch (row-major over the patch grid), columns
    /// ordered by (patch row, patch col, channel).
    pub fn patchify(&self, p: usize) -> Result<Matrix> {
        let (gh, gw) = self.grid(p)?;
        let dim = p * p * self.channels;
        let mut data = Vec::with_capacity(gh * gw * dim);
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..p {
                    for dx in 0..p {
                        for c in 0..self.channels {
                            data.push(self.get(py * p + dy, px * p + dx, c));
                        }
                    }
                }
            }
        }
        Matrix::new(gh * gw, dim, data)
    }
}

/// Which auxiliary modality accompanies RGB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModalityPair {
    #[serde(rename = "rgb")]
    RgbOnly,
    #[serde(rename = "rgb-t")]
    RgbThermal,
    #[serde(rename = "rgb-d")]
    RgbDepth,
    #[serde(rename = "rgb-e")]
    RgbEvent,
}

impl ModalityPair {
    pub const ALL: [ModalityPair; 4] = [
        ModalityPair::RgbOnly,
        ModalityPair::RgbThermal,
        ModalityPair::RgbDepth,
        ModalityPair::RgbEvent,
    ];

    pub fn class_index(self) -> usize {
        match self {
            ModalityPair::RgbOnly => 0,
            ModalityPair::RgbThermal => 1,
            ModalityPair::RgbDepth => 2,
            ModalityPair::RgbEvent => 3,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn has_auxiliary(self) -> bool {
        self != ModalityPair::RgbOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalityPair::RgbOnly => "rgb",
            ModalityPair::RgbThermal => "rgb-t",
            ModalityPair::RgbDepth => "rgb-d",
            ModalityPair::RgbEvent => "rgb-e",
        }
    }
}

/// RGB frame plus the optional auxiliary frame of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub rgb: Frame,
    pub tde: Option<Frame>,
    pub modality: ModalityPair,
}

impl FramePair {
    pub fn new(rgb: Frame, tde: Option<Frame>, modality: ModalityPair) -> Result<Self> {
        ensure!(
            tde.is_some() == modality.has_auxiliary(),
            "modality {} does not match the presence of an auxiliary frame",
            modality.name()
        );
        if let Some(t) = &tde {
            ensure!(
                (t.height, t.width, t.channels) == (rgb.height, rgb.width, rgb.channels),
                "auxiliary frame shape differs from the RGB frame"
            );
        }
        Ok(Self { rgb, tde, modality })
    }

    pub fn rgb_only(rgb: Frame) -> Self {
        Self {
            rgb,
            tde: None,
            modality: ModalityPair::RgbOnly,
        }
    }

    /// The frame fed to the auxiliary branch: the RGB copy when absent.
    pub fn tde_or_rgb(&self) -> &Frame {
        self.tde.as_ref().unwrap_or(&self.rgb)
    }
}
