//! In-memory slice and mask types plus the geometric/intensity preprocessing
//! applied before a slice reaches the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;
pub const NUM_CLASSES: usize = 3;

/// Standard-deviation guard for [`zscore_normalize`].
pub const ZSCORE_EPS: f64 = 1e-8;

/// A single 2D intensity slice, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSlice {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ImageSlice {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} slice",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("slice contains non-finite values".into()));
        }
        Ok(Self { height, width, values })
    }

    /// Like [`ImageSlice::new`] but also enforces the minimum side length.
    pub fn checked(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidInput(format!(
                "slice {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        Self::new(height, width, values)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Per-pixel class map with labels in `{0, 1, 2}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} mask",
                labels.len()
            )));
        }
        if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidLabel {
                value: labels[index],
                index,
            });
        }
        Ok(Self { height, width, labels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Binary indicator of `class`.
    pub fn class_indicator(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }
}

/// Per-slice z-score standardization with population standard deviation.
///
/// A constant slice (std below [`ZSCORE_EPS`]) maps to all zeros.
pub fn zscore_normalize(slice: &ImageSlice) -> Result<ImageSlice> {
    if slice.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("slice contains non-finite values".into()));
    }
    let n = slice.values.len() as f64;
    let mean = slice.values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = slice
        .values
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let values = if std < ZSCORE_EPS {
        vec![0.0; slice.values.len()]
    } else {
        slice.values.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
    };
    Ok(ImageSlice {
        height: slice.height,
        width: slice.width,
        values,
    })
}

/// Offsets mapping a centered `target` window onto an axis of length `len`.
/// Returns `(src_start, dst_start, count)`.
fn center_window(len: usize, target: usize) -> (usize, usize, usize) {
    if len >= target {
        ((len - target) / 2, 0, target)
    } else {
        (0, (target - len) / 2, len)
    }
}

fn recenter<T: Copy>(src: &[T], h: usize, w: usize, target: usize, fill: T) -> Vec<T> {
    let (sr, dr, nr) = center_window(h, target);
    let (sc, dc, nc) = center_window(w, target);
    let mut out = vec![fill; target * target];
    for r in 0..nr {
        let s = (sr + r) * w + sc;
        let d = (dr + r) * target + dc;
        out[d..d + nc].copy_from_slice(&src[s..s + nc]);
    }
    out
}

/// Centered crop or symmetric zero-pad to a `target`×`target` square.
///
/// For odd size differences the crop window starts at `(len - target) / 2`
/// and the extra padding row/column goes to the bottom/right.
pub fn crop_or_pad(
    slice: &ImageSlice,
    mask: Option<&LabelMask>,
    target: usize,
) -> Result<(ImageSlice, Option<LabelMask>)> {
    if target < MIN_SIDE {
        return Err(Error::InvalidInput(format!("crop target {target} is below {MIN_SIDE}")));
    }
    if let Some(m) = mask {
        if m.height != slice.height || m.width != slice.width {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs slice {}x{}",
                m.height, m.width, slice.height, slice.width
            )));
        }
    }
    let image = ImageSlice {
        height: target,
        width: target,
        values: recenter(&slice.values, slice.height, slice.width, target, 0.0),
    };
    let mask = mask.map(|m| resize_mask_to(m, target, target));
    Ok((image, mask))
}

/// Center a mask into an arbitrary `height`×`width` frame (crop or pad with 0).
pub fn resize_mask_to(mask: &LabelMask, height: usize, width: usize) -> LabelMask {
    let (sr, dr, nr) = center_window(mask.height, height);
    let (sc, dc, nc) = center_window(mask.width, width);
    let mut labels = vec![0u8; height * width];
    for r in 0..nr {
        let s = (sr + r) * mask.width + sc;
        let d = (dr + r) * width + dc;
        labels[d..d + nc].copy_from_slice(&mask.labels[s..s + nc]);
    }
    LabelMask { height, width, labels }
}
