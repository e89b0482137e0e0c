//! Run-length encoded binary masks, instance IoU and the per-image IoU score.
//!
//! Runs are row-major and alternate background/foreground, starting with a
//! background run. The first run may be zero so that a mask can start with
//! foreground; every later run is strictly positive. Serialized as
//! `{"size":[h,w],"counts":[r0,r1,...]}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A per-instance foreground mask on a fixed `height x width` raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleRecord", into = "RleRecord")]
pub struct BinaryMask {
    height: u32,
    width: u32,
    runs: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RleRecord {
    size: [u32; 2],
    counts: Vec<u32>,
}

impl TryFrom<RleRecord> for BinaryMask {
    type Error = Error;

    fn try_from(rec: RleRecord) -> Result<Self> {
        BinaryMask::from_runs(rec.size[0], rec.size[1], rec.counts)
    }
}

impl From<BinaryMask> for RleRecord {
    fn from(m: BinaryMask) -> Self {
        RleRecord {
            size: [m.height, m.width],
            counts: m.runs,
        }
    }
}

impl BinaryMask {
    /// Builds a mask from explicit runs, validating the run invariants.
    pub fn from_runs(height: u32, width: u32, runs: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "raster {height}x{width} is empty"
            )));
        }
        if runs.is_empty() {
            return Err(Error::InvalidValue("run list is empty".into()));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::InvalidValue(format!(
                "zero-length run at index {}",
                pos + 1
            )));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        let pixels = height as u64 * width as u64;
        if total != pixels {
            return Err(Error::InvalidValue(format!(
                "runs sum to {total}, raster has {pixels} pixels"
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            runs,
        })
    }

    /// All-background mask.
    pub fn empty(height: u32, width: u32) -> Result<Self> {
        Self::from_runs(height, width, vec![height * width])
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn num_pixels(&self) -> u64 {
        self.height as u64 * self.width as u64
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() < 2
    }

    pub fn area_fraction(&self) -> f64 {
        self.area() as f64 / self.num_pixels() as f64
    }

    /// Half-open `[start, end)` foreground intervals over the flattened raster.
    pub fn foreground_intervals(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r as u64;
            (i % 2 == 1).then_some((start, pos))
        })
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Foreground pixels shared with `other`, computed by merging runs.
    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64> {
        self.check_shape(other)?;
        let a: Vec<(u64, u64)> = self.foreground_intervals().collect();
        let b: Vec<(u64, u64)> = other.foreground_intervals().collect();
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                total += hi - lo;
            }
            if a[i].1 <= b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(total)
    }

    /// Number of unit pixel edges separating foreground from background,
    /// counting the raster border as background.
    pub fn perimeter(&self) -> u64 {
        let (h, w) = (self.height as usize, self.width as usize);
        let px = decode_rle(self);
        let at = |r: isize, c: isize| -> bool {
            r >= 0
                && c >= 0
                && (r as usize) < h
                && (c as usize) < w
                && px[r as usize * w + c as usize]
        };
        let mut edges = 0u64;
        for r in 0..h as isize {
            for c in 0..w as isize {
                if at(r, c) {
                    edges += [(-1, 0), (1, 0), (0, -1), (0, 1)]
                        .iter()
                        .filter(|(dr, dc)| !at(r + dr, c + dc))
                        .count() as u64;
                }
            }
        }
        edges
    }
}

/// Encodes a row-major boolean raster.
pub fn encode_rle(height: u32, width: u32, pixels: &[bool]) -> Result<BinaryMask> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "raster {height}x{width} is empty"
        )));
    }
    let n = height as usize * width as usize;
    if pixels.len() != n {
        return Err(Error::Dimension(format!(
            "raster {height}x{width} needs {n} pixels, got {}",
            pixels.len()
        )));
    }
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u32;
    for &p in pixels {
        if p != current {
            runs.push(count);
            count = 0;
            current = p;
        }
        count += 1;
    }
    runs.push(count);
    Ok(BinaryMask {
        height,
        width,
        runs,
    })
}

/// Encodes a 2D grid given as rows.
pub fn encode_grid(rows: &[Vec<bool>]) -> Result<BinaryMask> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Dimension("ragged raster rows".into()));
    }
    let flat: Vec<bool> = rows.iter().flatten().copied().collect();
    encode_rle(height as u32, width as u32, &flat)
}

pub fn decode_rle(mask: &BinaryMask) -> Vec<bool> {
    let mut out = Vec::with_capacity(mask.num_pixels() as usize);
    for (i, &r) in mask.runs.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    out
}

/// Intersection over union of two masks, computed from exact integer counts.
/// Two empty masks have IoU 0.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Per-image IoU score: the mean of its per-object IoUs.
pub fn image_iou_score(per_object_ious: &[f64]) -> Result<f64> {
    if per_object_ious.is_empty() {
        return Err(Error::Empty(
            "an image needs at least one object to be scored",
        ));
    }
    if let Some(v) = per_object_ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidValue(format!("IoU {v} outside [0, 1]")));
    }
    Ok(per_object_ious.iter().sum::<f64>() / per_object_ious.len() as f64)
}

/// A ground-truth instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub class_id: u32,
    pub mask: BinaryMask,
}

/// A predicted instance. `source` links a surrogate prediction to the
/// ground-truth instance it was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    pub class_id: u32,
    pub mask: BinaryMask,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
}

impl InstancePrediction {
    pub fn new(class_id: u32, mask: BinaryMask, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidValue(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(InstancePrediction {
            class_id,
            mask,
            confidence,
            predicted_iou: None,
            source: None,
        })
    }
}

/// Predicted instances of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePrediction {
    pub image_id: crate::ImageId,
    pub instances: Vec<InstancePrediction>,
}
