use serde::{Deserialize, Serialize};

use super::Anchor;
use crate::geometry::{iou, Corners};
use crate::error::{Error, Result};

/// Multi-level anchor layout.
///
/// Each level with stride `s` tiles the input with `(I_H/s) x (I_W/s)`
/// cells; every cell holds `scales_per_cell * aspect_ratios.len()` anchors.
/// An anchor's base size is `base_scale * s * 2^(i / scales_per_cell)`
/// for scale index `i`, and an aspect ratio `r = w / h` yields
/// `h = size / sqrt(r)`, `w = size * sqrt(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGridConfig {
    pub image_height: u32,
    pub image_width: u32,
    pub strides: Vec<u32>,
    pub scales_per_cell: u32,
    pub aspect_ratios: Vec<f64>,
    pub base_scale: f64,
}

impl Default for AnchorGridConfig {
    fn default() -> Self {
        Self {
            image_height: 512,
            image_width: 1024,
            strides: vec![8, 16, 32, 64, 128],
            scales_per_cell: 3,
            aspect_ratios: vec![0.5, 1.0, 2.0],
            base_scale: 4.0,
        }
    }
}

impl AnchorGridConfig {
    pub fn anchors_per_cell(&self) -> usize {
        self.scales_per_cell as usize * self.aspect_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if self.strides.is_empty() {
            return Err(Error::config("at least one stride is required"));
        }
        for &s in &self.strides {
            if s == 0 || self.image_height % s != 0 || self.image_width % s != 0 {
                return Err(Error::config(format!(
                    "stride {s} does not divide image size {}x{}",
                    self.image_height, self.image_width
                )));
            }
        }
        if self.anchors_per_cell() == 0 {
            return Err(Error::config("scales_per_cell x aspect_ratios must be > 0"));
        }
        if self.aspect_ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::config("aspect ratios must be positive"));
        }
        if !(self.base_scale.is_finite() && self.base_scale > 0.0) {
            return Err(Error::config("base_scale must be positive"));
        }
        Ok(())
    }

    /// `A_cell * Σ_levels I_H * I_W / stride²`.
    pub fn anchor_count(&self) -> usize {
        let pixels = self.image_height as usize * self.image_width as usize;
        self.anchors_per_cell()
            * self
                .strides
                .iter()
                .map(|&s| pixels / (s as usize * s as usize))
                .sum::<usize>()
    }
}

/// Anchors in level-major, then row-major, then per-cell order (scale
/// major, ratio minor). The order is part of the detections file contract.
pub fn build_anchor_grid(config: &AnchorGridConfig) -> Result<Vec<Anchor>> {
    config.validate()?;
    let mut anchors = Vec::with_capacity(config.anchor_count());
    for &stride in &config.strides {
        let s = stride as f64;
        let rows = config.image_height / stride;
        let cols = config.image_width / stride;
        let mut shapes = Vec::with_capacity(config.anchors_per_cell());
        for i in 0..config.scales_per_cell {
            let size = config.base_scale * s * 2f64.powf(i as f64 / config.scales_per_cell as f64);
            for &ratio in &config.aspect_ratios {
                let r = ratio.sqrt();
                shapes.push((size / r, size * r));
            }
        }
        for row in 0..rows {
            let y = (row as f64 + 0.5) * s;
            for col in 0..cols {
                let x = (col as f64 + 0.5) * s;
                for &(h, w) in &shapes {
                    anchors.push(Anchor { y, x, h, w });
                }
            }
        }
    }
    Ok(anchors)
}

/// Index into [`build_anchor_grid`]'s output of the anchor with the highest
/// IoU against `target`. Only the 3x3 cells around the target center on
/// each level are searched; ties keep the lowest index.
pub fn best_anchor(config: &AnchorGridConfig, anchors: &[Anchor], target: &Corners) -> Result<usize> {
    if anchors.len() != config.anchor_count() {
        return Err(Error::input(format!(
            "anchor list has {} entries but the config describes {}",
            anchors.len(),
            config.anchor_count()
        )));
    }
    let [cy, cx, _, _] = target.center_size();
    let per_cell = config.anchors_per_cell();
    let mut offset = 0usize;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for &stride in &config.strides {
        let rows = (config.image_height / stride) as i64;
        let cols = (config.image_width / stride) as i64;
        let r0 = ((cy / stride as f64).floor() as i64).clamp(0, rows - 1);
        let c0 = ((cx / stride as f64).floor() as i64).clamp(0, cols - 1);
        for r in (r0 - 1).max(0)..=(r0 + 1).min(rows - 1) {
            for c in (c0 - 1).max(0)..=(c0 + 1).min(cols - 1) {
                let base = offset + (r * cols + c) as usize * per_cell;
                for i in base..base + per_cell {
                    let v = iou(&anchors[i].corners(), target);
                    if v > best.0 || (v == best.0 && i < best.1) {
                        best = (v, i);
                    }
                }
            }
        }
        offset += (rows * cols) as usize * per_cell;
    }
    Ok(best.1)
}
