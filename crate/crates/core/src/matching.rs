//! Proximity-based allocation of post-NMS detections to ground truth.
//!
//! Every ground truth takes its nearest still-unassigned detection, with
//! candidate pairs visited in ascending order of the mean squared error
//! between the detection's mean `(y, x, h, w)` and the ground truth's
//! center/size. No score threshold is applied, so low-score but accurate
//! detections are kept for calibration.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anchor::DecodedBox;
use crate::error::{Error, Result};
use crate::geometry::{iou, Corners};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: u32,
    pub bbox: DecodedBox,
    pub score: Option<f64>,
    /// Precomputed image-quality score of the crop around the box.
    pub quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: u32,
    pub corners: Corners,
    pub occlusion: u8,
}

impl GroundTruth {
    pub fn new(image_id: impl Into<String>, class_id: u32, corners: Corners, occlusion: u8) -> Result<Self> {
        let corners = Corners::new(corners.ymin, corners.xmin, corners.ymax, corners.xmax)?;
        Ok(Self {
            image_id: image_id.into(),
            class_id,
            corners,
            occlusion,
        })
    }

    pub fn area(&self) -> f64 {
        self.corners.area()
    }

    pub fn center_size(&self) -> [f64; 4] {
        self.corners.center_size()
    }
}

/// A detection joined to its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub detection: Detection,
    pub ground_truth: GroundTruth,
    /// `|y* − μ|` per coordinate, pixels.
    pub residual: [f64; 4],
    pub iou: f64,
}

impl MatchedPair {
    pub fn new(detection: Detection, ground_truth: GroundTruth) -> Result<Self> {
        if detection.image_id != ground_truth.image_id {
            return Err(Error::input(format!(
                "cannot pair detection from image '{}' with ground truth from '{}'",
                detection.image_id, ground_truth.image_id
            )));
        }
        let target = ground_truth.center_size();
        let mean = detection.bbox.means();
        let residual = std::array::from_fn(|i| (target[i] - mean[i]).abs());
        let iou = iou(&detection.bbox.corners(), &ground_truth.corners);
        Ok(Self {
            detection,
            ground_truth,
            residual,
            iou,
        })
    }

    /// Ground-truth value of each coordinate.
    pub fn target(&self) -> [f64; 4] {
        self.ground_truth.center_size()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub pairs: Vec<MatchedPair>,
    /// Surplus detections with no ground truth left to take.
    pub unmatched_detections: Vec<Detection>,
    /// Ground truths with no detection in their image.
    pub unmatched_ground_truth: Vec<GroundTruth>,
}

/// Mean squared error over the four center/size coordinates.
pub fn box_mse(det: &Detection, gt: &GroundTruth) -> f64 {
    let t = gt.center_size();
    let m = det.bbox.means();
    (0..4).map(|i| (t[i] - m[i]).powi(2)).sum::<f64>() / 4.0
}

fn cmp_f64s(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn det_key(d: &Detection) -> [f64; 11] {
    let m = d.bbox.means();
    let s = d.bbox.sds();
    [
        m[0],
        m[1],
        m[2],
        m[3],
        s[0],
        s[1],
        s[2],
        s[3],
        d.class_id as f64,
        d.score.unwrap_or(f64::NEG_INFINITY),
        d.quality.unwrap_or(f64::NEG_INFINITY),
    ]
}

fn gt_key(g: &GroundTruth) -> [f64; 6] {
    let c = g.corners;
    [c.ymin, c.xmin, c.ymax, c.xmax, g.class_id as f64, g.occlusion as f64]
}

fn cmp_det(a: &Detection, b: &Detection) -> Ordering {
    cmp_f64s(&det_key(a), &det_key(b))
}

fn cmp_gt(a: &GroundTruth, b: &GroundTruth) -> Ordering {
    cmp_f64s(&gt_key(a), &gt_key(b))
}

/// Greedy ascending-MSE allocation, independently per image.
///
/// Ties in MSE are broken by the detection's content (means, sds, class,
/// score, quality, compared lexicographically), then by the ground truth's
/// corners, then by input index. Content-based tie-breaking makes the pair
/// set independent of input order. Class labels do not constrain matching.
pub fn match_by_mse(dets: &[Detection], gts: &[GroundTruth]) -> MatchOutcome {
    let mut by_image: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_image.entry(d.image_id.as_str()).or_default().0.push(i);
    }
    for (j, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().1.push(j);
    }

    let mut out = MatchOutcome::default();
    for (det_idx, gt_idx) in by_image.values() {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(det_idx.len() * gt_idx.len());
        for &i in det_idx {
            for &j in gt_idx {
                candidates.push((box_mse(&dets[i], &gts[j]), i, j));
            }
        }
        candidates.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| cmp_det(&dets[a.1], &dets[b.1]))
                .then_with(|| cmp_gt(&gts[a.2], &gts[b.2]))
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });

        let mut det_used = vec![false; dets.len()];
        let mut gt_used = vec![false; gts.len()];
        let mut image_pairs = Vec::new();
        for (_, i, j) in candidates {
            if det_used[i] || gt_used[j] {
                continue;
            }
            det_used[i] = true;
            gt_used[j] = true;
            image_pairs.push(
                MatchedPair::new(dets[i].clone(), gts[j].clone()).expect("same image by construction"),
            );
        }
        image_pairs.sort_by(|a, b| {
            cmp_gt(&a.ground_truth, &b.ground_truth).then_with(|| cmp_det(&a.detection, &b.detection))
        });
        out.pairs.extend(image_pairs);

        let mut lone_dets: Vec<Detection> = det_idx.iter().filter(|&&i| !det_used[i]).map(|&i| dets[i].clone()).collect();
        lone_dets.sort_by(cmp_det);
        out.unmatched_detections.extend(lone_dets);
        let mut lone_gts: Vec<GroundTruth> = gt_idx.iter().filter(|&&j| !gt_used[j]).map(|&j| gts[j].clone()).collect();
        lone_gts.sort_by(cmp_gt);
        out.unmatched_ground_truth.extend(lone_gts);
    }
    out
}

/// Splits pairs into misdetections (`iou <= t`) and correct detections
/// (`iou > t`).
pub fn split_by_iou_threshold(pairs: &[MatchedPair], t: f64) -> Result<(Vec<&MatchedPair>, Vec<&MatchedPair>)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("iou threshold must be in [0, 1], got {t}")));
    }
    Ok(pairs.iter().partition(|p| p.iou <= t))
}
