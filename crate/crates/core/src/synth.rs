//! Synthetic detection scenes with known heteroscedastic noise.
//!
//! Each object's true noise sd per coordinate is
//!
//! ```text
//! σ_true = base_c · (area / reference_area)^(−α) · occlusion_multiplier^level
//!          · (1 + quality_coupling · quality) · jitter [· object size]
//! ```
//!
//! where the object size factor (height for y/h, width for x/w) applies
//! when `size_proportional` is set and `jitter` is a per-object log-normal
//! factor. The detection mean is the ground-truth center/size plus
//! `N(0, σ_true²)` noise. The reported sd is
//!
//! ```text
//! σ_reported = size · (σ_true / size)^γ / k · exp(reported_noise · z)
//! ```
//!
//! which reduces to `σ_true / k` for `γ = 1` and no reporting noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anchor::{best_anchor, build_anchor_grid, encode, AnchorGridConfig, DecodedBox, GaussianBox4};
use crate::datio::{
    write_anchor_config, write_anchor_detections, write_detections, write_ground_truth, write_truth,
    AnchorDetection, CoordinateSpace, Profile, TruthRecord,
};
use crate::error::{Error, Result};
use crate::geometry::{Coord, Corners};
use crate::matching::{Detection, GroundTruth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// σ of `(y, x, h, w)` at the reference area, for an unoccluded object
    /// of zero quality. Pixels, or a fraction of the object size when
    /// `size_proportional` is set.
    pub base_sigma: [f64; 4],
    pub reference_area: f64,
    /// α in `σ ∝ area^(−α)`.
    pub area_exponent: f64,
    /// σ is multiplied by this once per occlusion level.
    pub occlusion_multiplier: f64,
    pub quality_coupling: f64,
    pub size_proportional: bool,
    /// Sd of the per-object log-normal jitter of σ_true.
    pub jitter: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            base_sigma: [2.0, 2.0, 2.0, 2.0],
            reference_area: 64.0 * 64.0,
            area_exponent: 0.0,
            occlusion_multiplier: 1.0,
            quality_coupling: 0.0,
            size_proportional: false,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Miscalibration {
    /// Global `k`; `k > 1` under-reports σ, `k < 1` over-reports it.
    pub k: f64,
    /// Per-class `k`, overriding the global value where present.
    pub k_per_class: Vec<f64>,
    /// Exponent γ on the relative true σ.
    pub gamma: f64,
    /// Sd of the log-normal noise on the reported σ.
    pub reported_noise: f64,
}

impl Default for Miscalibration {
    fn default() -> Self {
        Self {
            k: 1.0,
            k_per_class: Vec::new(),
            gamma: 1.0,
            reported_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub objects_per_image: usize,
    /// Relative class frequencies; the class count is the length.
    pub class_weights: Vec<f64>,
    pub image_height: u32,
    pub image_width: u32,
    /// Object side `sqrt(h·w)` is log-uniform in this range, pixels.
    pub size_range: (f64, f64),
    /// Aspect ratio `w/h` is log-uniform in this range.
    pub aspect_range: (f64, f64),
    /// Probability of each occlusion level, starting at 0.
    pub occlusion_probs: Vec<f64>,
    pub noise: NoiseModel,
    pub miscalibration: Miscalibration,
    /// Probability that an object gets no detection.
    pub missed_rate: f64,
    /// Probability that an object spawns an extra detection elsewhere.
    pub surplus_rate: f64,
    /// Attach a quality column to detections.
    pub emit_quality: bool,
    pub space: SynthSpace,
    /// Anchor layout for `space = anchor`.
    pub anchors: AnchorGridConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthSpace {
    #[default]
    Image,
    Anchor,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 100,
            objects_per_image: 10,
            class_weights: vec![1.0],
            image_height: 512,
            image_width: 1024,
            size_range: (8.0, 256.0),
            aspect_range: (0.5, 2.0),
            occlusion_probs: vec![1.0],
            noise: NoiseModel::default(),
            miscalibration: Miscalibration::default(),
            missed_rate: 0.0,
            surplus_rate: 0.0,
            emit_quality: false,
            space: SynthSpace::Image,
            anchors: AnchorGridConfig::default(),
        }
    }
}

fn prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a probability, got {p}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {v}")))
    }
}

fn weights(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::config(format!("{name} must be non-negative with a positive sum")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.objects_per_image == 0 {
            return Err(Error::config("n_images and objects_per_image must be positive"));
        }
        weights("class_weights", &self.class_weights)?;
        weights("occlusion_probs", &self.occlusion_probs)?;
        if self.occlusion_probs.len() > 256 {
            return Err(Error::config("at most 256 occlusion levels"));
        }
        positive("image_height", self.image_height as f64)?;
        positive("image_width", self.image_width as f64)?;
        let (lo, hi) = self.size_range;
        positive("size_range.0", lo)?;
        if !(hi >= lo && hi.is_finite()) {
            return Err(Error::config("size_range must be ascending"));
        }
        let (a0, a1) = self.aspect_range;
        positive("aspect_range.0", a0)?;
        if !(a1 >= a0 && a1.is_finite()) {
            return Err(Error::config("aspect_range must be ascending"));
        }
        let max_h = hi / a0.sqrt();
        let max_w = hi * a1.sqrt();
        if max_h > self.image_height as f64 || max_w > self.image_width as f64 {
            return Err(Error::config(format!(
                "objects up to {max_h:.1}x{max_w:.1} px do not fit a {}x{} image",
                self.image_height, self.image_width
            )));
        }
        let n = &self.noise;
        for (c, b) in n.base_sigma.iter().enumerate() {
            positive(&format!("base_sigma[{c}]"), *b)?;
        }
        positive("reference_area", n.reference_area)?;
        if !(n.area_exponent.is_finite() && n.area_exponent >= 0.0) {
            return Err(Error::config(format!("area_exponent must be >= 0, got {}", n.area_exponent)));
        }
        positive("occlusion_multiplier", n.occlusion_multiplier)?;
        if !(n.quality_coupling.is_finite() && n.quality_coupling >= 0.0) {
            return Err(Error::config("quality_coupling must be >= 0"));
        }
        if !(n.jitter.is_finite() && n.jitter >= 0.0) {
            return Err(Error::config("jitter must be >= 0"));
        }
        let m = &self.miscalibration;
        positive("k", m.k)?;
        for k in &m.k_per_class {
            positive("k_per_class", *k)?;
        }
        positive("gamma", m.gamma)?;
        if !(m.reported_noise.is_finite() && m.reported_noise >= 0.0) {
            return Err(Error::config("reported_noise must be >= 0"));
        }
        prob("missed_rate", self.missed_rate)?;
        prob("surplus_rate", self.surplus_rate)?;
        if self.space == SynthSpace::Anchor {
            self.anchors.validate()?;
            if self.anchors.image_height != self.image_height || self.anchors.image_width != self.image_width {
                return Err(Error::config("anchor grid image size must match the synthetic image size"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("synth config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn k_for(&self, class: u32) -> f64 {
        self.miscalibration
            .k_per_class
            .get(class as usize)
            .copied()
            .unwrap_or(self.miscalibration.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub ground_truth: Vec<GroundTruth>,
    /// Image-space detections; present in both spaces.
    pub detections: Vec<Detection>,
    /// Anchor-space records of the same detections when `space = anchor`.
    pub anchor_detections: Option<Vec<AnchorDetection>>,
    pub truth: Vec<TruthRecord>,
}

fn pick(rng: &mut ChaCha8Rng, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, v) in w.iter().enumerate() {
        if u < *v {
            return i;
        }
        u -= v;
    }
    w.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Object height for y/h, width for x/w.
fn coord_size(c: Coord, h: f64, w: f64) -> f64 {
    if c.is_vertical() {
        h
    } else {
        w
    }
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> (f64, f64, f64, f64) {
    let side = log_uniform(rng, cfg.size_range.0, cfg.size_range.1);
    let ratio = log_uniform(rng, cfg.aspect_range.0, cfg.aspect_range.1);
    let h = side / ratio.sqrt();
    let w = side * ratio.sqrt();
    let y = h / 2.0 + rng.random::<f64>() * (cfg.image_height as f64 - h);
    let x = w / 2.0 + rng.random::<f64>() * (cfg.image_width as f64 - w);
    (y, x, h, w)
}

/// Adds `N(0, σ²)` noise to a size, redrawing the rare non-positive result.
fn noisy_size(rng: &mut ChaCha8Rng, v: f64, sd: f64) -> f64 {
    loop {
        let out = v + sd * normal(rng);
        if out > 0.0 {
            return out;
        }
    }
}

/// Generates a scene. The same config always yields identical output.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid = match cfg.space {
        SynthSpace::Anchor => Some(build_anchor_grid(&cfg.anchors)?),
        SynthSpace::Image => None,
    };
    let noise = &cfg.noise;
    let mis = &cfg.miscalibration;

    let mut out = SynthOutput {
        ground_truth: Vec::with_capacity(cfg.n_images * cfg.objects_per_image),
        detections: Vec::new(),
        anchor_detections: grid.as_ref().map(|_| Vec::new()),
        truth: Vec::new(),
    };
    let push_det = |out: &mut SynthOutput, det: Detection, anchor: Option<(usize, GaussianBox4)>| {
        if let (Some(list), Some((idx, offsets))) = (out.anchor_detections.as_mut(), anchor) {
            list.push(AnchorDetection {
                image_id: det.image_id.clone(),
                class_id: det.class_id,
                score: det.score,
                anchor_index: idx,
                offsets,
                quality: det.quality,
            });
        }
        out.detections.push(det);
    };

    for img in 0..cfg.n_images {
        let image_id = format!("{img:06}");
        for obj in 0..cfg.objects_per_image {
            let class_id = pick(&mut rng, &cfg.class_weights) as u32;
            let occlusion = pick(&mut rng, &cfg.occlusion_probs) as u8;
            let quality: f64 = rng.random();
            let (y, x, h, w) = random_box(&mut rng, cfg);
            let corners = Corners::from_center_size(y, x, h, w);
            let gt = GroundTruth::new(image_id.clone(), class_id, corners, occlusion)?;
            let area = gt.area();

            let jitter = (noise.jitter * normal(&mut rng)).exp();
            let common = (area / noise.reference_area).powf(-noise.area_exponent)
                * noise.occlusion_multiplier.powi(occlusion as i32)
                * (1.0 + noise.quality_coupling * quality)
                * jitter;
            let k = cfg.k_for(class_id);
            let mut sigma_true = [0.0; 4];
            let mut sigma_rep = [0.0; 4];
            for c in Coord::ALL {
                let size = coord_size(c, h, w);
                let unit = if noise.size_proportional { size } else { 1.0 };
                let st = noise.base_sigma[c.index()] * common * unit;
                sigma_true[c.index()] = st;
                sigma_rep[c.index()] = size * (st / size).powf(mis.gamma) / k * (mis.reported_noise * normal(&mut rng)).exp();
            }

            let detected = rng.random::<f64>() >= cfg.missed_rate;
            if detected {
                let z: [f64; 4] = std::array::from_fn(|_| normal(&mut rng));
                let mean = [
                    y + sigma_true[0] * z[0],
                    x + sigma_true[1] * z[1],
                    h + sigma_true[2] * z[2],
                    w + sigma_true[3] * z[3],
                ];
                let mean = positive_sizes(&mut rng, mean, [h, w], &sigma_true);
                let det = Detection {
                    image_id: image_id.clone(),
                    class_id,
                    bbox: DecodedBox::from_arrays(mean, sigma_rep)?,
                    score: Some(0.5 + 0.5 * rng.random::<f64>()),
                    quality: cfg.emit_quality.then_some(quality),
                };
                let anchor = match &grid {
                    Some(g) => Some(anchor_record(cfg, g, &corners, &det)?),
                    None => None,
                };
                push_det(&mut out, det, anchor);
            }

            if rng.random::<f64>() < cfg.surplus_rate {
                let (sy, sx, shh, sw) = random_box(&mut rng, cfg);
                let sd: [f64; 4] = std::array::from_fn(|c| sigma_rep[c] * (0.5 + rng.random::<f64>()));
                let det = Detection {
                    image_id: image_id.clone(),
                    class_id: pick(&mut rng, &cfg.class_weights) as u32,
                    bbox: DecodedBox::from_arrays([sy, sx, shh, sw], sd)?,
                    score: Some(0.5 * rng.random::<f64>()),
                    quality: cfg.emit_quality.then(|| rng.random()),
                };
                let anchor = match &grid {
                    Some(g) => Some(anchor_record(cfg, g, &Corners::from_center_size(sy, sx, shh, sw), &det)?),
                    None => None,
                };
                push_det(&mut out, det, anchor);
            }

            out.truth.push(TruthRecord {
                image_id: image_id.clone(),
                object: obj,
                class_id,
                occlusion,
                quality,
                sigma_true,
                sigma_reported: sigma_rep,
                detected,
            });
            out.ground_truth.push(gt);
        }
    }
    Ok(out)
}

/// Redraws the size noise of a detection until both sizes are positive.
fn positive_sizes(rng: &mut ChaCha8Rng, mut mean: [f64; 4], hw: [f64; 2], sd: &[f64; 4]) -> [f64; 4] {
    if mean[2] <= 0.0 {
        mean[2] = noisy_size(rng, hw[0], sd[2]);
    }
    if mean[3] <= 0.0 {
        mean[3] = noisy_size(rng, hw[1], sd[3]);
    }
    mean
}

/// Offsets of the detection relative to the best-overlapping anchor of its
/// source box. Center sds scale by the anchor extent; size sds use the
/// first-order log transform `σ / size`.
fn anchor_record(
    cfg: &SynthConfig,
    grid: &[crate::anchor::Anchor],
    source: &Corners,
    det: &Detection,
) -> Result<(usize, GaussianBox4)> {
    let idx = best_anchor(&cfg.anchors, grid, source)?;
    let anchor = &grid[idx];
    let mean = det.bbox.means();
    let sd = det.bbox.sds();
    let mu = encode(&Corners::from_center_size(mean[0], mean[1], mean[2], mean[3]), anchor)?;
    let var = [
        (sd[0] / anchor.h).powi(2),
        (sd[1] / anchor.w).powi(2),
        (sd[2] / mean[2]).powi(2),
        (sd[3] / mean[3]).powi(2),
    ];
    Ok((idx, GaussianBox4::new(mu, var)?))
}

/// Writes `gt.txt`, `detections.txt` and `truth.txt` into `dir`, plus
/// `anchors.cfg` in anchor space.
pub fn write_output(dir: &Path, cfg: &SynthConfig, out: &SynthOutput, profile: &Profile) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_ground_truth(&dir.join("gt.txt"), &out.ground_truth, profile)?;
    match &out.anchor_detections {
        Some(a) => {
            write_anchor_detections(&dir.join("detections.txt"), a)?;
            write_anchor_config(&dir.join("anchors.cfg"), &cfg.anchors)?;
        }
        None => write_detections(&dir.join("detections.txt"), &out.detections)?,
    }
    write_truth(&dir.join("truth.txt"), &out.truth)
}

/// Space of the detections file that [`write_output`] produces.
pub fn output_space(cfg: &SynthConfig) -> CoordinateSpace {
    match cfg.space {
        SynthSpace::Image => CoordinateSpace::Image,
        SynthSpace::Anchor => CoordinateSpace::Anchor,
    }
}
