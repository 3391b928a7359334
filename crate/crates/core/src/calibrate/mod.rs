//! Post-hoc recalibration of decoded standard deviations against residuals.
//!
//! Two families are provided: isotonic maps from predicted σ to a residual
//! scale (globally, per coordinate, per class, or per coordinate and class)
//! and a single multiplicative factor fitted under one of three losses.
//! Both can operate on absolute pixels or on values normalized by the
//! object's height (y, h) and width (x, w).

mod factor;
mod pava;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

pub use factor::{factor_loss, fit_factor, fit_factor_with, optimize_factor, FactorLoss, FactorOptions};
pub use pava::{pava, pava_fit, IsotonicMap};

use crate::error::{Error, Result};
use crate::geometry::Coord;
use crate::matching::{Detection, MatchedPair};
use crate::numeric::SQRT_PI_OVER_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Ir,
    IrPco,
    IrCl,
    IrPcoCl,
    Fs,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Ir, Scheme::IrPco, Scheme::IrCl, Scheme::IrPcoCl, Scheme::Fs];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ir => "ir",
            Scheme::IrPco => "ir-pco",
            Scheme::IrCl => "ir-cl",
            Scheme::IrPcoCl => "ir-pco-cl",
            Scheme::Fs => "fs",
        }
    }

    pub fn per_coordinate(self) -> bool {
        matches!(self, Scheme::IrPco | Scheme::IrPcoCl)
    }

    pub fn per_class(self) -> bool {
        matches!(self, Scheme::IrCl | Scheme::IrPcoCl)
    }

    /// Group addressed by this scheme for one coordinate of one object.
    pub fn key(self, coord: Coord, class: u32) -> GroupKey {
        GroupKey {
            coord: self.per_coordinate().then_some(coord),
            class: self.per_class().then_some(class),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown calibration scheme '{s}' (expected ir, ir-pco, ir-cl, ir-pco-cl or fs)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Absolute,
    Relative,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Absolute => "abs",
            Mode::Relative => "rel",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" | "absolute" => Ok(Mode::Absolute),
            "rel" | "relative" => Ok(Mode::Relative),
            _ => Err(Error::config(format!("unknown calibration mode '{s}' (expected abs or rel)"))),
        }
    }
}

/// Which box supplies the height and width used by relative mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SizeBasis {
    /// The detection's decoded mean; available at inference time.
    #[default]
    Predicted,
    GroundTruth,
}

impl SizeBasis {
    pub fn name(self) -> &'static str {
        match self {
            SizeBasis::Predicted => "predicted",
            SizeBasis::GroundTruth => "gt",
        }
    }
}

impl FromStr for SizeBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(SizeBasis::Predicted),
            "gt" => Ok(SizeBasis::GroundTruth),
            _ => Err(Error::config(format!("unknown size basis '{s}' (expected predicted or gt)"))),
        }
    }
}

/// Group of a per-coordinate and/or per-class map. `None` means pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey {
    pub coord: Option<Coord>,
    pub class: Option<u32>,
}

impl GroupKey {
    pub const GLOBAL: GroupKey = GroupKey { coord: None, class: None };
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.coord {
            Some(c) => write!(f, "{c}")?,
            None => f.write_str("*")?,
        }
        match self.class {
            Some(k) => write!(f, "/{k}"),
            None => f.write_str("/*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicModel {
    /// Multiplier turning `|Δ|` into the regression target.
    pub target_scale: f64,
    /// Map fitted on all data; used directly by `Scheme::Ir` and as fallback.
    pub global: IsotonicMap,
    pub groups: BTreeMap<GroupKey, IsotonicMap>,
    /// Groups seen during fitting with too few pairs for their own map.
    pub fallback: BTreeSet<GroupKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Isotonic(IsotonicModel),
    Factor { loss: FactorLoss, factor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub scheme: Scheme,
    pub mode: Mode,
    pub basis: SizeBasis,
    pub body: ModelBody,
}

impl CalibrationModel {
    pub fn factor(loss: FactorLoss, factor: f64, mode: Mode) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::domain(format!("calibration factor must be positive and finite, got {factor}")));
        }
        Ok(Self {
            scheme: Scheme::Fs,
            mode,
            basis: SizeBasis::Predicted,
            body: ModelBody::Factor { loss, factor },
        })
    }

    pub fn isotonic(scheme: Scheme, mode: Mode, basis: SizeBasis, model: IsotonicModel) -> Result<Self> {
        if scheme == Scheme::Fs {
            return Err(Error::config("isotonic body requires an ir-* scheme"));
        }
        Ok(Self {
            scheme,
            mode,
            basis,
            body: ModelBody::Isotonic(model),
        })
    }

    /// Calibrated σ for one coordinate. `norm` is the size used by relative
    /// mode. The flag is set when a per-group lookup fell back to the
    /// global map.
    pub fn calibrate_sd(&self, coord: Coord, class: u32, sd: f64, norm: f64) -> (f64, bool) {
        match &self.body {
            // The factor commutes with normalization, so it is applied to
            // the absolute value in both modes.
            ModelBody::Factor { factor, .. } => (factor * sd, false),
            ModelBody::Isotonic(m) => {
                let key = self.scheme.key(coord, class);
                let (map, fell_back) = if key == GroupKey::GLOBAL {
                    (&m.global, false)
                } else {
                    match m.groups.get(&key) {
                        Some(map) => (map, false),
                        None => (&m.global, true),
                    }
                };
                let v = match self.mode {
                    Mode::Absolute => map.eval(sd),
                    Mode::Relative => map.eval(sd / norm) * norm,
                };
                (v, fell_back)
            }
        }
    }
}

/// Height (for y, h) or width (for x, w) of a `[y, x, h, w]` box.
fn normalizer(size: [f64; 4], coord: Coord) -> f64 {
    if coord.is_vertical() {
        size[2]
    } else {
        size[3]
    }
}

fn basis_box(pair: &MatchedPair, basis: SizeBasis) -> [f64; 4] {
    match basis {
        SizeBasis::Predicted => pair.detection.bbox.means(),
        SizeBasis::GroundTruth => pair.target(),
    }
}

fn check_norm(norm: f64) -> Result<f64> {
    if norm.is_finite() && norm > 0.0 {
        Ok(norm)
    } else {
        Err(Error::domain(format!("relative mode needs a positive box size, got {norm}")))
    }
}

/// One coordinate of one matched pair, after optional normalization.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Item {
    pub coord: Coord,
    pub class: u32,
    pub sd: f64,
    pub residual: f64,
}

pub(crate) fn pair_items(pairs: &[MatchedPair], mode: Mode, basis: SizeBasis) -> Result<Vec<Item>> {
    let mut out = Vec::with_capacity(pairs.len() * 4);
    for p in pairs {
        let sds = p.detection.bbox.sds();
        let size = basis_box(p, basis);
        for c in Coord::ALL {
            let norm = match mode {
                Mode::Absolute => 1.0,
                Mode::Relative => check_norm(normalizer(size, c))?,
            };
            out.push(Item {
                coord: c,
                class: p.ground_truth.class_id,
                sd: sds[c.index()] / norm,
                residual: p.residual[c.index()] / norm,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotonicOptions {
    pub mode: Mode,
    pub basis: SizeBasis,
    pub target_scale: f64,
}

impl Default for IsotonicOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Absolute,
            basis: SizeBasis::Predicted,
            target_scale: SQRT_PI_OVER_2,
        }
    }
}

fn fit_map(items: &[&Item], target_scale: f64) -> Result<IsotonicMap> {
    let x: Vec<f64> = items.iter().map(|i| i.sd).collect();
    let y: Vec<f64> = items.iter().map(|i| i.residual * target_scale).collect();
    pava_fit(&x, &y, &vec![1.0; x.len()])
}

/// Fits isotonic maps from predicted σ to `|Δ|·sqrt(π/2)`.
///
/// Under a correctly specified Gaussian `E|Δ| = σ·sqrt(2/π)`, so a
/// calibrated model is a fixed point of the fit. Classes come from the
/// ground truth.
pub fn fit_isotonic(pairs: &[MatchedPair], scheme: Scheme, mode: Mode) -> Result<CalibrationModel> {
    fit_isotonic_with(pairs, scheme, &IsotonicOptions { mode, ..Default::default() })
}

pub fn fit_isotonic_with(pairs: &[MatchedPair], scheme: Scheme, opts: &IsotonicOptions) -> Result<CalibrationModel> {
    if scheme == Scheme::Fs {
        return Err(Error::config("fit_isotonic called with the fs scheme; use fit_factor"));
    }
    if pairs.len() < 2 {
        return Err(Error::input(format!("isotonic calibration needs at least 2 pairs, got {}", pairs.len())));
    }
    if !(opts.target_scale.is_finite() && opts.target_scale > 0.0) {
        return Err(Error::config(format!("target scale must be positive, got {}", opts.target_scale)));
    }
    let items = pair_items(pairs, opts.mode, opts.basis)?;
    let all: Vec<&Item> = items.iter().collect();
    let global = fit_map(&all, opts.target_scale)?;

    let mut grouped: BTreeMap<GroupKey, Vec<&Item>> = BTreeMap::new();
    if scheme != Scheme::Ir {
        for it in &items {
            grouped.entry(scheme.key(it.coord, it.class)).or_default().push(it);
        }
    }
    let coords_per_group = if scheme.per_coordinate() { 1 } else { 4 };
    let mut groups = BTreeMap::new();
    let mut fallback = BTreeSet::new();
    for (key, members) in grouped {
        if members.len() / coords_per_group < 2 {
            fallback.insert(key);
        } else {
            groups.insert(key, fit_map(&members, opts.target_scale)?);
        }
    }
    CalibrationModel::isotonic(
        scheme,
        opts.mode,
        opts.basis,
        IsotonicModel {
            target_scale: opts.target_scale,
            global,
            groups,
            fallback,
        },
    )
}

/// Where per-class schemes take each detection's class from.
#[derive(Debug, Clone, Copy)]
pub enum ClassSource<'a> {
    /// One ground-truth class per detection, in order.
    GroundTruth(&'a [u32]),
    Predicted,
}

/// Calibrated records together with the indices of records for which at
/// least one coordinate used the global fallback map.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied<T> {
    pub items: Vec<T>,
    pub fallbacks: Vec<usize>,
}

fn calibrate_box(model: &CalibrationModel, det: &Detection, class: u32, size: [f64; 4]) -> Result<(Detection, bool)> {
    let sds = det.bbox.sds();
    let mut out = [0.0; 4];
    let mut any_fallback = false;
    for c in Coord::ALL {
        let norm = match model.mode {
            Mode::Absolute => 1.0,
            Mode::Relative => check_norm(normalizer(size, c))?,
        };
        let (v, fb) = model.calibrate_sd(c, class, sds[c.index()], norm);
        out[c.index()] = v;
        any_fallback |= fb;
    }
    let mut d = det.clone();
    d.bbox = det.bbox.with_sds(out)?;
    Ok((d, any_fallback))
}

/// Replaces every coordinate sd with its calibrated value. Means are
/// untouched. Relative mode normalizes by the detection's own decoded size.
pub fn apply(model: &CalibrationModel, dets: &[Detection], classes: ClassSource<'_>) -> Result<Applied<Detection>> {
    if model.mode == Mode::Relative && model.basis == SizeBasis::GroundTruth {
        return Err(Error::config(
            "model normalizes by ground-truth size; calibrate matched pairs instead of bare detections",
        ));
    }
    if let ClassSource::GroundTruth(cls) = classes {
        if cls.len() != dets.len() {
            return Err(Error::input(format!(
                "{} ground-truth classes supplied for {} detections",
                cls.len(),
                dets.len()
            )));
        }
    }
    let mut items = Vec::with_capacity(dets.len());
    let mut fallbacks = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        let class = match classes {
            ClassSource::GroundTruth(cls) => cls[i],
            ClassSource::Predicted => d.class_id,
        };
        let (cal, fb) = calibrate_box(model, d, class, d.bbox.means())?;
        if fb {
            fallbacks.push(i);
        }
        items.push(cal);
    }
    Ok(Applied { items, fallbacks })
}

/// Calibrates the detection side of matched pairs using ground-truth
/// classes. Residuals and IoU are unchanged.
pub fn apply_to_pairs(model: &CalibrationModel, pairs: &[MatchedPair]) -> Result<Applied<MatchedPair>> {
    let mut items = Vec::with_capacity(pairs.len());
    let mut fallbacks = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let size = basis_box(p, model.basis);
        let (det, fb) = calibrate_box(model, &p.detection, p.ground_truth.class_id, size)?;
        if fb {
            fallbacks.push(i);
        }
        let mut q = p.clone();
        q.detection = det;
        items.push(q);
    }
    Ok(Applied { items, fallbacks })
}
