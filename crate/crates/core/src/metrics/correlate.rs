//! Uncertainty binned against object properties, and the MD/CD split.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sigma_obj;
use crate::error::{Error, Result};
use crate::matching::{split_by_iou_threshold, MatchedPair};
use crate::numeric::compensated_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Ground-truth box area.
    Area,
    /// Ground-truth occlusion level; binned by level, not by quantile.
    Occlusion,
    /// Precomputed image-quality score of the detection.
    Quality,
    Iou,
    /// Root-mean-square residual of the pair's four coordinates.
    RmsePerObj,
}

impl Conditioning {
    pub fn name(self) -> &'static str {
        match self {
            Conditioning::Area => "area",
            Conditioning::Occlusion => "occlusion",
            Conditioning::Quality => "quality",
            Conditioning::Iou => "iou",
            Conditioning::RmsePerObj => "rmse",
        }
    }

    fn value(self, p: &MatchedPair) -> Result<f64> {
        Ok(match self {
            Conditioning::Area => p.ground_truth.area(),
            Conditioning::Occlusion => p.ground_truth.occlusion as f64,
            Conditioning::Quality => p.detection.quality.ok_or_else(|| {
                Error::input(format!(
                    "quality conditioning needs a quality column, missing for a detection in image '{}'",
                    p.detection.image_id
                ))
            })?,
            Conditioning::Iou => p.iou,
            Conditioning::RmsePerObj => (p.residual.iter().map(|r| r * r).sum::<f64>() / 4.0).sqrt(),
        })
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "area" => Ok(Conditioning::Area),
            "occlusion" => Ok(Conditioning::Occlusion),
            "quality" => Ok(Conditioning::Quality),
            "iou" => Ok(Conditioning::Iou),
            "rmse" | "rmse-per-obj" => Ok(Conditioning::RmsePerObj),
            _ => Err(Error::config(format!(
                "unknown conditioning '{s}' (expected area, occlusion, quality, iou or rmse)"
            ))),
        }
    }
}

/// Mean and population sd of σ_obj over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = compensated_mean(values.iter().copied());
        let var = compensated_mean(values.iter().map(|v| (v - mean).powi(2)));
        Some(Self {
            count: values.len(),
            mean,
            sd: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub normalized_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCorrelation {
    pub conditioning: Conditioning,
    pub bins: Vec<Bin>,
    /// Largest bin mean; every `normalized_mean` is `mean / normalization`.
    pub normalization: f64,
}

impl BinnedCorrelation {
    pub fn normalized_means(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.normalized_mean).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("correlation serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,mean,sd,normalized_mean\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{},{}\n", b.center, b.mean, b.sd, b.normalized_mean));
        }
        out
    }
}

/// Bins σ_obj by a conditioning variable.
///
/// Continuous variables use equal-count bins over the rank order (ties in
/// the variable are broken by σ_obj); bin bounds are the smallest and
/// largest conditioning value inside the bin and the center is their
/// midpoint. Occlusion uses one bin per level present.
pub fn correlate(pairs: &[MatchedPair], by: Conditioning, bins: usize) -> Result<BinnedCorrelation> {
    if pairs.is_empty() {
        return Err(Error::input("correlate over an empty pair set"));
    }
    let mut rows: Vec<(f64, f64)> = pairs
        .iter()
        .map(|p| Ok((by.value(p)?, sigma_obj(&p.detection))))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let groups: Vec<&[(f64, f64)]> = if by == Conditioning::Occlusion {
        rows.chunk_by(|a, b| a.0 == b.0).collect()
    } else {
        if bins == 0 || bins > rows.len() {
            return Err(Error::input(format!(
                "cannot form {bins} non-empty bins from {} pairs",
                rows.len()
            )));
        }
        let n = rows.len();
        (0..bins).map(|k| &rows[k * n / bins..(k + 1) * n / bins]).collect()
    };

    let mut out: Vec<Bin> = groups
        .into_iter()
        .map(|g| {
            let sig: Vec<f64> = g.iter().map(|r| r.1).collect();
            let s = Summary::of(&sig).expect("bins are non-empty");
            let (lower, upper) = (g[0].0, g[g.len() - 1].0);
            Bin {
                lower,
                upper,
                center: 0.5 * (lower + upper),
                count: s.count,
                mean: s.mean,
                sd: s.sd,
                normalized_mean: f64::NAN,
            }
        })
        .collect();
    let normalization = out.iter().map(|b| b.mean).fold(f64::NEG_INFINITY, f64::max);
    if !(normalization > 0.0) {
        return Err(Error::domain("cannot normalize bins whose largest mean σ_obj is not positive"));
    }
    for b in &mut out {
        b.normalized_mean = b.mean / normalization;
    }
    Ok(BinnedCorrelation {
        conditioning: by,
        bins: out,
        normalization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdCdRow {
    pub threshold: f64,
    /// Misdetections (`iou <= threshold`); `None` when there are none.
    pub md: Option<Summary>,
    pub cd: Option<Summary>,
}

/// σ_obj summaries of misdetections and correct detections per threshold.
pub fn md_cd_uncertainty(pairs: &[MatchedPair], thresholds: &[f64]) -> Result<Vec<MdCdRow>> {
    thresholds
        .iter()
        .map(|&t| {
            let (md, cd) = split_by_iou_threshold(pairs, t)?;
            let s = |side: Vec<&MatchedPair>| Summary::of(&side.iter().map(|p| sigma_obj(&p.detection)).collect::<Vec<_>>());
            Ok(MdCdRow {
                threshold: t,
                md: s(md),
                cd: s(cd),
            })
        })
        .collect()
}

pub fn md_cd_csv(rows: &[MdCdRow]) -> String {
    let cell = |s: &Option<Summary>| match s {
        Some(s) => format!("{},{},{}", s.count, s.mean, s.sd),
        None => "0,,".to_string(),
    };
    let mut out = String::from("threshold,md_count,md_mean,md_sd,cd_count,cd_mean,cd_sd\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.threshold, cell(&r.md), cell(&r.cd)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tests::pair;

    fn with_area(side: f64, sd: f64, occlusion: u8) -> MatchedPair {
        let mut p = pair([100.0, 100.0, side, side], [sd; 4], [100.0, 100.0, side, side]);
        p.ground_truth.occlusion = occlusion;
        p
    }

    #[test]
    fn constant_sigma_normalizes_to_one() {
        let pairs: Vec<_> = (1..=50).map(|i| with_area(i as f64, 2.0, 0)).collect();
        let c = correlate(&pairs, Conditioning::Area, 5).unwrap();
        assert_eq!(c.normalized_means(), vec![1.0; 5]);
        assert_eq!(c.bins.iter().map(|b| b.count).sum::<usize>(), 50);
    }

    #[test]
    fn decreasing_sigma_gives_decreasing_bins() {
        let pairs: Vec<_> = (1..=100).map(|i| with_area(i as f64, 100.0 / i as f64, 0)).collect();
        let c = correlate(&pairs, Conditioning::Area, 5).unwrap();
        let m = c.normalized_means();
        assert_eq!(m[0], 1.0);
        assert!(m.windows(2).all(|w| w[0] > w[1]));
        assert!(c.bins.windows(2).all(|w| w[0].upper <= w[1].lower));
    }

    #[test]
    fn occlusion_bins_by_level() {
        let mut pairs: Vec<_> = (0..40).map(|_| with_area(20.0, 1.0, 0)).collect();
        pairs.extend((0..40).map(|_| with_area(20.0, 1.34, 1)));
        let c = correlate(&pairs, Conditioning::Occlusion, 5).unwrap();
        assert_eq!(c.bins.len(), 2);
        assert_eq!(c.bins[0].center, 0.0);
        assert!((c.bins[0].mean / c.bins[1].mean - 1.0 / 1.34).abs() < 1e-12);
    }

    #[test]
    fn quality_requires_the_column() {
        let pairs = vec![with_area(20.0, 1.0, 0); 5];
        let e = correlate(&pairs, Conditioning::Quality, 2).unwrap_err();
        assert!(e.to_string().contains("quality"));
    }

    #[test]
    fn bin_count_must_fit_the_data() {
        let pairs = vec![with_area(20.0, 1.0, 0); 3];
        assert!(correlate(&pairs, Conditioning::Area, 4).is_err());
        assert!(correlate(&pairs, Conditioning::Area, 0).is_err());
        assert!(correlate(&[], Conditioning::Area, 1).is_err());
    }

    #[test]
    fn csv_layout() {
        let pairs: Vec<_> = (1..=4).map(|i| with_area(i as f64 * 10.0, 1.0, 0)).collect();
        let csv = correlate(&pairs, Conditioning::Area, 2).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bin_center,mean,sd,normalized_mean");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "250,1,0,1");
    }

    #[test]
    fn md_cd_degenerate_and_interior() {
        let exact = vec![with_area(20.0, 1.0, 0); 3];
        let rows = md_cd_uncertainty(&exact, &[0.0, 1.0]).unwrap();
        assert!(rows[0].md.is_none());
        assert_eq!(rows[0].cd.unwrap().count, 3);
        assert_eq!(rows[1].md.unwrap().count, 3);
        assert!(rows[1].cd.is_none());
        assert!(md_cd_csv(&rows).contains("1,3,1,0,0,,"));

        // σ_obj grows as the detection drifts off its ground truth.
        let drift: Vec<_> = (0..20)
            .map(|i| {
                let off = i as f64;
                pair([100.0 + off, 100.0, 20.0, 20.0], [1.0 + off; 4], [100.0, 100.0, 20.0, 20.0])
            })
            .collect();
        for r in md_cd_uncertainty(&drift, &[0.3, 0.5, 0.7]).unwrap() {
            assert!(r.md.unwrap().mean > r.cd.unwrap().mean);
        }
        assert!(md_cd_uncertainty(&drift, &[1.2]).is_err());
    }
}
