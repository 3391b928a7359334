//! Localization and uncertainty-quality metrics over matched pairs.
//!
//! Every reduction pools the four coordinates of every pair (4N items)
//! and uses compensated summation, so results do not depend on input
//! order beyond ~1e-12.

mod correlate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use correlate::{correlate, md_cd_csv, md_cd_uncertainty, Bin, BinnedCorrelation, Conditioning, MdCdRow, Summary};

use crate::error::{Error, Result};
use crate::geometry::{iou, Coord};
use crate::matching::{Detection, MatchedPair};
use crate::numeric::{compensated_mean, std_normal_cdf, LN_SQRT_2PI};

/// Mean of the four coordinate sds.
pub fn sigma_obj(d: &Detection) -> f64 {
    let s = d.bbox.sds();
    (s[0] + s[1] + s[2] + s[3]) / 4.0
}

fn require_nonempty(pairs: &[MatchedPair]) -> Result<()> {
    if pairs.is_empty() {
        Err(Error::input("metric over an empty pair set"))
    } else {
        Ok(())
    }
}

fn require_positive_sd(pairs: &[MatchedPair]) -> Result<()> {
    for p in pairs {
        if let Some(s) = p.detection.bbox.sds().iter().find(|&&s| s <= 0.0) {
            return Err(Error::domain(format!(
                "metric requires sd > 0, found {s} in image '{}'",
                p.detection.image_id
            )));
        }
    }
    Ok(())
}

fn items(pairs: &[MatchedPair]) -> impl Iterator<Item = (f64, f64)> + '_ {
    pairs
        .iter()
        .flat_map(|p| p.residual.into_iter().zip(p.detection.bbox.sds()))
}

/// Full Gaussian negative log-likelihood per coordinate, including `ln 2π`.
pub fn nll(pairs: &[MatchedPair]) -> Result<f64> {
    require_nonempty(pairs)?;
    require_positive_sd(pairs)?;
    Ok(compensated_mean(items(pairs).map(|(d, s)| 0.5 * (d / s).powi(2) + s.ln() + LN_SQRT_2PI)))
}

pub fn rmsue(pairs: &[MatchedPair]) -> Result<f64> {
    require_nonempty(pairs)?;
    Ok(compensated_mean(items(pairs).map(|(d, s)| (d - s).powi(2))).sqrt())
}

pub fn maue(pairs: &[MatchedPair]) -> Result<f64> {
    require_nonempty(pairs)?;
    Ok(compensated_mean(items(pairs).map(|(d, s)| (d - s).abs())))
}

/// Mean predicted variance.
pub fn sharpness(pairs: &[MatchedPair]) -> Result<f64> {
    require_nonempty(pairs)?;
    Ok(compensated_mean(items(pairs).map(|(_, s)| s * s)))
}

pub fn rmse(pairs: &[MatchedPair]) -> Result<f64> {
    require_nonempty(pairs)?;
    Ok(compensated_mean(items(pairs).map(|(d, _)| d * d)).sqrt())
}

/// Mean IoU between each detection's mean box and its ground truth.
pub fn miou(pairs: &[MatchedPair]) -> Result<f64> {
    require_nonempty(pairs)?;
    Ok(compensated_mean(
        pairs.iter().map(|p| iou(&p.detection.bbox.corners(), &p.ground_truth.corners)),
    ))
}

/// How CDF values are combined across coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EcePooling {
    /// All 4N coordinate values in one pool.
    #[default]
    Pooled,
    /// Mean of four per-coordinate ECEs.
    PerCoordinate,
}

impl EcePooling {
    pub fn name(self) -> &'static str {
        match self {
            EcePooling::Pooled => "pooled",
            EcePooling::PerCoordinate => "per-coordinate",
        }
    }
}

impl FromStr for EcePooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(EcePooling::Pooled),
            "per-coordinate" => Ok(EcePooling::PerCoordinate),
            _ => Err(Error::config(format!("unknown ECE pooling '{s}' (expected pooled or per-coordinate)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EceOptions {
    pub levels: usize,
    pub pooling: EcePooling,
}

impl Default for EceOptions {
    fn default() -> Self {
        Self {
            levels: 10,
            pooling: EcePooling::Pooled,
        }
    }
}

impl fmt::Display for EceOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mean-abs-dev levels={} pooling={}", self.levels, self.pooling.name())
    }
}

/// Predictive CDF value `Φ((y* − μ)/σ)` for every coordinate of every pair.
pub fn cdf_values(pairs: &[MatchedPair], coord: Option<Coord>) -> Result<Vec<f64>> {
    require_positive_sd(pairs)?;
    let coords: &[Coord] = match coord {
        Some(ref c) => std::slice::from_ref(c),
        None => &Coord::ALL,
    };
    let mut out = Vec::with_capacity(pairs.len() * coords.len());
    for p in pairs {
        let t = p.target();
        let m = p.detection.bbox.means();
        let s = p.detection.bbox.sds();
        for &c in coords {
            let i = c.index();
            out.push(std_normal_cdf((t[i] - m[i]) / s[i]));
        }
    }
    Ok(out)
}

/// Mean absolute gap between nominal levels `j/L` and the fraction of CDF
/// values at or below them.
pub fn ece_from_cdf(mut cdf: Vec<f64>, levels: usize) -> Result<f64> {
    if levels == 0 {
        return Err(Error::config("ECE needs at least one confidence level"));
    }
    if cdf.is_empty() {
        return Err(Error::input("ECE over an empty pair set"));
    }
    cdf.sort_by(f64::total_cmp);
    let n = cdf.len() as f64;
    Ok(compensated_mean((1..=levels).map(|j| {
        let p = j as f64 / levels as f64;
        let observed = cdf.partition_point(|&v| v <= p) as f64 / n;
        (p - observed).abs()
    })))
}

pub fn ece(pairs: &[MatchedPair], levels: usize) -> Result<f64> {
    ece_with(pairs, &EceOptions { levels, ..Default::default() })
}

pub fn ece_with(pairs: &[MatchedPair], opts: &EceOptions) -> Result<f64> {
    require_nonempty(pairs)?;
    match opts.pooling {
        EcePooling::Pooled => ece_from_cdf(cdf_values(pairs, None)?, opts.levels),
        EcePooling::PerCoordinate => {
            let mut per = Vec::with_capacity(4);
            for c in Coord::ALL {
                per.push(ece_from_cdf(cdf_values(pairs, Some(c))?, opts.levels)?);
            }
            Ok(compensated_mean(per))
        }
    }
}

/// Fraction of coordinates whose ground truth lies in `μ ± k·σ`.
pub fn coverage(pairs: &[MatchedPair], k: f64) -> Result<f64> {
    require_nonempty(pairs)?;
    let inside = items(pairs).filter(|&(d, s)| d <= k * s).count();
    Ok(inside as f64 / (4 * pairs.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ece_definition: String,
    pub pairs: usize,
    pub coordinates: usize,
    pub unmatched_detections: usize,
    pub unmatched_ground_truth: usize,
    pub rmse: f64,
    pub miou: f64,
    pub nll: f64,
    pub rmsue: f64,
    pub maue: f64,
    pub ece: f64,
    pub sharpness: f64,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let rows: [(&str, String); 11] = [
            ("pairs", self.pairs.to_string()),
            ("coordinates", self.coordinates.to_string()),
            ("unmatched_detections", self.unmatched_detections.to_string()),
            ("unmatched_ground_truth", self.unmatched_ground_truth.to_string()),
            ("rmse", format!("{:.6}", self.rmse)),
            ("miou", format!("{:.6}", self.miou)),
            ("nll", format!("{:.6}", self.nll)),
            ("rmsue", format!("{:.6}", self.rmsue)),
            ("maue", format!("{:.6}", self.maue)),
            ("ece", format!("{:.6}", self.ece)),
            ("sharpness", format!("{:.6}", self.sharpness)),
        ];
        let mut out = format!("# ece: {}\n", self.ece_definition);
        for (k, v) in rows {
            out.push_str(&format!("{k:<24}{v:>16}\n"));
        }
        out
    }
}

/// All metrics at once. Unmatched counts are carried into the report only.
pub fn evaluate(
    pairs: &[MatchedPair],
    unmatched_detections: usize,
    unmatched_ground_truth: usize,
    ece_opts: &EceOptions,
) -> Result<MetricReport> {
    require_nonempty(pairs)?;
    require_positive_sd(pairs)?;
    Ok(MetricReport {
        ece_definition: ece_opts.to_string(),
        pairs: pairs.len(),
        coordinates: 4 * pairs.len(),
        unmatched_detections,
        unmatched_ground_truth,
        rmse: rmse(pairs)?,
        miou: miou(pairs)?,
        nll: nll(pairs)?,
        rmsue: rmsue(pairs)?,
        maue: maue(pairs)?,
        ece: ece_with(pairs, ece_opts)?,
        sharpness: sharpness(pairs)?,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::anchor::DecodedBox;
    use crate::calibrate::{apply_to_pairs, CalibrationModel, FactorLoss, Mode};
    use crate::geometry::Corners;
    use crate::matching::GroundTruth;

    pub(crate) fn pair(mean: [f64; 4], sd: [f64; 4], target: [f64; 4]) -> MatchedPair {
        let det = Detection {
            image_id: "im".into(),
            class_id: 0,
            bbox: DecodedBox::from_arrays(mean, sd).unwrap(),
            score: None,
            quality: None,
        };
        let gt = GroundTruth::new("im", 0, Corners::from_center_size(target[0], target[1], target[2], target[3]), 0).unwrap();
        MatchedPair::new(det, gt).unwrap()
    }

    fn gaussian_pairs(n: usize, scale: f64, seed: u64) -> Vec<MatchedPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                let sd = [1.0 + (i % 7) as f64, 2.0, 0.5 + (i % 3) as f64, 3.0];
                let mean = [300.0, 300.0, 200.0, 200.0];
                let t = std::array::from_fn(|c| mean[c] + scale * sd[c] * z.sample(&mut rng));
                pair(mean, sd, t)
            })
            .collect()
    }

    #[test]
    fn sigma_obj_examples() {
        let p = pair([10.0; 4], [2.0; 4], [10.0; 4]);
        assert_eq!(sigma_obj(&p.detection), 2.0);
        let p = pair([10.0; 4], [1.0, 2.0, 3.0, 4.0], [10.0; 4]);
        assert_eq!(sigma_obj(&p.detection), 2.5);
        let q = pair([10.0; 4], [4.0, 2.0, 1.0, 3.0], [10.0; 4]);
        assert_eq!(sigma_obj(&q.detection), 2.5);
    }

    #[test]
    fn residual_equal_to_sd_gives_zero_uncertainty_error() {
        let p = pair([10.0, 10.0, 10.0, 10.0], [1.0, 2.0, 0.5, 0.25], [11.0, 8.0, 10.5, 10.25]);
        assert_eq!(rmsue(&[p.clone()]).unwrap(), 0.0);
        assert_eq!(maue(&[p]).unwrap(), 0.0);
    }

    #[test]
    fn standard_normal_peak_nll() {
        let p = pair([10.0; 4], [1.0; 4], [10.0; 4]);
        assert!((nll(&[p]).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn hand_built_three_pair_set() {
        // Residuals and sds per pair, checked against values computed by hand.
        let pairs = [
            pair([10.0, 20.0, 8.0, 6.0], [1.0, 1.0, 2.0, 2.0], [11.0, 20.0, 8.0, 6.0]),
            pair([10.0, 20.0, 8.0, 6.0], [2.0, 2.0, 2.0, 2.0], [10.0, 22.0, 8.0, 6.0]),
            pair([10.0, 20.0, 8.0, 6.0], [1.0, 1.0, 1.0, 1.0], [10.0, 20.0, 11.0, 6.0]),
        ];
        // Δ  = [1,0,0,0],[0,2,0,0],[0,0,3,0]; σ = [1,1,2,2],[2,2,2,2],[1,1,1,1].
        let n = 12.0;
        assert!((rmse(&pairs).unwrap() - (14.0f64 / n).sqrt()).abs() < 1e-15);
        assert!((sharpness(&pairs).unwrap() - 30.0 / n).abs() < 1e-15);
        // |Δ−σ|: 0,1,2,2 | 2,0,2,2 | 1,1,2,1 → 16; squares → 28.
        assert!((maue(&pairs).unwrap() - 16.0 / n).abs() < 1e-15);
        assert!((rmsue(&pairs).unwrap() - (28.0f64 / n).sqrt()).abs() < 1e-15);
        // Σ Δ²/σ² = 1 + 1 + 9 = 11; Σ ln σ² = 2 ln 4 + 4 ln 4 = 6 ln 4.
        let expect = (11.0 + 6.0 * 4.0f64.ln()) / (2.0 * n) + LN_SQRT_2PI;
        assert!((nll(&pairs).unwrap() - expect).abs() < 1e-14);
        let ious = [
            iou(&Corners::from_center_size(10.0, 20.0, 8.0, 6.0), &Corners::from_center_size(11.0, 20.0, 8.0, 6.0)),
            iou(&Corners::from_center_size(10.0, 20.0, 8.0, 6.0), &Corners::from_center_size(10.0, 22.0, 8.0, 6.0)),
            iou(&Corners::from_center_size(10.0, 20.0, 8.0, 6.0), &Corners::from_center_size(10.0, 20.0, 11.0, 6.0)),
        ];
        assert!((ious[0] - 7.0 / 9.0).abs() < 1e-15);
        assert!((ious[1] - 0.5).abs() < 1e-15);
        assert!((ious[2] - 8.0 / 11.0).abs() < 1e-15);
        assert!((miou(&pairs).unwrap() - (7.0 / 9.0 + 0.5 + 8.0 / 11.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn calibrated_gaussians_have_small_ece() {
        let pairs = gaussian_pairs(25_000, 1.0, 1);
        assert!(ece(&pairs, 10).unwrap() <= 0.01);
    }

    #[test]
    fn inflated_sd_ece_matches_analytic_value() {
        // With σ reported 3× too large the CDF value is Φ(z/3), z ~ N(0,1),
        // so the coverage at level p is Φ(3·Φ⁻¹(p)).
        use statrs::distribution::{ContinuousCDF, Normal as SN};
        let n = SN::new(0.0, 1.0).unwrap();
        let analytic = (1..=10)
            .map(|j| {
                let p = j as f64 / 10.0;
                let q = if j == 10 { 1.0 } else { n.cdf(3.0 * n.inverse_cdf(p)) };
                (p - q).abs()
            })
            .sum::<f64>()
            / 10.0;
        let pairs = gaussian_pairs(25_000, 1.0 / 3.0, 2);
        let e = ece(&pairs, 10).unwrap();
        assert!((analytic - 0.1424).abs() < 1e-3, "{analytic}");
        assert!((e - analytic).abs() < 0.01, "{e} vs {analytic}");
    }

    #[test]
    fn single_level_ece_is_zero() {
        let pairs = gaussian_pairs(100, 2.0, 3);
        assert_eq!(ece(&pairs, 1).unwrap(), 0.0);
    }

    #[test]
    fn ece_errors() {
        let bad = pair([10.0; 4], [1.0, 0.0, 1.0, 1.0], [10.0; 4]);
        assert!(matches!(ece(&[bad], 10), Err(Error::Domain(_))));
        assert!(ece(&[], 10).is_err());
        assert!(ece(&gaussian_pairs(3, 1.0, 0), 0).is_err());
    }

    #[test]
    fn factor_scaling_multiplies_sharpness_exactly() {
        let pairs = gaussian_pairs(500, 1.0, 4);
        let model = CalibrationModel::factor(FactorLoss::Rmsue, 2.0, Mode::Absolute).unwrap();
        let out = apply_to_pairs(&model, &pairs).unwrap().items;
        assert_eq!(sharpness(&out).unwrap(), 4.0 * sharpness(&pairs).unwrap());
        assert_eq!(rmse(&out).unwrap(), rmse(&pairs).unwrap());
        assert_eq!(miou(&out).unwrap(), miou(&pairs).unwrap());
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let pairs = gaussian_pairs(2000, 1.3, 5);
        let mut rev = pairs.clone();
        rev.reverse();
        let a = evaluate(&pairs, 0, 0, &EceOptions::default()).unwrap();
        let b = evaluate(&rev, 0, 0, &EceOptions::default()).unwrap();
        for (x, y) in [(a.nll, b.nll), (a.rmsue, b.rmsue), (a.maue, b.maue), (a.rmse, b.rmse), (a.miou, b.miou), (a.sharpness, b.sharpness)] {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert_eq!(a.ece, b.ece);
    }

    #[test]
    fn coverage_of_three_sigma_intervals() {
        let pairs = gaussian_pairs(25_000, 1.0, 6);
        let c = coverage(&pairs, 3.0).unwrap();
        assert!((c - 0.9973).abs() < 0.002, "{c}");
    }

    #[test]
    fn report_renders_both_forms() {
        let r = evaluate(&gaussian_pairs(50, 1.0, 7), 2, 1, &EceOptions::default()).unwrap();
        let json = r.to_json();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let text = r.to_text();
        assert!(text.starts_with("# ece: mean-abs-dev levels=10 pooling=pooled\n"));
        assert!(text.contains("unmatched_detections"));
        assert_eq!(text.lines().count(), 12);
    }

    #[test]
    fn per_coordinate_pooling_is_available() {
        let pairs = gaussian_pairs(4000, 2.0, 8);
        let opts = EceOptions {
            levels: 10,
            pooling: EcePooling::PerCoordinate,
        };
        let a = ece_with(&pairs, &opts).unwrap();
        let b = ece(&pairs, 10).unwrap();
        assert!((a - b).abs() < 0.02);
    }
}
