//! Detection records in image pixels or as anchor-relative offsets.
//!
//! The header declares the coordinate space so that decoding is applied
//! exactly once. Rows are strict: any malformed row is an error, since
//! silently dropping a detection would change matching.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{data_lines, fmt_f64, parse_error, parse_f64, parse_int, read_text, write_text, Header};
use crate::anchor::{build_anchor_grid, splitmix64, AnchorGridConfig, DecodeVariant, DecodedBox, Decoder, GaussianBox4};
use crate::error::{Error, Result};
use crate::matching::Detection;

const KIND: &str = "detections";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateSpace {
    /// Decoded means and sds in pixels.
    Image,
    /// Offset means and variances relative to an anchor of the grid.
    Anchor,
}

impl fmt::Display for CoordinateSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoordinateSpace::Image => "image",
            CoordinateSpace::Anchor => "anchor",
        })
    }
}

impl FromStr for CoordinateSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(CoordinateSpace::Image),
            "anchor" => Ok(CoordinateSpace::Anchor),
            _ => Err(Error::Format(format!("unknown coordinate space '{s}'"))),
        }
    }
}

/// Network output for one anchor before decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDetection {
    pub image_id: String,
    pub class_id: u32,
    pub score: Option<f64>,
    pub anchor_index: usize,
    pub offsets: GaussianBox4,
    pub quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectionSet {
    Image(Vec<Detection>),
    Anchor(Vec<AnchorDetection>),
}

const IMAGE_COLUMNS: &str = "image_id class_id score y_mean y_sd x_mean x_sd h_mean h_sd w_mean w_sd";
const ANCHOR_COLUMNS: &str = "image_id class_id score anchor_index y_mu y_var x_mu x_var h_mu h_var w_mu w_var";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), fmt_f64)
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(char::is_whitespace) || id.starts_with('#') {
        Err(Error::input(format!("image id '{id}' cannot be written")))
    } else {
        Ok(())
    }
}

fn header(space: CoordinateSpace, quality: bool) -> String {
    let cols = match space {
        CoordinateSpace::Image => IMAGE_COLUMNS,
        CoordinateSpace::Anchor => ANCHOR_COLUMNS,
    };
    format!(
        "{}\n# {cols}{}\n",
        Header::render(KIND, &[("space", space.to_string()), ("quality", quality.to_string())]),
        if quality { " quality" } else { "" }
    )
}

fn has_quality<T>(items: &[T], q: impl Fn(&T) -> Option<f64>) -> Result<bool> {
    let n = items.iter().filter(|d| q(d).is_some()).count();
    if n != 0 && n != items.len() {
        return Err(Error::input("quality must be present on every detection or on none"));
    }
    Ok(n != 0 && n == items.len())
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let quality = has_quality(dets, |d| d.quality)?;
    let mut text = header(CoordinateSpace::Image, quality);
    for d in dets {
        check_id(&d.image_id)?;
        text.push_str(&format!("{} {} {}", d.image_id, d.class_id, fmt_opt(d.score)));
        for (m, s) in d.bbox.means().into_iter().zip(d.bbox.sds()) {
            text.push_str(&format!(" {} {}", fmt_f64(m), fmt_f64(s)));
        }
        if quality {
            text.push_str(&format!(" {}", fmt_opt(d.quality)));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_anchor_detections(path: &Path, dets: &[AnchorDetection]) -> Result<()> {
    let quality = has_quality(dets, |d| d.quality)?;
    let mut text = header(CoordinateSpace::Anchor, quality);
    for d in dets {
        check_id(&d.image_id)?;
        text.push_str(&format!("{} {} {} {}", d.image_id, d.class_id, fmt_opt(d.score), d.anchor_index));
        for (m, v) in d.offsets.means().into_iter().zip(d.offsets.vars()) {
            text.push_str(&format!(" {} {}", fmt_f64(m), fmt_f64(v)));
        }
        if quality {
            text.push_str(&format!(" {}", fmt_opt(d.quality)));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

fn parse_score(tok: &str) -> std::result::Result<Option<f64>, String> {
    if tok == "-" {
        return Ok(None);
    }
    let s = parse_f64(tok, "score")?;
    if !(0.0..=1.0).contains(&s) {
        return Err(format!("score {s} is outside [0, 1]"));
    }
    Ok(Some(s))
}

fn parse_pairs8(toks: &[&str], names: [&str; 2]) -> std::result::Result<([f64; 4], [f64; 4]), String> {
    let mut a = [0.0; 4];
    let mut b = [0.0; 4];
    for (i, c) in ["y", "x", "h", "w"].iter().enumerate() {
        a[i] = parse_f64(toks[2 * i], &format!("{c}_{}", names[0]))?;
        b[i] = parse_f64(toks[2 * i + 1], &format!("{c}_{}", names[1]))?;
    }
    Ok((a, b))
}

fn parse_image_row(toks: &[&str], quality: bool) -> std::result::Result<Detection, String> {
    let want = 11 + usize::from(quality);
    if toks.len() != want {
        return Err(format!("expected {want} fields, found {}", toks.len()));
    }
    let (mean, sd) = parse_pairs8(&toks[3..11], ["mean", "sd"])?;
    Ok(Detection {
        image_id: toks[0].to_string(),
        class_id: parse_int(toks[1], "class_id")?,
        score: parse_score(toks[2])?,
        bbox: DecodedBox::from_arrays(mean, sd).map_err(|e| e.to_string())?,
        quality: if quality { Some(parse_f64(toks[11], "quality")?) } else { None },
    })
}

fn parse_anchor_row(toks: &[&str], quality: bool) -> std::result::Result<AnchorDetection, String> {
    let want = 12 + usize::from(quality);
    if toks.len() != want {
        return Err(format!("expected {want} fields, found {}", toks.len()));
    }
    let (mu, var) = parse_pairs8(&toks[4..12], ["mu", "var"])?;
    Ok(AnchorDetection {
        image_id: toks[0].to_string(),
        class_id: parse_int(toks[1], "class_id")?,
        score: parse_score(toks[2])?,
        anchor_index: parse_int(toks[3], "anchor_index")?,
        offsets: GaussianBox4::new(mu, var).map_err(|e| e.to_string())?,
        quality: if quality { Some(parse_f64(toks[12], "quality")?) } else { None },
    })
}

/// Reads either space. With `expected`, a header declaring the other space
/// is a format error.
pub fn read_detections(path: &Path, expected: Option<CoordinateSpace>) -> Result<DetectionSet> {
    let text = read_text(path)?;
    let h = Header::parse(&text, KIND, path)?;
    let space: CoordinateSpace = h.require("space", path)?.parse()?;
    let quality = h.flag("quality", path)?;
    if let Some(e) = expected {
        if e != space {
            return Err(Error::Format(format!(
                "{}: file holds {space}-space detections but {e}-space detections were expected",
                path.display()
            )));
        }
    }
    let rows = data_lines(&text).map(|(line, l)| (line, l.split_whitespace().collect::<Vec<_>>()));
    Ok(match space {
        CoordinateSpace::Image => DetectionSet::Image(
            rows.map(|(line, t)| parse_image_row(&t, quality).map_err(|m| parse_error(path, line, m)))
                .collect::<Result<_>>()?,
        ),
        CoordinateSpace::Anchor => DetectionSet::Anchor(
            rows.map(|(line, t)| parse_anchor_row(&t, quality).map_err(|m| parse_error(path, line, m)))
                .collect::<Result<_>>()?,
        ),
    })
}

pub fn read_image_detections(path: &Path) -> Result<Vec<Detection>> {
    match read_detections(path, Some(CoordinateSpace::Image))? {
        DetectionSet::Image(d) => Ok(d),
        DetectionSet::Anchor(_) => unreachable!("space checked"),
    }
}

pub fn read_anchor_detections(path: &Path) -> Result<Vec<AnchorDetection>> {
    match read_detections(path, Some(CoordinateSpace::Anchor))? {
        DetectionSet::Anchor(d) => Ok(d),
        DetectionSet::Image(_) => unreachable!("space checked"),
    }
}

/// Decodes anchor-space records against the grid built from `config`.
///
/// Monte Carlo variants draw record `i` from the stream
/// `splitmix64(seed + i)`, so output does not depend on batch splitting.
pub fn decode_anchor_detections(
    records: &[AnchorDetection],
    config: &AnchorGridConfig,
    variant: DecodeVariant,
    train_correction: bool,
) -> Result<Vec<Detection>> {
    let grid = build_anchor_grid(config)?;
    let shared = Decoder::new(variant, train_correction)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let anchor = grid.get(r.anchor_index).ok_or_else(|| {
                Error::input(format!(
                    "anchor index {} is outside the grid of {} anchors",
                    r.anchor_index,
                    grid.len()
                ))
            })?;
            let bbox = match variant {
                DecodeVariant::Samp { samples, seed } => {
                    let v = DecodeVariant::Samp {
                        samples,
                        seed: splitmix64(seed.wrapping_add(i as u64)),
                    };
                    Decoder::new(v, train_correction)?.decode(&r.offsets, anchor)?
                }
                _ => shared.decode(&r.offsets, anchor)?,
            };
            Ok(Detection {
                image_id: r.image_id.clone(),
                class_id: r.class_id,
                bbox,
                score: r.score,
                quality: r.quality,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_dets(n: usize, quality: bool, seed: u64) -> Vec<Detection> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Detection {
                image_id: format!("im{}", i % 17),
                class_id: rng.random_range(0..10),
                bbox: DecodedBox::from_arrays(
                    std::array::from_fn(|_| rng.random_range(-1e3..1e4)),
                    std::array::from_fn(|_| rng.random::<f64>() * 10f64.powi(rng.random_range(-12..4))),
                )
                .unwrap(),
                score: (i % 3 != 0).then(|| rng.random()),
                quality: quality.then(|| rng.random_range(0.0..100.0)),
            })
            .collect()
    }

    #[test]
    fn image_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for quality in [false, true] {
            let dets = random_dets(1000, quality, quality as u64);
            let p = dir.path().join(format!("d{quality}.txt"));
            write_detections(&p, &dets).unwrap();
            assert_eq!(read_image_detections(&p).unwrap(), dets);
            let first = std::fs::read(&p).unwrap();
            write_detections(&p, &dets).unwrap();
            assert_eq!(std::fs::read(&p).unwrap(), first);
        }
    }

    #[test]
    fn anchor_round_trip_and_space_mismatch() {
        let dets: Vec<AnchorDetection> = (0..50)
            .map(|i| AnchorDetection {
                image_id: "a".into(),
                class_id: 1,
                score: Some(0.5),
                anchor_index: i * 7,
                offsets: GaussianBox4::new([0.1, -0.2, 0.3 * i as f64, 0.0], [0.01, 0.02, 0.0, 1e-9]).unwrap(),
                quality: None,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_anchor_detections(&p, &dets).unwrap();
        assert_eq!(read_anchor_detections(&p).unwrap(), dets);
        assert!(matches!(read_image_detections(&p), Err(Error::Format(_))));
    }

    #[test]
    fn decoding_checks_anchor_indices() {
        let cfg = AnchorGridConfig {
            image_height: 64,
            image_width: 64,
            strides: vec![32],
            scales_per_cell: 1,
            aspect_ratios: vec![1.0],
            base_scale: 1.0,
        };
        let rec = |anchor_index| AnchorDetection {
            image_id: "a".into(),
            class_id: 0,
            score: None,
            anchor_index,
            offsets: GaussianBox4::new([0.0; 4], [0.0, 0.0, 0.1, 0.1]).unwrap(),
            quality: None,
        };
        let out = decode_anchor_detections(&[rec(3)], &cfg, DecodeVariant::LNorm, true).unwrap();
        assert_eq!(out[0].bbox.means(), [48.0, 48.0, 32.0, 32.0]);
        assert!(decode_anchor_detections(&[rec(4)], &cfg, DecodeVariant::LNorm, true).is_err());
        let samp = DecodeVariant::Samp { samples: 100, seed: 1 };
        let a = decode_anchor_detections(&[rec(0), rec(1)], &cfg, samp, false).unwrap();
        let b = decode_anchor_detections(&[rec(0)], &cfg, samp, false).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a[0].bbox.sds()[2] / 32.0, a[1].bbox.sds()[2] / 32.0);
    }

    #[test]
    fn missing_quality_column_leaves_quality_absent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.txt");
        write_detections(&p, &random_dets(5, false, 3)).unwrap();
        assert!(read_image_detections(&p).unwrap().iter().all(|d| d.quality.is_none()));
    }

    #[test]
    fn malformed_rows_are_errors_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.txt");
        std::fs::write(
            &p,
            format!("{}im 0 0.5 1 1 1 1 1 1 1 1\nim 0 0.5 1 -1 1 1 1 1 1 1\n", header(CoordinateSpace::Image, false)),
        )
        .unwrap();
        match read_image_detections(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "image 0 0.5 1 1 1 1 1 1 1 1\n").unwrap();
        assert!(matches!(read_image_detections(&p), Err(Error::Format(_))));
    }

    #[test]
    fn partial_quality_is_rejected() {
        let mut dets = random_dets(3, true, 4);
        dets[1].quality = None;
        let dir = tempfile::tempdir().unwrap();
        assert!(write_detections(&dir.path().join("x.txt"), &dets).is_err());
    }
}
