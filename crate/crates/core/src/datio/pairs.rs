//! Matched pairs: a detection row followed by its ground truth.
//!
//! Residuals and IoU are not stored; they are recomputed on read.

use std::path::Path;

use super::{data_lines, fmt_f64, parse_error, parse_f64, parse_int, read_text, write_text, Header};
use crate::anchor::DecodedBox;
use crate::error::{Error, Result};
use crate::geometry::Corners;
use crate::matching::{Detection, GroundTruth, MatchedPair};

const KIND: &str = "pairs";
const COLUMNS: &str = "image_id class_id score y_mean y_sd x_mean x_sd h_mean h_sd w_mean w_sd \
                       gt_class_id occlusion gt_ymin gt_xmin gt_ymax gt_xmax";

pub fn write_pairs(path: &Path, pairs: &[MatchedPair]) -> Result<()> {
    let n_q = pairs.iter().filter(|p| p.detection.quality.is_some()).count();
    if n_q != 0 && n_q != pairs.len() {
        return Err(Error::input("quality must be present on every detection or on none"));
    }
    let quality = n_q != 0;
    let mut text = Header::render(KIND, &[("quality", quality.to_string())]);
    text.push_str(&format!("\n# {COLUMNS}{}\n", if quality { " quality" } else { "" }));
    for p in pairs {
        let d = &p.detection;
        let g = &p.ground_truth;
        if d.image_id.is_empty() || d.image_id.contains(char::is_whitespace) {
            return Err(Error::input(format!("image id '{}' cannot be written", d.image_id)));
        }
        text.push_str(&format!(
            "{} {} {}",
            d.image_id,
            d.class_id,
            d.score.map_or_else(|| "-".to_string(), fmt_f64)
        ));
        for (m, s) in d.bbox.means().into_iter().zip(d.bbox.sds()) {
            text.push_str(&format!(" {} {}", fmt_f64(m), fmt_f64(s)));
        }
        let c = g.corners;
        text.push_str(&format!(
            " {} {} {} {} {} {}",
            g.class_id,
            g.occlusion,
            fmt_f64(c.ymin),
            fmt_f64(c.xmin),
            fmt_f64(c.ymax),
            fmt_f64(c.xmax)
        ));
        if let Some(q) = d.quality {
            text.push_str(&format!(" {}", fmt_f64(q)));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

fn parse_row(t: &[&str], quality: bool) -> std::result::Result<MatchedPair, String> {
    let want = 17 + usize::from(quality);
    if t.len() != want {
        return Err(format!("expected {want} fields, found {}", t.len()));
    }
    let mut mean = [0.0; 4];
    let mut sd = [0.0; 4];
    for i in 0..4 {
        mean[i] = parse_f64(t[3 + 2 * i], "mean")?;
        sd[i] = parse_f64(t[4 + 2 * i], "sd")?;
    }
    let score = match t[2] {
        "-" => None,
        s => Some(parse_f64(s, "score")?),
    };
    let det = Detection {
        image_id: t[0].to_string(),
        class_id: parse_int(t[1], "class_id")?,
        bbox: DecodedBox::from_arrays(mean, sd).map_err(|e| e.to_string())?,
        score,
        quality: if quality { Some(parse_f64(t[17], "quality")?) } else { None },
    };
    let c: Vec<f64> = t[13..17].iter().map(|s| parse_f64(s, "gt corner")).collect::<std::result::Result<_, _>>()?;
    let corners = Corners::new(c[0], c[1], c[2], c[3]).map_err(|e| e.to_string())?;
    let gt = GroundTruth::new(t[0], parse_int(t[11], "gt_class_id")?, corners, parse_int(t[12], "occlusion")?)
        .map_err(|e| e.to_string())?;
    MatchedPair::new(det, gt).map_err(|e| e.to_string())
}

pub fn read_pairs(path: &Path) -> Result<Vec<MatchedPair>> {
    let text = read_text(path)?;
    let h = Header::parse(&text, KIND, path)?;
    let quality = h.flag("quality", path)?;
    data_lines(&text)
        .map(|(line, l)| {
            let t: Vec<&str> = l.split_whitespace().collect();
            parse_row(&t, quality).map_err(|m| parse_error(path, line, m))
        })
        .collect()
}
