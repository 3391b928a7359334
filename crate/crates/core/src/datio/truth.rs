//! Sidecar written by the synthetic generator: the noise each object was
//! actually drawn with, for oracle checks.

use std::path::Path;

use super::{data_lines, fmt_f64, parse_error, parse_f64, parse_int, read_text, write_text, Header};
use crate::error::Result;

const KIND: &str = "truth";

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub image_id: String,
    /// Index of the object within its image, in ground-truth file order.
    pub object: usize,
    pub class_id: u32,
    pub occlusion: u8,
    pub quality: f64,
    /// True noise sd of `(y, x, h, w)` in pixels.
    pub sigma_true: [f64; 4],
    /// Sd written to the detections file.
    pub sigma_reported: [f64; 4],
    /// Whether a detection was emitted for the object.
    pub detected: bool,
}

const COLUMNS: &str = "image_id object class_id occlusion quality \
                       true_y true_x true_h true_w reported_y reported_x reported_h reported_w detected";

pub fn write_truth(path: &Path, records: &[TruthRecord]) -> Result<()> {
    let mut text = Header::render(KIND, &[]);
    text.push_str(&format!("\n# {COLUMNS}\n"));
    for r in records {
        text.push_str(&format!("{} {} {} {} {}", r.image_id, r.object, r.class_id, r.occlusion, fmt_f64(r.quality)));
        for v in r.sigma_true.iter().chain(&r.sigma_reported) {
            text.push_str(&format!(" {}", fmt_f64(*v)));
        }
        text.push_str(if r.detected { " 1\n" } else { " 0\n" });
    }
    write_text(path, &text)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    let text = read_text(path)?;
    Header::parse(&text, KIND, path)?;
    data_lines(&text)
        .map(|(line, l)| {
            let t: Vec<&str> = l.split_whitespace().collect();
            let parse = || -> std::result::Result<TruthRecord, String> {
                if t.len() != 14 {
                    return Err(format!("expected 14 fields, found {}", t.len()));
                }
                let mut v = [0.0; 8];
                for (i, x) in v.iter_mut().enumerate() {
                    *x = parse_f64(t[5 + i], "sigma")?;
                }
                Ok(TruthRecord {
                    image_id: t[0].to_string(),
                    object: parse_int(t[1], "object")?,
                    class_id: parse_int(t[2], "class_id")?,
                    occlusion: parse_int(t[3], "occlusion")?,
                    quality: parse_f64(t[4], "quality")?,
                    sigma_true: [v[0], v[1], v[2], v[3]],
                    sigma_reported: [v[4], v[5], v[6], v[7]],
                    detected: match t[13] {
                        "1" => true,
                        "0" => false,
                        o => return Err(format!("detected must be 0 or 1, got '{o}'")),
                    },
                })
            };
            parse().map_err(|m| parse_error(path, line, m))
        })
        .collect()
}
