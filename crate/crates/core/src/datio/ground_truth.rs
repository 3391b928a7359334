//! KITTI-style label files.
//!
//! A record is `class truncation occlusion alpha xmin ymin xmax ymax`
//! followed by any number of ignored fields (KITTI's 3D annotations).
//! Labels come either as a directory of per-image files, where the image
//! id is the file stem, or as one indexed file whose header is
//! `# boxprop ground-truth v1` and whose records carry the image id as an
//! extra first column.

use std::path::Path;

use super::{data_lines, fmt_f64, parse_f64, parse_int, read_text, write_text, Header, Warning};
use crate::error::{Error, Result};
use crate::geometry::Corners;
use crate::matching::GroundTruth;

/// Dataset conventions: class names and the largest valid occlusion level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Profile {
    pub name: &'static str,
    pub classes: &'static [&'static str],
    pub max_occlusion: u8,
}

impl Profile {
    pub const KITTI: Profile = Profile {
        name: "kitti",
        classes: &["Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram"],
        max_occlusion: 2,
    };

    pub const BDD: Profile = Profile {
        name: "bdd",
        classes: &[
            "pedestrian",
            "rider",
            "car",
            "truck",
            "bus",
            "train",
            "motorcycle",
            "bicycle",
            "traffic_light",
            "traffic_sign",
        ],
        max_occlusion: 1,
    };

    pub fn by_name(name: &str) -> Result<Profile> {
        match name {
            "kitti" => Ok(Profile::KITTI),
            "bdd" => Ok(Profile::BDD),
            _ => Err(Error::config(format!("unknown dataset profile '{name}' (expected kitti or bdd)"))),
        }
    }

    /// Class id for a label token. Integer tokens are taken as ids.
    pub fn class_id(&self, token: &str) -> Option<u32> {
        if let Some(i) = self.classes.iter().position(|c| *c == token) {
            return Some(i as u32);
        }
        token.parse().ok()
    }

    pub fn class_token(&self, id: u32) -> String {
        match self.classes.get(id as usize) {
            Some(name) => name.to_string(),
            None => id.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    pub records: Vec<GroundTruth>,
    pub warnings: Vec<Warning>,
}

const KIND: &str = "ground-truth";

fn parse_record(tokens: &[&str], image_id: &str, profile: &Profile) -> std::result::Result<(GroundTruth, Option<String>), String> {
    if tokens.len() < 8 {
        return Err(format!("expected at least 8 fields, found {}", tokens.len()));
    }
    let class_id = profile
        .class_id(tokens[0])
        .ok_or_else(|| format!("class '{}' is not in the {} profile; record skipped", tokens[0], profile.name))?;
    parse_f64(tokens[1], "truncation")?;
    let occlusion: u8 = parse_int(tokens[2], "occlusion")?;
    parse_f64(tokens[3], "alpha")?;
    let xmin = parse_f64(tokens[4], "xmin")?;
    let ymin = parse_f64(tokens[5], "ymin")?;
    let xmax = parse_f64(tokens[6], "xmax")?;
    let ymax = parse_f64(tokens[7], "ymax")?;
    let corners = Corners::new(ymin, xmin, ymax, xmax).map_err(|e| e.to_string())?;
    let warning = (occlusion > profile.max_occlusion).then(|| {
        format!(
            "occlusion level {occlusion} exceeds the {} maximum of {}",
            profile.name, profile.max_occlusion
        )
    });
    let gt = GroundTruth::new(image_id, class_id, corners, occlusion).map_err(|e| e.to_string())?;
    Ok((gt, warning))
}

fn read_file(path: &Path, profile: &Profile, out: &mut GroundTruthSet) -> Result<()> {
    let text = read_text(path)?;
    let indexed = text.lines().next().is_some_and(|l| l.trim_start().starts_with("# boxprop"));
    if indexed {
        Header::parse(&text, KIND, path)?;
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    for (line, content) in data_lines(&text) {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let (image_id, fields) = if indexed {
            (tokens[0].to_string(), &tokens[1..])
        } else {
            (stem.clone(), &tokens[..])
        };
        let warn = |message: String| Warning {
            path: path.to_path_buf(),
            line,
            message,
        };
        match parse_record(fields, &image_id, profile) {
            Ok((gt, w)) => {
                if let Some(w) = w {
                    out.warnings.push(warn(w));
                }
                out.records.push(gt);
            }
            Err(m) => out.warnings.push(warn(m)),
        }
    }
    Ok(())
}

/// Reads a label directory (every `*.txt`, in name order) or a single file.
///
/// A single file without the indexed header is one image's labels, named
/// by its stem. Malformed lines and unknown classes are skipped with a
/// warning; occlusion above the profile maximum keeps the record and warns.
pub fn read_ground_truth(path: &Path, profile: &Profile) -> Result<GroundTruthSet> {
    let mut out = GroundTruthSet::default();
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        for f in files {
            read_file(&f, profile, &mut out)?;
        }
    } else {
        read_file(path, profile, &mut out)?;
    }
    Ok(out)
}

fn record_line(g: &GroundTruth, profile: &Profile) -> String {
    let c = g.corners;
    format!(
        "{} 0 {} 0 {} {} {} {}",
        profile.class_token(g.class_id),
        g.occlusion,
        fmt_f64(c.xmin),
        fmt_f64(c.ymin),
        fmt_f64(c.xmax),
        fmt_f64(c.ymax)
    )
}

/// Writes one indexed file. Truncation and alpha are written as 0.
pub fn write_ground_truth(path: &Path, records: &[GroundTruth], profile: &Profile) -> Result<()> {
    let mut text = Header::render(KIND, &[("profile", profile.name.to_string())]);
    text.push_str("\n# image_id class truncation occlusion alpha xmin ymin xmax ymax\n");
    for g in records {
        if g.image_id.is_empty() || g.image_id.contains(char::is_whitespace) {
            return Err(Error::input(format!("image id '{}' cannot be written", g.image_id)));
        }
        text.push_str(&format!("{} {}\n", g.image_id, record_line(g, profile)));
    }
    write_text(path, &text)
}

/// Writes one KITTI-layout file per image id into `dir`.
pub fn write_ground_truth_dir(dir: &Path, records: &[GroundTruth], profile: &Profile) -> Result<()> {
    let mut by_image: std::collections::BTreeMap<&str, String> = std::collections::BTreeMap::new();
    for g in records {
        if g.image_id.is_empty() || g.image_id.contains(['/', '\\']) {
            return Err(Error::input(format!("image id '{}' cannot name a file", g.image_id)));
        }
        let s = by_image.entry(&g.image_id).or_default();
        s.push_str(&record_line(g, profile));
        s.push('\n');
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, text) in by_image {
        write_text(&dir.join(format!("{id}.txt")), &text)?;
    }
    Ok(())
}
