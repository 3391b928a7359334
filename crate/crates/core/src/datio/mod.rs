//! Text formats for ground truth, detections, matched pairs, anchor
//! layouts, calibration models and synthetic-truth sidecars.
//!
//! Every format is line-oriented and whitespace-separated. Lines starting
//! with `#` are comments, except for the versioned header line that our
//! own formats begin with. Floats are written in shortest round-trip form,
//! so write-then-read reproduces values bit for bit.

mod anchor_config;
mod detections;
mod ground_truth;
mod model;
mod pairs;
mod truth;

use std::fmt;
use std::path::{Path, PathBuf};

pub use anchor_config::{format_anchor_config, parse_anchor_config, read_anchor_config, write_anchor_config};
pub use detections::{
    decode_anchor_detections, read_anchor_detections, read_detections, read_image_detections, write_anchor_detections, write_detections,
    AnchorDetection, CoordinateSpace, DetectionSet,
};
pub use ground_truth::{read_ground_truth, write_ground_truth, write_ground_truth_dir, GroundTruthSet, Profile};
pub use model::{format_model, parse_model, read_model, write_model};
pub use pairs::{read_pairs, write_pairs};
pub use truth::{read_truth, write_truth, TruthRecord};

use crate::error::{Error, Result};

/// A recoverable problem found while parsing; the offending line is skipped
/// or its value kept as documented by the reader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank, non-comment lines with 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_f64(tok: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = tok.parse().map_err(|_| format!("{what}: '{tok}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what}: '{tok}' is not finite"))
    }
}

pub(crate) fn parse_int<T: std::str::FromStr>(tok: &str, what: &str) -> std::result::Result<T, String> {
    tok.parse().map_err(|_| format!("{what}: '{tok}' is not a valid integer"))
}

/// Versioned header `# boxprop <kind> v<N> key=value ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Header {
    pub fields: Vec<(String, String)>,
}

impl Header {
    pub const VERSION: &'static str = "v1";

    pub fn render(kind: &str, fields: &[(&str, String)]) -> String {
        let mut s = format!("# boxprop {kind} {}", Self::VERSION);
        for (k, v) in fields {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }

    /// Parses the first line of `text` as a header of `kind`.
    pub fn parse(text: &str, kind: &str, path: &Path) -> Result<Header> {
        let first = text.lines().next().unwrap_or("").trim();
        let mut toks = first.split_whitespace();
        let ok = toks.next() == Some("#") && toks.next() == Some("boxprop") && toks.next() == Some(kind);
        if !ok {
            return Err(Error::Format(format!(
                "{}: expected header '# boxprop {kind} {}', found '{first}'",
                path.display(),
                Self::VERSION
            )));
        }
        match toks.next() {
            Some(Self::VERSION) => {}
            other => {
                return Err(Error::Format(format!(
                    "{}: unsupported {kind} version {}",
                    path.display(),
                    other.unwrap_or("(missing)")
                )))
            }
        }
        let mut fields = Vec::new();
        for t in toks {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| parse_error(path, 1, format!("header field '{t}' is not key=value")))?;
            fields.push((k.to_string(), v.to_string()));
        }
        Ok(Header { fields })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| parse_error(path, 1, format!("header is missing '{key}='")))
    }

    pub fn flag(&self, key: &str, path: &Path) -> Result<bool> {
        match self.require(key, path)? {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(parse_error(path, 1, format!("header '{key}' must be true or false, got '{v}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 1e-300, 6.02e23, -2.5e-7, f64::MAX, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(2.0), "2");
        assert_eq!(fmt_f64(1e-300), "1e-300");
    }

    #[test]
    fn header_parsing() {
        let p = Path::new("f");
        let h = Header::parse("# boxprop thing v1 a=1 b=true\nrest", "thing", p).unwrap();
        assert_eq!(h.get("a"), Some("1"));
        assert!(h.flag("b", p).unwrap());
        assert!(h.require("c", p).is_err());
        assert!(Header::parse("# boxprop thing v2", "thing", p).is_err());
        assert!(Header::parse("# boxprop other v1", "thing", p).is_err());
        assert!(Header::parse("", "thing", p).is_err());
    }

    #[test]
    fn comment_and_blank_lines_are_skipped() {
        let lines: Vec<_> = data_lines("# c\n\n a b \n#x\nc").collect();
        assert_eq!(lines, vec![(3, "a b"), (5, "c")]);
    }
}
