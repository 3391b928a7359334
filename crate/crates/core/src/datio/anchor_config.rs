//! `key = value` file for [`AnchorGridConfig`]. Lists are comma-separated;
//! omitted keys take their default.

use std::path::Path;

use super::{fmt_f64, parse_error, read_text, write_text};
use crate::anchor::AnchorGridConfig;
use crate::error::Result;

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub fn parse_anchor_config(text: &str, path: &Path) -> Result<AnchorGridConfig> {
    let mut cfg = AnchorGridConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| parse_error(path, i + 1, m);
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected 'key = value', found '{line}'")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{key}: '{v}' is not a number")));
        let int = |v: &str| v.parse::<u32>().map_err(|_| err(format!("{key}: '{v}' is not a non-negative integer")));
        match key {
            "image_height" => cfg.image_height = int(value)?,
            "image_width" => cfg.image_width = int(value)?,
            "strides" => cfg.strides = split_list(value).map(int).collect::<Result<_>>()?,
            "scales_per_cell" => cfg.scales_per_cell = int(value)?,
            "aspect_ratios" => cfg.aspect_ratios = split_list(value).map(num).collect::<Result<_>>()?,
            "base_scale" => cfg.base_scale = num(value)?,
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_anchor_config(path: &Path) -> Result<AnchorGridConfig> {
    parse_anchor_config(&read_text(path)?, path)
}

pub fn format_anchor_config(cfg: &AnchorGridConfig) -> String {
    let join = |v: Vec<String>| v.join(", ");
    format!(
        "image_height = {}\nimage_width = {}\nstrides = {}\nscales_per_cell = {}\naspect_ratios = {}\nbase_scale = {}\n",
        cfg.image_height,
        cfg.image_width,
        join(cfg.strides.iter().map(|s| s.to_string()).collect()),
        cfg.scales_per_cell,
        join(cfg.aspect_ratios.iter().map(|r| fmt_f64(*r)).collect()),
        fmt_f64(cfg.base_scale)
    )
}

pub fn write_anchor_config(path: &Path, cfg: &AnchorGridConfig) -> Result<()> {
    cfg.validate()?;
    write_text(path, &format_anchor_config(cfg))
}
