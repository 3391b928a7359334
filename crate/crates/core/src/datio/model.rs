//! Calibration model text format.
//!
//! After the header, one `key value...` entry per line:
//!
//! ```text
//! scheme ir-pco-cl
//! mode rel
//! basis predicted
//! target_scale 1.2533141373155003
//! map */* 3 0.5 1 2 0.6 1.1 2.4
//! map y/0 2 0.5 1 0.7 1.2
//! fallback w/4
//! ```
//!
//! A `map` line is the group key, the breakpoint count `n`, then `n`
//! breakpoints and `n` values; `*/*` is the global map. Factor models
//! carry `loss` and `factor` instead of `target_scale`, `map` and
//! `fallback`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{data_lines, fmt_f64, parse_error, parse_f64, parse_int, read_text, write_text, Header};
use crate::calibrate::{CalibrationModel, GroupKey, IsotonicMap, IsotonicModel, ModelBody, Scheme};
use crate::error::Result;
use crate::geometry::Coord;

const KIND: &str = "calibration-model";

fn fmt_map(key: &GroupKey, m: &IsotonicMap) -> String {
    let mut s = format!("map {key} {}", m.breakpoints().len());
    for v in m.breakpoints().iter().chain(m.values()) {
        s.push(' ');
        s.push_str(&fmt_f64(*v));
    }
    s
}

pub fn format_model(model: &CalibrationModel) -> String {
    let mut out = Header::render(KIND, &[]);
    out.push('\n');
    out.push_str(&format!("scheme {}\nmode {}\nbasis {}\n", model.scheme, model.mode, model.basis.name()));
    match &model.body {
        ModelBody::Factor { loss, factor } => {
            out.push_str(&format!("loss {loss}\nfactor {}\n", fmt_f64(*factor)));
        }
        ModelBody::Isotonic(m) => {
            out.push_str(&format!("target_scale {}\n", fmt_f64(m.target_scale)));
            out.push_str(&fmt_map(&GroupKey::GLOBAL, &m.global));
            out.push('\n');
            for (k, map) in &m.groups {
                out.push_str(&fmt_map(k, map));
                out.push('\n');
            }
            for k in &m.fallback {
                out.push_str(&format!("fallback {k}\n"));
            }
        }
    }
    out
}

fn parse_key(tok: &str) -> std::result::Result<GroupKey, String> {
    let (c, k) = tok.split_once('/').ok_or_else(|| format!("group key '{tok}' is not coord/class"))?;
    let coord = match c {
        "*" => None,
        c => Some(Coord::parse(c).ok_or_else(|| format!("unknown coordinate '{c}'"))?),
    };
    let class = match k {
        "*" => None,
        k => Some(parse_int(k, "class")?),
    };
    Ok(GroupKey { coord, class })
}

pub fn parse_model(text: &str, path: &Path) -> Result<CalibrationModel> {
    Header::parse(text, KIND, path)?;
    let mut scalars: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut maps: BTreeMap<GroupKey, IsotonicMap> = BTreeMap::new();
    let mut fallback = BTreeSet::new();
    for (line, l) in data_lines(text) {
        let err = |m: String| parse_error(path, line, m);
        let t: Vec<&str> = l.split_whitespace().collect();
        match t[0] {
            "map" => {
                if t.len() < 3 {
                    return Err(err("map needs a key and a count".into()));
                }
                let key = parse_key(t[1]).map_err(err)?;
                let n: usize = parse_int(t[2], "count").map_err(err)?;
                if t.len() != 3 + 2 * n {
                    return Err(err(format!("map declares {n} points but has {} numbers", t.len() - 3)));
                }
                let nums: Vec<f64> = t[3..].iter().map(|v| parse_f64(v, "map entry")).collect::<std::result::Result<_, _>>().map_err(err)?;
                let map = IsotonicMap::new(nums[..n].to_vec(), nums[n..].to_vec()).map_err(|e| err(e.to_string()))?;
                if maps.insert(key, map).is_some() {
                    return Err(err(format!("duplicate map for {key}")));
                }
            }
            "fallback" if t.len() == 2 => {
                fallback.insert(parse_key(t[1]).map_err(err)?);
            }
            k @ ("scheme" | "mode" | "basis" | "target_scale" | "loss" | "factor") if t.len() == 2 => {
                if scalars.insert(k, (line, t[1])).is_some() {
                    return Err(err(format!("duplicate '{k}'")));
                }
            }
            _ => return Err(err(format!("unrecognized entry '{l}'"))),
        }
    }
    let get = |k: &str| scalars.get(k).copied().ok_or_else(|| parse_error(path, 1, format!("model is missing '{k}'")));
    let at = |k: &str, e: crate::Error| match scalars.get(k) {
        Some((line, _)) => parse_error(path, *line, e.to_string()),
        None => e,
    };
    let scheme: Scheme = get("scheme")?.1.parse().map_err(|e| at("scheme", e))?;
    let mode = get("mode")?.1.parse().map_err(|e| at("mode", e))?;
    let basis = get("basis")?.1.parse().map_err(|e| at("basis", e))?;

    if scheme == Scheme::Fs {
        let loss = get("loss")?.1.parse().map_err(|e| at("loss", e))?;
        let (line, f) = get("factor")?;
        let factor = parse_f64(f, "factor").map_err(|m| parse_error(path, line, m))?;
        if !maps.is_empty() || !fallback.is_empty() || scalars.contains_key("target_scale") {
            return Err(parse_error(path, 1, "factor model must not contain isotonic entries"));
        }
        let mut m = CalibrationModel::factor(loss, factor, mode).map_err(|e| at("factor", e))?;
        m.basis = basis;
        return Ok(m);
    }
    if scalars.contains_key("loss") || scalars.contains_key("factor") {
        return Err(parse_error(path, 1, "isotonic model must not contain loss or factor"));
    }
    let (line, ts) = get("target_scale")?;
    let target_scale = parse_f64(ts, "target_scale").map_err(|m| parse_error(path, line, m))?;
    let global = maps
        .remove(&GroupKey::GLOBAL)
        .ok_or_else(|| parse_error(path, 1, "isotonic model is missing the global map '*/*'"))?;
    for k in maps.keys().chain(&fallback) {
        if *k != scheme.key(k.coord.unwrap_or(Coord::Y), k.class.unwrap_or(0)) {
            return Err(parse_error(path, 1, format!("group {k} does not belong to scheme {scheme}")));
        }
    }
    CalibrationModel::isotonic(
        scheme,
        mode,
        basis,
        IsotonicModel {
            target_scale,
            global,
            groups: maps,
            fallback,
        },
    )
}

pub fn read_model(path: &Path) -> Result<CalibrationModel> {
    parse_model(&read_text(path)?, path)
}

pub fn write_model(path: &Path, model: &CalibrationModel) -> Result<()> {
    write_text(path, &format_model(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::{FactorLoss, Mode, SizeBasis};

    fn iso_model() -> CalibrationModel {
        let mut groups = BTreeMap::new();
        groups.insert(
            GroupKey { coord: Some(Coord::Y), class: Some(0) },
            IsotonicMap::new(vec![0.1, 0.30000000000000004], vec![1.0 / 3.0, 2.0]).unwrap(),
        );
        groups.insert(
            GroupKey { coord: Some(Coord::W), class: Some(12) },
            IsotonicMap::new(vec![1e-9], vec![7.5]).unwrap(),
        );
        let mut fallback = BTreeSet::new();
        fallback.insert(GroupKey { coord: Some(Coord::H), class: Some(3) });
        CalibrationModel::isotonic(
            Scheme::IrPcoCl,
            Mode::Relative,
            SizeBasis::GroundTruth,
            IsotonicModel {
                target_scale: crate::numeric::SQRT_PI_OVER_2,
                global: IsotonicMap::new(vec![0.0, 1.0, 2.5], vec![0.0, 0.0, 9.75]).unwrap(),
                groups,
                fallback,
            },
        )
        .unwrap()
    }

    #[test]
    fn isotonic_round_trip_is_exact() {
        let m = iso_model();
        let text = format_model(&m);
        assert_eq!(parse_model(&text, Path::new("m")).unwrap(), m);
        assert!(text.contains("map y/0 2 0.1 0.30000000000000004 0.3333333333333333 2\n"));
        assert!(text.contains("fallback h/3\n"));
    }

    #[test]
    fn factor_round_trip_is_exact() {
        let m = CalibrationModel::factor(FactorLoss::Maue, 0.1 + 0.2, Mode::Absolute).unwrap();
        assert_eq!(parse_model(&format_model(&m), Path::new("m")).unwrap(), m);
    }

    #[test]
    fn rejects_inconsistent_models() {
        let p = Path::new("m");
        let good = format_model(&iso_model());
        assert!(parse_model(&good.replace("scheme ir-pco-cl", "scheme ir-cl"), p).is_err());
        assert!(parse_model(&good.replace("map */* ", "map x/* "), p).is_err());
        assert!(parse_model(&good.replace("map y/0 2", "map y/0 3"), p).is_err());
        assert!(parse_model(&good.replace("v1", "v9"), p).is_err());
        assert!(parse_model(&format!("{good}factor 2\n"), p).is_err());
    }
}
