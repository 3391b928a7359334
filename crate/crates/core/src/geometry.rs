//! Box coordinates shared across decoding, matching and calibration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four regressed box coordinates, in the detector's output
/// order: center y, center x, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Coord {
    Y,
    X,
    H,
    W,
}

impl Coord {
    pub const ALL: [Coord; 4] = [Coord::Y, Coord::X, Coord::H, Coord::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Coord::Y => "y",
            Coord::X => "x",
            Coord::H => "h",
            Coord::W => "w",
        }
    }

    pub fn parse(token: &str) -> Option<Coord> {
        Coord::ALL.into_iter().find(|c| c.name() == token)
    }

    /// y and h are measured along the image height, x and w along the width.
    pub fn is_vertical(self) -> bool {
        matches!(self, Coord::Y | Coord::H)
    }

    pub fn is_size(self) -> bool {
        matches!(self, Coord::H | Coord::W)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box corners in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corners {
    pub ymin: f64,
    pub xmin: f64,
    pub ymax: f64,
    pub xmax: f64,
}

impl Corners {
    pub fn new(ymin: f64, xmin: f64, ymax: f64, xmax: f64) -> Result<Self> {
        let c = Self { ymin, xmin, ymax, xmax };
        if ![ymin, xmin, ymax, xmax].iter().all(|v| v.is_finite()) {
            return Err(Error::input(format!("non-finite box corners {c:?}")));
        }
        if ymax <= ymin || xmax <= xmin {
            return Err(Error::input(format!(
                "box corners must satisfy ymax > ymin and xmax > xmin, got {c:?}"
            )));
        }
        Ok(c)
    }

    pub fn from_center_size(y: f64, x: f64, h: f64, w: f64) -> Self {
        Self {
            ymin: y - h / 2.0,
            xmin: x - w / 2.0,
            ymax: y + h / 2.0,
            xmax: x + w / 2.0,
        }
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn area(&self) -> f64 {
        self.height().max(0.0) * self.width().max(0.0)
    }

    /// `[y, x, h, w]` center/size parameterization.
    pub fn center_size(&self) -> [f64; 4] {
        [
            (self.ymin + self.ymax) / 2.0,
            (self.xmin + self.xmax) / 2.0,
            self.height(),
            self.width(),
        ]
    }
}

/// Intersection over union of two corner boxes. Degenerate unions give 0.
pub fn iou(a: &Corners, b: &Corners) -> f64 {
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let inter = ih * iw;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
