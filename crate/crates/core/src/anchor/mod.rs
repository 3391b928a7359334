//! Anchor grids and the anchor-relative box codec.
//!
//! The detector regresses four offsets per anchor. Centers are affine in
//! the offsets; sizes pass through `exp` and are therefore log-normal when
//! the offsets are Gaussian. [`decode`] exposes the propagation variants
//! side by side so they can be compared on identical inputs.

mod codec;
mod grid;
mod loss;

pub use codec::{decode, encode, rescale, splitmix64, DecodeVariant, Decoder};
pub use grid::{best_anchor, build_anchor_grid, AnchorGridConfig};
pub use loss::{nll_loss, LossItem};

use serde::{Deserialize, Serialize};

use crate::dist::{Gaussian1, Moments1};
use crate::error::{Error, Result};
use crate::geometry::{Coord, Corners};

/// Reference box the offsets are relative to. Center and size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub y: f64,
    pub x: f64,
    pub h: f64,
    pub w: f64,
}

impl Anchor {
    pub fn new(y: f64, x: f64, h: f64, w: f64) -> Result<Self> {
        if !(h > 0.0 && w > 0.0) || ![y, x, h, w].iter().all(|v| v.is_finite()) {
            return Err(Error::input(format!(
                "anchor needs finite center and positive size, got y={y} x={x} h={h} w={w}"
            )));
        }
        Ok(Self { y, x, h, w })
    }

    pub fn corners(&self) -> Corners {
        Corners::from_center_size(self.y, self.x, self.h, self.w)
    }

    /// Anchor extent along the axis of `coord`.
    pub fn extent(&self, coord: Coord) -> f64 {
        if coord.is_vertical() {
            self.h
        } else {
            self.w
        }
    }

    /// Anchor center along the axis of `coord`.
    pub fn center(&self, coord: Coord) -> f64 {
        if coord.is_vertical() {
            self.y
        } else {
            self.x
        }
    }
}

/// Independent Gaussians over the four anchor-relative offsets
/// `(ŷ, x̂, ĥ, ŵ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBox4 {
    pub coords: [Gaussian1; 4],
}

impl GaussianBox4 {
    pub fn new(mu: [f64; 4], var: [f64; 4]) -> Result<Self> {
        Ok(Self {
            coords: [
                Gaussian1::new(mu[0], var[0])?,
                Gaussian1::new(mu[1], var[1])?,
                Gaussian1::new(mu[2], var[2])?,
                Gaussian1::new(mu[3], var[3])?,
            ],
        })
    }

    pub fn from_means(mu: [f64; 4]) -> Result<Self> {
        Self::new(mu, [0.0; 4])
    }

    pub fn get(&self, c: Coord) -> &Gaussian1 {
        &self.coords[c.index()]
    }

    pub fn means(&self) -> [f64; 4] {
        self.coords.map(|g| g.mu())
    }

    pub fn vars(&self) -> [f64; 4] {
        self.coords.map(|g| g.var())
    }
}

/// Image-space box distribution: mean and sd per coordinate, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedBox {
    pub coords: [Moments1; 4],
}

impl DecodedBox {
    pub fn new(coords: [Moments1; 4]) -> Self {
        Self { coords }
    }

    pub fn from_arrays(mean: [f64; 4], sd: [f64; 4]) -> Result<Self> {
        Ok(Self {
            coords: [
                Moments1::new(mean[0], sd[0])?,
                Moments1::new(mean[1], sd[1])?,
                Moments1::new(mean[2], sd[2])?,
                Moments1::new(mean[3], sd[3])?,
            ],
        })
    }

    pub fn get(&self, c: Coord) -> &Moments1 {
        &self.coords[c.index()]
    }

    pub fn means(&self) -> [f64; 4] {
        self.coords.map(|m| m.mean)
    }

    pub fn sds(&self) -> [f64; 4] {
        self.coords.map(|m| m.sd)
    }

    pub fn with_sds(&self, sd: [f64; 4]) -> Result<Self> {
        Self::from_arrays(self.means(), sd)
    }

    /// Corners implied by the mean center and mean size.
    pub fn corners(&self) -> Corners {
        let [y, x, h, w] = self.means();
        Corners::from_center_size(y, x, h, w)
    }

    /// Decoded extent along the axis of `coord` (height for y/h, width for x/w).
    pub fn extent(&self, coord: Coord) -> f64 {
        if coord.is_vertical() {
            self.get(Coord::H).mean
        } else {
            self.get(Coord::W).mean
        }
    }
}
