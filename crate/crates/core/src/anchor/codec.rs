use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{Anchor, DecodedBox, GaussianBox4};
use crate::dist::{
    propagate_closed_form, propagate_mc, propagate_with_rule, Bijector, Gaussian1, GaussHermite, Moments1,
    TransformChain, DEFAULT_NODES,
};
use crate::error::{Error, Result};
use crate::geometry::{Coord, Corners};

/// How offset distributions are carried through the size non-linearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeVariant {
    /// Means only; sds are zero.
    Baseline,
    /// Closed-form log-normal moments.
    LNorm,
    /// Gauss-Hermite integration over the bijector chain.
    Chain,
    /// Monte Carlo with `samples` draws per size coordinate.
    Samp { samples: usize, seed: u64 },
    /// Ablation: the sd is pushed through the mean's equations.
    FalseDec,
}

impl DecodeVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecodeVariant::Samp { samples, .. } if samples < 2 => Err(Error::input(format!(
                "samp needs at least 2 samples, got {samples}"
            ))),
            _ => Ok(()),
        }
    }

    /// Same variant with the Monte Carlo seed replaced.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            DecodeVariant::Samp { samples, .. } => DecodeVariant::Samp { samples, seed },
            other => other,
        }
    }
}

impl fmt::Display for DecodeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeVariant::Baseline => f.write_str("baseline"),
            DecodeVariant::LNorm => f.write_str("lnorm"),
            DecodeVariant::Chain => f.write_str("chain"),
            DecodeVariant::Samp { samples, .. } => write!(f, "samp:{samples}"),
            DecodeVariant::FalseDec => f.write_str("falsedec"),
        }
    }
}

impl FromStr for DecodeVariant {
    type Err = Error;

    /// Parses `baseline`, `lnorm`, `chain`, `falsedec` or `samp:K`. The
    /// seed of a parsed `samp` variant is 0; use [`DecodeVariant::with_seed`].
    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => DecodeVariant::Baseline,
            "lnorm" | "l-norm" | "l_norm" => DecodeVariant::LNorm,
            "chain" | "nflow" | "n-flow" => DecodeVariant::Chain,
            "falsedec" => DecodeVariant::FalseDec,
            other => match other.strip_prefix("samp:") {
                Some(k) => DecodeVariant::Samp {
                    samples: k
                        .parse()
                        .map_err(|_| Error::input(format!("bad sample count in '{s}'")))?,
                    seed: 0,
                },
                None => return Err(Error::input(format!("unknown decode variant '{s}'"))),
            },
        };
        v.validate()?;
        Ok(v)
    }
}

/// `(ŷ, x̂, ĥ, ŵ)` for a ground-truth box relative to `anchor`.
pub fn encode(gt: &Corners, anchor: &Anchor) -> Result<[f64; 4]> {
    let [y, x, h, w] = gt.center_size();
    if !(h > 0.0 && w > 0.0) {
        return Err(Error::input(format!("cannot encode a box with non-positive size {gt:?}")));
    }
    Ok([
        (y - anchor.y) / anchor.h,
        (x - anchor.x) / anchor.w,
        (h / anchor.h).ln(),
        (w / anchor.w).ln(),
    ])
}

/// A decode variant bound to its propagation machinery.
///
/// Holding a `Decoder` avoids re-fetching the quadrature rule per box; the
/// free function [`decode`] builds one per call.
#[derive(Debug, Clone)]
pub struct Decoder {
    variant: DecodeVariant,
    train_correction: bool,
    rule: Option<Arc<GaussHermite>>,
}

impl Decoder {
    pub fn new(variant: DecodeVariant, train_correction: bool) -> Result<Self> {
        variant.validate()?;
        let rule = match variant {
            DecodeVariant::Chain => Some(GaussHermite::cached(DEFAULT_NODES)?),
            _ => None,
        };
        Ok(Self {
            variant,
            train_correction,
            rule,
        })
    }

    pub fn variant(&self) -> DecodeVariant {
        self.variant
    }

    pub fn train_correction(&self) -> bool {
        self.train_correction
    }

    pub fn decode(&self, offsets: &GaussianBox4, anchor: &Anchor) -> Result<DecodedBox> {
        let uses_sigma = self.variant != DecodeVariant::Baseline;
        let mut out = [Moments1::point(0.0); 4];
        for coord in Coord::ALL {
            let g = offsets.get(coord);
            let extent = anchor.extent(coord);
            out[coord.index()] = if coord.is_size() {
                self.decode_size(g, extent, coord)?
            } else {
                let sd = if uses_sigma { g.sd() * extent } else { 0.0 };
                Moments1::new(g.mu() * extent + anchor.center(coord), sd)?
            };
        }
        Ok(DecodedBox::new(out))
    }

    fn decode_size(&self, g: &Gaussian1, extent: f64, coord: Coord) -> Result<Moments1> {
        if self.variant == DecodeVariant::Baseline {
            return Moments1::new(g.mu().exp() * extent, 0.0);
        }
        let var = g.var();
        if self.variant == DecodeVariant::FalseDec {
            let mu = if self.train_correction { g.mu() - var / 2.0 } else { g.mu() };
            return Moments1::new(mu.exp() * extent, g.sd().exp() * extent);
        }

        let mut steps = Vec::with_capacity(3);
        if self.train_correction && var > 0.0 {
            steps.push(Bijector::affine(1.0, -var / 2.0)?);
        }
        steps.push(Bijector::Exp);
        steps.push(Bijector::affine(extent, 0.0)?);
        let chain = TransformChain::new(steps);

        match self.variant {
            DecodeVariant::LNorm => propagate_closed_form(&chain, g),
            DecodeVariant::Chain => {
                let rule = self.rule.as_ref().expect("chain decoder holds a rule");
                propagate_with_rule(&chain, g, rule)
            }
            DecodeVariant::Samp { samples, seed } => {
                // Independent streams for the two size coordinates.
                let stream = splitmix64(seed ^ (coord.index() as u64).wrapping_mul(0xA24B_AED4_963E_E407));
                propagate_mc(&chain, g, samples, stream)
            }
            DecodeVariant::Baseline | DecodeVariant::FalseDec => unreachable!(),
        }
    }
}

/// Decodes one box distribution. See [`DecodeVariant`] for the variants.
///
/// With `train_correction`, the size offsets are shifted by `-σ̂²/2` before
/// `exp`, which cancels the log-normal mean enlargement (Baseline ignores
/// σ̂ and is unaffected).
pub fn decode(
    offsets: &GaussianBox4,
    anchor: &Anchor,
    variant: DecodeVariant,
    train_correction: bool,
) -> Result<DecodedBox> {
    Decoder::new(variant, train_correction)?.decode(offsets, anchor)
}

/// Linear rescale from the network input size to the original image size.
pub fn rescale(b: &DecodedBox, from: (f64, f64), to: (f64, f64)) -> Result<DecodedBox> {
    let dims = [from.0, from.1, to.0, to.1];
    if !dims.iter().all(|d| d.is_finite() && *d > 0.0) {
        return Err(Error::input(format!("rescale needs positive dimensions, got {from:?} -> {to:?}")));
    }
    let sy = to.0 / from.0;
    let sx = to.1 / from.1;
    let mut coords = b.coords;
    for c in Coord::ALL {
        let f = if c.is_vertical() { sy } else { sx };
        let m = &mut coords[c.index()];
        m.mean *= f;
        m.sd *= f;
    }
    Ok(DecodedBox::new(coords))
}

/// Per-item stream derivation for batch Monte Carlo decoding.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
