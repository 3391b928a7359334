//! Single-factor scaling `σ ↦ s·σ` fitted under NLL, RMSUE or MAUE.

use std::fmt;
use std::str::FromStr;

use super::{pair_items, CalibrationModel, Mode, ModelBody, Scheme, SizeBasis};
use crate::error::{Error, Result};
use crate::matching::MatchedPair;
use crate::numeric::{compensated_mean, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorLoss {
    Nll,
    Rmsue,
    Maue,
}

impl FactorLoss {
    pub const ALL: [FactorLoss; 3] = [FactorLoss::Nll, FactorLoss::Rmsue, FactorLoss::Maue];

    pub fn name(self) -> &'static str {
        match self {
            FactorLoss::Nll => "nll",
            FactorLoss::Rmsue => "rmsue",
            FactorLoss::Maue => "maue",
        }
    }
}

impl fmt::Display for FactorLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FactorLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FactorLoss::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::config(format!("unknown factor loss '{s}' (expected nll, rmsue or maue)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorOptions {
    pub mode: Mode,
    pub basis: SizeBasis,
    pub epochs: usize,
    /// Initial step on `ln s`.
    pub lr: f64,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Absolute,
            basis: SizeBasis::Predicted,
            epochs: 100,
            lr: 0.1,
        }
    }
}

/// Loss of the scaled uncertainties `s·σ` against residuals `Δ`.
pub fn factor_loss(residual: &[f64], sd: &[f64], s: f64, loss: FactorLoss) -> f64 {
    let items = residual.iter().zip(sd);
    match loss {
        FactorLoss::Nll => compensated_mean(items.map(|(&d, &sd)| {
            let v = (s * sd).powi(2);
            0.5 * (d * d / v + v.ln()) + LN_SQRT_2PI
        })),
        FactorLoss::Rmsue => compensated_mean(items.map(|(&d, &sd)| (d - s * sd).powi(2))).sqrt(),
        FactorLoss::Maue => compensated_mean(items.map(|(&d, &sd)| (d - s * sd).abs())),
    }
}

/// Derivative of the loss with respect to `ln s`, up to a positive factor.
fn log_gradient(residual: &[f64], sd: &[f64], s: f64, loss: FactorLoss) -> f64 {
    let items = residual.iter().zip(sd);
    match loss {
        FactorLoss::Nll => compensated_mean(items.map(|(&d, &sd)| 1.0 - (d / (s * sd)).powi(2))),
        FactorLoss::Rmsue => -compensated_mean(items.map(|(&d, &sd)| sd * (d - s * sd))),
        FactorLoss::Maue => -compensated_mean(items.map(|(&d, &sd)| sd * (d - s * sd).signum() * f64::from(d != s * sd))),
    }
}

/// Minimizes the loss over `s > 0` by sign-based gradient descent on `ln s`.
///
/// The step starts at `lr`, grows by 1.2 while the gradient keeps its sign
/// and halves when it flips (resilient backpropagation). Working in
/// `ln s` keeps `s` positive and makes the step relative, so factors from
/// 1e-3 to 1e3 converge in the same number of epochs.
pub fn optimize_factor(residual: &[f64], sd: &[f64], loss: FactorLoss, epochs: usize, lr: f64) -> Result<f64> {
    if residual.len() != sd.len() {
        return Err(Error::input("residual and sd lengths differ"));
    }
    if residual.is_empty() {
        return Err(Error::input("factor scaling needs at least one pair"));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    if let Some(bad) = sd.iter().find(|&&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::domain(format!("factor scaling needs every sd > 0, found {bad}")));
    }
    if let Some(bad) = residual.iter().find(|&&v| !v.is_finite()) {
        return Err(Error::input(format!("non-finite residual {bad}")));
    }

    const MAX_STEP: f64 = 1.0;
    const MIN_STEP: f64 = 1e-12;
    const LOG_BOUND: f64 = 50.0;
    let mut theta = 0.0f64;
    let mut step = lr;
    let mut prev = 0.0f64;
    for _ in 0..epochs {
        let mut g = log_gradient(residual, sd, theta.exp(), loss);
        if g == 0.0 {
            break;
        }
        if g * prev < 0.0 {
            step = (step * 0.5).max(MIN_STEP);
            g = 0.0;
        } else if g * prev > 0.0 {
            step = (step * 1.2).min(MAX_STEP);
        }
        theta = (theta - g.signum() * step * f64::from(g != 0.0)).clamp(-LOG_BOUND, LOG_BOUND);
        prev = g;
    }
    Ok(theta.exp())
}

pub fn fit_factor(pairs: &[MatchedPair], loss: FactorLoss, mode: Mode) -> Result<CalibrationModel> {
    fit_factor_with(pairs, loss, &FactorOptions { mode, ..Default::default() })
}

/// Fits one factor pooled over all four coordinates.
pub fn fit_factor_with(pairs: &[MatchedPair], loss: FactorLoss, opts: &FactorOptions) -> Result<CalibrationModel> {
    let items = pair_items(pairs, opts.mode, opts.basis)?;
    let residual: Vec<f64> = items.iter().map(|i| i.residual).collect();
    let sd: Vec<f64> = items.iter().map(|i| i.sd).collect();
    let factor = optimize_factor(&residual, &sd, loss, opts.epochs, opts.lr)?;
    Ok(CalibrationModel {
        scheme: Scheme::Fs,
        mode: opts.mode,
        basis: opts.basis,
        body: ModelBody::Factor { loss, factor },
    })
}
