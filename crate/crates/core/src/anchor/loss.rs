use super::GaussianBox4;
use crate::error::{Error, Result};
use crate::geometry::Coord;
use crate::numeric::CompensatedSum;

/// One anchor's contribution to the attenuated regression loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossItem {
    pub prediction: GaussianBox4,
    /// Encoded ground-truth offsets `y*`.
    pub target: [f64; 4],
    pub foreground: bool,
}

/// Loss-attenuation objective over a batch of anchors:
///
/// `1/(8·N_pos) · Σ_i Σ_j [ (y*_ij − μ̂_ij)² / σ̂²_ij + log σ̂²_ij ] · m_i`
///
/// where `m_i` is the foreground mask and `N_pos` the number of foreground
/// anchors. With `train_correction`, the size means are replaced by
/// `μ̂ + σ̂²/2` so the fitted offsets account for the log-normal mean shift
/// applied at decode time.
pub fn nll_loss(batch: &[LossItem], train_correction: bool) -> Result<f64> {
    let n_pos = batch.iter().filter(|item| item.foreground).count();
    if n_pos == 0 {
        return Err(Error::input("nll loss needs at least one foreground anchor"));
    }
    let mut total = CompensatedSum::new();
    for item in batch.iter().filter(|item| item.foreground) {
        for c in Coord::ALL {
            let g = item.prediction.get(c);
            let var = g.var();
            if var <= 0.0 {
                return Err(Error::domain(format!(
                    "zero predicted variance on foreground coordinate {c}"
                )));
            }
            let mu = if train_correction && c.is_size() { g.mu() + var / 2.0 } else { g.mu() };
            let r = item.target[c.index()] - mu;
            total.add(r * r / var + var.ln());
        }
    }
    Ok(total.total() / (8.0 * n_pos as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(mu: [f64; 4], var: [f64; 4], target: [f64; 4], fg: bool) -> LossItem {
        LossItem {
            prediction: GaussianBox4::new(mu, var).unwrap(),
            target,
            foreground: fg,
        }
    }

    #[test]
    fn perfect_unit_variance_prediction_has_zero_loss() {
        let t = [0.1, -0.2, 0.3, 0.05];
        assert_eq!(nll_loss(&[item(t, [1.0; 4], t, true)], false).unwrap(), 0.0);
    }

    #[test]
    fn unit_residual_on_one_coordinate() {
        let b = [item([0.0; 4], [1.0; 4], [1.0, 0.0, 0.0, 0.0], true)];
        assert_eq!(nll_loss(&b, false).unwrap(), 1.0 / 8.0);
    }

    #[test]
    fn duplicated_rows_leave_loss_unchanged() {
        let a = item([0.1, 0.2, 0.3, 0.4], [0.5, 1.5, 2.0, 0.25], [0.0, 0.5, -0.3, 0.9], true);
        let bg = item([9.0; 4], [1.0; 4], [0.0; 4], false);
        let one = nll_loss(&[a, bg], false).unwrap();
        let two = nll_loss(&[a, a, bg, bg], false).unwrap();
        assert!((one - two).abs() < 1e-15);
    }

    #[test]
    fn background_rows_are_masked() {
        let fg = item([0.0; 4], [1.0; 4], [0.0; 4], true);
        let bg = item([0.0; 4], [0.0; 4], [5.0; 4], false);
        assert_eq!(nll_loss(&[fg, bg], false).unwrap(), 0.0);
    }

    #[test]
    fn correction_shifts_size_means() {
        // μ̂_h = -0.5, σ̂² = 1 -> corrected mean 0 matches target 0.
        let b = [item([0.0, 0.0, -0.5, -0.5], [1.0; 4], [0.0; 4], true)];
        assert_eq!(nll_loss(&b, true).unwrap(), 0.0);
        assert_eq!(nll_loss(&b, false).unwrap(), 0.5 / 8.0);
    }

    #[test]
    fn errors() {
        let zero_var = item([0.0; 4], [1.0, 0.0, 1.0, 1.0], [0.0; 4], true);
        assert!(matches!(nll_loss(&[zero_var], false), Err(Error::Domain(_))));
        let bg = item([0.0; 4], [1.0; 4], [0.0; 4], false);
        assert!(matches!(nll_loss(&[bg], false), Err(Error::Input(_))));
    }
}
