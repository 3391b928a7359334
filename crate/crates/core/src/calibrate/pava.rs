//! Weighted isotonic least squares and the piecewise-linear map built from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pool-adjacent-violators on already-ordered observations.
///
/// Returns the non-decreasing sequence minimizing `Σ w_i (y_i − p_i)²`.
/// Weights must be positive.
pub fn pava(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // Each block: (weighted mean, total weight, count).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            let wt = w1 + w2;
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / wt, wt, n1 + n2));
        }
    }
    blocks.into_iter().flat_map(|(m, _, n)| std::iter::repeat_n(m, n)).collect()
}

/// Monotone map from predicted σ to a calibrated value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl IsotonicMap {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::input(format!(
                "isotonic map needs equal, non-zero breakpoint and value counts (got {} and {})",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::input("isotonic map entries must be finite"));
        }
        if breakpoints.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::input("isotonic map breakpoints must be strictly ascending"));
        }
        if values.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::input("isotonic map values must be non-decreasing"));
        }
        Ok(Self { breakpoints, values })
    }

    /// Identity on `[0, 2^512]`. Scaling by a power of two is exact, so
    /// interpolation returns non-negative inputs unchanged.
    pub fn identity() -> Self {
        let top = 2f64.powi(512);
        Self {
            breakpoints: vec![0.0, top],
            values: vec![0.0, top],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Piecewise-linear interpolation, constant beyond the end breakpoints.
    pub fn eval(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        let last = bp.len() - 1;
        if x <= bp[0] {
            return self.values[0];
        }
        if x >= bp[last] {
            return self.values[last];
        }
        let hi = bp.partition_point(|&b| b <= x);
        let lo = hi - 1;
        let t = (x - bp[lo]) / (bp[hi] - bp[lo]);
        let (v0, v1) = (self.values[lo], self.values[hi]);
        // Clamp guards the convex combination against rounding past v1.
        (v0 + t * (v1 - v0)).clamp(v0, v1)
    }
}

/// Fits an isotonic map to weighted `(x, y)` observations.
///
/// Equal `x` are pooled to their weighted mean before the fit; zero-weight
/// points are dropped. Each pooled block contributes breakpoints at its
/// smallest and largest `x`, so the map reproduces the fitted value at
/// every training input.
pub fn pava_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<IsotonicMap> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::input(format!(
            "pava_fit needs equal lengths (x={}, y={}, w={})",
            x.len(),
            y.len(),
            w.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::input("pava_fit on empty input"));
    }
    if x.iter().chain(y).chain(w).any(|v| !v.is_finite()) {
        return Err(Error::input("pava_fit inputs must be finite"));
    }
    if w.iter().any(|&wi| wi < 0.0) {
        return Err(Error::input("pava_fit weights must be non-negative"));
    }

    let mut order: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::input("pava_fit needs at least one positive weight"));
    }
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));

    let mut ux: Vec<f64> = Vec::new();
    let mut uy: Vec<f64> = Vec::new();
    let mut uw: Vec<f64> = Vec::new();
    for i in order {
        match ux.last() {
            Some(&last) if last == x[i] => {
                let k = uy.len() - 1;
                let wt = uw[k] + w[i];
                uy[k] = (uy[k] * uw[k] + y[i] * w[i]) / wt;
                uw[k] = wt;
            }
            _ => {
                ux.push(x[i]);
                uy.push(y[i]);
                uw.push(w[i]);
            }
        }
    }

    let fitted = pava(&uy, &uw);
    let mut breakpoints = Vec::new();
    let mut values = Vec::new();
    let mut start = 0;
    while start < fitted.len() {
        let mut end = start;
        while end + 1 < fitted.len() && fitted[end + 1] == fitted[start] {
            end += 1;
        }
        breakpoints.push(ux[start]);
        values.push(fitted[start]);
        if end > start {
            breakpoints.push(ux[end]);
            values.push(fitted[start]);
        }
        start = end + 1;
    }
    IsotonicMap::new(breakpoints, values)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn fit_at(x: &[f64], y: &[f64]) -> Vec<f64> {
        let m = pava_fit(x, y, &vec![1.0; x.len()]).unwrap();
        x.iter().map(|&xi| m.eval(xi)).collect()
    }

    #[test]
    fn monotone_input_is_its_own_fit() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [0.5, 0.5, 2.0, 7.0];
        assert_eq!(fit_at(&x, &y), y);
    }

    #[test]
    fn two_point_violation_pools() {
        assert_eq!(fit_at(&[1.0, 2.0], &[3.0, 1.0]), [2.0, 2.0]);
    }

    #[test]
    fn three_point_example() {
        assert_eq!(fit_at(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]), [1.0, 2.5, 2.5]);
    }

    #[test]
    fn ties_are_pooled_by_weighted_mean() {
        let m = pava_fit(&[1.0, 1.0, 2.0], &[0.0, 3.0, 5.0], &[3.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.eval(1.0), 0.75);
        assert_eq!(m.eval(2.0), 5.0);
    }

    #[test]
    fn zero_weights_are_ignored() {
        let m = pava_fit(&[1.0, 2.0, 3.0], &[1.0, -100.0, 3.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.eval(1.0), 1.0);
        assert_eq!(m.eval(3.0), 3.0);
        assert!(pava_fit(&[1.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn errors() {
        assert!(pava_fit(&[], &[], &[]).is_err());
        assert!(pava_fit(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
        assert!(pava_fit(&[1.0], &[1.0], &[-1.0]).is_err());
        assert!(pava_fit(&[f64::NAN], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn interpolates_between_blocks_and_clamps() {
        let m = pava_fit(&[1.0, 3.0], &[10.0, 20.0], &[1.0, 1.0]).unwrap();
        assert_eq!(m.eval(2.0), 15.0);
        assert_eq!(m.eval(0.0), 10.0);
        assert_eq!(m.eval(9.0), 20.0);
    }

    #[test]
    fn identity_map_leaves_values_unchanged() {
        let id = IsotonicMap::identity();
        for v in [0.0, 1e-9, 0.3, 1.0, 17.5, 3.7e6] {
            assert_eq!(id.eval(v), v);
        }
    }

    #[test]
    fn map_validation() {
        assert!(IsotonicMap::new(vec![1.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(IsotonicMap::new(vec![1.0, 2.0], vec![1.0, 0.0]).is_err());
        assert!(IsotonicMap::new(vec![], vec![]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn evaluation_is_monotone(
            pts in prop::collection::vec((0.0..10.0f64, -5.0..5.0f64, 0.0..3.0f64), 1..40),
            mut q in prop::collection::vec(-1.0..11.0f64, 2..50),
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let mut w: Vec<f64> = pts.iter().map(|p| p.2).collect();
            w[0] += 0.1;
            let m = pava_fit(&x, &y, &w).unwrap();
            q.sort_by(f64::total_cmp);
            let v: Vec<f64> = q.iter().map(|&t| m.eval(t)).collect();
            prop_assert!(v.windows(2).all(|p| p[0] <= p[1]));
        }

        #[test]
        fn fit_preserves_weighted_mean(
            pts in prop::collection::vec((0.0..10.0f64, -5.0..5.0f64, 0.1..3.0f64), 1..40),
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let w: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let m = pava_fit(&x, &y, &w).unwrap();
            let sw: f64 = w.iter().sum();
            let before: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
            let after: f64 = x.iter().zip(&w).map(|(a, b)| m.eval(*a) * b).sum::<f64>() / sw;
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
