//! Savitzky-Golay smoothing: each sample becomes the value of the
//! least-squares polynomial fitted over the window around it. The first and
//! last `window / 2` samples evaluate the fit of the first/last full window
//! off-center instead of shrinking the window.

use nalgebra::{DMatrix, DVector};

use super::HandPoseError;

/// Convolution weights that evaluate the degree-`polyorder` least-squares
/// fit over `window` samples at sample `eval_index` of that window.
pub fn savgol_weights(window: usize, polyorder: usize, eval_index: usize) -> Result<Vec<f64>, HandPoseError> {
    check_params(window, polyorder)?;
    if eval_index >= window {
        return Err(HandPoseError::BadWindow { window, polyorder });
    }
    let half = (window / 2) as f64;
    let scale = if half > 0.0 { half } else { 1.0 };
    let cols = polyorder + 1;
    // Positions scaled to [-1, 1] keep the normal equations well conditioned.
    let design = DMatrix::from_fn(window, cols, |i, j| ((i as f64 - half) / scale).powi(j as i32));
    let gram = design.transpose() * &design;
    let chol = gram.cholesky().ok_or(HandPoseError::BadWindow { window, polyorder })?;
    let u = (eval_index as f64 - half) / scale;
    let basis = DVector::from_fn(cols, |j, _| u.powi(j as i32));
    // weights = basisᵀ (AᵀA)⁻¹ Aᵀ
    let solved = chol.solve(&basis);
    let weights = &design * solved;
    Ok(weights.iter().copied().collect())
}

fn check_params(window: usize, polyorder: usize) -> Result<(), HandPoseError> {
    if window == 0 || window % 2 == 0 || polyorder >= window {
        return Err(HandPoseError::BadWindow { window, polyorder });
    }
    Ok(())
}

/// Precomputed filter for one window/order pair.
#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    window: usize,
    polyorder: usize,
    /// `weights[i]` evaluates the window fit at window sample `i`.
    weights: Vec<Vec<f64>>,
}

impl SavitzkyGolay {
    pub fn new(window: usize, polyorder: usize) -> Result<Self, HandPoseError> {
        check_params(window, polyorder)?;
        let weights = (0..window)
            .map(|i| savgol_weights(window, polyorder, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { window, polyorder, weights })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn polyorder(&self) -> usize {
        self.polyorder
    }

    pub fn apply(&self, series: &[f64]) -> Result<Vec<f64>, HandPoseError> {
        let n = series.len();
        if n < self.window {
            return Err(HandPoseError::TooShort { len: n, window: self.window });
        }
        let half = self.window / 2;
        let dot = |w: &[f64], start: usize| -> f64 {
            w.iter().zip(&series[start..start + self.window]).map(|(a, b)| a * b).sum()
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let value = if i < half {
                dot(&self.weights[i], 0)
            } else if i + half >= n {
                dot(&self.weights[self.window - (n - i)], n - self.window)
            } else {
                dot(&self.weights[half], i - half)
            };
            out.push(value);
        }
        Ok(out)
    }
}

pub fn smooth_series(series: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>, HandPoseError> {
    SavitzkyGolay::new(window, polyorder)?.apply(series)
}

/// Smooths every channel independently.
pub fn smooth_trajectory(
    channels: &[Vec<f64>],
    window: usize,
    polyorder: usize,
) -> Result<Vec<Vec<f64>>, HandPoseError> {
    let filter = SavitzkyGolay::new(window, polyorder)?;
    channels.iter().map(|c| filter.apply(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_preserved() {
        let s = vec![4.25; 30];
        let out = smooth_series(&s, 9, 3).unwrap();
        for v in out {
            assert!((v - 4.25).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_parameters() {
        assert!(matches!(smooth_series(&[0.0; 10], 4, 2), Err(HandPoseError::BadWindow { .. })));
        assert!(matches!(smooth_series(&[0.0; 10], 5, 5), Err(HandPoseError::BadWindow { .. })));
        assert!(matches!(smooth_series(&[0.0; 4], 5, 2), Err(HandPoseError::TooShort { .. })));
    }

    #[test]
    fn window_one_is_identity() {
        let s = [1.0, -2.0, 3.5];
        assert_eq!(smooth_series(&s, 1, 0).unwrap(), s.to_vec());
    }

    #[test]
    fn edge_uses_first_window_fit() {
        // quadratic fit of a cubic's first window differs from the cubic,
        // but the boundary and interior must come from the same fit
        let s: Vec<f64> = (0..7).map(|i| (i as f64).powi(3)).collect();
        let out = smooth_series(&s, 5, 2).unwrap();
        let w0 = savgol_weights(5, 2, 0).unwrap();
        let expect: f64 = w0.iter().zip(&s[..5]).map(|(a, b)| a * b).sum();
        assert!((out[0] - expect).abs() < 1e-12);
    }
}
