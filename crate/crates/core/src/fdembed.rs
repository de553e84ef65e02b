//! Finite-difference embedding of a tridiagonal ROM: the one-to-one map from
//! `(α, |β|, ‖b‖)` to staggered-grid coefficients, the truncated-measure grid
//! of the background and pointwise impedance and loss estimates on it.
//!
//! Coefficients are indexed from zero here; `gamma[j]` is the `(j+1)`-th
//! primary coefficient.

use crate::error::{LslError, Result};
use crate::lanczos::{TridiagROM, STRUCTURE_TOL};

/// Staggered-grid parameters equivalent to a tridiagonal ROM.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCoefficients {
    pub gamma: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    /// Diagonal entries at odd positions (1-based).
    pub r_primary: Vec<f64>,
    /// Diagonal entries at even positions (1-based).
    pub r_dual: Vec<f64>,
}

impl EmbeddingCoefficients {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Truncated-measure grid: `h_j = γ̂_j⁰`, `ĥ_j = γ_j⁰`.
#[derive(Debug, Clone, PartialEq)]
pub struct TMGrid {
    pub h: Vec<f64>,
    pub h_hat: Vec<f64>,
    /// Positions of the rows carrying `r_j`: `Σ_{k<j} h_k + h_j/2`.
    pub primary_positions: Vec<f64>,
    /// Positions of the rows carrying `r̂_j`: `Σ_{k≤j} h_k`.
    pub dual_positions: Vec<f64>,
}

impl TMGrid {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Total length `Σ (h_j + ĥ_j)/2`.
    pub fn length(&self) -> f64 {
        0.5 * (self.h.iter().sum::<f64>() + self.h_hat.iter().sum::<f64>())
    }
}

/// Medium estimates on the background TM grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedMedium {
    /// Impedance estimate from `γ_j`, located at `dual_positions`.
    pub sigma: Vec<f64>,
    /// Impedance estimate from `γ̂_j`, located at `primary_positions`.
    pub sigma_hat: Vec<f64>,
    /// `r_j − r̂_j`.
    pub r_estimate: Vec<f64>,
    pub r_primary: Vec<f64>,
    pub r_dual: Vec<f64>,
    /// Number of negative dual losses, which have no physical meaning.
    pub negative_duals: usize,
}

/// Runs the coefficient recursion
/// `γ̂_1 = 1/‖b‖²`, `γ_j = 1/(γ̂_j |T_{2j−1,2j}|²)`, `γ̂_{j+1} = 1/(γ_j |T_{2j,2j+1}|²)`.
pub fn extract_coefficients(tri: &TridiagROM) -> Result<EmbeddingCoefficients> {
    let dim = tri.dim();
    if dim == 0 || dim % 2 != 0 {
        return Err(LslError::Dimension(format!("tridiagonal size {dim} is not a positive even number")));
    }
    let n = dim / 2;
    let mut gamma = Vec::with_capacity(n);
    let mut gamma_hat = Vec::with_capacity(n);
    let mut g_hat = 1.0 / (tri.bnorm * tri.bnorm);
    for j in 0..n {
        gamma_hat.push(g_hat);
        let b = tri.beta[2 * j];
        if b == 0.0 || !b.is_finite() {
            return Err(LslError::ExtractionBreakdown(2 * j + 1));
        }
        let g = 1.0 / (g_hat * b * b);
        gamma.push(g);
        if j + 1 < n {
            let b = tri.beta[2 * j + 1];
            if b == 0.0 || !b.is_finite() {
                return Err(LslError::ExtractionBreakdown(2 * j + 2));
            }
            g_hat = 1.0 / (g * b * b);
        }
    }
    let r_primary = tri.alpha.iter().step_by(2).copied().collect();
    let r_dual = tri.alpha.iter().skip(1).step_by(2).copied().collect();
    Ok(EmbeddingCoefficients { gamma, gamma_hat, r_primary, r_dual })
}

/// Checks that a complex off-diagonal is numerically imaginary before the
/// recursion consumes its magnitude.
pub fn check_imaginary(offdiag: &[num_complex::Complex64]) -> Result<()> {
    for (k, b) in offdiag.iter().enumerate() {
        if b.re.abs() > STRUCTURE_TOL * b.norm().max(1.0) {
            return Err(LslError::Structure(format!("off-diagonal {k} = {b} is not imaginary")));
        }
    }
    Ok(())
}

/// Inverse of [`extract_coefficients`]: returns `(α, |β|, ‖b‖)`.
pub fn rebuild_tridiag(c: &EmbeddingCoefficients) -> (Vec<f64>, Vec<f64>, f64) {
    let n = c.len();
    let alpha = c.r_primary.iter().zip(&c.r_dual).flat_map(|(a, b)| [*a, *b]).collect();
    let mut beta = Vec::with_capacity(2 * n - 1);
    for j in 0..n {
        beta.push(1.0 / (c.gamma[j] * c.gamma_hat[j]).sqrt());
        if j + 1 < n {
            beta.push(1.0 / (c.gamma[j] * c.gamma_hat[j + 1]).sqrt());
        }
    }
    (alpha, beta, (1.0 / c.gamma_hat[0]).sqrt())
}

/// TM grid of a background with unit impedance.
pub fn tm_grid(background: &EmbeddingCoefficients) -> Result<TMGrid> {
    let h = background.gamma_hat.clone();
    let h_hat = background.gamma.clone();
    if let Some((k, v)) = h.iter().chain(&h_hat).enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(LslError::InvalidGrid(format!("non-positive step {v:e} at position {k}")));
    }
    let mut primary_positions = Vec::with_capacity(h.len());
    let mut dual_positions = Vec::with_capacity(h.len());
    let mut x = 0.0;
    for step in &h {
        primary_positions.push(x + 0.5 * step);
        x += step;
        dual_positions.push(x);
    }
    Ok(TMGrid { h, h_hat, primary_positions, dual_positions })
}

/// Impedance and loss estimates of `coeffs` on the background grid.
///
/// The impedance ratios are oriented so that they converge to `σ` for this
/// crate's operator, where `γ_j` scales like `σ` and `γ̂_j` like `1/σ`.
pub fn embed_medium(coeffs: &EmbeddingCoefficients, grid0: &TMGrid) -> Result<EmbeddedMedium> {
    if coeffs.len() != grid0.len() {
        return Err(LslError::Dimension(format!(
            "{} coefficients but a TM grid of {} cells",
            coeffs.len(),
            grid0.len()
        )));
    }
    let sigma: Vec<f64> = coeffs.gamma.iter().zip(&grid0.h_hat).map(|(g, g0)| g / g0).collect();
    let sigma_hat: Vec<f64> = coeffs.gamma_hat.iter().zip(&grid0.h).map(|(g, g0)| g0 / g).collect();
    if sigma.iter().chain(&sigma_hat).any(|v| !v.is_finite()) {
        return Err(LslError::InvalidGrid("division by a vanishing step".into()));
    }
    let r_estimate = coeffs.r_primary.iter().zip(&coeffs.r_dual).map(|(a, b)| a - b).collect();
    let negative_duals = coeffs.r_dual.iter().filter(|r| **r < 0.0).count();
    if negative_duals > 0 {
        log::warn!("{negative_duals} dual loss coefficient(s) are negative");
    }
    Ok(EmbeddedMedium {
        sigma,
        sigma_hat,
        r_estimate,
        r_primary: coeffs.r_primary.clone(),
        r_dual: coeffs.r_dual.clone(),
        negative_duals,
    })
}
