//! Complex tridiagonal kernels: banded LU with partial pivoting, implicit QL
//! for complex-symmetric tridiagonal eigenvalues, and inverse iteration.

use num_complex::Complex64 as C64;

use crate::error::{LslError, Result};

/// LU factorization of a general tridiagonal matrix (the `gttrf` layout).
#[derive(Debug, Clone)]
pub struct TridiagLu {
    dl: Vec<C64>,
    d: Vec<C64>,
    du: Vec<C64>,
    du2: Vec<C64>,
    swapped: Vec<bool>,
    norm_inf: f64,
}

impl TridiagLu {
    /// Factors the matrix with sub-diagonal `lower`, diagonal `diag` and
    /// super-diagonal `upper`. Returns `None` on an exactly zero pivot.
    pub fn new(lower: &[C64], diag: &[C64], upper: &[C64]) -> Option<Self> {
        let n = diag.len();
        debug_assert!(n >= 1 && lower.len() + 1 == n && upper.len() + 1 == n);
        let mut norm_inf: f64 = 0.0;
        for i in 0..n {
            let mut row = diag[i].norm();
            if i > 0 {
                row += lower[i - 1].norm();
            }
            if i + 1 < n {
                row += upper[i].norm();
            }
            norm_inf = norm_inf.max(row);
        }
        let mut dl = lower.to_vec();
        let mut d = diag.to_vec();
        let mut du = upper.to_vec();
        let mut du2 = vec![C64::new(0.0, 0.0); n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    return None;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if d[n - 1].norm() == 0.0 {
            return None;
        }
        Some(Self { dl, d, du, du2, swapped, norm_inf })
    }

    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.d.len();
        for i in 0..n - 1 {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                let bi = b[i];
                b[i + 1] -= self.dl[i] * bi;
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }

    /// Infinity norm of the factored matrix.
    pub fn norm_inf(&self) -> f64 {
        self.norm_inf
    }

    /// Cheap upper bound on the reciprocal condition number, obtained from
    /// `‖z‖ / (‖A‖ ‖A⁻¹z‖)` for a fixed probe and the caller's solution.
    pub fn rcond_bound(&self, rhs_norm: f64, sol_norm: f64) -> f64 {
        let n = self.d.len();
        let mut probe: Vec<C64> = (0..n)
            .map(|i| if i % 2 == 0 { C64::new(1.0, 0.0) } else { C64::new(-1.0, 0.0) })
            .collect();
        self.solve_in_place(&mut probe);
        let pn = max_abs(&probe);
        let a = if sol_norm > 0.0 { rhs_norm / (self.norm_inf * sol_norm) } else { f64::INFINITY };
        let b = if pn > 0.0 { 1.0 / (self.norm_inf * pn) } else { f64::INFINITY };
        a.min(b)
    }
}

pub(crate) fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of the complex-symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (length `n - 1`), by implicit QL with
/// Wilkinson-type shifts and non-conjugated rotations.
pub fn complex_symmetric_eigenvalues(diag: &[C64], off: &[C64]) -> Result<Vec<C64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let mut d = diag.to_vec();
    let mut e: Vec<C64> = off.to_vec();
    e.push(C64::new(0.0, 0.0));
    let scale = d.iter().chain(e.iter()).map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(d);
    }
    let eps = f64::EPSILON;
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    for l in 0..n {
        let mut iter = 0usize;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].norm() + d[m + 1].norm();
                let em = e[m].norm();
                if em <= eps * dd || em <= eps * eps * scale {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 200 {
                return Err(LslError::NoConvergence(format!("QL stalled at index {l} of {n}")));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = (g * g + one).sqrt();
            let denom = if (g + r).norm() >= (g - r).norm() { g + r } else { g - r };
            g = d[m] - d[l] + e[l] / denom;
            if iter % 30 == 0 {
                // exceptional shift
                g += C64::new(0.5, 0.25) * e[l];
            }
            let (mut s, mut c, mut p) = (one, one, zero);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = (f * f + g * g).sqrt();
                e[i + 1] = r;
                if r.norm() <= eps * eps * (f.norm() + g.norm()) || r.norm() == 0.0 {
                    d[i + 1] -= p;
                    e[m] = zero;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = zero;
        }
    }
    if d.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LslError::NoConvergence("non-finite eigenvalue estimate".into()));
    }
    Ok(d)
}

/// Inverse iteration for one eigenpair of a complex-symmetric tridiagonal
/// matrix. Returns the refined eigenvalue (bilinear Rayleigh quotient) and an
/// eigenvector normalized so that `zᵀz = 1`.
pub fn inverse_iteration(diag: &[C64], off: &[C64], mu: C64) -> Result<(C64, Vec<C64>)> {
    let n = diag.len();
    let scale = diag.iter().chain(off.iter()).map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let mut shift = mu + C64::new(1.0, 1.0) * (mu.norm().max(1.0) * 1e-13);
    let mut z: Vec<C64> = {
        // deterministic, non-degenerate start vector
        let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
        (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                C64::new(0.5 + (state % 1000) as f64 / 1000.0, 0.0)
            })
            .collect()
    };
    let mut lu = None;
    for attempt in 0..4 {
        let shifted: Vec<C64> = diag.iter().map(|x| x - shift).collect();
        if let Some(f) = TridiagLu::new(off, &shifted, off) {
            lu = Some(f);
            break;
        }
        shift += C64::new(1.0, 0.0) * (scale * f64::EPSILON * 10f64.powi(attempt + 1));
    }
    let lu = lu.ok_or_else(|| LslError::NoConvergence("inverse iteration pivot breakdown".into()))?;
    for _ in 0..3 {
        lu.solve_in_place(&mut z);
        let m = max_abs(&z);
        if !(m.is_finite() && m > 0.0) {
            return Err(LslError::NoConvergence("inverse iteration produced a non-finite vector".into()));
        }
        z.iter_mut().for_each(|v| *v /= m);
    }
    let mut cz = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        let mut acc = diag[i] * z[i];
        if i > 0 {
            acc += off[i - 1] * z[i - 1];
        }
        if i + 1 < n {
            acc += off[i] * z[i + 1];
        }
        cz[i] = acc;
    }
    let ztz: C64 = z.iter().map(|v| v * v).sum();
    let zcz: C64 = z.iter().zip(&cz).map(|(a, b)| a * b).sum();
    let znorm2: f64 = z.iter().map(|v| v.norm_sqr()).sum();
    if ztz.norm() <= 1e-10 * znorm2 {
        return Err(LslError::DegenerateNormalization { index: 0, value: ztz.norm() / znorm2 });
    }
    let lambda = zcz / ztz;
    let inv = ztz.sqrt().inv();
    z.iter_mut().for_each(|v| *v *= inv);
    Ok((lambda, z))
}
