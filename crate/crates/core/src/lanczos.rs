//! Complex-symmetric Lanczos tridiagonalization of a pole-residue model.
//!
//! The recurrence runs on `Λ = diag(λ_1..λ_n, conj(λ_1)..conj(λ_n))` with the
//! starting vector of residue square roots and the non-conjugated product
//! `uᵀv`. Conjugate pairing forces a real diagonal and an imaginary
//! off-diagonal, which is enforced after the run.

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{LslError, Result};
use crate::specrom::PoleResidueROM;
use crate::tridiag::{max_abs, TridiagLu};

/// Deviation from the real/imaginary structure tolerated before cleanup.
pub const STRUCTURE_TOL: f64 = 1e-8;

/// Recurrence state at the moment of a breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTridiag {
    pub alpha: Vec<C64>,
    /// `beta[k]` couples steps `k` and `k+1`.
    pub beta: Vec<C64>,
    /// Lanczos vectors computed so far.
    pub basis: Vec<Vec<C64>>,
}

/// Orthogonalization policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reorthogonalization {
    /// Plain three-term recurrence.
    None,
    /// Two passes of bilinear Gram-Schmidt against every previous vector.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    /// Relative threshold on `|wᵀw|` (scaled by `max |λ|²`) declaring breakdown.
    pub breakdown_tol: f64,
    pub reorth: Reorthogonalization,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { breakdown_tol: 1e-13, reorth: Reorthogonalization::Full }
    }
}

/// Tridiagonal realization `T = Vᵀ Λ V` of a pole-residue ROM.
#[derive(Debug, Clone)]
pub struct TridiagROM {
    /// Real diagonal of `T`.
    pub alpha: Vec<f64>,
    /// Imaginary parts of the off-diagonal, `T_{k,k+1} = i·beta[k]`.
    pub beta: Vec<f64>,
    /// Lanczos basis, one column per step.
    pub v: Mat<C64>,
    /// `√(Σ 2 Re y_j)`.
    pub bnorm: f64,
    /// `[λ_1..λ_n, conj(λ_1)..conj(λ_n)]`.
    pub lambda: Vec<C64>,
}

impl TridiagROM {
    /// Size `2n` of the tridiagonal matrix.
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Number of conjugate pairs.
    pub fn pairs(&self) -> usize {
        self.alpha.len() / 2
    }

    pub fn offdiag(&self) -> Vec<C64> {
        self.beta.iter().map(|b| C64::new(0.0, *b)).collect()
    }

    /// Builds a tridiagonal model from stored coefficients without a basis,
    /// as read from a tridiagonal dump.
    pub fn from_coefficients(alpha: Vec<f64>, beta: Vec<f64>, bnorm: f64) -> Result<Self> {
        if alpha.is_empty() || beta.len() + 1 != alpha.len() {
            return Err(LslError::Dimension(format!(
                "tridiagonal with {} diagonal and {} off-diagonal entries",
                alpha.len(),
                beta.len()
            )));
        }
        if !(bnorm > 0.0) {
            return Err(LslError::InvalidParameter("bnorm must be positive".into()));
        }
        Ok(Self { alpha, beta, v: Mat::zeros(0, 0), bnorm, lambda: vec![] })
    }

    /// `(T + sI)⁻¹ e₁`.
    pub fn resolvent_e1(&self, s: C64) -> Result<Vec<C64>> {
        let off = self.offdiag();
        let diag: Vec<C64> = self.alpha.iter().map(|a| s + a).collect();
        let pole = |rcond| LslError::PoleProximity { re: s.re, im: s.im, rcond };
        let lu = TridiagLu::new(&off, &diag, &off).ok_or_else(|| pole(0.0))?;
        let mut x = vec![C64::new(0.0, 0.0); self.dim()];
        x[0] = C64::new(1.0, 0.0);
        lu.solve_in_place(&mut x);
        let xn = max_abs(&x);
        if !xn.is_finite() {
            return Err(pole(0.0));
        }
        let rcond = lu.rcond_bound(1.0, xn);
        if rcond < crate::forward::POLE_RCOND {
            return Err(pole(rcond));
        }
        Ok(x)
    }

    /// `‖VᵀV − I‖_max` (bilinear).
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.v.transpose() * &self.v;
        max_dev(&g, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// `‖T − VᵀΛV‖_max`.
    pub fn tridiagonal_error(&self) -> f64 {
        let n = self.dim();
        let lv = Mat::<C64>::from_fn(n, n, |i, j| self.lambda[i] * self.v[(i, j)]);
        let t = self.v.transpose() * lv;
        max_dev(&t, |i, j| {
            if i == j {
                C64::new(self.alpha[i], 0.0)
            } else if i + 1 == j {
                C64::new(0.0, self.beta[i])
            } else if j + 1 == i {
                C64::new(0.0, self.beta[j])
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }
}

fn max_dev(m: &Mat<C64>, want: impl Fn(usize, usize) -> C64) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max((m[(i, j)] - want(i, j)).norm());
        }
    }
    worst
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Principal square root, with the negative real axis mapped to the upper
/// half-plane limit `+i√|x|`.
pub fn branch_sqrt(x: C64) -> C64 {
    if x.im == 0.0 && x.re < 0.0 {
        C64::new(0.0, (-x.re).sqrt())
    } else {
        x.sqrt()
    }
}

/// Starting vector `[√y_1..√y_n, √conj(y_1)..√conj(y_n)]` and `Λ`.
pub fn lanczos_inputs(rom: &PoleResidueROM) -> (Vec<C64>, Vec<C64>) {
    let lambda: Vec<C64> = rom.lambdas.iter().copied().chain(rom.lambdas.iter().map(|l| l.conj())).collect();
    let y: Vec<C64> = rom
        .residues
        .iter()
        .map(|y| branch_sqrt(*y))
        .chain(rom.residues.iter().map(|y| branch_sqrt(y.conj())))
        .collect();
    (lambda, y)
}

/// Runs the recurrence with default options.
pub fn lanczos_tridiag(rom: &PoleResidueROM, breakdown_tol: f64) -> Result<TridiagROM> {
    lanczos_with(rom, LanczosOptions { breakdown_tol, ..LanczosOptions::default() })
}

pub fn lanczos_with(rom: &PoleResidueROM, opts: LanczosOptions) -> Result<TridiagROM> {
    if rom.is_empty() {
        return Err(LslError::InvalidParameter("empty ROM".into()));
    }
    let (lambda, y) = lanczos_inputs(rom);
    let dim = lambda.len();
    let scale = lambda.iter().map(|l| l.norm_sqr()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let threshold = opts.breakdown_tol * scale;

    let yy = dot(&y, &y);
    if yy.norm() <= opts.breakdown_tol {
        return Err(LslError::Breakdown {
            step: 0,
            magnitude: yy.norm(),
            partial: Box::new(PartialTridiag { alpha: vec![], beta: vec![], basis: vec![] }),
        });
    }
    let bnorm = rom.source_norm_sq.sqrt();
    let inv = 1.0 / branch_sqrt(yy);
    let mut basis: Vec<Vec<C64>> = vec![y.iter().map(|v| v * inv).collect()];
    let mut alpha: Vec<C64> = Vec::with_capacity(dim);
    let mut beta: Vec<C64> = Vec::with_capacity(dim.saturating_sub(1));

    for j in 0..dim {
        let vj = &basis[j];
        let mut w: Vec<C64> = vj.iter().zip(&lambda).map(|(v, l)| v * l).collect();
        let a = dot(&w, vj);
        alpha.push(a);
        for (wi, vi) in w.iter_mut().zip(vj) {
            *wi -= a * vi;
        }
        if j > 0 {
            let b = beta[j - 1];
            for (wi, vi) in w.iter_mut().zip(&basis[j - 1]) {
                *wi -= b * vi;
            }
        }
        if opts.reorth == Reorthogonalization::Full {
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= c * vi;
                    }
                }
            }
        }
        if j + 1 == dim {
            break;
        }
        let ww = dot(&w, &w);
        if ww.norm() <= threshold {
            return Err(LslError::Breakdown {
                step: j + 1,
                magnitude: ww.norm(),
                partial: Box::new(PartialTridiag { alpha, beta, basis }),
            });
        }
        // Off-diagonals sit near the imaginary axis; fixing Im β ≥ 0 keeps the
        // basis continuous when rounding moves `ww` across the branch cut.
        let mut b = branch_sqrt(ww);
        if b.im < 0.0 {
            b = -b;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }

    let alpha = clean(&alpha, |z| (z.re, z.im), "diagonal")?;
    let beta = clean(&beta, |z| (z.im, z.re), "off-diagonal")?;
    let v = Mat::<C64>::from_fn(dim, dim, |i, j| basis[j][i]);
    Ok(TridiagROM { alpha, beta, v, bnorm, lambda })
}

/// Keeps the component selected by `split.0`, failing when the discarded one
/// exceeds the structural tolerance relative to the entry size.
fn clean(values: &[C64], split: impl Fn(&C64) -> (f64, f64), what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let (keep, drop) = split(z);
            if drop.abs() > STRUCTURE_TOL * z.norm().max(1.0) {
                Err(LslError::Structure(format!("{what} entry {k} = {z} violates the conjugate-pair structure")))
            } else {
                Ok(keep)
            }
        })
        .collect()
}

/// `bnorm² · e₁ᵀ (T + sI)⁻¹ e₁`.
pub fn tridiag_transfer(tri: &TridiagROM, s: C64) -> Result<C64> {
    Ok(tri.resolvent_e1(s)?[0] * (tri.bnorm * tri.bnorm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specrom::RomOrigin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn worked() -> PoleResidueROM {
        PoleResidueROM::new(vec![C64::new(0.0, 1.0)], vec![C64::new(1.0, 0.0)], RomOrigin::TruncatedMeasure).unwrap()
    }

    fn random_passive(n: usize, seed: u64) -> PoleResidueROM {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l: Vec<C64> = (0..n)
            .map(|k| C64::new(rng.gen_range(0.0..0.5), (k as f64 + 0.5) * 3.0 + rng.gen_range(-0.5..0.5)))
            .collect();
        l.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
        let y = (0..n).map(|_| C64::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.2..0.2))).collect();
        PoleResidueROM::new(l, y, RomOrigin::TruncatedMeasure).unwrap()
    }

    #[test]
    fn worked_single_pair() {
        let tri = lanczos_tridiag(&worked(), 1e-13).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((tri.v[(0, 0)] - r).norm() < 1e-15 && (tri.v[(1, 0)] - r).norm() < 1e-15);
        assert_eq!(tri.alpha, vec![0.0, 0.0]);
        assert!((tri.beta[0] - 1.0).abs() < 1e-15);
        let d = tridiag_transfer(&tri, C64::new(1.0, 0.0)).unwrap();
        assert!((d - 1.0).norm() < 1e-14);
    }

    #[test]
    fn negative_real_branch() {
        assert_eq!(branch_sqrt(C64::new(-4.0, 0.0)), C64::new(0.0, 2.0));
        assert_eq!(branch_sqrt(C64::new(4.0, 0.0)), C64::new(2.0, 0.0));
    }

    #[test]
    fn identities_for_random_passive_roms() {
        for (n, seed) in [(3, 1), (8, 2), (15, 3)] {
            let rom = random_passive(n, seed);
            let tri = lanczos_tridiag(&rom, 1e-13).unwrap();
            assert!(tri.orthogonality_error() < 1e-8, "{}", tri.orthogonality_error());
            assert!(tri.tridiagonal_error() < 1e-8, "{}", tri.tridiagonal_error());
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..50 {
                let s = C64::new(rng.gen_range(0.0..3.0), rng.gen_range(-60.0..60.0));
                let a = tridiag_transfer(&tri, s).unwrap();
                let b = rom.evaluate(s).unwrap();
                assert!((a - b).norm() <= 1e-8 * b.norm(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn large_s_limit() {
        let rom = random_passive(5, 9);
        let tri = lanczos_tridiag(&rom, 1e-13).unwrap();
        let big = 1e9;
        let d = tridiag_transfer(&tri, C64::new(big, 0.0)).unwrap();
        assert!((d.re * big / (tri.bnorm * tri.bnorm) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_runs() {
        let rom = random_passive(10, 4);
        let a = lanczos_tridiag(&rom, 1e-13).unwrap();
        let b = lanczos_tridiag(&rom, 1e-13).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn breakdown_is_reported() {
        // Residues of opposite real parts make yᵀy vanish.
        let rom = PoleResidueROM {
            lambdas: vec![C64::new(0.0, 1.0), C64::new(0.0, 2.0)],
            residues: vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
            source_norm_sq: 0.0,
            origin: RomOrigin::TruncatedMeasure,
        };
        match lanczos_tridiag(&rom, 1e-13) {
            Err(LslError::Breakdown { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn coefficient_constructor_checks_sizes() {
        assert!(TridiagROM::from_coefficients(vec![0.0; 4], vec![1.0; 2], 1.0).is_err());
        let tri = TridiagROM::from_coefficients(vec![0.0, 0.0], vec![1.0], 2f64.sqrt()).unwrap();
        assert!((tridiag_transfer(&tri, C64::new(1.0, 0.0)).unwrap() - 1.0).norm() < 1e-14);
    }
}
