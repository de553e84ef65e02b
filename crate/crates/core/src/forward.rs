//! Discrete first-order damped wave operator, frequency-domain solves,
//! transfer-function data and the full pole-residue decomposition.
//!
//! Unknowns are stored interleaved, `[w_1, ŵ_1, w_2, ŵ_2, ...]`, which makes
//! the staggered operator tridiagonal. The operator is
//!
//! ```text
//! row w_j : r_j w_j + (ŵ_j - ŵ_{j-1})/h + (κ̂_j ŵ_j + κ̂_{j-1} ŵ_{j-1})/2
//! row ŵ_j : (w_{j+1} - w_j)/h - κ̂_j (w_j + w_{j+1})/2
//! ```
//!
//! with `ŵ_0 = 0` and `w(1) = 0` imposed through a half dual cell at `T = 1`.
//! The signed weights are `+h` on primary rows, `-h` on dual rows and `-h/2`
//! on the last dual row, so that `W A` is exactly symmetric.

use std::collections::BTreeMap;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{LslError, Result};
use crate::medium::{Grid1D, MediumProfile};
use crate::tridiag::{complex_symmetric_eigenvalues, inverse_iteration, max_abs, TridiagLu};

/// Reciprocal condition estimates below this value are treated as poles.
pub const POLE_RCOND: f64 = 1e-14;

/// Relative tolerance used to match an eigenvalue with its conjugate.
pub const PAIR_TOL: f64 = 1e-8;

/// Real `2N x 2N` discretization of `L + Q + R` together with its signed
/// weights and the discrete delta source.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid1D,
    medium: MediumProfile,
    diag: Vec<f64>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    weights: Vec<f64>,
    source: Vec<f64>,
}

/// Primary and dual wave at the grid nodes for one Laplace frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    pub s: C64,
    /// Primary wave at primary nodes.
    pub w: Vec<C64>,
    /// Dual wave at dual nodes `1..=N`.
    pub w_hat: Vec<C64>,
}

impl FieldVector {
    pub fn from_interleaved(s: C64, x: &[C64]) -> Self {
        let w = x.iter().step_by(2).copied().collect();
        let w_hat = x.iter().skip(1).step_by(2).copied().collect();
        Self { s, w, w_hat }
    }

    pub fn to_interleaved(&self) -> Vec<C64> {
        self.w.iter().zip(&self.w_hat).flat_map(|(a, b)| [*a, *b]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.w_hat).all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Transfer-function samples on the imaginary axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySweep {
    pub omegas: Vec<f64>,
    pub d: Vec<C64>,
    /// Derivative with respect to `s`; measured data may not carry it.
    pub dprime: Option<Vec<C64>>,
    pub noise_level: f64,
}

impl FrequencySweep {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// Poles and residues of the conjugate-paired rational data model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    /// One representative per conjugate pair, `Im λ > 0`, ascending `|λ|`.
    pub lambdas: Vec<C64>,
    pub residues: Vec<C64>,
    /// `Σ (y_j + conj(y_j))` over the stored pairs.
    pub source_norm_sq: f64,
    /// Number of real eigenvalues left out of the pairing.
    pub dropped_real: usize,
}

impl SpectralData {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// `Σ_j y_j/(s+λ_j) + conj(y_j)/(s+conj(λ_j))`.
    pub fn evaluate(&self, s: C64) -> C64 {
        pole_residue_sum(&self.lambdas, &self.residues, s)
    }
}

pub(crate) fn pole_residue_sum(lambdas: &[C64], residues: &[C64], s: C64) -> C64 {
    lambdas
        .iter()
        .zip(residues)
        .map(|(l, y)| y / (s + l) + y.conj() / (s + l.conj()))
        .sum()
}

/// Eigenpairs of the lowest modes: spectral data plus W-normalized
/// eigenvectors (interleaved storage), phase fixed by `Re q_j[w_1] ≥ 0`.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    pub spectral: SpectralData,
    pub modes: Vec<Vec<C64>>,
}

pub(crate) fn sort_key(l: &C64) -> (f64, f64) {
    (l.norm(), l.im)
}

/// Assembles the staggered operator for `medium` on a grid of `n` cells.
pub fn assemble_operator(medium: &MediumProfile, n: usize) -> Result<DiscreteOperator> {
    if n < 4 {
        return Err(LslError::InvalidParameter(format!("need N >= 4, got {n}")));
    }
    if medium.grid().len() != n {
        return Err(LslError::Dimension(format!(
            "medium sampled on {} cells but operator requested with N = {n}",
            medium.grid().len()
        )));
    }
    medium.validate()?;
    let grid = *medium.grid();
    let h = grid.step();
    let inv_h = 1.0 / h;
    let kappa = &medium.kappa;
    let dim = 2 * n;
    let mut diag = vec![0.0; dim];
    let mut upper = vec![0.0; dim - 1];
    let mut lower = vec![0.0; dim - 1];
    let mut weights = vec![0.0; dim];
    for j in 0..n {
        let iw = 2 * j;
        let iv = iw + 1;
        diag[iw] = medium.r[j];
        weights[iw] = h;
        weights[iv] = if j + 1 == n { -0.5 * h } else { -h };
        let a = inv_h + 0.5 * kappa[j + 1];
        upper[iw] = a;
        lower[iw] = if j + 1 == n { -(2.0 * a) } else { -a };
        if j > 0 {
            let c = inv_h - 0.5 * kappa[j];
            upper[iw - 1] = c;
            lower[iw - 1] = -c;
        }
    }
    let mut source = vec![0.0; dim];
    source[0] = inv_h;
    Ok(DiscreteOperator { grid, medium: medium.clone(), diag, upper, lower, weights, source })
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn medium(&self) -> &MediumProfile {
        &self.medium
    }

    /// Matrix dimension `2N`.
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Signed weights in interleaved order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Source vector in interleaved order.
    pub fn source(&self) -> &[f64] {
        &self.source
    }

    /// `bᵀ W b`.
    pub fn source_norm_sq(&self) -> f64 {
        self.source.iter().zip(&self.weights).map(|(b, w)| b * b * w).sum()
    }

    /// Tridiagonal bands `(lower, diag, upper)` in interleaved order.
    pub fn bands(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.lower, &self.diag, &self.upper)
    }

    /// Dense matrix in block order `[w; ŵ]`.
    pub fn dense_block(&self) -> Mat<f64> {
        let n = self.grid.len();
        let block = |i: usize| if i % 2 == 0 { i / 2 } else { n + i / 2 };
        let mut a = Mat::<f64>::zeros(2 * n, 2 * n);
        for i in 0..2 * n {
            a[(block(i), block(i))] = self.diag[i];
            if i + 1 < 2 * n {
                a[(block(i), block(i + 1))] = self.upper[i];
                a[(block(i + 1), block(i))] = self.lower[i];
            }
        }
        a
    }

    /// Weights in block order `[w; ŵ]`.
    pub fn weights_block(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.weights.iter().step_by(2).copied().collect();
        w.extend(self.weights.iter().skip(1).step_by(2));
        w
    }

    /// `A x` in interleaved order.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let dim = self.dim();
        (0..dim)
            .map(|i| {
                let mut acc = x[i] * self.diag[i];
                if i > 0 {
                    acc += x[i - 1] * self.lower[i - 1];
                }
                if i + 1 < dim {
                    acc += x[i + 1] * self.upper[i];
                }
                acc
            })
            .collect()
    }

    /// Non-conjugated weighted pairing `aᵀ W b` of interleaved vectors.
    pub fn bilinear(&self, a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| x * y * *w).sum()
    }

    /// `bᵀ W x`.
    pub fn measure(&self, x: &[C64]) -> C64 {
        x.iter()
            .zip(&self.source)
            .zip(&self.weights)
            .filter(|((_, b), _)| **b != 0.0)
            .map(|((x, b), w)| x * (*b * *w))
            .sum()
    }

    /// Solves `(A + sI) x = rhs` for an interleaved right-hand side.
    pub fn solve_shifted(&self, s: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        let d: Vec<C64> = self.diag.iter().map(|v| s + v).collect();
        let lo: Vec<C64> = self.lower.iter().map(|v| C64::new(*v, 0.0)).collect();
        let up: Vec<C64> = self.upper.iter().map(|v| C64::new(*v, 0.0)).collect();
        let pole = |rcond: f64| LslError::PoleProximity { re: s.re, im: s.im, rcond };
        let lu = TridiagLu::new(&lo, &d, &up).ok_or_else(|| pole(0.0))?;
        let mut x = rhs.to_vec();
        lu.solve_in_place(&mut x);
        let xn = max_abs(&x);
        if !xn.is_finite() {
            return Err(pole(0.0));
        }
        let rcond = lu.rcond_bound(max_abs(rhs), xn);
        if rcond < POLE_RCOND {
            return Err(pole(rcond));
        }
        Ok(x)
    }

    /// Complex-symmetric tridiagonal matrix similar to `A` together with the
    /// diagonal map `x = scale ⊙ z` back to the original coordinates. The map
    /// satisfies `xᵀ W x = zᵀ z`.
    fn symmetrized(&self) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let dim = self.dim();
        let k: Vec<C64> = self
            .weights
            .iter()
            .map(|w| if *w > 0.0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) })
            .collect();
        let p: Vec<f64> = self.weights.iter().map(|w| w.abs().sqrt()).collect();
        let diag: Vec<C64> = self.diag.iter().map(|v| C64::new(*v, 0.0)).collect();
        let off: Vec<C64> = (0..dim - 1)
            .map(|i| k[i + 1] / k[i] * (p[i] / p[i + 1] * self.upper[i]))
            .collect();
        let scale: Vec<C64> = (0..dim).map(|i| k[i] / p[i]).collect();
        (diag, off, scale)
    }
}

/// Solves `(A + sI) φ = b`.
pub fn solve_frequency(op: &DiscreteOperator, s: C64) -> Result<FieldVector> {
    let rhs: Vec<C64> = op.source.iter().map(|b| C64::new(*b, 0.0)).collect();
    let x = op.solve_shifted(s, &rhs)?;
    Ok(FieldVector::from_interleaved(s, &x))
}

/// `D(s) = bᵀ W φ` and `D'(s) = -φᵀ W φ`.
pub fn transfer_function(op: &DiscreteOperator, s: C64) -> Result<(C64, C64)> {
    let phi = solve_frequency(op, s)?.to_interleaved();
    let d = op.measure(&phi);
    let dp = -op.bilinear(&phi, &phi);
    Ok((d, dp))
}

/// Transfer function and derivative at `s = iω` for every `ω`.
pub fn sweep(op: &DiscreteOperator, omegas: &[f64]) -> Result<FrequencySweep> {
    if omegas.iter().any(|w| !w.is_finite()) {
        return Err(LslError::InvalidParameter("frequencies must be finite".into()));
    }
    let values: Vec<(C64, C64)> = omegas
        .par_iter()
        .map(|w| transfer_function(op, C64::new(0.0, *w)))
        .collect::<Result<_>>()?;
    let (d, dp): (Vec<C64>, Vec<C64>) = values.into_iter().unzip();
    Ok(FrequencySweep { omegas: omegas.to_vec(), d, dprime: Some(dp), noise_level: 0.0 })
}

/// `count` uniformly spaced frequencies on `[lo, hi]`.
pub fn uniform_omegas(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect(),
    }
}

/// Multiplicative complex Gaussian noise, `D(1 + level ξ)`. One draw per
/// `|ω|`; the conjugate draw is used at `-ω` so that conjugate symmetry of
/// the data survives.
pub fn add_noise(sweep: &FrequencySweep, level: f64, seed: u64) -> Result<FrequencySweep> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(LslError::InvalidParameter(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(sweep.clone());
    }
    let mut keys: Vec<u64> = sweep.omegas.iter().map(|w| w.abs().to_bits()).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let draws: BTreeMap<u64, C64> = keys
        .into_iter()
        .map(|k| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (k, C64::new(a * half, b * half))
        })
        .collect();
    let factor = |w: f64| {
        let xi = draws[&w.abs().to_bits()];
        let xi = if w < 0.0 { xi.conj() } else { xi };
        C64::new(1.0, 0.0) + xi * level
    };
    let d = sweep.d.iter().zip(&sweep.omegas).map(|(d, w)| d * factor(*w)).collect();
    let dprime = sweep
        .dprime
        .as_ref()
        .map(|dp| dp.iter().zip(&sweep.omegas).map(|(d, w)| d * factor(*w)).collect());
    Ok(FrequencySweep { omegas: sweep.omegas.clone(), d, dprime, noise_level: level })
}

struct PoleCandidates {
    /// Estimates of `λ` with `Im λ > 0`, sorted.
    lambdas: Vec<C64>,
    dropped_real: usize,
}

fn pole_candidates(op: &DiscreteOperator) -> Result<(PoleCandidates, (Vec<C64>, Vec<C64>, Vec<C64>))> {
    let sym = op.symmetrized();
    let mus = complex_symmetric_eigenvalues(&sym.0, &sym.1)?;
    // D(s) = Σ y/(s+λ) with λ the eigenvalues of A itself.
    let poles = mus;
    let is_real = |l: &C64| l.im.abs() <= PAIR_TOL * l.norm().max(f64::MIN_POSITIVE);
    let mut positive: Vec<C64> = poles.iter().filter(|l| !is_real(l) && l.im > 0.0).copied().collect();
    let mut negative: Vec<C64> = poles.iter().filter(|l| !is_real(l) && l.im < 0.0).copied().collect();
    let dropped_real = poles.iter().filter(|l| is_real(l)).count();
    if dropped_real > 0 {
        log::warn!("{dropped_real} real eigenvalue(s) excluded from the conjugate-paired spectrum");
    }
    positive.sort_by(|a, b| sort_key(a).partial_cmp(&sort_key(b)).unwrap());
    negative.sort_by(|a, b| sort_key(&a.conj()).partial_cmp(&sort_key(&b.conj())).unwrap());
    let mut used = vec![false; negative.len()];
    let mut lambdas = Vec::with_capacity(positive.len());
    for l in positive {
        let best = negative
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, m)| (i, (m.conj() - l).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        match best {
            Some((i, dist)) if dist <= PAIR_TOL * l.norm() => {
                used[i] = true;
                lambdas.push(0.5 * (l + negative[i].conj()));
            }
            _ => {
                log::warn!("eigenvalue {l} has no conjugate partner within tolerance");
                lambdas.push(l);
            }
        }
    }
    Ok((PoleCandidates { lambdas, dropped_real }, sym))
}

/// Conjugate-paired poles `λ` (`Im λ > 0`, ascending `|λ|`) without
/// eigenvectors.
pub fn poles(op: &DiscreteOperator) -> Result<Vec<C64>> {
    Ok(pole_candidates(op)?.0.lambdas)
}

fn refine_pairs(
    op: &DiscreteOperator,
    sym: &(Vec<C64>, Vec<C64>, Vec<C64>),
    lambdas: &[C64],
) -> Result<Vec<(C64, C64, Vec<C64>)>> {
    let (diag, off, scale) = sym;
    lambdas
        .par_iter()
        .enumerate()
        .map(|(index, l)| {
            let (mu, z) = inverse_iteration(diag, off, *l).map_err(|e| match e {
                LslError::DegenerateNormalization { value, .. } => LslError::DegenerateNormalization { index, value },
                other => other,
            })?;
            let mut q: Vec<C64> = z.iter().zip(scale).map(|(a, b)| a * b).collect();
            if q[0].re < 0.0 {
                q.iter_mut().for_each(|v| *v = -*v);
            }
            let bwq = op.measure(&q);
            Ok((mu, bwq * bwq, q))
        })
        .collect()
}

fn spectral_from(lambdas: Vec<C64>, residues: Vec<C64>, dropped_real: usize) -> SpectralData {
    let source_norm_sq = residues.iter().map(|y| 2.0 * y.re).sum();
    SpectralData { lambdas, residues, source_norm_sq, dropped_real }
}

/// Full eigendecomposition of `A` reduced to conjugate-pair poles and
/// residues `y_j = (bᵀ W q_j)² / (q_jᵀ W q_j)`.
pub fn eigendecompose(op: &DiscreteOperator) -> Result<SpectralData> {
    Ok(modal_basis_impl(op, None)?.spectral)
}

/// Lowest `n_pairs` eigenpairs with W-normalized eigenvectors.
pub fn modal_basis(op: &DiscreteOperator, n_pairs: usize) -> Result<ModalBasis> {
    modal_basis_impl(op, Some(n_pairs))
}

fn modal_basis_impl(op: &DiscreteOperator, limit: Option<usize>) -> Result<ModalBasis> {
    let (cands, sym) = pole_candidates(op)?;
    let mut lambdas = cands.lambdas;
    if let Some(n) = limit {
        if n > lambdas.len() {
            return Err(LslError::Range { requested: n, available: lambdas.len() });
        }
        lambdas.truncate(n);
    }
    let refined = refine_pairs(op, &sym, &lambdas)?;
    let mut order: Vec<usize> = (0..refined.len()).collect();
    order.sort_by(|a, b| sort_key(&refined[*a].0).partial_cmp(&sort_key(&refined[*b].0)).unwrap());
    let mut ls = Vec::with_capacity(order.len());
    let mut ys = Vec::with_capacity(order.len());
    let mut modes = Vec::with_capacity(order.len());
    for i in order {
        let (l, y, q) = &refined[i];
        ls.push(*l);
        ys.push(*y);
        modes.push(q.clone());
    }
    Ok(ModalBasis { spectral: spectral_from(ls, ys, cands.dropped_real), modes })
}
