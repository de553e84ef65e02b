//! Internal field approximations: the Born field, the lifted field
//! `φ_LSL = Q₀V₀(T + sI)⁻¹‖b‖e₁` and the transmutation diagnostic.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;

use crate::adaptrom::{pencil_ritz, LoewnerSystem, PencilOptions};
use crate::error::{LslError, Result};
use crate::forward::{modal_basis, solve_frequency, DiscreteOperator, FieldVector};
use crate::lanczos::{lanczos_with, LanczosOptions, TridiagROM};
use crate::medium::Grid1D;
use crate::specrom::PoleResidueROM;

/// Relative tolerance when matching background poles against a ROM.
pub const MATCH_TOL: f64 = 1e-6;

/// Background eigenbasis composed with the background Lanczos basis.
#[derive(Debug, Clone)]
pub struct LiftedBasis {
    /// `2N × 2n`, rows in interleaved `[w_1, ŵ_1, ...]` order.
    pub q0v0: Mat<C64>,
    pub n: usize,
    pub grid: Grid1D,
}

impl LiftedBasis {
    /// The lifted source direction `Q₀V₀e₁` scaled by `bnorm`.
    pub fn lifted_source(&self, bnorm: f64) -> Vec<C64> {
        (0..self.q0v0.nrows()).map(|i| self.q0v0[(i, 0)] * bnorm).collect()
    }
}

/// Where a field came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Born,
    Lsl,
    Direct,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Born => "born",
            Provenance::Lsl => "lsl",
            Provenance::Direct => "direct",
        }
    }
}

/// Fields at a set of frequencies, all of one provenance.
#[derive(Debug, Clone)]
pub struct InternalFieldSet {
    pub frequencies: Vec<C64>,
    pub fields: Vec<FieldVector>,
    pub provenance: Provenance,
}

impl InternalFieldSet {
    pub fn field_at(&self, s: C64) -> Option<&FieldVector> {
        self.frequencies
            .iter()
            .position(|f| (f - s).norm() <= 1e-12 * s.norm().max(1.0))
            .map(|k| &self.fields[k])
    }
}

fn compose(q0: &Mat<C64>, tri0: &TridiagROM, grid: Grid1D) -> Result<LiftedBasis> {
    if tri0.v.nrows() != q0.ncols() {
        return Err(LslError::Dimension(format!(
            "eigenbasis has {} columns but the Lanczos basis is {}×{}",
            q0.ncols(),
            tri0.v.nrows(),
            tri0.v.ncols()
        )));
    }
    let q0v0 = q0 * &tri0.v;
    if (0..q0v0.ncols()).any(|j| (0..q0v0.nrows()).any(|i| !q0v0[(i, j)].re.is_finite() || !q0v0[(i, j)].im.is_finite())) {
        return Err(LslError::Assembly("non-finite lifted basis".into()));
    }
    Ok(LiftedBasis { q0v0, n: tri0.pairs(), grid })
}

/// Lifted basis from the exact eigenvectors of the background operator,
/// ordered like `rom0`.
pub fn background_basis(op0: &DiscreteOperator, rom0: &PoleResidueROM, tri0: &TridiagROM) -> Result<LiftedBasis> {
    let n = rom0.len();
    if tri0.pairs() != n {
        return Err(LslError::Dimension(format!("ROM has {n} pairs, tridiagonal has {}", tri0.pairs())));
    }
    let modal = modal_basis(op0, n)?;
    for (j, (a, b)) in modal.spectral.lambdas.iter().zip(&rom0.lambdas).enumerate() {
        if (a - b).norm() > MATCH_TOL * a.norm().max(1.0) {
            return Err(LslError::BasisMismatch(format!("pole {j}: operator {a} vs ROM {b}")));
        }
    }
    let rows = op0.dim();
    let q0 = Mat::<C64>::from_fn(rows, 2 * n, |i, j| {
        if j < n {
            modal.modes[j][i]
        } else {
            modal.modes[j - n][i].conj()
        }
    });
    compose(&q0, tri0, *op0.grid())
}

/// Background ROM, tridiagonal model and lifted basis built from background
/// snapshots `φ₀(iω_q)` at the nodes of a Loewner system. The pencil
/// eigenvectors give Ritz vectors `q̃_k = Σ_q c_q φ₀(iω_q)` with `cᵀM₀c = 1`.
pub fn background_ritz_basis(
    op0: &DiscreteOperator,
    sys0: &LoewnerSystem,
    pencil: PencilOptions,
    lanczos: LanczosOptions,
) -> Result<(PoleResidueROM, TridiagROM, LiftedBasis)> {
    let (rom0, coeffs) = pencil_ritz(sys0, pencil)?;
    let tri0 = lanczos_with(&rom0, lanczos)?;
    let snapshots: Vec<Vec<C64>> = sys0
        .nodes
        .iter()
        .map(|w| Ok(solve_frequency(op0, C64::new(0.0, *w))?.to_interleaved()))
        .collect::<Result<_>>()?;
    let n = rom0.len();
    let rows = op0.dim();
    let mut columns: Vec<Vec<C64>> = Vec::with_capacity(n);
    for (c, y) in coeffs.iter().zip(&rom0.residues) {
        let mut v = vec![C64::new(0.0, 0.0); rows];
        for (cq, snap) in c.iter().zip(&snapshots) {
            for (vi, si) in v.iter_mut().zip(snap) {
                *vi += cq * si;
            }
        }
        // Orient so that the boundary value matches the branch used by Lanczos.
        let root = crate::lanczos::branch_sqrt(*y);
        if (v[0] - root).norm() > (v[0] + root).norm() {
            v.iter_mut().for_each(|z| *z = -*z);
        }
        columns.push(v);
    }
    let q0 = Mat::<C64>::from_fn(rows, 2 * n, |i, j| if j < n { columns[j][i] } else { columns[j - n][i].conj() });
    let basis = compose(&q0, &tri0, *op0.grid())?;
    Ok((rom0, tri0, basis))
}

/// `Q₀V₀ (T + sI)⁻¹ ‖b‖ e₁` with `T`, `‖b‖` from the measured data.
pub fn lsl_internal(basis: &LiftedBasis, tri_true: &TridiagROM, s: C64) -> Result<FieldVector> {
    if basis.q0v0.ncols() != tri_true.dim() {
        return Err(LslError::Dimension(format!(
            "lifted basis has {} columns, tridiagonal ROM has size {}",
            basis.q0v0.ncols(),
            tri_true.dim()
        )));
    }
    let x = tri_true.resolvent_e1(s)?;
    let rows = basis.q0v0.nrows();
    let mut phi = vec![C64::new(0.0, 0.0); rows];
    for (j, xj) in x.iter().enumerate() {
        let c = xj * tri_true.bnorm;
        for (i, p) in phi.iter_mut().enumerate() {
            *p += basis.q0v0[(i, j)] * c;
        }
    }
    Ok(FieldVector::from_interleaved(s, &phi))
}

/// The background field, used as the Born approximation.
pub fn born_internal(op0: &DiscreteOperator, s: C64) -> Result<FieldVector> {
    solve_frequency(op0, s)
}

/// Fields of one provenance at several frequencies.
pub fn field_set(
    frequencies: &[C64],
    provenance: Provenance,
    f: impl Fn(C64) -> Result<FieldVector> + Sync,
) -> Result<InternalFieldSet> {
    use rayon::prelude::*;
    let fields = frequencies.par_iter().map(|s| f(*s)).collect::<Result<Vec<_>>>()?;
    Ok(InternalFieldSet { frequencies: frequencies.to_vec(), fields, provenance })
}

/// `‖φ‖_W = √(Σ |W_i| |φ_i|²)`, the weighted seminorm used for field errors.
pub fn weighted_norm(op: &DiscreteOperator, phi: &FieldVector) -> f64 {
    phi.to_interleaved().iter().zip(op.weights()).map(|(z, w)| w.abs() * z.norm_sqr()).sum::<f64>().sqrt()
}

/// `‖a − b‖_W`.
pub fn weighted_distance(op: &DiscreteOperator, a: &FieldVector, b: &FieldVector) -> f64 {
    a.to_interleaved()
        .iter()
        .zip(b.to_interleaved())
        .zip(op.weights())
        .map(|((x, y), w)| w.abs() * (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Transmutation operator `R = V₀V⁻¹` and its diagnostics.
#[derive(Debug, Clone)]
pub struct Transmutation {
    pub r: Mat<C64>,
    /// `‖R − I‖_F / √(2n)`.
    pub identity_distance: f64,
    /// `‖V₀ − R V‖_max`, zero up to rounding.
    pub reconstruction_error: f64,
    /// 2-norm condition number of `V`.
    pub condition: f64,
}

/// Largest acceptable condition number of the true-medium Lanczos basis.
pub const MAX_BASIS_CONDITION: f64 = 1e12;

pub fn transmutation(tri0: &TridiagROM, tri_true: &TridiagROM) -> Result<Transmutation> {
    let (v0, v) = (&tri0.v, &tri_true.v);
    if v0.nrows() != v.nrows() || v0.ncols() != v.ncols() || v.nrows() != v.ncols() || v.nrows() == 0 {
        return Err(LslError::Dimension("Lanczos bases must be square and of equal size".into()));
    }
    let sv = v.singular_values().map_err(|e| LslError::LinearAlgebra(format!("SVD failed: {e:?}")))?;
    let smax = sv.first().copied().unwrap_or(0.0);
    let smin = sv.last().copied().unwrap_or(0.0);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_BASIS_CONDITION) {
        return Err(LslError::IllConditioned(condition));
    }
    // R = V₀V⁻¹  ⇔  Vᵀ Rᵀ = V₀ᵀ.
    let vt = v.transpose().to_owned();
    let rt = vt.partial_piv_lu().solve(v0.transpose().to_owned());
    let r = rt.transpose().to_owned();
    let dim = r.nrows();
    let mut dist = 0.0;
    for j in 0..dim {
        for i in 0..dim {
            let want = if i == j { 1.0 } else { 0.0 };
            dist += (r[(i, j)] - want).norm_sqr();
        }
    }
    let rv = &r * v;
    let mut recon: f64 = 0.0;
    for j in 0..dim {
        for i in 0..dim {
            recon = recon.max((rv[(i, j)] - v0[(i, j)]).norm());
        }
    }
    Ok(Transmutation { r, identity_distance: (dist / dim as f64).sqrt(), reconstruction_error: recon, condition })
}
