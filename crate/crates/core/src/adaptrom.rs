//! Adaptive rational ROM from transfer-function samples: Loewner mass and
//! stiffness matrices, greedy interpolation-node selection, pencil
//! regularization and pole/residue extraction.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{LslError, Result};
use crate::forward::{sort_key, FrequencySweep, PAIR_TOL};
use crate::specrom::{PoleResidueROM, RomOrigin};

/// Relative tolerance under which two frequencies count as equal.
const NODE_TOL: f64 = 1e-12;

/// Galerkin pencil `(S, M)` and data vector `b` built from samples at
/// `±ω` node pairs.
#[derive(Debug, Clone)]
pub struct LoewnerSystem {
    pub nodes: Vec<f64>,
    pub s: Mat<C64>,
    pub m: Mat<C64>,
    pub b: Vec<C64>,
    /// Derivative samples used for the Hermite conditions.
    pub dprime: Vec<C64>,
}

impl LoewnerSystem {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Unstable-pole handling in [`pencil_poles`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnstablePolicy {
    Drop,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PencilOptions {
    /// Singular values of `M` below `trunc_tol · σ_max` are projected out.
    pub trunc_tol: f64,
    /// Poles with `Re λ < −stab_tol` count as unstable.
    pub stab_tol: f64,
    pub unstable: UnstablePolicy,
    /// Keeps at most this many directions regardless of `trunc_tol`.
    pub rank: Option<usize>,
}

impl Default for PencilOptions {
    fn default() -> Self {
        Self { trunc_tol: 1e-12, stab_tol: 1e-8, unstable: UnstablePolicy::Drop, rank: None }
    }
}

/// Builds the Loewner matrices
///
/// ```text
/// M_pq = (D_p − D_q)/(iω_q − iω_p),       M_pp = −D'_p
/// S_pq = (ω_q D_q − ω_p D_p)/(ω_q − ω_p), S_pp = D_p + iω_p D'_p
/// ```
///
/// which equal `φ_pᵀWφ_q` and `φ_pᵀWAφ_q` for the sampled system.
pub fn loewner_matrices(nodes: &[f64], d: &[C64], dprime: &[C64]) -> Result<LoewnerSystem> {
    let n = nodes.len();
    if d.len() != n || dprime.len() != n {
        return Err(LslError::Dimension(format!(
            "{n} nodes, {} values and {} derivatives",
            d.len(),
            dprime.len()
        )));
    }
    for p in 0..n {
        if !nodes[p].is_finite() {
            return Err(LslError::InvalidParameter("non-finite node".into()));
        }
        for q in 0..p {
            if (nodes[p] - nodes[q]).abs() <= NODE_TOL * nodes[p].abs().max(1.0) {
                return Err(LslError::DegenerateNode(nodes[p]));
            }
        }
    }
    let i = C64::new(0.0, 1.0);
    let m = Mat::<C64>::from_fn(n, n, |p, q| {
        if p == q {
            -dprime[p]
        } else {
            (d[p] - d[q]) / (i * (nodes[q] - nodes[p]))
        }
    });
    let s = Mat::<C64>::from_fn(n, n, |p, q| {
        if p == q {
            d[p] + i * nodes[p] * dprime[p]
        } else {
            (d[q] * nodes[q] - d[p] * nodes[p]) / (nodes[q] - nodes[p])
        }
    });
    Ok(LoewnerSystem { nodes: nodes.to_vec(), s, m, b: d.to_vec(), dprime: dprime.to_vec() })
}

/// Solves `(S + sM) x = b` and returns `bᵀx`.
pub fn galerkin_transfer(sys: &LoewnerSystem, s: C64) -> Result<C64> {
    let n = sys.len();
    let a = Mat::<C64>::from_fn(n, n, |p, q| sys.s[(p, q)] + s * sys.m[(p, q)]);
    let singular = || LslError::PencilSingular { re: s.re, im: s.im };
    let lu = a.partial_piv_lu();
    let rhs = Mat::<C64>::from_fn(n, 1, |p, _| sys.b[p]);
    let x = lu.solve(&rhs);
    let mut out = C64::new(0.0, 0.0);
    for p in 0..n {
        out += sys.b[p] * x[(p, 0)];
    }
    if !out.re.is_finite() || !out.im.is_finite() {
        return Err(singular());
    }
    Ok(out)
}

/// Eigen-expansion `Σ ρ_k/(s+μ_k)` of a pencil with `M`-normalized
/// eigenvectors.
#[derive(Debug, Clone)]
struct PencilExpansion {
    poles: Vec<C64>,
    residues: Vec<C64>,
    vectors: Vec<Vec<C64>>,
}

impl PencilExpansion {
    fn new(s: &Mat<C64>, m: &Mat<C64>, b: &[C64]) -> Result<Self> {
        let n = s.nrows();
        let ge = s
            .generalized_eigen(m)
            .map_err(|e| LslError::LinearAlgebra(format!("generalized eigenproblem failed: {e:?}")))?;
        let u = ge.U();
        let sa = ge.S_a().column_vector();
        let sb = ge.S_b().column_vector();
        let scale = (0..n).map(|k| sa[k].norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut poles = Vec::with_capacity(n);
        let mut residues = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n);
        for k in 0..n {
            if sb[k].norm() <= f64::EPSILON * scale * 1e-3 {
                log::debug!("skipping infinite pencil eigenvalue");
                continue;
            }
            let mu = sa[k] / sb[k];
            let x: Vec<C64> = (0..n).map(|i| u[(i, k)]).collect();
            let mut mx = vec![C64::new(0.0, 0.0); n];
            for j in 0..n {
                let xj = x[j];
                for i in 0..n {
                    mx[i] += m[(i, j)] * xj;
                }
            }
            let xmx: C64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum();
            if xmx.norm() == 0.0 {
                continue;
            }
            let bx: C64 = x.iter().zip(b).map(|(a, b)| a * b).sum();
            poles.push(mu);
            residues.push(bx * bx / xmx);
            let scale = crate::lanczos::branch_sqrt(xmx);
            vectors.push(x.iter().map(|v| v / scale).collect());
        }
        Ok(Self { poles, residues, vectors })
    }
}

/// Pencil `(S, M)` reduced to Hessenberg-triangular form by unitary
/// rotations, `S = Q H Zᴴ`, `M = Q R Zᴴ`, which evaluates
/// `bᵀ(S + sM)⁻¹b` stably in `O(n²)` per frequency.
#[derive(Debug, Clone)]
pub struct HessenbergPencil {
    n: usize,
    /// Row-major Hessenberg factor.
    h: Vec<C64>,
    /// Row-major upper-triangular factor.
    r: Vec<C64>,
    /// `Qᴴ b`.
    left: Vec<C64>,
    /// `Zᵀ b`.
    right: Vec<C64>,
}

fn rotate_rows(a: &mut [C64], n: usize, p: usize, q: usize, c: f64, s: C64, from: usize) {
    for k in from..n {
        let (x, y) = (a[p * n + k], a[q * n + k]);
        a[p * n + k] = x * c + s * y;
        a[q * n + k] = -s.conj() * x + y * c;
    }
}

/// `(c, s)` with `[c s; −s̄ c] [x; y] = [r; 0]`.
fn givens(x: C64, y: C64) -> Option<(f64, C64)> {
    if y.norm() == 0.0 {
        return None;
    }
    if x.norm() == 0.0 {
        return Some((0.0, y.conj() / y.norm()));
    }
    let nrm = x.norm().hypot(y.norm());
    Some((x.norm() / nrm, (x / x.norm()) * y.conj() / nrm))
}

impl HessenbergPencil {
    pub fn new(sys: &LoewnerSystem) -> Self {
        let n = sys.len();
        let mut h: Vec<C64> = (0..n * n).map(|k| sys.s[(k / n, k % n)]).collect();
        let mut r: Vec<C64> = (0..n * n).map(|k| sys.m[(k / n, k % n)]).collect();
        let mut left = sys.b.clone();
        let mut right = sys.b.clone();
        let rotate_vec = |v: &mut [C64], p: usize, q: usize, c: f64, s: C64| {
            let (x, y) = (v[p], v[q]);
            v[p] = x * c + s * y;
            v[q] = -s.conj() * x + y * c;
        };
        for j in 0..n {
            for i in (j + 1..n).rev() {
                if let Some((c, s)) = givens(r[(i - 1) * n + j], r[i * n + j]) {
                    rotate_rows(&mut r, n, i - 1, i, c, s, j);
                    rotate_rows(&mut h, n, i - 1, i, c, s, 0);
                    rotate_vec(&mut left, i - 1, i, c, s);
                }
                r[i * n + j] = C64::new(0.0, 0.0);
            }
        }
        for j in 0..n.saturating_sub(2) {
            for i in (j + 2..n).rev() {
                if let Some((c, s)) = givens(h[(i - 1) * n + j], h[i * n + j]) {
                    rotate_rows(&mut h, n, i - 1, i, c, s, j);
                    rotate_rows(&mut r, n, i - 1, i, c, s, i - 1);
                    rotate_vec(&mut left, i - 1, i, c, s);
                }
                h[i * n + j] = C64::new(0.0, 0.0);
                // Restore the triangle: zero r[i][i-1] by a column rotation.
                let (x, y) = (r[i * n + i - 1], r[i * n + i]);
                let nrm = x.norm().hypot(y.norm());
                if x.norm() != 0.0 && nrm > 0.0 {
                    let (g11, g21) = (y / nrm, -x / nrm);
                    let (g12, g22) = (x.conj() / nrm, y.conj() / nrm);
                    let rot_cols = |a: &mut [C64], rows: usize| {
                        for k in 0..rows {
                            let (u, v) = (a[k * n + i - 1], a[k * n + i]);
                            a[k * n + i - 1] = u * g11 + v * g21;
                            a[k * n + i] = u * g12 + v * g22;
                        }
                    };
                    rot_cols(&mut r, i + 1);
                    rot_cols(&mut h, n);
                    let (u, v) = (right[i - 1], right[i]);
                    right[i - 1] = u * g11 + v * g21;
                    right[i] = u * g12 + v * g22;
                    r[i * n + i - 1] = C64::new(0.0, 0.0);
                }
            }
        }
        Self { n, h, r, left, right }
    }

    /// `bᵀ(S + sM)⁻¹b`; `work` is reused scratch of length `n² + n`.
    pub fn eval_with(&self, s: C64, work: &mut Vec<C64>) -> Result<C64> {
        let n = self.n;
        work.clear();
        work.extend(self.h.iter().zip(&self.r).map(|(h, r)| h + s * r));
        work.extend_from_slice(&self.left);
        let (a, y) = work.split_at_mut(n * n);
        for k in 0..n.saturating_sub(1) {
            if a[(k + 1) * n + k].norm() > a[k * n + k].norm() {
                for j in k..n {
                    a.swap(k * n + j, (k + 1) * n + j);
                }
                y.swap(k, k + 1);
            }
            let piv = a[k * n + k];
            if piv.norm() == 0.0 {
                continue;
            }
            let f = a[(k + 1) * n + k] / piv;
            if f.norm() != 0.0 {
                for j in k + 1..n {
                    let t = a[k * n + j];
                    a[(k + 1) * n + j] -= f * t;
                }
                let t = y[k];
                y[k + 1] -= f * t;
            }
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= a[i * n + j] * y[j];
            }
            y[i] = acc / a[i * n + i];
        }
        let out: C64 = self.right.iter().zip(y.iter()).map(|(c, v)| c * v).sum();
        if !out.re.is_finite() || !out.im.is_finite() {
            return Err(LslError::PencilSingular { re: s.re, im: s.im });
        }
        Ok(out)
    }

    pub fn eval(&self, s: C64) -> Result<C64> {
        self.eval_with(s, &mut Vec::with_capacity(self.n * (self.n + 1)))
    }
}

/// Projects out near-null directions of `M` by congruence with the leading
/// right singular vectors.
fn regularize(
    sys: &LoewnerSystem,
    trunc_tol: f64,
    rank: Option<usize>,
) -> Result<(Mat<C64>, Mat<C64>, Vec<C64>, Option<Mat<C64>>)> {
    if !(trunc_tol >= 0.0) {
        return Err(LslError::InvalidParameter(format!("trunc_tol must be >= 0, got {trunc_tol}")));
    }
    let n = sys.len();
    let svd = sys.m.svd().map_err(|e| LslError::LinearAlgebra(format!("SVD failed: {e:?}")))?;
    let sv = svd.S().column_vector();
    let smax = if n > 0 { sv[0].re } else { 0.0 };
    let mut k = (0..n).filter(|i| sv[*i].re > trunc_tol * smax && sv[*i].re > 0.0).count();
    if let Some(r) = rank {
        k = k.min(r);
    }
    if k == 0 {
        return Err(LslError::OverTruncation(trunc_tol));
    }
    if k == n {
        return Ok((sys.s.clone(), sys.m.clone(), sys.b.clone(), None));
    }
    log::info!("pencil regularization keeps {k} of {n} directions");
    let v = svd.V();
    let p = Mat::<C64>::from_fn(n, k, |i, j| v[(i, j)]);
    let pt = p.transpose();
    let s = pt * &sys.s * &p;
    let m = pt * &sys.m * &p;
    let b = (0..k).map(|j| (0..n).map(|i| p[(i, j)] * sys.b[i]).sum()).collect();
    Ok((s, m, b, Some(p)))
}

/// Number of directions [`pencil_poles_with`] keeps for `sys`.
pub fn pencil_rank(sys: &LoewnerSystem, opts: PencilOptions) -> Result<usize> {
    let (s, _, _, _) = regularize(sys, opts.trunc_tol, opts.rank)?;
    Ok(s.nrows())
}

/// Poles and residues of the (regularized) pencil as a conjugate-paired ROM.
pub fn pencil_poles(sys: &LoewnerSystem, trunc_tol: f64) -> Result<PoleResidueROM> {
    pencil_poles_with(sys, PencilOptions { trunc_tol, ..PencilOptions::default() })
}

pub fn pencil_poles_with(sys: &LoewnerSystem, opts: PencilOptions) -> Result<PoleResidueROM> {
    pencil_ritz(sys, opts).map(|(rom, _)| rom)
}

/// Like [`pencil_poles_with`], also returning for every retained pole the
/// coefficients `c` of its Ritz vector `Σ_q c_q φ(iω_q)` in the snapshot
/// basis, normalized so that `cᵀMc = 1`.
pub fn pencil_ritz(sys: &LoewnerSystem, opts: PencilOptions) -> Result<(PoleResidueROM, Vec<Vec<C64>>)> {
    let (s, m, b, p) = regularize(sys, opts.trunc_tol, opts.rank)?;
    let exp = PencilExpansion::new(&s, &m, &b)?;
    let lift = |x: &[C64]| -> Vec<C64> {
        match &p {
            Some(p) => (0..p.nrows()).map(|i| (0..p.ncols()).map(|j| p[(i, j)] * x[j]).sum()).collect(),
            None => x.to_vec(),
        }
    };
    let mut upper: Vec<(C64, C64, Vec<C64>)> = Vec::new();
    let mut lower: Vec<(C64, C64)> = Vec::new();
    let mut real = 0usize;
    // Relative to the largest pole so that near-zero eigenvalues count as real.
    let pole_scale = exp.poles.iter().map(|l| l.norm()).fold(f64::MIN_POSITIVE, f64::max);
    for ((l, r), x) in exp.poles.iter().zip(&exp.residues).zip(&exp.vectors) {
        if l.im.abs() <= PAIR_TOL * pole_scale {
            real += 1;
        } else if l.im > 0.0 {
            upper.push((*l, *r, lift(x)));
        } else {
            lower.push((*l, *r));
        }
    }
    if real > 0 {
        log::warn!("{real} real pencil eigenvalue(s) dropped from the conjugate-paired ROM");
    }
    let mut used = vec![false; lower.len()];
    let mut pairs: Vec<(C64, C64, Vec<C64>)> = Vec::with_capacity(upper.len());
    for (l, r, x) in upper {
        let best = lower
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, (m, _))| (i, (m.conj() - l).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        match best {
            Some((i, dist)) if dist <= 1e-6 * l.norm().max(1.0) => {
                used[i] = true;
                let (lm, rm) = lower[i];
                pairs.push((0.5 * (l + lm.conj()), 0.5 * (r + rm.conj()), x));
            }
            _ => {
                log::warn!("pencil eigenvalue {l} has no conjugate partner; kept with its own residue");
                pairs.push((l, r, x));
            }
        }
    }
    let mut kept = Vec::with_capacity(pairs.len());
    let mut unstable = 0usize;
    for (l, r, x) in pairs {
        if l.re < -opts.stab_tol {
            unstable += 1;
            log::debug!("unstable pole {l}");
            if opts.unstable == UnstablePolicy::Reflect {
                kept.push((C64::new(-l.re, l.im), r, x));
            }
        } else {
            kept.push((l, r, x));
        }
    }
    if unstable > 0 {
        let action = match opts.unstable {
            UnstablePolicy::Drop => "dropped",
            UnstablePolicy::Reflect => "reflected",
        };
        log::warn!("{unstable} unstable pencil pole(s) {action}");
    }
    if kept.is_empty() {
        return Err(LslError::OverTruncation(opts.trunc_tol));
    }
    kept.sort_by(|a, b| sort_key(&a.0).partial_cmp(&sort_key(&b.0)).unwrap());
    let mut lambdas = Vec::with_capacity(kept.len());
    let mut residues = Vec::with_capacity(kept.len());
    let mut vectors = Vec::with_capacity(kept.len());
    for (l, r, x) in kept {
        lambdas.push(l);
        residues.push(r);
        vectors.push(x);
    }
    Ok((PoleResidueROM::new(lambdas, residues, RomOrigin::AdaptivePencil)?, vectors))
}

/// One row of the node-selection history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyStep {
    pub iteration: usize,
    /// Positive member of the node pair added at this iteration.
    pub omega: f64,
    /// Maximum absolute data error of the ROM before the node was added
    /// (for the first node, the maximum of `|D|`).
    pub max_error: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptiveFit {
    pub system: LoewnerSystem,
    pub converged: bool,
    /// Maximum absolute error of the final ROM over the sweep; NaN when
    /// not evaluated.
    pub final_error: f64,
    pub history: Vec<GreedyStep>,
    /// Derivatives were estimated by finite differences of the sweep.
    pub derivative_estimated: bool,
}

/// Sweep data restricted to non-negative frequencies in a band, with
/// derivatives (given or estimated).
#[derive(Debug, Clone)]
pub struct BandData {
    pub omegas: Vec<f64>,
    pub d: Vec<C64>,
    pub dprime: Vec<C64>,
    pub derivative_estimated: bool,
}

impl BandData {
    /// Collects the samples with `ω_min ≤ |ω| ≤ ω_max`, mapping negative
    /// frequencies through conjugation.
    pub fn from_sweep(data: &FrequencySweep, omega_min: f64, omega_max: f64) -> Result<Self> {
        if !(omega_min > 0.0) || !(omega_max > omega_min) {
            return Err(LslError::InvalidParameter(format!(
                "need 0 < omega_min < omega_max, got [{omega_min}, {omega_max}]"
            )));
        }
        let tol = NODE_TOL * omega_max;
        let mut table: BTreeMap<u64, (f64, C64, Option<C64>)> = BTreeMap::new();
        for (k, w) in data.omegas.iter().enumerate() {
            let a = w.abs();
            if a < omega_min * (1.0 - NODE_TOL) || a > omega_max * (1.0 + NODE_TOL) {
                continue;
            }
            let (d, dp) = if *w < 0.0 {
                (data.d[k].conj(), data.dprime.as_ref().map(|v| v[k].conj()))
            } else {
                (data.d[k], data.dprime.as_ref().map(|v| v[k]))
            };
            table.entry(a.to_bits()).or_insert((a, d, dp));
        }
        let mut rows: Vec<(f64, C64, Option<C64>)> = table.into_values().collect();
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        rows.dedup_by(|a, b| (a.0 - b.0).abs() <= tol);
        if rows.len() < 3 {
            return Err(LslError::InvalidParameter("sweep has fewer than 3 samples in the band".into()));
        }
        let omegas: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let d: Vec<C64> = rows.iter().map(|r| r.1).collect();
        let have_all = rows.iter().all(|r| r.2.is_some());
        let (dprime, derivative_estimated) = if have_all {
            (rows.iter().map(|r| r.2.unwrap()).collect(), false)
        } else {
            log::warn!("sweep lacks derivatives; using finite differences (reduced accuracy)");
            (finite_difference_derivative(&omegas, &d), true)
        };
        Ok(Self { omegas, d, dprime, derivative_estimated })
    }

    fn index_of(&self, omega: f64) -> usize {
        let pos = self.omegas.partition_point(|w| *w < omega);
        let mut best = pos.min(self.omegas.len() - 1);
        if pos > 0 && (self.omegas[pos - 1] - omega).abs() <= (self.omegas[best] - omega).abs() {
            best = pos - 1;
        }
        best
    }
}

/// `dD/ds = −i dD/dω` from second-order three-point differences on a
/// possibly non-uniform grid.
pub fn finite_difference_derivative(omegas: &[f64], d: &[C64]) -> Vec<C64> {
    let n = omegas.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    let three = |i0: usize, i1: usize, i2: usize, x: f64| -> C64 {
        let (x0, x1, x2) = (omegas[i0], omegas[i1], omegas[i2]);
        let l0 = (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2));
        let l1 = (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2));
        let l2 = (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1));
        d[i0] * l0 + d[i1] * l1 + d[i2] * l2
    };
    for i in 0..n {
        let dd = if i == 0 {
            three(0, 1, 2, omegas[0])
        } else if i + 1 == n {
            three(n - 3, n - 2, n - 1, omegas[n - 1])
        } else {
            three(i - 1, i, i + 1, omegas[i])
        };
        out[i] = dd * C64::new(0.0, -1.0);
    }
    out
}

fn paired_system(band: &BandData, picks: &[usize]) -> Result<LoewnerSystem> {
    let mut nodes = Vec::with_capacity(2 * picks.len());
    let mut d = Vec::with_capacity(2 * picks.len());
    let mut dp = Vec::with_capacity(2 * picks.len());
    for &k in picks {
        nodes.push(band.omegas[k]);
        nodes.push(-band.omegas[k]);
        d.push(band.d[k]);
        d.push(band.d[k].conj());
        dp.push(band.dprime[k]);
        dp.push(band.dprime[k].conj());
    }
    loewner_matrices(&nodes, &d, &dp)
}

/// Maximum absolute error over the band and the index where it occurs
/// (ties go to the smallest frequency).
fn scan(band: &BandData, sys: &LoewnerSystem) -> Result<(f64, usize)> {
    let ht = HessenbergPencil::new(sys);
    let errors: Vec<f64> = band
        .omegas
        .par_iter()
        .zip(&band.d)
        .map_init(Vec::new, |work, (w, d)| match ht.eval_with(C64::new(0.0, *w), work) {
            Ok(v) => (v - d).norm(),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, e) in errors.iter().enumerate() {
        let e = if e.is_nan() { f64::INFINITY } else { *e };
        if e > best.0 {
            best = (e, k);
        }
    }
    Ok(best)
}

/// Greedy Hermite interpolation on `[ω_min, ω_max]` starting from the
/// geometric mean of the band ends.
pub fn adaptive_fit(
    data: &FrequencySweep,
    omega_min: f64,
    omega_max: f64,
    tol: f64,
    max_n: usize,
) -> Result<AdaptiveFit> {
    if !(tol > 0.0) {
        return Err(LslError::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if max_n < 2 || max_n % 2 != 0 {
        return Err(LslError::InvalidParameter(format!("max_n must be an even number >= 2, got {max_n}")));
    }
    let band = BandData::from_sweep(data, omega_min, omega_max)?;
    let first = (omega_min * omega_max).sqrt();
    let k0 = band.index_of(first);
    if (band.omegas[k0] - first).abs() > NODE_TOL * first {
        log::warn!("first node {first} is not sampled; using nearest sample {}", band.omegas[k0]);
    }
    let max_d = band.d.iter().map(|d| d.norm()).fold(0.0, f64::max);
    let mut history = vec![GreedyStep { iteration: 0, omega: band.omegas[k0], max_error: max_d }];
    let mut picks = vec![k0];
    let mut iteration = 0;
    loop {
        let sys = paired_system(&band, &picks)?;
        let (err, arg) = scan(&band, &sys)?;
        log::debug!("iteration {iteration}: n = {}, max error {err:.3e}", sys.len());
        if err <= tol || sys.len() + 2 > max_n || picks.contains(&arg) {
            let converged = err <= tol;
            if !converged && picks.contains(&arg) {
                log::warn!("greedy selection stalled at omega = {}", band.omegas[arg]);
            }
            return Ok(AdaptiveFit {
                system: sys,
                converged,
                final_error: err,
                history,
                derivative_estimated: band.derivative_estimated,
            });
        }
        iteration += 1;
        history.push(GreedyStep { iteration, omega: band.omegas[arg], max_error: err });
        picks.push(arg);
    }
}

/// Non-adaptive alternative for noisy sweeps: `count` band samples at
/// evenly spaced sweep positions (plus conjugates) form the pencil, and
/// rank truncation in [`pencil_poles_with`] does the smoothing. Greedy
/// interpolation would only chase the noise.
pub fn sampled_fit(data: &FrequencySweep, omega_min: f64, omega_max: f64, count: usize) -> Result<AdaptiveFit> {
    if count < 1 {
        return Err(LslError::InvalidParameter("sampled fit needs at least one sample".into()));
    }
    let band = BandData::from_sweep(data, omega_min, omega_max)?;
    let len = band.omegas.len();
    let count = count.min(len);
    let picks: Vec<usize> = (0..count).map(|i| ((2 * i + 1) * len) / (2 * count)).collect();
    // A full scan would cost O(count²) per sample and the untruncated
    // pencil interpolates noise anyway, so the error is left unevaluated.
    Ok(AdaptiveFit {
        system: paired_system(&band, &picks)?,
        converged: false,
        final_error: f64::NAN,
        history: vec![],
        derivative_estimated: band.derivative_estimated,
    })
}
