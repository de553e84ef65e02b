//! Linearized Lippmann-Schwinger inversion for loss and potential updates.
//!
//! The data perturbation obeys the exact discrete identity
//!
//! ```text
//! D(s) − D₀(s) = −Σ_j h [ Δr_j w₀_j w_j + Δκ̂_j (w̄₀ ŵ + ŵ₀ w̄)_j ]
//! ```
//!
//! with `w̄_j = (w_j + w_{j+1})/2` and `w_{N+1} = 0`. Unknowns live on `M`
//! uniform quadrature midpoints and reach the grid through linear
//! interpolation, so the rows are a midpoint quadrature of the continuous
//! kernel `−[Δr w₀w + Δκ(w₀ŵ + ŵ₀w)]`. Unknown fields are replaced by the
//! background field (Born) or by the lifted ROM field (LSL).

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::adaptrom::{adaptive_fit, sampled_fit, loewner_matrices, pencil_poles_with, pencil_rank, LoewnerSystem, PencilOptions};
use crate::error::{LslError, Result};
use crate::forward::{assemble_operator, eigendecompose, sweep, DiscreteOperator, FieldVector, FrequencySweep, SpectralData};
use crate::internal::{background_basis, background_ritz_basis, born_internal, lsl_internal, LiftedBasis};
use crate::lanczos::{lanczos_with, LanczosOptions, TridiagROM};
use crate::medium::{interp_linear, Grid1D, MediumProfile};
use crate::specrom::{truncated_measure, PoleResidueROM};

/// Real least-squares system `G x ≈ rhs`, `x = [Δr_1..Δr_M, Δκ_1..Δκ_M]`.
/// Rows `2k` and `2k + 1` hold the real and imaginary parts for frequency `k`.
#[derive(Debug, Clone)]
pub struct LSLSystem {
    pub g: Mat<f64>,
    pub rhs: Vec<f64>,
    pub quad_nodes: Vec<f64>,
    /// Effective quadrature weights, positive and summing to one.
    pub quad_weights: Vec<f64>,
    pub frequencies: Vec<C64>,
}

impl LSLSystem {
    pub fn quad_len(&self) -> usize {
        self.quad_nodes.len()
    }

    /// `G x` for a candidate update.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.g.nrows()).map(|i| (0..self.g.ncols()).map(|j| self.g[(i, j)] * x[j]).sum()).collect()
    }
}

impl LSLSystem {
    /// Scales each frequency's row pair (and its data) to unit Euclidean
    /// norm, so rows taken near a resonance do not dominate the solve.
    /// Returns the applied factors.
    pub fn normalize_rows(&mut self) -> Vec<f64> {
        let k = self.frequencies.len();
        let cols = self.g.ncols();
        let mut factors = Vec::with_capacity(k);
        for f in 0..k {
            let norm = (0..cols)
                .map(|j| self.g[(2 * f, j)].powi(2) + self.g[(2 * f + 1, j)].powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            for r in [2 * f, 2 * f + 1] {
                for j in 0..cols {
                    self.g[(r, j)] *= scale;
                }
                self.rhs[r] *= scale;
            }
            factors.push(scale);
        }
        factors
    }
}

/// Uniform midpoints `(m + 1/2)/M`.
pub fn quadrature_nodes(m: usize) -> Vec<f64> {
    (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect()
}

/// Row-stochastic linear interpolation from `from` onto `to` with constant
/// extrapolation; `to.len() × from.len()`.
pub fn interpolation_matrix(from: &[f64], to: &[f64]) -> Mat<f64> {
    Mat::<f64>::from_fn(to.len(), from.len(), |i, j| {
        let mut e = vec![0.0; from.len()];
        e[j] = 1.0;
        interp_linear(from, &e, to[i])
    })
}

/// Complex kernel rows on the grid: `(h w₀_j w_j, h (w̄₀ŵ + ŵ₀w̄)_j)`.
fn grid_kernel(h: f64, phi0: &FieldVector, phi: &FieldVector) -> (Vec<C64>, Vec<C64>) {
    let n = phi.w.len();
    let bar = |w: &[C64], j: usize| 0.5 * (w[j] + if j + 1 < n { w[j + 1] } else { C64::new(0.0, 0.0) });
    let kr = (0..n).map(|j| h * phi0.w[j] * phi.w[j]).collect();
    let kk = (0..n).map(|j| h * (bar(&phi0.w, j) * phi.w_hat[j] + phi0.w_hat[j] * bar(&phi.w, j))).collect();
    (kr, kk)
}

/// Assembles `G` and `rhs` from background fields `φ₀`, approximate fields
/// `φ` and data differences `D − D₀`, one per frequency.
pub fn assemble_ls(
    grid: &Grid1D,
    background: &[FieldVector],
    fields: &[FieldVector],
    delta_d: &[C64],
    quad_m: usize,
) -> Result<LSLSystem> {
    let k = fields.len();
    if k == 0 || background.len() != k || delta_d.len() != k {
        return Err(LslError::Dimension(format!(
            "{} background fields, {k} fields and {} data values",
            background.len(),
            delta_d.len()
        )));
    }
    if quad_m == 0 {
        return Err(LslError::InvalidParameter("quadrature needs at least one node".into()));
    }
    let n = grid.len();
    if quad_m > n {
        return Err(LslError::InvalidParameter(format!(
            "{quad_m} quadrature nodes on {n} cells; some nodes would see no cell"
        )));
    }
    if fields.iter().chain(background).any(|f| f.w.len() != n || f.w_hat.len() != n) {
        return Err(LslError::Dimension("field length does not match the grid".into()));
    }
    if fields.iter().chain(background).any(|f| !f.is_finite()) || delta_d.iter().any(|d| !d.re.is_finite() || !d.im.is_finite()) {
        return Err(LslError::Assembly("non-finite field or data value".into()));
    }
    let h = grid.step();
    let quad = quadrature_nodes(quad_m);
    let pr = interpolation_matrix(&quad, &grid.primary_nodes());
    let dual: Vec<f64> = (1..=n).map(|j| grid.dual(j)).collect();
    let pk = interpolation_matrix(&quad, &dual);
    let quad_weights: Vec<f64> = (0..quad_m).map(|m| h * (0..n).map(|j| pr[(j, m)]).sum::<f64>()).collect();

    let mut g = Mat::<f64>::zeros(2 * k, 2 * quad_m);
    let mut rhs = vec![0.0; 2 * k];
    for row in 0..k {
        let (kr, kk) = grid_kernel(h, &background[row], &fields[row]);
        for m in 0..quad_m {
            let mut cr = C64::new(0.0, 0.0);
            let mut ck = C64::new(0.0, 0.0);
            for j in 0..n {
                cr += kr[j] * pr[(j, m)];
                ck += kk[j] * pk[(j, m)];
            }
            g[(2 * row, m)] = -cr.re;
            g[(2 * row + 1, m)] = -cr.im;
            g[(2 * row, quad_m + m)] = -ck.re;
            g[(2 * row + 1, quad_m + m)] = -ck.im;
        }
        rhs[2 * row] = delta_d[row].re;
        rhs[2 * row + 1] = delta_d[row].im;
    }
    Ok(LSLSystem { g, rhs, quad_nodes: quad, quad_weights, frequencies: fields.iter().map(|f| f.s).collect() })
}

/// Choice of the Tikhonov parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// Fixed `λ`; zero gives the minimum-norm least-squares solution.
    Fixed(f64),
    /// `λ = ε σ_max(G)`.
    Relative(f64),
    /// Largest `λ` whose residual stays below `tau · δ`.
    Discrepancy { noise_norm: f64, tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub regularization: Regularization,
    /// Weight of the first-difference penalty on each half of `x`.
    pub gradient_penalty: f64,
    /// Background loss at quadrature nodes; enables `r₀ + Δr ≥ 0`.
    pub nonneg_loss: bool,
    /// Re-solve passes after clipping; zero means clip once.
    pub projected_passes: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { regularization: Regularization::Fixed(0.0), gradient_penalty: 0.0, nonneg_loss: true, projected_passes: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LsSolution {
    pub delta_r: Vec<f64>,
    pub delta_kappa: Vec<f64>,
    pub lambda: f64,
    pub residual_norm: f64,
    pub rank: usize,
    /// Number of quadrature nodes where the loss was clipped to zero.
    pub clipped: usize,
}

struct Factored {
    u: Mat<f64>,
    s: Vec<f64>,
    v: Mat<f64>,
    rank: usize,
}

fn factor(a: &Mat<f64>) -> Result<Factored> {
    let svd = a.thin_svd().map_err(|e| LslError::LinearAlgebra(format!("SVD failed: {e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(LslError::LinearAlgebra("non-finite singular values".into()));
    }
    let smax = s.first().copied().unwrap_or(0.0);
    let cut = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let rank = s.iter().filter(|x| **x > cut).count();
    if rank == 0 {
        return Err(LslError::DegenerateSystem("all singular values vanish".into()));
    }
    Ok(Factored { u: svd.U().to_owned(), s, v: svd.V().to_owned(), rank })
}

impl Factored {
    fn coefficients(&self, rhs: &[f64]) -> Vec<f64> {
        (0..self.s.len()).map(|i| (0..self.u.nrows()).map(|r| self.u[(r, i)] * rhs[r]).sum()).collect()
    }

    fn solve(&self, beta: &[f64], lambda: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.v.nrows()];
        for i in 0..self.rank {
            let f = self.s[i] / (self.s[i] * self.s[i] + lambda * lambda);
            for (r, xr) in x.iter_mut().enumerate() {
                *xr += self.v[(r, i)] * f * beta[i];
            }
        }
        x
    }
}

fn residual(a: &Mat<f64>, x: &[f64], rhs: &[f64]) -> f64 {
    (0..a.nrows())
        .map(|i| {
            let ax: f64 = (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum();
            (ax - rhs[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Appends `μ L` rows (first differences within each half) to `G`.
fn with_penalty(g: &Mat<f64>, rhs: &[f64], mu: f64, quad_m: usize, cols: &[usize]) -> (Mat<f64>, Vec<f64>) {
    let mut extra: Vec<Vec<(usize, f64)>> = vec![];
    if mu > 0.0 {
        for half in 0..2 {
            for m in 0..quad_m.saturating_sub(1) {
                extra.push(vec![(half * quad_m + m, -mu), (half * quad_m + m + 1, mu)]);
            }
        }
    }
    let pos: std::collections::HashMap<usize, usize> = cols.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let rows = g.nrows() + extra.len();
    let mut a = Mat::<f64>::zeros(rows, cols.len());
    for i in 0..g.nrows() {
        for (jj, c) in cols.iter().enumerate() {
            a[(i, jj)] = g[(i, *c)];
        }
    }
    for (e, row) in extra.iter().enumerate() {
        for (c, v) in row {
            if let Some(jj) = pos.get(c) {
                a[(g.nrows() + e, *jj)] = *v;
            }
        }
    }
    let mut b = rhs.to_vec();
    b.resize(rows, 0.0);
    (a, b)
}

fn pick_lambda(f: &Factored, beta: &[f64], a: &Mat<f64>, b: &[f64], reg: Regularization) -> Result<f64> {
    match reg {
        Regularization::Fixed(l) if l >= 0.0 && l.is_finite() => Ok(l),
        Regularization::Fixed(l) => Err(LslError::InvalidParameter(format!("regularization must be >= 0, got {l}"))),
        Regularization::Relative(e) if e >= 0.0 && e.is_finite() => Ok(e * f.s[0]),
        Regularization::Relative(e) => Err(LslError::InvalidParameter(format!("relative regularization must be >= 0, got {e}"))),
        Regularization::Discrepancy { noise_norm, tau } => {
            if !(noise_norm >= 0.0) || !(tau > 0.0) {
                return Err(LslError::InvalidParameter("discrepancy needs noise_norm >= 0 and tau > 0".into()));
            }
            let target = tau * noise_norm;
            let smax = f.s[0];
            let (mut lo, mut hi) = ((smax * 1e-12).ln(), (smax * 10.0).ln());
            let floor = residual(a, &f.solve(beta, lo.exp()), b);
            // An unreachable target means the model misfit exceeds the noise;
            // the noise budget is then spent on top of that floor.
            let target = if floor > target {
                log::warn!("discrepancy target {target:.3e} below the residual floor {floor:.3e}");
                floor + target
            } else {
                target
            };
            if residual(a, &f.solve(beta, hi.exp()), b) <= target {
                return Ok(hi.exp());
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if residual(a, &f.solve(beta, mid.exp()), b) <= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo.exp())
        }
    }
}

/// Tikhonov-regularized minimum-norm solve with optional loss clipping.
/// `r0` holds the background loss at the quadrature nodes.
pub fn solve_minnorm(sys: &LSLSystem, r0: &[f64], opts: SolveOptions) -> Result<LsSolution> {
    let m = sys.quad_len();
    if r0.len() != m || sys.g.ncols() != 2 * m {
        return Err(LslError::Dimension(format!("{} background samples for {m} quadrature nodes", r0.len())));
    }
    if sys.g.nrows() == 0 {
        return Err(LslError::DegenerateSystem("empty system".into()));
    }
    let all: Vec<usize> = (0..2 * m).collect();
    let (a, b) = with_penalty(&sys.g, &sys.rhs, opts.gradient_penalty, m, &all);
    let f = factor(&a)?;
    let beta = f.coefficients(&b);
    let lambda = pick_lambda(&f, &beta, &a, &b, opts.regularization)?;
    let mut x = f.solve(&beta, lambda);
    let mut rank = f.rank;
    let mut clipped = 0;
    if opts.nonneg_loss {
        let mut fixed = vec![false; m];
        for pass in 0..=opts.projected_passes {
            let mut new_clip = false;
            for i in 0..m {
                if r0[i] + x[i] < 0.0 {
                    x[i] = -r0[i];
                    if !fixed[i] {
                        fixed[i] = true;
                        new_clip = true;
                    }
                }
            }
            if !new_clip || pass == opts.projected_passes {
                break;
            }
            let free: Vec<usize> = (0..2 * m).filter(|c| *c >= m || !fixed[*c]).collect();
            let mut rhs = sys.rhs.clone();
            for (i, r) in rhs.iter_mut().enumerate() {
                for c in (0..m).filter(|c| fixed[*c]) {
                    *r -= sys.g[(i, c)] * x[c];
                }
            }
            let (a2, b2) = with_penalty(&sys.g, &rhs, opts.gradient_penalty, m, &free);
            let f2 = factor(&a2)?;
            let beta2 = f2.coefficients(&b2);
            let x2 = f2.solve(&beta2, lambda);
            rank = f2.rank;
            for (jj, c) in free.iter().enumerate() {
                x[*c] = x2[jj];
            }
        }
        clipped = fixed.iter().filter(|v| **v).count();
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LslError::DegenerateSystem("non-finite solution".into()));
    }
    let residual_norm = residual(&sys.g, &x, &sys.rhs);
    Ok(LsSolution { delta_r: x[..m].to_vec(), delta_kappa: x[m..].to_vec(), lambda, residual_norm, rank, clipped })
}

/// Which internal field replaces the unknown one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionMode {
    Born,
    Lsl,
}

impl InversionMode {
    pub fn tag(self) -> &'static str {
        match self {
            InversionMode::Born => "born",
            InversionMode::Lsl => "lsl",
        }
    }
}

/// Which reduced model carries the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomKind {
    TruncatedMeasure,
    Adaptive,
}

/// Inversion frequencies for the adaptive model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyChoice {
    /// Sweep samples nearest to log-spaced targets.
    LogSpaced,
    /// The greedy interpolation nodes.
    Nodes,
}

/// How the adaptive model picks its interpolation nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeSelection {
    /// Greedy Hermite interpolation until `adaptive_tol` or `max_nodes`.
    Greedy,
    /// This many evenly spaced sweep samples, smoothed by pencil truncation.
    Uniform(usize),
}

/// Where the LSL right-hand side comes from in the adaptive model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataSource {
    /// The measured sweep samples.
    Samples,
    /// The reduced model's transfer function at the same frequencies.
    Model,
}

/// Measured data in either representation.
#[derive(Debug, Clone)]
pub enum InversionData {
    Spectral(SpectralData),
    Sweep(FrequencySweep),
}

#[derive(Debug, Clone)]
pub struct InvertOptions {
    pub mode: InversionMode,
    pub rom_kind: RomKind,
    /// Cells of the background operator.
    pub n_grid: usize,
    /// Retained pole pairs for the truncated measure.
    pub n_pairs: usize,
    /// Number of inversion frequencies for the truncated measure; zero picks `2n`.
    pub n_freq: usize,
    /// Inversion frequencies stop at this fraction of the model band:
    /// `|λ_n|` for the truncated measure, `omega_max` for the adaptive model.
    pub band_fraction: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub adaptive_tol: f64,
    pub max_nodes: usize,
    pub quad_m: usize,
    pub solve: SolveOptions,
    /// Relative noise level of the data, used by the discrepancy principle.
    pub noise_level: Option<f64>,
    pub tau: f64,
    pub adaptive_frequencies: FrequencyChoice,
    pub node_selection: NodeSelection,
    /// Right-hand side of LSL mode with the adaptive model; Born always
    /// uses the samples.
    pub lsl_data: DataSource,
    /// Scale each frequency's rows to unit norm before solving.
    pub normalize_rows: bool,
    /// Extra relinearization passes around the updated medium.
    pub outer_iterations: usize,
    pub pencil: PencilOptions,
    pub lanczos: LanczosOptions,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            mode: InversionMode::Lsl,
            rom_kind: RomKind::TruncatedMeasure,
            n_grid: 1000,
            n_pairs: 20,
            n_freq: 0,
            band_fraction: 0.5,
            omega_min: 0.1,
            omega_max: 100.0,
            adaptive_tol: 1e-10,
            max_nodes: 200,
            quad_m: 1000,
            solve: SolveOptions { regularization: Regularization::Relative(1e-2), ..SolveOptions::default() },
            noise_level: None,
            tau: 1.0,
            adaptive_frequencies: FrequencyChoice::LogSpaced,
            node_selection: NodeSelection::Greedy,
            lsl_data: DataSource::Samples,
            normalize_rows: true,
            outer_iterations: 0,
            pencil: PencilOptions::default(),
            lanczos: LanczosOptions::default(),
        }
    }
}

/// Outcome of the greedy fit when the adaptive model is used.
#[derive(Debug, Clone)]
pub struct AdaptiveSummary {
    pub nodes: Vec<f64>,
    pub converged: bool,
    pub final_error: f64,
}

#[derive(Debug, Clone)]
pub struct InversionReport {
    pub mode: InversionMode,
    pub rom_kind: RomKind,
    pub quad_nodes: Vec<f64>,
    pub delta_r: Vec<f64>,
    pub delta_kappa: Vec<f64>,
    /// Recovered loss and potential at the quadrature nodes.
    pub r: Vec<f64>,
    pub kappa: Vec<f64>,
    pub frequencies: Vec<C64>,
    pub rom_pairs: usize,
    pub lambda: f64,
    pub residual_norm: f64,
    pub clipped: usize,
    pub adaptive: Option<AdaptiveSummary>,
}

impl InversionReport {
    /// Relative L2 error of the recovered potential against `truth` on
    /// quadrature nodes with `T ≤ t_max`.
    pub fn kappa_error(&self, truth: impl Fn(f64) -> f64, t_max: f64) -> f64 {
        relative_l2(&self.quad_nodes, &self.kappa, truth, t_max)
    }

    pub fn loss_error(&self, truth: impl Fn(f64) -> f64, t_max: f64) -> f64 {
        relative_l2(&self.quad_nodes, &self.r, truth, t_max)
    }
}

pub fn relative_l2(nodes: &[f64], values: &[f64], truth: impl Fn(f64) -> f64, t_max: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (t, v) in nodes.iter().zip(values) {
        if *t <= t_max {
            let want = truth(*t);
            num += (v - want).powi(2);
            den += want * want;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Data, fields and frequencies for one linearization.
struct Linearization {
    frequencies: Vec<C64>,
    delta_d: Vec<C64>,
    /// Measured `D(s_k)`, the scale of the data noise.
    data: Vec<C64>,
    background: Vec<FieldVector>,
    fields: Vec<FieldVector>,
    rom_pairs: usize,
    adaptive: Option<AdaptiveSummary>,
}

fn log_frequencies(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64)).collect()
}

fn fields_for(
    mode: InversionMode,
    op0: &DiscreteOperator,
    basis: &LiftedBasis,
    tri0: &TridiagROM,
    tri: &TridiagROM,
    s: C64,
) -> Result<(FieldVector, FieldVector)> {
    match mode {
        InversionMode::Born => {
            let phi0 = born_internal(op0, s)?;
            Ok((phi0.clone(), phi0))
        }
        InversionMode::Lsl => Ok((lsl_internal(basis, tri0, s)?, lsl_internal(basis, tri, s)?)),
    }
}

fn linearize_tm(spec: &SpectralData, op0: &DiscreteOperator, opts: &InvertOptions) -> Result<Linearization> {
    let stage = |e: LslError| e.in_stage("truncated-measure inversion");
    let rom = truncated_measure(spec, opts.n_pairs).map_err(stage)?;
    let tri = lanczos_with(&rom, opts.lanczos).map_err(stage)?;
    let spec0 = eigendecompose(op0).map_err(stage)?;
    let rom0 = truncated_measure(&spec0, opts.n_pairs).map_err(stage)?;
    let tri0 = lanczos_with(&rom0, opts.lanczos).map_err(stage)?;
    let basis = background_basis(op0, &rom0, &tri0).map_err(stage)?;
    let count = if opts.n_freq == 0 { 2 * opts.n_pairs } else { opts.n_freq };
    let lo = 0.5 * rom.lambdas[0].im.abs().max(1e-3);
    let hi = (opts.band_fraction * rom.largest_pole().im.abs()).max(lo * 2.0);
    let frequencies: Vec<C64> = log_frequencies(lo, hi, count).into_iter().map(|w| C64::new(0.0, w)).collect();
    let mut delta_d = Vec::with_capacity(count);
    let mut background = Vec::with_capacity(count);
    let mut fields = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count);
    for s in &frequencies {
        let d = rom.evaluate(*s).map_err(stage)?;
        data.push(d);
        delta_d.push(d - rom0.evaluate(*s).map_err(stage)?);
        let (p0, p) = fields_for(opts.mode, op0, &basis, &tri0, &tri, *s).map_err(stage)?;
        background.push(p0);
        fields.push(p);
    }
    Ok(Linearization {
        frequencies,
        delta_d,
        data,
        background,
        fields,
        rom_pairs: rom.len(),
        adaptive: None,
    })
}

/// Searches pencil ranks outward from `2·pairs` for a model with exactly
/// `pairs` pole pairs. Real or unstable eigenvalues make the pair count
/// differ from half the rank, so the rank alone does not fix it.
fn with_pairs<T>(
    len: usize,
    pairs: usize,
    base: PencilOptions,
    build: impl Fn(PencilOptions) -> Result<T>,
    count: impl Fn(&T) -> usize,
) -> Option<T> {
    let target = 2 * pairs;
    for offset in 0..=MATCH_SEARCH {
        let mut ranks = vec![target + offset];
        if offset > 0 && offset <= target {
            ranks.push(target - offset);
        }
        for rank in ranks.into_iter().filter(|r| *r > 0 && *r <= len) {
            match build(PencilOptions { rank: Some(rank), ..base }) {
                Ok(out) if count(&out) == pairs => return Some(out),
                Ok(_) => {}
                Err(e) => log::debug!("pencil at rank {rank}: {e}"),
            }
        }
    }
    None
}

/// How far rank and pair searches may move.
const MATCH_SEARCH: usize = 4;

/// Measured and background pencil models with a common pair count.
#[derive(Debug, Clone)]
pub struct MatchedModels {
    pub rom: PoleResidueROM,
    pub tri: TridiagROM,
    pub tri0: TridiagROM,
    pub basis: LiftedBasis,
}

/// Builds the measured pencil model from `sys` and the background Ritz
/// model from `sys0` (same nodes), reducing both to a common pair count.
pub fn matched_models(sys: &LoewnerSystem, op0: &DiscreteOperator, sys0: &LoewnerSystem, opts: &InvertOptions) -> Result<MatchedModels> {
    // Background data are exact, so only the rank cap applies to them.
    let exact = PencilOptions { trunc_tol: PencilOptions::default().trunc_tol, ..opts.pencil };
    // The background resolves only so many directions; a measured model
    // of higher rank could never be matched.
    let cap = pencil_rank(sys, opts.pencil)?.min(pencil_rank(sys0, exact)?);
    let full = pencil_poles_with(sys, PencilOptions { rank: Some(cap), ..opts.pencil })?;
    let p1 = full.len();
    for pairs in (p1.saturating_sub(MATCH_SEARCH).max(1)..=p1).rev() {
        let rom = if pairs == p1 {
            Some(full.clone())
        } else {
            with_pairs(sys.len(), pairs, opts.pencil, |o| pencil_poles_with(sys, o), |r| r.len())
        };
        let Some(rom) = rom else { continue };
        let background = with_pairs(
            sys0.len(),
            pairs,
            exact,
            |o| background_ritz_basis(op0, sys0, o, opts.lanczos),
            |b| b.0.len(),
        );
        if let Some((_, tri0, basis)) = background {
            if pairs != p1 {
                log::warn!("measured pencil reduced from {p1} to {pairs} pairs to match the background");
            }
            match lanczos_with(&rom, opts.lanczos) {
                Ok(tri) => return Ok(MatchedModels { rom, tri, tri0, basis }),
                Err(e) => log::warn!("measured model with {pairs} pairs rejected: {e}"),
            }
        }
    }
    Err(LslError::BasisMismatch(format!("no background pencil matches the measured {p1} pairs")))
}

/// Sweep samples nearest to `count` log-spaced targets in `[lo, hi]`,
/// without repeats.
fn sample_log_spaced(data: &FrequencySweep, lo: f64, hi: f64, count: usize) -> Vec<(f64, C64)> {
    let mut idx: Vec<usize> = (0..data.len()).filter(|k| data.omegas[*k] >= lo && data.omegas[*k] <= hi).collect();
    idx.sort_by(|a, b| data.omegas[*a].partial_cmp(&data.omegas[*b]).unwrap());
    if idx.is_empty() || !(hi > lo) {
        return vec![];
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for w in log_frequencies(lo, hi, count) {
        let pos = idx.partition_point(|k| data.omegas[*k] < w);
        let best = [pos.saturating_sub(1), pos.min(idx.len() - 1)]
            .into_iter()
            .min_by(|a, b| {
                (data.omegas[idx[*a]] - w).abs().partial_cmp(&(data.omegas[idx[*b]] - w).abs()).unwrap()
            })
            .expect("two candidates");
        if chosen.last() != Some(&idx[best]) {
            chosen.push(idx[best]);
        }
    }
    chosen.into_iter().map(|k| (data.omegas[k], data.d[k])).collect()
}

fn linearize_adaptive(
    data: &FrequencySweep,
    op0: &DiscreteOperator,
    opts: &InvertOptions,
    fit_cache: &mut Option<crate::adaptrom::AdaptiveFit>,
) -> Result<Linearization> {
    let stage = |e: LslError| e.in_stage("adaptive inversion");
    if fit_cache.is_none() {
        let fit = match opts.node_selection {
            NodeSelection::Greedy => adaptive_fit(data, opts.omega_min, opts.omega_max, opts.adaptive_tol, opts.max_nodes),
            NodeSelection::Uniform(count) => sampled_fit(data, opts.omega_min, opts.omega_max, count),
        }
        .map_err(stage)?;
        if !fit.converged && opts.node_selection == NodeSelection::Greedy {
            log::warn!("adaptive fit stopped at {} nodes with error {:.3e}", fit.system.len(), fit.final_error);
        }
        *fit_cache = Some(fit);
    }
    let fit = fit_cache.as_ref().expect("filled above");
    let nodes = fit.system.nodes.clone();
    let sw0 = sweep(op0, &nodes).map_err(stage)?;
    let sys0 = loewner_matrices(&nodes, &sw0.d, sw0.dprime.as_ref().expect("sweep returns derivatives")).map_err(stage)?;
    let MatchedModels { rom, tri, tri0, basis } = matched_models(&fit.system, op0, &sys0, opts).map_err(stage)?;
    let cap = opts.band_fraction * opts.omega_max;
    let picks: Vec<(f64, C64)> = match opts.adaptive_frequencies {
        FrequencyChoice::Nodes => (0..nodes.len())
            .filter(|k| nodes[*k] > 0.0 && nodes[*k] <= cap)
            .map(|k| (nodes[k], fit.system.b[k]))
            .collect(),
        FrequencyChoice::LogSpaced => {
            let count = if opts.n_freq == 0 { 2 * rom.len() } else { opts.n_freq };
            let lo = (0.5 * rom.lambdas[0].im.abs()).max(opts.omega_min);
            sample_log_spaced(data, lo, cap, count)
        }
    };
    if picks.is_empty() {
        return Err(stage(LslError::InvalidParameter(format!("no inversion frequency below {cap}"))));
    }
    let mut frequencies = vec![];
    let mut delta_d = vec![];
    let mut background = vec![];
    let mut fields = vec![];
    let mut measured = vec![];
    for (w, d) in picks {
        let s = C64::new(0.0, w);
        let (d0, _) = crate::forward::transfer_function(op0, s).map_err(stage)?;
        let d_used = match (opts.mode, opts.lsl_data) {
            (InversionMode::Lsl, DataSource::Model) => rom.evaluate(s).map_err(stage)?,
            _ => d,
        };
        measured.push(d);
        delta_d.push(d_used - d0);
        let (p0, p) = fields_for(opts.mode, op0, &basis, &tri0, &tri, s).map_err(stage)?;
        frequencies.push(s);
        background.push(p0);
        fields.push(p);
    }
    Ok(Linearization {
        frequencies,
        delta_d,
        data: measured,
        background,
        fields,
        rom_pairs: rom.len(),
        adaptive: Some(AdaptiveSummary { nodes, converged: fit.converged, final_error: fit.final_error }),
    })
}

/// Adds quadrature-node updates to a medium by linear interpolation; the
/// impedance is re-integrated from its value at `T = 0`.
pub fn update_medium(medium: &MediumProfile, quad: &[f64], delta_r: &[f64], delta_kappa: &[f64]) -> Result<MediumProfile> {
    let grid = *medium.grid();
    let r: Vec<f64> = grid
        .primary_nodes()
        .iter()
        .zip(&medium.r)
        .map(|(t, r0)| (r0 + interp_linear(quad, delta_r, *t)).max(0.0))
        .collect();
    let kappa: Vec<f64> =
        grid.dual_nodes().iter().zip(&medium.kappa).map(|(t, k0)| k0 + interp_linear(quad, delta_kappa, *t)).collect();
    MediumProfile::from_loss_and_kappa(grid, r, kappa, medium.sigma_dual[0])
}

/// Runs the full pipeline: reduced model, internal fields, assembly and
/// regularized solve, optionally relinearized `outer_iterations` times.
pub fn invert(data: &InversionData, background: &MediumProfile, opts: &InvertOptions) -> Result<InversionReport> {
    if opts.quad_m == 0 || opts.n_grid < 4 {
        return Err(LslError::InvalidParameter("need quad_m >= 1 and n_grid >= 4".into()));
    }
    let grid = Grid1D::new(opts.n_grid)?;
    let mut medium = background.resample(grid)?;
    let quad = quadrature_nodes(opts.quad_m);
    let r_bg: Vec<f64> = quad.iter().map(|t| background.loss_at(*t)).collect();
    let k_bg: Vec<f64> = quad.iter().map(|t| background.kappa_at(*t)).collect();
    let mut total_r = vec![0.0; opts.quad_m];
    let mut total_k = vec![0.0; opts.quad_m];
    let mut fit_cache = None;
    let mut last = None;
    for pass in 0..=opts.outer_iterations {
        let op0 = assemble_operator(&medium, opts.n_grid)?;
        let lin = match (opts.rom_kind, data) {
            (RomKind::TruncatedMeasure, InversionData::Spectral(spec)) => linearize_tm(spec, &op0, opts)?,
            (RomKind::Adaptive, InversionData::Sweep(sw)) => linearize_adaptive(sw, &op0, opts, &mut fit_cache)?,
            (RomKind::TruncatedMeasure, _) => {
                return Err(LslError::InvalidParameter("the truncated measure needs spectral data".into()))
            }
            (RomKind::Adaptive, _) => return Err(LslError::InvalidParameter("the adaptive model needs a sweep".into())),
        };
        let mut sys = assemble_ls(&grid, &lin.background, &lin.fields, &lin.delta_d, opts.quad_m)?;
        let mut solve = opts.solve;
        let noise_norm = if opts.normalize_rows {
            let factors = sys.normalize_rows();
            factors.iter().zip(&lin.data).map(|(f, d)| (f * d.norm()).powi(2)).sum::<f64>().sqrt()
        } else {
            lin.data.iter().map(|d| d.norm_sqr()).sum::<f64>().sqrt()
        };
        if let Some(level) = opts.noise_level {
            solve.regularization = Regularization::Discrepancy { noise_norm: level * noise_norm, tau: opts.tau };
        }
        let r_now: Vec<f64> = quad.iter().map(|t| medium.loss_at(*t)).collect();
        let sol = solve_minnorm(&sys, &r_now, solve)?;
        log::info!(
            "pass {pass}: {} frequencies, residual {:.3e}, lambda {:.3e}, {} clipped",
            lin.frequencies.len(),
            sol.residual_norm,
            sol.lambda,
            sol.clipped
        );
        for m in 0..opts.quad_m {
            total_r[m] += sol.delta_r[m];
            total_k[m] += sol.delta_kappa[m];
        }
        if pass < opts.outer_iterations {
            medium = update_medium(&medium, &quad, &sol.delta_r, &sol.delta_kappa)?;
        }
        last = Some((lin, sol));
    }
    let (lin, sol) = last.expect("at least one pass");
    let r: Vec<f64> = (0..opts.quad_m).map(|m| (r_bg[m] + total_r[m]).max(0.0)).collect();
    let kappa: Vec<f64> = (0..opts.quad_m).map(|m| k_bg[m] + total_k[m]).collect();
    Ok(InversionReport {
        mode: opts.mode,
        rom_kind: opts.rom_kind,
        quad_nodes: quad,
        delta_r: total_r,
        delta_kappa: total_k,
        r,
        kappa,
        frequencies: lin.frequencies,
        rom_pairs: lin.rom_pairs,
        lambda: sol.lambda,
        residual_norm: sol.residual_norm,
        clipped: sol.clipped,
        adaptive: lin.adaptive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_frequency, transfer_function};

    /// A medium whose grid samples are exact interpolants of quadrature
    /// values, so the discrete identity holds with no quadrature error.
    fn planted(grid: Grid1D, quad_m: usize) -> (MediumProfile, Vec<f64>, Vec<f64>) {
        let quad = quadrature_nodes(quad_m);
        let dr: Vec<f64> = quad.iter().map(|t| 1.5 * (-((t - 0.4) / 0.15).powi(2)).exp()).collect();
        let dk: Vec<f64> = quad.iter().map(|t| 0.8 * (t - 0.55) * (-((t - 0.55) / 0.12).powi(2)).exp() * 10.0).collect();
        let r: Vec<f64> = grid.primary_nodes().iter().map(|t| interp_linear(&quad, &dr, *t)).collect();
        let mut kappa: Vec<f64> = grid.dual_nodes().iter().map(|t| interp_linear(&quad, &dk, *t)).collect();
        kappa[0] = 0.0;
        (MediumProfile::from_loss_and_kappa(grid, r, kappa, 1.0).unwrap(), dr, dk)
    }

    fn direct_system(n: usize, quad_m: usize, omegas: &[f64]) -> (LSLSystem, Vec<f64>, Vec<f64>) {
        let grid = Grid1D::new(n).unwrap();
        let (med, dr, dk) = planted(grid, quad_m);
        let op = assemble_operator(&med, n).unwrap();
        let op0 = assemble_operator(&MediumProfile::background(grid), n).unwrap();
        let mut bg = vec![];
        let mut fl = vec![];
        let mut dd = vec![];
        for w in omegas {
            let s = C64::new(0.0, *w);
            bg.push(solve_frequency(&op0, s).unwrap());
            fl.push(solve_frequency(&op, s).unwrap());
            dd.push(transfer_function(&op, s).unwrap().0 - transfer_function(&op0, s).unwrap().0);
        }
        (assemble_ls(&grid, &bg, &fl, &dd, quad_m).unwrap(), dr, dk)
    }

    #[test]
    fn quadrature_weights_are_positive_and_sum_to_one() {
        let (sys, _, _) = direct_system(100, 37, &[1.0, 2.0]);
        assert!(sys.quad_weights.iter().all(|w| *w > 0.0));
        assert!((sys.quad_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(sys.g.nrows(), 4);
        assert_eq!(sys.g.ncols(), 74);
    }

    #[test]
    fn exact_fields_reproduce_the_data() {
        let (sys, dr, dk) = direct_system(300, 60, &[0.7, 2.0, 5.0, 11.0, 23.0]);
        let x: Vec<f64> = dr.iter().chain(&dk).copied().collect();
        let gx = sys.apply(&x);
        let num: f64 = gx.iter().zip(&sys.rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = sys.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(num <= 1e-6 * den, "{num} vs {den}");
    }

    #[test]
    fn noiseless_well_posed_recovery() {
        let omegas: Vec<f64> = (0..40).map(|k| 0.5 + 1.5 * k as f64).collect();
        let (sys, dr, dk) = direct_system(200, 20, &omegas);
        let sol = solve_minnorm(
            &sys,
            &[0.0; 20],
            SolveOptions { regularization: Regularization::Fixed(1e-6), nonneg_loss: false, ..Default::default() },
        )
        .unwrap();
        let err = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / b.iter().map(|y| y * y).sum::<f64>().sqrt()
        };
        assert!(err(&sol.delta_kappa, &dk) <= 1e-3, "{}", err(&sol.delta_kappa, &dk));
        assert!(err(&sol.delta_r, &dr) <= 1e-3, "{}", err(&sol.delta_r, &dr));
    }

    #[test]
    fn zero_data_gives_zero_update() {
        let (mut sys, _, _) = direct_system(100, 10, &[1.0, 3.0, 6.0]);
        sys.rhs.iter_mut().for_each(|v| *v = 0.0);
        let sol = solve_minnorm(&sys, &[0.0; 10], SolveOptions::default()).unwrap();
        assert!(sol.delta_r.iter().chain(&sol.delta_kappa).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn clipping_keeps_loss_non_negative() {
        let (mut sys, _, _) = direct_system(100, 10, &[1.0, 3.0, 6.0]);
        sys.rhs.iter_mut().for_each(|v| *v = -*v);
        for passes in [0, 5] {
            let opts = SolveOptions { projected_passes: passes, ..Default::default() };
            let sol = solve_minnorm(&sys, &[0.0; 10], opts).unwrap();
            assert!(sol.delta_r.iter().all(|v| *v >= 0.0));
            assert!(sol.clipped > 0);
        }
    }

    #[test]
    fn discrepancy_matches_target_residual() {
        let omegas: Vec<f64> = (0..30).map(|k| 0.5 + 2.0 * k as f64).collect();
        let (sys, _, _) = direct_system(150, 30, &omegas);
        let rhs_norm = sys.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = 0.05 * rhs_norm;
        let opts = SolveOptions {
            regularization: Regularization::Discrepancy { noise_norm: target, tau: 1.0 },
            nonneg_loss: false,
            ..Default::default()
        };
        let sol = solve_minnorm(&sys, &[0.0; 30], opts).unwrap();
        assert!((sol.residual_norm - target).abs() <= 1e-3 * target, "{} vs {target}", sol.residual_norm);
        let smaller = solve_minnorm(
            &sys,
            &[0.0; 30],
            SolveOptions { regularization: Regularization::Fixed(sol.lambda * 0.1), nonneg_loss: false, ..Default::default() },
        )
        .unwrap();
        assert!(smaller.residual_norm < sol.residual_norm);
    }

    #[test]
    fn bad_inputs() {
        let grid = Grid1D::new(10).unwrap();
        assert!(matches!(assemble_ls(&grid, &[], &[], &[], 5), Err(LslError::Dimension(_))));
        let (sys, _, _) = direct_system(50, 5, &[1.0]);
        assert!(solve_minnorm(&sys, &[0.0; 4], SolveOptions::default()).is_err());
        let neg = SolveOptions { regularization: Regularization::Fixed(-1.0), ..Default::default() };
        assert!(matches!(solve_minnorm(&sys, &[0.0; 5], neg), Err(LslError::InvalidParameter(_))));
    }
}
