//! Loss, impedance and potential profiles on the unit travel-time interval.
//!
//! The staggered grid carries `N` primary nodes `T_j = (j - 1/2) h` and
//! `N + 1` dual nodes `T̂_j = j h`. Loss lives on primary nodes, the potential
//! `κ = d/dT ln σ^{-1/2}` on dual nodes, and the impedance on both.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LslError, Result};

/// Uniform staggered grid on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    n: usize,
    h: f64,
}

impl Grid1D {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LslError::InvalidParameter("grid needs at least one cell".into()));
        }
        Ok(Self { n, h: 1.0 / n as f64 })
    }

    /// Number of primary nodes.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Primary node `T_{j+1}` for zero-based `j`.
    pub fn primary(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }

    /// Dual node `T̂_j`, `j = 0..=N`.
    pub fn dual(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn primary_nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.primary(j)).collect()
    }

    pub fn dual_nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.dual(j)).collect()
    }

    pub fn nodes(&self, which: Nodes) -> Vec<f64> {
        match which {
            Nodes::Primary => self.primary_nodes(),
            Nodes::Dual => self.dual_nodes(),
        }
    }
}

/// Selects one of the two staggered node families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nodes {
    Primary,
    Dual,
}

/// Gaussian bump `amplitude * exp(-(T - center)^2 / (2 width^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl Gaussian {
    pub fn new(center: f64, width: f64, amplitude: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(LslError::InvalidParameter(format!(
                "Gaussian width must be positive, got {width}"
            )));
        }
        if !center.is_finite() || !amplitude.is_finite() {
            return Err(LslError::InvalidParameter("Gaussian parameters must be finite".into()));
        }
        Ok(Self { center, width, amplitude })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let z = (t - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }

    /// Derivative with respect to `T`.
    pub fn derivative(&self, t: f64) -> f64 {
        -(t - self.center) / (self.width * self.width) * self.eval(t)
    }
}

/// Samples a Gaussian bump on one node family of `grid`.
pub fn make_gaussian_profile(
    center: f64,
    width: f64,
    amplitude: f64,
    grid: &Grid1D,
    nodes: Nodes,
) -> Result<Vec<f64>> {
    let g = Gaussian::new(center, width, amplitude)?;
    Ok(grid.nodes(nodes).into_iter().map(|t| g.eval(t)).collect())
}

/// Potential `κ = -1/2 d/dT ln σ` on the dual nodes from dual-node impedance
/// samples (`N + 1` values). Central differences inside, second-order
/// one-sided stencils at both ends.
pub fn kappa_from_sigma(sigma: &[f64], grid: &Grid1D) -> Result<Vec<f64>> {
    let n = grid.len();
    if sigma.len() != n + 1 {
        return Err(LslError::Dimension(format!(
            "expected {} dual-node impedance samples, got {}",
            n + 1,
            sigma.len()
        )));
    }
    if let Some((j, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s > 0.0) || !s.is_finite()) {
        return Err(LslError::Domain(format!("impedance must be positive and finite, sigma[{j}] = {s}")));
    }
    let h = grid.step();
    let f: Vec<f64> = sigma.iter().map(|s| -0.5 * s.ln()).collect();
    let mut kappa = vec![0.0; n + 1];
    if n == 1 {
        let d = (f[1] - f[0]) / h;
        return Ok(vec![d, d]);
    }
    kappa[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    for j in 1..n {
        kappa[j] = (f[j + 1] - f[j - 1]) / (2.0 * h);
    }
    kappa[n] = (3.0 * f[n] - 4.0 * f[n - 1] + f[n - 2]) / (2.0 * h);
    Ok(kappa)
}

/// Impedance from the potential, `σ(T) = σ₀ exp(-2 ∫₀ᵀ κ)`, integrated with
/// the cumulative trapezoid rule. Returns `(primary, dual)` samples.
pub fn sigma_from_kappa(kappa: &[f64], sigma0: f64, grid: &Grid1D) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = grid.len();
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return Err(LslError::InvalidParameter(format!("sigma0 must be positive, got {sigma0}")));
    }
    if kappa.len() != n + 1 {
        return Err(LslError::Dimension(format!(
            "expected {} dual-node potential samples, got {}",
            n + 1,
            kappa.len()
        )));
    }
    let h = grid.step();
    let mut dual = Vec::with_capacity(n + 1);
    let mut primary = Vec::with_capacity(n);
    let mut integral = 0.0;
    dual.push(sigma0);
    for j in 0..n {
        let mid = 0.5 * (kappa[j] + kappa[j + 1]);
        let half = integral + 0.25 * h * (kappa[j] + mid);
        primary.push(sigma0 * (-2.0 * half).exp());
        integral += 0.5 * h * (kappa[j] + kappa[j + 1]);
        dual.push(sigma0 * (-2.0 * integral).exp());
    }
    Ok((primary, dual))
}

/// Piecewise-linear interpolation with constant extrapolation.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    match xs.len() {
        0 => 0.0,
        1 => ys[0],
        len => {
            if x <= xs[0] {
                return ys[0];
            }
            if x >= xs[len - 1] {
                return ys[len - 1];
            }
            let k = xs.partition_point(|&v| v <= x).clamp(1, len - 1);
            let (x0, x1) = (xs[k - 1], xs[k]);
            let t = (x - x0) / (x1 - x0);
            ys[k - 1] + t * (ys[k] - ys[k - 1])
        }
    }
}

/// Sampled medium on a staggered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumProfile {
    grid: Grid1D,
    /// Loss at primary nodes.
    pub r: Vec<f64>,
    /// Impedance at primary nodes.
    pub sigma: Vec<f64>,
    /// Impedance at dual nodes `0..=N`.
    pub sigma_dual: Vec<f64>,
    /// Potential at dual nodes `0..=N`.
    pub kappa: Vec<f64>,
}

impl MediumProfile {
    /// `σ ≡ 1`, `κ ≡ 0`, `r ≡ 0`.
    pub fn background(grid: Grid1D) -> Self {
        let n = grid.len();
        Self {
            grid,
            r: vec![0.0; n],
            sigma: vec![1.0; n],
            sigma_dual: vec![1.0; n + 1],
            kappa: vec![0.0; n + 1],
        }
    }

    /// Builds a medium from primary-node loss and dual-node potential; the
    /// impedance is integrated from `sigma0` at `T = 0`.
    pub fn from_loss_and_kappa(grid: Grid1D, r: Vec<f64>, kappa: Vec<f64>, sigma0: f64) -> Result<Self> {
        let (sigma, sigma_dual) = sigma_from_kappa(&kappa, sigma0, &grid)?;
        let m = Self { grid, r, sigma, sigma_dual, kappa };
        m.validate()?;
        Ok(m)
    }

    /// Builds a medium from loss and impedance functions sampled on the grid.
    /// The potential is the central-difference log-derivative of the
    /// dual-node impedance.
    pub fn from_functions(grid: Grid1D, r: impl Fn(f64) -> f64, sigma: impl Fn(f64) -> f64) -> Result<Self> {
        let r: Vec<f64> = grid.primary_nodes().into_iter().map(&r).collect();
        let sigma_p: Vec<f64> = grid.primary_nodes().into_iter().map(&sigma).collect();
        let sigma_dual: Vec<f64> = grid.dual_nodes().into_iter().map(&sigma).collect();
        let kappa = kappa_from_sigma(&sigma_dual, &grid)?;
        let m = Self { grid, r, sigma: sigma_p, sigma_dual, kappa };
        m.validate()?;
        Ok(m)
    }

    /// Like [`MediumProfile::from_functions`] but with an analytic potential.
    pub fn from_loss_sigma_kappa(
        grid: Grid1D,
        r: impl Fn(f64) -> f64,
        sigma: impl Fn(f64) -> f64,
        kappa: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let m = Self {
            grid,
            r: grid.primary_nodes().into_iter().map(&r).collect(),
            sigma: grid.primary_nodes().into_iter().map(&sigma).collect(),
            sigma_dual: grid.dual_nodes().into_iter().map(&sigma).collect(),
            kappa: grid.dual_nodes().into_iter().map(&kappa).collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if self.r.len() != n || self.sigma.len() != n || self.sigma_dual.len() != n + 1 || self.kappa.len() != n + 1 {
            return Err(LslError::Dimension("medium samples do not match the grid".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.r) && finite(&self.sigma) && finite(&self.sigma_dual) && finite(&self.kappa)) {
            return Err(LslError::Domain("medium samples must be finite".into()));
        }
        if self.sigma.iter().chain(&self.sigma_dual).any(|s| *s <= 0.0) {
            return Err(LslError::Domain("impedance must be positive".into()));
        }
        if self.r.iter().any(|r| *r < 0.0) {
            return Err(LslError::Domain("loss must be non-negative".into()));
        }
        Ok(())
    }

    /// Linear resampling onto another grid.
    pub fn resample(&self, grid: Grid1D) -> Result<Self> {
        let p_old = self.grid.primary_nodes();
        let d_old = self.grid.dual_nodes();
        let on = |xs: &[f64], ys: &[f64], nodes: Vec<f64>| -> Vec<f64> {
            nodes.into_iter().map(|t| interp_linear(xs, ys, t)).collect()
        };
        let m = Self {
            grid,
            r: on(&p_old, &self.r, grid.primary_nodes()),
            sigma: on(&p_old, &self.sigma, grid.primary_nodes()),
            sigma_dual: on(&d_old, &self.sigma_dual, grid.dual_nodes()),
            kappa: on(&d_old, &self.kappa, grid.dual_nodes()),
        };
        m.validate()?;
        Ok(m)
    }

    /// Loss evaluated anywhere in `[0, 1]` by linear interpolation.
    pub fn loss_at(&self, t: f64) -> f64 {
        interp_linear(&self.grid.primary_nodes(), &self.r, t)
    }

    /// Potential evaluated anywhere in `[0, 1]` by linear interpolation.
    pub fn kappa_at(&self, t: f64) -> f64 {
        interp_linear(&self.grid.dual_nodes(), &self.kappa, t)
    }

    /// Writes `T, r, sigma, kappa` rows on the interleaved node sequence
    /// `0, h/2, h, ..., 1`. Values native to a node family are exact, the
    /// others are linearly interpolated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["T", "r", "sigma", "kappa"])?;
        let n = self.grid.len();
        let p = self.grid.primary_nodes();
        let d = self.grid.dual_nodes();
        for j in 0..=n {
            let t = d[j];
            w.write_record(&[
                t.to_string(),
                interp_linear(&p, &self.r, t).to_string(),
                self.sigma_dual[j].to_string(),
                self.kappa[j].to_string(),
            ])?;
            if j < n {
                let t = p[j];
                w.write_record(&[
                    t.to_string(),
                    self.r[j].to_string(),
                    self.sigma[j].to_string(),
                    interp_linear(&d, &self.kappa, t).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a profile CSV and resamples it onto `grid`.
    pub fn read_csv<R: Read>(input: R, grid: Grid1D) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| LslError::Parse(format!("profile CSV is missing column `{name}`")))
        };
        let (ct, cr, cs, ck) = (col("T")?, col("r")?, col("sigma")?, col("kappa")?);
        let (mut ts, mut rs, mut ss, mut ks) = (vec![], vec![], vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec?;
            let get = |c: usize| -> Result<f64> {
                rec.get(c)
                    .ok_or_else(|| LslError::Parse("short row".into()))?
                    .parse::<f64>()
                    .map_err(|e| LslError::Parse(e.to_string()))
            };
            ts.push(get(ct)?);
            rs.push(get(cr)?);
            ss.push(get(cs)?);
            ks.push(get(ck)?);
        }
        if ts.is_empty() {
            return Err(LslError::Parse("profile CSV has no rows".into()));
        }
        if ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LslError::Parse("profile rows must be strictly increasing in T".into()));
        }
        let on = |ys: &[f64], nodes: Vec<f64>| -> Vec<f64> {
            nodes.into_iter().map(|t| interp_linear(&ts, ys, t)).collect()
        };
        let m = Self {
            grid,
            r: on(&rs, grid.primary_nodes()),
            sigma: on(&ss, grid.primary_nodes()),
            sigma_dual: on(&ss, grid.dual_nodes()),
            kappa: on(&ks, grid.dual_nodes()),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Gaussian loss and impedance bumps on top of a constant background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMedium {
    /// Constant loss added everywhere.
    #[serde(default)]
    pub loss_offset: f64,
    pub loss: Option<Gaussian>,
    /// `σ = 1 + bump`.
    pub impedance: Option<Gaussian>,
}

impl GaussianMedium {
    /// The default test medium used by the examples and the acceptance
    /// suite. Its parameters are a choice, not a reproduction of any
    /// particular published figure.
    pub fn standard() -> Self {
        Self {
            loss_offset: 0.0,
            loss: Some(Gaussian { center: 0.35, width: 0.08, amplitude: 2.0 }),
            impedance: Some(Gaussian { center: 0.55, width: 0.07, amplitude: 1.0 }),
        }
    }

    pub fn sigma_at(&self, t: f64) -> f64 {
        1.0 + self.impedance.map_or(0.0, |g| g.eval(t))
    }

    pub fn loss_at(&self, t: f64) -> f64 {
        self.loss_offset + self.loss.map_or(0.0, |g| g.eval(t))
    }

    /// Analytic `-1/2 σ'/σ`.
    pub fn kappa_at(&self, t: f64) -> f64 {
        match self.impedance {
            Some(g) => -0.5 * g.derivative(t) / self.sigma_at(t),
            None => 0.0,
        }
    }

    pub fn sample(&self, grid: Grid1D) -> Result<MediumProfile> {
        MediumProfile::from_loss_sigma_kappa(
            grid,
            |t| self.loss_at(t),
            |t| self.sigma_at(t),
            |t| self.kappa_at(t),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_values() {
        let grid = Grid1D::new(1000).unwrap();
        let g = make_gaussian_profile(0.5, 0.1, 1.0, &grid, Nodes::Dual).unwrap();
        assert!((g[500] - 1.0).abs() < 1e-15);
        assert!((g[600] - (-0.5f64).exp()).abs() < 1e-12);
        assert!((g[600] - 0.6065).abs() < 1e-4);

        let zero = make_gaussian_profile(0.3, 0.2, 0.0, &grid, Nodes::Primary).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));

        let wide = make_gaussian_profile(0.5, 1e8, 2.5, &grid, Nodes::Primary).unwrap();
        assert!(wide.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn gaussian_rejects_bad_width() {
        let grid = Grid1D::new(10).unwrap();
        for w in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                make_gaussian_profile(0.5, w, 1.0, &grid, Nodes::Dual),
                Err(LslError::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn kappa_of_constant_and_exponential_impedance() {
        let grid = Grid1D::new(64).unwrap();
        let k = kappa_from_sigma(&vec![1.0; 65], &grid).unwrap();
        assert!(k.iter().all(|v| *v == 0.0));

        let s: Vec<f64> = grid.dual_nodes().iter().map(|t| (-0.4 * t).exp()).collect();
        let k = kappa_from_sigma(&s, &grid).unwrap();
        assert!(k.iter().all(|v| (v - 0.2).abs() < 1e-12), "{k:?}");
    }

    #[test]
    fn kappa_rejects_nonpositive_impedance() {
        let grid = Grid1D::new(4).unwrap();
        assert!(matches!(
            kappa_from_sigma(&[1.0, 1.0, 0.0, 1.0, 1.0], &grid),
            Err(LslError::Domain(_))
        ));
    }

    #[test]
    fn kappa_of_gaussian_bump_is_antisymmetric() {
        let grid = Grid1D::new(1000).unwrap();
        let s: Vec<f64> = make_gaussian_profile(0.5, 0.1, 1.0, &grid, Nodes::Dual)
            .unwrap()
            .into_iter()
            .map(|g| g + 1.0)
            .collect();
        let k = kappa_from_sigma(&s, &grid).unwrap();
        assert!(k[500].abs() < 1e-12);
        for j in 1..400 {
            assert!((k[500 + j] + k[500 - j]).abs() < 1e-10);
        }
        // impedance rises before the center, so κ = -½ (ln σ)' is negative there
        assert!(k[450] < 0.0 && k[550] > 0.0);
    }

    #[test]
    fn sigma_of_constant_kappa() {
        let grid = Grid1D::new(100).unwrap();
        let (p, d) = sigma_from_kappa(&vec![0.0; 101], 1.0, &grid).unwrap();
        assert!(p.iter().chain(&d).all(|v| *v == 1.0));
        let (_, d) = sigma_from_kappa(&vec![0.2; 101], 1.0, &grid).unwrap();
        assert!((d[100] - (-0.4f64).exp()).abs() < 1e-12);
        assert!((d[100] - 0.6703).abs() < 1e-4);
        assert!(sigma_from_kappa(&vec![0.0; 101], 0.0, &grid).is_err());
    }

    fn round_trip_error(n: usize) -> f64 {
        let grid = Grid1D::new(n).unwrap();
        let kappa = make_gaussian_profile(0.5, 0.1, 1.0, &grid, Nodes::Dual).unwrap();
        let (_, sd) = sigma_from_kappa(&kappa, 1.0, &grid).unwrap();
        let back = kappa_from_sigma(&sd, &grid).unwrap();
        kappa.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn kappa_sigma_round_trip_is_second_order() {
        let e1000 = round_trip_error(1000);
        assert!(e1000 <= 1e-4, "{e1000}");
        let e200 = round_trip_error(200);
        let e400 = round_trip_error(400);
        let ratio = e200 / e400;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn csv_round_trip() {
        let grid = Grid1D::new(32).unwrap();
        let m = GaussianMedium::standard().sample(grid).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = MediumProfile::read_csv(buf.as_slice(), grid).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_rejects_unsorted_rows() {
        let text = "T,r,sigma,kappa\n0.5,0,1,0\n0.2,0,1,0\n";
        let grid = Grid1D::new(4).unwrap();
        assert!(MediumProfile::read_csv(text.as_bytes(), grid).is_err());
    }

    #[test]
    fn resample_keeps_values_finite() {
        let m = GaussianMedium::standard().sample(Grid1D::new(50).unwrap()).unwrap();
        let r = m.resample(Grid1D::new(173).unwrap()).unwrap();
        assert!(r.r.iter().chain(&r.kappa).all(|v| v.is_finite()));
    }
}
