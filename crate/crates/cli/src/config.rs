//! JSON run configuration shared by all subcommands.
//!
//! Every field has a default, so `{}` is a valid configuration describing
//! the standard Gaussian test medium over `[0.1, 100]`. Relative paths are
//! resolved against the directory holding the configuration file.

use std::path::{Path, PathBuf};

use lsl_core::medium::{GaussianMedium, Grid1D, MediumProfile};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediumSpec {
    /// `σ ≡ 1`, `r ≡ 0`.
    Background,
    /// The standard Gaussian test medium.
    Standard,
    Gaussian(GaussianMedium),
    /// Profile CSV with columns `T, r, sigma, kappa`.
    Csv(PathBuf),
}

impl MediumSpec {
    pub fn profile(&self, grid: Grid1D) -> Result<MediumProfile, CliError> {
        Ok(match self {
            MediumSpec::Background => MediumProfile::background(grid),
            MediumSpec::Standard => GaussianMedium::standard().sample(grid)?,
            MediumSpec::Gaussian(g) => g.sample(grid)?,
            MediumSpec::Csv(path) => {
                let file = std::fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                MediumProfile::read_csv(file, grid)?
            }
        })
    }

    /// Analytic loss and potential when the medium is given by formulas.
    pub fn truth(&self) -> Option<GaussianMedium> {
        match self {
            MediumSpec::Background => Some(GaussianMedium { loss_offset: 0.0, loss: None, impedance: None }),
            MediumSpec::Standard => Some(GaussianMedium::standard()),
            MediumSpec::Gaussian(g) => Some(*g),
            MediumSpec::Csv(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RomKindCfg {
    Tm,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeCfg {
    Lsl,
    Born,
    /// Runs both on the same data.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCfg {
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationCfg {
    /// Tikhonov parameter as a fraction of the largest singular value.
    Relative(f64),
    Fixed(f64),
    /// Discrepancy principle against the configured noise level.
    Discrepancy { tau: f64 },
}

/// Input files replacing synthetic data generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub sweep: Option<PathBuf>,
    pub spectral: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub medium: MediumSpec,
    pub background: MediumSpec,
    /// Cells of the forward grid used to generate data.
    pub n_grid: usize,
    /// Cells of the background grid used by the inversion.
    pub inversion_grid: usize,
    /// Pole pairs of the truncated measure (and of `internal-fields`).
    pub n_pairs: usize,
    pub rom_kind: RomKindCfg,
    pub mode: ModeCfg,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Uniform sweep samples on `[omega_min, omega_max]`; the geometric
    /// mean of the band is always added.
    pub n_omegas: usize,
    pub noise: Option<NoiseCfg>,
    /// Defaults to the discrepancy principle with noise, relative otherwise.
    pub regularization: Option<RegularizationCfg>,
    pub quad_m: usize,
    pub adaptive_tol: f64,
    pub max_nodes: usize,
    /// Evenly spaced sweep samples used instead of greedy nodes (noisy data).
    pub sample_nodes: Option<usize>,
    /// Relative singular-value cut of the Loewner pencil.
    pub trunc_tol: f64,
    pub data: Option<DataFiles>,
    /// Tridiagonal dump consumed by `embed`.
    pub tridiag: Option<PathBuf>,
    /// Frequencies `ω` (with `s = iω`) for `internal-fields`.
    pub internal_omegas: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            medium: MediumSpec::Standard,
            background: MediumSpec::Background,
            n_grid: 1000,
            inversion_grid: 1000,
            n_pairs: 20,
            rom_kind: RomKindCfg::Tm,
            mode: ModeCfg::Lsl,
            omega_min: 0.1,
            omega_max: 100.0,
            n_omegas: 15000,
            noise: None,
            regularization: None,
            quad_m: 1000,
            adaptive_tol: 1e-10,
            max_nodes: 300,
            sample_nodes: None,
            trunc_tol: 1e-12,
            data: None,
            tridiag: None,
            internal_omegas: vec![4.0],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses JSON text, resolves relative paths against `base` and validates.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for m in [&mut self.medium, &mut self.background] {
            if let MediumSpec::Csv(p) = m {
                fix(p);
            }
        }
        if let Some(d) = &mut self.data {
            d.sweep.iter_mut().chain(d.spectral.iter_mut()).for_each(fix);
        }
        self.tridiag.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.n_grid < 4 || self.inversion_grid < 4 {
            return bad(format!("grids need at least 4 cells, got {} and {}", self.n_grid, self.inversion_grid));
        }
        if !(self.omega_min > 0.0 && self.omega_min < self.omega_max && self.omega_max.is_finite()) {
            return bad(format!("need 0 < omega_min < omega_max, got [{}, {}]", self.omega_min, self.omega_max));
        }
        if self.n_omegas < 3 {
            return bad("n_omegas must be at least 3".into());
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be positive".into());
        }
        if let Some(n) = self.noise {
            if !(n.level >= 0.0 && n.level.is_finite()) {
                return bad(format!("noise level must be >= 0, got {}", n.level));
            }
        }
        match self.regularization {
            Some(RegularizationCfg::Relative(v) | RegularizationCfg::Fixed(v)) if !(v >= 0.0 && v.is_finite()) => {
                return bad(format!("regularization must be >= 0, got {v}"));
            }
            Some(RegularizationCfg::Discrepancy { tau }) if !(tau > 0.0) => {
                return bad(format!("discrepancy tau must be positive, got {tau}"));
            }
            Some(RegularizationCfg::Discrepancy { .. }) if self.noise.is_none() => {
                return bad("the discrepancy principle needs a noise level".into());
            }
            _ => {}
        }
        if self.quad_m == 0 || self.quad_m > self.inversion_grid {
            return bad(format!("quad_m must be in 1..={}, got {}", self.inversion_grid, self.quad_m));
        }
        if !(self.adaptive_tol > 0.0) || self.max_nodes < 2 || self.max_nodes % 2 != 0 {
            return bad("adaptive_tol must be positive and max_nodes an even number >= 2".into());
        }
        if !(self.trunc_tol >= 0.0) {
            return bad(format!("trunc_tol must be >= 0, got {}", self.trunc_tol));
        }
        if self.internal_omegas.iter().any(|w| !w.is_finite()) {
            return bad("internal_omegas must be finite".into());
        }
        let mut files: Vec<&PathBuf> = vec![];
        for m in [&self.medium, &self.background] {
            if let MediumSpec::Csv(p) = m {
                files.push(p);
            }
        }
        if let Some(d) = &self.data {
            files.extend(d.sweep.iter().chain(d.spectral.iter()));
        }
        files.extend(self.tridiag.iter());
        if let Some(missing) = files.iter().find(|p| !p.is_file()) {
            return bad(format!("file not found: {}", missing.display()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let cfg = RunConfig::from_json("{}", Path::new("/tmp")).unwrap();
        assert_eq!(cfg.medium, MediumSpec::Standard);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/out"));
    }

    #[test]
    fn medium_variants_parse() {
        let cfg = RunConfig::from_json(
            r#"{"medium": {"gaussian": {"loss_offset": 0.5, "loss": null, "impedance": null}}, "background": "background"}"#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.medium.truth().unwrap().loss_offset, 0.5);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            r#"{"n_grid": 2}"#,
            r#"{"omega_min": 5, "omega_max": 1}"#,
            r#"{"noise": {"level": -0.1, "seed": 1}}"#,
            r#"{"quad_m": 2000}"#,
            r#"{"regularization": {"discrepancy": {"tau": 1.0}}}"#,
            r#"{"tridiag": "no/such/file.csv"}"#,
            r#"{"unknown_key": 1}"#,
            r#"{"n_grid": "many"}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text, Path::new(".")), Err(CliError::Config(_))), "{text}");
        }
    }
}
