//! Subcommand implementations. Each stages its outputs in memory and
//! returns them together with manifest details.

use std::fs::File;

use lsl_core::adaptrom::{adaptive_fit, pencil_poles_with, sampled_fit, AdaptiveFit, PencilOptions};
use lsl_core::fdembed::{embed_medium, extract_coefficients, tm_grid};
use lsl_core::forward::{
    add_noise, assemble_operator, eigendecompose, solve_frequency, sweep, uniform_omegas, FrequencySweep, SpectralData,
};
use lsl_core::internal::{background_basis, born_internal, lsl_internal, weighted_distance, weighted_norm};
use lsl_core::io;
use lsl_core::lanczos::{lanczos_with, LanczosOptions};
use lsl_core::lslinv::{
    invert, InversionData, InversionMode, InvertOptions, NodeSelection, Regularization, RomKind, SolveOptions,
};
use lsl_core::medium::{GaussianMedium, Grid1D};
use lsl_core::specrom::truncated_measure;
use lsl_core::C64;
use serde_json::{json, Value};

use crate::config::{ModeCfg, RegularizationCfg, RomKindCfg, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy)]
pub enum Which {
    Forward,
    Rom,
    Invert,
    Embed,
    InternalFields,
}

impl Which {
    pub fn name(self) -> &'static str {
        match self {
            Which::Forward => "forward",
            Which::Rom => "rom",
            Which::Invert => "invert",
            Which::Embed => "embed",
            Which::InternalFields => "internal-fields",
        }
    }
}

/// Output files (name, contents) and manifest details of one command.
pub struct Staged {
    pub files: Vec<(String, Vec<u8>)>,
    pub details: Value,
}

impl Staged {
    fn new(details: Value) -> Self {
        Self { files: vec![], details }
    }

    fn add(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> lsl_core::Result<()>) -> Result<(), CliError> {
        let mut buf = vec![];
        write(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }
}

pub fn execute(which: Which, cfg: &RunConfig) -> Result<Staged, CliError> {
    match which {
        Which::Forward => forward(cfg),
        Which::Rom => rom(cfg),
        Which::Invert => run_invert(cfg),
        Which::Embed => embed(cfg),
        Which::InternalFields => internal_fields(cfg),
    }
}

/// Uniform samples plus the band's geometric mean, where the greedy fit starts.
fn sweep_omegas(cfg: &RunConfig) -> Vec<f64> {
    let mut om = uniform_omegas(cfg.omega_min, cfg.omega_max, cfg.n_omegas);
    let mid = (cfg.omega_min * cfg.omega_max).sqrt();
    if !om.iter().any(|w| (w - mid).abs() <= 1e-12 * mid) {
        om.push(mid);
        om.sort_by(|a, b| a.partial_cmp(b).expect("finite frequencies"));
    }
    om
}

fn synthetic_sweep(cfg: &RunConfig) -> Result<FrequencySweep, CliError> {
    let grid = Grid1D::new(cfg.n_grid)?;
    let op = assemble_operator(&cfg.medium.profile(grid)?, cfg.n_grid)?;
    let clean = sweep(&op, &sweep_omegas(cfg))?;
    Ok(match cfg.noise {
        Some(n) => add_noise(&clean, n.level, n.seed)?,
        None => clean,
    })
}

fn synthetic_spectral(cfg: &RunConfig) -> Result<SpectralData, CliError> {
    let grid = Grid1D::new(cfg.n_grid)?;
    Ok(eigendecompose(&assemble_operator(&cfg.medium.profile(grid)?, cfg.n_grid)?)?)
}

fn load_sweep(cfg: &RunConfig) -> Result<FrequencySweep, CliError> {
    match cfg.data.as_ref().and_then(|d| d.sweep.as_ref()) {
        Some(path) => Ok(io::read_sweep(File::open(path)?)?),
        None => synthetic_sweep(cfg),
    }
}

fn load_spectral(cfg: &RunConfig) -> Result<SpectralData, CliError> {
    match cfg.data.as_ref().and_then(|d| d.spectral.as_ref()) {
        Some(path) => Ok(io::read_spectral(File::open(path)?)?),
        None => synthetic_spectral(cfg),
    }
}

fn pencil(cfg: &RunConfig) -> PencilOptions {
    PencilOptions { trunc_tol: cfg.trunc_tol, ..PencilOptions::default() }
}

fn fit(cfg: &RunConfig, data: &FrequencySweep) -> Result<AdaptiveFit, CliError> {
    Ok(match cfg.sample_nodes {
        Some(count) => sampled_fit(data, cfg.omega_min, cfg.omega_max, count)?,
        None => adaptive_fit(data, cfg.omega_min, cfg.omega_max, cfg.adaptive_tol, cfg.max_nodes)?,
    })
}

fn c64_json(z: C64) -> Value {
    json!([z.re, z.im])
}

fn forward(cfg: &RunConfig) -> Result<Staged, CliError> {
    let grid = Grid1D::new(cfg.n_grid)?;
    let medium = cfg.medium.profile(grid)?;
    let op = assemble_operator(&medium, cfg.n_grid)?;
    let spec = eigendecompose(&op)?;
    let clean = sweep(&op, &sweep_omegas(cfg))?;
    let data = match cfg.noise {
        Some(n) => add_noise(&clean, n.level, n.seed)?,
        None => clean,
    };
    let mut staged = Staged::new(json!({
        "samples": data.len(),
        "pole_pairs": spec.len(),
        "dropped_real_poles": spec.dropped_real,
        "first_pole": spec.lambdas.first().map(|l| c64_json(*l)),
        "source_norm_sq": spec.source_norm_sq,
    }));
    staged.add("medium.csv", |b| medium.write_csv(b))?;
    staged.add("sweep.csv", |b| io::write_sweep(&data, b))?;
    staged.add("spectral.csv", |b| io::write_spectral(&spec, b))?;
    Ok(staged)
}

fn rom(cfg: &RunConfig) -> Result<Staged, CliError> {
    let lanczos = LanczosOptions::default();
    match cfg.rom_kind {
        RomKindCfg::Tm => {
            let spec = load_spectral(cfg)?;
            let rom = truncated_measure(&spec, cfg.n_pairs)?;
            let tri = lanczos_with(&rom, lanczos)?;
            let mut staged = Staged::new(json!({
                "rom_kind": "tm",
                "pairs": rom.len(),
                "orthogonality_error": tri.orthogonality_error(),
            }));
            staged.add("rom.csv", |b| io::write_rom(&rom, b))?;
            staged.add("tridiag.csv", |b| io::write_tridiag(&tri, b))?;
            Ok(staged)
        }
        RomKindCfg::Adaptive => {
            let data = load_sweep(cfg)?;
            let fit = fit(cfg, &data)?;
            let rom = pencil_poles_with(&fit.system, pencil(cfg))?;
            let tri = lanczos_with(&rom, lanczos)?;
            let positive: Vec<f64> = fit.system.nodes.iter().copied().filter(|w| *w > 0.0).collect();
            let mut staged = Staged::new(json!({
                "rom_kind": "adaptive",
                "first_node": positive.first(),
                "node_count": positive.len(),
                "converged": fit.converged,
                "final_error": if fit.final_error.is_finite() { json!(fit.final_error) } else { Value::Null },
                "derivative_estimated": fit.derivative_estimated,
                "pairs": rom.len(),
            }));
            staged.add("rom.csv", |b| io::write_rom(&rom, b))?;
            staged.add("tridiag.csv", |b| io::write_tridiag(&tri, b))?;
            staged.add("history.csv", |b| io::write_history(&fit.history, b))?;
            Ok(staged)
        }
    }
}

fn invert_options(cfg: &RunConfig, mode: InversionMode) -> InvertOptions {
    let defaults = InvertOptions::default();
    let (regularization, noise_level, tau) = match (cfg.regularization, cfg.noise) {
        (Some(RegularizationCfg::Relative(e)), _) => (Regularization::Relative(e), None, 1.0),
        (Some(RegularizationCfg::Fixed(l)), _) => (Regularization::Fixed(l), None, 1.0),
        (Some(RegularizationCfg::Discrepancy { tau }), Some(n)) => (defaults.solve.regularization, Some(n.level), tau),
        (None, Some(n)) if n.level > 0.0 => (defaults.solve.regularization, Some(n.level), 1.0),
        _ => (defaults.solve.regularization, None, 1.0),
    };
    InvertOptions {
        mode,
        rom_kind: match cfg.rom_kind {
            RomKindCfg::Tm => RomKind::TruncatedMeasure,
            RomKindCfg::Adaptive => RomKind::Adaptive,
        },
        n_grid: cfg.inversion_grid,
        n_pairs: cfg.n_pairs,
        omega_min: cfg.omega_min,
        omega_max: cfg.omega_max,
        adaptive_tol: cfg.adaptive_tol,
        max_nodes: cfg.max_nodes,
        node_selection: cfg.sample_nodes.map_or(NodeSelection::Greedy, NodeSelection::Uniform),
        quad_m: cfg.quad_m,
        solve: SolveOptions { regularization, ..defaults.solve },
        noise_level,
        tau,
        pencil: pencil(cfg),
        ..defaults
    }
}

fn run_invert(cfg: &RunConfig) -> Result<Staged, CliError> {
    let data = match cfg.rom_kind {
        RomKindCfg::Tm => InversionData::Spectral(load_spectral(cfg)?),
        RomKindCfg::Adaptive => InversionData::Sweep(load_sweep(cfg)?),
    };
    let background = cfg.background.profile(Grid1D::new(cfg.inversion_grid)?)?;
    let modes = match cfg.mode {
        ModeCfg::Lsl => vec![InversionMode::Lsl],
        ModeCfg::Born => vec![InversionMode::Born],
        ModeCfg::Both => vec![InversionMode::Born, InversionMode::Lsl],
    };
    // Truth columns are available only for analytic media on a
    // background-relative comparison.
    let truth: Option<GaussianMedium> = cfg.medium.truth().filter(|_| cfg.data.is_none());
    let mut runs = serde_json::Map::new();
    let mut files = vec![];
    for mode in modes {
        let report = invert(&data, &background, &invert_options(cfg, mode))?;
        let mut entry = json!({
            "rom_pairs": report.rom_pairs,
            "lambda": report.lambda,
            "residual_norm": report.residual_norm,
            "clipped": report.clipped,
            "frequencies": report.frequencies.iter().map(|s| s.im).collect::<Vec<_>>(),
        });
        if let Some(ad) = &report.adaptive {
            let positive: Vec<f64> = ad.nodes.iter().copied().filter(|w| *w > 0.0).collect();
            entry["first_node"] = json!(positive.first());
            entry["node_count"] = json!(positive.len());
            entry["converged"] = json!(ad.converged);
        }
        let mut buf = vec![];
        match &truth {
            Some(t) => {
                entry["kappa_error"] = json!(report.kappa_error(|x| t.kappa_at(x), 0.8));
                entry["loss_error"] = json!(report.loss_error(|x| t.loss_at(x), 0.8));
                let (r, k) = (|x: f64| t.loss_at(x), |x: f64| t.kappa_at(x));
                io::write_result(&report, Some((&r, &k)), &mut buf)?;
            }
            None => io::write_result(&report, None, &mut buf)?,
        }
        let name = format!("result_{}.csv", mode.tag());
        runs.insert(mode.tag().to_string(), entry);
        files.push((name, buf));
    }
    let mut plot = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 'T'\n");
    for (name, _) in &files {
        let (r, k) = if truth.is_some() { (3, 5) } else { (2, 3) };
        plot.push_str(&format!("plot '{name}' using 1:{r} with lines, '' using 1:{k} with lines\npause -1\n"));
    }
    let mut staged = Staged::new(Value::Object(runs));
    staged.files = files;
    staged.files.push(("plot_result.gp".into(), plot.into_bytes()));
    Ok(staged)
}

fn embed(cfg: &RunConfig) -> Result<Staged, CliError> {
    let path = cfg.tridiag.as_ref().ok_or_else(|| CliError::Config("embed needs `tridiag` in the configuration".into()))?;
    let tri = io::read_tridiag(File::open(path)?)?;
    let grid = Grid1D::new(cfg.n_grid)?;
    let op0 = assemble_operator(&cfg.background.profile(grid)?, cfg.n_grid)?;
    let rom0 = truncated_measure(&eigendecompose(&op0)?, tri.pairs())?;
    let tri0 = lanczos_with(&rom0, LanczosOptions::default())?;
    let grid0 = tm_grid(&extract_coefficients(&tri0)?)?;
    let coeffs = extract_coefficients(&tri)?;
    let medium = embed_medium(&coeffs, &grid0)?;
    let mut staged = Staged::new(json!({
        "pairs": tri.pairs(),
        "tm_grid_length": grid0.length(),
        "negative_duals": medium.negative_duals,
    }));
    staged.add("embedding.csv", |b| io::write_embedding(&coeffs, &grid0, &medium, b))?;
    Ok(staged)
}

fn internal_fields(cfg: &RunConfig) -> Result<Staged, CliError> {
    let grid = Grid1D::new(cfg.n_grid)?;
    let op = assemble_operator(&cfg.medium.profile(grid)?, cfg.n_grid)?;
    let op0 = assemble_operator(&cfg.background.profile(grid)?, cfg.n_grid)?;
    let lanczos = LanczosOptions::default();
    let rom = truncated_measure(&eigendecompose(&op)?, cfg.n_pairs)?;
    let rom0 = truncated_measure(&eigendecompose(&op0)?, cfg.n_pairs)?;
    let tri = lanczos_with(&rom, lanczos)?;
    let tri0 = lanczos_with(&rom0, lanczos)?;
    let basis = background_basis(&op0, &rom0, &tri0)?;
    let mut fields = vec![];
    let mut errors = vec![];
    for w in &cfg.internal_omegas {
        let s = C64::new(0.0, *w);
        let lsl = lsl_internal(&basis, &tri, s)?;
        let born = born_internal(&op0, s)?;
        let direct = solve_frequency(&op, s)?;
        let scale = weighted_norm(&op0, &direct);
        errors.push(json!({
            "omega": w,
            "lsl_error": weighted_distance(&op0, &lsl, &direct) / scale,
            "born_error": weighted_distance(&op0, &born, &direct) / scale,
        }));
        fields.push((lsl, "lsl"));
        fields.push((born, "born"));
        fields.push((direct, "direct"));
    }
    let mut staged = Staged::new(json!({ "pairs": cfg.n_pairs, "relative_w_errors": errors }));
    staged.add("fields.csv", |b| io::write_fields(&grid, &fields, b))?;
    let plot = "set datafile separator ','\nset xlabel 'T'\n\
                plot 'fields.csv' using 1:(strcol(6) eq 'lsl' ? $2 : 1/0) title 'lsl', \
                '' using 1:(strcol(6) eq 'direct' ? $2 : 1/0) title 'direct'\npause -1\n";
    staged.files.push(("plot_fields.gp".into(), plot.as_bytes().to_vec()));
    Ok(staged)
}
