//! CSV readers and writers for the exchange files of each stage.
//!
//! Scalar metadata travels in leading `# key=value; key=value` comment
//! lines, which the readers skip when parsing rows.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use num_complex::Complex64 as C64;

use crate::adaptrom::GreedyStep;
use crate::error::{LslError, Result};
use crate::fdembed::{EmbeddedMedium, EmbeddingCoefficients, TMGrid};
use crate::forward::{FieldVector, FrequencySweep, SpectralData};
use crate::lanczos::TridiagROM;
use crate::lslinv::InversionReport;
use crate::medium::Grid1D;
use crate::specrom::{PoleResidueROM, RomOrigin};

fn write_meta<W: Write>(out: &mut W, pairs: &[(&str, String)]) -> Result<()> {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(out, "# {}", body.join("; "))?;
    Ok(())
}

/// Splits the input into metadata (from `#` lines) and the remaining CSV text.
fn split_meta<R: Read>(input: R) -> Result<(BTreeMap<String, String>, String)> {
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        if let Some(rest) = line.trim_start().strip_prefix('#') {
            for item in rest.split(';') {
                if let Some((k, v)) = item.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        } else if !line.trim().is_empty() {
            body.push_str(&line);
            body.push('\n');
        }
    }
    Ok((meta, body))
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    meta.get(key)
        .ok_or_else(|| LslError::Parse(format!("missing metadata `{key}`")))?
        .parse()
        .map_err(|e| LslError::Parse(format!("metadata `{key}`: {e}")))
}

/// Parsed rows of a headed CSV, addressed by column name.
struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(body: &str, required: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        for name in required {
            if !headers.iter().any(|h| h == name) {
                return Err(LslError::Parse(format!("CSV is missing column `{name}`")));
            }
        }
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn get(&self, row: usize, name: &str) -> Result<Option<f64>> {
        let Some(c) = self.column(name) else { return Ok(None) };
        match self.rows[row].get(c).map(|s| s.as_str()) {
            None | Some("") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| LslError::Parse(format!("row {row}, `{name}`: {e}"))),
        }
    }

    fn need(&self, row: usize, name: &str) -> Result<f64> {
        self.get(row, name)?.ok_or_else(|| LslError::Parse(format!("row {row} has no `{name}`")))
    }
}

pub fn write_sweep<W: Write>(sweep: &FrequencySweep, mut out: W) -> Result<()> {
    write_meta(&mut out, &[("noise_level", sweep.noise_level.to_string())])?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["omega", "re_D", "im_D", "re_Dprime", "im_Dprime"])?;
    for (k, omega) in sweep.omegas.iter().enumerate() {
        let d = sweep.d[k];
        let (pr, pi) = match &sweep.dprime {
            Some(dp) => (dp[k].re.to_string(), dp[k].im.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([omega.to_string(), d.re.to_string(), d.im.to_string(), pr, pi])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sweep; derivatives are kept only when every row carries them.
pub fn read_sweep<R: Read>(input: R) -> Result<FrequencySweep> {
    let (meta, body) = split_meta(input)?;
    let t = Table::parse(&body, &["omega", "re_D", "im_D"])?;
    let mut omegas = Vec::with_capacity(t.rows.len());
    let mut d = Vec::with_capacity(t.rows.len());
    let mut dp = Vec::with_capacity(t.rows.len());
    for k in 0..t.rows.len() {
        omegas.push(t.need(k, "omega")?);
        d.push(C64::new(t.need(k, "re_D")?, t.need(k, "im_D")?));
        dp.push(match (t.get(k, "re_Dprime")?, t.get(k, "im_Dprime")?) {
            (Some(a), Some(b)) => Some(C64::new(a, b)),
            _ => None,
        });
    }
    if omegas.is_empty() {
        return Err(LslError::Parse("sweep file has no rows".into()));
    }
    let dprime = dp.iter().all(Option::is_some).then(|| dp.into_iter().flatten().collect());
    let noise_level = if meta.contains_key("noise_level") { meta_f64(&meta, "noise_level")? } else { 0.0 };
    Ok(FrequencySweep { omegas, d, dprime, noise_level })
}

fn write_pairs<W: Write>(lambdas: &[C64], residues: &[C64], meta: &[(&str, String)], mut out: W) -> Result<()> {
    write_meta(&mut out, meta)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["re_lambda", "im_lambda", "re_y", "im_y"])?;
    for (l, y) in lambdas.iter().zip(residues) {
        w.write_record([l.re.to_string(), l.im.to_string(), y.re.to_string(), y.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_pairs<R: Read>(input: R) -> Result<(BTreeMap<String, String>, Vec<C64>, Vec<C64>)> {
    let (meta, body) = split_meta(input)?;
    let t = Table::parse(&body, &["re_lambda", "im_lambda", "re_y", "im_y"])?;
    let mut lambdas = Vec::with_capacity(t.rows.len());
    let mut residues = Vec::with_capacity(t.rows.len());
    for k in 0..t.rows.len() {
        lambdas.push(C64::new(t.need(k, "re_lambda")?, t.need(k, "im_lambda")?));
        residues.push(C64::new(t.need(k, "re_y")?, t.need(k, "im_y")?));
    }
    Ok((meta, lambdas, residues))
}

pub fn write_spectral<W: Write>(spec: &SpectralData, out: W) -> Result<()> {
    let meta = [
        ("source_norm_sq", spec.source_norm_sq.to_string()),
        ("dropped_real", spec.dropped_real.to_string()),
    ];
    write_pairs(&spec.lambdas, &spec.residues, &meta, out)
}

pub fn read_spectral<R: Read>(input: R) -> Result<SpectralData> {
    let (meta, lambdas, residues) = read_pairs(input)?;
    let source_norm_sq = match meta.get("source_norm_sq") {
        Some(_) => meta_f64(&meta, "source_norm_sq")?,
        None => residues.iter().map(|y| 2.0 * y.re).sum(),
    };
    let dropped_real = meta.get("dropped_real").and_then(|v| v.parse().ok()).unwrap_or(0);
    Ok(SpectralData { lambdas, residues, source_norm_sq, dropped_real })
}

pub fn write_rom<W: Write>(rom: &PoleResidueROM, out: W) -> Result<()> {
    let meta = [("source_norm_sq", rom.source_norm_sq.to_string()), ("origin", rom.origin.tag().to_string())];
    write_pairs(&rom.lambdas, &rom.residues, &meta, out)
}

pub fn read_rom<R: Read>(input: R) -> Result<PoleResidueROM> {
    let (meta, lambdas, residues) = read_pairs(input)?;
    let origin = match meta.get("origin") {
        Some(tag) => RomOrigin::from_tag(tag)?,
        None => RomOrigin::TruncatedMeasure,
    };
    PoleResidueROM::new(lambdas, residues, origin)
}

pub fn write_history<W: Write>(history: &[GreedyStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "omega", "max_error"])?;
    for step in history {
        w.write_record([step.iteration.to_string(), step.omega.to_string(), step.max_error.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `j, alpha_j, im_beta_j`; the last row has no off-diagonal entry.
pub fn write_tridiag<W: Write>(tri: &TridiagROM, mut out: W) -> Result<()> {
    write_meta(&mut out, &[("bnorm", tri.bnorm.to_string())])?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "alpha_j", "im_beta_j"])?;
    for (j, a) in tri.alpha.iter().enumerate() {
        let b = tri.beta.get(j).map(|b| b.to_string()).unwrap_or_default();
        w.write_record([(j + 1).to_string(), a.to_string(), b])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tridiagonal dump back into coefficient-only form (no basis).
pub fn read_tridiag<R: Read>(input: R) -> Result<TridiagROM> {
    let (meta, body) = split_meta(input)?;
    let t = Table::parse(&body, &["j", "alpha_j", "im_beta_j"])?;
    let mut alpha = Vec::with_capacity(t.rows.len());
    let mut beta = Vec::with_capacity(t.rows.len());
    for k in 0..t.rows.len() {
        alpha.push(t.need(k, "alpha_j")?);
        if let Some(b) = t.get(k, "im_beta_j")? {
            beta.push(b);
        }
    }
    if alpha.is_empty() || beta.len() + 1 != alpha.len() {
        return Err(LslError::Parse(format!("{} diagonal but {} off-diagonal entries", alpha.len(), beta.len())));
    }
    TridiagROM::from_coefficients(alpha, beta, meta_f64(&meta, "bnorm")?)
}

/// Field dump on the interleaved node sequence: primary rows carry `w`,
/// dual rows carry `ŵ`, the other pair of columns is left empty.
pub fn write_fields<W: Write>(grid: &Grid1D, fields: &[(FieldVector, &str)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "re_w", "im_w", "re_what", "im_what", "provenance", "s"])?;
    let p = grid.primary_nodes();
    let d = grid.dual_nodes();
    for (f, tag) in fields {
        let s = format!("{}{:+}i", f.s.re, f.s.im);
        for j in 0..grid.len() {
            let (a, b) = (f.w[j].re.to_string(), f.w[j].im.to_string());
            w.write_record([p[j].to_string(), a, b, String::new(), String::new(), tag.to_string(), s.clone()])?;
            let (a, b) = (f.w_hat[j].re.to_string(), f.w_hat[j].im.to_string());
            w.write_record([d[j + 1].to_string(), String::new(), String::new(), a, b, tag.to_string(), s.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Result file `T, r_true, r_recovered, kappa_true, kappa_recovered` at the
/// quadrature nodes; the truth columns are dropped when `truth` is `None`.
pub fn write_result<W: Write>(
    report: &InversionReport,
    truth: Option<(&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64)>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match truth {
        Some(_) => w.write_record(["T", "r_true", "r_recovered", "kappa_true", "kappa_recovered"])?,
        None => w.write_record(["T", "r_recovered", "kappa_recovered"])?,
    }
    for (k, t) in report.quad_nodes.iter().enumerate() {
        let (r, kappa) = (report.r[k].to_string(), report.kappa[k].to_string());
        match truth {
            Some((rt, kt)) => w.write_record([t.to_string(), rt(*t).to_string(), r, kt(*t).to_string(), kappa])?,
            None => w.write_record([t.to_string(), r, kappa])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_embedding<W: Write>(
    coeffs: &EmbeddingCoefficients,
    grid0: &TMGrid,
    medium: &EmbeddedMedium,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "gamma", "gamma_hat", "r", "r_hat", "h", "h_hat", "sigma", "sigma_hat"])?;
    for j in 0..coeffs.len() {
        w.write_record([
            (j + 1).to_string(),
            coeffs.gamma[j].to_string(),
            coeffs.gamma_hat[j].to_string(),
            coeffs.r_primary[j].to_string(),
            coeffs.r_dual[j].to_string(),
            grid0.h[j].to_string(),
            grid0.h_hat[j].to_string(),
            medium.sigma[j].to_string(),
            medium.sigma_hat[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_operator, eigendecompose, sweep};
    use crate::lanczos::lanczos_tridiag;
    use crate::medium::{GaussianMedium, MediumProfile};
    use crate::specrom::truncated_measure;

    #[test]
    fn sweep_round_trip_keeps_bits() {
        let grid = Grid1D::new(40).unwrap();
        let op = assemble_operator(&MediumProfile::background(grid), 40).unwrap();
        let sw = sweep(&op, &[0.5, 1.0, 2.5]).unwrap();
        let mut buf = vec![];
        write_sweep(&sw, &mut buf).unwrap();
        let back = read_sweep(buf.as_slice()).unwrap();
        assert_eq!(back.omegas, sw.omegas);
        assert_eq!(back.d, sw.d);
        assert_eq!(back.dprime, sw.dprime);
    }

    #[test]
    fn sweep_without_derivatives() {
        let text = "omega,re_D,im_D\n1,0,1.5\n2,0.1,0.2\n";
        let sw = read_sweep(text.as_bytes()).unwrap();
        assert!(sw.dprime.is_none());
        assert_eq!(sw.noise_level, 0.0);
        assert!(matches!(read_sweep("omega,re_D\n1,0\n".as_bytes()), Err(LslError::Parse(_))));
    }

    #[test]
    fn spectral_and_tridiag_round_trip() {
        let grid = Grid1D::new(60).unwrap();
        let m = GaussianMedium::standard().sample(grid).unwrap();
        let spec = eigendecompose(&assemble_operator(&m, 60).unwrap()).unwrap();
        let mut buf = vec![];
        write_spectral(&spec, &mut buf).unwrap();
        let back = read_spectral(buf.as_slice()).unwrap();
        assert_eq!(back.lambdas, spec.lambdas);
        assert_eq!(back.source_norm_sq, spec.source_norm_sq);

        let rom = truncated_measure(&spec, 6).unwrap();
        let mut buf = vec![];
        write_rom(&rom, &mut buf).unwrap();
        assert_eq!(read_rom(buf.as_slice()).unwrap(), rom);

        let tri = lanczos_tridiag(&rom, 1e-13).unwrap();
        let mut buf = vec![];
        write_tridiag(&tri, &mut buf).unwrap();
        let back = read_tridiag(buf.as_slice()).unwrap();
        assert_eq!(back.alpha, tri.alpha);
        assert_eq!(back.beta, tri.beta);
        assert_eq!(back.bnorm, tri.bnorm);
    }

    #[test]
    fn tridiag_needs_bnorm() {
        let text = "j,alpha_j,im_beta_j\n1,0.1,0.5\n2,0.2,\n";
        assert!(matches!(read_tridiag(text.as_bytes()), Err(LslError::Parse(_))));
    }
}
