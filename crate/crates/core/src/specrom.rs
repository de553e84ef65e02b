//! Pole-residue reduced-order models and the truncated-measure selection.

use num_complex::Complex64 as C64;

use crate::error::{LslError, Result};
use crate::forward::{pole_residue_sum, SpectralData};

/// How a pole-residue model was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomOrigin {
    TruncatedMeasure,
    AdaptivePencil,
}

impl RomOrigin {
    pub fn tag(self) -> &'static str {
        match self {
            RomOrigin::TruncatedMeasure => "truncated-measure",
            RomOrigin::AdaptivePencil => "adaptive-pencil",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "truncated-measure" => Ok(RomOrigin::TruncatedMeasure),
            "adaptive-pencil" => Ok(RomOrigin::AdaptivePencil),
            other => Err(LslError::Parse(format!("unknown ROM origin `{other}`"))),
        }
    }
}

/// `D_ROM(s) = Σ_j y_j/(s+λ_j) + conj(y_j)/(s+conj(λ_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleResidueROM {
    pub lambdas: Vec<C64>,
    pub residues: Vec<C64>,
    pub source_norm_sq: f64,
    pub origin: RomOrigin,
}

impl PoleResidueROM {
    /// Validates the pair list and recomputes `source_norm_sq = Σ 2 Re y_j`.
    pub fn new(lambdas: Vec<C64>, residues: Vec<C64>, origin: RomOrigin) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(LslError::InvalidParameter("a ROM needs at least one pole pair".into()));
        }
        if lambdas.len() != residues.len() {
            return Err(LslError::Dimension(format!(
                "{} poles but {} residues",
                lambdas.len(),
                residues.len()
            )));
        }
        if lambdas.iter().chain(&residues).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LslError::InvalidParameter("non-finite pole or residue".into()));
        }
        let source_norm_sq: f64 = residues.iter().map(|y| 2.0 * y.re).sum();
        if !(source_norm_sq > 0.0) {
            return Err(LslError::InvalidParameter(format!(
                "source norm squared must be positive, got {source_norm_sq:e}"
            )));
        }
        Ok(Self { lambdas, residues, source_norm_sq, origin })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Largest retained pole (by the sort order this is the last one).
    pub fn largest_pole(&self) -> C64 {
        *self.lambdas.last().expect("ROM is never empty")
    }

    /// Conjugate-pair rational sum at `s`.
    pub fn evaluate(&self, s: C64) -> Result<C64> {
        for l in &self.lambdas {
            let tol = 1e-14 * l.norm().max(1.0);
            if (s + l).norm() <= tol || (s + l.conj()).norm() <= tol {
                return Err(LslError::PoleProximity { re: s.re, im: s.im, rcond: 0.0 });
            }
        }
        Ok(pole_residue_sum(&self.lambdas, &self.residues, s))
    }

    /// Derivative of the rational sum with respect to `s`.
    pub fn derivative(&self, s: C64) -> C64 {
        self.lambdas
            .iter()
            .zip(&self.residues)
            .map(|(l, y)| -y / ((s + l) * (s + l)) - y.conj() / ((s + l.conj()) * (s + l.conj())))
            .sum()
    }
}

/// Keeps the `n` pairs closest to the origin.
pub fn truncated_measure(spec: &SpectralData, n: usize) -> Result<PoleResidueROM> {
    if n == 0 {
        return Err(LslError::InvalidParameter("n must be at least 1".into()));
    }
    if n > spec.len() {
        return Err(LslError::Range { requested: n, available: spec.len() });
    }
    PoleResidueROM::new(spec.lambdas[..n].to_vec(), spec.residues[..n].to_vec(), RomOrigin::TruncatedMeasure)
}

/// Evaluates the ROM transfer function.
pub fn evaluate_rom(rom: &PoleResidueROM, s: C64) -> Result<C64> {
    rom.evaluate(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_operator, eigendecompose, transfer_function};
    use crate::medium::{GaussianMedium, Grid1D, MediumProfile};

    fn single() -> PoleResidueROM {
        PoleResidueROM::new(vec![C64::new(0.0, 1.0)], vec![C64::new(1.0, 0.0)], RomOrigin::TruncatedMeasure).unwrap()
    }

    #[test]
    fn hand_evaluation() {
        let v = evaluate_rom(&single(), C64::new(1.0, 0.0)).unwrap();
        assert!((v - 1.0).norm() < 1e-15);
        assert_eq!(single().source_norm_sq, 2.0);
    }

    #[test]
    fn real_axis_gives_real_values_and_conjugate_symmetry() {
        let rom = PoleResidueROM::new(
            vec![C64::new(0.3, 1.2), C64::new(0.1, 4.0)],
            vec![C64::new(0.9, 0.2), C64::new(1.1, -0.3)],
            RomOrigin::AdaptivePencil,
        )
        .unwrap();
        assert!(rom.evaluate(C64::new(2.5, 0.0)).unwrap().im.abs() < 1e-15);
        let s = C64::new(0.4, 2.2);
        let a = rom.evaluate(s).unwrap();
        let b = rom.evaluate(s.conj()).unwrap();
        assert!((a - b.conj()).norm() < 1e-15);
        let big = 1e8;
        let v = rom.evaluate(C64::new(big, 0.0)).unwrap();
        assert!((v.re * big / rom.source_norm_sq - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pole_evaluation_is_an_error() {
        assert!(matches!(single().evaluate(C64::new(0.0, -1.0)), Err(LslError::PoleProximity { .. })));
        assert!(matches!(single().evaluate(C64::new(0.0, 1.0)), Err(LslError::PoleProximity { .. })));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PoleResidueROM::new(vec![], vec![], RomOrigin::TruncatedMeasure).is_err());
        assert!(PoleResidueROM::new(vec![C64::new(0.0, 1.0)], vec![C64::new(-1.0, 0.0)], RomOrigin::TruncatedMeasure).is_err());
    }

    #[test]
    fn full_truncation_reproduces_discrete_data() {
        let grid = Grid1D::new(120).unwrap();
        let m = GaussianMedium::standard().sample(grid).unwrap();
        let op = assemble_operator(&m, 120).unwrap();
        let spec = eigendecompose(&op).unwrap();
        let rom = truncated_measure(&spec, spec.len()).unwrap();
        for k in 0..20 {
            let s = C64::new(0.05 * k as f64, 0.5 + 3.0 * k as f64);
            let (d, _) = transfer_function(&op, s).unwrap();
            assert!((rom.evaluate(s).unwrap() - d).norm() <= 1e-10 * d.norm());
        }
        assert!(matches!(truncated_measure(&spec, spec.len() + 1), Err(LslError::Range { .. })));
    }

    #[test]
    fn background_truncations() {
        let grid = Grid1D::new(1000).unwrap();
        let op = assemble_operator(&MediumProfile::background(grid), 1000).unwrap();
        let spec = eigendecompose(&op).unwrap();
        let rom10 = truncated_measure(&spec, 10).unwrap();
        assert!((rom10.largest_pole() - C64::new(0.0, 9.5 * std::f64::consts::PI)).norm() < 1e-2);
        let rom1 = truncated_measure(&spec, 1).unwrap();
        assert!((rom1.residues[0] - 1.0).norm() < 1e-4);
    }
}
