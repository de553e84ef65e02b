use num_complex::Complex64 as C64;
use proptest::prelude::*;

use lsl_core::forward::{assemble_operator, eigendecompose, transfer_function, DiscreteOperator};
use lsl_core::lanczos::{lanczos_with, tridiag_transfer, LanczosOptions};
use lsl_core::medium::{Gaussian, GaussianMedium, Grid1D};
use lsl_core::specrom::truncated_measure;

fn medium() -> impl Strategy<Value = GaussianMedium> {
    (0.0..0.5f64, 0.0..2.0f64, 0.2..0.8f64, 0.05..0.15f64, -0.5..1.0f64, 0.2..0.8f64).prop_map(
        |(offset, loss, lc, width, amp, ic)| GaussianMedium {
            loss_offset: offset,
            loss: Some(Gaussian { center: lc, width, amplitude: loss }),
            impedance: Some(Gaussian { center: ic, width, amplitude: amp }),
        },
    )
}

fn operator(m: &GaussianMedium, n: usize) -> DiscreteOperator {
    assemble_operator(&m.sample(Grid1D::new(n).unwrap()).unwrap(), n).unwrap()
}

fn vector(len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| C64::new(a, b)), len)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn operator_is_symmetric_in_the_weighted_form(m in medium(), x in vector(80), y in vector(80)) {
        let op = operator(&m, 40);
        let a = op.bilinear(&x, &op.apply(&y));
        let b = op.bilinear(&op.apply(&x), &y);
        prop_assert!((a - b).norm() <= 1e-10 * (1.0 + a.norm()), "{} vs {}", a, b);
    }

    #[test]
    fn transfer_function_is_conjugate_symmetric(m in medium(), w in 0.1..40.0f64, sigma in 0.1..5.0f64) {
        let op = operator(&m, 60);
        let (plus, _) = transfer_function(&op, C64::new(0.0, w)).unwrap();
        let (minus, _) = transfer_function(&op, C64::new(0.0, -w)).unwrap();
        prop_assert!((plus - minus.conj()).norm() <= 1e-10 * plus.norm());
        let (real, _) = transfer_function(&op, C64::new(sigma, 0.0)).unwrap();
        prop_assert!(real.im.abs() <= 1e-10 * real.norm());
        prop_assert!(real.re > 0.0);
    }

    #[test]
    fn tridiagonal_realization_preserves_the_transfer_function(m in medium(), n in 2usize..12, w in 0.1..30.0f64) {
        let op = operator(&m, 80);
        let rom = truncated_measure(&eigendecompose(&op).unwrap(), n).unwrap();
        let tri = lanczos_with(&rom, LanczosOptions::default()).unwrap();
        prop_assert!((tri.bnorm * tri.bnorm - rom.source_norm_sq).abs() <= 1e-10 * rom.source_norm_sq);
        let s = C64::new(0.05, w);
        let a = tridiag_transfer(&tri, s).unwrap();
        let b = rom.evaluate(s).unwrap();
        prop_assert!((a - b).norm() <= 1e-8 * b.norm(), "{} vs {}", a, b);
    }
}
