mod common;

use common::convolve;
use nalgebra::DMatrix;
use proptest::prelude::*;
use topostat::complex::random_complex;
use topostat::estimation::sample_covariance;
use topostat::signals::{self, apply_filter, white_noise, FilterSpec, SpectralModel};
use topostat::spectral::{dirac, eigendecompose};
use topostat::{SpectralBasis, TopologicalOperator};

fn normalized(seed: u64) -> (TopologicalOperator, SpectralBasis) {
    let c = random_complex(10, 0.5, 0.5, seed).unwrap();
    let op = dirac(&c).unwrap();
    let b = eigendecompose(&op).unwrap();
    let s = b.scale();
    (op.scaled(1.0 / s).unwrap(), b.scaled(1.0 / s).unwrap())
}

fn poly(t: &DMatrix<f64>, coeffs: &[f64]) -> DMatrix<f64> {
    let n = t.nrows();
    coeffs.iter().rev().fold(DMatrix::zeros(n, n), |acc, &c| acc * t + DMatrix::identity(n, n) * c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn polynomial_filter_matches_horner(seed in 0u64..1000, h in prop::collection::vec(-1.0f64..1.0, 1..5)) {
        let (op, b) = normalized(seed);
        let x = white_noise(b.dim(), 3, seed);
        let y = apply_filter(&b, &FilterSpec::Polynomial(h.clone()), &x).unwrap();
        let direct = poly(op.matrix(), &h) * x.data();
        prop_assert!((y.data() - direct).amax() <= 1e-8);
    }

    #[test]
    fn ma_covariance_is_self_convolution(seed in 0u64..1000, beta in prop::collection::vec(-1.0f64..1.0, 1..4)) {
        let (op, b) = normalized(seed);
        let (c, _) = signals::true_cov_psd(&b, &FilterSpec::Polynomial(beta.clone())).unwrap();
        let direct = poly(op.matrix(), &convolve(&beta, &beta));
        prop_assert!((c - direct).amax() <= 1e-8);
    }

    #[test]
    fn ar_filter_inverts_the_recursion(seed in 0u64..1000, a in prop::collection::vec(-0.3f64..0.3, 1..3)) {
        let (op, b) = normalized(seed);
        let x = white_noise(b.dim(), 2, seed);
        let s = apply_filter(&b, &FilterSpec::AutoRegressive(a.clone()), &x).unwrap();
        let mut h = vec![1.0];
        h.extend(a.iter().map(|v| -v));
        let back = poly(op.matrix(), &h) * s.data();
        prop_assert!((back - x.data()).amax() <= 1e-8);
    }

    #[test]
    fn generation_is_seed_deterministic(seed in any::<u64>()) {
        let (_, b) = normalized(3);
        let f = FilterSpec::Polynomial(vec![1.0, 0.2]);
        prop_assert_eq!(signals::generate(&b, &f, 4, seed).unwrap(), signals::generate(&b, &f, 4, seed).unwrap());
    }
}

#[test]
fn white_noise_columns_are_prefix_stable() {
    let a = white_noise(7, 3, 11);
    let b = white_noise(7, 8, 11);
    assert_eq!(a.data(), &b.data().columns(0, 3).into_owned());
}

#[test]
fn ensembles_are_empirically_zero_mean() {
    let (_, b) = normalized(5);
    let f = FilterSpec::Polynomial(vec![1.0, 0.5, 0.25]);
    let (c, _) = signals::true_cov_psd(&b, &f).unwrap();
    let m = 10_000;
    let mut good = 0;
    for seed in 0..20 {
        let s = signals::generate(&b, &f, m, seed).unwrap();
        let mean = s.data().column_mean();
        if mean.norm() < 0.05 * c.trace().sqrt() {
            good += 1;
        }
    }
    assert!(good >= 19, "{good}/20 seeds had a small column mean");
}

#[test]
fn spectral_covariance_is_nearly_diagonal() {
    let (_, b) = normalized(8);
    let m = 5000;
    for f in [
        FilterSpec::Polynomial(vec![0.1; 3]),
        FilterSpec::AutoRegressive(vec![0.2, 0.1]),
        FilterSpec::Spectral(SpectralModel::Exponential { theta1: 1.0 }),
        FilterSpec::Spectral(SpectralModel::Sigmoid { theta1: 2.0, theta2: -0.5 }),
    ] {
        let p = f.psd(&b).unwrap();
        let s = signals::generate(&b, &f, m, 1).unwrap();
        let st = topostat::SignalEnsemble::new(b.tft(s.data()).unwrap());
        let cov = sample_covariance(&st).matrix;
        let mut off = 0.0f64;
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                if i != j {
                    off = off.max(cov[(i, j)].abs());
                }
            }
        }
        assert!(off < 5.0 / (m as f64).sqrt() * p.max(), "{f:?}: {off}");
    }
}

#[test]
fn closed_form_responses() {
    let lam = [0.0, 0.5, 2.0];
    let cases: [(SpectralModel, fn(f64) -> f64); 3] = [
        (SpectralModel::LowPassRational { epsilon: 0.5 }, |l| 1.0 / (l * l + 0.5)),
        (SpectralModel::Exponential { theta1: 0.7 }, |l| (-0.7 * l).exp()),
        (SpectralModel::Sigmoid { theta1: 1.5, theta2: 0.2 }, |l| 1.0 / (1.0 + (-(1.5 * l + 0.2)).exp())),
    ];
    for (m, f) in cases {
        for l in lam {
            assert!((m.response(l) - f(l)).abs() < 1e-14);
            assert!((m.psd(l) - f(l) * f(l)).abs() < 1e-14);
        }
    }
    let g = SpectralModel::GaussianKernel { theta1: 0.3 };
    assert!((g.psd(2.0) - (-1.2f64).exp()).abs() < 1e-14);
    let lk = SpectralModel::LaplacianKernel { theta1: 0.5, theta2: 2.0 };
    assert!((lk.psd(2.0) - 0.25).abs() < 1e-14);
}

#[test]
fn singular_ar_is_rejected() {
    let (_, b) = normalized(2);
    // 1 - alpha * lambda vanishes at lambda = 1, the largest normalized eigenvalue
    let err = FilterSpec::AutoRegressive(vec![1.0]).psd(&b).unwrap_err();
    assert!(matches!(err, topostat::Error::SingularArResponse { .. }), "{err:?}");
}

#[test]
fn low_pass_gain_at_unit_frequency() {
    let m = SpectralModel::LowPassRational { epsilon: 1e-3 };
    assert!((m.response(1.0) - 1.0 / (1.0 + 1e-3)).abs() < 1e-15);
}
