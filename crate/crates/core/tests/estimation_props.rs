mod common;

use common::{ar_spatial_oracle, convolve, ma_spatial_oracle, max_abs_diff};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use topostat::complex::random_complex;
use topostat::estimation::{self, Domain, FitInput, KernelOptions, Psd, WirtingerOptions, AR1_GRID};
use topostat::signals::{self, white_noise, FilterSpec, ModelKind, SpectralModel};
use topostat::spectral::{dirac, eigendecompose, hodge_laplacian};
use topostat::{Method, SignalEnsemble, SpectralBasis, Subspace, TopologicalOperator};

fn normalized(seed: u64) -> (TopologicalOperator, SpectralBasis) {
    let c = random_complex(9, 0.55, 0.5, seed).unwrap();
    let op = dirac(&c).unwrap();
    let b = eigendecompose(&op).unwrap();
    let s = b.scale();
    (op.scaled(1.0 / s).unwrap(), b.scaled(1.0 / s).unwrap())
}

fn raw_ensemble(n: usize, m: usize, seed: u64) -> SignalEnsemble {
    // columns mixed by a random matrix, so the covariance is not stationary
    let a = white_noise(n, n, seed ^ 0xabc).into_data();
    SignalEnsemble::new(a * white_noise(n, m, seed).into_data())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn periodogram_equals_correlogram(seed in 0u64..500, m in 1usize..40) {
        let (_, b) = normalized(seed);
        let s = raw_ensemble(b.dim(), m, seed);
        let pg = estimation::periodogram(&b, &s).unwrap();
        let cg = estimation::correlogram(&b, &estimation::sample_covariance(&s).matrix).unwrap();
        prop_assert!(max_abs_diff(pg.values().as_slice(), cg.values().as_slice()) < 1e-9);
    }

    #[test]
    fn ma_fits_match_vectorized_oracle(seed in 0u64..500, order in 1usize..=3) {
        let (op, b) = normalized(seed);
        prop_assume!(b.distinct_eigenvalues() >= 2 * order - 1);
        let s = raw_ensemble(b.dim(), 2 * b.dim(), seed);
        let c = estimation::sample_covariance(&s).matrix;
        let p = estimation::periodogram(&b, &s).unwrap();
        let spatial = estimation::fit_ma_gamma(FitInput::Covariance(&c), &b, order, Domain::Spatial).unwrap();
        let spectral = estimation::fit_ma_gamma(FitInput::Psd(&p), &b, order, Domain::Spectral).unwrap();
        let oracle = ma_spatial_oracle(&c, op.matrix(), order);
        prop_assert!(max_abs_diff(&spatial.gamma.normalized, oracle.as_slice()) <= 1e-8);
        prop_assert!(max_abs_diff(&spectral.gamma.normalized, oracle.as_slice()) <= 1e-8);
    }

    #[test]
    fn ar_spatial_fit_matches_vectorized_oracle(seed in 0u64..500, order in 1usize..=2) {
        let (op, b) = normalized(seed);
        prop_assume!(b.distinct_eigenvalues() >= 2 * order + 1);
        let s = raw_ensemble(b.dim(), 2 * b.dim(), seed);
        let c = estimation::sample_covariance(&s).matrix / 10.0;
        let fit = estimation::fit_ar_eta(FitInput::Covariance(&c), &b, order, Domain::Spatial).unwrap();
        let oracle = ar_spatial_oracle(&c, op.matrix(), order);
        let tol = 1e-8 * (1.0 + oracle.amax());
        prop_assert!(max_abs_diff(&fit.eta.normalized, oracle.as_slice()) <= tol);
    }

    #[test]
    fn psd_estimates_are_simultaneously_diagonalizable(seed in 0u64..500, m in 1usize..30) {
        let (_, b) = normalized(seed);
        let s = raw_ensemble(b.dim(), m, seed);
        for method in [Method::Correlogram, Method::Periodogram, Method::MaSpectral, Method::Wirtinger, Method::Kernel] {
            let est = estimation::estimate(method, &b, &s, &Default::default()).unwrap().unwrap();
            let d = b.eigenvectors().transpose() * &est.matrix * b.eigenvectors();
            let off = d.clone() - DMatrix::from_diagonal(&d.diagonal());
            prop_assert!(off.amax() <= 1e-10 * (1.0 + d.amax()), "{method:?}");
            prop_assert!((&est.matrix - est.matrix.transpose()).amax() <= 1e-12 * (1.0 + est.matrix.amax()));
        }
    }

    #[test]
    fn wirtinger_losses_never_increase(seed in 0u64..500, order in 1usize..=3) {
        let (_, b) = normalized(seed);
        let s = raw_ensemble(b.dim(), 5, seed);
        let p = estimation::periodogram(&b, &s).unwrap();
        let opts = WirtingerOptions { max_iter: 300, ..Default::default() };
        let fit = estimation::fit_ma_beta_wirtinger(&p, &b, order, opts).unwrap();
        prop_assert!(fit.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ar1_beats_every_grid_point(seed in 0u64..500, m in 5usize..200) {
        let c = random_complex(9, 0.55, 0.5, seed).unwrap();
        let b = eigendecompose(&dirac(&c).unwrap()).unwrap();
        let s = raw_ensemble(b.dim(), m, seed);
        let cov = estimation::sample_covariance(&s).matrix;
        let fit = estimation::fit_ar1_gaussian_mle(&cov, &b).unwrap();
        let power = (b.eigenvectors().transpose() * &cov * b.eigenvectors()).diagonal();
        for j in 0..AR1_GRID {
            let a = fit.upper * j as f64 / (AR1_GRID - 1) as f64;
            prop_assert!(fit.objective <= estimation::ar1_objective(&power, b.eigenvalues(), a) + 1e-12);
        }
        prop_assert!(fit.alpha >= 0.0 && fit.alpha <= fit.upper);
    }
}

#[test]
fn sample_covariance_examples() {
    let s = SignalEnsemble::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]));
    assert_eq!(estimation::sample_covariance(&s).matrix, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));

    let (n, m) = (50, 100_000);
    let c = estimation::sample_covariance(&white_noise(n, m, 4)).matrix;
    let err = (c - DMatrix::<f64>::identity(n, n)).norm() / (n as f64).sqrt();
    assert!(err < 0.05, "{err}");
}

#[test]
fn periodogram_with_identity_basis() {
    let op = TopologicalOperator::custom(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).unwrap();
    let b = eigendecompose(&op).unwrap();
    let s = SignalEnsemble::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]));
    let p = estimation::periodogram(&b, &s).unwrap();
    assert!(max_abs_diff(p.values().as_slice(), &[1.0, 4.0]) < 1e-15);
}

#[test]
fn psd_to_cov_examples_and_round_trip() {
    let (_, b) = normalized(1);
    let n = b.dim();
    let ones = estimation::psd_to_cov(&b, &Psd::new(DVector::from_element(n, 1.0))).unwrap();
    assert!((ones - DMatrix::<f64>::identity(n, n)).amax() < 1e-12);

    let mut e = DVector::zeros(n);
    e[2] = 1.0;
    let u = b.eigenvectors().column(2);
    assert!((estimation::psd_to_cov(&b, &Psd::new(e)).unwrap() - u * u.transpose()).amax() < 1e-12);

    let (c, _) = signals::true_cov_psd(&b, &FilterSpec::Polynomial(vec![1.0, 0.4, -0.2])).unwrap();
    let back = estimation::psd_to_cov(&b, &estimation::correlogram(&b, &c).unwrap()).unwrap();
    assert!((back - c).amax() < 1e-8);
}

#[test]
fn restricted_periodogram() {
    let (_, b) = normalized(2);
    let n = b.dim();
    let s = raw_ensemble(n, 10, 3);
    let full = estimation::periodogram(&b, &s).unwrap();
    let all: Vec<usize> = (0..n).collect();
    let same = estimation::periodogram_subspace(&b, &all, &s).unwrap();
    assert!(max_abs_diff(full.values().as_slice(), same.values().as_slice()) < 1e-12);

    // a signal living in the span of a few eigenvectors
    let support = vec![1, 4, 5];
    let coeffs = white_noise(support.len(), 10, 7).into_data();
    let x = b.columns(&support) * coeffs;
    let sx = SignalEnsemble::new(x);
    let r = estimation::periodogram_subspace(&b, &support, &sx).unwrap();
    let f = estimation::periodogram(&b, &sx).unwrap();
    for (i, &j) in support.iter().enumerate() {
        assert!((r.restricted()[i] - f.values()[j]).abs() < 1e-9);
    }
    assert_eq!(r.support(), Some(&support[..]));
}

#[test]
fn harmonic_restriction_beats_full_periodogram() {
    let c = (0..)
        .map(|seed| random_complex(12, 0.5, 0.3, seed).unwrap())
        .find(|c| {
            let b = eigendecompose(&hodge_laplacian(c, 1).unwrap()).unwrap();
            b.indices(Subspace::Harmonic).unwrap().len() >= 2
        })
        .unwrap();
    let b = eigendecompose(&hodge_laplacian(&c, 1).unwrap()).unwrap();
    let h = b.indices(Subspace::Harmonic).unwrap();
    let uh = b.columns(&h);
    let truth = &uh * uh.transpose();
    let (mut wins, trials) = (0, 20);
    for t in 0..trials {
        // harmonic signal plus a small isotropic disturbance
        let x = &uh * white_noise(h.len(), 100, t).into_data() + white_noise(b.dim(), 100, 1000 + t).into_data() * 0.1;
        let s = SignalEnsemble::new(x);
        let full = estimation::psd_to_cov(&b, &estimation::periodogram(&b, &s).unwrap()).unwrap();
        let rest = estimation::psd_to_cov(&b, &estimation::periodogram_subspace(&b, &h, &s).unwrap()).unwrap();
        if estimation::rel_error(&rest, &truth).unwrap() < estimation::rel_error(&full, &truth).unwrap() {
            wins += 1;
        }
    }
    assert_eq!(wins, trials);
}

#[test]
fn ma_fit_spec_example() {
    let op = TopologicalOperator::custom(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 2.0]))).unwrap();
    let b = eigendecompose(&op).unwrap();
    let p = Psd::new(DVector::from_vec(vec![1.0, 1.75, 3.0]));
    let fit = estimation::fit_ma_gamma(FitInput::Psd(&p), &b, 2, Domain::Spectral).unwrap();
    assert!(max_abs_diff(&fit.gamma.raw(), &[1.0, 0.5, 0.25]) < 1e-12);

    // one coefficient: least squares against a constant column is the mean
    let fit = estimation::fit_ma_gamma(FitInput::Psd(&p), &b, 1, Domain::Spectral).unwrap();
    assert!((fit.gamma.raw()[0] - 5.75 / 3.0).abs() < 1e-12);
}

#[test]
fn ar_fit_examples() {
    let (_, b) = normalized(4);
    let (_, p) = signals::true_cov_psd(&b, &FilterSpec::AutoRegressive(vec![0.3])).unwrap();
    let fit = estimation::fit_ar_eta(FitInput::Psd(&p), &b, 1, Domain::Spectral).unwrap();
    assert!(max_abs_diff(&fit.eta.raw(), &[0.6, -0.09]) < 1e-8);

    let ones = Psd::new(DVector::from_element(b.dim(), 1.0));
    let eye = DMatrix::<f64>::identity(b.dim(), b.dim());
    for (input, dom) in [(FitInput::Psd(&ones), Domain::Spectral), (FitInput::Covariance(&eye), Domain::Spatial)] {
        let fit = estimation::fit_ar_eta(input, &b, 2, dom).unwrap();
        assert!(fit.eta.normalized.iter().all(|x| x.abs() < 1e-10));
    }

    // with a three-column sample covariance the two objectives disagree
    let s = white_noise(b.dim(), 3, 5);
    let c = estimation::sample_covariance(&s).matrix;
    let p = estimation::periodogram(&b, &s).unwrap();
    let spatial = estimation::fit_ar_eta(FitInput::Covariance(&c), &b, 1, Domain::Spatial).unwrap();
    let spectral = estimation::fit_ar_eta(FitInput::Psd(&p), &b, 1, Domain::Spectral).unwrap();
    assert!(max_abs_diff(&spatial.eta.normalized, &spectral.eta.normalized) > 1e-3);
}

#[test]
fn exact_fits_from_true_models() {
    let (_, b) = normalized(6);
    assert!(b.distinct_eigenvalues() >= 5);
    let beta = [0.8, -0.3, 0.1];
    let (_, p) = signals::true_cov_psd(&b, &FilterSpec::Polynomial(beta.to_vec())).unwrap();
    let ma = estimation::fit_ma_gamma(FitInput::Psd(&p), &b, 3, Domain::Spectral).unwrap();
    assert!(max_abs_diff(&ma.gamma.raw(), &convolve(&beta, &beta)) < 1e-10);

    let fit = estimation::fit_ma_beta_wirtinger(&p, &b, 3, WirtingerOptions::default()).unwrap();
    assert!(fit.loss < 1e-6);
    let raw = fit.beta.raw();
    let sign = raw[0].signum();
    assert!(max_abs_diff(&raw.iter().map(|x| x * sign).collect::<Vec<_>>(), &beta) < 1e-6);

    let zero = estimation::fit_ma_beta_wirtinger(&Psd::new(DVector::zeros(b.dim())), &b, 2, WirtingerOptions::default()).unwrap();
    assert!(zero.beta.normalized.iter().all(|&x| x == 0.0));
}

#[test]
fn kernel_fit_examples() {
    let (_, b) = normalized(3);
    let opts = KernelOptions::default();
    let target = Psd::new(b.eigenvalues().map(|l| (-2.0 * l * l).exp()));
    let g = estimation::fit_spectral_params(&target, &b, ModelKind::GaussianKernel, opts).unwrap();
    match g.model {
        SpectralModel::GaussianKernel { theta1 } => assert!((theta1 - 2.0).abs() < 1e-3, "{theta1}"),
        other => panic!("{other:?}"),
    }
    let l = estimation::fit_spectral_params(&target, &b, ModelKind::LaplacianKernel, opts).unwrap();
    assert!(g.residual <= l.residual);

    let flat = Psd::new(DVector::from_element(b.dim(), 1.0));
    let e = estimation::fit_spectral_params(&flat, &b, ModelKind::Exponential, opts).unwrap();
    match e.model {
        SpectralModel::Exponential { theta1 } => assert!(theta1.abs() < 1e-3, "{theta1}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn ar1_on_white_noise_is_zero() {
    let c = random_complex(9, 0.55, 0.5, 2).unwrap();
    let b = eigendecompose(&dirac(&c).unwrap()).unwrap();
    let fit = estimation::fit_ar1_gaussian_mle(&DMatrix::identity(b.dim(), b.dim()), &b).unwrap();
    assert!(fit.alpha.abs() < 1e-8, "{}", fit.alpha);
}

#[test]
fn rel_error_examples() {
    let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(estimation::rel_error(&x, &x).unwrap(), 0.0);
    assert_eq!(estimation::rel_error(&DMatrix::zeros(2, 2), &x).unwrap(), 1.0);
    assert_eq!(estimation::rel_error(&(&x * 2.0), &x).unwrap(), 1.0);
    assert!(estimation::rel_error(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)).is_err());
}
