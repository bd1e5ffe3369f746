//! Stationary signal models: white noise pushed through a topological filter.
//!
//! Every filter is applied in the eigenbasis of the operator, `U diag(g(lambda)) U^T X`, so
//! polynomial (MA), autoregressive and closed-form spectral responses share one code path.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::Psd;
use crate::linalg;
use crate::rng;
use crate::spectral::{OperatorKind, SpectralBasis};

/// `N x M` matrix of realizations (one per column).
#[derive(Clone, Debug, PartialEq)]
pub struct SignalEnsemble {
    data: DMatrix<f64>,
    offsets: Vec<usize>,
    kind: Option<OperatorKind>,
}

impl SignalEnsemble {
    /// Untagged single-block ensemble.
    pub fn new(data: DMatrix<f64>) -> Self {
        let n = data.nrows();
        Self {
            data,
            offsets: vec![0, n],
            kind: None,
        }
    }

    /// Ensemble with per-order row offsets; `offsets` must start at 0, be nondecreasing and end
    /// at the row count.
    pub fn with_offsets(data: DMatrix<f64>, offsets: Vec<usize>) -> Result<Self> {
        let n = data.nrows();
        let ok = offsets.first() == Some(&0)
            && offsets.last() == Some(&n)
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: offsets.last().copied().unwrap_or(0),
            });
        }
        Ok(Self {
            data,
            offsets,
            kind: None,
        })
    }

    /// Adopts the basis' operator tag and offsets.
    pub fn tagged(data: DMatrix<f64>, basis: &SpectralBasis) -> Result<Self> {
        let mut out = Self::with_offsets(data, basis.offsets().to_vec())?;
        out.kind = Some(basis.kind());
        Ok(out)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn kind(&self) -> Option<OperatorKind> {
        self.kind
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// The first `m` realizations.
    pub fn prefix(&self, m: usize) -> Self {
        Self {
            data: self.data.columns(0, m.min(self.ncols())).into_owned(),
            offsets: self.offsets.clone(),
            kind: self.kind,
        }
    }
}

/// Closed-form spectral responses and kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralModel {
    /// `h(lambda) = 1 / (lambda^2 + epsilon)`.
    LowPassRational { epsilon: f64 },
    /// `h(lambda) = exp(-theta1 lambda)`.
    Exponential { theta1: f64 },
    /// `h(lambda) = 1 / (1 + exp(-(theta1 lambda + theta2)))`.
    Sigmoid { theta1: f64, theta2: f64 },
    /// PSD kernel `exp(-theta1 lambda^2)`.
    GaussianKernel { theta1: f64 },
    /// PSD kernel `(1 + theta1 lambda)^(-theta2)`.
    LaplacianKernel { theta1: f64, theta2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    LowPassRational,
    Exponential,
    Sigmoid,
    GaussianKernel,
    LaplacianKernel,
}

impl ModelKind {
    pub fn n_params(self) -> usize {
        match self {
            ModelKind::LowPassRational | ModelKind::Exponential | ModelKind::GaussianKernel => 1,
            ModelKind::Sigmoid | ModelKind::LaplacianKernel => 2,
        }
    }

    pub fn build(self, theta: &[f64]) -> Result<SpectralModel> {
        if theta.len() != self.n_params() {
            return Err(Error::InvalidFilter(format!(
                "{self:?} takes {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        let model = match self {
            ModelKind::LowPassRational => SpectralModel::LowPassRational { epsilon: theta[0] },
            ModelKind::Exponential => SpectralModel::Exponential { theta1: theta[0] },
            ModelKind::Sigmoid => SpectralModel::Sigmoid {
                theta1: theta[0],
                theta2: theta[1],
            },
            ModelKind::GaussianKernel => SpectralModel::GaussianKernel { theta1: theta[0] },
            ModelKind::LaplacianKernel => SpectralModel::LaplacianKernel {
                theta1: theta[0],
                theta2: theta[1],
            },
        };
        model.check()?;
        Ok(model)
    }

    /// Whether the model parameterizes the PSD directly rather than the filter.
    pub fn is_kernel(self) -> bool {
        matches!(self, ModelKind::GaussianKernel | ModelKind::LaplacianKernel)
    }
}

impl SpectralModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SpectralModel::LowPassRational { .. } => ModelKind::LowPassRational,
            SpectralModel::Exponential { .. } => ModelKind::Exponential,
            SpectralModel::Sigmoid { .. } => ModelKind::Sigmoid,
            SpectralModel::GaussianKernel { .. } => ModelKind::GaussianKernel,
            SpectralModel::LaplacianKernel { .. } => ModelKind::LaplacianKernel,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            SpectralModel::LowPassRational { epsilon } => vec![epsilon],
            SpectralModel::Exponential { theta1 } | SpectralModel::GaussianKernel { theta1 } => {
                vec![theta1]
            }
            SpectralModel::Sigmoid { theta1, theta2 }
            | SpectralModel::LaplacianKernel { theta1, theta2 } => vec![theta1, theta2],
        }
    }

    fn check(&self) -> Result<()> {
        let params = self.params();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidFilter(format!("non-finite parameters in {self:?}")));
        }
        let ok = match *self {
            SpectralModel::LowPassRational { epsilon } => epsilon > 0.0,
            SpectralModel::GaussianKernel { theta1 } => theta1 >= 0.0,
            SpectralModel::LaplacianKernel { theta1, theta2 } => theta1 >= 0.0 && theta2 >= 0.0,
            SpectralModel::Exponential { .. } | SpectralModel::Sigmoid { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidFilter(format!("parameters out of domain in {self:?}")))
        }
    }

    /// Power at `lambda`: the squared response, or the kernel value itself.
    pub fn psd(&self, lambda: f64) -> f64 {
        match *self {
            SpectralModel::GaussianKernel { theta1 } => (-theta1 * lambda * lambda).exp(),
            SpectralModel::LaplacianKernel { theta1, theta2 } => {
                let base = 1.0 + theta1 * lambda;
                if base > 0.0 {
                    base.powf(-theta2)
                } else {
                    f64::NAN
                }
            }
            _ => {
                let h = self.response(lambda);
                h * h
            }
        }
    }

    /// Filter response at `lambda` (square root of the kernel for kernel models).
    pub fn response(&self, lambda: f64) -> f64 {
        match *self {
            SpectralModel::LowPassRational { epsilon } => 1.0 / (lambda * lambda + epsilon),
            SpectralModel::Exponential { theta1 } => (-theta1 * lambda).exp(),
            SpectralModel::Sigmoid { theta1, theta2 } => {
                1.0 / (1.0 + (-(theta1 * lambda + theta2)).exp())
            }
            SpectralModel::GaussianKernel { .. } | SpectralModel::LaplacianKernel { .. } => {
                self.psd(lambda).sqrt()
            }
        }
    }
}

/// Generative filter description.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterSpec {
    /// `H = sum_r h_r T^r`, coefficients `h_0..h_{R-1}`.
    Polynomial(Vec<f64>),
    /// `(I - sum_r alpha_r T^r) s = w`, coefficients `alpha_1..alpha_R`.
    AutoRegressive(Vec<f64>),
    Spectral(SpectralModel),
}

/// Below this magnitude an AR response `1 - sum alpha_r lambda^r` is treated as zero.
pub const AR_SINGULAR_TOLERANCE: f64 = 1e-12;

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl FilterSpec {
    fn check(&self) -> Result<()> {
        match self {
            FilterSpec::Polynomial(c) | FilterSpec::AutoRegressive(c) => {
                if c.is_empty() {
                    return Err(Error::InvalidFilter("at least one coefficient is required".into()));
                }
                if c.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidFilter("coefficients must be finite".into()));
                }
                Ok(())
            }
            FilterSpec::Spectral(m) => m.check(),
        }
    }

    /// Frequency response `g(lambda_i)` at every eigenvalue of `basis`.
    pub fn response(&self, basis: &SpectralBasis) -> Result<DVector<f64>> {
        self.check()?;
        let lambda = basis.eigenvalues();
        let mut g = DVector::zeros(lambda.len());
        for (i, &l) in lambda.iter().enumerate() {
            g[i] = match self {
                FilterSpec::Polynomial(h) => horner(h, l),
                FilterSpec::AutoRegressive(alpha) => {
                    let h = 1.0 - l * horner(alpha, l);
                    if h.abs() <= AR_SINGULAR_TOLERANCE {
                        return Err(Error::SingularArResponse {
                            index: i,
                            eigenvalue: l,
                        });
                    }
                    1.0 / h
                }
                FilterSpec::Spectral(m) => {
                    let v = m.response(l);
                    if !v.is_finite() {
                        return Err(Error::InvalidFilter(format!(
                            "{m:?} is undefined at eigenvalue {l}"
                        )));
                    }
                    v
                }
            };
        }
        Ok(g)
    }

    /// True PSD `g(lambda)^2` (kernel value for kernel models).
    pub fn psd(&self, basis: &SpectralBasis) -> Result<DVector<f64>> {
        Ok(self.response(basis)?.map(|g| g * g))
    }
}

/// `n x m` i.i.d. standard Gaussian entries; column `j` is drawn from stream `j` of `seed`.
pub fn white_noise(n: usize, m: usize, seed: u64) -> SignalEnsemble {
    let columns: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(seed, j as u64);
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect();
    SignalEnsemble::new(DMatrix::from_iterator(n, m, columns.into_iter().flatten()))
}

/// `U diag(g) U^T X`.
pub fn apply_filter(basis: &SpectralBasis, filter: &FilterSpec, x: &SignalEnsemble) -> Result<SignalEnsemble> {
    let g = filter.response(basis)?;
    let out = filter_with_response(basis, &g, x.data())?;
    SignalEnsemble::tagged(out, basis)
}

pub(crate) fn filter_with_response(
    basis: &SpectralBasis,
    g: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut spec = basis.tft(x)?;
    for (i, mut row) in spec.row_iter_mut().enumerate() {
        row *= g[i];
    }
    basis.itft(&spec)
}

/// `m` stationary realizations of `filter` applied to seeded white noise.
pub fn generate(basis: &SpectralBasis, filter: &FilterSpec, m: usize, seed: u64) -> Result<SignalEnsemble> {
    let g = filter.response(basis)?;
    let w = white_noise(basis.dim(), m, seed);
    SignalEnsemble::tagged(filter_with_response(basis, &g, w.data())?, basis)
}

/// Ground-truth covariance `U diag(p) U^T` and PSD `p = g(lambda)^2`.
pub fn true_cov_psd(basis: &SpectralBasis, filter: &FilterSpec) -> Result<(DMatrix<f64>, Psd)> {
    let p = filter.psd(basis)?;
    let c = linalg::spectral_matrix(basis.eigenvectors(), &p);
    Ok((c, Psd::new(p)))
}
