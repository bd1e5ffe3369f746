//! PSD and covariance estimation for stationary topological signals.
//!
//! Nonparametric estimators work directly on the spectral coefficients. Parametric fits
//! model the PSD as a function of the eigenvalues: MA processes through the polynomial
//! `gamma` (convolution of the filter taps with themselves), AR processes through the
//! polynomial `eta` of the squared inverse response, plus closed-form kernels and a scalar
//! first-order AR likelihood.
//!
//! Polynomial fits are carried out in powers of `lambda / lambda_max` so the Vandermonde
//! designs stay well conditioned; [`PolyCoeffs::raw`] converts back to powers of `lambda`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::signals::{ModelKind, SignalEnsemble, SpectralModel};
use crate::spectral::SpectralBasis;

/// Nonnegative power spectral density, optionally supported on a subset of frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    values: DVector<f64>,
    support: Option<Vec<usize>>,
}

impl Psd {
    pub fn new(values: DVector<f64>) -> Self {
        Self {
            values,
            support: None,
        }
    }

    /// PSD equal to `values` on `support` and zero elsewhere.
    pub fn with_support(n: usize, support: Vec<usize>, values: &[f64]) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                found: values.len(),
            });
        }
        let mut full = DVector::zeros(n);
        for (&i, &v) in support.iter().zip(values) {
            if i >= n {
                return Err(Error::DimensionMismatch { expected: n, found: i + 1 });
            }
            full[i] = v;
        }
        Ok(Self {
            values: full,
            support: Some(support),
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn support(&self) -> Option<&[usize]> {
        self.support.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values restricted to the support (everything when unrestricted).
    pub fn restricted(&self) -> Vec<f64> {
        match &self.support {
            Some(s) => s.iter().map(|&i| self.values[i]).collect(),
            None => self.values.iter().copied().collect(),
        }
    }
}

/// Estimation method tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sample,
    Correlogram,
    Periodogram,
    MaSpatial,
    MaSpectral,
    ArSpatial,
    ArSpectral,
    Wirtinger,
    Kernel,
    Ar1Mle,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Sample,
        Method::Correlogram,
        Method::Periodogram,
        Method::MaSpatial,
        Method::MaSpectral,
        Method::ArSpatial,
        Method::ArSpectral,
        Method::Wirtinger,
        Method::Kernel,
        Method::Ar1Mle,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Sample => "sample",
            Method::Correlogram => "correlogram",
            Method::Periodogram => "periodogram",
            Method::MaSpatial => "ma-spatial",
            Method::MaSpectral => "ma-spectral",
            Method::ArSpatial => "ar-spatial",
            Method::ArSpectral => "ar-spectral",
            Method::Wirtinger => "wirtinger",
            Method::Kernel => "kernel",
            Method::Ar1Mle => "ar1-mle",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn is_nonparametric(self) -> bool {
        matches!(self, Method::Sample | Method::Correlogram | Method::Periodogram)
    }
}

/// Conditions reported alongside an estimate instead of being silently corrected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EstimateFlag {
    /// The Vandermonde design had fewer distinct eigenvalues than coefficients; the
    /// minimum-norm solution was used.
    RankDeficientVandermonde,
    /// A fitted polynomial PSD went negative somewhere on the spectrum.
    NegativeModelPsd,
    /// An AR reconstruction `(I - sum eta_r T^r)^{-1}` is not positive semidefinite.
    NotPositiveSemidefinite,
    /// The fitted AR polynomial vanishes at an eigenvalue; no covariance exists.
    SingularReconstruction,
    /// An iterative fit stopped before meeting its tolerance.
    NotConverged,
}

impl EstimateFlag {
    pub fn name(self) -> &'static str {
        match self {
            EstimateFlag::RankDeficientVandermonde => "rank-deficient-vandermonde",
            EstimateFlag::NegativeModelPsd => "negative-model-psd",
            EstimateFlag::NotPositiveSemidefinite => "not-psd",
            EstimateFlag::SingularReconstruction => "singular-reconstruction",
            EstimateFlag::NotConverged => "not-converged",
        }
    }
}

/// A covariance estimate with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub method: Method,
    /// Fitted coefficients for parametric methods.
    pub params: Option<Vec<f64>>,
    pub flags: Vec<EstimateFlag>,
}

impl CovarianceEstimate {
    fn new(matrix: DMatrix<f64>, method: Method) -> Self {
        Self {
            matrix,
            method,
            params: None,
            flags: Vec::new(),
        }
    }
}

fn check_rows(basis: &SpectralBasis, rows: usize) -> Result<()> {
    if rows != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: rows,
        });
    }
    Ok(())
}

/// `(1/M) S S^T`.
pub fn sample_covariance(s: &SignalEnsemble) -> CovarianceEstimate {
    let data = s.data();
    let m = data.ncols().max(1) as f64;
    let mut c = data * data.transpose() / m;
    linalg::symmetrize(&mut c);
    CovarianceEstimate::new(c, Method::Sample)
}

/// `p_i = (1/M) sum_m (U^T s_m)_i^2`.
pub fn periodogram(basis: &SpectralBasis, s: &SignalEnsemble) -> Result<Psd> {
    check_rows(basis, s.nrows())?;
    let spec = basis.tft(s.data())?;
    Ok(Psd::new(mean_square_rows(&spec)))
}

fn mean_square_rows(spec: &DMatrix<f64>) -> DVector<f64> {
    let m = spec.ncols().max(1) as f64;
    DVector::from_iterator(
        spec.nrows(),
        spec.row_iter().map(|r| r.iter().map(|x| x * x).sum::<f64>() / m),
    )
}

/// `diag(U^T C U)` without flooring.
fn spectral_diagonal(basis: &SpectralBasis, c: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_rows(basis, c.nrows())?;
    if c.ncols() != c.nrows() {
        return Err(Error::DimensionMismatch {
            expected: c.nrows(),
            found: c.ncols(),
        });
    }
    Ok(linalg::quadratic_diag(basis.eigenvectors(), c))
}

/// `p = diag(U^T C U)`, negatives (rounding only) floored at zero.
pub fn correlogram(basis: &SpectralBasis, c: &DMatrix<f64>) -> Result<Psd> {
    Ok(Psd::new(spectral_diagonal(basis, c)?.map(|x| x.max(0.0))))
}

/// `U diag(p) U^T`, or `U_S diag(p_S) U_S^T` for a restricted PSD.
pub fn psd_to_cov(basis: &SpectralBasis, p: &Psd) -> Result<DMatrix<f64>> {
    check_rows(basis, p.len())?;
    Ok(match p.support() {
        Some(support) => {
            let u = basis.columns(support);
            let vals = DVector::from_vec(p.restricted());
            linalg::spectral_matrix(&u, &vals)
        }
        None => linalg::spectral_matrix(basis.eigenvectors(), p.values()),
    })
}

/// Nonparametric covariance estimate from a PSD.
pub fn psd_estimate(basis: &SpectralBasis, p: &Psd, method: Method) -> Result<CovarianceEstimate> {
    Ok(CovarianceEstimate::new(psd_to_cov(basis, p)?, method))
}

/// Largest `|U_S^T U_S - I|` tolerated for subspace bases.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

/// Periodogram restricted to the eigenvector columns in `support`.
pub fn periodogram_subspace(basis: &SpectralBasis, support: &[usize], s: &SignalEnsemble) -> Result<Psd> {
    check_rows(basis, s.nrows())?;
    if let Some(&bad) = support.iter().find(|&&i| i >= basis.dim()) {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: bad + 1,
        });
    }
    let u = basis.columns(support);
    let deviation = linalg::orthonormality_deviation(&u);
    if deviation > ORTHONORMAL_TOLERANCE {
        return Err(Error::NonOrthonormalSubspace { deviation });
    }
    let restricted = mean_square_rows(&u.tr_mul(s.data()));
    Psd::with_support(basis.dim(), support.to_vec(), restricted.as_slice())
}

/// Polynomial coefficients fitted in powers of `lambda / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyCoeffs {
    /// Coefficients of `(lambda/scale)^(first_power + i)`.
    pub normalized: Vec<f64>,
    pub scale: f64,
    pub first_power: u32,
}

impl PolyCoeffs {
    /// Coefficients of `lambda^(first_power + i)`.
    pub fn raw(&self) -> Vec<f64> {
        self.normalized
            .iter()
            .enumerate()
            .map(|(i, c)| c / self.scale.powi((self.first_power as usize + i) as i32))
            .collect()
    }

    /// Polynomial evaluated at normalized eigenvalues.
    fn eval(&self, mu: &DVector<f64>) -> DVector<f64> {
        vandermonde(mu, self.first_power, self.normalized.len()) * DVector::from_column_slice(&self.normalized)
    }
}

/// `lambda / scale` for every eigenvalue.
pub fn normalized_eigenvalues(basis: &SpectralBasis) -> DVector<f64> {
    basis.eigenvalues() / basis.scale()
}

/// Rows `mu_i^first .. mu_i^(first+count-1)`.
pub fn vandermonde(mu: &DVector<f64>, first: u32, count: usize) -> DMatrix<f64> {
    DMatrix::from_fn(mu.len(), count, |i, j| mu[i].powi((first as usize + j) as i32))
}

/// Input of a parametric fit: a covariance (spatial objective) or a PSD (spectral objective).
#[derive(Clone, Copy, Debug)]
pub enum FitInput<'a> {
    Covariance(&'a DMatrix<f64>),
    Psd(&'a Psd),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Spatial,
    Spectral,
}

fn input_diagonal(input: FitInput<'_>, basis: &SpectralBasis) -> Result<DVector<f64>> {
    match input {
        FitInput::Covariance(c) => spectral_diagonal(basis, c),
        FitInput::Psd(p) => {
            check_rows(basis, p.len())?;
            Ok(p.values().clone())
        }
    }
}

#[derive(Clone, Debug)]
pub struct MaFit {
    /// Covariance polynomial coefficients `gamma_0..gamma_{2(R-1)}`.
    pub gamma: PolyCoeffs,
    pub estimate: CovarianceEstimate,
}

/// Least-squares MA fit in the convex `gamma` parameterization.
///
/// The spatial objective `||C - sum gamma_r T^r||_F^2` differs from the spectral one only by
/// the off-diagonal energy of `U^T C U`, which does not depend on `gamma`, so both reduce to
/// a Vandermonde least-squares problem on `diag(U^T C U)`.
pub fn fit_ma_gamma(input: FitInput<'_>, basis: &SpectralBasis, order: usize, domain: Domain) -> Result<MaFit> {
    if order == 0 {
        return Err(Error::config("ma_order", "MA order must be at least 1"));
    }
    let target = input_diagonal(input, basis)?;
    let mu = normalized_eigenvalues(basis);
    let design = vandermonde(&mu, 0, 2 * order - 1);
    let (gamma, rank_deficient) = linalg::lstsq(&design, &target);
    let model = &design * &gamma;

    let method = match domain {
        Domain::Spatial => Method::MaSpatial,
        Domain::Spectral => Method::MaSpectral,
    };
    let mut estimate = CovarianceEstimate::new(linalg::spectral_matrix(basis.eigenvectors(), &model), method);
    let coeffs = PolyCoeffs {
        normalized: gamma.iter().copied().collect(),
        scale: basis.scale(),
        first_power: 0,
    };
    estimate.params = Some(coeffs.raw());
    if rank_deficient {
        estimate.flags.push(EstimateFlag::RankDeficientVandermonde);
    }
    if model.iter().any(|&x| x < 0.0) {
        estimate.flags.push(EstimateFlag::NegativeModelPsd);
    }
    Ok(MaFit { gamma: coeffs, estimate })
}

#[derive(Clone, Debug)]
pub struct ArFit {
    /// Coefficients `eta_1..eta_{2R}` of `1/p(lambda) = 1 - sum eta_r lambda^r`.
    pub eta: PolyCoeffs,
    /// `None` when the fitted polynomial vanishes at an eigenvalue.
    pub estimate: Option<CovarianceEstimate>,
    pub rank_deficient: bool,
}

/// Least-squares AR fit in the convex `eta` parameterization.
///
/// Spectral: `min ||p o (1 - Psi eta) - 1||^2`. Spatial: `min ||C (I - sum eta_r T^r) - I||_F^2`,
/// whose normal equations only involve `q_i = ||C u_i||^2` and `c_i = u_i^T C u_i`; it is solved
/// as the equivalent weighted problem with rows `sqrt(q_i) mu_i^r` and targets
/// `(q_i - c_i) / sqrt(q_i)`. The two coincide only when `U^T C U` is diagonal.
pub fn fit_ar_eta(input: FitInput<'_>, basis: &SpectralBasis, order: usize, domain: Domain) -> Result<ArFit> {
    if order == 0 {
        return Err(Error::config("ar_order", "AR order must be at least 1"));
    }
    let (q, c) = match (domain, input) {
        (Domain::Spatial, FitInput::Covariance(cov)) => {
            let diag = spectral_diagonal(basis, cov)?;
            let cu = cov * basis.eigenvectors();
            let q = DVector::from_iterator(cu.ncols(), cu.column_iter().map(|col| col.norm_squared()));
            (q, diag)
        }
        _ => {
            let p = input_diagonal(input, basis)?;
            (p.map(|x| x * x), p)
        }
    };
    let mu = normalized_eigenvalues(basis);
    let count = 2 * order;
    let rows: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 0.0).collect();
    let mut design = DMatrix::zeros(rows.len(), count);
    let mut rhs = DVector::zeros(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        let w = q[i].sqrt();
        for j in 0..count {
            design[(r, j)] = w * mu[i].powi(j as i32 + 1);
        }
        rhs[r] = (q[i] - c[i]) / w;
    }
    let (eta, rank_deficient) = linalg::lstsq(&design, &rhs);
    let coeffs = PolyCoeffs {
        normalized: eta.iter().copied().collect(),
        scale: basis.scale(),
        first_power: 1,
    };
    let denom = coeffs.eval(&mu).map(|x| 1.0 - x);
    let method = match domain {
        Domain::Spatial => Method::ArSpatial,
        Domain::Spectral => Method::ArSpectral,
    };
    let estimate = if denom.iter().any(|d| d.abs() <= 1e-12) {
        None
    } else {
        let p = denom.map(|d| 1.0 / d);
        let mut est = CovarianceEstimate::new(linalg::spectral_matrix(basis.eigenvectors(), &p), method);
        est.params = Some(coeffs.raw());
        if rank_deficient {
            est.flags.push(EstimateFlag::RankDeficientVandermonde);
        }
        if denom.iter().any(|&d| d < 0.0) {
            est.flags.push(EstimateFlag::NotPositiveSemidefinite);
        }
        Some(est)
    };
    Ok(ArFit {
        eta: coeffs,
        estimate,
        rank_deficient,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WirtingerOptions {
    pub max_iter: usize,
    /// Initial trial step of the backtracking search.
    pub step: f64,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for WirtingerOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            step: 1.0,
            tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WirtingerFit {
    /// Filter taps `beta_0..beta_{R-1}`.
    pub beta: PolyCoeffs,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss after every accepted step, starting with the initial point.
    pub losses: Vec<f64>,
}

impl WirtingerFit {
    pub fn estimate(&self, basis: &SpectralBasis) -> CovarianceEstimate {
        let h = self.beta.eval(&normalized_eigenvalues(basis));
        let mut est = CovarianceEstimate::new(
            linalg::spectral_matrix(basis.eigenvectors(), &h.map(|x| x * x)),
            Method::Wirtinger,
        );
        est.params = Some(self.beta.raw());
        if !self.converged {
            est.flags.push(EstimateFlag::NotConverged);
        }
        est
    }
}

/// Fits MA filter taps directly, `min_beta ||p - (Psi beta) o (Psi beta)||^2`, by gradient
/// descent with Armijo backtracking (Wirtinger flow for real signals).
///
/// The starting point projects `sqrt(max(Psi gamma, 0))` from the convex spectral MA fit onto
/// the tap Vandermonde.
pub fn fit_ma_beta_wirtinger(
    p: &Psd,
    basis: &SpectralBasis,
    order: usize,
    opts: WirtingerOptions,
) -> Result<WirtingerFit> {
    if order == 0 {
        return Err(Error::config("ma_order", "MA order must be at least 1"));
    }
    check_rows(basis, p.len())?;
    let target = p.values();
    let mu = normalized_eigenvalues(basis);
    let psi = vandermonde(&mu, 0, order);

    let gamma_fit = fit_ma_gamma(FitInput::Psd(p), basis, order, Domain::Spectral)?;
    let root = gamma_fit.gamma.eval(&mu).map(|x| x.max(0.0).sqrt());
    let (mut beta, _) = linalg::lstsq(&psi, &root);

    let loss_and_grad = |beta: &DVector<f64>| {
        let h = &psi * beta;
        let resid = target - h.map(|x| x * x);
        let loss = resid.norm_squared();
        let grad = psi.tr_mul(&resid.component_mul(&h)) * -4.0;
        (loss, grad)
    };

    let (mut loss, mut grad) = loss_and_grad(&beta);
    let mut losses = vec![loss];
    let mut step = opts.step;
    let mut iterations = 0;
    let mut converged = grad.norm() <= opts.tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let g2 = grad.norm_squared();
        let mut accepted = false;
        while step > 1e-300 {
            let candidate = &beta - &grad * step;
            let (cand_loss, cand_grad) = loss_and_grad(&candidate);
            if cand_loss.is_finite() && cand_loss <= loss - 1e-4 * step * g2 {
                beta = candidate;
                loss = cand_loss;
                grad = cand_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        losses.push(loss);
        step *= 2.0;
        converged = grad.norm() <= opts.tol;
    }

    Ok(WirtingerFit {
        beta: PolyCoeffs {
            normalized: beta.iter().copied().collect(),
            scale: basis.scale(),
            first_power: 0,
        },
        loss,
        grad_norm: grad.norm(),
        iterations,
        converged,
        losses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelOptions {
    /// Grid points per parameter in the coarse search.
    pub grid: usize,
    /// Levenberg-Marquardt iterations after the grid search.
    pub max_iter: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            grid: 41,
            max_iter: 200,
        }
    }
}

/// Search box of each spectral model's parameters.
pub fn parameter_box(kind: ModelKind) -> Vec<(f64, f64)> {
    match kind {
        ModelKind::Exponential | ModelKind::GaussianKernel => vec![(0.0, 10.0)],
        ModelKind::Sigmoid => vec![(-10.0, 10.0), (-10.0, 10.0)],
        ModelKind::LaplacianKernel => vec![(0.0, 10.0), (0.0, 10.0)],
        ModelKind::LowPassRational => vec![(1e-6, 10.0)],
    }
}

#[derive(Clone, Debug)]
pub struct KernelFit {
    pub model: SpectralModel,
    /// `||p - target(theta)||^2` at the returned parameters.
    pub residual: f64,
    pub estimate: CovarianceEstimate,
}

/// Model PSD and its Jacobian with respect to the parameters.
fn model_target(kind: ModelKind, theta: &[f64], lambda: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = lambda.len();
    let mut t = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, theta.len());
    for (i, &l) in lambda.iter().enumerate() {
        match kind {
            ModelKind::Exponential => {
                let v = (-2.0 * theta[0] * l).exp();
                t[i] = v;
                jac[(i, 0)] = -2.0 * l * v;
            }
            ModelKind::Sigmoid => {
                let h = 1.0 / (1.0 + (-(theta[0] * l + theta[1])).exp());
                let dh = h * (1.0 - h);
                t[i] = h * h;
                jac[(i, 0)] = 2.0 * h * dh * l;
                jac[(i, 1)] = 2.0 * h * dh;
            }
            ModelKind::GaussianKernel => {
                let v = (-theta[0] * l * l).exp();
                t[i] = v;
                jac[(i, 0)] = -l * l * v;
            }
            ModelKind::LaplacianKernel => {
                let base = 1.0 + theta[0] * l;
                if base <= 0.0 {
                    return None;
                }
                let v = base.powf(-theta[1]);
                t[i] = v;
                jac[(i, 0)] = -theta[1] * l * v / base;
                jac[(i, 1)] = -base.ln() * v;
            }
            ModelKind::LowPassRational => {
                let d = l * l + theta[0];
                t[i] = 1.0 / (d * d);
                jac[(i, 0)] = -2.0 / (d * d * d);
            }
        }
    }
    if t.iter().all(|x| x.is_finite()) {
        Some((t, jac))
    } else {
        None
    }
}

/// Fits a closed-form response or kernel to a PSD: grid search over [`parameter_box`] then
/// projected Levenberg-Marquardt refinement.
pub fn fit_spectral_params(
    p: &Psd,
    basis: &SpectralBasis,
    kind: ModelKind,
    opts: KernelOptions,
) -> Result<KernelFit> {
    if kind == ModelKind::LowPassRational {
        return Err(Error::InvalidFilter("the rational low-pass response is not a fit target".into()));
    }
    check_rows(basis, p.len())?;
    let lambda = basis.eigenvalues();
    let target = p.values();
    let bounds = parameter_box(kind);
    let loss = |theta: &[f64]| {
        model_target(kind, theta, lambda).map_or(f64::INFINITY, |(t, _)| (target - t).norm_squared())
    };

    let grid = opts.grid.max(2);
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect()
    };
    let mut best = bounds.iter().map(|b| b.0).collect::<Vec<_>>();
    let mut best_loss = f64::INFINITY;
    let axes: Vec<Vec<f64>> = bounds.iter().copied().map(axis).collect();
    let mut idx = vec![0usize; axes.len()];
    loop {
        let theta: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        let l = loss(&theta);
        if l < best_loss {
            best_loss = l;
            best = theta;
        }
        let mut d = 0;
        while d < idx.len() {
            idx[d] += 1;
            if idx[d] < grid {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == idx.len() {
            break;
        }
    }

    let mut theta = best;
    let mut cur = best_loss;
    let mut damping = 1e-3;
    for _ in 0..opts.max_iter {
        let Some((t, jac)) = model_target(kind, &theta, lambda) else {
            break;
        };
        let resid = &t - target;
        let jtj = jac.tr_mul(&jac);
        let jtr = jac.tr_mul(&resid);
        let mut improved = false;
        while damping < 1e12 {
            let mut sys = jtj.clone();
            for d in 0..sys.nrows() {
                sys[(d, d)] += damping * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = sys.lu().solve(&(-&jtr)) else {
                damping *= 10.0;
                continue;
            };
            let cand: Vec<f64> = theta
                .iter()
                .zip(delta.iter())
                .zip(&bounds)
                .map(|((x, dx), (lo, hi))| (x + dx).clamp(*lo, *hi))
                .collect();
            let l = loss(&cand);
            if l < cur {
                let moved = cand.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                theta = cand;
                cur = l;
                damping = (damping * 0.3).max(1e-12);
                improved = moved > 1e-15;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let model = kind.build(&theta)?;
    let (t, _) = model_target(kind, &theta, lambda).ok_or_else(|| {
        Error::InvalidFilter(format!("{kind:?} is undefined on this spectrum"))
    })?;
    let mut estimate = CovarianceEstimate::new(linalg::spectral_matrix(basis.eigenvectors(), &t), Method::Kernel);
    estimate.params = Some(theta);
    Ok(KernelFit {
        model,
        residual: cur,
        estimate,
    })
}

/// Negative Gaussian log-likelihood (up to constants) of a first-order AR model,
/// `-2 sum log|1 - alpha lambda_i| + sum c_i (1 - alpha lambda_i)^2`, with `c = diag(U^T C U)`.
pub fn ar1_objective(spectral_power: &DVector<f64>, lambda: &DVector<f64>, alpha: f64) -> f64 {
    spectral_power
        .iter()
        .zip(lambda.iter())
        .map(|(&c, &l)| {
            let h = 1.0 - alpha * l;
            -2.0 * h.abs().ln() + c * h * h
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct Ar1Fit {
    pub alpha: f64,
    pub objective: f64,
    /// Upper end of the feasible interval, `(1 - 1e-6) / lambda_max`.
    pub upper: f64,
    pub estimate: CovarianceEstimate,
}

/// Points in the pre-scan that brackets the AR(1) likelihood minimum.
pub const AR1_GRID: usize = 100;

fn ar1_fit_from_power(power: &DVector<f64>, basis: &SpectralBasis) -> Result<Ar1Fit> {
    let lambda = basis.eigenvalues();
    let lambda_max = lambda.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if !(lambda_max > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let upper = (1.0 - 1e-6) / lambda_max;
    let f = |a: f64| ar1_objective(power, lambda, a);

    let grid: Vec<f64> = (0..AR1_GRID).map(|j| upper * j as f64 / (AR1_GRID - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&a| f(a)).collect();
    let j_best = (0..AR1_GRID).fold(0, |b, j| if values[j] < values[b] { j } else { b });

    let mut lo = grid[j_best.saturating_sub(1)];
    let mut hi = grid[(j_best + 1).min(AR1_GRID - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-14 * upper.max(f64::MIN_POSITIVE) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut alpha = 0.5 * (lo + hi);
    let mut objective = f(alpha);
    for (&a, &v) in grid.iter().zip(&values) {
        if v < objective {
            alpha = a;
            objective = v;
        }
    }

    let p = lambda.map(|l| (1.0 - alpha * l).powi(-2));
    let mut estimate = CovarianceEstimate::new(linalg::spectral_matrix(basis.eigenvectors(), &p), Method::Ar1Mle);
    estimate.params = Some(vec![alpha]);
    Ok(Ar1Fit {
        alpha,
        objective,
        upper,
        estimate,
    })
}

/// Gaussian maximum-likelihood AR(1) coefficient on `[0, (1 - 1e-6)/lambda_max]`.
pub fn fit_ar1_gaussian_mle(c: &DMatrix<f64>, basis: &SpectralBasis) -> Result<Ar1Fit> {
    let power = spectral_diagonal(basis, c)?;
    ar1_fit_from_power(&power, basis)
}

/// `||X^ - X||_F^2 / ||X||_F^2`.
pub fn rel_error(estimate: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != reference.shape() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            found: estimate.len(),
        });
    }
    let denom = reference.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((estimate - reference).norm_squared() / denom)
}

/// Model orders and options used when dispatching on a [`Method`] tag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub ma_order: usize,
    pub ar_order: usize,
    pub kernel: ModelKind,
    pub wirtinger: WirtingerOptions,
    pub kernel_opts: KernelOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            ma_order: 3,
            ar_order: 3,
            kernel: ModelKind::GaussianKernel,
            wirtinger: WirtingerOptions::default(),
            kernel_opts: KernelOptions::default(),
        }
    }
}

/// Runs one estimator on an ensemble.
///
/// PSD-based methods start from the periodogram; spatial fits start from the sample
/// covariance. A singular AR reconstruction yields an error-free `None`.
pub fn estimate(
    method: Method,
    basis: &SpectralBasis,
    s: &SignalEnsemble,
    cfg: &EstimatorConfig,
) -> Result<Option<CovarianceEstimate>> {
    check_rows(basis, s.nrows())?;
    Ok(Some(match method {
        Method::Sample => sample_covariance(s),
        Method::Correlogram => {
            let c = sample_covariance(s);
            psd_estimate(basis, &correlogram(basis, &c.matrix)?, Method::Correlogram)?
        }
        Method::Periodogram => psd_estimate(basis, &periodogram(basis, s)?, Method::Periodogram)?,
        Method::MaSpatial => {
            let c = sample_covariance(s);
            fit_ma_gamma(FitInput::Covariance(&c.matrix), basis, cfg.ma_order, Domain::Spatial)?.estimate
        }
        Method::MaSpectral => {
            let p = periodogram(basis, s)?;
            fit_ma_gamma(FitInput::Psd(&p), basis, cfg.ma_order, Domain::Spectral)?.estimate
        }
        Method::ArSpatial => {
            let c = sample_covariance(s);
            match fit_ar_eta(FitInput::Covariance(&c.matrix), basis, cfg.ar_order, Domain::Spatial)?.estimate {
                Some(e) => e,
                None => return Ok(None),
            }
        }
        Method::ArSpectral => {
            let p = periodogram(basis, s)?;
            match fit_ar_eta(FitInput::Psd(&p), basis, cfg.ar_order, Domain::Spectral)?.estimate {
                Some(e) => e,
                None => return Ok(None),
            }
        }
        Method::Wirtinger => {
            let p = periodogram(basis, s)?;
            fit_ma_beta_wirtinger(&p, basis, cfg.ma_order, cfg.wirtinger)?.estimate(basis)
        }
        Method::Kernel => {
            let p = periodogram(basis, s)?;
            fit_spectral_params(&p, basis, cfg.kernel, cfg.kernel_opts)?.estimate
        }
        Method::Ar1Mle => {
            // diag(U^T C U) of the sample covariance is exactly the periodogram
            let p = periodogram(basis, s)?;
            ar1_fit_from_power(p.values(), basis)?.estimate
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{eigendecompose, TopologicalOperator};

    fn diag_basis(values: &[f64]) -> SpectralBasis {
        let m = DMatrix::from_diagonal(&DVector::from_vec(values.to_vec()));
        eigendecompose(&TopologicalOperator::custom(m).unwrap()).unwrap()
    }

    #[test]
    fn sample_covariance_single_column() {
        let s = SignalEnsemble::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]));
        let c = sample_covariance(&s);
        assert_eq!(c.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert_eq!(c.method, Method::Sample);
    }

    #[test]
    fn orthogonal_columns_give_scaled_projector() {
        // columns e1*sqrt(2), e2*sqrt(2) over M = 2 -> projector onto span(e1, e2)
        let r = 2f64.sqrt();
        let s = SignalEnsemble::new(DMatrix::from_column_slice(3, 2, &[r, 0.0, 0.0, 0.0, r, 0.0]));
        let c = sample_covariance(&s).matrix;
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((c - expected).amax() < 1e-15);
    }

    #[test]
    fn periodogram_identity_basis() {
        let basis = diag_basis(&[0.0, 1.0]);
        let s = SignalEnsemble::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]));
        let p = periodogram(&basis, &s).unwrap();
        assert_eq!(p.values().as_slice(), &[1.0, 4.0]);
        assert!(periodogram(&basis, &SignalEnsemble::new(DMatrix::zeros(3, 1))).is_err());
    }

    #[test]
    fn psd_to_cov_identity_and_rank_one() {
        let c = crate::complex::random_complex(6, 0.7, 0.5, 2).unwrap();
        let basis = eigendecompose(&crate::spectral::dirac(&c).unwrap()).unwrap();
        let n = basis.dim();
        let id = psd_to_cov(&basis, &Psd::new(DVector::from_element(n, 1.0))).unwrap();
        assert!((id - DMatrix::<f64>::identity(n, n)).amax() < 1e-12);
        let mut e = DVector::zeros(n);
        e[2] = 1.0;
        let r1 = psd_to_cov(&basis, &Psd::new(e)).unwrap();
        let u = basis.eigenvectors().column(2);
        assert!((r1 - &u * u.transpose()).amax() < 1e-14);
        assert!(psd_to_cov(&basis, &Psd::new(DVector::zeros(n + 1))).is_err());
    }

    #[test]
    fn ma_exact_vandermonde() {
        let basis = diag_basis(&[0.0, 1.0, 2.0]);
        let p = Psd::new(DVector::from_vec(vec![1.0, 1.75, 3.0]));
        for domain in [Domain::Spatial, Domain::Spectral] {
            let fit = fit_ma_gamma(FitInput::Psd(&p), &basis, 2, domain).unwrap();
            let raw = fit.gamma.raw();
            for (a, b) in raw.iter().zip([1.0, 0.5, 0.25]) {
                assert!((a - b).abs() < 1e-12, "{raw:?}");
            }
            assert!(fit.estimate.flags.is_empty());
        }
    }

    #[test]
    fn ma_order_one_is_a_weighted_mean() {
        let basis = diag_basis(&[0.0, 1.0, 2.0]);
        let p = Psd::new(DVector::from_vec(vec![1.0, 2.0, 6.0]));
        let fit = fit_ma_gamma(FitInput::Psd(&p), &basis, 1, Domain::Spectral).unwrap();
        assert!((fit.gamma.raw()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ma_rank_deficiency_is_flagged() {
        let basis = diag_basis(&[1.0, 1.0, 2.0]);
        let p = Psd::new(DVector::from_vec(vec![1.0, 1.0, 2.0]));
        let fit = fit_ma_gamma(FitInput::Psd(&p), &basis, 2, Domain::Spectral).unwrap();
        assert!(fit.estimate.flags.contains(&EstimateFlag::RankDeficientVandermonde));
    }

    #[test]
    fn ar_exact_first_order() {
        let basis = diag_basis(&[0.0, 0.5, 1.0, 2.0]);
        let p = Psd::new(basis.eigenvalues().map(|l| (1.0 - 0.3 * l).powi(-2)));
        for domain in [Domain::Spatial, Domain::Spectral] {
            let fit = fit_ar_eta(FitInput::Psd(&p), &basis, 1, domain).unwrap();
            let raw = fit.eta.raw();
            assert!((raw[0] - 0.6).abs() < 1e-8 && (raw[1] + 0.09).abs() < 1e-8, "{raw:?}");
            assert!(fit.estimate.is_some());
        }
    }

    #[test]
    fn ar_white_noise_gives_zero_eta() {
        let basis = diag_basis(&[0.0, 1.0, 2.0, 3.0]);
        let p = Psd::new(DVector::from_element(4, 1.0));
        let c = DMatrix::<f64>::identity(4, 4);
        for (input, domain) in [
            (FitInput::Psd(&p), Domain::Spectral),
            (FitInput::Covariance(&c), Domain::Spatial),
        ] {
            let fit = fit_ar_eta(input, &basis, 1, domain).unwrap();
            assert!(fit.eta.normalized.iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn ar_negative_denominator_is_flagged() {
        // 1/p = 1 + lambda - lambda^2 is fitted exactly and turns negative at lambda = 2, 3
        let basis = diag_basis(&[0.0, 1.0, 2.0, 3.0]);
        let p = Psd::new(basis.eigenvalues().map(|l| 1.0 / (1.0 + l - l * l)));
        let fit = fit_ar_eta(FitInput::Psd(&p), &basis, 1, Domain::Spectral).unwrap();
        let raw = fit.eta.raw();
        assert!((raw[0] + 1.0).abs() < 1e-9 && (raw[1] - 1.0).abs() < 1e-9, "{raw:?}");
        let est = fit.estimate.unwrap();
        assert!(est.flags.contains(&EstimateFlag::NotPositiveSemidefinite));
    }

    #[test]
    fn wirtinger_zero_target() {
        let basis = diag_basis(&[0.0, 1.0, 2.0]);
        let fit =
            fit_ma_beta_wirtinger(&Psd::new(DVector::zeros(3)), &basis, 2, WirtingerOptions::default()).unwrap();
        assert!(fit.beta.normalized.iter().all(|&x| x == 0.0));
        assert!(fit.converged);
    }

    #[test]
    fn wirtinger_recovers_taps() {
        let lambdas: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        let basis = diag_basis(&lambdas);
        let beta = [1.0, 0.4, 0.1];
        let p = Psd::new(basis.eigenvalues().map(|l| (beta[0] + beta[1] * l + beta[2] * l * l).powi(2)));
        let fit = fit_ma_beta_wirtinger(&p, &basis, 3, WirtingerOptions::default()).unwrap();
        assert!(fit.loss < 1e-12, "loss {}", fit.loss);
        let raw = fit.beta.raw();
        let sign = raw[0].signum();
        for (a, b) in raw.iter().zip(beta) {
            assert!((sign * a - b).abs() < 1e-6, "{raw:?}");
        }
        assert!(fit.losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn kernel_fits() {
        let lambdas: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        let basis = diag_basis(&lambdas);
        let p = Psd::new(basis.eigenvalues().map(|l| (-2.0 * l * l).exp()));
        let g = fit_spectral_params(&p, &basis, ModelKind::GaussianKernel, KernelOptions::default()).unwrap();
        assert!((g.model.params()[0] - 2.0).abs() < 1e-3);
        let l = fit_spectral_params(&p, &basis, ModelKind::LaplacianKernel, KernelOptions::default()).unwrap();
        assert!(g.residual <= l.residual);

        let flat = Psd::new(DVector::from_element(12, 1.0));
        let e = fit_spectral_params(&flat, &basis, ModelKind::Exponential, KernelOptions::default()).unwrap();
        assert!(e.model.params()[0].abs() < 1e-6);
        assert!(fit_spectral_params(&flat, &basis, ModelKind::LowPassRational, KernelOptions::default()).is_err());
    }

    #[test]
    fn ar1_white_noise_and_degenerate() {
        let basis = diag_basis(&[0.0, 1.0, 2.0]);
        let fit = fit_ar1_gaussian_mle(&DMatrix::identity(3, 3), &basis).unwrap();
        assert!(fit.alpha.abs() < 1e-9, "alpha {}", fit.alpha);
        let zero = diag_basis(&[0.0, 0.0]);
        assert!(matches!(
            fit_ar1_gaussian_mle(&DMatrix::identity(2, 2), &zero),
            Err(Error::DegenerateSpectrum)
        ));
    }

    #[test]
    fn ar1_exact_covariance() {
        let basis = diag_basis(&[0.0, 0.5, 1.0, 1.5, 2.0]);
        let alpha = 0.2;
        let c = DMatrix::from_diagonal(&basis.eigenvalues().map(|l| (1.0 - alpha * l).powi(-2)));
        let fit = fit_ar1_gaussian_mle(&c, &basis).unwrap();
        assert!((fit.alpha - alpha).abs() < 1e-7, "alpha {}", fit.alpha);
    }

    #[test]
    fn rel_error_cases() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rel_error(&x, &x).unwrap(), 0.0);
        assert_eq!(rel_error(&DMatrix::zeros(2, 2), &x).unwrap(), 1.0);
        assert_eq!(rel_error(&(&x * 2.0), &x).unwrap(), 1.0);
        assert!(matches!(rel_error(&x, &DMatrix::zeros(2, 2)), Err(Error::ZeroReference)));
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_tag(m.tag()), Some(m));
        }
        assert_eq!(Method::from_tag("nope"), None);
    }
}
