//! Signal recovery under stationarity: Wiener denoising and interpolation from partial
//! observations.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use crate::error::{Error, Result};
use crate::estimation::{Domain, Psd};
use crate::linalg;
use crate::rng;
use crate::signals::SignalEnsemble;
use crate::spectral::{OperatorKind, SpectralBasis, TopologicalOperator};

/// Observed rows of an `N`-row signal, the selection matrix `Theta` in index form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMask {
    n: usize,
    observed: Vec<usize>,
}

impl SelectionMask {
    pub fn new(n: usize, observed: Vec<usize>) -> Result<Self> {
        if let Some(w) = observed.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMask(format!(
                "indices must be strictly ascending ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(&last) = observed.last() {
            if last >= n {
                return Err(Error::InvalidMask(format!("index {last} is out of range for {n} rows")));
            }
        }
        Ok(Self { n, observed })
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            observed: (0..n).collect(),
        }
    }

    /// `count` rows drawn uniformly without replacement.
    pub fn random(n: usize, count: usize, seed: u64) -> Result<Self> {
        if count > n {
            return Err(Error::InvalidMask(format!("cannot observe {count} of {n} rows")));
        }
        let mut rng = rng::stream(seed, 0);
        let mut observed = index::sample(&mut rng, n, count).into_vec();
        observed.sort_unstable();
        Ok(Self { n, observed })
    }

    /// Every row belonging to the listed orders, given per-order row offsets.
    pub fn from_orders(offsets: &[usize], orders: &[usize]) -> Result<Self> {
        let n = offsets.last().copied().unwrap_or(0);
        let mut observed = Vec::new();
        for k in 0..offsets.len().saturating_sub(1) {
            if orders.contains(&k) {
                observed.extend(offsets[k]..offsets[k + 1]);
            }
        }
        if let Some(&k) = orders.iter().find(|&&k| k + 1 >= offsets.len()) {
            return Err(Error::InvalidMask(format!("order {k} has no rows")));
        }
        Ok(Self { n, observed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn unobserved(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        for &i in &self.observed {
            seen[i] = true;
        }
        (0..self.n).filter(|&i| !seen[i]).collect()
    }

    /// `Theta x`.
    pub fn gather(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x.nrows(), self.n)?;
        Ok(x.select_rows(&self.observed))
    }

    /// `Theta^T y`, the zero-filled signal.
    pub fn scatter(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(y.nrows(), self.len())?;
        let mut out = DMatrix::zeros(self.n, y.ncols());
        for (r, &i) in self.observed.iter().enumerate() {
            out.row_mut(i).copy_from(&y.row(r));
        }
        Ok(out)
    }

    /// Dense `P x N` selection matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut theta = DMatrix::zeros(self.len(), self.n);
        for (r, &i) in self.observed.iter().enumerate() {
            theta[(r, i)] = 1.0;
        }
        theta
    }

    fn check_rows(&self, found: usize, expected: usize) -> Result<()> {
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
        Ok(())
    }
}

/// Degenerate conditions met during recovery; the returned signal is still usable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecoveryFlag {
    /// Nothing was observed; the prior mean (zero) is returned.
    EmptyMask,
    /// The observation-space system needed a ridge to factor.
    Ridge,
    /// The regularized system is singular; the minimum-norm solution is returned.
    SingularSystem,
}

impl RecoveryFlag {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryFlag::EmptyMask => "empty-mask",
            RecoveryFlag::Ridge => "ridge",
            RecoveryFlag::SingularSystem => "singular-system",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovered {
    pub signals: DMatrix<f64>,
    pub flags: Vec<RecoveryFlag>,
}

fn check_noise(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveNoiseVariance(sigma2))
    }
}

/// Wiener frequency response `p_i / (p_i + sigma2)`.
pub fn wiener_gain(p: &DVector<f64>, sigma2: f64) -> DVector<f64> {
    p.map(|x| x / (x + sigma2))
}

/// MMSE denoising of a stationary ensemble observed in white noise of variance `sigma2`.
pub fn wiener_denoise(
    basis: &SpectralBasis,
    p: &Psd,
    sigma2: f64,
    y: &SignalEnsemble,
    path: Domain,
) -> Result<SignalEnsemble> {
    check_noise(sigma2)?;
    let n = basis.dim();
    for (found, expected) in [(p.len(), n), (y.nrows(), n)] {
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
    }
    if p.values().iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::NonpositivePsd);
    }
    let u = basis.eigenvectors();
    let out = match path {
        Domain::Spectral => {
            let mut coeffs = u.tr_mul(y.data());
            let g = wiener_gain(p.values(), sigma2);
            for (i, mut row) in coeffs.row_iter_mut().enumerate() {
                row *= g[i];
            }
            u * coeffs
        }
        Domain::Spatial => {
            let c = linalg::spectral_matrix(u, p.values());
            let mut shifted = c.clone();
            for i in 0..n {
                shifted[(i, i)] += sigma2;
            }
            let (x, _) = linalg::solve_psd(&shifted, y.data())?;
            c * x
        }
    };
    SignalEnsemble::with_offsets(out, y.offsets().to_vec())
}

fn empty_result(mask: &SelectionMask, cols: usize) -> Recovered {
    Recovered {
        signals: DMatrix::zeros(mask.n(), cols),
        flags: vec![RecoveryFlag::EmptyMask],
    }
}

/// Linear MMSE interpolation `C Theta^T (Theta C Theta^T + sigma2 I)^{-1} s_bar`.
///
/// Works in observation space, so singular `C` needs no inverse.
pub fn interpolate_map(
    c: &DMatrix<f64>,
    mask: &SelectionMask,
    sigma2: f64,
    observed: &DMatrix<f64>,
) -> Result<Recovered> {
    check_noise(sigma2)?;
    if c.nrows() != mask.n() || c.ncols() != mask.n() {
        return Err(Error::DimensionMismatch {
            expected: mask.n(),
            found: c.nrows(),
        });
    }
    if observed.nrows() != mask.len() {
        return Err(Error::DimensionMismatch {
            expected: mask.len(),
            found: observed.nrows(),
        });
    }
    if mask.is_empty() {
        return Ok(empty_result(mask, observed.ncols()));
    }
    let idx = mask.observed();
    let c_cols = c.select_columns(idx);
    let mut sys = c_cols.select_rows(idx);
    linalg::symmetrize(&mut sys);
    let p = idx.len();
    let trace = sys.trace();
    for i in 0..p {
        sys[(i, i)] += sigma2;
    }
    let mut flags = Vec::new();
    let x = match sys.clone().cholesky() {
        Some(chol) => chol.solve(observed),
        None => {
            flags.push(RecoveryFlag::Ridge);
            let ridge = 1e-10 * trace.abs().max(f64::MIN_POSITIVE) / p as f64;
            for i in 0..p {
                sys[(i, i)] += ridge;
            }
            match sys.clone().cholesky() {
                Some(chol) => chol.solve(observed),
                None => linalg::solve_psd(&sys, observed)?.0,
            }
        }
    };
    Ok(Recovered {
        signals: c_cols * x,
        flags,
    })
}

/// Prior precision used by regularized interpolation.
#[derive(Clone, Debug)]
pub enum PrecisionSpec {
    /// `C^{-1}` through the eigendecomposition of `C`, eigenvalues floored at `ridge`
    /// (default `1e-6` times the largest).
    FromCovariance { covariance: DMatrix<f64>, ridge: Option<f64> },
    /// `U diag(1 / max(p, ridge)) U^T`.
    FromPsd {
        eigenvectors: DMatrix<f64>,
        psd: DVector<f64>,
        ridge: Option<f64>,
    },
    /// `L_k` for a Hodge Laplacian, `D^2` for the Dirac operator, `T^2` otherwise.
    Smoothness(TopologicalOperator),
    /// `(I - alpha T)^2 = I - 2 alpha T + alpha^2 T^2`.
    Sem { alpha: f64, operator: TopologicalOperator },
    /// `sum_j w_j Q_j`; fitted with unit data weight instead of `sigma2`.
    Mixed(Vec<(f64, PrecisionSpec)>),
}

impl PrecisionSpec {
    pub fn from_psd(basis: &SpectralBasis, p: &Psd, ridge: Option<f64>) -> Self {
        PrecisionSpec::FromPsd {
            eigenvectors: basis.eigenvectors().clone(),
            psd: p.values().clone(),
            ridge,
        }
    }

    /// Materialized `N x N` precision matrix.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        match self {
            PrecisionSpec::FromCovariance { covariance, ridge } => {
                let mut c = covariance.clone();
                linalg::symmetrize(&mut c);
                let (values, vectors) = linalg::sym_eigen(c)?;
                inverse_spectrum(&vectors, &values, *ridge)
            }
            PrecisionSpec::FromPsd {
                eigenvectors,
                psd,
                ridge,
            } => {
                if eigenvectors.ncols() != psd.len() {
                    return Err(Error::DimensionMismatch {
                        expected: eigenvectors.ncols(),
                        found: psd.len(),
                    });
                }
                inverse_spectrum(eigenvectors, psd, *ridge)
            }
            PrecisionSpec::Smoothness(op) => Ok(match op.kind() {
                OperatorKind::Hodge(_) => op.matrix().clone(),
                _ => op.matrix() * op.matrix(),
            }),
            PrecisionSpec::Sem { alpha, operator } => {
                let t = operator.matrix();
                let mut shifted = -(t * *alpha);
                for i in 0..t.nrows() {
                    shifted[(i, i)] += 1.0;
                }
                let mut q = shifted.transpose() * &shifted;
                linalg::symmetrize(&mut q);
                Ok(q)
            }
            PrecisionSpec::Mixed(parts) => {
                let mut total: Option<DMatrix<f64>> = None;
                for (w, spec) in parts {
                    let q = spec.precision()? * *w;
                    total = Some(match total {
                        None => q,
                        Some(acc) => {
                            if acc.shape() != q.shape() {
                                return Err(Error::DimensionMismatch {
                                    expected: acc.nrows(),
                                    found: q.nrows(),
                                });
                            }
                            acc + q
                        }
                    });
                }
                total.ok_or_else(|| Error::config("precision", "mixed precision needs at least one term"))
            }
        }
    }
}

fn inverse_spectrum(u: &DMatrix<f64>, p: &DVector<f64>, ridge: Option<f64>) -> Result<DMatrix<f64>> {
    let pmax = p.iter().fold(0.0f64, |m, &x| m.max(x));
    let eps = match ridge {
        Some(r) if r > 0.0 => r,
        Some(r) => return Err(Error::config("ridge", format!("ridge must be positive, got {r}"))),
        None => 1e-6 * pmax,
    };
    if !(eps > 0.0) {
        return Err(Error::NonpositivePsd);
    }
    Ok(linalg::spectral_matrix(u, &p.map(|x| 1.0 / x.max(eps))))
}

/// Minimizes `||s_bar - Theta s||^2 + w s^T Q s` with `w = sigma2`, or `w = 1` for
/// [`PrecisionSpec::Mixed`].
pub fn interpolate_regularized(
    prec: &PrecisionSpec,
    mask: &SelectionMask,
    sigma2: f64,
    observed: &DMatrix<f64>,
) -> Result<Recovered> {
    check_noise(sigma2)?;
    let q = prec.precision()?;
    interpolate_with_precision(&q, matches!(prec, PrecisionSpec::Mixed(_)), mask, sigma2, observed)
}

/// [`interpolate_regularized`] with an already materialized precision.
pub fn interpolate_with_precision(
    q: &DMatrix<f64>,
    unit_weight: bool,
    mask: &SelectionMask,
    sigma2: f64,
    observed: &DMatrix<f64>,
) -> Result<Recovered> {
    check_noise(sigma2)?;
    if q.nrows() != mask.n() || q.ncols() != mask.n() {
        return Err(Error::DimensionMismatch {
            expected: mask.n(),
            found: q.nrows(),
        });
    }
    let rhs = mask.scatter(observed)?;
    let w = if unit_weight { 1.0 } else { sigma2 };
    let mut sys = q * w;
    for &i in mask.observed() {
        sys[(i, i)] += 1.0;
    }
    linalg::symmetrize(&mut sys);
    let (signals, degenerate) = linalg::solve_psd(&sys, &rhs)?;
    Ok(Recovered {
        signals,
        flags: if degenerate {
            vec![RecoveryFlag::SingularSystem]
        } else {
            Vec::new()
        },
    })
}

/// MAP interpolation of a signal confined to `span(U_S)` with PSD `p_S` on that subspace.
pub fn interpolate_subspace(
    u_s: &DMatrix<f64>,
    p_s: &DVector<f64>,
    mask: &SelectionMask,
    sigma2: f64,
    observed: &DMatrix<f64>,
) -> Result<Recovered> {
    check_noise(sigma2)?;
    if u_s.nrows() != mask.n() {
        return Err(Error::DimensionMismatch {
            expected: mask.n(),
            found: u_s.nrows(),
        });
    }
    if p_s.len() != u_s.ncols() {
        return Err(Error::DimensionMismatch {
            expected: u_s.ncols(),
            found: p_s.len(),
        });
    }
    if observed.nrows() != mask.len() {
        return Err(Error::DimensionMismatch {
            expected: mask.len(),
            found: observed.nrows(),
        });
    }
    let deviation = linalg::orthonormality_deviation(u_s);
    if deviation > crate::estimation::ORTHONORMAL_TOLERANCE {
        return Err(Error::NonOrthonormalSubspace { deviation });
    }
    if p_s.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::NonpositivePsd);
    }
    let rows = u_s.select_rows(mask.observed());
    let mut sys = rows.tr_mul(&rows);
    for i in 0..sys.nrows() {
        sys[(i, i)] += sigma2 / p_s[i];
    }
    linalg::symmetrize(&mut sys);
    let (coeffs, degenerate) = linalg::solve_psd(&sys, &rows.tr_mul(observed))?;
    Ok(Recovered {
        signals: u_s * coeffs,
        flags: if degenerate {
            vec![RecoveryFlag::SingularSystem]
        } else {
            Vec::new()
        },
    })
}
