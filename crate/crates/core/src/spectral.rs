//! Hodge Laplacians, the Dirac operator and their eigenbases.
//!
//! All operators are assembled from exact integer incidence products and converted to `f64`
//! once. Bases are deterministic: eigenvalues ascend, every eigenvector has its
//! largest-magnitude entry positive, and degenerate eigenspaces of a Hodge Laplacian are
//! rotated so that each column lies in exactly one of the gradient, curl or harmonic
//! subspaces.

use nalgebra::{DMatrix, DVector};

use crate::complex::SimplicialComplex;
use crate::error::{Error, Result};
use crate::linalg;

/// Which operator a matrix or basis came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    /// Hodge Laplacian `L_k` of order `k`.
    Hodge(usize),
    /// Multiorder Dirac operator `D`.
    Dirac,
    /// Any user-supplied symmetric matrix.
    Custom,
}

/// Hodge component a basis vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subspace {
    Gradient,
    Curl,
    Harmonic,
}

impl Subspace {
    pub const ALL: [Subspace; 3] = [Subspace::Gradient, Subspace::Curl, Subspace::Harmonic];

    pub fn name(self) -> &'static str {
        match self {
            Subspace::Gradient => "gradient",
            Subspace::Curl => "curl",
            Subspace::Harmonic => "harmonic",
        }
    }
}

/// A real symmetric topological shift operator.
#[derive(Clone, Debug)]
pub struct TopologicalOperator {
    kind: OperatorKind,
    matrix: DMatrix<f64>,
    lower: Option<DMatrix<f64>>,
    upper: Option<DMatrix<f64>>,
    offsets: Vec<usize>,
}

/// `L_k = B_k^T B_k + B_{k+1} B_{k+1}^T`, with the missing term dropped at `k = 0` and `k = K`.
pub fn hodge_laplacian(complex: &SimplicialComplex, k: usize) -> Result<TopologicalOperator> {
    let (lower, upper) = hodge_parts_exact(complex, k)?;
    let n = complex.count(k);
    let mut total = DMatrix::<i64>::zeros(n, n);
    if let Some(l) = &lower {
        total += l;
    }
    if let Some(u) = &upper {
        total += u;
    }
    Ok(TopologicalOperator {
        kind: OperatorKind::Hodge(k),
        matrix: total.map(|x| x as f64),
        lower: lower.map(|m| m.map(|x| x as f64)),
        upper: upper.map(|m| m.map(|x| x as f64)),
        offsets: vec![0, n],
    })
}

/// Exact lower and upper parts of `L_k`.
pub fn hodge_parts_exact(
    complex: &SimplicialComplex,
    k: usize,
) -> Result<(Option<DMatrix<i64>>, Option<DMatrix<i64>>)> {
    let top = complex.order();
    if k > top {
        return Err(Error::OrderOutOfRange { k, max: top });
    }
    let lower = if k >= 1 {
        Some(complex.incidence(k)?.inner_gram())
    } else {
        None
    };
    let upper = if k < top {
        Some(complex.incidence(k + 1)?.outer_gram())
    } else {
        None
    };
    Ok((lower, upper))
}

/// The Dirac operator as an exact integer matrix.
///
/// Rows and columns follow the concatenation of orders `0..=K`; the block coupling orders
/// `k - 1` (rows) and `k` (columns) is `B_k`, and its mirror is `B_k^T`.
pub fn dirac_exact(complex: &SimplicialComplex) -> Result<DMatrix<i64>> {
    let offsets = complex.offsets();
    let n = complex.total();
    let mut d = DMatrix::<i64>::zeros(n, n);
    for k in 1..=complex.order() {
        let b = complex.incidence(k)?;
        let (r0, c0) = (offsets[k - 1], offsets[k]);
        for m in 0..b.ncols() {
            for &(row, sign) in b.column(m) {
                d[(r0 + row, c0 + m)] = i64::from(sign);
                d[(c0 + m, r0 + row)] = i64::from(sign);
            }
        }
    }
    Ok(d)
}

/// Multiorder Dirac operator `D`, with `D^2 = blkdiag(L_0, ..., L_K)`.
pub fn dirac(complex: &SimplicialComplex) -> Result<TopologicalOperator> {
    Ok(TopologicalOperator {
        kind: OperatorKind::Dirac,
        matrix: dirac_exact(complex)?.map(|x| x as f64),
        lower: None,
        upper: None,
        offsets: complex.offsets(),
    })
}

impl TopologicalOperator {
    /// Wraps an arbitrary symmetric matrix.
    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let n = matrix.nrows();
        let mut matrix = matrix;
        linalg::symmetrize(&mut matrix);
        Ok(Self {
            kind: OperatorKind::Custom,
            matrix,
            lower: None,
            upper: None,
            offsets: vec![0, n],
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `B_k^T B_k` for Hodge operators with `k >= 1`.
    pub fn lower(&self) -> Option<&DMatrix<f64>> {
        self.lower.as_ref()
    }

    /// `B_{k+1} B_{k+1}^T` for Hodge operators with `k < K`.
    pub fn upper(&self) -> Option<&DMatrix<f64>> {
        self.upper.as_ref()
    }

    /// Per-order row offsets (`[0, N_op]` for single-order operators).
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// The operator multiplied by a positive `factor`, keeping its kind and Hodge parts.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        check_factor(factor)?;
        Ok(Self {
            kind: self.kind,
            matrix: &self.matrix * factor,
            lower: self.lower.as_ref().map(|m| m * factor),
            upper: self.upper.as_ref().map(|m| m * factor),
            offsets: self.offsets.clone(),
        })
    }
}

fn check_factor(factor: f64) -> Result<()> {
    if factor > 0.0 && factor.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidFilter(format!("operator scale must be positive, got {factor}")))
    }
}

/// Eigenbasis of a topological operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    labels: Option<Vec<Subspace>>,
    kind: OperatorKind,
    offsets: Vec<usize>,
}

/// Threshold on `||B_k u||^2` and `||B_{k+1}^T u||^2` when classifying basis vectors.
pub const SUBSPACE_TOLERANCE: f64 = 1e-8;

/// Diagonalizes `op`; Hodge bases additionally get gradient/curl/harmonic labels.
pub fn eigendecompose(op: &TopologicalOperator) -> Result<SpectralBasis> {
    let (mut values, mut vectors) = linalg::sym_eigen(op.matrix.clone())?;
    let n = values.len();
    let lambda_max = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tau0 = 1e-8 * lambda_max.max(1.0);

    let labels = match op.kind {
        OperatorKind::Hodge(_) => {
            let mut labels = vec![Subspace::Harmonic; n];
            let mut start = 0;
            while start < n {
                let mut end = start + 1;
                while end < n && values[end] - values[end - 1] < tau0 {
                    end += 1;
                }
                label_cluster(op, &mut values, &mut vectors, start..end, tau0, &mut labels)?;
                start = end;
            }
            Some(labels)
        }
        _ => None,
    };

    for mut col in vectors.column_iter_mut() {
        let peak = col.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let pivot = col
            .iter()
            .position(|&x| x.abs() >= peak * (1.0 - 1e-9))
            .unwrap_or(0);
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }

    Ok(SpectralBasis {
        eigenvalues: values,
        eigenvectors: vectors,
        labels,
        kind: op.kind,
        offsets: op.offsets.clone(),
    })
}

/// Splits one eigenvalue cluster of a Hodge Laplacian into gradient and curl directions.
fn label_cluster(
    op: &TopologicalOperator,
    values: &mut DVector<f64>,
    vectors: &mut DMatrix<f64>,
    range: std::ops::Range<usize>,
    tau0: f64,
    labels: &mut [Subspace],
) -> Result<()> {
    let mean = values.rows(range.start, range.len()).mean();
    if mean.abs() <= tau0 {
        for i in range {
            labels[i] = Subspace::Harmonic;
        }
        return Ok(());
    }
    let q = vectors.columns(range.start, range.len()).into_owned();
    let rotated = match &op.lower {
        Some(lower) if range.len() > 1 => {
            let small = q.transpose() * lower * &q;
            let (_, v) = linalg::sym_eigen(small)?;
            &q * v
        }
        _ => q,
    };
    let zero = |u: &DVector<f64>, m: &Option<DMatrix<f64>>| m.as_ref().map_or(0.0, |m| u.dot(&(m * u)));
    let mut columns: Vec<(f64, Subspace, DVector<f64>)> = rotated
        .column_iter()
        .map(|c| {
            let u = c.into_owned();
            let grad = zero(&u, &op.lower);
            let curl = zero(&u, &op.upper);
            let label = if grad > SUBSPACE_TOLERANCE && curl <= SUBSPACE_TOLERANCE {
                Subspace::Gradient
            } else if curl > SUBSPACE_TOLERANCE && grad <= SUBSPACE_TOLERANCE {
                Subspace::Curl
            } else if grad >= curl {
                Subspace::Gradient
            } else {
                Subspace::Curl
            };
            let rayleigh = u.dot(&(&op.matrix * &u));
            (rayleigh, label, u)
        })
        .collect();
    columns.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (offset, (rayleigh, label, u)) in columns.into_iter().enumerate() {
        let i = range.start + offset;
        values[i] = rayleigh;
        vectors.set_column(i, &u);
        labels[i] = label;
    }
    Ok(())
}

impl SpectralBasis {
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn labels(&self) -> Option<&[Subspace]> {
        self.labels.as_deref()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Basis of `factor * T`: same eigenvectors and labels, scaled eigenvalues.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        check_factor(factor)?;
        let mut out = self.clone();
        out.eigenvalues *= factor;
        Ok(out)
    }

    /// Largest eigenvalue magnitude, or 1 for the zero operator.
    pub fn scale(&self) -> f64 {
        let m = self.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    /// Zero-eigenvalue tolerance `1e-8 * max(lambda_max, 1)`.
    pub fn zero_tolerance(&self) -> f64 {
        let m = self.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        1e-8 * m.max(1.0)
    }

    /// Number of distinct eigenvalues, clustering within the zero tolerance.
    pub fn distinct_eigenvalues(&self) -> usize {
        let tol = self.zero_tolerance();
        let v = self.eigenvalues.as_slice();
        if v.is_empty() {
            return 0;
        }
        1 + v.windows(2).filter(|w| w[1] - w[0] >= tol).count()
    }

    /// Column indices carrying `label`.
    pub fn indices(&self, label: Subspace) -> Result<Vec<usize>> {
        let labels = self.labels.as_ref().ok_or(Error::UnlabeledBasis)?;
        Ok(labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect())
    }

    /// Selected eigenvector columns.
    pub fn columns(&self, indices: &[usize]) -> DMatrix<f64> {
        self.eigenvectors.select_columns(indices)
    }

    /// `U_X` for a Hodge subspace.
    pub fn subspace(&self, label: Subspace) -> Result<DMatrix<f64>> {
        Ok(self.columns(&self.indices(label)?))
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rows,
            });
        }
        Ok(())
    }

    /// Topological Fourier transform `U^T X`.
    pub fn tft(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x.nrows())?;
        Ok(self.eigenvectors.tr_mul(x))
    }

    /// Inverse transform `U X~`.
    pub fn itft(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x.nrows())?;
        Ok(&self.eigenvectors * x)
    }

    /// Energies `(E_G, E_C, E_H)` of `s` in the three Hodge subspaces.
    pub fn subspace_energies(&self, s: &DVector<f64>) -> Result<[f64; 3]> {
        let labels = self.labels.as_ref().ok_or(Error::UnlabeledBasis)?;
        self.check_rows(s.len())?;
        let coeffs = self.eigenvectors.tr_mul(s);
        let mut energies = [0.0; 3];
        for (c, label) in coeffs.iter().zip(labels) {
            energies[*label as usize] += c * c;
        }
        Ok(energies)
    }

    /// Subspace with the largest energy; ties go to gradient, then curl.
    pub fn detect_subspace(&self, s: &DVector<f64>) -> Result<Subspace> {
        let e = self.subspace_energies(s)?;
        let mut best = Subspace::Gradient;
        for label in [Subspace::Curl, Subspace::Harmonic] {
            if e[label as usize] > e[best as usize] {
                best = label;
            }
        }
        Ok(best)
    }

    /// Orthogonal Hodge components `(s_G, s_C, s_H)`.
    pub fn hodge_project(&self, s: &DVector<f64>) -> Result<[DVector<f64>; 3]> {
        let labels = self.labels.as_ref().ok_or(Error::UnlabeledBasis)?;
        self.check_rows(s.len())?;
        let coeffs = self.eigenvectors.tr_mul(s);
        let mut parts = [
            DVector::zeros(s.len()),
            DVector::zeros(s.len()),
            DVector::zeros(s.len()),
        ];
        for (i, label) in labels.iter().enumerate() {
            parts[*label as usize].axpy(coeffs[i], &self.eigenvectors.column(i), 1.0);
        }
        Ok(parts)
    }
}
