//! Oracles and fixtures shared by the integration tests.
//!
//! Everything here is computed independently of the library's numerical paths: ranks by
//! exact fraction-free elimination, least-squares fits on vectorized matrices, and signal
//! subspaces from the incidence matrices rather than from an eigenbasis.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use topostat::complex::random_complex;
use topostat::SimplicialComplex;

/// Rank over the rationals by Bareiss elimination in checked `i128`.
pub fn exact_rank(m: &DMatrix<i64>) -> usize {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<i128>> = (0..rows).map(|i| (0..cols).map(|j| m[(i, j)] as i128).collect()).collect();
    let mut rank = 0;
    let mut prev: i128 = 1;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(p) = (rank..rows).find(|&i| a[i][col] != 0) else {
            continue;
        };
        a.swap(rank, p);
        let pivot = a[rank][col];
        for i in rank + 1..rows {
            let factor = a[i][col];
            for j in col + 1..cols {
                let num = pivot
                    .checked_mul(a[i][j])
                    .and_then(|x| x.checked_sub(factor.checked_mul(a[rank][j])?))
                    .expect("Bareiss overflow");
                debug_assert_eq!(num % prev, 0);
                a[i][j] = num / prev;
            }
            a[i][col] = 0;
        }
        prev = pivot;
        rank += 1;
    }
    rank
}

pub struct CorpusEntry {
    pub seed: u64,
    pub n0: usize,
    pub p_edge: f64,
    pub p_tri: f64,
    pub complex: SimplicialComplex,
}

/// Deterministic corpus of random order-2 complexes with `4 <= n0 <= 15`.
pub fn corpus(count: usize) -> Vec<CorpusEntry> {
    (0..count as u64)
        .map(|seed| {
            let n0 = 4 + (seed % 12) as usize;
            let p_edge = 0.3 + 0.05 * (seed % 9) as f64;
            let p_tri = 0.2 + 0.1 * (seed % 7) as f64;
            let complex = random_complex(n0, p_edge, p_tri, 1000 + seed).expect("valid parameters");
            CorpusEntry {
                seed: 1000 + seed,
                n0,
                p_edge,
                p_tri,
                complex,
            }
        })
        .collect()
}

/// `[B_k, B_{k+1}]` as dense integer matrices; `None` where the order is absent.
pub fn dense_incidences(c: &SimplicialComplex, k: usize) -> (Option<DMatrix<i64>>, Option<DMatrix<i64>>) {
    let lower = (k >= 1).then(|| c.incidence(k).unwrap().to_dense());
    let upper = (k < c.order()).then(|| c.incidence(k + 1).unwrap().to_dense());
    (lower, upper)
}

/// Orthogonal projector onto the column space of `a` (via SVD with a relative cutoff).
pub fn range_projector(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 || a.amax() == 0.0 {
        return DMatrix::zeros(n, n);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.max();
    let mut p = DMatrix::zeros(n, n);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-10 * smax {
            let col = u.column(j);
            p += &col * col.transpose();
        }
    }
    p
}

/// Least squares through SVD, used as an oracle for the library's fits.
pub fn svd_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().svd(true, true).solve(b, 1e-12 * a.amax().max(1.0)).unwrap()
}

/// Columns `vec(X T^r)` for `r` in `powers`.
pub fn vec_design(x: &DMatrix<f64>, t: &DMatrix<f64>, powers: std::ops::Range<u32>) -> DMatrix<f64> {
    let n = t.nrows();
    let mut pow = DMatrix::<f64>::identity(n, n);
    for _ in 0..powers.start {
        pow = &pow * t;
    }
    let mut cols = Vec::new();
    for _ in powers {
        let m = x * &pow;
        cols.push(DVector::from_column_slice(m.as_slice()));
        pow = &pow * t;
    }
    DMatrix::from_columns(&cols)
}

/// Spatial MA objective `min ||C - sum gamma_r T^r||_F` solved on all `N^2` entries.
pub fn ma_spatial_oracle(c: &DMatrix<f64>, t: &DMatrix<f64>, order: usize) -> DVector<f64> {
    let n = t.nrows();
    let design = vec_design(&DMatrix::identity(n, n), t, 0..(2 * order - 1) as u32);
    svd_lstsq(&design, &DVector::from_column_slice(c.as_slice()))
}

/// Spatial AR objective `min ||C (I - sum eta_r T^r) - I||_F` solved on all `N^2` entries.
pub fn ar_spatial_oracle(c: &DMatrix<f64>, t: &DMatrix<f64>, order: usize) -> DVector<f64> {
    let n = t.nrows();
    let design = vec_design(c, t, 1..(2 * order + 1) as u32);
    let rhs = c - DMatrix::<f64>::identity(n, n);
    svd_lstsq(&design, &DVector::from_column_slice(rhs.as_slice()))
}

/// Coefficients of the product of two polynomials.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
