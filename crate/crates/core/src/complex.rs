//! Simplicial complexes, signed incidence matrices and the SCF text format.
//!
//! Simplices are stored per order as strictly ascending vertex lists, each order sorted
//! lexicographically. That ordering is the row/column indexing used by every matrix and
//! file in the crate.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub type Simplex = Vec<usize>;

/// A validated simplicial complex of order `K = simplices.len() - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimplicialComplex {
    simplices: Vec<Vec<Simplex>>,
    index: Vec<HashMap<Simplex, usize>>,
}

/// Checks the structural invariants of raw per-order simplex lists.
///
/// Order `k` must contain strictly ascending `(k+1)`-vertex lists, sorted lexicographically
/// without duplicates, every vertex must be below `N_0`, and every face of every simplex must
/// be present one order down.
pub fn validate(simplices: &[Vec<Simplex>]) -> Result<()> {
    let n0 = simplices.first().map_or(0, Vec::len);
    if n0 == 0 {
        return Err(Error::NoVertices);
    }
    for (order, list) in simplices.iter().enumerate() {
        for (position, simplex) in list.iter().enumerate() {
            if simplex.len() != order + 1 || simplex.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::UnsortedSimplex {
                    order,
                    simplex: simplex.clone(),
                    expected: order + 1,
                });
            }
            if simplex.iter().any(|&v| v >= n0) {
                return Err(Error::VertexOutOfRange {
                    simplex: simplex.clone(),
                    n0,
                });
            }
            if position > 0 {
                let prev = &list[position - 1];
                if prev == simplex {
                    return Err(Error::DuplicateSimplex {
                        order,
                        simplex: simplex.clone(),
                    });
                }
                if prev > simplex {
                    return Err(Error::UnsortedOrder { order, position });
                }
            }
        }
    }
    for order in 1..simplices.len() {
        let below = &simplices[order - 1];
        for simplex in &simplices[order] {
            for i in 0..simplex.len() {
                let face = face_without(simplex, i);
                if below.binary_search(&face).is_err() {
                    return Err(Error::MissingFace {
                        simplex: simplex.clone(),
                        face,
                    });
                }
            }
        }
    }
    Ok(())
}

fn face_without(simplex: &[usize], i: usize) -> Simplex {
    simplex
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect()
}

impl SimplicialComplex {
    /// Builds a complex from per-order lists given in canonical form.
    pub fn from_simplices(simplices: Vec<Vec<Simplex>>) -> Result<Self> {
        validate(&simplices)?;
        let index = simplices
            .iter()
            .map(|list| {
                list.iter()
                    .enumerate()
                    .map(|(i, s)| (s.clone(), i))
                    .collect()
            })
            .collect();
        Ok(Self { simplices, index })
    }

    /// Like [`from_simplices`](Self::from_simplices) but sorts each order first.
    pub fn from_unsorted(mut simplices: Vec<Vec<Simplex>>) -> Result<Self> {
        for list in &mut simplices {
            list.sort();
        }
        Self::from_simplices(simplices)
    }

    /// `n0` isolated vertices.
    pub fn vertices(n0: usize) -> Result<Self> {
        Self::from_simplices(vec![(0..n0).map(|v| vec![v]).collect()])
    }

    /// The order `K`.
    pub fn order(&self) -> usize {
        self.simplices.len() - 1
    }

    pub fn simplices(&self, k: usize) -> &[Simplex] {
        self.simplices.get(k).map_or(&[], Vec::as_slice)
    }

    pub fn all_simplices(&self) -> &[Vec<Simplex>] {
        &self.simplices
    }

    /// `N_k`, zero above the order.
    pub fn count(&self, k: usize) -> usize {
        self.simplices(k).len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.simplices.iter().map(Vec::len).collect()
    }

    /// `N = N_0 + ... + N_K`.
    pub fn total(&self) -> usize {
        self.simplices.iter().map(Vec::len).sum()
    }

    /// Row offsets of each order inside a concatenated multiorder signal, length `K + 2`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.simplices.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for list in &self.simplices {
            acc += list.len();
            offsets.push(acc);
        }
        offsets
    }

    pub fn index_of(&self, simplex: &[usize]) -> Option<usize> {
        self.index.get(simplex.len().checked_sub(1)?)?.get(simplex).copied()
    }

    /// Signed incidence matrix `B_k` between `(k-1)`- and `k`-simplices, `1 <= k <= K`.
    ///
    /// Entry `(n, m)` is `(-1)^i` when the `n`-th `(k-1)`-simplex is the `m`-th `k`-simplex with
    /// its `i`-th vertex removed.
    pub fn incidence(&self, k: usize) -> Result<IncidenceMatrix> {
        if k == 0 || k > self.order() {
            return Err(Error::OrderOutOfRange {
                k,
                max: self.order(),
            });
        }
        let columns = self.simplices[k]
            .iter()
            .map(|simplex| {
                let mut col: Vec<(usize, i8)> = (0..simplex.len())
                    .map(|i| {
                        let face = face_without(simplex, i);
                        let row = self.index[k - 1][&face];
                        (row, if i % 2 == 0 { 1 } else { -1 })
                    })
                    .collect();
                col.sort_unstable();
                col
            })
            .collect();
        Ok(IncidenceMatrix {
            k,
            rows: self.count(k - 1),
            columns,
        })
    }
}

/// Sparse signed incidence matrix with entries in `{-1, 0, +1}`, stored by column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidenceMatrix {
    k: usize,
    rows: usize,
    columns: Vec<Vec<(usize, i8)>>,
}

impl IncidenceMatrix {
    pub fn order(&self) -> usize {
        self.k
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// Nonzeros of column `m` as `(row, sign)` pairs in row order.
    pub fn column(&self, m: usize) -> &[(usize, i8)] {
        &self.columns[m]
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.columns[col]
            .iter()
            .find(|&&(r, _)| r == row)
            .map_or(0, |&(_, s)| s)
    }

    pub fn to_dense(&self) -> DMatrix<i64> {
        let mut m = DMatrix::zeros(self.rows, self.columns.len());
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, s) in col {
                m[(i, j)] = i64::from(s);
            }
        }
        m
    }

    /// `B B^T`, exact.
    pub fn outer_gram(&self) -> DMatrix<i64> {
        let mut g = DMatrix::zeros(self.rows, self.rows);
        for col in &self.columns {
            for &(i, si) in col {
                for &(j, sj) in col {
                    g[(i, j)] += i64::from(si * sj);
                }
            }
        }
        g
    }

    /// `B^T B`, exact.
    pub fn inner_gram(&self) -> DMatrix<i64> {
        let n = self.columns.len();
        let mut rows_to_cols: Vec<Vec<(usize, i8)>> = vec![Vec::new(); self.rows];
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, s) in col {
                rows_to_cols[i].push((j, s));
            }
        }
        let mut g = DMatrix::zeros(n, n);
        for entries in &rows_to_cols {
            for &(a, sa) in entries {
                for &(b, sb) in entries {
                    g[(a, b)] += i64::from(sa * sb);
                }
            }
        }
        g
    }

    /// Exact product `self * other` (`B_k B_{k+1}` for consecutive orders).
    pub fn product(&self, other: &IncidenceMatrix) -> Result<DMatrix<i64>> {
        if self.ncols() != other.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: other.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.rows, other.ncols());
        for (j, col) in other.columns.iter().enumerate() {
            for &(mid, s_mid) in col {
                for &(i, s) in &self.columns[mid] {
                    out[(i, j)] += i64::from(s * s_mid);
                }
            }
        }
        Ok(out)
    }
}

/// Random order-2 complex: each vertex pair becomes an edge with probability `p_edge`, then
/// each 3-clique of the sampled graph becomes a filled triangle with probability `p_tri`.
pub fn random_complex(n0: usize, p_edge: f64, p_tri: f64, seed: u64) -> Result<SimplicialComplex> {
    if n0 == 0 {
        return Err(Error::NoVertices);
    }
    for (field, p) in [("p_edge", p_edge), ("p_tri", p_tri)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(field, format!("{p} is not a probability")));
        }
    }
    let mut rng = rng::stream(seed, 0);
    let mut adjacent = vec![vec![false; n0]; n0];
    let mut edges = Vec::new();
    for i in 0..n0 {
        for j in i + 1..n0 {
            if rng.random::<f64>() < p_edge {
                adjacent[i][j] = true;
                adjacent[j][i] = true;
                edges.push(vec![i, j]);
            }
        }
    }
    let mut triangles = Vec::new();
    for edge in &edges {
        let (i, j) = (edge[0], edge[1]);
        for l in j + 1..n0 {
            if adjacent[i][l] && adjacent[j][l] && rng.random::<f64>() < p_tri {
                triangles.push(vec![i, j, l]);
            }
        }
    }
    SimplicialComplex::from_simplices(vec![(0..n0).map(|v| vec![v]).collect(), edges, triangles])
}

const SCF_MAGIC: &str = "#SCF v1";

/// Serializes to SCF v1 text.
pub fn to_scf_string(complex: &SimplicialComplex) -> String {
    let mut out = String::new();
    out.push_str(SCF_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "order {}", complex.order());
    for (k, list) in complex.all_simplices().iter().enumerate() {
        let _ = writeln!(out, "k {} {}", k, list.len());
        for simplex in list {
            let line: Vec<String> = simplex.iter().map(usize::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Parses SCF v1 text and validates the result.
pub fn parse_scf(text: &str) -> Result<SimplicialComplex> {
    let parse_err = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, l)) if l == SCF_MAGIC => {}
        _ => return Err(parse_err(1, "expected `#SCF v1` header")),
    }
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, order_line) = body.next().ok_or_else(|| parse_err(2, "missing `order` line"))?;
    let order = match order_line.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["order", k] => k
            .parse::<usize>()
            .map_err(|_| parse_err(line_no, "order must be a nonnegative integer"))?,
        _ => return Err(parse_err(line_no, "expected `order <K>`")),
    };

    let mut simplices = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let (line_no, header) = body
            .next()
            .ok_or_else(|| parse_err(0, &format!("missing header for order {k}")))?;
        let count = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["k", kk, count] if kk.parse::<usize>().ok() == Some(k) => count
                .parse::<usize>()
                .map_err(|_| parse_err(line_no, "count must be a nonnegative integer"))?,
            _ => return Err(parse_err(line_no, &format!("expected `k {k} <count>`"))),
        };
        let mut list = Vec::with_capacity(count);
        for _ in 0..count {
            let (line_no, line) = body
                .next()
                .ok_or_else(|| parse_err(line_no, &format!("order {k} ends early")))?;
            let simplex = line
                .split_whitespace()
                .map(str::parse::<usize>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| parse_err(line_no, "vertex indices must be nonnegative integers"))?;
            if simplex.len() != k + 1 {
                return Err(parse_err(line_no, &format!("expected {} vertices", k + 1)));
            }
            list.push(simplex);
        }
        simplices.push(list);
    }
    if let Some((line_no, _)) = body.next() {
        return Err(parse_err(line_no, "unexpected trailing content"));
    }
    SimplicialComplex::from_simplices(simplices)
}

pub fn read_scf(path: impl AsRef<Path>) -> Result<SimplicialComplex> {
    parse_scf(&fs::read_to_string(path)?)
}

pub fn write_scf(complex: &SimplicialComplex, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_scf_string(complex))?;
    Ok(())
}
