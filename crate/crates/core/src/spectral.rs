//! Laplacian construction and spectral embedding of a state graph.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::fmt12;
use crate::model::{State, StateGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("state graph is empty")]
    Empty,
    #[error("state {0} has no outgoing weight")]
    ZeroOutWeight(usize),
    #[error("state {0} has no incident weight")]
    Isolated(usize),
    #[error("embedding dimension {dim} outside 1..={max}")]
    Dimension { dim: usize, max: usize },
    #[error("stationary distribution could not be computed")]
    Stationary,
    #[error("eigenpair {index} has residual {residual:e} (tolerance {tolerance:e})")]
    NotConverged {
        index: usize,
        residual: f64,
        tolerance: f64,
    },
}

/// How the directed weight matrix `W` is turned into a symmetric Laplacian.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `(D − A)·m/ΣA` with `A = W + Wᵀ` and `D = diag(row sums of A)`.
    ///
    /// Transitions in either direction pull two states together in
    /// proportion to their raw weight. The scale factor makes the result
    /// independent of the weight unit and maps the 2-cycle to
    /// `[[1, −1], [−1, 1]]`.
    #[default]
    SymmetrizedWeights,
    /// `I − (P + Pᵀ)/2` with `P` the row-normalized weights.
    ///
    /// Row sums are zero only when `P` is doubly stochastic, so the dropped
    /// smallest eigenvector is not constant in general.
    RandomWalk,
    /// `m·(Φ − (ΦP + PᵀΦ)/2)` with `Φ = diag(π)`, `π` the stationary
    /// distribution of `P` (the directed-graph combinatorial Laplacian).
    Directed,
}

impl FromStr for LaplacianKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetrized_weights" | "symmetrized" => Ok(Self::SymmetrizedWeights),
            "random_walk" => Ok(Self::RandomWalk),
            "directed" => Ok(Self::Directed),
            other => Err(format!("unknown laplacian {other:?}")),
        }
    }
}

fn row_normalized(g: &StateGraph) -> Result<DMatrix<f64>, SpectralError> {
    let m = g.len();
    let mut p = DMatrix::zeros(m, m);
    for i in 0..m {
        let s: f64 = (0..m).filter(|&j| j != i).map(|j| g.weights[i][j]).sum();
        if !(s > 0.0) {
            return Err(SpectralError::ZeroOutWeight(i));
        }
        for j in (0..m).filter(|&j| j != i) {
            p[(i, j)] = g.weights[i][j] / s;
        }
    }
    Ok(p)
}

fn stationary(p: &DMatrix<f64>) -> Result<DVector<f64>, SpectralError> {
    // Solve (I − Pᵀ)π = 0 with the last equation replaced by Σπ = 1.
    let m = p.nrows();
    let mut a = DMatrix::identity(m, m) - p.transpose();
    a.row_mut(m - 1).fill(1.0);
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(SpectralError::Stationary)?;
    if pi.iter().any(|&x| !(x > 0.0)) {
        return Err(SpectralError::Stationary);
    }
    Ok(pi)
}

/// Symmetric Laplacian of `g`. The diagonal of `g.weights` is ignored.
pub fn build_laplacian(g: &StateGraph, kind: LaplacianKind) -> Result<DMatrix<f64>, SpectralError> {
    let m = g.len();
    if m == 0 {
        return Err(SpectralError::Empty);
    }
    match kind {
        LaplacianKind::SymmetrizedWeights => {
            let mut a = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        a[(i, j)] = g.weights[i][j] + g.weights[j][i];
                    }
                }
            }
            let degree: Vec<f64> = (0..m).map(|i| a.row(i).sum()).collect();
            if let Some(i) = degree.iter().position(|&d| !(d > 0.0)) {
                if m > 1 {
                    return Err(SpectralError::Isolated(i));
                }
                return Ok(DMatrix::zeros(1, 1));
            }
            let scale = m as f64 / degree.iter().sum::<f64>();
            let mut l = -a;
            for i in 0..m {
                l[(i, i)] = degree[i];
            }
            Ok(l * scale)
        }
        LaplacianKind::RandomWalk => {
            if m == 1 {
                return Ok(DMatrix::zeros(1, 1));
            }
            let p = row_normalized(g)?;
            Ok(DMatrix::identity(m, m) - (&p + p.transpose()) * 0.5)
        }
        LaplacianKind::Directed => {
            if m == 1 {
                return Ok(DMatrix::zeros(1, 1));
            }
            let p = row_normalized(g)?;
            let pi = stationary(&p)?;
            let phi = DMatrix::from_diagonal(&pi);
            let phi_p = &phi * &p;
            Ok((phi - (&phi_p + phi_p.transpose()) * 0.5) * m as f64)
        }
    }
}

/// Spectral coordinates: row `i` is the position of state `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coordinates: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.coordinates.ncols()
    }

    /// CSV with header `state_id,x1,…,xd`, 12 significant digits.
    pub fn to_csv(&self, states: &[State]) -> String {
        let mut out = String::from("state_id");
        for k in 1..=self.dim() {
            write!(out, ",x{k}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.coordinates.row_iter().enumerate() {
            out.push_str(states.get(i).map_or("", |s| s.id.as_str()));
            for x in row.iter() {
                out.push(',');
                out.push_str(&fmt12(*x));
            }
            out.push('\n');
        }
        out
    }
}

/// Infinity norm (max absolute row sum).
pub fn norm_inf(l: &DMatrix<f64>) -> f64 {
    l.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Entries below this magnitude are skipped when fixing signs, so that
/// rounding noise on an exact zero cannot flip a whole column.
const SIGN_EPS: f64 = 1e-8;

fn fix_sign(v: &mut DVector<f64>) {
    if let Some(&first) = v.iter().find(|x| x.abs() > SIGN_EPS) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Embeds the states of `g` with the eigenvectors of the `dim` smallest
/// eigenvalues of its Laplacian, after dropping the smallest one (the
/// null space of a connected graph).
///
/// Columns have unit norm, and each column's first entry of non-negligible
/// magnitude is positive. Eigenvalues that coincide within rounding are
/// ordered by comparing their sign-fixed vectors coordinate by coordinate;
/// inside a degenerate eigenspace the basis itself is whatever the
/// eigensolver returned.
pub fn embed(g: &StateGraph, dim: usize, kind: LaplacianKind) -> Result<Embedding, SpectralError> {
    let m = g.len();
    if m == 0 {
        return Err(SpectralError::Empty);
    }
    if dim == 0 || dim + 1 > m {
        return Err(SpectralError::Dimension {
            dim,
            max: m.saturating_sub(1),
        });
    }
    let l = build_laplacian(g, kind)?;
    let norm = norm_inf(&l);
    let scale = norm.max(1.0);
    let eig = SymmetricEigen::new(l.clone());

    let mut pairs: Vec<(f64, DVector<f64>)> = (0..m)
        .map(|k| {
            let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            v /= v.norm();
            fix_sign(&mut v);
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let tie = 1e-10 * scale;
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && pairs[end].0 - pairs[end - 1].0 <= tie {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lex_cmp(&a.1, &b.1));
        start = end;
    }

    let tolerance = 1e-8 * scale;
    let mut coordinates = DMatrix::zeros(m, dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for (k, (lambda, v)) in pairs.into_iter().skip(1).take(dim).enumerate() {
        let residual = (&l * &v - &v * lambda).norm();
        if !(residual <= tolerance) {
            return Err(SpectralError::NotConverged {
                index: k + 1,
                residual,
                tolerance,
            });
        }
        coordinates.set_column(k, &v);
        eigenvalues.push(lambda);
    }
    Ok(Embedding {
        coordinates,
        eigenvalues,
    })
}
