//! Agglomerative hierarchical clustering of embedded states.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{State, StateGraph, StateId};
use crate::spectral::Embedding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("cannot cluster zero points")]
    Empty,
    #[error("coordinate {row},{col} is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("unknown dendrogram node {0}")]
    UnknownNode(usize),
    #[error("dendrogram has {leaves} leaves but the graph has {states} states")]
    SizeMismatch { leaves: usize, states: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    #[default]
    Average,
    Complete,
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Self::Single),
            "average" => Ok(Self::Average),
            "complete" => Ok(Self::Complete),
            other => Err(format!("unknown linkage {other:?}")),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Average => "average",
            Self::Complete => "complete",
        })
    }
}

/// One merge. `left < right` as node ids; `size` counts leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { state: usize },
    Merge(Merge),
}

/// Binary merge tree. Leaves are nodes `0..m`; merge `t` creates node
/// `m + t`. The root is the last merge, or leaf 0 when `m == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Builds from a merge list, checking ids and leaf disjointness.
    pub fn from_merges(leaves: usize, merges: Vec<Merge>) -> Result<Self, ClusterError> {
        if leaves == 0 {
            return Err(ClusterError::Empty);
        }
        let mut used = vec![false; leaves + merges.len()];
        for (t, mg) in merges.iter().enumerate() {
            let id = leaves + t;
            for c in [mg.left, mg.right] {
                if c >= id || used[c] || mg.left == mg.right {
                    return Err(ClusterError::UnknownNode(c));
                }
                used[c] = true;
            }
        }
        if merges.len() + 1 != leaves {
            return Err(ClusterError::UnknownNode(leaves + merges.len()));
        }
        Ok(Self { leaves, merges })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn node_count(&self) -> usize {
        self.leaves + self.merges.len()
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn root(&self) -> usize {
        self.node_count() - 1
    }

    pub fn node(&self, id: usize) -> Result<Node, ClusterError> {
        if id < self.leaves {
            Ok(Node::Leaf { state: id })
        } else {
            self.merges
                .get(id - self.leaves)
                .map(|&m| Node::Merge(m))
                .ok_or(ClusterError::UnknownNode(id))
        }
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        id < self.leaves
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.node(id) {
            Ok(Node::Merge(m)) => Some((m.left, m.right)),
            _ => None,
        }
    }

    pub fn height(&self, id: usize) -> f64 {
        match self.node(id) {
            Ok(Node::Merge(m)) => m.height,
            _ => 0.0,
        }
    }

    /// Leaves under `id`, ascending.
    pub fn leaves_under(&self, id: usize) -> Result<Vec<usize>, ClusterError> {
        self.node(id)?;
        let mut out = Vec::new();
        let mut todo = vec![id];
        while let Some(n) = todo.pop() {
            match self.children(n) {
                Some((l, r)) => todo.extend([l, r]),
                None => out.push(n),
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Parent of every node; the root maps to `None`.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.node_count()];
        for (t, m) in self.merges.iter().enumerate() {
            parent[m.left] = Some(self.leaves + t);
            parent[m.right] = Some(self.leaves + t);
        }
        parent
    }

    /// Merge records as JSON: `[{left, right, height, size}, ...]`.
    pub fn merges_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.merges).expect("merge records serialize")
    }
}

/// Clusters the rows of `emb.coordinates`.
pub fn agglomerate(emb: &Embedding, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    agglomerate_points(&emb.coordinates, linkage)
}

/// Agglomerative clustering of the rows of `points` under Euclidean distance.
///
/// Cluster distances are updated with the Lance–Williams recurrence. Among
/// equally close pairs the one whose smallest leaves `(a, b)`, `a < b`, are
/// lexicographically first is merged.
pub fn agglomerate_points(points: &DMatrix<f64>, linkage: Linkage) -> Result<Dendrogram, ClusterError> {
    let m = points.nrows();
    if m == 0 {
        return Err(ClusterError::Empty);
    }
    for (idx, x) in points.iter().enumerate() {
        if !x.is_finite() {
            return Err(ClusterError::NonFinite {
                row: idx % m,
                col: idx / m,
            });
        }
    }
    // Cluster slots are indexed by their smallest leaf, so scanning i < j in
    // order visits pairs in tie-break order.
    let mut dist = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = (points.row(i) - points.row(j)).norm();
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }
    let mut active: Vec<usize> = (0..m).collect();
    let mut node_of: Vec<usize> = (0..m).collect();
    let mut size = vec![1usize; m];
    let mut height = vec![0.0f64; m];
    let mut merges = Vec::with_capacity(m.saturating_sub(1));

    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (p, &i) in active.iter().enumerate() {
            for &j in &active[p + 1..] {
                let d = dist[i * m + j];
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (d, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for &k in &active {
            if k == i || k == j {
                continue;
            }
            let (dik, djk) = (dist[i * m + k], dist[j * m + k]);
            let dk = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => (ni * dik + nj * djk) / (ni + nj),
            };
            dist[i * m + k] = dk;
            dist[k * m + i] = dk;
        }
        let (a, b) = (node_of[i].min(node_of[j]), node_of[i].max(node_of[j]));
        // Rounding in the average update can undercut a child by an ulp.
        let h = d.max(height[i]).max(height[j]);
        merges.push(Merge {
            left: a,
            right: b,
            height: h,
            size: size[i] + size[j],
        });
        node_of[i] = m + merges.len() - 1;
        size[i] += size[j];
        height[i] = h;
        active.retain(|&k| k != j);
    }
    Ok(Dendrogram { leaves: m, merges })
}

/// The merged state of all leaves under `node`: union of apps, largest
/// residual. A leaf yields its own state.
pub fn branch_state(dend: &Dendrogram, node: usize, g: &StateGraph) -> Result<State, ClusterError> {
    if dend.leaf_count() != g.len() {
        return Err(ClusterError::SizeMismatch {
            leaves: dend.leaf_count(),
            states: g.len(),
        });
    }
    let leaves = dend.leaves_under(node)?;
    if let [leaf] = leaves[..] {
        return Ok(g.states[leaf].clone());
    }
    let mut apps = BTreeSet::new();
    let mut residual = 0.0f64;
    for &l in &leaves {
        apps.extend(g.states[l].apps.iter().cloned());
        residual = residual.max(g.states[l].residual_best_effort);
    }
    Ok(State {
        id: StateId(format!("node-{node}")),
        apps,
        residual_best_effort: residual,
    })
}
