//! Objective `g = k + W + h`, the clustered transition matrix and app
//! coverage.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Dendrogram;
use crate::format::fmt12;
use crate::model::{AppCatalog, AppId, State, StateGraph};
use crate::search::ConfigurationSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("partition has {got} entries for {states} states")]
    PartitionLength { got: usize, states: usize },
    #[error("state {0} is not covered by any configuration")]
    Uncovered(usize),
    #[error("state {0} is covered by more than one configuration")]
    Overlap(usize),
    #[error("application catalog is empty")]
    EmptyCatalog,
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    WorstCase,
    Unfiltered,
    Reduced,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::WorstCase => "worst_case",
            Self::Unfiltered => "unfiltered",
            Self::Reduced => "reduced",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "worst_case" => Ok(Self::WorstCase),
            "unfiltered" => Ok(Self::Unfiltered),
            "reduced" => Ok(Self::Reduced),
            other => Err(MetricsError::UnknownScenario(other.into())),
        }
    }
}

/// Scores of one configuration set. `g = k + W + h`; `h_init` is reported
/// but not part of `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MetricsReport {
    pub scenario: ScenarioKind,
    pub k: usize,
    pub W: f64,
    pub h: u64,
    pub h_init: u64,
    pub g: f64,
    pub r_A: f64,
    /// Whether every configuration in the set has a valid schedule.
    pub feasible: bool,
}

impl MetricsReport {
    #[allow(non_snake_case)]
    pub fn new(scenario: ScenarioKind, k: usize, W: f64, h: u64, h_init: u64, r_A: f64, feasible: bool) -> Self {
        Self {
            scenario,
            k,
            W,
            h,
            h_init,
            g: k as f64 + W + h as f64,
            r_A,
            feasible,
        }
    }

    pub const CSV_HEADER: &'static str = "scenario,k,W,h,h_init,g,r_A";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.scenario,
            self.k,
            fmt12(self.W),
            self.h,
            self.h_init,
            fmt12(self.g),
            fmt12(self.r_A)
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

/// `P_C[a][b]`: total weight from states in cluster `a` to states in
/// cluster `b`, zero on the diagonal. `k` is one more than the largest
/// cluster index.
pub fn cluster_transition_matrix(g: &StateGraph, partition: &[usize]) -> Result<Vec<Vec<f64>>, MetricsError> {
    if partition.len() != g.len() {
        return Err(MetricsError::PartitionLength {
            got: partition.len(),
            states: g.len(),
        });
    }
    let k = partition.iter().max().map_or(0, |&c| c + 1);
    let mut pc = vec![vec![0.0; k]; k];
    for (i, row) in g.weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let (a, b) = (partition[i], partition[j]);
            if a != b {
                pc[a][b] += w;
            }
        }
    }
    Ok(pc)
}

/// Sum of all entries, row-major.
pub fn total_weight(pc: &[Vec<f64>]) -> f64 {
    pc.iter().flatten().sum()
}

/// Cluster of every state under `cset`; errors unless the members'
/// leaves partition `0..m`.
pub fn partition_of(cset: &ConfigurationSet, m: usize) -> Result<Vec<usize>, MetricsError> {
    let mut part = vec![None; m];
    for (c, member) in cset.members.iter().enumerate() {
        for &l in &member.leaves {
            match part.get_mut(l) {
                Some(slot @ None) => *slot = Some(c),
                Some(Some(_)) => return Err(MetricsError::Overlap(l)),
                None => return Err(MetricsError::Uncovered(l)),
            }
        }
    }
    part.into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or(MetricsError::Uncovered(i)))
        .collect()
}

/// Share of catalog applications present in at least one of `configs`.
pub fn app_coverage(configs: &[State], catalog: &AppCatalog) -> Result<f64, MetricsError> {
    if catalog.is_empty() {
        return Err(MetricsError::EmptyCatalog);
    }
    let covered: BTreeSet<&AppId> = configs
        .iter()
        .flat_map(|s| s.apps.iter())
        .filter(|a| catalog.contains(a))
        .collect();
    Ok(covered.len() as f64 / catalog.len() as f64)
}

/// Scores `cset` on `g`. `r_A` is the coverage of its feasible members.
pub fn objective(
    g: &StateGraph,
    cset: &ConfigurationSet,
    h_init: u64,
    catalog: &AppCatalog,
) -> Result<MetricsReport, MetricsError> {
    let part = partition_of(cset, g.len())?;
    let w = total_weight(&cluster_transition_matrix(g, &part)?);
    let feasible: Vec<State> = cset
        .members
        .iter()
        .filter(|m| m.schedule.feasible)
        .map(|m| m.state.clone())
        .collect();
    let all_feasible = feasible.len() == cset.members.len();
    Ok(MetricsReport::new(
        ScenarioKind::Reduced,
        cset.k(),
        w,
        cset.search_calls,
        h_init,
        app_coverage(&feasible, catalog)?,
        all_feasible,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct FrontierPoint {
    pub k: usize,
    pub W: f64,
    pub h: u64,
    pub g: f64,
}

/// Replays the search visits on a frontier that starts at the root: after
/// each visit `h` grows by one, and an infeasible node is replaced by its
/// children. Returns `g` after every visit.
pub fn frontier_objective_trace(g: &StateGraph, dend: &Dendrogram, cset: &ConfigurationSet) -> Vec<FrontierPoint> {
    let mut k = 1usize;
    let mut w = 0.0f64;
    let mut out = Vec::with_capacity(cset.visited.len());
    for (t, v) in cset.visited.iter().enumerate() {
        if !v.feasible {
            if let Some((l, r)) = dend.children(v.node) {
                let left = dend.leaves_under(l).unwrap_or_default();
                let right = dend.leaves_under(r).unwrap_or_default();
                let mut cut = 0.0;
                for &i in &left {
                    for &j in &right {
                        cut += g.weights[i][j] + g.weights[j][i];
                    }
                }
                k += 1;
                w += cut;
            }
        }
        let h = t as u64 + 1;
        out.push(FrontierPoint {
            k,
            W: w,
            h,
            g: k as f64 + w + h as f64,
        });
    }
    out
}

/// Worst case, unfiltered and reduced side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<MetricsReport>,
    /// Percentage reduction from unfiltered to reduced, per column.
    pub gains: Gains,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct Gains {
    pub k: Option<f64>,
    pub W: Option<f64>,
    pub h: Option<f64>,
    pub h_init: Option<f64>,
    pub g: Option<f64>,
    pub r_A: Option<f64>,
}

fn reduction(from: f64, to: f64) -> Option<f64> {
    (from != 0.0).then(|| 100.0 * (from - to) / from)
}

impl ComparisonTable {
    pub fn new(rows: Vec<MetricsReport>) -> Self {
        let find = |kind| rows.iter().find(|r| r.scenario == kind);
        let gains = match (find(ScenarioKind::Unfiltered), find(ScenarioKind::Reduced)) {
            (Some(u), Some(r)) => Gains {
                k: reduction(u.k as f64, r.k as f64),
                W: reduction(u.W, r.W),
                h: reduction(u.h as f64, r.h as f64),
                h_init: reduction(u.h_init as f64, r.h_init as f64),
                g: reduction(u.g, r.g),
                r_A: reduction(u.r_A, r.r_A),
            },
            _ => Gains {
                k: None,
                W: None,
                h: None,
                h_init: None,
                g: None,
                r_A: None,
            },
        };
        Self { rows, gains }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MetricsReport::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        let cell = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
        let gn = &self.gains;
        out.push_str(&format!(
            "gains_pct,{},{},{},{},{},{}\n",
            cell(gn.k),
            cell(gn.W),
            cell(gn.h),
            cell(gn.h_init),
            cell(gn.g),
            cell(gn.r_A)
        ));
        out
    }
}
