//! The three evaluation scenarios and their orchestration.
//!
//! * worst case: one configuration for the union of every state;
//! * unfiltered: one configuration per feasible state;
//! * reduced: filter, embed, cluster and search.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::clustering::{agglomerate, ClusterError, Dendrogram, Linkage};
use crate::metrics::{
    app_coverage, objective, ComparisonTable, MetricsError, MetricsReport, ScenarioKind,
};
use crate::model::{merge_states, AppCatalog, State, StateGraph, StateId};
use crate::scenario::{
    filter_infeasible, filter_subsumed, sample_feasible_combinations, SampleStats, Scenario,
    ScenarioError,
};
use crate::scheduler::{BandwidthScheduler, ScheduleError, ScheduleResult, Scheduler};
use crate::search::{parallel_search, ConfigurationSet, SearchError};
use crate::spectral::{embed, Embedding, LaplacianKind, SpectralError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invariant(String),
}

impl PipelineError {
    /// True when the input (files, parameters) is at fault rather than a
    /// pipeline stage.
    pub fn is_input_error(&self) -> bool {
        match self {
            PipelineError::Scenario(ScenarioError::NoFeasibleStates) => false,
            PipelineError::Scenario(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    WorstCase,
    Unfiltered,
    Reduced,
    Compare,
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "worst_case" => Ok(Self::WorstCase),
            "unfiltered" => Ok(Self::Unfiltered),
            "reduced" => Ok(Self::Reduced),
            "compare" => Ok(Self::Compare),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::WorstCase => "worst_case",
            Self::Unfiltered => "unfiltered",
            Self::Reduced => "reduced",
            Self::Compare => "compare",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Embedding dimension, clamped to `m - 1`.
    pub dim: usize,
    pub linkage: Linkage,
    pub laplacian: LaplacianKind,
    /// Threads for the search; 1 runs it sequentially.
    pub workers: usize,
    /// Row-normalize the filtered graph's weights before scoring.
    pub normalize_weights: bool,
    pub subsume_filter: bool,
    /// Random combinations drawn for the worst-case coverage estimate.
    pub sample_count: usize,
    /// Replaces the scenario seed for sampling.
    pub seed: Option<u64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            dim: 8,
            linkage: Linkage::Average,
            laplacian: LaplacianKind::default(),
            workers: 1,
            normalize_weights: false,
            subsume_filter: false,
            sample_count: 1000,
            seed: None,
        }
    }
}

/// A validated scenario with its catalog and scheduler.
#[derive(Debug)]
pub struct Prepared {
    pub scenario: Scenario,
    pub catalog: AppCatalog,
    pub scheduler: BandwidthScheduler,
}

impl Prepared {
    pub fn new(scenario: Scenario) -> Result<Self, PipelineError> {
        let (catalog, scheduler) = scenario.validate()?;
        Ok(Self {
            scenario,
            catalog,
            scheduler,
        })
    }

    fn sample_seed(&self, opts: &PipelineOptions) -> u64 {
        opts.seed.unwrap_or(self.scenario.meta.seed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WorstCaseRun {
    pub report: MetricsReport,
    pub schedule: ScheduleResult,
    pub samples: Option<SampleStats>,
}

/// Schedules the union of all states once. When that fails, `r_A` is the
/// mean app fraction of random feasible combinations (0 without samples).
pub fn run_worst_case(p: &Prepared, opts: &PipelineOptions) -> Result<WorstCaseRun, PipelineError> {
    let states = &p.scenario.state_graph.states;
    let union = states
        .iter()
        .fold(State::new("worst-case", []), |acc, s| merge_states(&acc, s));
    let union = State {
        id: StateId::from("worst-case"),
        ..union
    };
    let schedule = p.scheduler.schedule(&union)?;
    let samples = if opts.sample_count > 0 {
        Some(sample_feasible_combinations(
            opts.sample_count,
            &p.scenario.meta.params,
            &p.catalog,
            &p.scheduler,
            p.sample_seed(opts),
        )?)
    } else {
        None
    };
    let r_a = if schedule.feasible {
        app_coverage(std::slice::from_ref(&union), &p.catalog)?
    } else {
        samples.as_ref().and_then(|s| s.mean).unwrap_or(0.0)
    };
    log::info!("worst case: feasible={} r_A={r_a}", schedule.feasible);
    Ok(WorstCaseRun {
        report: MetricsReport::new(ScenarioKind::WorstCase, 1, 0.0, 1, 0, r_a, schedule.feasible),
        schedule,
        samples,
    })
}

/// Filtered state graph and the scheduler calls spent filtering.
#[derive(Debug, Clone)]
pub struct Filtered {
    pub graph: StateGraph,
    pub h_init: u64,
}

pub fn filter(p: &Prepared, opts: &PipelineOptions) -> Result<Filtered, PipelineError> {
    let (mut graph, h_init) = filter_infeasible(&p.scenario.state_graph, &p.scheduler)?;
    if opts.subsume_filter {
        graph = filter_subsumed(&graph);
        log::info!("subsumption filter kept {} states", graph.len());
    }
    if opts.normalize_weights {
        graph = graph.row_normalized();
    }
    Ok(Filtered { graph, h_init })
}

#[derive(Debug, Clone, Serialize)]
pub struct UnfilteredRun {
    pub report: MetricsReport,
}

/// One configuration per filtered state.
pub fn run_unfiltered(p: &Prepared, f: &Filtered) -> Result<UnfilteredRun, PipelineError> {
    let mut calls = 0u64;
    let mut feasible = Vec::with_capacity(f.graph.len());
    for s in &f.graph.states {
        calls += 1;
        if p.scheduler.schedule(s)?.feasible {
            feasible.push(s.clone());
        }
    }
    let all = feasible.len() == f.graph.len();
    let report = MetricsReport::new(
        ScenarioKind::Unfiltered,
        f.graph.len(),
        f.graph.total_weight(),
        calls,
        f.h_init,
        app_coverage(&feasible, &p.catalog)?,
        all,
    );
    Ok(UnfilteredRun { report })
}

#[derive(Debug, Clone)]
pub struct ReducedRun {
    pub report: MetricsReport,
    pub graph: StateGraph,
    /// Absent when a single state survived filtering.
    pub embedding: Option<Embedding>,
    pub dendrogram: Dendrogram,
    pub configurations: ConfigurationSet,
}

/// Embedding, clustering and search on the filtered graph.
pub fn run_reduced(p: &Prepared, f: &Filtered, opts: &PipelineOptions) -> Result<ReducedRun, PipelineError> {
    let g = &f.graph;
    let m = g.len();
    let (embedding, dendrogram) = if m == 1 {
        (None, Dendrogram::from_merges(1, vec![])?)
    } else {
        let dim = opts.dim.clamp(1, m - 1);
        let e = embed(g, dim, opts.laplacian)?;
        let d = agglomerate(&e, opts.linkage)?;
        (Some(e), d)
    };
    p.scheduler.reset_stats();
    let cset = parallel_search(&dendrogram, g, &p.scheduler, opts.workers)?;
    let calls = p.scheduler.reset_stats().calls;
    if calls != cset.search_calls {
        return Err(PipelineError::Invariant(format!(
            "search reported {} calls but the scheduler saw {calls}",
            cset.search_calls
        )));
    }
    if cset.search_calls > 2 * m as u64 - 1 {
        return Err(PipelineError::Invariant(format!(
            "{} scheduler calls exceed 2m-1 = {}",
            cset.search_calls,
            2 * m - 1
        )));
    }
    let report = objective(g, &cset, f.h_init, &p.catalog)?;
    log::info!(
        "reduced: m={m} k={} W={} h={}",
        report.k,
        report.W,
        report.h
    );
    Ok(ReducedRun {
        report,
        graph: g.clone(),
        embedding,
        dendrogram,
        configurations: cset,
    })
}

#[derive(Debug, Clone)]
pub struct CompareRun {
    pub table: ComparisonTable,
    pub worst_case: WorstCaseRun,
    pub reduced: ReducedRun,
}

/// All three scenarios; filtering runs once and is shared.
pub fn run_compare(p: &Prepared, opts: &PipelineOptions) -> Result<CompareRun, PipelineError> {
    let worst_case = run_worst_case(p, opts)?;
    let f = filter(p, opts)?;
    let unfiltered = run_unfiltered(p, &f)?;
    let reduced = run_reduced(p, &f, opts)?;
    let table = ComparisonTable::new(vec![
        worst_case.report.clone(),
        unfiltered.report,
        reduced.report.clone(),
    ]);
    Ok(CompareRun {
        table,
        worst_case,
        reduced,
    })
}
