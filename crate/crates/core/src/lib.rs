//! Offline generation of in-vehicle network configurations.
//!
//! A vehicle is described by a weighted directed graph of *states*, each state
//! being a set of applications that may run concurrently. Every application
//! is pinned to an ECU and exchanges point-to-point flows with other
//! applications over a switched Ethernet tree. Scheduling every flow at once
//! (the static worst case) rarely fits the physical links, while one
//! configuration per state produces far too many configurations and
//! reconfigurations.
//!
//! This crate finds a small set of merged states, each individually
//! schedulable, by
//!
//! 1. dropping states the scheduler rejects ([`scenario::filter_infeasible`]),
//! 2. embedding the state graph with Laplacian eigenvectors ([`spectral`]),
//! 3. building an average-linkage dendrogram over the embedding ([`clustering`]),
//! 4. searching the dendrogram top-down for the highest schedulable branches
//!    ([`search`]).
//!
//! The quality of a configuration set is scored by `g = k + W + h`: the number
//! of configurations, the transition weight crossing configurations, and the
//! number of scheduler calls ([`metrics`]).
//!
//! The scheduler is a black box behind the [`scheduler::Scheduler`] trait; the
//! bundled [`scheduler::BandwidthScheduler`] checks per-link bandwidth sums.

pub mod clustering;
pub mod format;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scenario;
pub mod scheduler;
pub mod search;
pub mod spectral;

pub use clustering::{agglomerate, branch_state, Dendrogram, Linkage};
pub use metrics::{app_coverage, cluster_transition_matrix, objective, MetricsReport, ScenarioKind};
pub use model::{
    active_flows, merge_states, validate_state_graph, AppCatalog, AppId, Application, Flow, FlowId,
    NodeId, State, StateGraph, StateId, Topology,
};
pub use pipeline::{PipelineOptions, RunMode};
pub use scenario::{Scenario, ScenarioParams};
pub use scheduler::{BandwidthScheduler, ScheduleResult, Scheduler, SchedulerStats};
pub use search::{parallel_search, search, ConfigurationSet};
pub use spectral::{build_laplacian, embed, Embedding, LaplacianKind};
