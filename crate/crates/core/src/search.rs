//! Top-down search of the dendrogram for the highest schedulable branches.

use serde::Serialize;
use thiserror::Error;

use crate::clustering::{branch_state, ClusterError, Dendrogram};
use crate::model::{State, StateGraph, StateId};
use crate::scheduler::{ScheduleError, ScheduleResult, Scheduler};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("unfiltered infeasible state {0}: filter infeasible states before searching")]
    UnfilteredInfeasibleState(StateId),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Member {
    pub node: usize,
    /// Leaves (state indices) under `node`, ascending.
    pub leaves: Vec<usize>,
    pub state: State,
    pub schedule: ScheduleResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Visit {
    pub node: usize,
    pub feasible: bool,
}

/// The selected configurations. `members` is an antichain of dendrogram
/// nodes whose leaves partition the states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigurationSet {
    pub members: Vec<Member>,
    pub search_calls: u64,
    pub visited: Vec<Visit>,
}

impl ConfigurationSet {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// Cluster index of every state, following member order.
    pub fn partition(&self, m: usize) -> Vec<Option<usize>> {
        let mut part = vec![None; m];
        for (c, member) in self.members.iter().enumerate() {
            for &l in &member.leaves {
                if l < m {
                    part[l] = Some(c);
                }
            }
        }
        part
    }
}

enum Outcome {
    Member(Member),
    Split(usize, usize),
}

fn visit(dend: &Dendrogram, g: &StateGraph, sched: &dyn Scheduler, node: usize) -> Result<(Visit, Outcome), SearchError> {
    let state = branch_state(dend, node, g)?;
    let schedule = sched.schedule(&state)?;
    let v = Visit {
        node,
        feasible: schedule.feasible,
    };
    if schedule.feasible {
        return Ok((
            v,
            Outcome::Member(Member {
                node,
                leaves: dend.leaves_under(node)?,
                state,
                schedule,
            }),
        ));
    }
    match dend.children(node) {
        Some((l, r)) => Ok((v, Outcome::Split(l, r))),
        None => Err(SearchError::UnfilteredInfeasibleState(state.id)),
    }
}

/// Depth-first from the root, left child first. A feasible node becomes a
/// configuration and its subtree is skipped; an infeasible one is replaced
/// by its two children. Each node is scheduled at most once since every
/// node has a single parent.
pub fn search(dend: &Dendrogram, g: &StateGraph, sched: &dyn Scheduler) -> Result<ConfigurationSet, SearchError> {
    check_sizes(dend, g)?;
    let mut members = Vec::new();
    let mut visited = Vec::new();
    let mut stack = vec![dend.root()];
    while let Some(node) = stack.pop() {
        let (v, outcome) = visit(dend, g, sched, node)?;
        visited.push(v);
        match outcome {
            Outcome::Member(m) => members.push(m),
            Outcome::Split(l, r) => {
                stack.push(r);
                stack.push(l);
            }
        }
    }
    Ok(ConfigurationSet {
        members,
        search_calls: visited.len() as u64,
        visited,
    })
}

fn check_sizes(dend: &Dendrogram, g: &StateGraph) -> Result<(), SearchError> {
    if dend.leaf_count() != g.len() {
        return Err(ClusterError::SizeMismatch {
            leaves: dend.leaf_count(),
            states: g.len(),
        }
        .into());
    }
    Ok(())
}

type Partial = (Vec<Member>, Vec<Visit>);

fn subtree(dend: &Dendrogram, g: &StateGraph, sched: &dyn Scheduler, node: usize) -> Result<Partial, SearchError> {
    let (v, outcome) = visit(dend, g, sched, node)?;
    match outcome {
        Outcome::Member(m) => Ok((vec![m], vec![v])),
        Outcome::Split(l, r) => {
            let (left, right) = rayon::join(|| subtree(dend, g, sched, l), || subtree(dend, g, sched, r));
            let (mut members, lv) = left?;
            let (rm, rv) = right?;
            members.extend(rm);
            let mut visited = Vec::with_capacity(1 + lv.len() + rv.len());
            visited.push(v);
            visited.extend(lv);
            visited.extend(rv);
            Ok((members, visited))
        }
    }
}

/// Same result as [`search`], with sibling subtrees scheduled concurrently
/// on a pool of `workers` threads. Results are concatenated in depth-first
/// order, so members and visits come out in the sequential order too.
pub fn parallel_search(
    dend: &Dendrogram,
    g: &StateGraph,
    sched: &dyn Scheduler,
    workers: usize,
) -> Result<ConfigurationSet, SearchError> {
    if workers <= 1 {
        return search(dend, g, sched);
    }
    check_sizes(dend, g)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        // a chained dendrogram recurses once per level
        .stack_size(32 << 20)
        .build()
        .map_err(|e| SearchError::Pool(e.to_string()))?;
    let (members, visited) = pool.install(|| subtree(dend, g, sched, dend.root()))?;
    Ok(ConfigurationSet {
        members,
        search_calls: visited.len() as u64,
        visited,
    })
}
