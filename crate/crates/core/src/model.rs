//! Applications, flows, topology, states and the weighted state graph.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(
    /// Application identifier.
    AppId
);
id_type!(
    /// Flow identifier.
    FlowId
);
id_type!(
    /// Topology node identifier (ECU or switch).
    NodeId
);
id_type!(
    /// State identifier.
    StateId
);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("unknown application {0}")]
    UnknownApp(AppId),
    #[error("application {app} lists unknown flow {flow}")]
    UnknownFlow { app: AppId, flow: FlowId },
    #[error("flow {flow}: {reason}")]
    InvalidFlow { flow: FlowId, reason: String },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("weight matrix is {rows}x{cols} but there are {states} states")]
    WeightShape { rows: usize, cols: usize, states: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Application {
    pub id: AppId,
    pub host_ecu: NodeId,
    #[serde(default)]
    pub flow_ids: BTreeSet<FlowId>,
}

/// Point-to-point flow; `bandwidth` in Mbit/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: FlowId,
    pub src_app: AppId,
    pub dst_app: AppId,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Ecu,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyNode {
    pub id: NodeId,
    pub kind: NodeKind,
}

/// Undirected link; `capacity` in Mbit/s. Links are addressed by their
/// position in [`Topology::links`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub endpoint_a: NodeId,
    pub endpoint_b: NodeId,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<TopologyNode>,
    pub links: Vec<Link>,
}

impl Topology {
    pub fn node_index(&self) -> HashMap<&NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (&n.id, i)).collect()
    }

    pub fn ecus(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Ecu)
            .map(|n| &n.id)
    }

    /// Checks ids, link endpoints, capacities and that the links form a tree.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidTopology(msg));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let index = self.node_index();
        if index.len() != self.nodes.len() {
            let mut seen = HashSet::new();
            let dup = self.nodes.iter().find(|n| !seen.insert(&n.id)).unwrap();
            return Err(ModelError::DuplicateId {
                kind: "node",
                id: dup.id.to_string(),
            });
        }
        let mut pairs = HashSet::new();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for link in &self.links {
            let (Some(&a), Some(&b)) = (index.get(&link.endpoint_a), index.get(&link.endpoint_b))
            else {
                return bad(format!(
                    "link {}-{} references an unknown node",
                    link.endpoint_a, link.endpoint_b
                ));
            };
            if a == b {
                return bad(format!("self-loop on {}", link.endpoint_a));
            }
            if !(link.capacity > 0.0) || link.capacity.is_infinite() {
                return bad(format!(
                    "link {}-{} has capacity {}",
                    link.endpoint_a, link.endpoint_b, link.capacity
                ));
            }
            if !pairs.insert((a.min(b), a.max(b))) {
                return bad(format!(
                    "more than one link between {} and {}",
                    link.endpoint_a, link.endpoint_b
                ));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        if self.links.len() + 1 != self.nodes.len()
            || graph::reachable_from(&adj, &[0]).len() != self.nodes.len()
        {
            return bad(format!(
                "{} nodes and {} links do not form a tree",
                self.nodes.len(),
                self.links.len()
            ));
        }
        Ok(())
    }
}

/// A set of concurrently running applications. `residual_best_effort`
/// (Mbit/s) is kept free on every link while the state is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub id: StateId,
    pub apps: BTreeSet<AppId>,
    #[serde(default)]
    pub residual_best_effort: f64,
}

impl State {
    pub fn new(id: impl Into<String>, apps: impl IntoIterator<Item = AppId>) -> Self {
        Self {
            id: StateId(id.into()),
            apps: apps.into_iter().collect(),
            residual_best_effort: 0.0,
        }
    }
}

/// Union of the app sets; the larger residual wins.
pub fn merge_states(a: &State, b: &State) -> State {
    State {
        id: StateId(format!("{}+{}", a.id, b.id)),
        apps: a.apps.union(&b.apps).cloned().collect(),
        residual_best_effort: a.residual_best_effort.max(b.residual_best_effort),
    }
}

/// Weighted directed graph over states. `weights[i][j]` is the transition
/// weight from state `i` to state `j`; raw non-negative values, not
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGraph {
    pub states: Vec<State>,
    pub weights: Vec<Vec<f64>>,
}

impl StateGraph {
    /// Checks only the matrix shape; see [`validate_state_graph`] for the rest.
    pub fn new(states: Vec<State>, weights: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let g = Self { states, weights };
        g.check_shape()?;
        Ok(g)
    }

    pub fn check_shape(&self) -> Result<(), ModelError> {
        let m = self.states.len();
        if self.weights.len() != m || self.weights.iter().any(|r| r.len() != m) {
            return Err(ModelError::WeightShape {
                rows: self.weights.len(),
                cols: self.weights.iter().map(Vec::len).max().unwrap_or(0),
                states: m,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Induced subgraph on `keep`, in the given order.
    pub fn subgraph(&self, keep: &[usize]) -> StateGraph {
        StateGraph {
            states: keep.iter().map(|&i| self.states[i].clone()).collect(),
            weights: keep
                .iter()
                .map(|&i| keep.iter().map(|&j| self.weights[i][j]).collect())
                .collect(),
        }
    }

    /// Each row divided by its sum; rows summing to zero are left as is.
    pub fn row_normalized(&self) -> StateGraph {
        let weights = self
            .weights
            .iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter().map(|w| w / s).collect()
                } else {
                    row.clone()
                }
            })
            .collect();
        StateGraph {
            states: self.states.clone(),
            weights,
        }
    }

    /// Sum of all off-diagonal weights, row-major.
    pub fn total_weight(&self) -> f64 {
        let mut total = 0.0;
        for (i, row) in self.weights.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if i != j {
                    total += w;
                }
            }
        }
        total
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = graph::positive_adjacency(&self.weights);
        for (i, row) in adj.iter_mut().enumerate() {
            row.retain(|&j| j != i);
        }
        adj
    }

    /// Restriction to the largest strongly connected component.
    pub fn largest_component(&self) -> StateGraph {
        self.subgraph(&graph::largest_scc(&self.adjacency()))
    }
}

/// Application and flow catalogs with id lookup.
#[derive(Debug, Clone)]
pub struct AppCatalog {
    apps: Vec<Application>,
    flows: Vec<Flow>,
    app_index: HashMap<AppId, usize>,
}

impl AppCatalog {
    pub fn new(apps: Vec<Application>, flows: Vec<Flow>) -> Result<Self, ModelError> {
        let mut app_index = HashMap::with_capacity(apps.len());
        for (i, a) in apps.iter().enumerate() {
            if app_index.insert(a.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateId {
                    kind: "application",
                    id: a.id.to_string(),
                });
            }
        }
        let mut flow_ids = HashSet::with_capacity(flows.len());
        for f in &flows {
            if !flow_ids.insert(&f.id) {
                return Err(ModelError::DuplicateId {
                    kind: "flow",
                    id: f.id.to_string(),
                });
            }
            let invalid = |reason: &str| {
                Err(ModelError::InvalidFlow {
                    flow: f.id.clone(),
                    reason: reason.into(),
                })
            };
            if !(f.bandwidth > 0.0) || !f.bandwidth.is_finite() {
                return invalid("bandwidth must be positive and finite");
            }
            if f.src_app == f.dst_app {
                return invalid("source and destination are the same application");
            }
            for app in [&f.src_app, &f.dst_app] {
                if !app_index.contains_key(app) {
                    return Err(ModelError::UnknownApp(app.clone()));
                }
            }
        }
        for a in &apps {
            if let Some(missing) = a.flow_ids.iter().find(|id| !flow_ids.contains(id)) {
                return Err(ModelError::UnknownFlow {
                    app: a.id.clone(),
                    flow: missing.clone(),
                });
            }
        }
        Ok(Self {
            apps,
            flows,
            app_index,
        })
    }

    pub fn apps(&self) -> &[Application] {
        &self.apps
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn app(&self, id: &AppId) -> Option<&Application> {
        self.app_index.get(id).map(|&i| &self.apps[i])
    }

    pub fn app_position(&self, id: &AppId) -> Option<usize> {
        self.app_index.get(id).copied()
    }

    pub fn contains(&self, id: &AppId) -> bool {
        self.app_index.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }
}

/// Flows whose source and destination are both in `state`, in catalog order.
pub fn active_flows<'a>(state: &State, catalog: &'a AppCatalog) -> Result<Vec<&'a Flow>, ModelError> {
    if let Some(unknown) = state.apps.iter().find(|a| !catalog.contains(a)) {
        return Err(ModelError::UnknownApp(unknown.clone()));
    }
    Ok(catalog
        .flows()
        .iter()
        .filter(|f| state.apps.contains(&f.src_app) && state.apps.contains(&f.dst_app))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyGraph,
    /// Components listed by state index, each ascending.
    NotStronglyConnected { components: Vec<Vec<usize>> },
    DanglingApp { state: usize, app: AppId },
    DuplicateStateId { id: StateId },
    NegativeWeight { from: usize, to: usize, weight: f64 },
    NonFiniteWeight { from: usize, to: usize },
    NonZeroDiagonal { state: usize, weight: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "state graph has no states"),
            Violation::NotStronglyConnected { components } => {
                write!(f, "not strongly connected ({} components)", components.len())
            }
            Violation::DanglingApp { state, app } => {
                write!(f, "state {state} references unknown application {app}")
            }
            Violation::DuplicateStateId { id } => write!(f, "duplicate state id {id}"),
            Violation::NegativeWeight { from, to, weight } => {
                write!(f, "negative weight {weight} on {from}->{to}")
            }
            Violation::NonFiniteWeight { from, to } => write!(f, "non-finite weight on {from}->{to}"),
            Violation::NonZeroDiagonal { state, weight } => {
                write!(f, "self-transition weight {weight} on state {state}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Collects every structural problem with `g`. Violations are data; an empty
/// report means `g` is usable by the pipeline. Assumes the matrix is square.
pub fn validate_state_graph(g: &StateGraph, catalog: &AppCatalog) -> ValidationReport {
    let mut violations = Vec::new();
    if g.is_empty() {
        violations.push(Violation::EmptyGraph);
        return ValidationReport { violations };
    }
    let mut ids = HashSet::new();
    for (i, s) in g.states.iter().enumerate() {
        if !ids.insert(&s.id) {
            violations.push(Violation::DuplicateStateId { id: s.id.clone() });
        }
        for app in s.apps.iter().filter(|a| !catalog.contains(a)) {
            violations.push(Violation::DanglingApp {
                state: i,
                app: app.clone(),
            });
        }
    }
    for (i, row) in g.weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if !w.is_finite() {
                violations.push(Violation::NonFiniteWeight { from: i, to: j });
            } else if w < 0.0 {
                violations.push(Violation::NegativeWeight {
                    from: i,
                    to: j,
                    weight: w,
                });
            } else if i == j && w != 0.0 {
                violations.push(Violation::NonZeroDiagonal { state: i, weight: w });
            }
        }
    }
    let components = graph::strongly_connected_components(&g.adjacency());
    if components.len() > 1 {
        violations.push(Violation::NotStronglyConnected { components });
    }
    ValidationReport { violations }
}
