//! Seeded generation of synthetic vehicles, plus the state filters applied
//! before clustering.
//!
//! Every random stage draws from its own ChaCha8 stream derived from the
//! scenario seed, so changing one stage's parameters does not reshuffle the
//! others.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;
use crate::model::{
    validate_state_graph, AppCatalog, AppId, Application, Flow, FlowId, Link, ModelError, NodeId,
    NodeKind, State, StateGraph, StateId, Topology, TopologyNode,
};
use crate::scheduler::{BandwidthScheduler, ScheduleError, Scheduler};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("largest strongly connected component has {0} states; raise state_edge_prob")]
    SccTooSmall(usize),
    #[error("no feasible states for this topology")]
    NoFeasibleStates,
    #[error("invalid state graph: {0}")]
    InvalidGraph(String),
    #[error("scenario JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

const STREAM_APPS: u64 = 1;
const STREAM_RAW_GRAPH: u64 = 2;
const STREAM_STATES: u64 = 3;
const STREAM_WEIGHTS: u64 = 4;
/// Used by [`sample_feasible_combinations`].
pub const STREAM_SAMPLES: u64 = 5;

/// Generator for one stage of a scenario.
pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloatRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountDistribution {
    Uniform,
    /// `floor(exp(U(ln min, ln(max + 1))))`: small states are common and
    /// large ones rare.
    #[default]
    LogUniform,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDistribution {
    Uniform,
    /// `exp(U(ln min, ln max))`; weights span several orders of magnitude,
    /// so a few transitions dominate each state's behaviour.
    #[default]
    LogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyPreset {
    /// Central switch, four zone switches, four ECUs per zone.
    Zonal { ecu_link: f64, backbone_link: f64 },
    /// The zonal layout with links too wide to ever saturate.
    Uncapped,
    Custom(Topology),
}

impl Default for TopologyPreset {
    fn default() -> Self {
        Self::Zonal {
            ecu_link: 100.0,
            backbone_link: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub n_apps: usize,
    pub dep_edge_prob: f64,
    pub flows_per_edge: IntRange,
    /// Mbit/s.
    pub bandwidth_range: FloatRange,
    pub n_raw_states: usize,
    pub apps_per_state: IntRange,
    pub apps_per_state_distribution: CountDistribution,
    pub state_edge_prob: f64,
    pub weight_range: FloatRange,
    pub weight_distribution: WeightDistribution,
    /// Mbit/s kept free on every link by every generated state.
    pub residual_best_effort: f64,
    pub topology_preset: TopologyPreset,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_apps: 500,
            dep_edge_prob: 0.0004,
            flows_per_edge: IntRange { min: 1, max: 5 },
            bandwidth_range: FloatRange { min: 0.1, max: 5.0 },
            n_raw_states: 500,
            apps_per_state: IntRange { min: 5, max: 500 },
            apps_per_state_distribution: CountDistribution::LogUniform,
            state_edge_prob: 0.01,
            weight_range: FloatRange { min: 1e-9, max: 1.0 },
            weight_distribution: WeightDistribution::LogUniform,
            residual_best_effort: 0.0,
            topology_preset: TopologyPreset::default(),
            seed: 0,
        }
    }
}

impl ScenarioParams {
    /// Named parameter sets: `full` (500 apps, 500 raw states) and `small`
    /// (a few dozen states, for quick experiments and tests).
    pub fn preset(name: &str) -> Result<Self, ScenarioError> {
        match name {
            "full" | "default" => Ok(Self::default()),
            "small" => Ok(Self {
                n_apps: 80,
                dep_edge_prob: 0.004,
                n_raw_states: 40,
                apps_per_state: IntRange { min: 2, max: 80 },
                state_edge_prob: 0.08,
                topology_preset: TopologyPreset::Zonal {
                    ecu_link: 30.0,
                    backbone_link: 300.0,
                },
                ..Self::default()
            }),
            other => Err(ScenarioError::UnknownPreset(other.into())),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: &str| Err(ScenarioError::InvalidParams(msg.into()));
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        if self.n_apps == 0 {
            return bad("n_apps must be at least 1");
        }
        if self.n_raw_states < 2 {
            return bad("n_raw_states must be at least 2");
        }
        if !open_unit(self.dep_edge_prob) {
            return bad("dep_edge_prob must lie in (0, 1)");
        }
        if !open_unit(self.state_edge_prob) {
            return bad("state_edge_prob must lie in (0, 1)");
        }
        let f = self.flows_per_edge;
        if f.min == 0 || f.min > f.max {
            return bad("flows_per_edge needs 1 <= min <= max");
        }
        let b = self.bandwidth_range;
        if !(b.min > 0.0 && b.min <= b.max && b.max.is_finite()) {
            return bad("bandwidth_range needs 0 < min <= max");
        }
        let a = self.apps_per_state;
        if a.min == 0 || a.min > a.max || a.min > self.n_apps {
            return bad("apps_per_state needs 1 <= min <= max and min <= n_apps");
        }
        let w = self.weight_range;
        let lower_ok = match self.weight_distribution {
            WeightDistribution::Uniform => w.min >= 0.0,
            WeightDistribution::LogUniform => w.min > 0.0,
        };
        if !(lower_ok && w.min < w.max && w.max.is_finite()) {
            return bad("weight_range needs 0 <= min < max (min > 0 for log_uniform)");
        }
        if !(self.residual_best_effort >= 0.0 && self.residual_best_effort.is_finite()) {
            return bad("residual_best_effort must be non-negative");
        }
        Ok(())
    }
}

/// The zonal star of stars: `central`, switches `z1sw`..`z4sw`, ECUs
/// `z1-e1`..`z4-e4`.
pub fn zonal_topology(ecu_link: f64, backbone_link: f64) -> Topology {
    let mut nodes = vec![TopologyNode {
        id: "central".into(),
        kind: NodeKind::Switch,
    }];
    let mut links = Vec::new();
    for z in 1..=4 {
        let sw = NodeId(format!("z{z}sw"));
        nodes.push(TopologyNode {
            id: sw.clone(),
            kind: NodeKind::Switch,
        });
        links.push(Link {
            endpoint_a: "central".into(),
            endpoint_b: sw.clone(),
            capacity: backbone_link,
        });
        for e in 1..=4 {
            let ecu = NodeId(format!("z{z}-e{e}"));
            nodes.push(TopologyNode {
                id: ecu.clone(),
                kind: NodeKind::Ecu,
            });
            links.push(Link {
                endpoint_a: sw.clone(),
                endpoint_b: ecu,
                capacity: ecu_link,
            });
        }
    }
    Topology { nodes, links }
}

pub fn gen_topology(preset: &TopologyPreset) -> Result<Topology, ScenarioError> {
    let t = match preset {
        TopologyPreset::Zonal {
            ecu_link,
            backbone_link,
        } => zonal_topology(*ecu_link, *backbone_link),
        TopologyPreset::Uncapped => zonal_topology(f64::MAX, f64::MAX),
        TopologyPreset::Custom(t) => t.clone(),
    };
    t.validate()?;
    if t.ecus().next().is_none() {
        return Err(ScenarioError::InvalidParams("topology has no ECUs".into()));
    }
    Ok(t)
}

/// Directed dependency graph over app positions; `succ[u]` are the apps
/// `u` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyGraph {
    pub succ: Vec<Vec<usize>>,
}

impl DependencyGraph {
    /// Every flow `src -> dst` is a dependency of `src` on `dst`. Generated
    /// catalogs put at least one flow on each dependency edge, so this
    /// recovers the generator's graph exactly.
    pub fn from_catalog(catalog: &AppCatalog) -> Self {
        let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); catalog.len()];
        for f in catalog.flows() {
            let s = catalog.app_position(&f.src_app).expect("validated catalog");
            let d = catalog.app_position(&f.dst_app).expect("validated catalog");
            succ[s].insert(d);
        }
        Self {
            succ: succ.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    /// `seeds` plus everything they transitively depend on.
    pub fn closure(&self, seeds: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
        let seeds: Vec<usize> = seeds.into_iter().collect();
        graph::reachable_from(&self.succ, &seeds).into_iter().collect()
    }
}

/// Apps with uniformly drawn hosts, a G(n, p) dependency graph, and
/// `flows_per_edge` flows on each dependency edge.
pub fn gen_apps_and_flows(params: &ScenarioParams, topology: &Topology) -> Result<AppCatalog, ScenarioError> {
    params.validate()?;
    let mut rng = stage_rng(params.seed, STREAM_APPS);
    let ecus: Vec<&NodeId> = topology.ecus().collect();
    if ecus.is_empty() {
        return Err(ScenarioError::InvalidParams("topology has no ECUs".into()));
    }
    let n = params.n_apps;
    let mut apps: Vec<Application> = (0..n)
        .map(|i| Application {
            id: AppId(format!("a{i}")),
            host_ecu: ecus[rng.random_range(0..ecus.len())].clone(),
            flow_ids: BTreeSet::new(),
        })
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(params.dep_edge_prob) {
                edges.push((u, v));
            }
        }
    }
    let mut flows = Vec::new();
    for (u, v) in edges {
        let count = rng.random_range(params.flows_per_edge.min..=params.flows_per_edge.max);
        for _ in 0..count {
            let id = FlowId(format!("f{}", flows.len()));
            let b = params.bandwidth_range;
            let bandwidth = if b.min == b.max {
                b.min
            } else {
                rng.random_range(b.min..=b.max)
            };
            apps[u].flow_ids.insert(id.clone());
            apps[v].flow_ids.insert(id.clone());
            flows.push(Flow {
                id,
                src_app: apps[u].id.clone(),
                dst_app: apps[v].id.clone(),
                bandwidth,
            });
        }
    }
    Ok(AppCatalog::new(apps, flows)?)
}

fn sample_count(rng: &mut impl Rng, params: &ScenarioParams) -> usize {
    let lo = params.apps_per_state.min;
    let hi = params.apps_per_state.max.min(params.n_apps);
    match params.apps_per_state_distribution {
        CountDistribution::Uniform => rng.random_range(lo..=hi),
        CountDistribution::LogUniform => {
            let (a, b) = ((lo as f64).ln(), (hi as f64 + 1.0).ln());
            let c = rng.random_range(a..b).exp().floor() as usize;
            c.clamp(lo, hi)
        }
    }
}

/// One random state: a sampled number of uniformly chosen apps, closed
/// under dependencies. Returns app positions.
pub fn sample_app_set(rng: &mut impl Rng, params: &ScenarioParams, deps: &DependencyGraph) -> BTreeSet<usize> {
    let n = deps.succ.len();
    let c = sample_count(rng, params).min(n);
    deps.closure(index::sample(rng, n, c))
}

fn to_state(id: StateId, apps: &BTreeSet<usize>, catalog: &AppCatalog, residual: f64) -> State {
    State {
        id,
        apps: apps.iter().map(|&i| catalog.apps()[i].id.clone()).collect(),
        residual_best_effort: residual,
    }
}

fn sample_weight(rng: &mut impl Rng, params: &ScenarioParams) -> f64 {
    let r = params.weight_range;
    match params.weight_distribution {
        WeightDistribution::Uniform => loop {
            let w = rng.random_range(r.min..r.max);
            if w > 0.0 {
                return w;
            }
        },
        WeightDistribution::LogUniform => rng.random_range(r.min.ln()..r.max.ln()).exp().clamp(r.min, r.max),
    }
}

/// Random state graph: largest SCC of G(n_raw_states, state_edge_prob),
/// one dependency-closed app sample per state, coverage repair until every
/// app appears somewhere, then random weights on the SCC's edges.
pub fn gen_state_graph(
    params: &ScenarioParams,
    catalog: &AppCatalog,
    deps: &DependencyGraph,
) -> Result<StateGraph, ScenarioError> {
    params.validate()?;
    let n_raw = params.n_raw_states;
    let mut rng = stage_rng(params.seed, STREAM_RAW_GRAPH);
    let mut adj = vec![Vec::new(); n_raw];
    for (u, row) in adj.iter_mut().enumerate() {
        for v in 0..n_raw {
            if u != v && rng.random_bool(params.state_edge_prob) {
                row.push(v);
            }
        }
    }
    let scc = graph::largest_scc(&adj);
    let m = scc.len();
    if m < 2 {
        return Err(ScenarioError::SccTooSmall(m));
    }

    let mut rng = stage_rng(params.seed, STREAM_STATES);
    let mut sets: Vec<BTreeSet<usize>> = (0..m).map(|_| sample_app_set(&mut rng, params, deps)).collect();

    // Replace random states with samples seeded by a missing app until the
    // union covers the catalog.
    let n = catalog.len();
    let cap = 10 * m;
    let mut rounds = 0;
    loop {
        let mut covered = vec![false; n];
        for s in &sets {
            for &a in s {
                covered[a] = true;
            }
        }
        let missing: Vec<usize> = (0..n).filter(|&a| !covered[a]).collect();
        if missing.is_empty() {
            break;
        }
        if rounds == cap {
            log::warn!("coverage repair stopped after {cap} rounds with {} apps uncovered", missing.len());
            break;
        }
        rounds += 1;
        let i = rng.random_range(0..m);
        let c = sample_count(&mut rng, params).min(n);
        let mut seeds: Vec<usize> = index::sample(&mut rng, n, c).into_vec();
        seeds.push(missing[rng.random_range(0..missing.len())]);
        sets[i] = deps.closure(seeds);
    }
    if rounds > 0 {
        log::debug!("coverage repair replaced {rounds} states");
    }

    let mut rng = stage_rng(params.seed, STREAM_WEIGHTS);
    let pos: std::collections::HashMap<usize, usize> = scc.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut weights = vec![vec![0.0; m]; m];
    for (i, &u) in scc.iter().enumerate() {
        for &v in &adj[u] {
            if let Some(&j) = pos.get(&v) {
                weights[i][j] = sample_weight(&mut rng, params);
            }
        }
    }
    let states = scc
        .iter()
        .zip(&sets)
        .map(|(&raw, set)| to_state(StateId(format!("s{raw}")), set, catalog, params.residual_best_effort))
        .collect();
    Ok(StateGraph::new(states, weights)?)
}

/// Schedules every state once, drops the infeasible ones, and keeps the
/// largest strongly connected component of what remains. Returns the
/// filtered graph and the number of scheduler calls made.
pub fn filter_infeasible(g: &StateGraph, sched: &dyn Scheduler) -> Result<(StateGraph, u64), ScenarioError> {
    let mut keep = Vec::new();
    for (i, s) in g.states.iter().enumerate() {
        if sched.schedule(s)?.feasible {
            keep.push(i);
        }
    }
    let calls = g.len() as u64;
    if keep.is_empty() {
        return Err(ScenarioError::NoFeasibleStates);
    }
    let filtered = g.subgraph(&keep).largest_component();
    log::info!(
        "filter: {} states, {} feasible, {} in the largest component",
        g.len(),
        keep.len(),
        filtered.len()
    );
    Ok((filtered, calls))
}

/// Removes every state whose apps are contained in another state's apps
/// with no larger residual. A removed state's transitions are redirected to
/// the lowest-index surviving state that contains it; transitions that
/// become self-loops are dropped.
pub fn filter_subsumed(g: &StateGraph) -> StateGraph {
    let m = g.len();
    // j dominates i: j's apps and residual cover i's, ties broken by index
    let dominates = |j: usize, i: usize| {
        let (a, b) = (&g.states[i], &g.states[j]);
        if i == j || a.residual_best_effort > b.residual_best_effort || !a.apps.is_subset(&b.apps) {
            return false;
        }
        a.apps.len() < b.apps.len() || a.residual_best_effort < b.residual_best_effort || j < i
    };
    let survivor: Vec<bool> = (0..m).map(|i| !(0..m).any(|j| dominates(j, i))).collect();
    let target: Vec<usize> = (0..m)
        .map(|i| {
            if survivor[i] {
                i
            } else {
                (0..m)
                    .find(|&j| survivor[j] && dominates(j, i))
                    .expect("domination is a strict order, so a maximal dominator exists")
            }
        })
        .collect();
    let mut weights = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let (a, b) = (target[i], target[j]);
            if a != b {
                weights[a][b] += g.weights[i][j];
            }
        }
    }
    let keep: Vec<usize> = (0..m).filter(|&i| survivor[i]).collect();
    let merged = StateGraph {
        states: g.states.clone(),
        weights,
    };
    merged.subgraph(&keep).largest_component()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub count: usize,
    pub feasible: usize,
    /// App fraction of the feasible samples; absent when none was feasible.
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub min: Option<f64>,
}

/// Draws `count` random app combinations with the state sampling rule and
/// summarizes the app fraction of the feasible ones.
pub fn sample_feasible_combinations(
    count: usize,
    params: &ScenarioParams,
    catalog: &AppCatalog,
    sched: &dyn Scheduler,
    seed: u64,
) -> Result<SampleStats, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::InvalidParams("sample count must be at least 1".into()));
    }
    if catalog.is_empty() {
        return Err(ScenarioError::InvalidParams("empty application catalog".into()));
    }
    let mut params = params.clone();
    params.n_apps = catalog.len();
    params.apps_per_state.min = params.apps_per_state.min.min(catalog.len());
    let deps = DependencyGraph::from_catalog(catalog);
    let mut rng = stage_rng(seed, STREAM_SAMPLES);
    let mut fractions = Vec::new();
    for t in 0..count {
        let set = sample_app_set(&mut rng, &params, &deps);
        let state = to_state(StateId(format!("sample-{t}")), &set, catalog, params.residual_best_effort);
        if sched.schedule(&state)?.feasible {
            fractions.push(set.len() as f64 / catalog.len() as f64);
        }
    }
    let feasible = fractions.len();
    let (max, mean, min) = if fractions.is_empty() {
        (None, None, None)
    } else {
        (
            Some(fractions.iter().copied().fold(f64::MIN, f64::max)),
            Some(fractions.iter().sum::<f64>() / feasible as f64),
            Some(fractions.iter().copied().fold(f64::MAX, f64::min)),
        )
    };
    Ok(SampleStats {
        count,
        feasible,
        max,
        mean,
        min,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    pub params: ScenarioParams,
}

/// A complete input: E/E model plus state graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub topology: Topology,
    pub applications: Vec<Application>,
    pub flows: Vec<Flow>,
    pub state_graph: StateGraph,
    #[serde(default)]
    pub meta: Meta,
}

impl Scenario {
    pub fn catalog(&self) -> Result<AppCatalog, ModelError> {
        AppCatalog::new(self.applications.clone(), self.flows.clone())
    }

    /// Full structural check. Returns the catalog and a scheduler for it.
    pub fn validate(&self) -> Result<(AppCatalog, BandwidthScheduler), ScenarioError> {
        self.topology.validate()?;
        let catalog = self.catalog()?;
        self.state_graph.check_shape()?;
        let report = validate_state_graph(&self.state_graph, &catalog);
        if !report.is_valid() {
            return Err(ScenarioError::InvalidGraph(report.to_string()));
        }
        let sched = BandwidthScheduler::new(catalog.clone(), &self.topology)?;
        Ok((catalog, sched))
    }

    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(s).map_err(|e| ScenarioError::Json(e.to_string()))
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

/// Generates a full scenario from `params`.
pub fn generate(params: &ScenarioParams) -> Result<Scenario, ScenarioError> {
    params.validate()?;
    let topology = gen_topology(&params.topology_preset)?;
    let catalog = gen_apps_and_flows(params, &topology)?;
    let deps = DependencyGraph::from_catalog(&catalog);
    let state_graph = gen_state_graph(params, &catalog, &deps)?;
    log::info!(
        "generated {} apps, {} flows, {} states",
        catalog.len(),
        catalog.flows().len(),
        state_graph.len()
    );
    Ok(Scenario {
        topology,
        applications: catalog.apps().to_vec(),
        flows: catalog.flows().to_vec(),
        state_graph,
        meta: Meta {
            seed: params.seed,
            params: params.clone(),
        },
    })
}
