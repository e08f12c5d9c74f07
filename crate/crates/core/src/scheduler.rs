//! Feasibility scheduling.
//!
//! [`Scheduler`] is the black-box contract used by the search: it takes a
//! state and says whether a network configuration exists for it.
//! [`BandwidthScheduler`] is the bundled implementation: every active flow
//! is routed along the unique tree path between its hosts, and the state is
//! feasible when no link carries more than its capacity minus the state's
//! residual best-effort reservation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AppCatalog, Flow, ModelError, NodeId, NodeKind, State, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("host ECU {0} is not in the topology")]
    UnknownEcu(NodeId),
    #[error("host {0} is a switch, not an ECU")]
    NotAnEcu(NodeId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Outcome of one scheduling attempt. Links are addressed by their index in
/// the topology's link list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub feasible: bool,
    pub link_load: Vec<f64>,
    pub violated_links: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerStats {
    pub calls: u64,
}

pub trait Scheduler: Send + Sync {
    /// Decides feasibility of `state`. Counts as one call.
    fn schedule(&self, state: &State) -> Result<ScheduleResult, ScheduleError>;

    fn stats(&self) -> SchedulerStats;

    /// Zeroes the call counter and returns its previous value.
    fn reset_stats(&self) -> SchedulerStats;
}

/// Rooted view of a tree topology for path queries.
struct TreeRouter<'a> {
    topology: &'a Topology,
    index: HashMap<&'a NodeId, usize>,
    parent: Vec<usize>,
    parent_link: Vec<usize>,
    depth: Vec<usize>,
}

impl<'a> TreeRouter<'a> {
    fn new(topology: &'a Topology) -> Self {
        let n = topology.nodes.len();
        let index = topology.node_index();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (l, link) in topology.links.iter().enumerate() {
            let (a, b) = (index[&link.endpoint_a], index[&link.endpoint_b]);
            adj[a].push((b, l));
            adj[b].push((a, l));
        }
        let mut parent = vec![usize::MAX; n];
        let mut parent_link = vec![usize::MAX; n];
        let mut depth = vec![0; n];
        let mut queue = std::collections::VecDeque::new();
        if n > 0 {
            parent[0] = 0;
            queue.push_back(0);
        }
        while let Some(v) = queue.pop_front() {
            for &(w, l) in &adj[v] {
                if parent[w] == usize::MAX {
                    parent[w] = v;
                    parent_link[w] = l;
                    depth[w] = depth[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        Self {
            topology,
            index,
            parent,
            parent_link,
            depth,
        }
    }

    fn ecu(&self, id: &NodeId) -> Result<usize, ScheduleError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| ScheduleError::UnknownEcu(id.clone()))?;
        if self.topology.nodes[i].kind != NodeKind::Ecu {
            return Err(ScheduleError::NotAnEcu(id.clone()));
        }
        Ok(i)
    }

    /// Links on the path from `a` to `b`, in travel order.
    fn path(&self, mut a: usize, mut b: usize) -> Vec<usize> {
        let mut up = Vec::new();
        let mut down = Vec::new();
        while self.depth[a] > self.depth[b] {
            up.push(self.parent_link[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            down.push(self.parent_link[b]);
            b = self.parent[b];
        }
        while a != b {
            up.push(self.parent_link[a]);
            a = self.parent[a];
            down.push(self.parent_link[b]);
            b = self.parent[b];
        }
        up.extend(down.into_iter().rev());
        up
    }

    fn route(&self, flow: &Flow, catalog: &AppCatalog) -> Result<Vec<usize>, ScheduleError> {
        let host = |app| {
            catalog
                .app(app)
                .map(|a| &a.host_ecu)
                .ok_or_else(|| ModelError::UnknownApp(app.clone()))
        };
        let src = self.ecu(host(&flow.src_app)?)?;
        let dst = self.ecu(host(&flow.dst_app)?)?;
        Ok(self.path(src, dst))
    }
}

/// The unique tree path between the host ECUs of `flow`'s endpoints, as link
/// indices in travel order. Empty when both apps share a host.
///
/// `topology` must already be a validated tree.
pub fn route(flow: &Flow, catalog: &AppCatalog, topology: &Topology) -> Result<Vec<usize>, ScheduleError> {
    TreeRouter::new(topology).route(flow, catalog)
}

/// Per-link bandwidth-sum scheduler over a tree topology.
#[derive(Debug)]
pub struct BandwidthScheduler {
    catalog: AppCatalog,
    capacity: Vec<f64>,
    // per flow: (src app position, dst app position, bandwidth, route)
    flows: Vec<(usize, usize, f64, Vec<usize>)>,
    calls: AtomicU64,
}

impl BandwidthScheduler {
    /// Routes every flow up front. Fails if the topology is not a tree or a
    /// host ECU is missing.
    pub fn new(catalog: AppCatalog, topology: &Topology) -> Result<Self, ScheduleError> {
        topology.validate()?;
        let router = TreeRouter::new(topology);
        let flows = catalog
            .flows()
            .iter()
            .map(|f| {
                let route = router.route(f, &catalog)?;
                let src = catalog.app_position(&f.src_app).expect("validated catalog");
                let dst = catalog.app_position(&f.dst_app).expect("validated catalog");
                Ok((src, dst, f.bandwidth, route))
            })
            .collect::<Result<Vec<_>, ScheduleError>>()?;
        Ok(Self {
            capacity: topology.links.iter().map(|l| l.capacity).collect(),
            catalog,
            flows,
            calls: AtomicU64::new(0),
        })
    }

    pub fn catalog(&self) -> &AppCatalog {
        &self.catalog
    }
}

impl Scheduler for BandwidthScheduler {
    fn schedule(&self, state: &State) -> Result<ScheduleResult, ScheduleError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut present = vec![false; self.catalog.len()];
        for app in &state.apps {
            let i = self
                .catalog
                .app_position(app)
                .ok_or_else(|| ModelError::UnknownApp(app.clone()))?;
            present[i] = true;
        }
        let mut link_load = vec![0.0; self.capacity.len()];
        for (src, dst, bw, route) in &self.flows {
            if present[*src] && present[*dst] {
                for &l in route {
                    link_load[l] += bw;
                }
            }
        }
        let violated_links: Vec<usize> = link_load
            .iter()
            .zip(&self.capacity)
            .enumerate()
            .filter(|(_, (&load, &cap))| load > cap - state.residual_best_effort)
            .map(|(l, _)| l)
            .collect();
        Ok(ScheduleResult {
            feasible: violated_links.is_empty(),
            link_load,
            violated_links,
        })
    }

    fn stats(&self) -> SchedulerStats {
        SchedulerStats {
            calls: self.calls.load(Ordering::Relaxed),
        }
    }

    fn reset_stats(&self) -> SchedulerStats {
        SchedulerStats {
            calls: self.calls.swap(0, Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{active_flows, AppId, Application, Link, TopologyNode};
    use crate::scenario::zonal_topology;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn app(id: &str, host: &str) -> Application {
        Application {
            id: id.into(),
            host_ecu: host.into(),
            flow_ids: BTreeSet::new(),
        }
    }

    fn flow(id: &str, src: &str, dst: &str, bw: f64) -> Flow {
        Flow {
            id: id.into(),
            src_app: src.into(),
            dst_app: dst.into(),
            bandwidth: bw,
        }
    }

    fn state(apps: &[&str]) -> State {
        State::new("s", apps.iter().map(|&a| AppId::from(a)))
    }

    fn link_name(t: &Topology, l: usize) -> (String, String) {
        let link = &t.links[l];
        (link.endpoint_a.to_string(), link.endpoint_b.to_string())
    }

    #[test]
    fn same_host_routes_nowhere() {
        let t = zonal_topology(100.0, 1000.0);
        let cat = AppCatalog::new(
            vec![app("a", "z1-e1"), app("b", "z1-e1")],
            vec![flow("f", "a", "b", 1.0)],
        )
        .unwrap();
        assert!(route(&cat.flows()[0], &cat, &t).unwrap().is_empty());
    }

    #[test]
    fn cross_zone_route_has_four_links() {
        let t = zonal_topology(100.0, 1000.0);
        let cat = AppCatalog::new(
            vec![app("a", "z1-e1"), app("b", "z2-e1")],
            vec![flow("f", "a", "b", 1.0)],
        )
        .unwrap();
        let path = route(&cat.flows()[0], &cat, &t).unwrap();
        let names: Vec<_> = path.iter().map(|&l| link_name(&t, l)).collect();
        let s = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert_eq!(
            names,
            vec![
                s("z1sw", "z1-e1"),
                s("central", "z1sw"),
                s("central", "z2sw"),
                s("z2sw", "z2-e1"),
            ]
        );
    }

    #[test]
    fn ghost_host_is_an_error() {
        let t = zonal_topology(100.0, 1000.0);
        let cat = AppCatalog::new(
            vec![app("a", "z1-e1"), app("b", "ghost")],
            vec![flow("f", "a", "b", 1.0)],
        )
        .unwrap();
        let err = route(&cat.flows()[0], &cat, &t).unwrap_err();
        assert_eq!(err, ScheduleError::UnknownEcu("ghost".into()));
        assert!(BandwidthScheduler::new(cat, &t).is_err());
    }

    /// Two ECUs behind one switch, 100 Mbit/s each.
    fn pair_topology() -> Topology {
        Topology {
            nodes: vec![
                TopologyNode {
                    id: "sw".into(),
                    kind: NodeKind::Switch,
                },
                TopologyNode {
                    id: "e1".into(),
                    kind: NodeKind::Ecu,
                },
                TopologyNode {
                    id: "e2".into(),
                    kind: NodeKind::Ecu,
                },
            ],
            links: vec![
                Link {
                    endpoint_a: "sw".into(),
                    endpoint_b: "e1".into(),
                    capacity: 100.0,
                },
                Link {
                    endpoint_a: "sw".into(),
                    endpoint_b: "e2".into(),
                    capacity: 100.0,
                },
            ],
        }
    }

    fn pair_scheduler(flows: Vec<Flow>) -> BandwidthScheduler {
        let cat = AppCatalog::new(vec![app("a1", "e1"), app("a2", "e2"), app("a3", "e2")], flows).unwrap();
        BandwidthScheduler::new(cat, &pair_topology()).unwrap()
    }

    #[test]
    fn empty_state_is_feasible() {
        let s = pair_scheduler(vec![flow("f1", "a1", "a2", 60.0)]);
        let r = s.schedule(&state(&[])).unwrap();
        assert!(r.feasible);
        assert_eq!(r.link_load, vec![0.0, 0.0]);
    }

    #[test]
    fn single_flow_loads_its_path() {
        let s = pair_scheduler(vec![flow("f1", "a1", "a2", 5.0)]);
        let r = s.schedule(&state(&["a1", "a2"])).unwrap();
        assert!(r.feasible);
        assert_eq!(r.link_load, vec![5.0, 5.0]);
    }

    #[test]
    fn overload_is_reported() {
        let s = pair_scheduler(vec![flow("f1", "a1", "a2", 60.0), flow("f2", "a1", "a3", 40.1)]);
        let r = s.schedule(&state(&["a1", "a2", "a3"])).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.violated_links, vec![0, 1]);
        assert_eq!(r.link_load[0], 60.0 + 40.1);

        assert!(s.schedule(&state(&["a1", "a2"])).unwrap().feasible);
    }

    #[test]
    fn residual_larger_than_capacity_is_infeasible_not_error() {
        let s = pair_scheduler(vec![]);
        let mut st = state(&[]);
        st.residual_best_effort = 150.0;
        let r = s.schedule(&st).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.violated_links, vec![0, 1]);
    }

    #[test]
    fn unknown_app_is_an_error() {
        let s = pair_scheduler(vec![]);
        assert!(s.schedule(&state(&["nope"])).is_err());
    }

    #[test]
    fn call_counter() {
        let s = pair_scheduler(vec![]);
        for _ in 0..3 {
            s.schedule(&state(&[])).unwrap();
        }
        assert_eq!(s.reset_stats().calls, 3);
        assert_eq!(s.reset_stats().calls, 0);
        for _ in 0..5 {
            s.schedule(&state(&[])).unwrap();
        }
        assert_eq!(s.stats().calls, 5);
        assert_eq!(s.reset_stats().calls, 5);
        assert_eq!(s.stats().calls, 0);
    }

    #[test]
    fn concurrent_calls_are_all_counted() {
        let s = pair_scheduler(vec![flow("f1", "a1", "a2", 5.0)]);
        let st = state(&["a1", "a2"]);
        let first = s.schedule(&st).unwrap();
        s.reset_stats();
        std::thread::scope(|scope| {
            for _ in 0..4 {
                scope.spawn(|| {
                    for _ in 0..250 {
                        assert_eq!(s.schedule(&st).unwrap(), first);
                    }
                });
            }
        });
        assert_eq!(s.stats().calls, 1000);
    }

    fn random_catalog(n_apps: usize, flows: &[(usize, usize, f64)], hosts: &[usize]) -> AppCatalog {
        let t = zonal_topology(100.0, 1000.0);
        let ecus: Vec<_> = t.ecus().cloned().collect();
        let apps = (0..n_apps)
            .map(|i| Application {
                id: AppId(format!("a{i}")),
                host_ecu: ecus[hosts[i] % ecus.len()].clone(),
                flow_ids: BTreeSet::new(),
            })
            .collect();
        let flows = flows
            .iter()
            .enumerate()
            .filter(|(_, (s, d, _))| s != d)
            .map(|(k, &(s, d, bw))| flow(&format!("f{k}"), &format!("a{s}"), &format!("a{d}"), bw))
            .collect();
        AppCatalog::new(apps, flows).unwrap()
    }

    proptest! {
        #[test]
        fn loads_match_per_flow_recomputation(
            hosts in proptest::collection::vec(0usize..16, 12),
            flows in proptest::collection::vec((0usize..12, 0usize..12, 0.1f64..40.0), 0..40),
            member in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let t = zonal_topology(100.0, 1000.0);
            let cat = random_catalog(12, &flows, &hosts);
            let sched = BandwidthScheduler::new(cat.clone(), &t).unwrap();
            let st = State::new("s", (0..12).filter(|&i| member[i]).map(|i| AppId(format!("a{i}"))));
            let got = sched.schedule(&st).unwrap();

            // Oracle: walk each active flow's route independently.
            let mut load = vec![0.0; t.links.len()];
            for f in active_flows(&st, &cat).unwrap() {
                for l in route(f, &cat, &t).unwrap() {
                    load[l] += f.bandwidth;
                }
            }
            prop_assert_eq!(&got.link_load, &load);
            let violated: Vec<usize> = (0..load.len()).filter(|&l| load[l] > t.links[l].capacity).collect();
            prop_assert_eq!(&got.violated_links, &violated);
            prop_assert_eq!(got.feasible, violated.is_empty());
        }
    }
}
