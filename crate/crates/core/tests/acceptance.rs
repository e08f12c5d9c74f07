//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits non-zero if any fails.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use confgen::clustering::{agglomerate_points, Dendrogram, Merge};
use confgen::metrics::{cluster_transition_matrix, frontier_objective_trace, total_weight};
use confgen::model::{active_flows, AppId, State};
use confgen::pipeline::{self, CompareRun, Filtered, PipelineOptions, Prepared};
use confgen::scenario::{self, sample_app_set, stage_rng, DependencyGraph, ScenarioParams, TopologyPreset};
use confgen::scheduler::{route, ScheduleError, ScheduleResult, Scheduler, SchedulerStats};
use confgen::search::{parallel_search, search};
use confgen::spectral::{build_laplacian, embed, norm_inf, LaplacianKind};
use confgen::{Linkage, StateGraph};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

struct FullRun {
    seed: u64,
    prepared: Prepared,
    filtered: Filtered,
    run: CompareRun,
    elapsed: Duration,
}

fn full_runs() -> Vec<FullRun> {
    (0..SEEDS)
        .map(|seed| {
            let params = ScenarioParams {
                seed,
                ..ScenarioParams::preset("full").unwrap()
            };
            let start = Instant::now();
            let prepared = Prepared::new(scenario::generate(&params).unwrap()).unwrap();
            let opts = PipelineOptions::default();
            let run = pipeline::run_compare(&prepared, &opts).unwrap();
            let elapsed = start.elapsed();
            let filtered = pipeline::filter(&prepared, &opts).unwrap();
            FullRun {
                seed,
                prepared,
                filtered,
                run,
                elapsed,
            }
        })
        .collect()
}

fn full_scale_reduction(runs: &[FullRun]) -> Outcome {
    let mut coverage_ok = true;
    let mut h_ok = true;
    let (mut k_good, mut w_good) = (0, 0);
    let mut slowest = Duration::ZERO;
    let (mut k_worst, mut w_worst) = (0.0f64, 0.0f64);
    for r in runs {
        let rows = &r.run.table.rows;
        let (u, red) = (&rows[1], &rows[2]);
        coverage_ok &= u.r_A == 1.0 && red.r_A == 1.0;
        h_ok &= red.h < u.h;
        let kr = red.k as f64 / u.k as f64;
        let wr = red.W / u.W;
        k_good += (kr <= 0.5) as usize;
        w_good += (wr <= 0.5) as usize;
        k_worst = k_worst.max(kr);
        w_worst = w_worst.max(wr);
        slowest = slowest.max(r.elapsed);
        if kr > 0.5 || wr > 0.5 || red.h >= u.h || red.r_A != 1.0 || u.r_A != 1.0 {
            println!(
                "    seed {}: m={} k {}->{} W {:.3}->{:.3} h {}->{} r_A {}/{}",
                r.seed, u.k, u.k, red.k, u.W, red.W, u.h, red.h, u.r_A, red.r_A
            );
        }
    }
    let time_ok = slowest < Duration::from_secs(60);
    outcome(
        "full_scale_reduction",
        coverage_ok && h_ok && k_good >= 18 && w_good >= 18 && time_ok,
        format!(
            "r_A=100% on all seeds: {coverage_ok}; k ratio <= 0.5 on {k_good}/{SEEDS} (worst {k_worst:.3}); \
             W ratio <= 0.5 on {w_good}/{SEEDS} (worst {w_worst:.3}); reduced h < unfiltered h on all: {h_ok}; \
             slowest compare {:.2}s",
            slowest.as_secs_f64()
        ),
    )
}

fn worst_case_inadequacy(runs: &[FullRun]) -> Outcome {
    let mut all_infeasible = true;
    let mut means_ok = true;
    let mut highest = 0.0f64;
    let mut peak = 0.0f64;
    for r in runs {
        let wc = &r.run.worst_case;
        all_infeasible &= !wc.schedule.feasible;
        let samples = wc.samples.as_ref().expect("sampling enabled");
        let mean = samples.mean.unwrap_or(0.0);
        means_ok &= samples.count == 1000 && mean < 0.5;
        highest = highest.max(mean);
        peak = peak.max(samples.max.unwrap_or(0.0));
    }
    outcome(
        "worst_case_inadequacy",
        all_infeasible && means_ok,
        format!(
            "union infeasible on all seeds: {all_infeasible}; 1000-sample mean fraction < 0.5 on all: {means_ok} \
             (highest mean {highest:.3}, largest sample {peak:.3})"
        ),
    )
}

/// Feasibility by leaf set. State `i` carries only app `a{i}`.
struct Labels {
    feasible: HashMap<BTreeSet<usize>, bool>,
    calls: AtomicU64,
}

impl Scheduler for Labels {
    fn schedule(&self, state: &State) -> Result<ScheduleResult, ScheduleError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let leaves: BTreeSet<usize> = state.apps.iter().map(|a| a.as_str()[1..].parse().unwrap()).collect();
        let ok = self.feasible[&leaves];
        Ok(ScheduleResult {
            feasible: ok,
            link_load: vec![],
            violated_links: if ok { vec![] } else { vec![0] },
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

fn random_dendrogram(rng: &mut ChaCha8Rng, m: usize) -> Dendrogram {
    let mut active: Vec<usize> = (0..m).collect();
    let mut merges = Vec::new();
    let mut size = vec![1usize; m];
    while active.len() > 1 {
        let a = active.swap_remove(rng.random_range(0..active.len()));
        let b = active.swap_remove(rng.random_range(0..active.len()));
        let s = size[a] + size[b];
        merges.push(Merge {
            left: a.min(b),
            right: a.max(b),
            height: merges.len() as f64 + 1.0,
            size: s,
        });
        size.push(s);
        active.push(m + merges.len() - 1);
    }
    Dendrogram::from_merges(m, merges).unwrap()
}

/// Every antichain cover of the subtree at `node` made of feasible nodes.
fn covers(d: &Dendrogram, feasible: &[bool], node: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if feasible[node] {
        out.push(vec![node]);
    }
    if let Some((l, r)) = d.children(node) {
        let left = covers(d, feasible, l);
        let right = covers(d, feasible, r);
        for a in &left {
            for b in &right {
                let mut c = a.clone();
                c.extend(b);
                out.push(c);
            }
        }
    }
    out
}

fn search_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cases = 2000;
    let mut mismatches = 0;
    let mut first = String::new();
    for case in 0..cases {
        let m = rng.random_range(1..=8);
        let d = random_dendrogram(&mut rng, m);
        let n = d.node_count();
        // Downward-closed labeling: leaves feasible, a parent only if both
        // children are.
        let p = rng.random_range(0.2..0.9);
        let mut feasible = vec![true; n];
        for id in m..n {
            let (l, r) = d.children(id).unwrap();
            feasible[id] = feasible[l] && feasible[r] && rng.random_bool(p);
        }
        let weights: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 0.0 } else { rng.random_range(0.01..1.0) }).collect())
            .collect();
        let states = (0..m).map(|i| State::new(format!("s{i}"), [AppId(format!("a{i}"))])).collect();
        let g = StateGraph::new(states, weights).unwrap();
        let sched = Labels {
            feasible: (0..n)
                .map(|id| (d.leaves_under(id).unwrap().into_iter().collect(), feasible[id]))
                .collect(),
            calls: AtomicU64::new(0),
        };

        let parents = d.parents();
        let score = |cover: &[usize]| {
            let mut part = vec![0; m];
            for (c, &node) in cover.iter().enumerate() {
                for l in d.leaves_under(node).unwrap() {
                    part[l] = c;
                }
            }
            let w = total_weight(&cluster_transition_matrix(&g, &part).unwrap());
            let mut visited = BTreeSet::new();
            for &node in cover {
                let mut x = Some(node);
                while let Some(v) = x {
                    visited.insert(v);
                    x = parents[v];
                }
            }
            (cover.len() as f64 + w + visited.len() as f64, visited.len())
        };
        let all = covers(&d, &feasible, d.root());
        let scored: Vec<(f64, usize, BTreeSet<usize>)> = all
            .iter()
            .map(|c| {
                let (gval, h) = score(c);
                (gval, h, c.iter().copied().collect())
            })
            .collect();
        let best = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let minimizers: Vec<_> = scored.iter().filter(|s| s.0 == best).collect();

        let got = search(&d, &g, &sched).unwrap();
        let members: BTreeSet<usize> = got.members.iter().map(|mm| mm.node).collect();
        let ok = minimizers.len() == 1 && minimizers[0].2 == members && minimizers[0].1 as u64 == got.search_calls;
        if !ok {
            mismatches += 1;
            if first.is_empty() {
                first = format!(" first mismatch at case {case}: search {members:?}, oracle {minimizers:?}");
            }
        }
    }
    outcome(
        "search_oracle_equivalence",
        mismatches == 0,
        format!("{cases} random dendrograms with m <= 8: {mismatches} mismatches{first}"),
    )
}

fn call_bound_and_monotonicity(runs: &[FullRun], small: &[(Prepared, pipeline::ReducedRun)]) -> Outcome {
    let mut checked = 0;
    let mut bound_ok = true;
    let mut monotone_ok = true;
    let all = runs
        .iter()
        .map(|r| &r.run.reduced)
        .chain(small.iter().map(|(_, r)| r));
    for r in all {
        let m = r.graph.len() as u64;
        bound_ok &= r.configurations.search_calls <= 2 * m - 1;
        let trace = frontier_objective_trace(&r.graph, &r.dendrogram, &r.configurations);
        monotone_ok &= trace.windows(2).all(|w| w[0].g <= w[1].g);
        let last = trace.last().unwrap();
        monotone_ok &= last.k == r.report.k && last.h == r.report.h && (last.W - r.report.W).abs() <= 1e-9 * r.report.W.max(1.0);
        checked += 1;
    }

    // Links too wide to saturate: the root is feasible.
    let mut identity_ok = true;
    for seed in 0..5 {
        let params = ScenarioParams {
            seed,
            topology_preset: TopologyPreset::Uncapped,
            ..ScenarioParams::preset("full").unwrap()
        };
        let p = Prepared::new(scenario::generate(&params).unwrap()).unwrap();
        let opts = PipelineOptions::default();
        let f = pipeline::filter(&p, &opts).unwrap();
        let r = pipeline::run_reduced(&p, &f, &opts).unwrap();
        identity_ok &= r.configurations.visited[0].feasible && (r.report.k, r.report.W, r.report.h) == (1, 0.0, 1);
    }
    outcome(
        "call_bound_and_monotonicity",
        bound_ok && monotone_ok && identity_ok,
        format!(
            "{checked} runs: calls <= 2m-1: {bound_ok}; frontier g non-decreasing and consistent: {monotone_ok}; \
             feasible root gives k=1 W=0 h=1 on 5 uncapped scenarios: {identity_ok}"
        ),
    )
}

fn spectral_correctness(runs: &[FullRun]) -> Outcome {
    let mut worst_residual = 0.0f64;
    let mut worst_ortho = 0.0f64;
    let mut residual_ok = true;
    let mut ortho_ok = true;
    let mut pow2_exact = true;
    let mut general_dev = 0.0f64;
    for r in runs {
        let g = &r.filtered.graph;
        let dim = 8.min(g.len() - 1);
        let kind = LaplacianKind::default();
        let l = build_laplacian(g, kind).unwrap();
        let e = embed(g, dim, kind).unwrap();
        let tol = 1e-8 * norm_inf(&l).max(1.0);
        for k in 0..dim {
            let v = e.coordinates.column(k);
            let res = (&l * v - v * e.eigenvalues[k]).norm();
            worst_residual = worst_residual.max(res / norm_inf(&l).max(1.0));
            residual_ok &= res <= tol;
            let mut dev = (v.norm() - 1.0).abs();
            for j in 0..k {
                dev = dev.max(v.dot(&e.coordinates.column(j)).abs());
            }
            worst_ortho = worst_ortho.max(dev);
            ortho_ok &= dev <= 1e-8;
        }
        for c in [0.25, 8.0, 1024.0] {
            let scaled = scale(g, c);
            pow2_exact &= embed(&scaled, dim, kind).unwrap() == e;
        }
        let other = embed(&scale(g, 3.7), dim, kind).unwrap();
        general_dev = general_dev.max((&other.coordinates - &e.coordinates).amax());
    }

    let two = StateGraph::new(
        vec![State::new("s0", []), State::new("s1", [])],
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
    )
    .unwrap();
    let e2 = embed(&two, 1, LaplacianKind::default()).unwrap();
    let two_ok = (e2.eigenvalues[0] - 2.0).abs() <= 1e-12;
    outcome(
        "spectral_correctness",
        residual_ok && ortho_ok && pow2_exact && two_ok,
        format!(
            "{SEEDS} filtered graphs: residual/max(1,|L|inf) <= 1e-8: {residual_ok} (worst {worst_residual:.1e}); \
             orthonormal within 1e-8: {ortho_ok} (worst {worst_ortho:.1e}); bitwise equal under x0.25, x8, x1024: {pow2_exact}; \
             max coordinate change under x3.7 {general_dev:.1e}; 2-cycle eigenvalue 2 within 1e-12: {two_ok}"
        ),
    )
}

fn scale(g: &StateGraph, c: f64) -> StateGraph {
    StateGraph {
        states: g.states.clone(),
        weights: g.weights.iter().map(|r| r.iter().map(|w| w * c).collect()).collect(),
    }
}

fn scheduler_properties(run: &FullRun) -> Outcome {
    let p = &run.prepared;
    let catalog = &p.catalog;
    let sched = &p.scheduler;
    let params = &p.scenario.meta.params;
    let deps = DependencyGraph::from_catalog(catalog);
    let mut rng = stage_rng(1234, 0);
    let n = catalog.len();
    let to_state = |set: &BTreeSet<usize>, residual: f64| State {
        id: "probe".into(),
        apps: set.iter().map(|&i| catalog.apps()[i].id.clone()).collect(),
        residual_best_effort: residual,
    };
    let pairs = 10_000;
    let mut violations = 0;
    let mut infeasible_subsets = 0;
    for _ in 0..pairs {
        let sub = sample_app_set(&mut rng, params, &deps);
        let mut sup = sub.clone();
        let extra = rng.random_range(0..=n / 4);
        for _ in 0..extra {
            sup.insert(rng.random_range(0..n));
        }
        let r_sub = if rng.random_bool(0.2) { rng.random_range(0.0..20.0) } else { 0.0 };
        let r_sup = r_sub + if rng.random_bool(0.5) { rng.random_range(0.0..20.0) } else { 0.0 };
        let a = sched.schedule(&to_state(&sub, r_sub)).unwrap();
        let b = sched.schedule(&to_state(&sup, r_sup)).unwrap();
        if !a.feasible {
            infeasible_subsets += 1;
            if b.feasible {
                violations += 1;
            }
        }
    }

    let mut load_mismatch = 0;
    let probes = 1000;
    for _ in 0..probes {
        let set: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
        let st = to_state(&set, 0.0);
        let got = sched.schedule(&st).unwrap();
        let mut load = vec![0.0; p.scenario.topology.links.len()];
        for f in active_flows(&st, catalog).unwrap() {
            for l in route(f, catalog, &p.scenario.topology).unwrap() {
                load[l] += f.bandwidth;
            }
        }
        load_mismatch += (got.link_load != load) as usize;
    }

    let empty = sched.schedule(&State::new("empty", [])).unwrap();
    let empty_ok = empty.feasible && empty.link_load.iter().all(|&x| x == 0.0);
    outcome(
        "scheduler_properties",
        violations == 0 && load_mismatch == 0 && empty_ok && infeasible_subsets > 0,
        format!(
            "{pairs} subset/superset pairs ({infeasible_subsets} infeasible subsets): {violations} anti-monotonicity violations; \
             {probes} states: {load_mismatch} load mismatches against per-flow recomputation; empty state feasible with zero load: {empty_ok}"
        ),
    )
}

fn dendrogram_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cases = 1000;
    let mut bad = 0;
    for _ in 0..cases {
        let m = rng.random_range(1..=60);
        let d = rng.random_range(1..=8);
        let pts = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        let dend = agglomerate_points(&pts, Linkage::Average).unwrap();
        let mut ok = dend.node_count() == 2 * m - 1;
        let parents = dend.parents();
        for id in 0..dend.node_count() {
            if let Some(p) = parents[id] {
                ok &= dend.height(p) >= dend.height(id);
            }
        }
        bad += (!ok) as usize;
    }
    let line = agglomerate_points(&DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 10.0]), Linkage::Average).unwrap();
    let heights: Vec<f64> = line.merges().iter().map(|mg| mg.height).collect();
    let line_ok = heights == [1.0, 9.5];
    outcome(
        "dendrogram_structure",
        bad == 0 && line_ok,
        format!("{cases} random embeddings: {bad} with wrong node count or inverted heights; 0/1/10 merges at {heights:?}"),
    )
}

fn determinism_and_round_trip(runs: &[FullRun], small: &[(Prepared, pipeline::ReducedRun)]) -> Outcome {
    let mut files_identical = true;
    let mut reports_identical = true;
    let mut round_trip = true;
    for r in runs.iter().take(3) {
        let params = &r.prepared.scenario.meta.params;
        let a = scenario::generate(params).unwrap().to_json();
        let b = scenario::generate(params).unwrap().to_json();
        files_identical &= a == b && a == r.prepared.scenario.to_json();
        let parsed = confgen::Scenario::from_json(&a).unwrap();
        round_trip &= parsed == r.prepared.scenario && parsed.to_json() == a;
        let again = pipeline::run_compare(&Prepared::new(parsed).unwrap(), &PipelineOptions::default()).unwrap();
        reports_identical &= again.table.to_csv() == r.run.table.to_csv()
            && serde_json::to_string(&again.table).unwrap() == serde_json::to_string(&r.run.table).unwrap();
    }

    let mut parallel_ok = true;
    for (p, seq) in small {
        let g = &seq.graph;
        for workers in [2, 4, 8] {
            let par = parallel_search(&seq.dendrogram, g, &p.scheduler, workers).unwrap();
            let a: Vec<usize> = seq.configurations.members.iter().map(|m| m.node).collect();
            let b: Vec<usize> = par.members.iter().map(|m| m.node).collect();
            parallel_ok &= a == b && par.search_calls == seq.configurations.search_calls;
        }
    }
    outcome(
        "determinism_and_round_trip",
        files_identical && reports_identical && round_trip && parallel_ok,
        format!(
            "regenerated scenario files byte-identical: {files_identical}; reports identical: {reports_identical}; \
             JSON round-trip lossless: {round_trip}; parallel search (2/4/8 workers) matches sequential on {} scenarios: {parallel_ok}",
            small.len()
        ),
    )
}

fn small_runs() -> Vec<(Prepared, pipeline::ReducedRun)> {
    (0..100)
        .map(|seed| {
            let params = ScenarioParams {
                seed,
                ..ScenarioParams::preset("small").unwrap()
            };
            let p = Prepared::new(scenario::generate(&params).unwrap()).unwrap();
            let opts = PipelineOptions::default();
            let f = pipeline::filter(&p, &opts).unwrap();
            let r = pipeline::run_reduced(&p, &f, &opts).unwrap();
            (p, r)
        })
        .collect()
}

fn main() {
    let start = Instant::now();
    let runs = full_runs();
    let small = small_runs();
    let outcomes = [
        full_scale_reduction(&runs),
        worst_case_inadequacy(&runs),
        search_oracle(),
        call_bound_and_monotonicity(&runs, &small),
        spectral_correctness(&runs),
        scheduler_properties(&runs[0]),
        dendrogram_structure(),
        determinism_and_round_trip(&runs, &small),
    ];
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += (!o.pass) as usize;
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        outcomes.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
