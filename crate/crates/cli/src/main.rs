//! `confgen`: generate scenarios, run the configuration pipeline, export
//! intermediate stages.
//!
//! Exit codes: 0 success, 2 bad input, 3 pipeline failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use confgen::metrics::{frontier_objective_trace, ComparisonTable};
use confgen::pipeline::{self, PipelineError, Prepared};
use confgen::scenario::{self, ScenarioError, TopologyPreset};
use confgen::{LaplacianKind, Linkage, PipelineOptions, RunMode, Scenario, ScenarioParams, Topology};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Pipeline(e) if e.is_input_error() => 2,
            CliError::Pipeline(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Pipeline(e.into())
    }
}

#[derive(Parser)]
#[command(name = "confgen", version, about = "Offline in-vehicle network configuration generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario file.
    Gen(GenArgs),
    /// Run one scenario (or all three with `--mode compare`) and write the metrics.
    Run(RunArgs),
    /// Write an intermediate stage of the reduced pipeline.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Named parameter set: full or small.
    #[arg(long, default_value = "full")]
    preset: String,
    /// JSON file with generator parameters; overrides the preset.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    n_apps: Option<usize>,
    #[arg(long)]
    n_raw_states: Option<usize>,
    #[arg(long)]
    dep_edge_prob: Option<f64>,
    #[arg(long)]
    state_edge_prob: Option<f64>,
    /// zonal, uncapped, or a path to a topology JSON file.
    #[arg(long)]
    topology: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "worst_case")]
    WorstCase,
    Unfiltered,
    Reduced,
    Compare,
}

impl From<ModeArg> for RunMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::WorstCase => RunMode::WorstCase,
            ModeArg::Unfiltered => RunMode::Unfiltered,
            ModeArg::Reduced => RunMode::Reduced,
            ModeArg::Compare => RunMode::Compare,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Single,
    Average,
    Complete,
}

#[derive(Clone, Copy, ValueEnum)]
enum LaplacianArg {
    #[value(name = "symmetrized_weights")]
    SymmetrizedWeights,
    #[value(name = "random_walk")]
    RandomWalk,
    Directed,
}

#[derive(Args)]
struct PipelineArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, value_enum, default_value = "average")]
    linkage: LinkageArg,
    #[arg(long, value_enum, default_value = "symmetrized_weights")]
    laplacian: LaplacianArg,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides the scenario seed for randomized steps.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    normalize_weights: bool,
    #[arg(long)]
    enable_subsume_filter: bool,
    /// Random combinations drawn for the worst-case coverage estimate.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_enum, default_value = "compare")]
    mode: ModeArg,
    /// Report file; CSV when the name ends in `.csv`, JSON otherwise.
    /// Standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Include the search visit trace (a sibling `.trace.json` for CSV output).
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Embedding,
    Dendrogram,
    Trace,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(value_enum)]
    kind: ExportKind,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl PipelineArgs {
    fn options(&self) -> Result<PipelineOptions, CliError> {
        if self.dim == 0 {
            return Err(CliError::Input("--dim must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Input("--workers must be at least 1".into()));
        }
        Ok(PipelineOptions {
            dim: self.dim,
            linkage: match self.linkage {
                LinkageArg::Single => Linkage::Single,
                LinkageArg::Average => Linkage::Average,
                LinkageArg::Complete => Linkage::Complete,
            },
            laplacian: match self.laplacian {
                LaplacianArg::SymmetrizedWeights => LaplacianKind::SymmetrizedWeights,
                LaplacianArg::RandomWalk => LaplacianKind::RandomWalk,
                LaplacianArg::Directed => LaplacianKind::Directed,
            },
            workers: self.workers,
            normalize_weights: self.normalize_weights,
            subsume_filter: self.enable_subsume_filter,
            sample_count: self.samples,
            seed: self.seed,
        })
    }

    fn load(&self) -> Result<Prepared, CliError> {
        let text = read(&self.scenario)?;
        let scenario = Scenario::from_json(&text)?;
        Ok(Prepared::new(scenario)?)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("reading {}: {e}", path.display())))
}

fn write(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, contents).map_err(|e| CliError::Input(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn is_csv(path: Option<&Path>) -> bool {
    path.and_then(Path::extension).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let mut params = match &args.params {
        Some(path) => serde_json::from_str::<ScenarioParams>(&read(path)?)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        None => ScenarioParams::preset(&args.preset)?,
    };
    if let Some(s) = args.seed {
        params.seed = s;
    }
    if let Some(n) = args.n_apps {
        params.n_apps = n;
    }
    if let Some(n) = args.n_raw_states {
        params.n_raw_states = n;
    }
    if let Some(p) = args.dep_edge_prob {
        params.dep_edge_prob = p;
    }
    if let Some(p) = args.state_edge_prob {
        params.state_edge_prob = p;
    }
    if let Some(t) = &args.topology {
        params.topology_preset = match t.as_str() {
            "zonal" => TopologyPreset::default(),
            "uncapped" => TopologyPreset::Uncapped,
            path => {
                let topo: Topology = serde_json::from_str(&read(Path::new(path))?)
                    .map_err(|e| CliError::Input(format!("{path}: {e}")))?;
                TopologyPreset::Custom(topo)
            }
        };
    }
    params.validate()?;
    let s = scenario::generate(&params)?;
    write(Some(&args.output), &s.to_json())?;
    log::info!("wrote {}", args.output.display());
    Ok(())
}

fn trace_json(run: &pipeline::ReducedRun) -> serde_json::Value {
    let frontier = frontier_objective_trace(&run.graph, &run.dendrogram, &run.configurations);
    json!({
        "search_calls": run.configurations.search_calls,
        "visited": run.configurations.visited,
        "frontier": frontier,
    })
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let opts = args.pipeline.options()?;
    let p = args.pipeline.load()?;
    let out = args.output.as_deref();
    let csv = is_csv(out);
    let mut trace = None;
    let (csv_text, mut value) = match RunMode::from(args.mode) {
        RunMode::WorstCase => {
            let r = pipeline::run_worst_case(&p, &opts)?;
            (r.report.to_csv(), serde_json::to_value(&r).expect("serializable"))
        }
        RunMode::Unfiltered => {
            let f = pipeline::filter(&p, &opts)?;
            let r = pipeline::run_unfiltered(&p, &f)?;
            (r.report.to_csv(), serde_json::to_value(&r).expect("serializable"))
        }
        RunMode::Reduced => {
            let f = pipeline::filter(&p, &opts)?;
            let r = pipeline::run_reduced(&p, &f, &opts)?;
            if args.trace {
                trace = Some(trace_json(&r));
            }
            let members: Vec<_> = r
                .configurations
                .members
                .iter()
                .map(|m| json!({"node": m.node, "leaves": m.leaves, "apps": m.state.apps.len()}))
                .collect();
            (r.report.to_csv(), json!({"report": r.report, "members": members}))
        }
        RunMode::Compare => {
            let r = pipeline::run_compare(&p, &opts)?;
            if args.trace {
                trace = Some(trace_json(&r.reduced));
            }
            let table: &ComparisonTable = &r.table;
            (table.to_csv(), json!({"rows": table.rows, "gains_pct": table.gains, "samples": r.worst_case.samples}))
        }
    };
    if csv {
        write(out, &csv_text)?;
        if let (Some(t), Some(path)) = (trace, out) {
            write(Some(&path.with_extension("trace.json")), &pretty(&t))?;
        }
    } else {
        if let Some(t) = trace {
            value["trace"] = t;
        }
        write(out, &pretty(&value))?;
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let opts = args.pipeline.options()?;
    let p = args.pipeline.load()?;
    let f = pipeline::filter(&p, &opts)?;
    let r = pipeline::run_reduced(&p, &f, &opts)?;
    let text = match args.kind {
        ExportKind::Embedding => match &r.embedding {
            Some(e) => e.to_csv(&r.graph.states),
            None => "state_id\n".to_string() + r.graph.states[0].id.as_str() + "\n",
        },
        ExportKind::Dendrogram => pretty(&r.dendrogram.merges_json()),
        ExportKind::Trace => pretty(&trace_json(&r)),
    };
    write(args.output.as_deref(), &text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONFGEN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("confgen: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
