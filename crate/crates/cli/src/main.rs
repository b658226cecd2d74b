use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use aoi_rma::backend::Mode;
use aoi_rma::dataset::{collect_dataset, export_preferences, export_sft};
use aoi_rma::oracle::{best_fixed_p, GridSpec, McBudget, Objective, OracleNode};
use aoi_rma::report::{compare, load_summary};
use aoi_rma::scenario::{apply_priority_defaults, BackendKind, ScenarioConfig, BUILTIN_NAMES};
use aoi_rma::sim::{run, SimOptions};

#[derive(Parser)]
#[command(name = "aoi-rma", version, about = "Slotted-channel AoI simulator with a reflective access agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV/JSON outputs.
    Run(RunArgs),
    /// Grid-search the best fixed transmission probability.
    Oracle(OracleArgs),
    /// Collect dual-candidate reflections and write training datasets.
    ExportDataset(ExportArgs),
    /// Compare the headline AoI of finished runs against the first one.
    Compare(CompareArgs),
    /// List builtin scenarios or print one as TOML.
    Scenarios { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Scripted,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Normal,
    Priority,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Builtin name (s1..s5, dynamic) or TOML file.
    #[arg(long, default_value = "s1")]
    scenario: String,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    no_reflection: bool,
    #[arg(long)]
    no_observe: bool,
    /// Let reflection run in the background while the channel keeps going.
    #[arg(long = "async")]
    asynchronous: bool,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::resolve(&self.scenario)?;
        if let Some(s) = self.slots {
            cfg.total_slots = s;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.backend {
            cfg.backend = match b {
                BackendArg::Scripted => BackendKind::Scripted,
                BackendArg::Remote => BackendKind::Remote,
            };
        }
        if let Some(e) = &self.endpoint {
            cfg.remote.endpoint_url = e.clone();
        }
        if let Some(m) = &self.model {
            cfg.remote.model_name = m.clone();
        }
        match self.mode {
            Some(ModeArg::Priority) => cfg = apply_priority_defaults(cfg)?,
            Some(ModeArg::Normal) => cfg.mode = Mode::Normal,
            None => {}
        }
        if self.no_reflection {
            cfg.agent.reflection = false;
        }
        if self.no_observe {
            cfg.agent.observe = false;
        }
        if self.asynchronous {
            cfg.agent.asynchronous = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
    /// Also write one line per slot to slots.log.
    #[arg(long)]
    slot_log: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    SystemMean,
    SystemSum,
    Node,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value = "s1")]
    scenario: String,
    #[arg(long, default_value_t = 0.01)]
    grid: f64,
    /// Defaults to the scenario's metric scope.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Node position for the node objective; defaults to the first agent.
    #[arg(long)]
    node: Option<usize>,
    /// One probability for all free positions.
    #[arg(long)]
    shared: bool,
    /// Monte-Carlo slots per seed; 0 uses exact values only.
    #[arg(long, default_value_t = 200_000)]
    mc_slots: u64,
    #[arg(long, default_value_t = 5)]
    mc_seeds: u64,
    /// Write the full result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Number of cycles to collect two candidates for.
    #[arg(long, default_value_t = 20)]
    candidates: usize,
    /// SFT output file.
    #[arg(long, default_value = "sft.jsonl")]
    out: PathBuf,
    /// Preference-pair output file; defaults next to --out.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Also dump every labelled sample.
    #[arg(long)]
    samples: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directories or summary.json files; the first is the baseline.
    #[arg(required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    csv: bool,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.scenario.resolve()?;
    let summary = run(cfg, Some(&args.out), SimOptions { slot_log: args.slot_log })?;
    println!("scenario      {}", summary.scenario);
    println!("slots         {}", summary.slots);
    println!("headline AoI  {:.4}", summary.headline_aoi);
    println!("system AoI    sum {:.4}  mean {:.4}", summary.system_aoi_sum, summary.system_aoi_mean);
    for (id, p) in &summary.policy_trajectory {
        if let Some(last) = p.last() {
            println!("node {id}        final p {last:.2} after {} cycles", p.len());
        }
    }
    for (id, slot) in &summary.threshold_crossing {
        match slot {
            Some(s) => println!("node {id}        threshold reached at slot {s}"),
            None => println!("node {id}        threshold not reached"),
        }
    }
    if summary.backend_failures > 0 {
        println!("backend failures {}", summary.backend_failures);
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let cfg = ScenarioConfig::resolve(&args.scenario)?;
    let nodes = cfg.oracle_nodes()?;
    let first_free = nodes.iter().position(|n| matches!(n, OracleNode::Free));
    let objective = match args.objective {
        Some(ObjectiveArg::SystemMean) => Objective::SystemMean,
        Some(ObjectiveArg::SystemSum) => Objective::SystemSum,
        Some(ObjectiveArg::Node) => {
            Objective::Node(args.node.or(first_free).context("no node position for the node objective")?)
        }
        None => match cfg.metric_scope {
            aoi_rma::agent::MetricScope::System => Objective::SystemMean,
            aoi_rma::agent::MetricScope::Node => Objective::Node(args.node.or(first_free).context("no free node")?),
        },
    };
    let grid = GridSpec { step: args.grid, shared: args.shared, ..GridSpec::default() };
    let budget = McBudget { slots: args.mc_slots, seeds: args.mc_seeds, ..McBudget::default() };
    let best = best_fixed_p(&nodes, grid, objective, budget)?;
    let r = &best.result;
    println!("objective   {:?} = {:.4} over {} grid points", best.objective, best.objective_value, best.grid_points);
    println!("p*          {:?}", r.p_vector);
    println!("method      {:?}", r.method);
    println!("{:<6} {:>10}", "node", "aoi");
    for (id, a) in &r.per_node_aoi {
        println!("{:<6} {:>10.4}", id.to_string(), a);
    }
    println!("system sum {:.4}  mean {:.4}", r.system_sum, r.system_mean);
    if let Some(d) = r.discrepancy {
        println!("simulated vs exact: max relative gap {:.2}%", d * 100.0);
    }
    if let Some(path) = args.json {
        std::fs::write(&path, serde_json::to_string_pretty(&best)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let cfg = args.scenario.resolve()?;
    let data = collect_dataset(cfg, args.candidates)?;
    let sft = export_sft(&data.samples, &args.out)?;
    let pairs_path = args.pairs.unwrap_or_else(|| sibling(&args.out, "pairs.jsonl"));
    let pairs = export_preferences(&data.pairs, &pairs_path)?;
    if let Some(path) = &args.samples {
        let mut body = String::new();
        for s in &data.samples {
            body.push_str(&serde_json::to_string(s)?);
            body.push('\n');
        }
        std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{} samples, {sft} SFT records -> {}", data.samples.len(), args.out.display());
    println!("{pairs} preference pairs -> {}", pairs_path.display());
    for reason in &data.skipped {
        println!("skipped {reason}");
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let mut runs = Vec::new();
    for path in &args.runs {
        let label =
            path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string());
        runs.push((label, load_summary(path)?));
    }
    let table = compare(&runs)?;
    print!("{}", if args.csv { table.to_csv() } else { table.to_text() });
    Ok(())
}

fn cmd_scenarios(name: Option<String>) -> Result<()> {
    match name {
        Some(n) => print!("{}", ScenarioConfig::resolve(&n)?.to_toml()?),
        None => {
            for n in BUILTIN_NAMES {
                let cfg = ScenarioConfig::resolve(n)?;
                let kinds: Vec<&str> = cfg.nodes.iter().map(|n| n.kind()).collect();
                println!("{n:<8} {} slots  [{}]", cfg.total_slots, kinds.join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Oracle(a) => {
            if a.grid <= 0.0 {
                bail!("--grid must be positive");
            }
            cmd_oracle(a)
        }
        Command::ExportDataset(a) => cmd_export(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Scenarios { name } => cmd_scenarios(name),
    }
}
