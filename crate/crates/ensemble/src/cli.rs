//! Command-line surface.
//!
//! Verbs: `run` (process-mode campaign from a config file), `simulate`
//! (scenario + policy on the virtual clock), `depths` (call-graph
//! inspection), `report` (re-render a report from a consolidated document
//! or a round log), and `compare` (paired-policy summary over seeds).
//!
//! The environment variable `ENSEMBLE_SEED` overrides `--seed` everywhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ensemble_core::callgraph::{self, Depth};
use ensemble_core::seedpool::{Seed, SeedOrigin, SeedPool};
use rayon::prelude::*;

use crate::campaign::{run_campaign, CampaignSetup};
use crate::config::{self, CampaignParams};
use crate::policy::Policy;
use crate::process::ProcessRuntime;
use crate::report::{parse_report_input, CampaignReport, NdjsonSink, NullSink, ReportSink};
use crate::scenario::{load_scenario, Scenario};
use crate::simworld::SimRuntime;

/// Exit code for usage and startup errors; runtime campaign failures use 1.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "ensemble",
    version,
    about = "Ensemble fuzzing orchestrator with bandit resource scheduling"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a process-mode campaign from a config file.
    Run(RunArgs),
    /// Run a deterministic simulated campaign from a scenario file.
    Simulate(SimulateArgs),
    /// Inspect call-graph depths and the deep-function set.
    Depths(DepthsArgs),
    /// Re-render a report from a consolidated JSON document or a round log.
    Report(ReportArgs),
    /// Run paired-policy simulations over a seed range and summarize.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Campaign config file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    units: Option<u32>,
    /// Report output path (defaults to <out_dir>/report.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "legion")]
    policy: Policy,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    units: Option<u32>,
    /// Report output path (stdout when omitted). A round log is written
    /// next to it as <out>.rounds.ndjson.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct DepthsArgs {
    /// Call-graph edge list file.
    #[arg(long)]
    callgraph: PathBuf,
    /// Optional entry list (one function per line).
    #[arg(long)]
    entries: Option<PathBuf>,
    /// Optional edge-ownership map (`edge_id function` per line).
    #[arg(long)]
    edge_map: Option<PathBuf>,
    #[arg(long, default_value_t = config::DEFAULT_RHO)]
    rho: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Consolidated report (.json) or round log (.ndjson).
    #[arg(long)]
    input: PathBuf,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated policies, first is the reference.
    #[arg(long, value_delimiter = ',', default_value = "legion,ns")]
    policies: Vec<Policy>,
    /// Seed set: `a..b` (inclusive) or comma-separated values.
    #[arg(long, default_value = "1..10")]
    seeds: String,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    units: Option<u32>,
    /// Output path for the JSON/CSV summary (stdout table otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

/// A startup (exit 2) versus runtime (exit 1) failure.
#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub error: anyhow::Error,
}

fn startup<T>(r: Result<T>) -> Result<T, CliFailure> {
    r.map_err(|error| CliFailure {
        code: EXIT_USAGE,
        error,
    })
}

fn runtime<T>(r: Result<T>) -> Result<T, CliFailure> {
    r.map_err(|error| CliFailure {
        code: EXIT_RUNTIME,
        error,
    })
}

/// Parse argv and run; returns the process exit code.
pub fn main_with(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own message; usage errors exit 2.
            let _ = err.print();
            return if err.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            failure.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliFailure> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Depths(args) => cmd_depths(args),
        Command::Report(args) => cmd_report(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("ENSEMBLE_SEED")
        .ok()
        .and_then(|v| v.parse().ok())
}

fn effective_seed(flag: Option<u64>, fallback: u64) -> u64 {
    env_seed().or(flag).unwrap_or(fallback)
}

fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn emit_report(report: &CampaignReport, format: OutputFormat, out: Option<&Path>) -> Result<()> {
    let content = match format {
        OutputFormat::Json => report.to_json(),
        OutputFormat::Csv => report.to_csv()?,
    };
    write_output(out, &content)
}

fn cmd_run(args: RunArgs) -> Result<(), CliFailure> {
    let mut config = startup(config::load_config(&args.config).map_err(Into::into))?;
    if let Some(seed) = args.seed {
        config.params.seed = seed;
    }
    if let Some(seed) = env_seed() {
        config.params.seed = seed;
    }
    if let Some(rounds) = args.rounds {
        config.params.rounds = rounds;
    }
    if let Some(units) = args.units {
        config.params.units = units;
    }
    startup(config.params.validate().map_err(Into::into))?;

    let cg_text = startup(
        std::fs::read_to_string(&config.callgraph)
            .with_context(|| format!("reading {}", config.callgraph.display())),
    )?;
    let mut graph = startup(callgraph::parse_callgraph(&cg_text).map_err(Into::into))?;
    if let Some(entries_path) = &config.entries {
        let text = startup(
            std::fs::read_to_string(entries_path)
                .with_context(|| format!("reading {}", entries_path.display())),
        )?;
        for entry in callgraph::parse_entries(&text) {
            graph.add_entry(entry);
        }
    }
    let depths = startup(callgraph::compute_depths(&graph, config.params.rho).map_err(Into::into))?;
    let deep = match &config.edge_map {
        Some(path) => {
            let text = startup(
                std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display())),
            )?;
            let owners = startup(callgraph::parse_edge_map(&text).map_err(Into::into))?;
            callgraph::deep_edges(&depths, &owners)
        }
        None => Default::default(),
    };

    let mut initial = SeedPool::new();
    if let Some(dir) = &config.seeds_dir {
        let entries = startup(
            std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display())),
        )?;
        for entry in entries.flatten() {
            if entry.path().is_file() {
                if let Ok(payload) = std::fs::read(entry.path()) {
                    initial.insert(Seed::new(payload, SeedOrigin::Initial, 0));
                }
            }
        }
    }

    let setup = CampaignSetup {
        params: config.params,
        policy: Policy::Legion,
        fuzzers: config.adapters.iter().map(|a| a.name.clone()).collect(),
        deep,
        initial,
        scenario_seed: None,
    };
    startup(
        std::fs::create_dir_all(&config.out_dir)
            .with_context(|| format!("creating {}", config.out_dir.display())),
    )?;
    let log_path = config.out_dir.join("rounds.ndjson");
    let mut sink = startup(NdjsonSink::create(&log_path).map_err(Into::into))?;
    let mut rt = startup(ProcessRuntime::new(config.clone()))?;
    let report = runtime(run_campaign(&setup, &mut rt, &mut sink).map_err(Into::into))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| config.out_dir.join("report.json"));
    runtime(emit_report(&report, args.format, Some(&out)))?;
    println!(
        "campaign complete: {} edges, {} paths, {} unique crashes; report at {}",
        report.totals.edges,
        report.totals.paths,
        report.totals.unique_crashes,
        out.display()
    );
    Ok(())
}

/// Build a campaign setup for one (scenario, policy, seed) simulation.
pub fn sim_setup(
    scenario: &Scenario,
    policy: Policy,
    seed: u64,
    rounds: Option<u32>,
    units: Option<u32>,
) -> Result<CampaignSetup> {
    let mut params = scenario.campaign_params(CampaignParams::default());
    params.seed = seed;
    if let Some(r) = rounds {
        params.rounds = r;
    }
    if let Some(u) = units {
        params.units = u;
    }
    params.validate()?;
    let deep = scenario.deep_edges(params.rho)?;
    Ok(CampaignSetup {
        params,
        policy,
        fuzzers: scenario.fuzzers(),
        deep,
        initial: SeedPool::new(),
        scenario_seed: Some(scenario.seed),
    })
}

/// Run one simulation and return its report.
pub fn simulate_once(
    scenario: &Scenario,
    policy: Policy,
    seed: u64,
    rounds: Option<u32>,
    units: Option<u32>,
    sink: &mut dyn ReportSink,
) -> Result<CampaignReport> {
    let setup = sim_setup(scenario, policy, seed, rounds, units)?;
    let mut rt = SimRuntime::new(scenario.clone(), setup.params.seed);
    run_campaign(&setup, &mut rt, sink).map_err(Into::into)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliFailure> {
    let scenario = startup(load_scenario(&args.scenario).map_err(Into::into))?;
    let seed = effective_seed(args.seed, config::DEFAULT_SEED);
    let report = {
        let mut sink: Box<dyn ReportSink> = match &args.out {
            Some(out) => {
                let log_path = out.with_extension("rounds.ndjson");
                Box::new(startup(NdjsonSink::create(&log_path).map_err(Into::into))?)
            }
            None => Box::new(NullSink),
        };
        runtime(simulate_once(
            &scenario,
            args.policy,
            seed,
            args.rounds,
            args.units,
            sink.as_mut(),
        ))?
    };
    runtime(emit_report(&report, args.format, args.out.as_deref()))?;
    Ok(())
}

fn cmd_depths(args: DepthsArgs) -> Result<(), CliFailure> {
    let text = startup(
        std::fs::read_to_string(&args.callgraph)
            .with_context(|| format!("reading {}", args.callgraph.display())),
    )?;
    let mut graph = startup(callgraph::parse_callgraph(&text).map_err(Into::into))?;
    if let Some(path) = &args.entries {
        let text = startup(
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())),
        )?;
        for entry in callgraph::parse_entries(&text) {
            graph.add_entry(entry);
        }
    }
    let depths = startup(callgraph::compute_depths(&graph, args.rho).map_err(Into::into))?;
    let deep = callgraph::deep_functions(&depths);
    println!(
        "functions: {} ({} reachable, {} unreachable)",
        graph.function_count(),
        depths.reachable_count(),
        depths.unreachable_count()
    );
    println!("d_mu: {}", depths.mean_depth());
    println!("deep_threshold: {} (rho = {})", depths.deep_threshold(), args.rho);
    let mut deep_list: Vec<&str> = deep.iter().map(String::as_str).collect();
    deep_list.sort_unstable();
    println!("deep: {{{}}}", deep_list.join(", "));
    for (function, depth) in depths.iter() {
        match depth {
            Depth::Finite(d) => println!("  {function} {d}"),
            Depth::Unreachable => println!("  {function} UNREACHABLE"),
        }
    }
    if let Some(path) = &args.edge_map {
        let text = startup(
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())),
        )?;
        let owners = startup(callgraph::parse_edge_map(&text).map_err(Into::into))?;
        let deep_edges = callgraph::deep_edges(&depths, &owners);
        let rendered: Vec<String> = deep_edges.iter().map(|e| e.to_string()).collect();
        println!("deep_edges: {{{}}}", rendered.join(", "));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliFailure> {
    let text = startup(
        std::fs::read_to_string(&args.input)
            .with_context(|| format!("reading {}", args.input.display())),
    )?;
    let report = startup(parse_report_input(&text).map_err(Into::into))?;
    runtime(emit_report(&report, args.format, args.out.as_deref()))?;
    Ok(())
}

fn parse_seed_spec(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let start: u64 = a.trim().parse().context("seed range start")?;
        let end: u64 = b.trim().trim_start_matches('=').parse().context("seed range end")?;
        if end < start {
            return Err(anyhow!("empty seed range {spec}"));
        }
        return Ok((start..=end).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("seed `{s}`")))
        .collect()
}

/// One (policy, seed) simulation outcome used by `compare`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareCell {
    pub policy: String,
    pub seed: u64,
    pub edges: usize,
    pub paths: usize,
    pub unique_crashes: usize,
    /// First round whose cumulative stats include a crash, if any.
    pub first_crash_round: Option<u32>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareSummary {
    pub scenario_seed: u64,
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CompareCell>,
    /// wins[p] = seeds where the reference policy strictly beats p on
    /// edges, ties, losses.
    pub wins: BTreeMap<String, WinCount>,
}

#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct WinCount {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

/// Run the full policy × seed grid in parallel. Each run owns its RNG
/// streams, so parallel and sequential execution produce identical cells.
pub fn compare_grid(
    scenario: &Scenario,
    policies: &[Policy],
    seeds: &[u64],
    rounds: Option<u32>,
    units: Option<u32>,
) -> Result<CompareSummary> {
    if policies.is_empty() {
        return Err(anyhow!("compare needs at least one policy"));
    }
    let jobs: Vec<(Policy, u64)> = policies
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let cells: Result<Vec<CompareCell>> = jobs
        .par_iter()
        .map(|&(policy, seed)| {
            let report = simulate_once(scenario, policy, seed, rounds, units, &mut NullSink)?;
            let first_crash_round = report
                .rounds
                .iter()
                .find(|r| r.stats.unique_crashes > 0)
                .map(|r| r.round);
            Ok(CompareCell {
                policy: policy.name().to_string(),
                seed,
                edges: report.totals.edges,
                paths: report.totals.paths,
                unique_crashes: report.totals.unique_crashes,
                first_crash_round,
            })
        })
        .collect();
    let cells = cells?;
    let reference = policies[0].name().to_string();
    let mut wins: BTreeMap<String, WinCount> = BTreeMap::new();
    for &policy in &policies[1..] {
        let mut count = WinCount::default();
        for &seed in seeds {
            let refe = cells
                .iter()
                .find(|c| c.policy == reference && c.seed == seed)
                .map(|c| c.edges)
                .unwrap_or(0);
            let other = cells
                .iter()
                .find(|c| c.policy == policy.name() && c.seed == seed)
                .map(|c| c.edges)
                .unwrap_or(0);
            if refe > other {
                count.wins += 1;
            } else if refe == other {
                count.ties += 1;
            } else {
                count.losses += 1;
            }
        }
        wins.insert(policy.name().to_string(), count);
    }
    Ok(CompareSummary {
        scenario_seed: scenario.seed,
        policies: policies.iter().map(|p| p.name().to_string()).collect(),
        seeds: seeds.to_vec(),
        cells,
        wins,
    })
}

fn render_compare_table(summary: &CompareSummary) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:>8}", "seed");
    for p in &summary.policies {
        let _ = write!(out, " {p:>12}");
    }
    out.push('\n');
    for &seed in &summary.seeds {
        let _ = write!(out, "{seed:>8}");
        for p in &summary.policies {
            let edges = summary
                .cells
                .iter()
                .find(|c| &c.policy == p && c.seed == seed)
                .map(|c| c.edges)
                .unwrap_or(0);
            let _ = write!(out, " {edges:>12}");
        }
        out.push('\n');
    }
    let reference = &summary.policies[0];
    for (policy, count) in &summary.wins {
        let _ = writeln!(
            out,
            "{reference} vs {policy}: {} wins, {} ties, {} losses (final edges)",
            count.wins, count.ties, count.losses
        );
    }
    out
}

fn compare_to_csv(summary: &CompareSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "seed",
        "edges",
        "paths",
        "unique_crashes",
        "first_crash_round",
    ])?;
    for cell in &summary.cells {
        w.write_record([
            cell.policy.clone(),
            cell.seed.to_string(),
            cell.edges.to_string(),
            cell.paths.to_string(),
            cell.unique_crashes.to_string(),
            cell.first_crash_round
                .map(|r| r.to_string())
                .unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().expect("csv into_inner");
    Ok(String::from_utf8(bytes).expect("csv utf8"))
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliFailure> {
    let scenario = startup(load_scenario(&args.scenario).map_err(Into::into))?;
    // A pinned environment seed collapses the grid to one row.
    let seeds = match env_seed() {
        Some(s) => vec![s],
        None => startup(parse_seed_spec(&args.seeds))?,
    };
    let summary = runtime(compare_grid(
        &scenario,
        &args.policies,
        &seeds,
        args.rounds,
        args.units,
    ))?;
    print!("{}", render_compare_table(&summary));
    if let Some(out) = &args.out {
        let content = match args.format {
            OutputFormat::Json => {
                let mut s =
                    serde_json::to_string_pretty(&summary).expect("summary serialization");
                s.push('\n');
                s
            }
            OutputFormat::Csv => runtime(compare_to_csv(&summary))?,
        };
        runtime(write_output(Some(out), &content))?;
    }
    Ok(())
}
