mod config;
mod output;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spatial_csma::channel::InterferenceMode;
use spatial_csma::glauber::WeightFunction;
use spatial_csma::oracle::{rate_vectors, MAX_TABLE_LINKS};
use spatial_csma::schedule::ProtocolConfig;
use spatial_csma::sim::{run_convergence, run_sweep, Model, RunSpec, ServiceMode, UpdateMode};
use spatial_csma::topology::{build_conflict_graph, generate_topology, NetworkConfig, NetworkParams, Topology};
use spatial_csma::verify::{run_suite, SuiteConfig};
use spatial_csma::LinkSet;

use output::{csv_writer, metadata, open_output, write_header, write_plot_script, PlotKind};

/// Spatial CSMA scheduling simulator and verification suite.
#[derive(Parser, Debug)]
#[command(name = "spatial-csma", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate, export or import network instances.
    Topology {
        #[command(subcommand)]
        action: TopologyCmd,
    },
    /// Average queue length against arrival rate, for both scheduling models.
    Sweep(SweepArgs),
    /// Total-queue trajectories of both models on one instance and seed.
    Converge(ConvergeArgs),
    /// Run the exact and Monte Carlo self-checks; exits nonzero if any fails.
    Verify(VerifyArgs),
    /// Success-probability vectors of every subset of a small instance.
    Rates(RatesArgs),
}

#[derive(Subcommand, Debug)]
enum TopologyCmd {
    /// Draw a random instance and write it in the instance file format.
    Generate(GenerateArgs),
    /// Write an instance as a CSV link table with derived neighbour data.
    Export(ExportArgs),
    /// Read and validate an instance file, then print a summary.
    Import(ImportArgs),
}

#[derive(Args, Debug)]
#[group(skip)]
struct ConfigArg {
    /// Flat `key = value` file; keys are long flag names of this subcommand.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
#[group(skip)]
struct NetArgs {
    #[arg(long, default_value_t = 13.0)]
    side_length: f64,
    /// Links per unit area.
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    /// Transmitter-receiver distance.
    #[arg(long, default_value_t = 0.25)]
    link_distance: f64,
    /// Path-loss exponent, must exceed 2.
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    #[arg(long, default_value_t = 17.0)]
    sir_threshold_db: f64,
    /// Interference from links farther than this is ignored by the scheduler.
    #[arg(long, default_value_t = 4.0)]
    close_in_radius: f64,
    /// Seed of the instance generator.
    #[arg(long, default_value_t = 1)]
    topology_seed: u64,
}

const NET_FLAGS: [&str; 7] =
    ["side_length", "density", "link_distance", "alpha", "sir_threshold_db", "close_in_radius", "topology_seed"];

#[derive(Args, Debug)]
#[group(skip)]
struct SourceArgs {
    /// Load the instance from a file written by `topology generate` instead of drawing one.
    #[arg(long, value_name = "FILE", conflicts_with_all = NET_FLAGS)]
    topology: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Args, Debug)]
#[group(skip)]
struct OutputArgs {
    /// Write the table here instead of stdout.
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Also write `<output>.plot.py`, a standalone matplotlib script for the table.
    #[arg(long, requires = "output")]
    emit_plot_script: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum UpdateArg {
    Single,
    Parallel,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SirServiceArg {
    Analytic,
    Realized,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GraphServiceArg {
    Deterministic,
    Realized,
    Analytic,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum WeightArg {
    Log01x,
    Loglog,
}

#[derive(Args, Debug)]
#[group(skip)]
struct RunArgs {
    /// Control-slot update: one uniform link, or protocol schedule plus simultaneous updates.
    #[arg(long, value_enum, default_value_t = UpdateArg::Single)]
    update: UpdateArg,
    #[arg(long, value_enum, default_value_t = SirServiceArg::Realized)]
    sir_service: SirServiceArg,
    #[arg(long, value_enum, default_value_t = GraphServiceArg::Deterministic)]
    graph_service: GraphServiceArg,
    #[arg(long, default_value_t = 200_000)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Backoff mini-slots of the decision-schedule protocol.
    #[arg(long, default_value_t = ProtocolConfig::DEFAULT_WINDOW)]
    backoff_window: u32,
    /// Probability that a link enters the protocol's backoff contest.
    #[arg(long, default_value_t = ProtocolConfig::DEFAULT_PARTICIPATION)]
    participation: f64,
    #[arg(long, value_enum, default_value_t = WeightArg::Log01x)]
    weight: WeightArg,
    /// Lower clamp of the weight function (default: its value at an empty queue).
    #[arg(long, allow_hyphen_values = true)]
    weight_floor: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModelArg {
    Sir,
    Graph,
    Both,
}

#[derive(Args, Debug)]
#[group(skip)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Comma-separated arrival rates, each in [0, 1).
    #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
    rates: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    replications: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Both)]
    model: ModelArg,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
#[group(skip)]
struct ConvergeArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, default_value_t = 0.2)]
    rate: f64,
    /// Emit every k-th slot.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
#[group(skip)]
struct VerifyArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Smaller sample counts under the same tolerances.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = ProtocolConfig::DEFAULT_PARTICIPATION)]
    participation: f64,
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    CloseIn,
    AllLinks,
}

#[derive(Args, Debug)]
#[group(skip)]
struct RatesArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Interference counted in the success probability.
    #[arg(long, value_enum, default_value_t = ModeArg::CloseIn)]
    mode: ModeArg,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
#[group(skip)]
struct GenerateArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(skip)]
struct ExportArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
#[group(skip)]
struct ImportArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, short, value_name = "FILE", required = true)]
    input: PathBuf,
}

/// The clap command with later occurrences of a flag replacing earlier ones at every level,
/// so command-line flags override config-file settings.
fn cli_command() -> Command {
    fn apply(c: Command) -> Command {
        let names: Vec<String> = c.get_subcommands().map(|s| s.get_name().to_string()).collect();
        names.into_iter().fold(c.args_override_self(true), |c, n| c.mut_subcommand(n, apply))
    }
    apply(Cli::command())
}

/// Prints a usage error and exits with clap's usage status.
fn usage(msg: impl std::fmt::Display) -> ! {
    cli_command().error(ErrorKind::ValueValidation, msg).exit()
}

fn network_config(net: &NetArgs) -> NetworkConfig<f64> {
    let params = NetworkParams {
        side_length: net.side_length,
        density: net.density,
        link_distance: net.link_distance,
        path_loss_alpha: net.alpha,
        sir_threshold_db: net.sir_threshold_db,
        close_in_radius: net.close_in_radius,
        seed: net.topology_seed,
    };
    NetworkConfig::new(params).unwrap_or_else(|e| usage(e))
}

fn generate(net: &NetArgs) -> Topology<f64> {
    let cfg = network_config(net);
    generate_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(net.topology_seed))
}

fn load_topology(path: &PathBuf) -> Result<Topology<f64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Topology::import(BufReader::new(f)).with_context(|| format!("reading instance {}", path.display()))
}

fn topology_from(source: &SourceArgs) -> Result<Topology<f64>> {
    match &source.topology {
        Some(p) => load_topology(p),
        None => Ok(generate(&source.net)),
    }
}

/// Facts about the instance actually used, whether drawn or loaded.
fn topology_facts(t: &Topology<f64>) -> Vec<(&'static str, String)> {
    let c = t.config();
    vec![
        (
            "instance",
            format!(
                "side {} density {} R {} alpha {} threshold {} dB close-in {} generator seed {}",
                c.side_length(),
                c.density(),
                c.link_distance(),
                c.path_loss_alpha(),
                c.sir_threshold_db(),
                c.close_in_radius(),
                c.seed()
            ),
        ),
        ("links", t.n_links().to_string()),
        ("topology-fingerprint", format!("{:016x}", t.fingerprint())),
    ]
}

fn run_template(run: &RunArgs, model: Model, rate: f64) -> RunSpec<f64> {
    let mut spec = RunSpec::new(model, rate);
    spec.update_mode = match run.update {
        UpdateArg::Single => UpdateMode::Single,
        UpdateArg::Parallel => UpdateMode::Parallel,
    };
    spec.service_mode = match model {
        Model::Sir => match run.sir_service {
            SirServiceArg::Analytic => ServiceMode::Analytic,
            SirServiceArg::Realized => ServiceMode::Realized,
        },
        Model::Graph => match run.graph_service {
            GraphServiceArg::Deterministic => ServiceMode::Deterministic,
            GraphServiceArg::Realized => ServiceMode::Realized,
            GraphServiceArg::Analytic => ServiceMode::Analytic,
        },
    };
    spec.horizon = run.horizon;
    spec.seed = run.seed;
    spec.protocol =
        ProtocolConfig::with_participation(run.backoff_window, run.participation).unwrap_or_else(|e| usage(e));
    let wf = match run.weight {
        WeightArg::Log01x => WeightFunction::log01x(),
        WeightArg::Loglog => WeightFunction::loglog(),
    };
    spec.weight = match run.weight_floor {
        Some(f) => wf.with_floor(f),
        None => wf,
    };
    spec
}

fn finish_plot(out: &OutputArgs, kind: PlotKind) -> Result<()> {
    if let (true, Some(path)) = (out.emit_plot_script, &out.output) {
        let script = write_plot_script(path, kind)?;
        eprintln!("wrote {}", script.display());
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, m: &ArgMatches) -> Result<()> {
    if a.rates.is_empty() {
        usage("--rates needs at least one arrival rate");
    }
    if let Some(r) = a.rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
        usage(format!("arrival rate {r} outside [0, 1)"));
    }
    if a.replications == 0 || a.run.horizon == 0 {
        usage("--replications and --horizon must be at least 1");
    }
    let t = topology_from(&a.source)?;
    let models = match a.model {
        ModelArg::Sir => vec![Model::Sir],
        ModelArg::Graph => vec![Model::Graph],
        ModelArg::Both => vec![Model::Sir, Model::Graph],
    };
    let mut extra = topology_facts(&t);
    extra.push(("averaging", "final half of the horizon; trend from 10 block means of that half".into()));
    extra.push(("run-seeds", "splitmix64(seed, rate index * replications + replication)".into()));
    let mut w = open_output(a.out.output.as_deref())?;
    write_header(&mut w, &metadata("sweep", m, &extra))?;
    let mut csv = csv_writer(w);
    csv.write_record([
        "model",
        "rate",
        "replication",
        "seed",
        "topology_fingerprint",
        "mean_total_queue",
        "mean_link_queue",
        "trend_slope",
        "trend_t",
        "drift_fraction",
        "stable",
    ])?;
    for model in models {
        let template = run_template(&a.run, model, a.rates[0]);
        let rows = run_sweep(&t, &template, &a.rates, a.replications)?;
        for r in rows {
            let s = r.summary;
            csv.write_record([
                model_name(model).to_string(),
                r.rate.to_string(),
                r.replication.to_string(),
                r.seed.to_string(),
                format!("{:016x}", r.topology_fingerprint),
                format!("{:.6}", s.mean_total_queue),
                format!("{:.6}", s.mean_link_queue),
                format!("{:.6e}", s.trend_slope),
                format!("{:.3}", s.trend_t),
                format!("{:.6e}", s.drift_fraction),
                s.stable.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    finish_plot(&a.out, PlotKind::Sweep)
}

fn model_name(m: Model) -> &'static str {
    match m {
        Model::Sir => "sir",
        Model::Graph => "graph",
    }
}

fn cmd_converge(a: &ConvergeArgs, m: &ArgMatches) -> Result<()> {
    if !(0.0..1.0).contains(&a.rate) {
        usage(format!("arrival rate {} outside [0, 1)", a.rate));
    }
    if a.stride == 0 || a.run.horizon == 0 {
        usage("--stride and --horizon must be at least 1");
    }
    let t = topology_from(&a.source)?;
    let sir = run_template(&a.run, Model::Sir, a.rate);
    let graph = run_template(&a.run, Model::Graph, a.rate);
    let series = run_convergence(&t, &sir, &graph)?;
    let mut w = open_output(a.out.output.as_deref())?;
    write_header(&mut w, &metadata("converge", m, &topology_facts(&t)))?;
    let mut csv = csv_writer(w);
    csv.write_record(["slot", "sir_total_queue", "graph_total_queue"])?;
    for (slot, (s, g)) in series.sir.iter().zip(&series.graph).enumerate().step_by(a.stride) {
        csv.write_record([slot.to_string(), s.to_string(), g.to_string()])?;
    }
    csv.flush()?;
    finish_plot(&a.out, PlotKind::Converge)
}

fn cmd_verify(a: &VerifyArgs, m: &ArgMatches) -> Result<bool> {
    let mut cfg = if a.quick { SuiteConfig::quick(a.seed) } else { SuiteConfig::full(a.seed) };
    cfg.protocol = ProtocolConfig::with_participation(ProtocolConfig::DEFAULT_WINDOW, a.participation)
        .unwrap_or_else(|e| usage(e));
    let outcomes = run_suite(&cfg);
    let mut w = open_output(a.output.as_deref())?;
    write_header(&mut w, &metadata("verify", m, &[]))?;
    let mut csv = csv_writer(w);
    csv.write_record(["check", "status", "detail"])?;
    for o in &outcomes {
        csv.write_record([o.name, if o.passed { "pass" } else { "fail" }, &o.detail])?;
    }
    csv.flush()?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        eprintln!("verify: all {} checks passed", outcomes.len());
        Ok(true)
    } else {
        eprintln!("verify: failed checks: {}", failed.join(", "));
        Ok(false)
    }
}

fn cmd_rates(a: &RatesArgs, m: &ArgMatches) -> Result<()> {
    let t = topology_from(&a.source)?;
    let n = t.n_links();
    if n > MAX_TABLE_LINKS {
        usage(format!(
            "the instance has {n} links; rate enumeration supports at most {MAX_TABLE_LINKS} (shrink --side-length or --density)"
        ));
    }
    let mode = match a.mode {
        ModeArg::CloseIn => InterferenceMode::CloseIn,
        ModeArg::AllLinks => InterferenceMode::AllLinks,
    };
    let vectors = rate_vectors(&t, mode)?;
    let mut w = open_output(a.out.output.as_deref())?;
    write_header(&mut w, &metadata("rates", m, &topology_facts(&t)))?;
    let mut csv = csv_writer(w);
    let mut head = vec!["mask".to_string(), "members".into(), "size".into()];
    head.extend((0..n).map(|i| format!("mu_{i}")));
    head.push("sum".into());
    csv.write_record(&head)?;
    for (mask, v) in vectors.iter().enumerate() {
        let set = LinkSet::from_mask(n, mask as u64);
        let members: Vec<String> = set.iter().map(|i| i.to_string()).collect();
        let mut row = vec![mask.to_string(), members.join(" "), set.len().to_string()];
        row.extend(v.values().iter().map(|x| format!("{x:.9}")));
        row.push(format!("{:.9}", v.sum()));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    finish_plot(&a.out, PlotKind::Rates)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let t = generate(&a.net);
    let mut w = open_output(a.output.as_deref())?;
    t.export(&mut w)?;
    w.flush()?;
    if a.output.is_some() {
        eprintln!("{} links, fingerprint {:016x}", t.n_links(), t.fingerprint());
    }
    Ok(())
}

fn cmd_export(a: &ExportArgs, m: &ArgMatches) -> Result<()> {
    let t = topology_from(&a.source)?;
    let mut w = open_output(a.out.output.as_deref())?;
    let mut extra = topology_facts(&t);
    extra.push(("conflict-edges", build_conflict_graph(&t).len().to_string()));
    write_header(&mut w, &metadata("topology export", m, &extra))?;
    let mut csv = csv_writer(w);
    csv.write_record(["id", "x", "y", "rx_angle", "rx_x", "rx_y", "degree", "neighbours"])?;
    for i in 0..t.n_links() {
        let (p, r) = (t.positions()[i], t.receiver(i));
        let nb: Vec<String> = t.neighbours(i).iter().map(|j| j.to_string()).collect();
        csv.write_record([
            i.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            t.rx_angles()[i].to_string(),
            r.x.to_string(),
            r.y.to_string(),
            nb.len().to_string(),
            nb.join(" "),
        ])?;
    }
    csv.flush()?;
    finish_plot(&a.out, PlotKind::Topology)
}

fn cmd_import(a: &ImportArgs) -> Result<()> {
    let t = load_topology(&a.input)?;
    let cfg = t.config();
    println!("instance: {}", a.input.display());
    println!("fingerprint: {:016x}", t.fingerprint());
    println!(
        "side length {}, density {}, R {}, alpha {}, threshold {} dB, close-in radius {}",
        cfg.side_length(),
        cfg.density(),
        cfg.link_distance(),
        cfg.path_loss_alpha(),
        cfg.sir_threshold_db(),
        cfg.close_in_radius()
    );
    print!("{}", t.describe());
    Ok(())
}

/// Leaf subcommand name path in `args` (e.g. `["topology", "generate"]`).
fn leaf_path(args: &[String]) -> Vec<String> {
    let cmd = Cli::command();
    let mut path = Vec::new();
    let mut current = &cmd;
    for a in args.iter().skip(1) {
        match current.find_subcommand(a) {
            Some(sub) => {
                path.push(a.clone());
                current = sub;
            }
            None => break,
        }
    }
    path
}

/// Inserts config-file settings right after the subcommand names.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config::find_config_flag(&args) else { return Ok(args) };
    let names = leaf_path(&args);
    let root = Cli::command();
    let mut leaf = &root;
    for n in &names {
        leaf = leaf.find_subcommand(n).expect("path came from this command");
    }
    let extra = config::read_config_args(leaf, path.as_ref()).unwrap_or_else(|e| usage(format!("{e:#}")));
    let at = 1 + names.len();
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn leaf_matches(m: &ArgMatches) -> &ArgMatches {
    match m.subcommand() {
        Some((_, sub)) => leaf_matches(sub),
        None => m,
    }
}

fn real_main() -> Result<ExitCode> {
    let args = expand_config(std::env::args().collect())?;
    let matches = cli_command().get_matches_from(args);
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let m = leaf_matches(&matches);
    match &cli.command {
        Cmd::Topology { action } => match action {
            TopologyCmd::Generate(a) => cmd_generate(a)?,
            TopologyCmd::Export(a) => cmd_export(a, m)?,
            TopologyCmd::Import(a) => cmd_import(a)?,
        },
        Cmd::Sweep(a) => cmd_sweep(a, m)?,
        Cmd::Converge(a) => cmd_converge(a, m)?,
        Cmd::Verify(a) => {
            if !cmd_verify(a, m)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Rates(a) => cmd_rates(a, m)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
