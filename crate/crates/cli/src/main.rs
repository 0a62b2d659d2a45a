use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qdta::assignment::{FwConfig, LineSearchParams, StepSizeStrategy};
use qdta::demand::{bin_demand, bin_rates, DemandMatrix};
use qdta::engine::{self, IntervalResult, Mode, ScenarioConfig};
use qdta::fixtures::{self, FixtureKind};
use qdta::io::{self, DemandKind, ScenarioFile, StepSize};
use qdta::{BprParams, Error, Network};

const EXIT_INPUT: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "qdta", version, about = "Quasi-dynamic traffic assignment")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write per-interval results.
    Run(RunArgs),
    /// Write a synthetic network and demand.
    GenFixture(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Trips,
    Rate,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Qdta,
    Sta,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    LineSearch,
    Msa,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file of `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    demand: Option<PathBuf>,
    #[arg(long, value_enum)]
    demand_kind: Option<KindArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Interval length in minutes.
    #[arg(long)]
    interval_min: Option<f64>,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long, value_enum)]
    step_size: Option<StepArg>,
    /// Worker threads.
    #[arg(long, env = "QDTA_THREADS")]
    threads: Option<usize>,
    /// Relative potential change at which an interval is converged.
    #[arg(long)]
    tol: Option<f64>,
    /// Frank-Wolfe iteration cap per interval.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// serial, grid or random.
    #[arg(long)]
    kind: String,
    /// `small` or a link count (serial), `RxC` (grid), a node count (random).
    #[arg(long)]
    size: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Solver { .. } => EXIT_SOLVER,
            Error::Io(_) => EXIT_IO,
            _ => EXIT_INPUT,
        };
        Failure { code, error: e.into() }
    }
}

fn input(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_INPUT, error }
}

fn io_failure(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_IO, error }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::GenFixture(args) => gen_fixture(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Fully resolved run settings.
#[derive(Serialize)]
struct Settings {
    network: PathBuf,
    demand: PathBuf,
    demand_kind: &'static str,
    mode: &'static str,
    interval_min: f64,
    intervals: usize,
    step_size: &'static str,
    threads: usize,
    tol: f64,
    max_iters: usize,
    out: PathBuf,
    bpr_alpha: f64,
    bpr_beta: f64,
    congestion_threshold: f64,
}

fn resolve(args: RunArgs) -> Result<Settings, Failure> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))
                .map_err(input)?;
            io::parse_scenario_file(&text, path)?
        }
        None => ScenarioFile::default(),
    };
    // paths in a scenario file are relative to the file
    let base = args
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let from_file = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });

    let network = args
        .network
        .or_else(|| from_file(file.network.clone()))
        .ok_or_else(|| input(anyhow::anyhow!("no network given (--network)")))?;
    let demand = args
        .demand
        .or_else(|| from_file(file.demand.clone()))
        .ok_or_else(|| input(anyhow::anyhow!("no demand given (--demand)")))?;
    let kind = match args.demand_kind {
        Some(KindArg::Trips) => DemandKind::Trips,
        Some(KindArg::Rate) => DemandKind::Rate,
        None => file.demand_kind.unwrap_or_default(),
    };
    let mode = match args.mode {
        Some(ModeArg::Qdta) => Mode::Qdta,
        Some(ModeArg::Sta) => Mode::Sta,
        None => file.mode.unwrap_or_default(),
    };
    let step = match args.step_size {
        Some(StepArg::LineSearch) => StepSize::LineSearch,
        Some(StepArg::Msa) => StepSize::Msa,
        None => file.step_size.unwrap_or(StepSize::LineSearch),
    };
    let fw = FwConfig::default();
    let bpr = BprParams::default();
    Ok(Settings {
        network,
        demand,
        demand_kind: match kind {
            DemandKind::Trips => "trips",
            DemandKind::Rate => "rate",
        },
        mode: match mode {
            Mode::Qdta => "qdta",
            Mode::Sta => "sta",
        },
        interval_min: args.interval_min.or(file.interval_min).unwrap_or(15.0),
        intervals: args.intervals.or(file.intervals).unwrap_or(4),
        step_size: match step {
            StepSize::LineSearch => "line-search",
            StepSize::Msa => "msa",
        },
        threads: args.threads.or(file.threads).unwrap_or(1),
        tol: args.tol.or(file.tol).unwrap_or(fw.tolerance),
        max_iters: args.max_iters.or(file.max_iters).unwrap_or(fw.max_iters),
        out: args
            .out
            .or_else(|| from_file(file.out.clone()))
            .unwrap_or_else(|| PathBuf::from("results")),
        bpr_alpha: file.bpr_alpha.unwrap_or(bpr.alpha),
        bpr_beta: file.bpr_beta.unwrap_or(bpr.beta),
        congestion_threshold: file.congestion_threshold.unwrap_or(1.0),
    })
}

impl Settings {
    fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            interval_minutes: self.interval_min,
            intervals: self.intervals,
            fw: FwConfig {
                strategy: match self.step_size {
                    "msa" => StepSizeStrategy::Msa,
                    _ => StepSizeStrategy::ExactLineSearch(LineSearchParams::default()),
                },
                tolerance: self.tol,
                max_iters: self.max_iters,
            },
            workers: self.threads,
            mode: if self.mode == "sta" { Mode::Sta } else { Mode::Qdta },
        }
    }
}

#[derive(Serialize)]
struct IntervalEntry {
    interval: usize,
    fw_iterations: usize,
    line_search_iterations: usize,
    converged: bool,
    wall_seconds: f64,
    final_potential: f64,
    unroutable_pairs: usize,
    residual_pairs: usize,
    residual_rate_vph: f64,
}

impl IntervalEntry {
    fn new(r: &IntervalResult) -> Self {
        IntervalEntry {
            interval: r.interval,
            fw_iterations: r.fw_iterations,
            line_search_iterations: r.line_search_iterations(),
            converged: r.converged,
            wall_seconds: r.wall_time.as_secs_f64(),
            final_potential: r.potential_trace.last().copied().unwrap_or(0.0),
            unroutable_pairs: r.unroutable.len(),
            residual_pairs: r.residual_out.len(),
            residual_rate_vph: r.residual_out.total_rate(),
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'static str,
    error: Option<String>,
    config: &'a Settings,
    inputs: Vec<InputDigest>,
    links: usize,
    nodes: usize,
    intervals: Vec<IntervalEntry>,
    total_fw_iterations: usize,
    total_line_search_iterations: usize,
    unroutable_pairs: usize,
    unfinished_pairs: usize,
    unfinished_rate_vph: f64,
    system_travel_time_veh_h: Option<f64>,
    total_wall_seconds: f64,
}

#[derive(Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
    bytes: usize,
}

fn read_input(path: &Path) -> Result<(Vec<u8>, InputDigest), Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(input)?;
    let digest = InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len(),
    };
    Ok((bytes, digest))
}

/// Writes `path` by filling a temporary file in the same directory and
/// renaming it into place.
fn write_atomic<F>(path: &Path, fill: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<&mut fs::File>) -> qdta::Result<()>,
{
    let dir = path.parent().unwrap_or(Path::new("."));
    let context = || format!("cannot write {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(context)
        .map_err(io_failure)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| io_failure(anyhow::Error::from(e).context(context())))?;
        w.flush().with_context(context).map_err(io_failure)?;
    }
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(context)
        .map_err(io_failure)?;
    Ok(())
}

fn load_demand(settings: &Settings, net: &Network, bytes: &[u8]) -> Result<Vec<DemandMatrix>, Failure> {
    let path = &settings.demand;
    let binned = if settings.demand_kind == "rate" {
        let records = io::read_rates(bytes, path, net)?;
        bin_rates(&records, settings.intervals)
    } else {
        let records = io::read_trips(bytes, path, net)?;
        bin_demand(&records, settings.interval_min, settings.intervals)
    };
    binned
        .with_context(|| format!("in {}", path.display()))
        .map_err(input)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let settings = resolve(args)?;
    let config = settings.scenario();
    config.validate()?;
    let bpr = BprParams {
        alpha: settings.bpr_alpha,
        beta: settings.bpr_beta,
    };
    bpr.validate()?;

    let (net_bytes, net_digest) = read_input(&settings.network)?;
    let (demand_bytes, demand_digest) = read_input(&settings.demand)?;
    let net = io::read_network(net_bytes.as_slice(), &settings.network, bpr)?;
    let demand = load_demand(&settings, &net, &demand_bytes)?;

    let out = settings.out.clone();
    fs::create_dir_all(&out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(io_failure)?;

    let mut results: Vec<IntervalResult> = Vec::new();
    let mut write_interval = |r: &IntervalResult| -> qdta::Result<()> {
        let i = r.interval;
        let flows = out.join(format!("flows_{i}.csv"));
        let residual = out.join(format!("residual_{i}.csv"));
        write_atomic(&flows, |w| io::write_flows(w, &net, r))
            .and_then(|()| write_atomic(&residual, |w| io::write_demand(w, &net, &r.residual_out)))
            .map_err(|f| Error::Io(std::io::Error::other(format!("{:#}", f.error))))?;
        // path flows are not needed past this point and dominate memory
        let mut kept = r.clone();
        kept.path_flows = Default::default();
        results.push(kept);
        Ok(())
    };
    let outcome = match config.mode {
        Mode::Qdta => engine::run_qdta_with(&net, &demand, &config, &mut write_interval),
        Mode::Sta => engine::run_sta(&net, &demand, &config).and_then(|r| {
            write_interval(&r)?;
            Ok(DemandMatrix::new())
        }),
    };

    let (unfinished, error) = match outcome {
        Ok(u) => (u, None),
        Err(e) => (DemandMatrix::new(), Some(e)),
    };
    if error.is_none() {
        let metrics = engine::compute_metrics(&results, &net, settings.congestion_threshold)?;
        write_atomic(&out.join("metrics.csv"), |w| io::write_metrics(w, &metrics))?;
        write_atomic(&out.join("unfinished.csv"), |w| io::write_demand(w, &net, &unfinished))?;
    }
    write_atomic(&out.join("trace.csv"), |w| io::write_trace(w, &results))?;

    let entries: Vec<IntervalEntry> = results.iter().map(IntervalEntry::new).collect();
    let manifest = Manifest {
        status: if error.is_none() { "ok" } else { "failed" },
        error: error.as_ref().map(ToString::to_string),
        config: &settings,
        inputs: vec![net_digest, demand_digest],
        links: net.link_count(),
        nodes: net.node_count(),
        total_fw_iterations: entries.iter().map(|e| e.fw_iterations).sum(),
        total_line_search_iterations: entries.iter().map(|e| e.line_search_iterations).sum(),
        unroutable_pairs: entries.iter().map(|e| e.unroutable_pairs).sum(),
        unfinished_pairs: unfinished.len(),
        unfinished_rate_vph: unfinished.total_rate(),
        system_travel_time_veh_h: error.is_none().then(|| engine::system_travel_time(&results)),
        intervals: entries,
        total_wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_atomic(&out.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| Error::Io(e.into()))?;
        writeln!(w)?;
        Ok(())
    })?;
    match error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn gen_fixture(args: GenArgs) -> Result<(), Failure> {
    let kind: FixtureKind = args.kind.parse()?;
    let fixture = fixtures::generate(kind, &args.size, args.seed)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))
        .map_err(io_failure)?;
    write_atomic(&args.out.join("network.csv"), |w| fixture.write_network_csv(w))?;
    write_atomic(&args.out.join("trips.csv"), |w| fixture.write_trips_csv(w))?;
    write_atomic(&args.out.join("rates.csv"), |w| fixture.write_rates_csv(w))?;
    let scenario = ScenarioFile {
        network: Some("network.csv".into()),
        demand: Some("trips.csv".into()),
        demand_kind: Some(DemandKind::Trips),
        interval_min: Some(fixture.interval_minutes),
        intervals: Some(fixture.intervals),
        ..Default::default()
    };
    write_atomic(&args.out.join("scenario.conf"), |w| {
        w.write_all(io::render_scenario_file(&scenario).as_bytes())?;
        Ok(())
    })?;
    Ok(())
}
