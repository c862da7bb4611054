//! `pjfilter`: simulate, filter and diagnose jump-diffusion signals observed
//! at predictable times.
//!
//! Exit codes: 0 success / all checks pass, 1 a check failed, 2 config or
//! IO error, 3 method or check incompatible with the scenario, 4 numerical
//! failure during a run.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pjfilter::diagnostics::{self, Check, CheckSettings};
use pjfilter::io;
use pjfilter::kalman_jump::{run_filter, Side};
use pjfilter::oracle_grid::{run_grid_filter, GridTrajectory};
use pjfilter::particle::{run_particle_filter, Mode, ParticleOptions, ParticleRun};
use pjfilter::simulate::{simulate_many, simulate_path, ObservationEvent, Simulation};
use pjfilter::{Error, Preset, ScenarioConfig, ValidatedScenario};

use manifest::{sha256_hex, unix_now, RunManifest, ScenarioSource, Staging};

#[derive(Parser, Debug)]
#[command(name = "pjfilter", version, about = "Filtering for jump-diffusion signals observed at predictable times")]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate signal/observation paths and write path and event CSVs.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 1)]
        paths: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run one filter, or every applicable one, on an event sequence.
    Filter {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum)]
        method: Method,
        /// Events CSV to filter.
        #[arg(long, conflicts_with = "simulate", required_unless_present = "simulate")]
        events: Option<PathBuf>,
        /// Path id to take from the events file (default: the first one).
        #[arg(long, requires = "events")]
        path_id: Option<u64>,
        /// Simulate path 0 with the scenario seed and filter its events.
        #[arg(long)]
        simulate: bool,
        /// Particle count (default: from the scenario).
        #[arg(long)]
        particles: Option<usize>,
        /// Also dump particle snapshots at every reported time.
        #[arg(long)]
        snapshots: bool,
        /// Also dump grid densities at every reported time.
        #[arg(long)]
        densities: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run structural checks; exit 0 iff every ordinary check passes.
    Diagnose {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated: compensator, martingale, ks-residual, zakai.
        #[arg(long, value_delimiter = ',', default_value = "compensator,martingale,ks-residual,zakai")]
        checks: Vec<String>,
        /// Monte Carlo paths of the compensator and martingale checks.
        #[arg(long)]
        paths: Option<usize>,
        /// Runs of the KS-residual and Zakai checks.
        #[arg(long)]
        runs: Option<usize>,
        /// Particles of the rho(1) jump check.
        #[arg(long)]
        particles: Option<usize>,
        /// Reference-measure runs of the Zakai martingale check.
        #[arg(long)]
        reference_runs: Option<usize>,
        /// Gauss–Hermite order.
        #[arg(long)]
        order: Option<usize>,
        /// Also run the corrupted variants. They are expected to fail and
        /// then count towards the exit status.
        #[arg(long)]
        negative_control: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// List the presets, print one, or write all of them as scenario files.
    Presets {
        /// Print the scenario JSON of this preset.
        #[arg(long)]
        show: Option<String>,
        /// Write `<preset>.json` for every preset into this directory.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory [default: $PJFILTER_OUT/<command>, else ./pjfilter-out/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Kalman,
    KsParticle,
    ZakaiParticle,
    Grid,
    All,
}

enum Failure {
    Core(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonPsdCovariance(_)
        | Error::NonIncreasingTimes(_)
        | Error::HorizonTooShort { .. }
        | Error::UnknownFunctionDescriptor(_)
        | Error::InvalidScenario(_)
        | Error::NonpositiveR(_)
        | Error::Parse(_)
        | Error::Io(_) => 2,
        Error::UnsupportedScenario(_) | Error::IncompatibleMethod { .. } => 3,
        Error::ZeroConditionalMass(_)
        | Error::NumericalBlowup(_)
        | Error::NegativeDt(_)
        | Error::SingularS(_)
        | Error::IndefiniteCovariance(_)
        | Error::WeightCollapse(_)
        | Error::ZeroReferenceDensity(_)
        | Error::ZeroMass
        | Error::BoundaryLeak { .. }
        | Error::ZeroLikelihoodMass(_) => 4,
    }
}

struct Loaded {
    sc: ValidatedScenario,
    source: ScenarioSource,
}

fn load(args: &ScenarioArgs) -> Result<Loaded, Failure> {
    let (config, source, file_hash) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let bytes = fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            (ScenarioConfig::from_json(text)?, path.display().to_string(), sha256_hex(&bytes))
        }
        (None, Some(name)) => {
            let p: Preset = name.parse()?;
            let c = ScenarioConfig::preset(p);
            let h = sha256_hex(c.to_json().as_bytes());
            (c, format!("preset:{}", p.name()), h)
        }
        (None, None) => return Err(Error::Parse("either --config or --preset is required".into()).into()),
    };
    let mut sc = config.validate()?;
    if let Some(seed) = args.seed {
        sc = sc.with(|c| c.seed = seed)?;
    }
    let canonical_sha256 = sha256_hex(&scenario_bytes(&sc));
    Ok(Loaded { sc, source: ScenarioSource { source, sha256: file_hash, canonical_sha256 } })
}

fn out_dir(args: &OutArgs, command: &str) -> PathBuf {
    args.out.clone().unwrap_or_else(|| match std::env::var_os("PJFILTER_OUT") {
        Some(root) => Path::new(&root).join(command),
        None => Path::new("pjfilter-out").join(command),
    })
}

fn start_manifest(loaded: &Loaded, started: u64) -> RunManifest {
    RunManifest {
        tool: "pjfilter".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: std::env::args().skip(1).collect(),
        scenario: loaded.source.clone(),
        seed: loaded.sc.seed(),
        threads: rayon::current_num_threads(),
        started_unix: started,
        finished_unix: started,
        outputs: Vec::new(),
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> pjfilter::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn scenario_bytes(sc: &ValidatedScenario) -> Vec<u8> {
    let mut s = sc.to_json();
    s.push('\n');
    s.into_bytes()
}

fn cmd_simulate(scenario: &ScenarioArgs, paths: usize, out: &OutArgs) -> Result<u8, Failure> {
    let started = unix_now();
    let loaded = load(scenario)?;
    let sc = &loaded.sc;
    let sims = simulate_many(sc, sc.seed(), paths)?;
    let dir = out_dir(out, "simulate");
    let mut stage = Staging::new(&dir);
    stage.add("scenario.json", scenario_bytes(sc));
    let width = paths.saturating_sub(1).to_string().len().max(4);
    for (id, sim) in sims.iter().enumerate() {
        for w in &sim.warnings {
            eprintln!("warning: path {id}: {w}");
        }
        let n = sc.model().n();
        stage.add(&format!("path_{id:0width$}.csv"), csv_bytes(|b| io::write_paths(b, id as u64, sim))?);
        stage.add(&format!("events_{id:0width$}.csv"), csv_bytes(|b| io::write_events(b, id as u64, n, &sim.events))?);
    }
    stage.commit(start_manifest(&loaded, started))?;
    println!("wrote {} paths to {}", paths, dir.display());
    Ok(0)
}

fn particle(sc: &ValidatedScenario, events: &[ObservationEvent], mode: Mode, particles: Option<usize>, snapshots: bool) -> pjfilter::Result<ParticleRun> {
    let mut opts = ParticleOptions::from_scenario(sc, mode);
    if let Some(n) = particles {
        opts.particles = n;
    }
    opts.snapshots = snapshots;
    run_particle_filter(sc, events, &opts)
}

fn mean_series(run: &ParticleRun) -> (Vec<(f64, Side, f64)>, Vec<(f64, Side, f64)>) {
    let rows = run.series("x1");
    (rows.iter().map(|r| (r.t, r.side, r.estimate)).collect(), rows.iter().map(|r| (r.t, r.side, r.se)).collect())
}

fn grid_series(g: &GridTrajectory) -> (Vec<(f64, Side, f64)>, Vec<(f64, Side, f64)>) {
    (g.rows.iter().map(|r| (r.t, r.side, r.mean)).collect(), g.rows.iter().map(|r| (r.t, r.side, r.var)).collect())
}

#[allow(clippy::too_many_arguments)]
fn cmd_filter(
    scenario: &ScenarioArgs,
    method: Method,
    events_file: Option<&Path>,
    path_id: Option<u64>,
    particles: Option<usize>,
    snapshots: bool,
    densities: bool,
    out: &OutArgs,
) -> Result<u8, Failure> {
    let started = unix_now();
    let loaded = load(scenario)?;
    let sc = &loaded.sc;
    let (events, sim): (Vec<ObservationEvent>, Option<Simulation>) = match events_file {
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            (io::read_events(f, sc, path_id)?, None)
        }
        None => {
            let sim = simulate_path(sc, sc.seed())?;
            (sim.events.clone(), Some(sim))
        }
    };
    let (m, n) = (sc.model().m(), sc.model().n());
    let dir = out_dir(out, "filter");
    let mut stage = Staging::new(&dir);
    stage.add("scenario.json", scenario_bytes(sc));
    if let Some(sim) = &sim {
        stage.add("events.csv", csv_bytes(|b| io::write_events(b, 0, n, &sim.events))?);
        stage.add("path.csv", csv_bytes(|b| io::write_paths(b, 0, sim))?);
    }

    let all = method == Method::All;
    // Explicit methods report incompatibility; `all` skips what does not apply.
    let attempt = |want: Method, r: pjfilter::Result<()>| -> Result<bool, Failure> {
        match r {
            Ok(()) => Ok(true),
            Err(e @ (Error::IncompatibleMethod { .. } | Error::UnsupportedScenario(_))) if all => {
                eprintln!("skipping {want:?}: {e}");
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    };
    let mut cmp = io::Comparison::default();
    let mut extra: Vec<(String, Vec<(f64, Side, f64)>)> = Vec::new();

    if all || method == Method::Kalman {
        let mut traj = None;
        attempt(Method::Kalman, run_filter(sc, &events).map(|t| traj = Some(t)))?;
        if let Some(t) = traj {
            stage.add("kalman.csv", csv_bytes(|b| io::write_kalman(b, &t, m, n))?);
            let rows = t.scalar_rows();
            cmp.add("kalman_m", &rows.iter().map(|r| (r.0, r.1, r.2)).collect::<Vec<_>>());
            extra.push(("kalman_P".into(), rows.iter().map(|r| (r.0, r.1, r.3)).collect()));
            if let Some(sim) = sim.as_ref().filter(|_| all && m == 1 && n == 1) {
                stage.add("figure1.csv", csv_bytes(|b| io::write_figure1(b, sc, sim))?);
            }
        }
    }
    for (want, mode, file, col) in [
        (Method::KsParticle, Mode::Normalized, "ks_particle", "ks"),
        (Method::ZakaiParticle, Mode::Unnormalized, "zakai_particle", "zakai"),
    ] {
        if all || method == want {
            let mut run = None;
            attempt(want, particle(sc, &events, mode, particles, snapshots).map(|r| run = Some(r)))?;
            if let Some(r) = run {
                stage.add(&format!("{file}.csv"), csv_bytes(|b| io::write_particle_summary(b, &r))?);
                if snapshots {
                    stage.add(&format!("{file}_snapshots.csv"), csv_bytes(|b| io::write_snapshots(b, &r, m))?);
                }
                let (mean, se) = mean_series(&r);
                cmp.add(&format!("{col}_m"), &mean);
                extra.push((format!("{col}_se"), se));
            }
        }
    }
    if all || method == Method::Grid {
        let mut traj = None;
        attempt(Method::Grid, run_grid_filter(sc, &events, densities).map(|t| traj = Some(t)))?;
        if let Some(g) = traj {
            stage.add("grid_summary.csv", csv_bytes(|b| io::write_grid_summary(b, &g))?);
            if densities {
                stage.add("grid_density.csv", csv_bytes(|b| io::write_grid_densities(b, &g))?);
            }
            let (mean, var) = grid_series(&g);
            cmp.add("grid_m", &mean);
            extra.push(("grid_var".into(), var));
        }
    }
    if all {
        if let Some(d) = cmp.max_abs_diff("kalman_m", "grid_m") {
            println!("max |kalman_m - grid_m| = {d:.3e}");
        }
        for (name, values) in &extra {
            cmp.add(name, values);
        }
        stage.add("comparison.csv", csv_bytes(|b| cmp.write(b))?);
    }
    stage.commit(start_manifest(&loaded, started))?;
    println!("wrote filter outputs to {}", dir.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagnose(
    scenario: &ScenarioArgs,
    checks: &[String],
    paths: Option<usize>,
    runs: Option<usize>,
    particles: Option<usize>,
    reference_runs: Option<usize>,
    order: Option<usize>,
    negative_control: bool,
    out: &OutArgs,
) -> Result<u8, Failure> {
    let started = unix_now();
    let loaded = load(scenario)?;
    let sc = &loaded.sc;
    let checks = checks.iter().map(|c| c.parse::<Check>()).collect::<pjfilter::Result<Vec<_>>>()?;
    let mut settings = CheckSettings::for_scenario(sc);
    if let Some(n) = paths {
        settings.n_paths = n;
    }
    if let Some(r) = runs {
        settings.ks_runs = r;
        settings.zakai_runs = r;
        settings.rho_runs = r;
    }
    if let Some(n) = particles {
        settings.particles = n;
    }
    if let Some(r) = reference_runs {
        settings.reference_runs = r;
    }
    if let Some(o) = order {
        settings.quadrature_order = o;
    }
    settings.negative_control = negative_control;
    let reports = diagnostics::run_checks(sc, &checks, &settings)?;
    print!("{}", diagnostics::render_table(&reports));
    let ok = if negative_control {
        reports.iter().all(|r| r.pass)
    } else {
        diagnostics::all_pass(&reports)
    };
    let dir = out_dir(out, "diagnose");
    let mut stage = Staging::new(&dir);
    stage.add("scenario.json", scenario_bytes(sc));
    let mut json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    json.push('\n');
    stage.add("report.json", json.into_bytes());
    stage.commit(start_manifest(&loaded, started))?;
    Ok(if ok { 0 } else { 1 })
}

fn cmd_presets(show: Option<&str>, write: Option<&Path>) -> Result<u8, Failure> {
    if let Some(name) = show {
        let p: Preset = name.parse()?;
        println!("{}", ScenarioConfig::preset(p).to_json());
        return Ok(0);
    }
    if let Some(dir) = write {
        fs::create_dir_all(dir)?;
        for p in Preset::all() {
            let mut text = ScenarioConfig::preset(p).to_json();
            text.push('\n');
            fs::write(dir.join(format!("{}.json", p.name())), text)?;
        }
        return Ok(0);
    }
    for p in Preset::all() {
        println!("{}", p.name());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate { scenario, paths, out } => cmd_simulate(scenario, *paths, out),
        Command::Filter { scenario, method, events, path_id, simulate: _, particles, snapshots, densities, out } => {
            cmd_filter(scenario, *method, events.as_deref(), *path_id, *particles, *snapshots, *densities, out)
        }
        Command::Diagnose { scenario, checks, paths, runs, particles, reference_runs, order, negative_control, out } => {
            cmd_diagnose(scenario, checks, *paths, *runs, *particles, *reference_runs, *order, *negative_control, out)
        }
        Command::Presets { show, write } => cmd_presets(show.as_deref(), write.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
