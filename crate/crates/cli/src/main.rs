use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use retinav_core::config::Config;
use retinav_core::eye::{fit_sphere_ransac, read_points, write_points, RansacConfig};
use retinav_core::oracle::OracleConfig;
use retinav_core::se3::Vec3;
use retinav_core::session::{replay, serve, EventLog, RecordedSession, Session};
use retinav_core::task::{
    localization_points, run_localization, run_localization_trials, run_navigation_benchmark, run_vessel_following,
    PixelGrid, RunReport, TaskSettings, VesselPath,
};

#[derive(Parser)]
#[command(name = "retinav", version, about = "Retinal tool navigation benchmarks and session host")]
struct Cli {
    /// TOML config; missing keys use the built-in defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark and print a summary table plus a JSON report.
    Bench(BenchArgs),
    /// Re-run a session log and check that it reproduces its events.
    Replay { logfile: PathBuf },
    /// Host a session over TCP (address from config or RETINAV_LISTEN).
    Serve {
        /// Session log to create; defaults to `[session] log_path`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Tick as fast as possible instead of at the simulation rate.
        #[arg(long)]
        free_run: bool,
    },
    /// Fit a sphere to a point file (one `x y z` per line, mm).
    Fit {
        points: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Nav,
    Localize,
    Vessel,
}

#[derive(Args)]
struct BenchArgs {
    task: Task,
    #[arg(long)]
    seed: Option<u64>,
    /// Oracle noise standard deviation (mm), all axes.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    sclera_weight: Option<f64>,
    #[arg(long)]
    collision_weight: Option<f64>,
    /// Goal grid for `nav` or sample grid for `localize`/`vessel`, as COLSxROWS.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Goal count for `nav` when no grid is given (50 → 5×10, 100 → 10×10).
    #[arg(long)]
    goals: Option<usize>,
    /// Localization trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Fraction of oracle predictions replaced by gross outliers.
    #[arg(long)]
    outlier_rate: Option<f64>,
    #[arg(long)]
    waypoints: Option<usize>,
    /// Write the JSON report here.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Compare the JSON report byte-for-byte with this file.
    #[arg(long)]
    golden: Option<PathBuf>,
    /// Also write the first trial's sample points (`localize` only).
    #[arg(long)]
    points_out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (c, r) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected COLSxROWS, got {s:?}"))?;
    let c: usize = c.trim().parse().map_err(|e| format!("columns: {e}"))?;
    let r: usize = r.trim().parse().map_err(|e| format!("rows: {e}"))?;
    if c == 0 || r == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((c, r))
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Bench(args) => bench(cfg, &args),
        Command::Replay { logfile } => replay_cmd(&logfile),
        Command::Serve { log, free_run } => serve_cmd(cfg, log, free_run),
        Command::Fit { points, threshold, seed } => fit_cmd(&points, threshold, seed),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn bench(mut cfg: Config, args: &BenchArgs) -> CliResult {
    if let Some(s) = args.sigma {
        cfg.oracle.noise_sigma = OracleConfig::with_sigma(s, cfg.oracle.seed).noise_sigma;
    }
    if let Some(w) = args.sclera_weight {
        cfg.cost.sclera_weight = w;
    }
    if let Some(w) = args.collision_weight {
        cfg.cost.collision_weight = w;
    }
    if let Some(r) = args.outlier_rate {
        cfg.oracle.gross_outlier_rate = r;
    }
    if let Some(n) = args.waypoints {
        cfg.vessel.waypoints = n;
    }
    cfg.validate()?;
    let seed = args.seed.unwrap_or(cfg.bench.seed);
    let settings = cfg.task_settings();
    let scenario = cfg.scenario;
    let sample_grid = {
        let (c, r) = args.grid.unwrap_or((cfg.localization.cols, cfg.localization.rows));
        PixelGrid::localization(c, r)
    };

    let started = Instant::now();
    let report = match args.task {
        Task::Nav => {
            let grid = match args.grid {
                Some((cols, rows)) => PixelGrid {
                    cols,
                    rows,
                    ..PixelGrid::navigation(50)
                },
                None => PixelGrid::navigation(args.goals.unwrap_or(cfg.bench.goals)),
            };
            let goals = grid.pixels(&scenario.camera, &scenario.eye_pixel());
            run_navigation_benchmark(&scenario, &goals, &settings, seed)?
        }
        Task::Localize => {
            let trials = args.trials.unwrap_or(cfg.bench.localization_trials);
            if let Some(path) = &args.points_out {
                let pixels = sample_grid.pixels(&scenario.camera, &scenario.eye_pixel());
                let pts = localization_points(&scenario, &scenario.initial_state(), &pixels, &settings)?;
                write_points(BufWriter::new(File::create(path)?), &pts)?;
            }
            run_localization_trials(&scenario, &sample_grid, &settings, &cfg.localization.ransac, trials, seed)?
        }
        Task::Vessel => vessel_report(&cfg, &settings, &sample_grid, seed)?,
    };
    let elapsed = started.elapsed();
    print!("{}", report.render_table(Some(elapsed)));

    let json = report.to_json();
    if let Some(path) = &args.output {
        fs::write(path, &json)?;
    }
    if let Some(path) = &args.golden {
        let golden = fs::read_to_string(path)?;
        if golden != json {
            eprintln!("golden mismatch against {}: {}", path.display(), first_difference(&golden, &json));
            return Ok(ExitCode::FAILURE);
        }
        println!("golden match: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Localizes from the nominal start, then follows a straight vessel through
/// the eye's image centre on the fitted sphere.
fn vessel_report(cfg: &Config, settings: &TaskSettings, grid: &PixelGrid, seed: u64) -> Result<RunReport, Box<dyn std::error::Error>> {
    let scenario = cfg.scenario;
    let start = scenario.initial_state();
    let pixels = grid.pixels(&scenario.camera, &scenario.eye_pixel());
    let ransac = RansacConfig {
        seed: seed ^ cfg.localization.ransac.seed,
        ..cfg.localization.ransac
    };
    let (fit, _) = run_localization(&scenario, &start, &pixels, settings, &ransac)?;
    let mut path = VesselPath::straight(&scenario.camera, &scenario.eye_pixel(), cfg.vessel.waypoints);
    path.hover_offset = cfg.vessel.hover_offset_mm;
    let (_, mut report) = run_vessel_following(&scenario, &start, &path, &fit, settings, &cfg.vessel.schedule)?;
    report.seed = seed;
    Ok(report)
}

fn first_difference(expected: &str, actual: &str) -> String {
    let mut e = expected.lines();
    let mut a = actual.lines();
    let mut line = 1;
    loop {
        match (e.next(), a.next()) {
            (None, None) => return "trailing whitespace differs".into(),
            (x, y) if x != y => {
                return format!(
                    "line {line}: expected {:?}, got {:?}",
                    x.unwrap_or("<end>"),
                    y.unwrap_or("<end>")
                )
            }
            _ => line += 1,
        }
    }
}

fn replay_cmd(logfile: &Path) -> CliResult {
    let report = replay(BufReader::new(File::open(logfile)?))?;
    println!("replayed {} inputs, {} logged events", report.inputs, report.events);
    if report.is_exact() {
        println!("event log reproduced exactly");
        return Ok(ExitCode::SUCCESS);
    }
    println!("{} mismatching events", report.mismatches.len());
    if let Some(m) = report.mismatches.first() {
        println!("first mismatch at event {}:", m.index);
        println!("  logged:   {}", m.expected.as_deref().unwrap_or("<missing>"));
        println!("  replayed: {}", m.actual.as_deref().unwrap_or("<missing>"));
    }
    Ok(ExitCode::FAILURE)
}

fn serve_cmd(cfg: Config, log: Option<PathBuf>, free_run: bool) -> CliResult {
    let addr = cfg.listen_address();
    let listener = TcpListener::bind(&addr)?;
    let log_path = log.or_else(|| cfg.session.log_path.as_ref().map(PathBuf::from));
    let log = match &log_path {
        Some(p) => {
            // Never append a second session to an existing log.
            let file = OpenOptions::new().write(true).create_new(true).open(p)?;
            Some(EventLog::create(BufWriter::new(file), &cfg)?)
        }
        None => None,
    };
    let realtime = cfg.session.realtime && !free_run;
    let session = RecordedSession::new(Session::new(cfg)?, log);
    eprintln!("listening on {}", listener.local_addr()?);
    if let Some(p) = &log_path {
        eprintln!("logging to {}", p.display());
    }
    let (stats, _) = serve(listener, session, realtime, Arc::new(AtomicBool::new(false)))?;
    eprintln!(
        "served {} connections, {} commands, {} ticks",
        stats.connections, stats.commands, stats.ticks
    );
    Ok(ExitCode::SUCCESS)
}

fn fit_cmd(points: &Path, threshold: Option<f64>, seed: u64) -> CliResult {
    let pts: Vec<Vec3> = read_points(BufReader::new(File::open(points)?))?;
    let cfg = RansacConfig {
        inlier_threshold: threshold.unwrap_or(RansacConfig::default().inlier_threshold),
        seed,
        ..RansacConfig::default()
    };
    let fit = fit_sphere_ransac(&pts, &cfg)?;
    let out = serde_json::json!({
        "center_mm": fit.eye.center,
        "radius_mm": fit.eye.radius,
        "points": pts.len(),
        "inliers": fit.inlier_count(),
        "rms_residual_mm": fit.rms_residual,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    let _ = io::Write::flush(&mut io::stdout());
    Ok(ExitCode::SUCCESS)
}
