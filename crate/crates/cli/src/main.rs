//! `cognet`: run scenarios, detect feedback loops and emit plot-ready data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use cognet::aco::{shortest_path_oracle, AcoInstance};
use cognet::error::Error;
use cognet::export::{read_tidy_csv, select, to_json_pretty, write_tidy_csv};
use cognet::scenario::{self, Scenario};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "cognet", version, about = "Cognitive network simulations from TOML scenarios")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (run, detect, profile) or file (plotdata, oracle).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// No progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write summary.json, series.csv and metadata.json.
    Run { scenario: PathBuf },
    /// Check every candidate closed walk for feedback and write feedback.json.
    Detect {
        scenario: PathBuf,
        /// Largest walk, in arcs.
        #[arg(long, default_value_t = 6)]
        max_size: usize,
    },
    /// Print one series of a run directory as t,series,value CSV.
    Plotdata { run_dir: PathBuf, series: String },
    /// Tabulate convergence toward the aggregate and write profile.json.
    Profile {
        scenario: PathBuf,
        #[arg(long, default_value_t = 16)]
        starts: usize,
        #[arg(long, default_value_t = 50.0)]
        horizon: f64,
        /// Distance of each start from the aggregate.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
    },
    /// Shortest colony-to-food path of an ACO instance JSON.
    Oracle { instance: PathBuf },
}

/// A failure with its exit code and error-line category.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } => 2,
            Error::Agent { .. } => 1,
            _ => 3,
        };
        Failure { code, kind: e.kind(), message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure { code: 3, kind: "config", message: message.into() }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn load(&self, path: &Path) -> Result<Scenario, Failure> {
        let s = Scenario::load(path)?;
        Ok(match self.seed {
            Some(seed) => s.with_seed(seed),
            None => s,
        })
    }

    fn out_dir(&self, s: &Scenario) -> Result<PathBuf, Failure> {
        let dir = match (&self.out, &s.output) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => s.resolve(d),
            (None, None) => PathBuf::from("cognet-out"),
        };
        fs::create_dir_all(&dir).map_err(|e| Failure::from(Error::Io(format!("{}: {e}", dir.display()))))?;
        Ok(dir)
    }
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Metadata {
    version: &'static str,
    command: &'static str,
    scenario: String,
    seed: u64,
    threads: usize,
    finished_unix: u64,
}

fn metadata(command: &'static str, path: &Path, seed: u64) -> Metadata {
    Metadata {
        version: env!("CARGO_PKG_VERSION"),
        command,
        scenario: path.display().to_string(),
        seed,
        threads: rayon::current_num_threads(),
        finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    }
}

fn cmd_run(ctx: &Ctx, path: &Path) -> Outcome {
    let s = ctx.load(path)?;
    let out = scenario::run(&s)?;
    let dir = ctx.out_dir(&s)?;
    write(&dir.join("summary.json"), &to_json_pretty(&out.summary)?)?;
    write(&dir.join("series.csv"), &write_tidy_csv(&out.series)?)?;
    for (name, text) in &out.artifacts {
        write(&dir.join(name), text)?;
    }
    write(&dir.join("metadata.json"), &to_json_pretty(&metadata("run", path, s.seed))?)?;
    ctx.note(&format!("{} run written to {}", s.kind.name(), dir.display()));
    Ok(())
}

fn cmd_detect(ctx: &Ctx, path: &Path, max_size: usize) -> Outcome {
    let s = ctx.load(path)?;
    let report = scenario::detect(&s, max_size)?;
    let dir = ctx.out_dir(&s)?;
    write(&dir.join("feedback.json"), &to_json_pretty(&report)?)?;
    let loops = report.walks.iter().filter(|w| w.is_feedback_loop).count();
    ctx.note(&format!("{} candidate walks, {loops} feedback loops, written to {}", report.walks.len(), dir.display()));
    Ok(())
}

fn cmd_plotdata(ctx: &Ctx, dir: &Path, name: &str) -> Outcome {
    let file = dir.join("series.csv");
    if !file.is_file() {
        return Err(Error::Io(format!("{}: no series.csv in run directory", dir.display())).into());
    }
    let text = fs::read_to_string(&file).map_err(|e| Error::Io(format!("{}: {e}", file.display())))?;
    let all = read_tidy_csv(&text)?;
    let one = select(&all, name)?;
    emit(ctx.out.as_deref(), &write_tidy_csv(std::slice::from_ref(one))?)
}

fn cmd_profile(ctx: &Ctx, path: &Path, starts: usize, horizon: f64, radius: f64) -> Outcome {
    let s = ctx.load(path)?;
    let p = scenario::profile(&s, starts, horizon, radius)?;
    let dir = ctx.out_dir(&s)?;
    write(&dir.join("profile.json"), &to_json_pretty(&p)?)?;
    ctx.note(&format!("fitted rate {:.6}, written to {}", p.profile.alpha, dir.display()));
    Ok(())
}

#[derive(Serialize)]
struct OracleOutput {
    path: Vec<String>,
    length: f64,
}

fn cmd_oracle(ctx: &Ctx, path: &Path) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let inst = AcoInstance::from_json_str(&text)?;
    let g = inst.graph();
    let arcs = shortest_path_oracle(g, inst.lengths(), inst.colony(), inst.food())?;
    let mut names = vec![g.name(inst.colony()).to_string()];
    names.extend(arcs.iter().map(|&e| g.name(g.head(e)).to_string()));
    emit(ctx.out.as_deref(), &to_json_pretty(&OracleOutput { path: names, length: inst.path_length(&arcs) })?)
}

fn init_threads() -> Outcome {
    let Ok(raw) = std::env::var("COGNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_error(format!("COGNET_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_error(format!("thread pool: {e}")))
}

fn dispatch(cli: Cli) -> Outcome {
    init_threads()?;
    let ctx = Ctx { seed: cli.seed, out: cli.out, quiet: cli.quiet };
    match cli.command {
        Command::Run { scenario } => cmd_run(&ctx, &scenario),
        Command::Detect { scenario, max_size } => cmd_detect(&ctx, &scenario, max_size),
        Command::Plotdata { run_dir, series } => cmd_plotdata(&ctx, &run_dir, &series),
        Command::Profile { scenario, starts, horizon, radius } => cmd_profile(&ctx, &scenario, starts, horizon, radius),
        Command::Oracle { instance } => cmd_oracle(&ctx, &instance),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            eprint!("{text}");
            return ExitCode::from(3);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.kind, f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
