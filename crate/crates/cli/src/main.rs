use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idep::config::{bundled, parse_config, RunConfig};
use idep::runner::{self, Command, RunFailure};
use log::{error, info};

/// iDEP trapping simulator.
#[derive(Parser)]
#[command(name = "idep", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run config file, or `bundled:NAME` for a built-in scenario.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<String>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Grid spacing in µm (overrides `device.resolution_um`).
    #[arg(long, global = true, value_name = "UM")]
    resolution: Option<f64>,
    /// Worker threads for solver and ensemble stages.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "info", value_name = "LEVEL")]
    log_level: log::LevelFilter,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the fields, export them and write the height/uniformity reports.
    Solve,
    /// One solve per gap in `sweep.gaps_um`.
    Sweep,
    /// Clausius-Mossotti spectrum of the configured particle.
    Spectrum,
    /// Particle trajectories from `trace.releases_um` and the ensemble box.
    Trace,
    /// Height-decay and uniformity reports without field exports.
    Metrics,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Solve => Command::Solve,
            Cmd::Sweep => Command::Sweep,
            Cmd::Spectrum => Command::Spectrum,
            Cmd::Trace => Command::Trace,
            Cmd::Metrics => Command::Metrics,
        }
    }
}

fn failure(stage: &str) -> impl Fn(idep::Error) -> RunFailure + '_ {
    move |error| RunFailure { stage: stage.into(), error }
}

fn load(cli: &Cli) -> Result<RunConfig, RunFailure> {
    let source = cli
        .config
        .as_deref()
        .ok_or_else(|| failure("config")(idep::Error::InvalidInput("--config is required".into())))?;
    let text = match source.strip_prefix("bundled:") {
        Some(name) => bundled(name)
            .ok_or_else(|| failure("config")(idep::Error::InvalidInput(format!("no bundled config `{name}`"))))?
            .to_string(),
        None => std::fs::read_to_string(source).map_err(|e| failure("read config")(e.into()))?,
    };
    let mut cfg = parse_config(&text).map_err(failure("parse config"))?;
    if let Some(r) = cli.resolution {
        cfg.device.resolution_um = r;
    }
    if let Some(out) = &cli.out {
        cfg.output.directory = out.display().to_string();
    }
    cfg.validate().map_err(failure("parse config"))?;
    Ok(cfg)
}

/// Reports a failure on stderr as one JSON line; `error.json` is written to
/// `out` when given.
fn fail(out: Option<&Path>, command: Command, f: &RunFailure) -> ExitCode {
    let record = f.record(command);
    if let Some(out) = out {
        runner::write_error_record(out, &record);
    }
    eprintln!("{}", serde_json::to_string(&record).expect("error record serializes"));
    ExitCode::from(record.exit_code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    let command: Command = cli.command.into();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("could not size the thread pool: {e}");
        }
    }
    let fallback_out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(f) => return fail(Some(&fallback_out), command, &f),
    };
    let out = PathBuf::from(&cfg.output.directory);
    match runner::run(command, &cfg, &out) {
        Ok(m) => {
            info!("wrote {} files to {}", m.outputs.len(), out.display());
            println!("{}", out.join("manifest.json").display());
            ExitCode::SUCCESS
        }
        // The runner has already written error.json.
        Err(f) => fail(None, command, &f),
    }
}
