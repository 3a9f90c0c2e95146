//! `isac-ota` command-line front end.
//!
//! Exit codes: 0 success, 2 bad config / arguments, 3 runtime failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isac_ota::config::{parse_sweep_values, ScenarioConfig, SweepParam};
use isac_ota::music::write_spectrum_csv;
use isac_ota::sim::{monte_carlo, run_episode, sensing_spectra, write_trace_csv};
use isac_ota::Error;

const OUT_DIR_ENV: &str = "ISAC_OTA_OUT_DIR";

#[derive(Parser)]
#[command(name = "isac-ota", version, about = "Closed-loop ISAC over-the-air UAV swarm control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its per-period trace as CSV.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo sweep of one parameter; writes JSON aggregate records.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// n_antennas, gamma_snr_db or n_uavs.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 10,20,30.
        #[arg(long)]
        values: String,
        /// Runs per sweep value.
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
    /// Run one period and dump the MUSIC pseudo-spectrum as CSV.
    MusicSpectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Check a config and print it in normalized form.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file. Defaults to a file named after the verb in $ISAC_OTA_OUT_DIR
    /// (or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set channel.n_paths=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the scaled-down profile (10 UAVs, 16 antennas, 100 periods)
    /// instead of the full-scale defaults.
    #[arg(long)]
    fast: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Uplink,
    Downlink,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

/// Config and parse errors map to exit 2, everything else to 3.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config { .. } | Error::Parse { .. } => Failure::Config(e.to_string()),
        other => Failure::Runtime(other.to_string()),
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let base = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
            if common.fast {
                // Layer the file over the fast profile.
                let file: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Failure::Config(format!("{}: line {}: {e}", path.display(), e.line())))?;
                let mut doc = serde_json::to_value(ScenarioConfig::fast()).expect("config serializes");
                merge(&mut doc, file);
                ScenarioConfig::from_json_str(&doc.to_string())
            } else {
                ScenarioConfig::from_json_str(&text)
            }
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        None if common.fast => ScenarioConfig::fast(),
        None => ScenarioConfig::default(),
    };
    let mut cfg = base.with_overrides(&common.overrides).map_err(classify)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn out_path(common: &Common, default_name: &str) -> PathBuf {
    if let Some(p) = &common.out {
        return p.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Path::new(&dir).join(default_name),
        _ => PathBuf::from(default_name),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let path = out_path(common, "trace.csv");
    let trace = run_episode(&cfg, None).map_err(classify)?;
    let mut w = create(&path)?;
    write_trace_csv(&mut w, &trace).and_then(|_| w.flush()).map_err(io_err(&path))?;
    if let Some(f) = trace.failure {
        return Err(Failure::Runtime(format!(
            "episode aborted at period {}: {} (partial trace in {})",
            f.period,
            f.message,
            path.display()
        )));
    }
    eprintln!("wrote {} periods to {}", trace.records.len(), path.display());
    Ok(())
}

fn cmd_sweep(common: &Common, param: &str, values: &str, runs: usize) -> Result<(), Failure> {
    let param = SweepParam::parse(param).map_err(classify)?;
    let parsed = parse_sweep_values(values).map_err(classify)?;
    if !parsed.duplicates.is_empty() {
        let d: Vec<String> = parsed.duplicates.iter().map(|v| v.to_string()).collect();
        eprintln!("warning: duplicate sweep values removed: {}", d.join(", "));
    }
    if runs == 0 {
        return Err(Failure::Config("--runs must be at least 1".into()));
    }
    let cfg = load_config(common)?;
    // Check every point before spending time on any of them.
    for &v in &parsed.values {
        param.apply(&cfg, v).map_err(classify)?;
    }
    let path = out_path(common, "sweep.json");
    let result = monte_carlo(&cfg, runs, Some((param, &parsed.values))).map_err(classify)?;
    for f in &result.failures {
        eprintln!(
            "warning: {}={} run {} failed at period {}: {}",
            param.name(),
            f.sweep_value,
            f.run,
            f.failure.period,
            f.failure.message
        );
    }
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &result.records)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(io_err(&path))?;
    if let Some(r) = result.records.iter().find(|r| r.n_runs == 0) {
        return Err(Failure::Runtime(format!("every run failed at {}={}", param.name(), r.sweep_value)));
    }
    eprintln!("wrote {} records to {}", result.records.len(), path.display());
    Ok(())
}

fn cmd_spectrum(common: &Common, mode: Mode) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let (name, default) = match mode {
        Mode::Uplink => ("uplink", "spectrum_uplink.csv"),
        Mode::Downlink => ("downlink", "spectrum_downlink.csv"),
    };
    let path = out_path(common, default);
    let spectra = sensing_spectra(&cfg).map_err(classify)?;
    let music = match mode {
        Mode::Uplink => &spectra.uplink,
        Mode::Downlink => &spectra.downlink,
    };
    let mut w = create(&path)?;
    write_spectrum_csv(&mut w, &music.spectrum).and_then(|_| w.flush()).map_err(io_err(&path))?;
    eprintln!(
        "{name} estimate {:.4} rad (object at {:.4} rad, error {:.4}); {} rows in {}",
        music.alpha_hat,
        spectra.alpha_o,
        (music.alpha_hat - spectra.alpha_o).abs(),
        music.spectrum.len(),
        path.display()
    );
    Ok(())
}

fn cmd_validate(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let text = cfg.to_json_pretty();
    match &common.out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}").and_then(|_| w.flush()).map_err(io_err(path))?;
        }
        None => match writeln!(std::io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                return Err(Failure::Runtime(format!("cannot write to stdout: {e}")))
            }
            _ => {}
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => cmd_run(common),
        Command::Sweep { common, param, values, runs } => cmd_sweep(common, param, values, *runs),
        Command::MusicSpectrum { common, mode } => cmd_spectrum(common, *mode),
        Command::ValidateConfig { common } => cmd_validate(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
