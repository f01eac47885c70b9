use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qdsource::correlator::{CorrelationConfig, CorrelationMode, DEFAULT_NORMALIZATION_PEAKS};
use qdsource::photophysics::BackgroundModel;
use qdsource_cli::pipeline::{self, FitTarget};
use qdsource_cli::{CliError, ConfigError, RunManifest, Scenario};

#[derive(Parser)]
#[command(name = "qdsource", version, about = "Simulate and analyze a cavity-pumped single-photon source")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (flat `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    G2Cw,
    Pulsed,
    Lifetime,
    Lorentzian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    StartStop,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic cavity spectrum and Lorentzian fit (Q factor).
    Spectrum(Common),
    /// Simulate and write a time-tag file.
    Simulate(Common),
    /// Correlate a time-tag file into a histogram CSV.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Merged two-channel time-tag file.
        #[arg(long)]
        input: PathBuf,
        /// Acquisition length; defaults to the last tag + 1 ps.
        #[arg(long)]
        duration_ps: Option<u64>,
        #[arg(long)]
        bin_width_ps: Option<u64>,
        #[arg(long)]
        max_tau_ps: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Fit a histogram, decay or spectrum CSV.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
        /// Pump period for `pulsed`.
        #[arg(long)]
        rep_period_ps: Option<f64>,
        /// Signal-to-background ratio used for the corrected g²(0).
        #[arg(long)]
        snr: Option<f64>,
        /// Relative noise for `lorentzian` weights.
        #[arg(long, default_value_t = 0.01)]
        noise_rel: f64,
    },
    /// Run a full scenario.
    Run(Common),
    /// Power sweep of a CW scenario.
    Sweep(Common),
}

fn load(common: &Common) -> Result<Scenario, CliError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::field("--config", "a scenario file is required"))?;
    Scenario::load(path, common.seed)
}

fn setup_threads(common: &Common) -> Result<(), CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(ConfigError::field("--threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::stage("thread pool", e))?;
    }
    Ok(())
}

/// Writes to stdout, ignoring a closed pipe (`qdsource run ... | head`).
fn out(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_manifest(m: &RunManifest, out_dir: &std::path::Path) {
    for a in &m.artifacts {
        out(&format!("wrote {}\n", out_dir.join(&a.path).display()));
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(common) => {
            setup_threads(&common)?;
            let s = load(&common)?;
            let outcome = pipeline::run_scenario(&s, &common.out_dir, common.plots)?;
            out(&pipeline::format_table(&outcome.summary_rows()));
            print_manifest(&outcome.manifest, &common.out_dir);
        }
        Command::Simulate(common) => {
            setup_threads(&common)?;
            let s = load(&common)?;
            let m = pipeline::simulate_to_file(&s, &common.out_dir)?;
            print_manifest(&m, &common.out_dir);
        }
        Command::Spectrum(common) => {
            let s = load(&common)?;
            let (m, report) = pipeline::run_spectrum(&s, &common.out_dir, common.plots)?;
            out(&report.to_text());
            print_manifest(&m, &common.out_dir);
        }
        Command::Sweep(common) => {
            setup_threads(&common)?;
            let s = load(&common)?;
            let (m, rows) = pipeline::run_sweep(&s, &common.out_dir, common.plots)?;
            out(&pipeline::sweep_csv(&rows));
            print_manifest(&m, &common.out_dir);
        }
        Command::Correlate {
            common,
            input,
            duration_ps,
            bin_width_ps,
            max_tau_ps,
            mode,
        } => {
            setup_threads(&common)?;
            let (mut config, chunks) = match &common.config {
                Some(_) => {
                    let s = load(&common)?;
                    (s.correlation, s.chunks)
                }
                None => (CorrelationConfig::full(100, 20_000), 16),
            };
            if let Some(w) = bin_width_ps {
                config.bin_width_ps = w;
            }
            if let Some(t) = max_tau_ps {
                config.max_tau_ps = t;
            }
            if let Some(m) = mode {
                config.mode = match m {
                    Mode::Full => CorrelationMode::FullCrossCorrelation,
                    Mode::StartStop => CorrelationMode::StartStop,
                };
            }
            config.validate().map_err(|e| ConfigError::field("correlation", e))?;
            let (a, b) = pipeline::streams_from_file(&input, duration_ps)?;
            let m = pipeline::write_correlation(&a, &b, &config, chunks, &common.out_dir, &input)?;
            print_manifest(&m, &common.out_dir);
        }
        Command::Fit {
            common,
            input,
            model,
            rep_period_ps,
            snr,
            noise_rel,
        } => {
            let (peaks, scenario_bg) = match &common.config {
                Some(_) => {
                    let s = load(&common)?;
                    (s.analysis.normalization_peaks, Some(s.background))
                }
                None => (DEFAULT_NORMALIZATION_PEAKS, None),
            };
            let bg = match snr {
                Some(v) => BackgroundModel::from_snr(v).map_err(|e| ConfigError::field("--snr", e))?,
                None => scenario_bg.unwrap_or_else(BackgroundModel::none),
            };
            let target = match model {
                Model::G2Cw => FitTarget::G2Cw,
                Model::Pulsed => FitTarget::Pulsed {
                    rep_period_ps: rep_period_ps
                        .ok_or_else(|| ConfigError::field("--rep-period-ps", "required for the pulsed model"))?,
                },
                Model::Lifetime => FitTarget::Lifetime,
                Model::Lorentzian => FitTarget::Lorentzian { noise_rel },
            };
            let report = pipeline::fit_file(&input, target, peaks, &bg)?;
            out(&report.to_text());
            let m = pipeline::write_fit_report(&report, &common.out_dir, &input)?;
            print_manifest(&m, &common.out_dir);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
