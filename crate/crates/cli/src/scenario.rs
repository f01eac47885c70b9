//! Scenario files: every key, its unit and its default.
//!
//! | key | unit | default |
//! |-----|------|---------|
//! | `scenario.name` | – | file stem |
//! | `sim.seed` | – | required |
//! | `sim.duration_ps` | ps | required, > 0 |
//! | `sim.max_events` | – | 500000000 |
//! | `sim.chunks` | – | 16 (fixed work split; output does not depend on threads) |
//! | `emitter.gamma_ns_inv` | ns⁻¹ | required |
//! | `emitter.shelving_rate_ns_inv`, `emitter.recovery_rate_ns_inv` | ns⁻¹ | 0 |
//! | `cavity.lambda_c_nm` | nm | required |
//! | `cavity.q_factor` | – | required |
//! | `cavity.shg_coefficient_ns_inv_per_mw2` | ns⁻¹ mW⁻² | required |
//! | `laser.lambda_nm` | nm | `cavity.lambda_c_nm` |
//! | `drive.kind` | `cw` \| `square` \| `pulse_train` | required |
//! | `drive.power_mw` | mW | cw only |
//! | `drive.power_on_mw`, `drive.rep_rate_mhz`, `drive.duty`, `drive.extinction_ratio` | mW, MHz, –, – | square; extinction 100 |
//! | `drive.rep_rate_mhz`, `drive.pulse_width_ps`, `drive.saturation_parameter` | MHz, ps, – | pulse_train |
//! | `detector.efficiency`, `detector.jitter_sigma_ps`, `detector.dead_time_ps`, `detector.dark_rate_cps` | –, ps, ps, s⁻¹ | 0.30, 212, 50000, 200 |
//! | `detector.a.*`, `detector.b.*` | as above | per-arm overrides |
//! | `background.snr` | signal/background | `none` |
//! | `correlation.bin_width_ps`, `correlation.max_tau_ps` | ps | 100, 20000 |
//! | `correlation.mode` | `full` \| `start_stop` | `full` |
//! | `analysis.norm_k_min`, `analysis.norm_k_max` | peak index | 2, 10 |
//! | `analysis.decay_bin_ps` | ps | 50 |
//! | `outputs.timetags`, `outputs.histogram`, `outputs.report`, `outputs.plots` | bool | true, true, true, false |
//! | `sweep.powers_mw` | mW list | – |
//! | `sweep.events_per_point` | – | 1000000 |
//! | `spectrum.start_nm`, `spectrum.stop_nm` | nm | λ_c ∓ 5 FWHM |
//! | `spectrum.points`, `spectrum.noise_rel`, `spectrum.amplitude`, `spectrum.offset` | –, –, counts, counts | 201, 0.01, 1000, 50 |

use std::path::Path;

use qdsource::correlator::{CorrelationConfig, CorrelationMode, DEFAULT_NORMALIZATION_PEAKS};
use qdsource::detection::DetectorParams;
use qdsource::photophysics::{BackgroundModel, CavityParams, EmitterParams};
use qdsource::sim::{PumpDrive, SimConfig, DEFAULT_EXTINCTION_RATIO};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, ConfigFile};

/// Which artifacts a run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outputs {
    pub timetags: bool,
    pub histogram: bool,
    pub report: bool,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub normalization_peaks: std::ops::RangeInclusive<u32>,
    pub decay_bin_ps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub powers_mw: Vec<f64>,
    pub events_per_point: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSettings {
    pub start_nm: f64,
    pub stop_nm: f64,
    pub points: usize,
    pub noise_rel: f64,
    pub amplitude: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub emitter: EmitterParams,
    pub cavity: CavityParams,
    pub laser_lambda_nm: f64,
    pub drive: PumpDrive,
    pub detectors: [DetectorParams; 2],
    pub background: BackgroundModel,
    pub correlation: CorrelationConfig,
    pub sim: SimConfig,
    pub chunks: usize,
    pub analysis: Analysis,
    pub outputs: Outputs,
    pub sweep: Option<SweepSettings>,
    pub spectrum: SpectrumSettings,
    /// SHA-256 of the scenario text, hex.
    pub hash: String,
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::field(key, format!("must be positive, got {v}")))
    }
}

fn detector(c: &ConfigFile, arm: &str, base: &DetectorParams) -> Result<DetectorParams, ConfigError> {
    let key = |name: &str| format!("detector.{arm}.{name}");
    let d = DetectorParams {
        efficiency: c.opt_f64(&key("efficiency"))?.unwrap_or(base.efficiency),
        jitter_sigma_ps: c.opt_f64(&key("jitter_sigma_ps"))?.unwrap_or(base.jitter_sigma_ps),
        dead_time_ps: c.opt_u64(&key("dead_time_ps"))?.unwrap_or(base.dead_time_ps),
        dark_rate: c.opt_f64(&key("dark_rate_cps"))?.unwrap_or(base.dark_rate),
    };
    d.validate().map_err(|m| ConfigError::field(format!("detector.{arm}"), m))?;
    Ok(d)
}

fn drive(c: &ConfigFile) -> Result<PumpDrive, ConfigError> {
    let kind = c.str("drive.kind")?;
    let d = match kind.as_str() {
        "cw" => PumpDrive::ContinuousWave {
            power_mw: c.f64("drive.power_mw")?,
        },
        "square" => PumpDrive::SquareModulated {
            power_on_mw: c.f64("drive.power_on_mw")?,
            rep_rate_mhz: c.f64("drive.rep_rate_mhz")?,
            duty: c.f64("drive.duty")?,
            extinction_ratio: c.opt_f64("drive.extinction_ratio")?.unwrap_or(DEFAULT_EXTINCTION_RATIO),
        },
        "pulse_train" => PumpDrive::PulseTrain {
            rep_rate_mhz: c.f64("drive.rep_rate_mhz")?,
            pulse_width_ps: c.f64("drive.pulse_width_ps")?,
            saturation_parameter: c.f64("drive.saturation_parameter")?,
        },
        other => {
            return Err(ConfigError::Invalid {
                key: "drive.kind".into(),
                line: c.line_of("drive.kind"),
                message: format!("expected cw, square or pulse_train, found `{other}`"),
            })
        }
    };
    d.validate().map_err(|e| ConfigError::field("drive", e))?;
    Ok(d)
}

impl Scenario {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::io(path, e))?;
        let name = path
            .file_stem()
            .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
        Ok(Self::parse(&text, &name, seed_override)?)
    }

    /// Parses scenario text; `default_name` is used when `scenario.name` is absent.
    pub fn parse(text: &str, default_name: &str, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let c: ConfigFile = text.parse()?;
        let name = c.opt_str("scenario.name").unwrap_or_else(|| default_name.into());

        let seed = match seed_override {
            Some(s) => {
                c.opt_u64("sim.seed")?;
                s
            }
            None => c.u64("sim.seed")?,
        };
        let duration_ps = c.u64("sim.duration_ps")?;
        if duration_ps == 0 {
            return Err(ConfigError::field("sim.duration_ps", "must be positive"));
        }
        let sim = SimConfig {
            duration_ps,
            seed,
            max_events: c.opt_u64("sim.max_events")?.unwrap_or(500_000_000) as usize,
        };
        let chunks = c.opt_u64("sim.chunks")?.unwrap_or(16) as usize;
        if chunks == 0 {
            return Err(ConfigError::field("sim.chunks", "must be at least 1"));
        }

        let gamma = c.f64("emitter.gamma_ns_inv")?;
        let emitter = EmitterParams {
            gamma,
            shelving_rate: c.opt_f64("emitter.shelving_rate_ns_inv")?.unwrap_or(0.0),
            recovery_rate: c.opt_f64("emitter.recovery_rate_ns_inv")?.unwrap_or(0.0),
        };
        emitter.validate().map_err(|e| ConfigError::field("emitter", e))?;

        let cavity = CavityParams::new(
            c.f64("cavity.lambda_c_nm")?,
            c.f64("cavity.q_factor")?,
            c.f64("cavity.shg_coefficient_ns_inv_per_mw2")?,
        )
        .map_err(|e| ConfigError::field("cavity", e))?;
        let laser_lambda_nm = positive(
            "laser.lambda_nm",
            c.opt_f64("laser.lambda_nm")?.unwrap_or(cavity.lambda_c_nm),
        )?;
        let drive = drive(&c)?;

        let base = DetectorParams {
            efficiency: c.opt_f64("detector.efficiency")?.unwrap_or(0.30),
            jitter_sigma_ps: c.opt_f64("detector.jitter_sigma_ps")?.unwrap_or(212.0),
            dead_time_ps: c.opt_u64("detector.dead_time_ps")?.unwrap_or(50_000),
            dark_rate: c.opt_f64("detector.dark_rate_cps")?.unwrap_or(200.0),
        };
        base.validate().map_err(|m| ConfigError::field("detector", m))?;
        let detectors = [detector(&c, "a", &base)?, detector(&c, "b", &base)?];

        let background = match c.opt_str("background.snr").as_deref() {
            None | Some("none") => BackgroundModel::none(),
            Some(_) => {
                let snr = c.f64("background.snr")?;
                BackgroundModel::from_snr(snr).map_err(|e| ConfigError::field("background.snr", e))?
            }
        };

        let mode = match c.opt_str("correlation.mode").as_deref() {
            None | Some("full") => CorrelationMode::FullCrossCorrelation,
            Some("start_stop") => CorrelationMode::StartStop,
            Some(other) => {
                return Err(ConfigError::Invalid {
                    key: "correlation.mode".into(),
                    line: c.line_of("correlation.mode"),
                    message: format!("expected full or start_stop, found `{other}`"),
                })
            }
        };
        let correlation = CorrelationConfig {
            bin_width_ps: c.opt_u64("correlation.bin_width_ps")?.unwrap_or(100),
            max_tau_ps: c.opt_u64("correlation.max_tau_ps")?.unwrap_or(20_000),
            mode,
        };
        correlation.validate().map_err(|e| ConfigError::field("correlation", e))?;

        let k_min = c.opt_u64("analysis.norm_k_min")?.unwrap_or(*DEFAULT_NORMALIZATION_PEAKS.start() as u64);
        let k_max = c.opt_u64("analysis.norm_k_max")?.unwrap_or(*DEFAULT_NORMALIZATION_PEAKS.end() as u64);
        if k_min == 0 || k_min > k_max || k_max > u32::MAX as u64 {
            return Err(ConfigError::field(
                "analysis.norm_k_min",
                format!("need 1 ≤ norm_k_min ≤ norm_k_max, got {k_min}..={k_max}"),
            ));
        }
        let decay_bin_ps = c.opt_u64("analysis.decay_bin_ps")?.unwrap_or(50);
        if decay_bin_ps == 0 {
            return Err(ConfigError::field("analysis.decay_bin_ps", "must be positive"));
        }
        let analysis = Analysis {
            normalization_peaks: k_min as u32..=k_max as u32,
            decay_bin_ps,
        };

        let outputs = Outputs {
            timetags: c.opt_bool("outputs.timetags")?.unwrap_or(true),
            histogram: c.opt_bool("outputs.histogram")?.unwrap_or(true),
            report: c.opt_bool("outputs.report")?.unwrap_or(true),
            plots: c.opt_bool("outputs.plots")?.unwrap_or(false),
        };

        let sweep = match c.opt_f64_list("sweep.powers_mw")? {
            None => {
                c.opt_u64("sweep.events_per_point")?;
                None
            }
            Some(powers_mw) => {
                if powers_mw.is_empty() || powers_mw.iter().any(|&p| p < 0.0) {
                    return Err(ConfigError::field("sweep.powers_mw", "powers must be non-negative"));
                }
                let events_per_point = c.opt_u64("sweep.events_per_point")?.unwrap_or(1_000_000);
                if events_per_point == 0 {
                    return Err(ConfigError::field("sweep.events_per_point", "must be positive"));
                }
                Some(SweepSettings {
                    powers_mw,
                    events_per_point,
                })
            }
        };

        let fwhm = cavity.fwhm_nm();
        let spectrum = SpectrumSettings {
            start_nm: c.opt_f64("spectrum.start_nm")?.unwrap_or(cavity.lambda_c_nm - 5.0 * fwhm),
            stop_nm: c.opt_f64("spectrum.stop_nm")?.unwrap_or(cavity.lambda_c_nm + 5.0 * fwhm),
            points: c.opt_u64("spectrum.points")?.unwrap_or(201) as usize,
            noise_rel: c.opt_f64("spectrum.noise_rel")?.unwrap_or(0.01),
            amplitude: c.opt_f64("spectrum.amplitude")?.unwrap_or(1000.0),
            offset: c.opt_f64("spectrum.offset")?.unwrap_or(50.0),
        };
        if !(spectrum.stop_nm > spectrum.start_nm) || spectrum.points < 5 || spectrum.noise_rel < 0.0 {
            return Err(ConfigError::field(
                "spectrum",
                "need start_nm < stop_nm, at least 5 points and noise_rel ≥ 0",
            ));
        }

        c.finish()?;
        Ok(Self {
            name,
            emitter,
            cavity,
            laser_lambda_nm,
            drive,
            detectors,
            background,
            correlation,
            sim,
            chunks,
            analysis,
            outputs,
            sweep,
            spectrum,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }
}
