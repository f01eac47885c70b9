//! End-to-end pipelines behind the subcommands.
//!
//! Stage seeds are derived from the master seed by name, so adding a stage
//! never changes the random streams of the others:
//! `emitter`, `hbt_split`, `detect` (index 0 = arm A, 1 = arm B), `spectrum`
//! and `sweep` (index = sweep point, used as that point's master seed).

use std::collections::BTreeMap;
use std::path::Path;

use qdsource::correlator::{
    cross_correlate_chunked, normalize, pulsed_peak_analysis, CoincidenceHistogram, CorrelationConfig,
    CorrelationError, G2Bin, PulsedG2Result,
};
use qdsource::detection::{detect_channel, hbt_split, merge_streams, Channel, TimeTagStream};
use qdsource::fitting::{self, FitData, FitResult, ModelKind};
use qdsource::photophysics::{
    background_correct, lorentzian_response, shg_pump_rate, steady_state_emission_rate, BackgroundModel,
};
use qdsource::seed::{derive_seed, stage_rng};
use qdsource::sim::{
    build_waveform, decay_histogram, simulate_chunked, DecayHistogram, EmissionRecord, PumpDrive, PumpWaveform,
    SimConfig, SimError,
};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::artifacts::{self, Report, Series};
use crate::manifest::{ArtifactWriter, RunManifest};
use crate::scenario::Scenario;
use crate::{timetag, CliError, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub emitter: u64,
    pub hbt_split: u64,
    pub detect_a: u64,
    pub detect_b: u64,
}

impl StageSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            emitter: derive_seed(master, "emitter", 0),
            hbt_split: derive_seed(master, "hbt_split", 0),
            detect_a: derive_seed(master, "detect", 0),
            detect_b: derive_seed(master, "detect", 1),
        }
    }

    fn record(&self, m: &mut RunManifest) {
        m.stage_seeds.insert("emitter".into(), self.emitter);
        m.stage_seeds.insert("hbt_split".into(), self.hbt_split);
        m.stage_seeds.insert("detect_a".into(), self.detect_a);
        m.stage_seeds.insert("detect_b".into(), self.detect_b);
    }
}

/// What a scenario measures, decided by its drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    /// CW antibunching dip.
    CwCorrelation,
    /// Pulsed HBT peak areas.
    PulsedCorrelation,
    /// Decay after short pulses, one detector, no beamsplitter.
    Lifetime,
}

impl Measurement {
    pub fn of(drive: &PumpDrive) -> Self {
        match drive {
            PumpDrive::ContinuousWave { .. } => Self::CwCorrelation,
            PumpDrive::SquareModulated { .. } => Self::PulsedCorrelation,
            PumpDrive::PulseTrain { .. } => Self::Lifetime,
        }
    }
}

/// Detector output of one simulated acquisition.
#[derive(Debug, Clone)]
pub struct Detection {
    pub a: TimeTagStream,
    pub b: TimeTagStream,
    pub emitted: usize,
    /// Background rate added to each arm, counts/s.
    pub background_cps: [f64; 2],
    pub waveform: PumpWaveform,
}

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::EventCapExceeded { cap, reached_ps, .. } => CliError::stage(
            "simulate",
            format!("event cap {cap} reached at {reached_ps} ps; raise sim.max_events or shorten sim.duration_ps"),
        ),
        other => CliError::stage("simulate", other),
    }
}

/// Simulates the emitter and both detector arms.
pub fn simulate_detection(s: &Scenario, seeds: &StageSeeds) -> Result<Detection, CliError> {
    let waveform = build_waveform(&s.drive, &s.cavity, s.laser_lambda_nm).map_err(sim_error)?;
    let config = SimConfig {
        seed: seeds.emitter,
        ..s.sim
    };
    let emissions = simulate_chunked(&s.emitter, &waveform, &config, s.chunks).map_err(sim_error)?;
    let (raw_a, raw_b) = match Measurement::of(&s.drive) {
        Measurement::Lifetime => (emissions.iter().map(|e| e.time_ps).collect(), Vec::new()),
        _ => hbt_split(&emissions, seeds.hbt_split),
    };
    let seconds = s.sim.duration_ps as f64 * 1e-12;
    // background set relative to the detected signal of each arm
    let background = |raw: &[u64], arm: usize| {
        let snr = s.background.snr();
        if snr.is_finite() {
            s.detectors[arm].efficiency * raw.len() as f64 / seconds / snr
        } else {
            0.0
        }
    };
    let background_cps = [background(&raw_a, 0), background(&raw_b, 1)];
    let a = detect_channel(
        Channel::A,
        &raw_a,
        &s.detectors[0],
        background_cps[0],
        s.sim.duration_ps,
        seeds.detect_a,
    );
    let b = detect_channel(
        Channel::B,
        &raw_b,
        &s.detectors[1],
        background_cps[1],
        s.sim.duration_ps,
        seeds.detect_b,
    );
    Ok(Detection {
        a,
        b,
        emitted: emissions.len(),
        background_cps,
        waveform,
    })
}

pub fn correlate(a: &TimeTagStream, b: &TimeTagStream, config: &CorrelationConfig, chunks: usize) -> Result<(CoincidenceHistogram, Vec<G2Bin>), CliError> {
    let hist = cross_correlate_chunked(a, b, config, chunks).map_err(|e| CliError::stage("correlate", e))?;
    let bins = normalize(&hist).map_err(|e| CliError::stage("normalize", e))?;
    Ok((hist, bins))
}

fn require_converged(stage: &'static str, fit: &FitResult) -> Result<(), CliError> {
    if fit.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged {
            stage,
            detail: format!("{} iterations, gradient {:e}", fit.iterations, fit.gradient_norm),
        })
    }
}

fn correct(g2: f64, sigma: f64, bg: &BackgroundModel) -> Result<(f64, f64), CliError> {
    let corrected = background_correct(g2, bg).map_err(|e| CliError::stage("background correction", e))?;
    let rho2 = bg.rho() * bg.rho();
    Ok((corrected, sigma / rho2))
}

/// Fits the CW dip `A[1 − (1 − g0)e^{−|τ|/τ0}]` to raw coincidence counts
/// (x in ns) and corrects the fitted g0 for background.
pub fn analyze_cw(hist: &CoincidenceHistogram, bg: &BackgroundModel) -> Result<Report, CliError> {
    let x = hist.bin_centers_ns();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let data = FitData::counts(x, y).map_err(|e| CliError::stage("cw fit", e))?;
    let guess = fitting::initial_guess(&ModelKind::G2Cw, &data).map_err(|e| CliError::stage("cw fit", e))?;
    let fit = fitting::fit(&guess, &data).map_err(|e| CliError::stage("cw fit", e))?;
    require_converged("cw fit", &fit)?;
    let (g0, g0_sigma) = fit.get("g2_zero").expect("G2Cw has g2_zero");
    let (tau0, tau0_sigma) = fit.get("tau0").expect("G2Cw has tau0");
    let (corrected, corrected_sigma) = correct(g0, g0_sigma, bg)?;
    let accidental = hist.accidental_level();
    let mut r = Report::new("CW second-order correlation", Some(fit.clone()));
    r.push("g2_raw", g0, Some(g0_sigma), "");
    r.push("g2_corrected", corrected, Some(corrected_sigma), "");
    r.push("tau0_ns", tau0, Some(tau0_sigma), "ns");
    if accidental > 0.0 {
        r.push("baseline_over_accidentals", fit.value("amplitude") / accidental, None, "");
    }
    r.push("signal_fraction_rho", bg.rho(), None, "");
    Ok(r)
}

pub fn analyze_pulsed(
    hist: &CoincidenceHistogram,
    rep_period_ps: f64,
    normalization_peaks: std::ops::RangeInclusive<u32>,
    bg: &BackgroundModel,
) -> Result<(Report, PulsedG2Result), CliError> {
    let res = pulsed_peak_analysis(hist, rep_period_ps, normalization_peaks.clone()).map_err(|e| match e {
        CorrelationError::NonConvergence { iterations } => CliError::NotConverged {
            stage: "pulsed peak fit",
            detail: format!("{iterations} iterations"),
        },
        other => CliError::stage("pulsed peak fit", other),
    })?;
    let (corrected, corrected_sigma) = correct(res.g2_zero, res.g2_zero_sigma, bg)?;
    let mut r = Report::new("Pulsed second-order correlation (peak areas)", Some(res.fit.clone()));
    r.push("g2_raw", res.g2_zero, Some(res.g2_zero_sigma), "");
    r.push("g2_corrected", corrected, Some(corrected_sigma), "");
    r.push("peak_decay_rate_ns_inv", res.decay_rate, Some(res.decay_rate_sigma), "ns⁻¹");
    r.push("valley_ratio", res.valley_ratio, None, "");
    r.push("signal_fraction_rho", bg.rho(), None, "");
    for p in &res.peak_areas {
        r.push(&format!("peak_area_{}", p.index).replace('-', "m"), p.area, Some(p.sigma), "counts");
    }
    r.flag("overlapping_peaks", res.overlapping_peaks);
    r.flag(
        "normalization_peaks",
        format!("{}..={}", normalization_peaks.start(), normalization_peaks.end()),
    );
    Ok((r, res))
}

/// Fits `offset + A e^{−t/τ}` to the decay histogram from its maximum on.
pub fn analyze_lifetime(decay: &DecayHistogram) -> Result<(Report, FitResult), CliError> {
    let peak = decay
        .counts
        .iter()
        .enumerate()
        .max_by_key(|(i, &c)| (c, std::cmp::Reverse(*i)))
        .map_or(0, |(i, _)| i);
    // skip the bin containing the excitation edge
    let start = peak + 1;
    let half = decay.bin_ps as f64 / 2000.0;
    let x: Vec<f64> = decay.bin_starts_ns()[start..].iter().map(|t| t + half).collect();
    let y: Vec<f64> = decay.counts[start..].iter().map(|&c| c as f64).collect();
    let data = FitData::counts(x, y).map_err(|e| CliError::stage("lifetime fit", e))?;
    let guess = fitting::initial_guess(&ModelKind::MonoExp, &data).map_err(|e| CliError::stage("lifetime fit", e))?;
    let fit = fitting::fit(&guess, &data).map_err(|e| CliError::stage("lifetime fit", e))?;
    require_converged("lifetime fit", &fit)?;
    let (tau, sigma) = fit.get("tau").expect("MonoExp has tau");
    let mut r = Report::new("Radiative lifetime", Some(fit.clone()));
    r.push("tau_ns", tau, Some(sigma), "ns");
    r.push("detected_events", decay.total() as f64, None, "counts");
    Ok((r, fit))
}

pub fn decay_of(stream: &TimeTagStream, waveform: &PumpWaveform, bin_ps: u64) -> Result<DecayHistogram, CliError> {
    let records: Vec<EmissionRecord> = stream.tags.iter().map(|&t| EmissionRecord::radiative(t)).collect();
    decay_histogram(&records, waveform, bin_ps).map_err(|e| CliError::stage("decay histogram", e))
}

/// Result of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: Report,
    pub detection_counts: [usize; 2],
}

impl RunOutcome {
    /// Rows of the console summary table.
    pub fn summary_rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![("scenario".to_string(), self.manifest.scenario.clone())];
        for key in ["g2_raw", "g2_corrected", "tau0_ns", "tau_ns", "q_factor"] {
            if let Some(v) = self.report.results.iter().find(|r| r.key == key) {
                let text = match v.sigma {
                    Some(s) => format!("{:.4} ± {:.4}", v.value, s),
                    None => format!("{:.4}", v.value),
                };
                rows.push((key.to_string(), text));
            }
        }
        for (k, v) in &self.report.flags {
            rows.push((k.clone(), v.clone()));
        }
        rows
    }
}

pub fn format_table(rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
}

fn write_report(w: &mut ArtifactWriter, report: &Report) -> Result<(), CliError> {
    w.write("report.txt", report.to_text().as_bytes())?;
    w.write("report.kv", report.to_key_values().as_bytes())?;
    Ok(())
}

fn fit_curve(fit: &FitResult, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&t| fit.model.eval(t)).collect()
}

/// Full pipeline for one scenario. Artifacts are written only after every
/// stage has succeeded.
pub fn run_scenario(s: &Scenario, out_dir: &Path, force_plots: bool) -> Result<RunOutcome, CliError> {
    let seeds = StageSeeds::from_master(s.sim.seed);
    let det = simulate_detection(s, &seeds)?;
    let plots = s.outputs.plots || force_plots;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let report = match Measurement::of(&s.drive) {
        Measurement::Lifetime => {
            let decay = decay_of(&det.a, &det.waveform, s.analysis.decay_bin_ps)?;
            let (report, fit) = analyze_lifetime(&decay)?;
            if s.outputs.histogram {
                let y: Vec<f64> = decay.counts.iter().map(|&c| c as f64).collect();
                files.push(("decay.csv".into(), artifacts::xy_csv("t_ns_left_edge", "counts", &decay.bin_starts_ns(), &y).into_bytes()));
            }
            if plots {
                let x = decay.bin_starts_ns();
                let y: Vec<f64> = decay.counts.iter().map(|&c| c as f64).collect();
                let model = fit_curve(&fit, &x);
                let svg = artifacts::svg_plot(
                    "Decay after excitation",
                    "delay (ns)",
                    "counts",
                    &[
                        Series { x: &x, y: &y, color: "#1f4e9a", step: true },
                        Series { x: &x, y: &model, color: "#c0392b", step: false },
                    ],
                );
                files.push(("decay.svg".into(), svg.into_bytes()));
            }
            report
        }
        m => {
            let (hist, bins) = correlate(&det.a, &det.b, &s.correlation, s.chunks)?;
            let report = if m == Measurement::CwCorrelation {
                analyze_cw(&hist, &s.background)?
            } else {
                let period = s.drive.period_ps().expect("square drive is periodic");
                analyze_pulsed(&hist, period, s.analysis.normalization_peaks.clone(), &s.background)?.0
            };
            if s.outputs.histogram {
                files.push(("histogram.csv".into(), artifacts::histogram_csv(&hist, &bins).into_bytes()));
            }
            if plots {
                let x = hist.bin_centers_ns();
                let y: Vec<f64> = bins.iter().map(|b| b.g2).collect();
                let norm = hist.accidental_level();
                let model: Vec<f64> = report
                    .fit
                    .as_ref()
                    .map(|f| fit_curve(f, &x).into_iter().map(|v| v / norm).collect())
                    .unwrap_or_default();
                let svg = artifacts::svg_plot(
                    "Normalized coincidences",
                    "delay τ (ns)",
                    "g²(τ)",
                    &[
                        Series { x: &x, y: &y, color: "#1f4e9a", step: true },
                        Series { x: &x, y: &model, color: "#c0392b", step: false },
                    ],
                );
                files.push(("histogram.svg".into(), svg.into_bytes()));
            }
            report
        }
    };

    let mut manifest = RunManifest::new("run", &s.name, &s.hash, s.sim.seed);
    seeds.record(&mut manifest);
    for r in &report.results {
        manifest.summary.insert(r.key.clone(), r.value);
    }
    manifest.summary.insert("emitted_photons".into(), det.emitted as f64);
    manifest.summary.insert("detected_a".into(), det.a.len() as f64);
    manifest.summary.insert("detected_b".into(), det.b.len() as f64);
    let mut w = ArtifactWriter::new(out_dir, manifest)?;
    if s.outputs.timetags {
        let tags = merge_streams(&det.a, &det.b);
        let bytes = timetag::encode(&tags).map_err(|e| CliError::stage("write time tags", e))?;
        w.write("timetags.ptag", &bytes)?;
    }
    for (name, bytes) in &files {
        w.write(name, bytes)?;
    }
    if s.outputs.report {
        write_report(&mut w, &report)?;
    }
    Ok(RunOutcome {
        manifest: w.finish()?,
        report,
        detection_counts: [det.a.len(), det.b.len()],
    })
}

/// `simulate` subcommand: time tags only.
pub fn simulate_to_file(s: &Scenario, out_dir: &Path) -> Result<RunManifest, CliError> {
    let seeds = StageSeeds::from_master(s.sim.seed);
    let det = simulate_detection(s, &seeds)?;
    let mut manifest = RunManifest::new("simulate", &s.name, &s.hash, s.sim.seed);
    seeds.record(&mut manifest);
    manifest.summary.insert("emitted_photons".into(), det.emitted as f64);
    manifest.summary.insert("detected_a".into(), det.a.len() as f64);
    manifest.summary.insert("detected_b".into(), det.b.len() as f64);
    manifest.summary.insert("duration_ps".into(), s.sim.duration_ps as f64);
    let tags = merge_streams(&det.a, &det.b);
    let bytes = timetag::encode(&tags).map_err(|e| CliError::stage("write time tags", e))?;
    let mut w = ArtifactWriter::new(out_dir, manifest)?;
    w.write("timetags.ptag", &bytes)?;
    w.finish()
}

/// Splits a merged tag file into arms. Time-tag files carry no acquisition
/// length, so it is passed explicitly or taken as last tag + 1 ps.
pub fn streams_from_file(path: &Path, duration_ps: Option<u64>) -> Result<(TimeTagStream, TimeTagStream), CliError> {
    let tags = timetag::read(path).map_err(|e| match e {
        timetag::TimetagError::Io(source) => CliError::io(path, source),
        other => CliError::stage("read time tags", other),
    })?;
    let last = tags.last().map_or(0, |t| t.timestamp_ps + 1);
    let duration = duration_ps.unwrap_or(last);
    if duration < last {
        return Err(CliError::Config(ConfigError::field(
            "--duration-ps",
            format!("{duration} ps is shorter than the last tag at {} ps", last - 1),
        )));
    }
    Ok(qdsource::detection::split_channels(&tags, duration))
}

/// Rows of the power-sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub laser_power_mw: f64,
    /// `(P·L)²` in mW², proportional to the upconverted power.
    pub upconverted_power_mw2: f64,
    pub pump_rate_ns_inv: f64,
    pub emission_rate_model_cps: f64,
    /// Efficiency-scaled emission plus dark counts, both arms.
    pub expected_detected_cps: f64,
    pub detected_cps: f64,
    pub detected_events: u64,
    pub duration_ps: u64,
}

pub const SWEEP_HEADER: &str = "laser_power_mw,upconverted_power_mw2,pump_rate_ns_inv,emission_rate_model_cps,expected_detected_cps,detected_cps,detected_events,duration_ps";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.laser_power_mw,
            r.upconverted_power_mw2,
            r.pump_rate_ns_inv,
            r.emission_rate_model_cps,
            r.expected_detected_cps,
            r.detected_cps,
            r.detected_events,
            r.duration_ps
        ));
    }
    s
}

/// Count rate against laser power. Each point runs for about
/// `events_per_point` detected events. Background is not applied: it is
/// defined relative to the signal and would hide the power dependence.
pub fn power_sweep(s: &Scenario, powers_mw: &[f64], events_per_point: u64) -> Result<Vec<SweepRow>, CliError> {
    if !matches!(s.drive, PumpDrive::ContinuousWave { .. }) {
        return Err(ConfigError::field("drive.kind", "a power sweep needs a cw drive").into());
    }
    let mut rows = Vec::with_capacity(powers_mw.len());
    for (i, &p) in powers_mw.iter().enumerate() {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(ConfigError::field("sweep.powers_mw", format!("invalid power {p}")).into());
        }
        let coupled = p * lorentzian_response(s.laser_lambda_nm, &s.cavity);
        let rp = shg_pump_rate(p, s.laser_lambda_nm, &s.cavity);
        let emission = steady_state_emission_rate(rp, s.emitter.gamma) * 1e9;
        let expected: f64 = s
            .detectors
            .iter()
            .map(|d| 0.5 * d.efficiency * emission + d.dark_rate)
            .sum();
        let duration_ps = if expected > 0.0 {
            (events_per_point as f64 / expected * 1e12).ceil() as u64
        } else {
            s.sim.duration_ps
        };
        let mut point = s.clone();
        point.drive = PumpDrive::ContinuousWave { power_mw: p };
        point.background = BackgroundModel::none();
        point.sim.duration_ps = duration_ps.max(1);
        point.sim.seed = derive_seed(s.sim.seed, "sweep", i as u64);
        let det = simulate_detection(&point, &StageSeeds::from_master(point.sim.seed))?;
        let events = (det.a.len() + det.b.len()) as u64;
        rows.push(SweepRow {
            laser_power_mw: p,
            upconverted_power_mw2: coupled * coupled,
            pump_rate_ns_inv: rp,
            emission_rate_model_cps: emission,
            expected_detected_cps: expected,
            detected_cps: events as f64 / (point.sim.duration_ps as f64 * 1e-12),
            detected_events: events,
            duration_ps: point.sim.duration_ps,
        });
    }
    Ok(rows)
}

pub fn run_sweep(s: &Scenario, out_dir: &Path, force_plots: bool) -> Result<(RunManifest, Vec<SweepRow>), CliError> {
    let Some(settings) = &s.sweep else {
        return Err(ConfigError::Missing("sweep.powers_mw".into()).into());
    };
    let rows = power_sweep(s, &settings.powers_mw, settings.events_per_point)?;
    let mut manifest = RunManifest::new("sweep", &s.name, &s.hash, s.sim.seed);
    for i in 0..rows.len() {
        manifest
            .stage_seeds
            .insert(format!("sweep_{i}"), derive_seed(s.sim.seed, "sweep", i as u64));
    }
    let mut w = ArtifactWriter::new(out_dir, manifest)?;
    w.write("sweep.csv", sweep_csv(&rows).as_bytes())?;
    if s.outputs.plots || force_plots {
        let x: Vec<f64> = rows.iter().map(|r| r.laser_power_mw).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.detected_cps).collect();
        let e: Vec<f64> = rows.iter().map(|r| r.expected_detected_cps).collect();
        let svg = artifacts::svg_plot(
            "Detected count rate",
            "laser power (mW)",
            "counts/s",
            &[
                Series { x: &x, y: &y, color: "#1f4e9a", step: false },
                Series { x: &x, y: &e, color: "#c0392b", step: false },
            ],
        );
        w.write("sweep.svg", svg.as_bytes())?;
    }
    Ok((w.finish()?, rows))
}

/// Synthetic cavity transmission sweep with multiplicative Gaussian noise.
pub fn synthetic_spectrum(s: &Scenario, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let sp = &s.spectrum;
    let mut rng = stage_rng(seed, "spectrum", 0);
    let step = (sp.stop_nm - sp.start_nm) / (sp.points - 1) as f64;
    let x: Vec<f64> = (0..sp.points).map(|i| sp.start_nm + step * i as f64).collect();
    let y = x
        .iter()
        .map(|&l| {
            let z: f64 = rng.sample(StandardNormal);
            (sp.offset + sp.amplitude * lorentzian_response(l, &s.cavity)) * (1.0 + sp.noise_rel * z)
        })
        .collect();
    (x, y)
}

/// Lorentzian fit of a spectrum; weights assume relative noise `noise_rel`.
pub fn fit_spectrum(x: Vec<f64>, y: Vec<f64>, noise_rel: f64) -> Result<Report, CliError> {
    let data = if noise_rel > 0.0 {
        let w = y.iter().map(|v| 1.0 / (noise_rel * v).powi(2).max(f64::MIN_POSITIVE)).collect();
        FitData::new(x, y, w)
    } else {
        FitData::unweighted(x, y)
    }
    .map_err(|e| CliError::stage("spectrum fit", e))?;
    let guess = fitting::initial_guess(&ModelKind::Lorentzian, &data).map_err(|e| CliError::stage("spectrum fit", e))?;
    let fit = fitting::fit(&guess, &data).map_err(|e| CliError::stage("spectrum fit", e))?;
    require_converged("spectrum fit", &fit)?;
    let (q, q_sigma) = fit.q_factor().expect("Lorentzian fit");
    let mut r = Report::new("Cavity resonance", Some(fit.clone()));
    r.push("center_nm", fit.value("center"), Some(fit.sigma("center")), "nm");
    r.push("fwhm_nm", fit.value("fwhm"), Some(fit.sigma("fwhm")), "nm");
    r.push("q_factor", q, Some(q_sigma), "");
    Ok(r)
}

pub fn run_spectrum(s: &Scenario, out_dir: &Path, force_plots: bool) -> Result<(RunManifest, Report), CliError> {
    let (x, y) = synthetic_spectrum(s, s.sim.seed);
    let report = fit_spectrum(x.clone(), y.clone(), s.spectrum.noise_rel)?;
    let mut manifest = RunManifest::new("spectrum", &s.name, &s.hash, s.sim.seed);
    manifest
        .stage_seeds
        .insert("spectrum".into(), derive_seed(s.sim.seed, "spectrum", 0));
    for r in &report.results {
        manifest.summary.insert(r.key.clone(), r.value);
    }
    let mut w = ArtifactWriter::new(out_dir, manifest)?;
    w.write("spectrum.csv", artifacts::xy_csv("wavelength_nm", "counts", &x, &y).as_bytes())?;
    write_report(&mut w, &report)?;
    if s.outputs.plots || force_plots {
        let model = report.fit.as_ref().map(|f| fit_curve(f, &x)).unwrap_or_default();
        let svg = artifacts::svg_plot(
            "Cavity resonance",
            "wavelength (nm)",
            "counts",
            &[
                Series { x: &x, y: &y, color: "#1f4e9a", step: false },
                Series { x: &x, y: &model, color: "#c0392b", step: false },
            ],
        );
        w.write("spectrum.svg", svg.as_bytes())?;
    }
    Ok((w.finish()?, report))
}

/// Fit models selectable by the `fit` subcommand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitTarget {
    G2Cw,
    Pulsed { rep_period_ps: f64 },
    Lifetime,
    Lorentzian { noise_rel: f64 },
}

/// `fit` subcommand: fits a histogram, decay or spectrum CSV.
pub fn fit_file(
    input: &Path,
    target: FitTarget,
    normalization_peaks: std::ops::RangeInclusive<u32>,
    bg: &BackgroundModel,
) -> Result<Report, CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    match target {
        FitTarget::G2Cw | FitTarget::Pulsed { .. } => {
            let (hist, _) = artifacts::parse_histogram_csv(&text).map_err(|e| CliError::stage("read histogram", e))?;
            match target {
                FitTarget::Pulsed { rep_period_ps } => Ok(analyze_pulsed(&hist, rep_period_ps, normalization_peaks, bg)?.0),
                _ => analyze_cw(&hist, bg),
            }
        }
        FitTarget::Lifetime => {
            let (x, y) = artifacts::parse_xy_csv(&text).map_err(|e| CliError::stage("read decay", e))?;
            if x.len() < 2 {
                return Err(CliError::stage("read decay", "need at least two bins"));
            }
            let bin_ps = ((x[1] - x[0]) * 1000.0).round() as u64;
            let counts = y.iter().map(|&v| v.max(0.0).round() as u64).collect();
            Ok(analyze_lifetime(&DecayHistogram { bin_ps, counts })?.0)
        }
        FitTarget::Lorentzian { noise_rel } => {
            let (x, y) = artifacts::parse_xy_csv(&text).map_err(|e| CliError::stage("read spectrum", e))?;
            fit_spectrum(x, y, noise_rel)
        }
    }
}

pub fn write_fit_report(report: &Report, out_dir: &Path, input: &Path) -> Result<RunManifest, CliError> {
    let bytes = std::fs::read(input).map_err(|e| CliError::io(input, e))?;
    let name = input.file_name().map_or_else(|| "input".into(), |n| n.to_string_lossy().into_owned());
    let mut manifest = RunManifest::new("fit", &name, &crate::manifest::sha256_hex(&bytes), 0);
    for r in &report.results {
        manifest.summary.insert(r.key.clone(), r.value);
    }
    let mut w = ArtifactWriter::new(out_dir, manifest)?;
    write_report(&mut w, report)?;
    w.finish()
}

pub fn write_correlation(
    a: &TimeTagStream,
    b: &TimeTagStream,
    config: &CorrelationConfig,
    chunks: usize,
    out_dir: &Path,
    source: &Path,
) -> Result<RunManifest, CliError> {
    let (hist, bins) = correlate(a, b, config, chunks)?;
    let bytes = std::fs::read(source).map_err(|e| CliError::io(source, e))?;
    let name = source.file_name().map_or_else(|| "input".into(), |n| n.to_string_lossy().into_owned());
    let mut manifest = RunManifest::new("correlate", &name, &crate::manifest::sha256_hex(&bytes), 0);
    manifest.summary = BTreeMap::from([
        ("total_pairs".to_string(), hist.total_pairs as f64),
        ("rate_a_cps".to_string(), hist.rate_a),
        ("rate_b_cps".to_string(), hist.rate_b),
    ]);
    let mut w = ArtifactWriter::new(out_dir, manifest)?;
    w.write("histogram.csv", artifacts::histogram_csv(&hist, &bins).as_bytes())?;
    w.finish()
}
