//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails. Tolerances are fixed here.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use qdsource::correlator::{cross_correlate, cross_correlate_chunked, CorrelationConfig, CorrelationMode};
use qdsource::detection::{hbt_split, poisson_arrivals, Channel, TimeTagStream};
use qdsource::fitting::{self, FitData, ModelKind};
use qdsource::photophysics::{background_correct, BackgroundModel, EmitterParams};
use qdsource::seed::{derive_seed, stage_rng};
use qdsource::sim::{simulate_chunked, PumpWaveform, SimConfig};
use qdsource_cli::artifacts::Report;
use qdsource_cli::pipeline;
use qdsource_cli::Scenario;
use rand::Rng;

type Outcome = Result<String, String>;

fn scenario(name: &str) -> Result<Scenario, String> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "scenarios", name].iter().collect();
    Scenario::load(&path, None).map_err(|e| e.to_string())
}

fn run(name: &str) -> Result<Report, String> {
    let s = scenario(name)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline::run_scenario(&s, dir.path(), false)
        .map(|o| o.report)
        .map_err(|e| e.to_string())
}

fn value(r: &Report, key: &str) -> Result<f64, String> {
    r.value(key).ok_or_else(|| format!("report has no {key}"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn background_arithmetic() -> Outcome {
    let bg = BackgroundModel::from_snr(10.0).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (measured, expected) in [(0.43, 0.310), (0.49, 0.383), (0.40, 0.274)] {
        let c = background_correct(measured, &bg).map_err(|e| e.to_string())?;
        ok &= (c - expected).abs() <= 0.001;
        parts.push(format!("{measured}→{c:.4}"));
    }
    check(ok, parts.join(", "))
}

/// Bin average of `1 − e^{−k|τ|}` over `[a, b)`, both on one side of zero.
fn dip_bin_average(k: f64, a: f64, b: f64) -> f64 {
    let (lo, hi) = if a >= 0.0 { (a, b) } else { (-b, -a) };
    1.0 - ((-k * lo).exp() - (-k * hi).exp()) / (k * (hi - lo))
}

fn cw_oracle() -> Outcome {
    let gamma = 1.0 / 2.4;
    let rp = 0.04;
    let waveform = PumpWaveform::constant(rp).map_err(|e| e.to_string())?;
    let duration = 20_000_000_000;
    let config = SimConfig {
        duration_ps: duration,
        seed: 11,
        max_events: usize::MAX,
    };
    let emissions =
        simulate_chunked(&EmitterParams::two_level(gamma), &waveform, &config, 16).map_err(|e| e.to_string())?;
    let (a, b) = hbt_split(&emissions, derive_seed(11, "hbt_split", 0));
    let (a, b) = (TimeTagStream::new(Channel::A, a, duration), TimeTagStream::new(Channel::B, b, duration));
    let hist = cross_correlate_chunked(&a, &b, &CorrelationConfig::full(200, 20_000), 16).map_err(|e| e.to_string())?;

    let k = gamma + rp;
    let level = hist.accidental_level();
    let chi2: f64 = hist
        .counts
        .iter()
        .zip(hist.bin_edges.windows(2))
        .map(|(&c, e)| {
            let expected = level * dip_bin_average(k, e[0] as f64 * 1e-3, e[1] as f64 * 1e-3);
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    let chi2_dof = chi2 / hist.len() as f64;

    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let data = FitData::counts(hist.bin_centers_ns(), y).map_err(|e| e.to_string())?;
    let guess = fitting::initial_guess(&ModelKind::G2Cw, &data).map_err(|e| e.to_string())?;
    let fit = fitting::fit(&guess, &data).map_err(|e| e.to_string())?;
    let (tau0, sigma) = fit.get("tau0").ok_or("no tau0")?;
    let (rate, rate_sigma) = (1.0 / tau0, sigma / (tau0 * tau0));
    let z = (rate - k).abs() / rate_sigma;
    check(
        hist.total_pairs >= 100_000 && hist.len() >= 100 && chi2_dof < 1.5 && fit.converged && z <= 3.0,
        format!(
            "pairs {}, bins {}, χ²/dof {chi2_dof:.3}, 1/τ0 = {rate:.4} ± {rate_sigma:.4} vs {k:.4} ({z:.2}σ)",
            hist.total_pairs,
            hist.len()
        ),
    )
}

fn cw_fig2() -> Outcome {
    let r = run("cw_fig2.cfg")?;
    let (raw, corr, tau0) = (value(&r, "g2_raw")?, value(&r, "g2_corrected")?, value(&r, "tau0_ns")?);
    check(
        (0.33..=0.53).contains(&raw) && (0.24..=0.38).contains(&corr) && (1.9..=2.7).contains(&tau0),
        format!("raw {raw:.3}, corrected {corr:.3}, τ0 {tau0:.3} ns"),
    )
}

fn lifetime() -> Outcome {
    let r = run("lifetime_80mhz.cfg")?;
    let (tau, events) = (value(&r, "tau_ns")?, value(&r, "detected_events")?);
    check(
        (2.3..=2.5).contains(&tau) && events >= 1e5,
        format!("τ {tau:.3} ns from {events} events"),
    )
}

fn pulsed_100() -> Outcome {
    let r = run("pulsed_100mhz.cfg")?;
    let (raw, corr) = (value(&r, "g2_raw")?, value(&r, "g2_corrected")?);
    check(
        (0.38..=0.59).contains(&raw) && raw < 0.5 && (corr - 0.38).abs() <= 0.10,
        format!("raw {raw:.3}, corrected {corr:.3}"),
    )
}

fn pulsed_300() -> Outcome {
    let r = run("pulsed_300mhz.cfg")?;
    let raw = value(&r, "g2_raw")?;
    let overlap = r.flags.iter().any(|(k, v)| k == "overlapping_peaks" && v == "true");
    check(
        (0.28..=0.52).contains(&raw) && overlap,
        format!("raw {raw:.3}, overlapping_peaks {overlap}"),
    )
}

fn q_recovery() -> Outcome {
    let s = Scenario::parse(
        "sim.seed = 7\nsim.duration_ps = 1\nemitter.gamma_ns_inv = 0.41667\n\
         cavity.lambda_c_nm = 1500\ncavity.q_factor = 7000\ncavity.shg_coefficient_ns_inv_per_mw2 = 0.3\n\
         drive.kind = cw\ndrive.power_mw = 1\nspectrum.noise_rel = 0.01\n",
        "q",
        None,
    )
    .map_err(|e| e.to_string())?;
    let mut within = 0;
    for i in 0..100 {
        let (x, y) = pipeline::synthetic_spectrum(&s, derive_seed(7, "q-replicate", i));
        let q = pipeline::fit_spectrum(x, y, 0.01)
            .ok()
            .and_then(|r| r.value("q_factor"));
        if q.is_some_and(|q| (q / 7000.0 - 1.0).abs() <= 0.02) {
            within += 1;
        }
    }
    check(within >= 95, format!("{within}/100 replicates within 2%"))
}

fn brute_force(a: &[u64], b: &[u64], width: u64, window: u64) -> Vec<u64> {
    let half = window.div_ceil(width) as i64;
    let mut counts = vec![0u64; 2 * half as usize];
    for &ta in a {
        for &tb in b {
            let d = tb as i64 - ta as i64;
            if d >= -(window as i64) && d < window as i64 {
                counts[(d.div_euclid(width as i64) + half) as usize] += 1;
            }
        }
    }
    counts
}

fn correlator_exactness() -> Outcome {
    let mut rng = stage_rng(8, "acceptance-streams", 0);
    for case in 0..100 {
        let duration = rng.random_range(1_000..2_000_000u64);
        let mut draw = |n: usize| {
            let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..duration)).collect();
            v.sort_unstable();
            v
        };
        let (na, nb) = (case * 10 % 1001, (case * 37 + 5) % 1001);
        let (ta, tb) = (draw(na), draw(nb));
        let width = rng.random_range(1..5_000u64);
        let window = width + rng.random_range(0..100_000u64);
        let a = TimeTagStream::new(Channel::A, ta, duration);
        let b = TimeTagStream::new(Channel::B, tb, duration);
        let config = CorrelationConfig::full(width, window);
        let serial = cross_correlate(&a, &b, &config).map_err(|e| e.to_string())?;
        if serial.counts != brute_force(&a.tags, &b.tags, width, window) {
            return Err(format!("case {case}: full mode differs from brute force"));
        }
        let chunks = rng.random_range(1..40usize);
        for mode in [CorrelationMode::FullCrossCorrelation, CorrelationMode::StartStop] {
            let config = CorrelationConfig { mode, ..config };
            let one = cross_correlate(&a, &b, &config).map_err(|e| e.to_string())?;
            let many = cross_correlate_chunked(&a, &b, &config, chunks).map_err(|e| e.to_string())?;
            if one != many {
                return Err(format!("case {case}: {chunks} chunks differ from serial ({mode:?})"));
            }
        }
    }
    Ok("100 streams: brute force and chunked results identical".into())
}

fn sweep_linearity() -> Outcome {
    let s = scenario("cw_sweep.cfg")?;
    let sweep = s.sweep.clone().ok_or("cw_sweep.cfg has no sweep")?;
    let gamma = s.emitter.gamma;
    let rows = pipeline::power_sweep(&s, &sweep.powers_mw, 1_000_000).map_err(|e| e.to_string())?;
    let mut ok = rows.len() == 3;
    let mut parts = Vec::new();
    for (row, target) in rows.iter().zip([0.05, 0.5, 5.0]) {
        let ratio = row.pump_rate_ns_inv / gamma;
        let dev = row.detected_cps / row.expected_detected_cps - 1.0;
        ok &= (ratio / target - 1.0).abs() < 1e-4 && dev.abs() < 0.01 && row.detected_events >= 990_000;
        parts.push(format!("r/Γ {ratio:.3}: {:+.3}%", 100.0 * dev));
    }
    check(ok, parts.join(", "))
}

fn throughput() -> Outcome {
    let duration = 100_000_000_000_000; // 100 s at 1e5 cps
    let a = TimeTagStream::new(Channel::A, poisson_arrivals(1e5, duration, 101), duration);
    let b = TimeTagStream::new(Channel::B, poisson_arrivals(1e5, duration, 102), duration);
    let start = Instant::now();
    let h = cross_correlate(&a, &b, &CorrelationConfig::full(100, 100_000)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        secs < 10.0 && a.len() >= 9_990_000 && b.len() >= 9_990_000,
        format!("{} × {} tags, {} pairs in {secs:.2} s", a.len(), b.len(), h.total_pairs),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("background-correction arithmetic", background_arithmetic),
        ("CW analytic oracle", cw_oracle),
        ("CW reference scenario", cw_fig2),
        ("lifetime", lifetime),
        ("pulsed 100 MHz / 20 %", pulsed_100),
        ("pulsed 300 MHz / 50 %", pulsed_300),
        ("cavity Q recovery", q_recovery),
        ("correlator exactness", correlator_exactness),
        ("saturation linearity", sweep_linearity),
        ("correlator throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2}: {tag} {name} — {detail} [{secs:.1} s]", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
