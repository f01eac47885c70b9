//! Coincidence counting between two detector streams and the pulsed
//! peak-area estimate of g²(0).

use std::ops::RangeInclusive;

use rayon::prelude::*;
use thiserror::Error;

use crate::detection::TimeTagStream;
use crate::fitting::{self, FitData, FitError, FitResult, ModelKind, ModelSpec};

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("invalid correlation config: {0}")]
    InvalidConfig(String),
    #[error("stream {0} is not sorted")]
    Unsorted(&'static str),
    #[error("stream durations differ: {0} ps vs {1} ps")]
    DurationMismatch(u64, u64),
    #[error("cannot normalize: rate_a = {rate_a}, rate_b = {rate_b}, duration = {duration_ps} ps")]
    ZeroRate {
        rate_a: f64,
        rate_b: f64,
        duration_ps: u64,
    },
    #[error("histogram window holds peaks up to |k| = {available}, analysis needs |k| = {needed}")]
    WindowTooSmall { available: i32, needed: i32 },
    #[error("peak fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },
    /// The single-decay comb cannot describe the histogram: the best fit
    /// needs a negative peak.
    #[error("peak {index} has a negative fitted area {area:.3e} ± {sigma:.1e}; the shared-decay peak model does not describe this histogram")]
    NegativeArea { index: i32, area: f64, sigma: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMode {
    /// Every (a, b) pair within the window.
    FullCrossCorrelation,
    /// Each A click paired only with the next B click.
    StartStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelationConfig {
    pub bin_width_ps: u64,
    /// Window half-width W; delays in `[-W, W)` are counted.
    pub max_tau_ps: u64,
    pub mode: CorrelationMode,
}

impl CorrelationConfig {
    pub fn full(bin_width_ps: u64, max_tau_ps: u64) -> Self {
        Self {
            bin_width_ps,
            max_tau_ps,
            mode: CorrelationMode::FullCrossCorrelation,
        }
    }

    pub fn validate(&self) -> Result<(), CorrelationError> {
        if self.bin_width_ps == 0 {
            return Err(CorrelationError::InvalidConfig("bin width must be positive".into()));
        }
        if self.max_tau_ps < self.bin_width_ps {
            return Err(CorrelationError::InvalidConfig(
                "max_tau must be at least one bin width".into(),
            ));
        }
        Ok(())
    }

    /// Bins on each side of τ = 0.
    pub fn half_bins(&self) -> u64 {
        self.max_tau_ps.div_ceil(self.bin_width_ps)
    }
}

/// Coincidence counts binned by delay `t_b − t_a`. τ = 0 is a bin edge.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    pub bin_edges: Vec<i64>,
    pub counts: Vec<u64>,
    pub total_pairs: u64,
    pub duration_ps: u64,
    /// Counts per second in each arm.
    pub rate_a: f64,
    pub rate_b: f64,
}

impl CoincidenceHistogram {
    fn empty(config: &CorrelationConfig, a: &TimeTagStream, b: &TimeTagStream) -> Self {
        let n = config.half_bins() as i64;
        let w = config.bin_width_ps as i64;
        Self {
            bin_width_ps: config.bin_width_ps,
            bin_edges: (-n..=n).map(|i| i * w).collect(),
            counts: vec![0; 2 * n as usize],
            total_pairs: 0,
            duration_ps: a.duration_ps,
            rate_a: a.mean_rate(),
            rate_b: b.mean_rate(),
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_centers_ns(&self) -> Vec<f64> {
        let half = self.bin_width_ps as f64 / 2.0;
        self.bin_edges[..self.counts.len()]
            .iter()
            .map(|&e| (e as f64 + half) * 1e-3)
            .collect()
    }

    /// Expected coincidences per bin for uncorrelated arms.
    pub fn accidental_level(&self) -> f64 {
        self.rate_a * self.rate_b * (self.duration_ps as f64 * 1e-12) * (self.bin_width_ps as f64 * 1e-12)
    }

    /// Histogram mirrored about τ = 0.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.counts.reverse();
        std::mem::swap(&mut out.rate_a, &mut out.rate_b);
        out
    }

    /// Sums groups of `factor` adjacent bins, keeping τ = 0 an edge.
    pub fn rebin(&self, factor: usize) -> Option<Self> {
        let half = self.counts.len() / 2;
        if factor == 0 || half % factor != 0 {
            return None;
        }
        let counts: Vec<u64> = self.counts.chunks(factor).map(|c| c.iter().sum()).collect();
        let bin_edges = self.bin_edges.iter().step_by(factor).copied().collect();
        Some(Self {
            bin_width_ps: self.bin_width_ps * factor as u64,
            bin_edges,
            counts,
            ..self.clone()
        })
    }
}

fn check_inputs(
    a: &TimeTagStream,
    b: &TimeTagStream,
    config: &CorrelationConfig,
) -> Result<(), CorrelationError> {
    config.validate()?;
    if !a.is_sorted() {
        return Err(CorrelationError::Unsorted("a"));
    }
    if !b.is_sorted() {
        return Err(CorrelationError::Unsorted("b"));
    }
    if a.duration_ps != b.duration_ps {
        return Err(CorrelationError::DurationMismatch(a.duration_ps, b.duration_ps));
    }
    Ok(())
}

/// Full-mode accumulation for a contiguous slice of A against all of B.
/// Cost is linear in the tags plus the pairs found.
fn accumulate_full(a: &[u64], b: &[u64], window: u64, width: u64, offset: u64, counts: &mut [u64]) -> u64 {
    let mut lo = match a.first() {
        Some(&first) => b.partition_point(|&t| t.saturating_add(window) < first),
        None => return 0,
    };
    let mut pairs = 0u64;
    for &ta in a {
        while lo < b.len() && b[lo].saturating_add(window) < ta {
            lo += 1;
        }
        let hi_exclusive = ta.saturating_add(window);
        for &tb in &b[lo..] {
            if tb >= hi_exclusive {
                break;
            }
            // tb + offset − ta ≥ offset − window ≥ 0
            let idx = (tb + offset - ta) / width;
            counts[idx as usize] += 1;
            pairs += 1;
        }
    }
    pairs
}

fn accumulate_start_stop(a: &[u64], b: &[u64], window: u64, width: u64, offset: u64, counts: &mut [u64]) -> u64 {
    let mut j = match a.first() {
        Some(&first) => b.partition_point(|&t| t < first),
        None => return 0,
    };
    let mut pairs = 0u64;
    for &ta in a {
        while j < b.len() && b[j] < ta {
            j += 1;
        }
        if j == b.len() {
            break;
        }
        let d = b[j] - ta;
        if d < window {
            counts[((d + offset) / width) as usize] += 1;
            pairs += 1;
        }
    }
    pairs
}

/// Histograms delays `t_b − t_a` in `[-W, W)`.
pub fn cross_correlate(
    a: &TimeTagStream,
    b: &TimeTagStream,
    config: &CorrelationConfig,
) -> Result<CoincidenceHistogram, CorrelationError> {
    check_inputs(a, b, config)?;
    let mut hist = CoincidenceHistogram::empty(config, a, b);
    let offset = config.half_bins() * config.bin_width_ps;
    hist.total_pairs = match config.mode {
        CorrelationMode::FullCrossCorrelation => accumulate_full(
            &a.tags,
            &b.tags,
            config.max_tau_ps,
            config.bin_width_ps,
            offset,
            &mut hist.counts,
        ),
        CorrelationMode::StartStop => accumulate_start_stop(
            &a.tags,
            &b.tags,
            config.max_tau_ps,
            config.bin_width_ps,
            offset,
            &mut hist.counts,
        ),
    };
    Ok(hist)
}

/// [`cross_correlate`] with stream A split into `chunks` contiguous pieces
/// processed in parallel. Output is identical to the serial result.
pub fn cross_correlate_chunked(
    a: &TimeTagStream,
    b: &TimeTagStream,
    config: &CorrelationConfig,
    chunks: usize,
) -> Result<CoincidenceHistogram, CorrelationError> {
    check_inputs(a, b, config)?;
    let mut hist = CoincidenceHistogram::empty(config, a, b);
    let offset = config.half_bins() * config.bin_width_ps;
    let chunk_len = a.tags.len().div_ceil(chunks.max(1)).max(1);
    let nbins = hist.counts.len();
    let partials: Vec<(Vec<u64>, u64)> = a
        .tags
        .par_chunks(chunk_len)
        .map(|part| {
            let mut counts = vec![0u64; nbins];
            let pairs = match config.mode {
                CorrelationMode::FullCrossCorrelation => {
                    accumulate_full(part, &b.tags, config.max_tau_ps, config.bin_width_ps, offset, &mut counts)
                }
                CorrelationMode::StartStop => accumulate_start_stop(
                    part,
                    &b.tags,
                    config.max_tau_ps,
                    config.bin_width_ps,
                    offset,
                    &mut counts,
                ),
            };
            (counts, pairs)
        })
        .collect();
    for (counts, pairs) in partials {
        for (h, c) in hist.counts.iter_mut().zip(counts) {
            *h += c;
        }
        hist.total_pairs += pairs;
    }
    Ok(hist)
}

/// One normalized bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Bin {
    pub tau_left_ps: i64,
    pub counts: u64,
    pub g2: f64,
    pub g2_err: f64,
}

/// 1σ upper limit for a Poisson observation of zero.
pub const ZERO_COUNT_UPPER: f64 = 1.84;

/// Divides each bin by the accidental level `r_a·r_b·T·Δτ`, so that
/// g²(∞) = 1 for uncorrelated arms. Empty bins get an error of 1.84 counts.
pub fn normalize(hist: &CoincidenceHistogram) -> Result<Vec<G2Bin>, CorrelationError> {
    let norm = hist.accidental_level();
    if !(hist.rate_a > 0.0 && hist.rate_b > 0.0 && hist.duration_ps > 0) || !(norm > 0.0) {
        return Err(CorrelationError::ZeroRate {
            rate_a: hist.rate_a,
            rate_b: hist.rate_b,
            duration_ps: hist.duration_ps,
        });
    }
    Ok(hist
        .counts
        .iter()
        .zip(&hist.bin_edges)
        .map(|(&c, &edge)| {
            let err = if c == 0 {
                ZERO_COUNT_UPPER
            } else {
                (c as f64).sqrt()
            };
            G2Bin {
                tau_left_ps: edge,
                counts: c,
                g2: c as f64 / norm,
                g2_err: err / norm,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakArea {
    pub index: i32,
    pub area: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct PulsedG2Result {
    pub peak_areas: Vec<PeakArea>,
    pub g2_zero: f64,
    pub g2_zero_sigma: f64,
    /// Shared peak decay rate, ns⁻¹.
    pub decay_rate: f64,
    pub decay_rate_sigma: f64,
    /// Mean inter-peak valley over mean peak height, from the fitted model.
    pub valley_ratio: f64,
    /// Set when `valley_ratio` exceeds [`OVERLAP_THRESHOLD`].
    pub overlapping_peaks: bool,
    pub fit: FitResult,
}

impl PulsedG2Result {
    pub fn area(&self, k: i32) -> Option<PeakArea> {
        self.peak_areas.iter().copied().find(|p| p.index == k)
    }
}

pub const OVERLAP_THRESHOLD: f64 = 0.2;

/// Default |k| range of the peaks that set the uncorrelated baseline. The
/// peaks next to the centre are excluded because blinking suppresses them.
pub const DEFAULT_NORMALIZATION_PEAKS: RangeInclusive<u32> = 2..=10;

/// Fits every peak in the window jointly as a two-sided exponential with a
/// shared decay rate and returns g²(0) = area₀ / mean(area_k), k in
/// `normalization_peaks` (by |k|).
pub fn pulsed_peak_analysis(
    hist: &CoincidenceHistogram,
    rep_period_ps: f64,
    normalization_peaks: RangeInclusive<u32>,
) -> Result<PulsedG2Result, CorrelationError> {
    if !(rep_period_ps >= 4.0 * hist.bin_width_ps as f64) {
        return Err(CorrelationError::InvalidConfig(format!(
            "repetition period {rep_period_ps} ps is too short for {} ps bins",
            hist.bin_width_ps
        )));
    }
    let (k_lo, k_hi) = (*normalization_peaks.start(), *normalization_peaks.end());
    if k_lo == 0 || k_hi < k_lo {
        return Err(CorrelationError::InvalidConfig(
            "normalization peaks must be a non-empty range of |k| >= 1".into(),
        ));
    }
    let window = -(*hist.bin_edges.first().unwrap_or(&0)) as f64;
    let available = (window / rep_period_ps + 1e-9).floor() as i32;
    if available < k_hi as i32 {
        return Err(CorrelationError::WindowTooSmall {
            available,
            needed: k_hi as i32,
        });
    }
    let period_ns = rep_period_ps * 1e-3;
    let x = hist.bin_centers_ns();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let data = FitData::counts(x, y)?;
    // Peaks centred beyond the window show only their inner tail, and all of
    // them share that shape, so one extra peak per side stands in for them.
    let kind = ModelKind::PeakComb {
        rep_period_ns: period_ns,
        k_min: -available - 1,
        k_max: available + 1,
    };
    let guess = fitting::initial_guess(&kind, &data)?;
    let fit = fitting::fit(&guess, &data)?;
    if !fit.converged {
        return Err(CorrelationError::NonConvergence {
            iterations: fit.iterations,
        });
    }
    let ModelSpec::PeakComb {
        shared_decay,
        ref amplitudes,
        k_min,
        ..
    } = fit.model
    else {
        unreachable!("peak comb fit returns a peak comb model")
    };
    let cov = &fit.covariance;
    let lambda = shared_decay;
    let var_lambda = cov[(0, 0)];

    let peak_areas: Vec<PeakArea> = amplitudes
        .iter()
        .enumerate()
        .map(|(i, &amp)| {
            let p = i + 1;
            let d_amp = 2.0 / lambda;
            let d_lambda = -2.0 * amp / (lambda * lambda);
            let var = d_amp * d_amp * cov[(p, p)] + d_lambda * d_lambda * var_lambda + 2.0 * d_amp * d_lambda * cov[(p, 0)];
            PeakArea {
                index: k_min + i as i32,
                area: 2.0 * amp / lambda,
                sigma: var.max(0.0).sqrt(),
            }
        })
        .filter(|p| p.index.abs() <= available)
        .collect();

    if let Some(p) = peak_areas.iter().find(|p| p.area < 0.0) {
        return Err(CorrelationError::NegativeArea {
            index: p.index,
            area: p.area,
            sigma: p.sigma,
        });
    }

    let norm_idx: Vec<usize> = (0..amplitudes.len())
        .filter(|&i| {
            let k = (k_min + i as i32).unsigned_abs();
            normalization_peaks.contains(&k)
        })
        .collect();
    let centre = (-k_min) as usize;
    let m = norm_idx.iter().map(|&i| amplitudes[i]).sum::<f64>() / norm_idx.len() as f64;
    let g2 = amplitudes[centre] / m;
    // ∂g/∂A₀ = 1/m, ∂g/∂A_k = −g/(n·m); the shared decay rate cancels.
    let mut grad = vec![0.0; fit.params.len()];
    grad[centre + 1] = 1.0 / m;
    for &i in &norm_idx {
        grad[i + 1] -= g2 / (norm_idx.len() as f64 * m);
    }
    let mut var_g2 = 0.0;
    for (i, gi) in grad.iter().enumerate() {
        for (j, gj) in grad.iter().enumerate() {
            var_g2 += gi * gj * cov[(i, j)];
        }
    }

    let model = &fit.model;
    let mut heights = Vec::new();
    let mut valleys = Vec::new();
    for &i in &norm_idx {
        let k = k_min + i as i32;
        heights.push(model.eval(k as f64 * period_ns));
        let next = k + k.signum();
        if normalization_peaks.contains(&next.unsigned_abs()) {
            valleys.push(model.eval((k as f64 + 0.5 * k.signum() as f64) * period_ns));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let valley_ratio = if valleys.is_empty() {
        // a single normalization peak per side: look halfway to the next one
        let k = k_lo as f64;
        model.eval((k + 0.5) * period_ns) / mean(&heights)
    } else {
        mean(&valleys) / mean(&heights)
    };

    Ok(PulsedG2Result {
        peak_areas,
        g2_zero: g2,
        g2_zero_sigma: var_g2.max(0.0).sqrt(),
        decay_rate: lambda,
        decay_rate_sigma: var_lambda.max(0.0).sqrt(),
        valley_ratio,
        overlapping_peaks: valley_ratio > OVERLAP_THRESHOLD,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Channel;

    fn stream(ch: Channel, tags: Vec<u64>, duration: u64) -> TimeTagStream {
        TimeTagStream::new(ch, tags, duration)
    }

    #[test]
    fn single_coincident_tag_lands_right_of_zero() {
        let a = stream(Channel::A, vec![5_000], 10_000);
        let b = stream(Channel::B, vec![5_000], 10_000);
        let h = cross_correlate(&a, &b, &CorrelationConfig::full(100, 1_000)).unwrap();
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.bin_edges.len(), 21);
        assert_eq!(h.total_pairs, 1);
        let bin = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(h.bin_edges[bin], 0);
    }

    #[test]
    fn window_is_half_open() {
        let a = stream(Channel::A, vec![10_000], 20_000);
        let b = stream(Channel::B, vec![9_000, 11_000], 20_000);
        let h = cross_correlate(&a, &b, &CorrelationConfig::full(100, 1_000)).unwrap();
        assert_eq!(h.total_pairs, 1);
        assert_eq!(h.counts[0], 1);
    }

    #[test]
    fn rejects_bad_input() {
        let a = stream(Channel::A, vec![3, 1], 10);
        let b = stream(Channel::B, vec![1], 10);
        let cfg = CorrelationConfig::full(1, 5);
        assert!(matches!(cross_correlate(&a, &b, &cfg), Err(CorrelationError::Unsorted("a"))));
        let a = stream(Channel::A, vec![1], 11);
        assert!(matches!(
            cross_correlate(&a, &b, &cfg),
            Err(CorrelationError::DurationMismatch(11, 10))
        ));
        let a = stream(Channel::A, vec![1], 10);
        assert!(cross_correlate(&a, &b, &CorrelationConfig::full(10, 5)).is_err());
        assert!(cross_correlate(&a, &b, &CorrelationConfig::full(0, 5)).is_err());
    }

    #[test]
    fn start_stop_takes_next_stop_only() {
        let a = stream(Channel::A, vec![100, 150], 10_000);
        let b = stream(Channel::B, vec![120, 130, 400], 10_000);
        let cfg = CorrelationConfig {
            bin_width_ps: 10,
            max_tau_ps: 1_000,
            mode: CorrelationMode::StartStop,
        };
        let h = cross_correlate(&a, &b, &cfg).unwrap();
        assert_eq!(h.total_pairs, 2);
        let offset = 100; // half bins
        assert_eq!(h.counts[offset + 2], 1); // 20 ps
        assert_eq!(h.counts[offset + 25], 1); // 250 ps
    }

    #[test]
    fn normalize_conventions() {
        let a = stream(Channel::A, (0..1000).map(|i| i * 1_000).collect(), 1_000_000);
        let b = stream(Channel::B, (0..1000).map(|i| i * 1_000 + 7).collect(), 1_000_000);
        let h = cross_correlate(&a, &b, &CorrelationConfig::full(100, 500)).unwrap();
        let g = normalize(&h).unwrap();
        let norm = h.accidental_level();
        let zero = g.iter().find(|b| b.counts == 0).unwrap();
        assert_eq!(zero.g2, 0.0);
        assert_eq!(zero.g2_err, ZERO_COUNT_UPPER / norm);
        let full = g.iter().find(|b| b.counts > 0).unwrap();
        assert_eq!(full.g2_err, (full.counts as f64).sqrt() / norm);

        let empty = stream(Channel::B, vec![], 1_000_000);
        let h = cross_correlate(&a, &empty, &CorrelationConfig::full(100, 500)).unwrap();
        assert!(matches!(normalize(&h), Err(CorrelationError::ZeroRate { .. })));
    }

    #[test]
    fn rebin_keeps_zero_edge() {
        let a = stream(Channel::A, vec![1_000, 2_000], 10_000);
        let b = stream(Channel::B, vec![1_050, 1_990], 10_000);
        let h = cross_correlate(&a, &b, &CorrelationConfig::full(10, 1_000)).unwrap();
        let coarse = h.rebin(4).unwrap();
        assert!(coarse.bin_edges.contains(&0));
        assert_eq!(coarse.counts.iter().sum::<u64>(), h.total_pairs);
        assert!(h.rebin(3).is_none());
    }
}
