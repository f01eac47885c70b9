//! Hanbury Brown-Twiss detection: a 50/50 beamsplitter followed by two
//! imperfect single-photon detectors.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::seed::{derive_seed, rng_from_seed};
use crate::sim::EmissionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    A = 0,
    B = 1,
}

impl Channel {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Channel::A),
            1 => Some(Channel::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub jitter_sigma_ps: f64,
    pub dead_time_ps: u64,
    /// Dark counts per second.
    pub dark_rate: f64,
}

impl Default for DetectorParams {
    /// Silicon avalanche photodiode: 30% efficiency, 500 ps FWHM jitter,
    /// 50 ns dead time, 200 dark counts/s.
    fn default() -> Self {
        Self {
            efficiency: 0.30,
            jitter_sigma_ps: 212.0,
            dead_time_ps: 50_000,
            dark_rate: 200.0,
        }
    }
}

impl DetectorParams {
    /// Perfect detector: every photon registered at its true time.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            jitter_sigma_ps: 0.0,
            dead_time_ps: 0,
            dark_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(format!("efficiency {} outside [0, 1]", self.efficiency));
        }
        if !(self.jitter_sigma_ps >= 0.0 && self.jitter_sigma_ps.is_finite()) {
            return Err(format!("jitter sigma {} must be non-negative", self.jitter_sigma_ps));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(format!("dark rate {} must be non-negative", self.dark_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub timestamp_ps: u64,
    pub channel: Channel,
}

/// Sorted click times of one detector over an acquisition of `duration_ps`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    pub channel: Channel,
    pub tags: Vec<u64>,
    pub duration_ps: u64,
}

impl TimeTagStream {
    pub fn new(channel: Channel, tags: Vec<u64>, duration_ps: u64) -> Self {
        Self {
            channel,
            tags,
            duration_ps,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.tags.windows(2).all(|w| w[0] <= w[1])
    }

    /// Counts per second.
    pub fn mean_rate(&self) -> f64 {
        if self.duration_ps == 0 {
            return 0.0;
        }
        self.tags.len() as f64 / (self.duration_ps as f64 * 1e-12)
    }

    pub fn to_time_tags(&self) -> impl Iterator<Item = TimeTag> + '_ {
        self.tags.iter().map(move |&t| TimeTag {
            timestamp_ps: t,
            channel: self.channel,
        })
    }
}

/// Merges two single-channel streams into one record list sorted by
/// timestamp, ties broken by channel.
pub fn merge_streams(a: &TimeTagStream, b: &TimeTagStream) -> Vec<TimeTag> {
    let mut out: Vec<TimeTag> = a.to_time_tags().chain(b.to_time_tags()).collect();
    out.sort_unstable();
    out
}

/// Splits merged records back into per-channel streams.
pub fn split_channels(tags: &[TimeTag], duration_ps: u64) -> (TimeTagStream, TimeTagStream) {
    let pick = |c: Channel| {
        tags.iter()
            .filter(|t| t.channel == c)
            .map(|t| t.timestamp_ps)
            .collect::<Vec<_>>()
    };
    (
        TimeTagStream::new(Channel::A, pick(Channel::A), duration_ps),
        TimeTagStream::new(Channel::B, pick(Channel::B), duration_ps),
    )
}

/// Routes each photon to arm A or B with probability 1/2.
pub fn hbt_split(emissions: &[EmissionRecord], seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = rng_from_seed(derive_seed(seed, "hbt-split", 0));
    let mut a = Vec::with_capacity(emissions.len() / 2 + 1);
    let mut b = Vec::with_capacity(emissions.len() / 2 + 1);
    for e in emissions {
        if rng.random::<bool>() {
            a.push(e.time_ps);
        } else {
            b.push(e.time_ps);
        }
    }
    (a, b)
}

/// Homogeneous Poisson arrivals on `[0, duration)`, sorted.
pub fn poisson_arrivals(rate_cps: f64, duration_ps: u64, seed: u64) -> Vec<u64> {
    if rate_cps <= 0.0 {
        return Vec::new();
    }
    let mut rng = rng_from_seed(seed);
    let mean_gap_ps = 1e12 / rate_cps;
    let end = duration_ps as f64;
    let mut out = Vec::with_capacity((end / mean_gap_ps * 1.1) as usize + 16);
    let mut t = 0.0f64;
    loop {
        let gap: f64 = rng.sample(Exp1);
        t += gap * mean_gap_ps;
        if t >= end {
            break;
        }
        out.push(t as u64);
    }
    out
}

/// Turns photon arrival times at one detector into its click stream.
///
/// Stages, in order: Bernoulli loss with `efficiency`; union with Poisson
/// clicks at `dark_rate + background_rate`; Gaussian jitter on every click;
/// re-sort; non-paralyzable dead time; drop clicks outside `[0, duration]`.
/// Each stochastic stage draws from its own generator derived from `seed`.
pub fn detect(
    raw: &[u64],
    params: &DetectorParams,
    background_rate: f64,
    duration_ps: u64,
    seed: u64,
) -> TimeTagStream {
    let mut thin_rng = rng_from_seed(derive_seed(seed, "detect-thin", 0));
    let mut jitter_rng = rng_from_seed(derive_seed(seed, "detect-jitter", 0));

    let mut clicks: Vec<i64> = raw
        .iter()
        .filter(|_| thin_rng.random::<f64>() < params.efficiency)
        .map(|&t| t as i64)
        .collect();

    let noise = poisson_arrivals(
        params.dark_rate + background_rate.max(0.0),
        duration_ps,
        derive_seed(seed, "detect-background", 0),
    );
    let had_noise = !noise.is_empty();
    clicks.extend(noise.into_iter().map(|t| t as i64));

    if params.jitter_sigma_ps > 0.0 {
        for c in clicks.iter_mut() {
            let z: f64 = jitter_rng.sample(StandardNormal);
            *c += (z * params.jitter_sigma_ps).round() as i64;
        }
    }
    if had_noise || params.jitter_sigma_ps > 0.0 {
        clicks.sort_unstable();
    }

    let dead = params.dead_time_ps as i64;
    let mut tags = Vec::with_capacity(clicks.len());
    let mut last: Option<i64> = None;
    for c in clicks {
        if let Some(l) = last {
            if c - l < dead {
                continue;
            }
        }
        last = Some(c);
        if c >= 0 && c <= duration_ps as i64 {
            tags.push(c as u64);
        }
    }
    TimeTagStream::new(Channel::A, tags, duration_ps)
}

/// [`detect`] labelled with an explicit channel.
pub fn detect_channel(
    channel: Channel,
    raw: &[u64],
    params: &DetectorParams,
    background_rate: f64,
    duration_ps: u64,
    seed: u64,
) -> TimeTagStream {
    let mut s = detect(raw, params, background_rate, duration_ps, seed);
    s.channel = channel;
    s
}
