//! Correlator checks against a brute-force pair enumeration and symmetry laws.

use proptest::prelude::*;
use qdsource::correlator::{
    cross_correlate, cross_correlate_chunked, normalize, CorrelationConfig, CorrelationMode,
};
use qdsource::detection::{poisson_arrivals, Channel, TimeTagStream};

/// O(N·M) reference: every pair with delay in [−W, W), floor-binned with
/// τ = 0 on an edge.
fn brute_force(a: &[u64], b: &[u64], width: u64, window: u64) -> Vec<u64> {
    let half = window.div_ceil(width) as i64;
    let mut counts = vec![0u64; 2 * half as usize];
    for &ta in a {
        for &tb in b {
            let d = tb as i64 - ta as i64;
            if d >= -(window as i64) && d < window as i64 {
                let k = d.div_euclid(width as i64) + half;
                counts[k as usize] += 1;
            }
        }
    }
    counts
}

fn stream(channel: Channel, mut tags: Vec<u64>, duration: u64) -> TimeTagStream {
    tags.sort_unstable();
    TimeTagStream::new(channel, tags, duration)
}

fn tags(max_len: usize, parity: u64) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..500_000, 0..max_len).prop_map(move |v| v.into_iter().map(|t| 2 * t + parity).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn full_mode_equals_brute_force(
        a in prop::collection::vec(0u64..200_000, 0..300),
        b in prop::collection::vec(0u64..200_000, 0..300),
        width in 1u64..5_000,
        window in 1u64..60_000,
    ) {
        let window = window + width;
        let (sa, sb) = (stream(Channel::A, a, 200_000), stream(Channel::B, b, 200_000));
        let h = cross_correlate(&sa, &sb, &CorrelationConfig::full(width, window)).unwrap();
        let expected = brute_force(&sa.tags, &sb.tags, width, window);
        prop_assert_eq!(&h.counts, &expected);
        prop_assert_eq!(h.total_pairs, expected.iter().sum::<u64>());
    }

    #[test]
    fn swapping_arms_mirrors_the_histogram(
        a in tags(300, 0),
        b in tags(300, 1),
        width in 1u64..2_500,
        window in 1u64..30_000,
    ) {
        // even A, odd B, even Δ and W: no delay falls on a bin edge
        let (width, window) = (2 * width, 2 * (window + width));
        let (sa, sb) = (stream(Channel::A, a, 1_000_001), stream(Channel::B, b, 1_000_001));
        let cfg = CorrelationConfig::full(width, window);
        let ab = cross_correlate(&sa, &sb, &cfg).unwrap();
        let ba = cross_correlate(&sb, &sa, &cfg).unwrap();
        prop_assert_eq!(ab.reversed().counts, ba.counts);
    }

    #[test]
    fn finer_bins_sum_to_coarser(
        a in prop::collection::vec(0u64..200_000, 0..300),
        b in prop::collection::vec(0u64..200_000, 0..300),
        width in 1u64..2_000,
        factor in 1usize..6,
        half_coarse in 1u64..10,
    ) {
        let coarse_width = width * factor as u64;
        let window = half_coarse * coarse_width;
        let (sa, sb) = (stream(Channel::A, a, 200_000), stream(Channel::B, b, 200_000));
        let fine = cross_correlate(&sa, &sb, &CorrelationConfig::full(width, window)).unwrap();
        let coarse = cross_correlate(&sa, &sb, &CorrelationConfig::full(coarse_width, window)).unwrap();
        let summed: Vec<u64> = fine.counts.chunks(factor).map(|c| c.iter().sum()).collect();
        prop_assert_eq!(&summed, &coarse.counts);
        prop_assert_eq!(fine.rebin(factor).unwrap().counts, coarse.counts);
    }

    #[test]
    fn chunked_is_identical(
        a in prop::collection::vec(0u64..200_000, 0..400),
        b in prop::collection::vec(0u64..200_000, 0..400),
        width in 1u64..3_000,
        window in 1u64..40_000,
        chunks in 1usize..17,
        start_stop in any::<bool>(),
    ) {
        let window = window + width;
        let (sa, sb) = (stream(Channel::A, a, 200_000), stream(Channel::B, b, 200_000));
        let mut cfg = CorrelationConfig::full(width, window);
        if start_stop {
            cfg.mode = CorrelationMode::StartStop;
        }
        let serial = cross_correlate(&sa, &sb, &cfg).unwrap();
        let parallel = cross_correlate_chunked(&sa, &sb, &cfg, chunks).unwrap();
        prop_assert_eq!(serial, parallel);
    }

    #[test]
    fn start_stop_never_exceeds_full(
        a in prop::collection::vec(0u64..200_000, 0..300),
        b in prop::collection::vec(0u64..200_000, 0..300),
        width in 1u64..3_000,
        window in 1u64..40_000,
    ) {
        let window = window + width;
        let (sa, sb) = (stream(Channel::A, a, 200_000), stream(Channel::B, b, 200_000));
        let full = cross_correlate(&sa, &sb, &CorrelationConfig::full(width, window)).unwrap();
        let mut cfg = CorrelationConfig::full(width, window);
        cfg.mode = CorrelationMode::StartStop;
        let ss = cross_correlate(&sa, &sb, &cfg).unwrap();
        for (s, f) in ss.counts.iter().zip(&full.counts) {
            prop_assert!(s <= f);
        }
    }
}

#[test]
fn poisson_arms_give_flat_unit_g2() {
    let duration = 2_000_000_000_000u64; // 2 s
    let rate = 2.0e5;
    let a = stream(Channel::A, poisson_arrivals(rate, duration, 11), duration);
    let b = stream(Channel::B, poisson_arrivals(rate, duration, 12), duration);
    let h = cross_correlate(&a, &b, &CorrelationConfig::full(1_000, 50_000)).unwrap();
    let g = normalize(&h).unwrap();
    let mu = h.accidental_level();
    assert!(mu > 50.0, "{mu}");
    let mut outside = 0;
    let mut chi2 = 0.0;
    for bin in &g {
        let z = (bin.counts as f64 - mu) / mu.sqrt();
        chi2 += z * z;
        if z.abs() > 3.0 {
            outside += 1;
        }
    }
    // at most ~0.27 % beyond 3σ; allow one stray bin of the hundred
    assert!(outside <= 1, "{outside} bins beyond 3σ");
    let dof = g.len() as f64;
    assert!((chi2 - dof).abs() < 5.0 * (2.0 * dof).sqrt(), "χ² = {chi2}");
    let mean_g2 = g.iter().map(|b| b.g2).sum::<f64>() / g.len() as f64;
    assert!((mean_g2 - 1.0).abs() < 0.02, "{mean_g2}");
}

#[test]
fn start_stop_matches_full_at_low_rate() {
    // rate·W = 1e5 s⁻¹ × 100 ns = 0.01, 10⁶ tags per arm
    let duration = 10_000_000_000_000u64;
    let rate = 1.0e5;
    let a = stream(Channel::A, poisson_arrivals(rate, duration, 21), duration);
    let b = stream(Channel::B, poisson_arrivals(rate, duration, 22), duration);
    assert!(a.len() > 990_000 && b.len() > 990_000);
    let full = cross_correlate(&a, &b, &CorrelationConfig::full(10_000, 100_000)).unwrap();
    let mut cfg = CorrelationConfig::full(10_000, 100_000);
    cfg.mode = CorrelationMode::StartStop;
    let ss = cross_correlate(&a, &b, &cfg).unwrap();
    let half = full.counts.len() / 2;
    assert!(ss.counts[..half].iter().all(|&c| c == 0));
    for (k, (&f, &s)) in full.counts[half..].iter().zip(&ss.counts[half..]).enumerate() {
        assert!(f > 500, "bin {k}: {f}");
        let rel = (f - s) as f64 / f as f64;
        assert!(rel < 0.02, "bin {k}: full {f}, start-stop {s}");
    }
}
