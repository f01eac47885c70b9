//! Text artifacts: histogram CSV, fit reports, sweep/spectrum tables and
//! minimal SVG line charts.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! a file back yields bit-identical values.

use std::fmt::Write as _;

use qdsource::correlator::{CoincidenceHistogram, G2Bin};
use qdsource::fitting::{FitResult, ModelSpec};
use thiserror::Error;

pub const HISTOGRAM_HEADER: &str = "tau_ps_left_edge,counts,g2,g2_err";

#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing header `{0}`")]
    MissingHeader(&'static str),
    #[error("histogram has no bins")]
    Empty,
    #[error("bins are not contiguous at line {0}")]
    Gap(usize),
}

/// Histogram CSV: `#`-prefixed metadata lines, then one row per bin.
pub fn histogram_csv(hist: &CoincidenceHistogram, bins: &[G2Bin]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# bin_width_ps={}", hist.bin_width_ps);
    let _ = writeln!(s, "# duration_ps={}", hist.duration_ps);
    let _ = writeln!(s, "# rate_a_cps={}", hist.rate_a);
    let _ = writeln!(s, "# rate_b_cps={}", hist.rate_b);
    let _ = writeln!(s, "# total_pairs={}", hist.total_pairs);
    s.push_str(HISTOGRAM_HEADER);
    s.push('\n');
    for b in bins {
        let _ = writeln!(s, "{},{},{},{}", b.tau_left_ps, b.counts, b.g2, b.g2_err);
    }
    s
}

fn parse_field<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T, CsvError> {
    value.trim().parse().map_err(|_| CsvError::Parse {
        line,
        message: format!("invalid {what} `{value}`"),
    })
}

/// Parses [`histogram_csv`] output. Metadata lines are optional; without them
/// rates and duration read as zero and the bin width is taken from the rows.
pub fn parse_histogram_csv(text: &str) -> Result<(CoincidenceHistogram, Vec<G2Bin>), CsvError> {
    let mut meta = std::collections::BTreeMap::new();
    let mut bins = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(m) = l.strip_prefix('#') {
            if let Some((k, v)) = m.split_once('=') {
                meta.insert(k.trim().to_string(), (v.trim().to_string(), line));
            }
            continue;
        }
        if !header_seen {
            if l != HISTOGRAM_HEADER {
                return Err(CsvError::MissingHeader(HISTOGRAM_HEADER));
            }
            header_seen = true;
            continue;
        }
        let cols: Vec<&str> = l.split(',').collect();
        if cols.len() != 4 {
            return Err(CsvError::Parse {
                line,
                message: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        bins.push(G2Bin {
            tau_left_ps: parse_field(cols[0], line, "delay")?,
            counts: parse_field(cols[1], line, "count")?,
            g2: parse_field(cols[2], line, "g2")?,
            g2_err: parse_field(cols[3], line, "g2_err")?,
        });
    }
    if !header_seen {
        return Err(CsvError::MissingHeader(HISTOGRAM_HEADER));
    }
    if bins.is_empty() {
        return Err(CsvError::Empty);
    }
    let get = |k: &str| meta.get(k);
    let width = match get("bin_width_ps") {
        Some((v, line)) => parse_field::<u64>(v, *line, "bin width")?,
        None if bins.len() > 1 => (bins[1].tau_left_ps - bins[0].tau_left_ps).max(0) as u64,
        None => return Err(CsvError::MissingHeader("# bin_width_ps")),
    };
    if width == 0 {
        return Err(CsvError::Parse {
            line: 1,
            message: "bin width must be positive".into(),
        });
    }
    for (i, pair) in bins.windows(2).enumerate() {
        if pair[1].tau_left_ps - pair[0].tau_left_ps != width as i64 {
            return Err(CsvError::Gap(i + 2));
        }
    }
    let num = |k: &str| -> Result<f64, CsvError> {
        get(k).map_or(Ok(0.0), |(v, line)| parse_field(v, *line, k))
    };
    let int = |k: &str| -> Result<u64, CsvError> {
        get(k).map_or(Ok(0), |(v, line)| parse_field(v, *line, k))
    };
    let first = bins[0].tau_left_ps;
    let bin_edges = (0..=bins.len() as i64).map(|i| first + i * width as i64).collect();
    let hist = CoincidenceHistogram {
        bin_width_ps: width,
        bin_edges,
        counts: bins.iter().map(|b| b.counts).collect(),
        total_pairs: match get("total_pairs") {
            Some(_) => int("total_pairs")?,
            None => bins.iter().map(|b| b.counts).sum(),
        },
        duration_ps: int("duration_ps")?,
        rate_a: num("rate_a_cps")?,
        rate_b: num("rate_b_cps")?,
    };
    Ok((hist, bins))
}

/// Two-column `x,counts` table, used for decay histograms and spectra.
pub fn xy_csv(x_name: &str, y_name: &str, x: &[f64], y: &[f64]) -> String {
    let mut s = format!("{x_name},{y_name}\n");
    for (a, b) in x.iter().zip(y) {
        let _ = writeln!(s, "{a},{b}");
    }
    s
}

pub fn parse_xy_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>), CsvError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    if lines.next().is_none() {
        return Err(CsvError::Empty);
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, l) in lines {
        let Some((a, b)) = l.split_once(',') else {
            return Err(CsvError::Parse {
                line: i + 1,
                message: "expected 2 columns".into(),
            });
        };
        x.push(parse_field(a, i + 1, "x")?);
        y.push(parse_field(b, i + 1, "y")?);
    }
    if x.is_empty() {
        return Err(CsvError::Empty);
    }
    Ok((x, y))
}

pub fn model_name(model: &ModelSpec) -> &'static str {
    match model {
        ModelSpec::Lorentzian { .. } => "lorentzian",
        ModelSpec::MonoExp { .. } => "mono_exp",
        ModelSpec::G2Cw { .. } => "g2_cw",
        ModelSpec::PeakComb { .. } => "peak_comb",
    }
}

/// One reported quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportValue {
    pub key: String,
    pub value: f64,
    pub sigma: Option<f64>,
    pub unit: &'static str,
}

impl ReportValue {
    pub fn new(key: &str, value: f64, sigma: Option<f64>, unit: &'static str) -> Self {
        Self {
            key: key.into(),
            value,
            sigma,
            unit,
        }
    }
}

/// Fit report rendered both as an aligned table and as `key = value` lines.
#[derive(Debug, Clone)]
pub struct Report {
    pub title: String,
    pub fit: Option<FitResult>,
    pub results: Vec<ReportValue>,
    pub flags: Vec<(String, String)>,
}

pub const UNCERTAINTY_NOTE: &str = "1σ uncertainties from the fit covariance scaled by χ²/dof";

impl Report {
    pub fn new(title: impl Into<String>, fit: Option<FitResult>) -> Self {
        Self {
            title: title.into(),
            fit,
            results: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, value: f64, sigma: Option<f64>, unit: &'static str) {
        self.results.push(ReportValue::new(key, value, sigma, unit));
    }

    pub fn flag(&mut self, key: &str, value: impl ToString) {
        self.flags.push((key.into(), value.to_string()));
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.results.iter().find(|r| r.key == key).map(|r| r.value)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.title);
        if let Some(fit) = &self.fit {
            let _ = writeln!(s, "\nfit model: {}", model_name(&fit.model));
            let _ = writeln!(s, "{:<16} {:>24} {:>24}", "parameter", "value", "sigma");
            for ((name, v), sig) in fit.names.iter().zip(&fit.params).zip(&fit.sigmas) {
                let _ = writeln!(s, "{name:<16} {v:>24.10e} {sig:>24.10e}");
            }
            let _ = writeln!(s, "chi2/dof {:.6} (dof {})", fit.chi2_per_dof, fit.dof);
            let _ = writeln!(s, "converged {} after {} iterations", fit.converged, fit.iterations);
        }
        if !self.results.is_empty() {
            let _ = writeln!(s, "\n{:<24} {:>16} {:>16}  unit", "result", "value", "sigma");
            for r in &self.results {
                let sigma = r.sigma.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(s, "{:<24} {:>16.6} {:>16}  {}", r.key, r.value, sigma, r.unit);
            }
        }
        for (k, v) in &self.flags {
            let _ = writeln!(s, "{k}: {v}");
        }
        let _ = writeln!(s, "\n{UNCERTAINTY_NOTE}");
        s
    }

    /// Machine-readable form; the same flat syntax as scenario files.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "report.title = {}", self.title.replace(['\n', '#', '='], " "));
        if let Some(fit) = &self.fit {
            let _ = writeln!(s, "fit.model = {}", model_name(&fit.model));
            for ((name, v), sig) in fit.names.iter().zip(&fit.params).zip(&fit.sigmas) {
                let key = name.replace(['[', ']'], "_").trim_end_matches('_').replace("-", "m");
                let _ = writeln!(s, "fit.{key}.value = {v}");
                let _ = writeln!(s, "fit.{key}.sigma = {sig}");
            }
            let _ = writeln!(s, "fit.chi2_per_dof = {}", fit.chi2_per_dof);
            let _ = writeln!(s, "fit.dof = {}", fit.dof);
            let _ = writeln!(s, "fit.converged = {}", fit.converged);
            let _ = writeln!(s, "fit.iterations = {}", fit.iterations);
        }
        for r in &self.results {
            let _ = writeln!(s, "result.{} = {}", r.key, r.value);
            if let Some(sig) = r.sigma {
                let _ = writeln!(s, "result.{}_sigma = {}", r.key, sig);
            }
        }
        for (k, v) in &self.flags {
            let _ = writeln!(s, "flag.{k} = {v}");
        }
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A data series for [`svg_plot`].
pub struct Series<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub color: &'static str,
    pub step: bool,
}

/// Minimal hand-written SVG chart with axes, tick labels and one or more
/// polylines.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, m) = (720.0, 440.0, 60.0);
    let finite = |v: &&f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter()).filter(finite);
    let ys = series.iter().flat_map(|s| s.y.iter()).filter(finite);
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(x0 < x1) {
        (x0, x1) = (x0.min(0.0) - 1.0, x1.max(0.0) + 1.0);
    }
    y0 = y0.min(0.0);
    if !(y0 < y1) {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.3}</text>"#,
            px(xv),
            h - m + 18.0,
            xv
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            m - 6.0,
            py(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 16.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for ser in series {
        let mut pts = String::new();
        let pairs: Vec<(f64, f64)> = ser
            .x
            .iter()
            .zip(ser.y)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| (a, b))
            .collect();
        for (i, &(x, y)) in pairs.iter().enumerate() {
            if ser.step && i > 0 {
                let _ = write!(pts, "{:.2},{:.2} ", px(x), py(pairs[i - 1].1));
            }
            let _ = write!(pts, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            pts.trim_end(),
            ser.color
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use qdsource::correlator::{cross_correlate, normalize, CorrelationConfig};
    use qdsource::detection::{Channel, TimeTagStream};

    fn sample() -> (CoincidenceHistogram, Vec<G2Bin>) {
        let a = TimeTagStream::new(Channel::A, vec![100, 5_000, 12_345, 40_000], 50_000);
        let b = TimeTagStream::new(Channel::B, vec![900, 5_100, 13_000, 39_000, 49_999], 50_000);
        let h = cross_correlate(&a, &b, &CorrelationConfig::full(700, 7_000)).unwrap();
        let bins = normalize(&h).unwrap();
        (h, bins)
    }

    #[test]
    fn histogram_round_trip_is_exact() {
        let (h, bins) = sample();
        let text = histogram_csv(&h, &bins);
        assert!(text.lines().any(|l| l == HISTOGRAM_HEADER));
        let (h2, bins2) = parse_histogram_csv(&text).unwrap();
        assert_eq!(h2, h);
        assert_eq!(bins2, bins);
    }

    #[test]
    fn bare_csv_without_metadata() {
        let (h, bins) = sample();
        let text: String = histogram_csv(&h, &bins)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let (h2, _) = parse_histogram_csv(&text).unwrap();
        assert_eq!(h2.counts, h.counts);
        assert_eq!(h2.bin_edges, h.bin_edges);
        assert_eq!(h2.rate_a, 0.0);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_histogram_csv("a,b\n1,2"), Err(CsvError::MissingHeader(_))));
        assert_eq!(parse_histogram_csv(HISTOGRAM_HEADER), Err(CsvError::Empty));
        let text = format!("{HISTOGRAM_HEADER}\n0,1,1,1\n100,x,1,1\n");
        assert!(matches!(parse_histogram_csv(&text), Err(CsvError::Parse { line: 3, .. })));
        let text = format!("{HISTOGRAM_HEADER}\n0,1,1,1\n100,1,1,1\n300,1,1,1\n");
        assert_eq!(parse_histogram_csv(&text), Err(CsvError::Gap(3)));
    }

    #[test]
    fn xy_round_trip() {
        let x = vec![0.1, 0.2, 1.0 / 3.0];
        let y = vec![5.0, 7.25, 1e-300];
        let (x2, y2) = parse_xy_csv(&xy_csv("t_ns", "counts", &x, &y)).unwrap();
        assert_eq!((x2, y2), (x, y));
    }

    #[test]
    fn key_values_parse_as_config() {
        let mut r = Report::new("test report", None);
        r.push("g2_raw", 0.43, Some(0.04), "");
        r.flag("overlapping_peaks", true);
        let c: crate::config::ConfigFile = r.to_key_values().parse().unwrap();
        assert_eq!(c.f64("result.g2_raw").unwrap(), 0.43);
        assert_eq!(c.f64("result.g2_raw_sigma").unwrap(), 0.04);
        assert_eq!(c.opt_bool("flag.overlapping_peaks").unwrap(), Some(true));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 0.5, f64::NAN];
        let svg = svg_plot("a < b", "x", "y", &[Series { x: &x, y: &y, color: "black", step: true }]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("<polyline"));
    }
}
