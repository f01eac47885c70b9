//! Weighted nonlinear least squares.
//!
//! The engine is a damped Gauss-Newton (Levenberg) iteration on the normal
//! equations with analytic Jacobians. Parameters that must stay positive
//! (widths, lifetimes, decay rates) are optimized as their logarithm and
//! transformed back, together with their covariance, when reporting.
//!
//! Four models are provided: a Lorentzian line, a monoexponential decay, the
//! CW antibunching dip and a comb of two-sided exponential peaks with a shared
//! decay rate for pulsed correlation histograms.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("x, y and weight lengths differ ({0}, {1}, {2})")]
    LengthMismatch(usize, usize, usize),
    #[error("{samples} samples cannot constrain {params} parameters")]
    TooFewSamples { samples: usize, params: usize },
    #[error("weight {index} is {value}; weights must be positive and finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("normal matrix is singular")]
    Singular,
}

/// Samples `(x, y, w)`; the objective is `Σ w (y − f(x))²`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
}

impl FitData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, w: Vec<f64>) -> Result<Self, FitError> {
        if x.len() != y.len() || x.len() != w.len() {
            return Err(FitError::LengthMismatch(x.len(), y.len(), w.len()));
        }
        if let Some((index, &value)) = w.iter().enumerate().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(FitError::InvalidWeight { index, value });
        }
        Ok(Self { x, y, w })
    }

    /// Count data with Gaussian-approximated Poisson weights `1/max(y, 1)`.
    pub fn counts(x: Vec<f64>, y: Vec<f64>) -> Result<Self, FitError> {
        let w = y.iter().map(|&v| 1.0 / v.max(1.0)).collect();
        Self::new(x, y, w)
    }

    pub fn unweighted(x: Vec<f64>, y: Vec<f64>) -> Result<Self, FitError> {
        let w = vec![1.0; y.len()];
        Self::new(x, y, w)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Which model to guess for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Lorentzian,
    MonoExp,
    G2Cw,
    PeakComb { rep_period_ns: f64, k_min: i32, k_max: i32 },
}

/// A model together with its current parameter values.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// `offset + amplitude / (1 + 4((x − center)/fwhm)²)`
    Lorentzian {
        center: f64,
        fwhm: f64,
        amplitude: f64,
        offset: f64,
    },
    /// `offset + amplitude·exp(−x/tau)`
    MonoExp { amplitude: f64, tau: f64, offset: f64 },
    /// `amplitude·[1 − (1 − g2_zero)·exp(−|x|/tau0)]`
    G2Cw { amplitude: f64, g2_zero: f64, tau0: f64 },
    /// `Σ_k A_k·exp(−shared_decay·|x − k·rep_period|)` for `k_min ≤ k ≤ k_max`.
    /// `rep_period` is fixed.
    PeakComb {
        shared_decay: f64,
        amplitudes: Vec<f64>,
        k_min: i32,
        rep_period: f64,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Lorentzian { .. } => ModelKind::Lorentzian,
            ModelSpec::MonoExp { .. } => ModelKind::MonoExp,
            ModelSpec::G2Cw { .. } => ModelKind::G2Cw,
            ModelSpec::PeakComb {
                amplitudes,
                k_min,
                rep_period,
                ..
            } => ModelKind::PeakComb {
                rep_period_ns: *rep_period,
                k_min: *k_min,
                k_max: k_min + amplitudes.len() as i32 - 1,
            },
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            ModelSpec::Lorentzian {
                center,
                fwhm,
                amplitude,
                offset,
            } => vec![*center, *fwhm, *amplitude, *offset],
            ModelSpec::MonoExp { amplitude, tau, offset } => vec![*amplitude, *tau, *offset],
            ModelSpec::G2Cw {
                amplitude,
                g2_zero,
                tau0,
            } => vec![*amplitude, *g2_zero, *tau0],
            ModelSpec::PeakComb {
                shared_decay,
                amplitudes,
                ..
            } => std::iter::once(*shared_decay).chain(amplitudes.iter().copied()).collect(),
        }
    }

    /// Same model with new parameter values (in [`Self::params`] order).
    pub fn with_params(&self, p: &[f64]) -> Self {
        match self {
            ModelSpec::Lorentzian { .. } => ModelSpec::Lorentzian {
                center: p[0],
                fwhm: p[1],
                amplitude: p[2],
                offset: p[3],
            },
            ModelSpec::MonoExp { .. } => ModelSpec::MonoExp {
                amplitude: p[0],
                tau: p[1],
                offset: p[2],
            },
            ModelSpec::G2Cw { .. } => ModelSpec::G2Cw {
                amplitude: p[0],
                g2_zero: p[1],
                tau0: p[2],
            },
            ModelSpec::PeakComb { k_min, rep_period, .. } => ModelSpec::PeakComb {
                shared_decay: p[0],
                amplitudes: p[1..].to_vec(),
                k_min: *k_min,
                rep_period: *rep_period,
            },
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            ModelSpec::Lorentzian { .. } => ["center", "fwhm", "amplitude", "offset"].map(String::from).to_vec(),
            ModelSpec::MonoExp { .. } => ["amplitude", "tau", "offset"].map(String::from).to_vec(),
            ModelSpec::G2Cw { .. } => ["amplitude", "g2_zero", "tau0"].map(String::from).to_vec(),
            ModelSpec::PeakComb { amplitudes, k_min, .. } => std::iter::once("shared_decay".to_string())
                .chain((0..amplitudes.len()).map(|i| format!("amplitude[{}]", k_min + i as i32)))
                .collect(),
        }
    }

    /// Parameters optimized in log space.
    pub fn positive_mask(&self) -> Vec<bool> {
        match self {
            ModelSpec::Lorentzian { .. } => vec![false, true, false, false],
            ModelSpec::MonoExp { .. } => vec![false, true, false],
            ModelSpec::G2Cw { .. } => vec![false, false, true],
            ModelSpec::PeakComb { amplitudes, .. } => {
                let mut m = vec![false; amplitudes.len() + 1];
                m[0] = true;
                m
            }
        }
    }

    /// Parameters that scale linearly with the data (the rest are shape).
    pub fn amplitude_mask(&self) -> Vec<bool> {
        match self {
            ModelSpec::Lorentzian { .. } => vec![false, false, true, true],
            ModelSpec::MonoExp { .. } => vec![true, false, true],
            ModelSpec::G2Cw { .. } => vec![true, false, false],
            ModelSpec::PeakComb { amplitudes, .. } => {
                let mut m = vec![true; amplitudes.len() + 1];
                m[0] = false;
                m
            }
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidModel(m.to_string()));
        for (v, positive) in self.params().iter().zip(self.positive_mask()) {
            if !v.is_finite() {
                return bad("non-finite parameter");
            }
            if positive && *v <= 0.0 {
                return bad("width, lifetime and decay parameters must be positive");
            }
        }
        if let ModelSpec::PeakComb {
            amplitudes, rep_period, ..
        } = self
        {
            if amplitudes.is_empty() {
                return bad("peak comb needs at least one peak");
            }
            if !(*rep_period > 0.0) {
                return bad("repetition period must be positive");
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ModelSpec::Lorentzian {
                center,
                fwhm,
                amplitude,
                offset,
            } => {
                let u = 2.0 * (x - center) / fwhm;
                offset + amplitude / (1.0 + u * u)
            }
            ModelSpec::MonoExp { amplitude, tau, offset } => offset + amplitude * (-x / tau).exp(),
            ModelSpec::G2Cw {
                amplitude,
                g2_zero,
                tau0,
            } => amplitude * (1.0 - (1.0 - g2_zero) * (-x.abs() / tau0).exp()),
            ModelSpec::PeakComb {
                shared_decay,
                ref amplitudes,
                k_min,
                rep_period,
            } => amplitudes
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let c = (k_min + i as i32) as f64 * rep_period;
                    a * (-shared_decay * (x - c).abs()).exp()
                })
                .sum(),
        }
    }

    /// `∂f/∂p` at `x`, written into `out` (length = number of parameters).
    pub fn gradient(&self, x: f64, out: &mut [f64]) {
        match *self {
            ModelSpec::Lorentzian {
                center,
                fwhm,
                amplitude,
                ..
            } => {
                let u = 2.0 * (x - center) / fwhm;
                let d = 1.0 + u * u;
                let shape = 1.0 / d;
                // ∂/∂u of A/(1+u²) = −2Au/(1+u²)²
                let du = -2.0 * amplitude * u / (d * d);
                out[0] = du * (-2.0 / fwhm);
                out[1] = du * (-u / fwhm);
                out[2] = shape;
                out[3] = 1.0;
            }
            ModelSpec::MonoExp { amplitude, tau, .. } => {
                let e = (-x / tau).exp();
                out[0] = e;
                out[1] = amplitude * e * x / (tau * tau);
                out[2] = 1.0;
            }
            ModelSpec::G2Cw {
                amplitude,
                g2_zero,
                tau0,
            } => {
                let ax = x.abs();
                let e = (-ax / tau0).exp();
                out[0] = 1.0 - (1.0 - g2_zero) * e;
                out[1] = amplitude * e;
                out[2] = -amplitude * (1.0 - g2_zero) * e * ax / (tau0 * tau0);
            }
            ModelSpec::PeakComb {
                shared_decay,
                ref amplitudes,
                k_min,
                rep_period,
            } => {
                out[0] = 0.0;
                for (i, a) in amplitudes.iter().enumerate() {
                    let dist = (x - (k_min + i as i32) as f64 * rep_period).abs();
                    let e = (-shared_decay * dist).exp();
                    out[i + 1] = e;
                    out[0] -= a * dist * e;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative parameter-step tolerance.
    pub xtol: f64,
    /// Tolerance on the scaled gradient max-norm `max |gᵢ|/√Nᵢᵢ`, which
    /// does not change when the data are rescaled.
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-8,
            gtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelSpec,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// 1σ, `√diag(covariance)`.
    pub sigmas: Vec<f64>,
    /// Parameter covariance scaled by χ²/dof.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_per_dof: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Scaled gradient max-norm at the returned point, see [`FitOptions::gtol`].
    pub gradient_norm: f64,
}

impl FitResult {
    /// `(value, sigma)` of a named parameter.
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| (self.params[i], self.sigmas[i]))
    }

    pub fn value(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |v| v.0)
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |v| v.1)
    }

    /// Quality factor `center / fwhm` and its 1σ for a Lorentzian fit.
    pub fn q_factor(&self) -> Option<(f64, f64)> {
        let ModelSpec::Lorentzian { center, fwhm, .. } = self.model else {
            return None;
        };
        let q = center / fwhm;
        let (vc, vw, cw) = (self.covariance[(0, 0)], self.covariance[(1, 1)], self.covariance[(0, 1)]);
        let rel = vc / (center * center) + vw / (fwhm * fwhm) - 2.0 * cw / (center * fwhm);
        Some((q, q * rel.max(0.0).sqrt()))
    }
}

fn to_internal(p: &[f64], mask: &[bool]) -> Vec<f64> {
    p.iter().zip(mask).map(|(v, &m)| if m { v.ln() } else { *v }).collect()
}

fn to_external(t: &[f64], mask: &[bool]) -> Vec<f64> {
    t.iter().zip(mask).map(|(v, &m)| if m { v.exp() } else { *v }).collect()
}

struct Linearization {
    chi2: f64,
    normal: DMatrix<f64>,
    gradient: DVector<f64>,
}

fn chi2_at(model: &ModelSpec, data: &FitData) -> f64 {
    data.x
        .iter()
        .zip(&data.y)
        .zip(&data.w)
        .map(|((&x, &y), &w)| {
            let r = y - model.eval(x);
            w * r * r
        })
        .sum()
}

fn linearize(model: &ModelSpec, data: &FitData, mask: &[bool]) -> Linearization {
    let p = model.params();
    let n = p.len();
    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut gradient = DVector::<f64>::zeros(n);
    let mut row = vec![0.0; n];
    let mut chi2 = 0.0;
    for ((&x, &y), &w) in data.x.iter().zip(&data.y).zip(&data.w) {
        let r = y - model.eval(x);
        chi2 += w * r * r;
        model.gradient(x, &mut row);
        for (j, v) in row.iter_mut().enumerate() {
            if mask[j] {
                // ∂f/∂ln p = p ∂f/∂p
                *v *= p[j];
            }
        }
        for i in 0..n {
            let wi = w * row[i];
            if wi == 0.0 {
                continue;
            }
            gradient[i] += wi * r;
            for j in i..n {
                normal[(i, j)] += wi * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            normal[(i, j)] = normal[(j, i)];
        }
    }
    Linearization {
        chi2,
        normal,
        gradient,
    }
}

/// Inverse of a normal matrix, refusing numerically rank-deficient ones.
/// Conditioning is judged on the unit-diagonal (correlation) form so that
/// parameter units do not matter.
fn invert_normal(normal: &DMatrix<f64>) -> Result<DMatrix<f64>, FitError> {
    let n = normal.nrows();
    let scale: Vec<f64> = (0..n).map(|i| normal[(i, i)].sqrt()).collect();
    if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(FitError::Singular);
    }
    let corr = DMatrix::from_fn(n, n, |i, j| normal[(i, j)] / (scale[i] * scale[j]));
    let eig = corr.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if !(min > 1e-13 * max) {
        return Err(FitError::Singular);
    }
    let inv = corr.cholesky().ok_or(FitError::Singular)?.inverse();
    Ok(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (scale[i] * scale[j])))
}

pub fn fit(model: &ModelSpec, data: &FitData) -> Result<FitResult, FitError> {
    fit_with(model, data, &FitOptions::default())
}

/// Minimizes the weighted residual sum of squares starting from `model`.
///
/// A run that exhausts `max_iterations` returns the best point found with
/// `converged = false`.
pub fn fit_with(model: &ModelSpec, data: &FitData, opts: &FitOptions) -> Result<FitResult, FitError> {
    model.validate()?;
    let n_params = model.params().len();
    if data.len() < n_params + 1 {
        return Err(FitError::TooFewSamples {
            samples: data.len(),
            params: n_params,
        });
    }
    let mask = model.positive_mask();
    let mut theta = DVector::from_vec(to_internal(&model.params(), &mask));
    let mut current = model.clone();
    let mut lin = linearize(&current, data, &mask);
    let max_diag = (0..n_params).map(|i| lin.normal[(i, i)]).fold(0.0f64, f64::max);
    let scale_ref = if max_diag > 0.0 { max_diag } else { 1.0 };
    let mut damping = 1e-3 * scale_ref;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if scaled_gradient(&lin) < opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        // damping scaled by each parameter's own curvature (relative to the
        // initial largest), so a stiff parameter cannot freeze the others
        let mut damped = lin.normal.clone();
        for i in 0..n_params {
            let curvature = lin.normal[(i, i)].max(1e-12 * scale_ref);
            damped[(i, i)] += damping * curvature / scale_ref;
        }
        let Some(chol) = damped.cholesky() else {
            damping *= 3.0;
            continue;
        };
        let step = chol.solve(&lin.gradient);
        // per component, so that one large parameter cannot mask the others;
        // a step in a log-space parameter is already relative
        let small_step = step.iter().zip(theta.iter()).zip(&mask).all(|((s, t), &log)| {
            let scale = if log { 1.0 } else { t.abs() + opts.xtol };
            s.abs() <= opts.xtol * scale
        });
        if small_step {
            // the next move is below tolerance; applying it would only add
            // round-off that depends on the scale of the data
            converged = true;
            break;
        }
        let trial_theta = &theta + &step;
        let trial = current.with_params(&to_external(trial_theta.as_slice(), &mask));
        let trial_ok = trial.params().iter().all(|v| v.is_finite());
        let trial_chi2 = if trial_ok { chi2_at(&trial, data) } else { f64::INFINITY };
        if trial_chi2 < lin.chi2 {
            theta = trial_theta;
            current = trial;
            lin = linearize(&current, data, &mask);
            damping = (damping / 3.0).max(f64::MIN_POSITIVE);
        } else {
            damping *= 3.0;
        }
    }

    let dof = data.len() - n_params;
    let chi2_per_dof = lin.chi2 / dof as f64;
    let inverse = invert_normal(&lin.normal)?;
    let params = current.params();
    let jac = DMatrix::from_fn(n_params, n_params, |i, j| {
        if i != j {
            0.0
        } else if mask[i] {
            params[i]
        } else {
            1.0
        }
    });
    let covariance = &jac * inverse * &jac * chi2_per_dof;
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let sigmas = (0..n_params).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names: current.param_names(),
        params,
        sigmas,
        covariance,
        chi2: lin.chi2,
        dof,
        chi2_per_dof,
        converged,
        iterations,
        gradient_norm: scaled_gradient(&lin),
        model: current,
    })
}

fn scaled_gradient(lin: &Linearization) -> f64 {
    lin.gradient
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let n = lin.normal[(i, i)];
            if n > 0.0 {
                g.abs() / n.sqrt()
            } else {
                g.abs()
            }
        })
        .fold(0.0, f64::max)
}

fn check_not_flat(data: &FitData) -> Result<(), FitError> {
    if data.is_empty() {
        return Err(FitError::DegenerateData("no samples".into()));
    }
    let first = data.y[0];
    if data.y.iter().all(|&v| v == first) {
        return Err(FitError::DegenerateData("all y values are equal".into()));
    }
    Ok(())
}

/// Weighted linear least-squares amplitudes of a comb with fixed `decay`,
/// clamped to be non-negative, and the resulting chi-square.
fn comb_amplitudes(decay: f64, centres: &[f64], data: &FitData) -> Option<(Vec<f64>, f64)> {
    let basis = |x: f64| centres.iter().map(move |c| (-decay * (x - c).abs()).exp());
    let m = centres.len();
    let mut normal = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for ((&x, &y), &w) in data.x.iter().zip(&data.y).zip(&data.w) {
        let row: Vec<f64> = basis(x).collect();
        for i in 0..m {
            rhs[i] += w * row[i] * y;
            for j in 0..m {
                normal[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let amps: Vec<f64> = normal.cholesky()?.solve(&rhs).iter().map(|a| a.max(0.0)).collect();
    let chi2 = data
        .x
        .iter()
        .zip(&data.y)
        .zip(&data.w)
        .map(|((&x, &y), &w)| {
            let r = y - basis(x).zip(&amps).map(|(b, a)| b * a).sum::<f64>();
            w * r * r
        })
        .sum();
    Some((amps, chi2))
}

/// Least-squares line `ln y = a + b x` with weights; returns `(a, b)`.
fn log_linear(points: impl Iterator<Item = (f64, f64, f64)>) -> Option<(f64, f64)> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, ly, w) in points {
        sw += w;
        sx += w * x;
        sy += w * ly;
        sxx += w * x * x;
        sxy += w * x * ly;
    }
    let det = sw * sxx - sx * sx;
    if sw <= 0.0 || det.abs() <= f64::EPSILON * sw * sxx {
        return None;
    }
    let b = (sw * sxy - sx * sy) / det;
    Some(((sy - b * sx) / sw, b))
}

/// Data-driven starting point for [`fit`].
pub fn initial_guess(kind: &ModelKind, data: &FitData) -> Result<ModelSpec, FitError> {
    check_not_flat(data)?;
    let (x, y) = (&data.x, &data.y);
    let imax = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = y[imax];
    match *kind {
        ModelKind::Lorentzian => {
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
            let pos = order.iter().position(|&i| i == imax).unwrap();
            let half = ymin + 0.5 * (ymax - ymin);
            let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
                let mut prev = order[pos];
                for k in range {
                    let i = order[k];
                    if y[i] <= half {
                        let t = (y[prev] - half) / (y[prev] - y[i]);
                        return Some(x[prev] + t * (x[i] - x[prev]));
                    }
                    prev = i;
                }
                None
            };
            let right = cross(&mut (pos + 1..order.len()));
            let left = cross(&mut (0..pos).rev());
            let span = x[order[order.len() - 1]] - x[order[0]];
            let fwhm = match (left, right) {
                (Some(l), Some(r)) => r - l,
                (Some(l), None) => 2.0 * (x[imax] - l),
                (None, Some(r)) => 2.0 * (r - x[imax]),
                (None, None) => 0.25 * span,
            };
            let center = x[imax];
            let fwhm = if fwhm > 0.0 { fwhm } else { 0.25 * span.max(f64::MIN_POSITIVE) };
            // with the shape fixed, amplitude and offset are a linear fit
            let shape: Vec<f64> = x
                .iter()
                .map(|&xi| {
                    let u = 2.0 * (xi - center) / fwhm;
                    1.0 / (1.0 + u * u)
                })
                .collect();
            let (mut sw, mut ss, mut sss, mut sy, mut ssy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ((&s, &v), &w) in shape.iter().zip(y).zip(&data.w) {
                sw += w;
                ss += w * s;
                sss += w * s * s;
                sy += w * v;
                ssy += w * s * v;
            }
            let det = sw * sss - ss * ss;
            let (amplitude, offset) = if det > f64::EPSILON * sw * sss {
                let a = (sw * ssy - ss * sy) / det;
                (a, (sy - a * ss) / sw)
            } else {
                (ymax - ymin, ymin)
            };
            Ok(ModelSpec::Lorentzian {
                center,
                fwhm,
                amplitude,
                offset,
            })
        }
        ModelKind::MonoExp => {
            let cut = ymin + 0.1 * (ymax - ymin);
            let (a, b) = log_linear(
                x.iter()
                    .zip(y)
                    .filter(|(_, &v)| v > cut)
                    .map(|(&xi, &v)| (xi, (v - ymin).ln(), v - ymin)),
            )
            .ok_or_else(|| FitError::DegenerateData("not enough positive samples for a decay".into()))?;
            if !(b < 0.0) {
                return Err(FitError::DegenerateData("data do not decay".into()));
            }
            Ok(ModelSpec::MonoExp {
                amplitude: a.exp(),
                tau: -1.0 / b,
                offset: ymin,
            })
        }
        ModelKind::G2Cw => {
            let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tail: Vec<f64> = x
                .iter()
                .zip(y)
                .filter(|(xi, _)| xi.abs() >= 0.75 * xmax)
                .map(|(_, &v)| v)
                .collect();
            let amplitude = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            if !(amplitude > 0.0) {
                return Err(FitError::DegenerateData("no counts at long delays".into()));
            }
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()));
            let near = order.iter().take(2).map(|&i| y[i]).sum::<f64>() / order.len().min(2) as f64;
            let g0 = (near / amplitude).clamp(0.0, 5.0);
            let level = amplitude * (1.0 - (1.0 - g0) / std::f64::consts::E);
            let crossed = |v: f64| if g0 < 1.0 { v >= level } else { v <= level };
            let tau0 = order
                .iter()
                .find(|&&i| crossed(y[i]))
                .map(|&i| x[i].abs())
                .filter(|&t| t > 0.0)
                .unwrap_or(0.1 * xmax);
            Ok(ModelSpec::G2Cw {
                amplitude,
                g2_zero: g0,
                tau0,
            })
        }
        ModelKind::PeakComb {
            rep_period_ns,
            k_min,
            k_max,
        } => {
            if !(rep_period_ns > 0.0) || k_max < k_min {
                return Err(FitError::InvalidModel("peak comb needs a period and a peak range".into()));
            }
            let amplitudes: Vec<f64> = (k_min..=k_max)
                .map(|k| {
                    let c = k as f64 * rep_period_ns;
                    x.iter()
                        .zip(y)
                        .filter(|(xi, _)| (*xi - c).abs() <= 0.25 * rep_period_ns)
                        .map(|(_, &v)| v)
                        .fold(0.0, f64::max)
                })
                .collect();
            // log-slope of the tallest peak over its half-period neighbourhood
            let (best, _) = amplitudes
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &a)| if a > b.1 { (i, a) } else { b });
            let c = (k_min + best as i32) as f64 * rep_period_ns;
            let decay = log_linear(
                x.iter()
                    .zip(y)
                    .filter(|(xi, v)| (*xi - c).abs() < 0.5 * rep_period_ns && **v > 0.0)
                    .map(|(&xi, &v)| ((xi - c).abs(), v.ln(), v)),
            )
            .map(|(_, b)| -b)
            .filter(|d| d.is_finite() && *d > 0.0)
            .unwrap_or(4.0 / rep_period_ns)
            .clamp(0.1 / rep_period_ns, 50.0 / rep_period_ns);
            // For a fixed decay the comb is linear in its amplitudes, so scan the
            // decay and keep the best weighted linear solve. This rescues
            // strongly overlapping combs where peak maxima and slopes mean little.
            let centres: Vec<f64> = (k_min..=k_max).map(|k| k as f64 * rep_period_ns).collect();
            let (decay, amplitudes) = std::iter::once(decay)
                .chain((0..=48).map(|i| 0.1 / rep_period_ns * 500f64.powf(i as f64 / 48.0)))
                .filter_map(|d| comb_amplitudes(d, &centres, data).map(|(amps, chi2)| (chi2, d, amps)))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map_or((decay, amplitudes), |(_, d, a)| (d, a));
            Ok(ModelSpec::PeakComb {
                shared_decay: decay,
                amplitudes,
                k_min,
                rep_period: rep_period_ns,
            })
        }
    }
}

/// Largest disagreement between the analytic Jacobian and central finite
/// differences over `xs`, with one Richardson refinement and the step chosen
/// from a ladder `10⁻¹…10⁻¹⁰·|p|` where neighbouring estimates agree best.
///
/// Each element's deviation is `|analytic − numeric| / max(|analytic|, |numeric|, s)`
/// where `s` is `1e-3` of the largest magnitude in that parameter's column, so
/// that entries which vanish analytically do not divide by zero.
pub fn jacobian_check(model: &ModelSpec, xs: &[f64]) -> f64 {
    let p = model.params();
    let n = p.len();
    let mut analytic = vec![vec![0.0; n]; xs.len()];
    for (row, &x) in analytic.iter_mut().zip(xs) {
        model.gradient(x, row);
    }
    let mut numeric = vec![vec![0.0; n]; xs.len()];
    for j in 0..n {
        let base = if p[j] != 0.0 { p[j].abs() } else { 1.0 };
        let central = |step: f64| {
            let mut plus = p.clone();
            plus[j] += step;
            let mut minus = p.clone();
            minus[j] -= step;
            let (mp, mm) = (model.with_params(&plus), model.with_params(&minus));
            let width = plus[j] - minus[j];
            xs.iter().map(|&x| (mp.eval(x) - mm.eval(x)) / width).collect::<Vec<_>>()
        };
        // Richardson step removes the O(h²) truncation term
        let richardson = |h: f64| {
            let (coarse, fine) = (central(h), central(0.5 * h));
            coarse.into_iter().zip(fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect::<Vec<_>>()
        };
        // Step ladder: keep the estimate that agrees best with its neighbour,
        // balancing truncation against round-off without looking at the
        // analytic answer.
        let ladder: Vec<Vec<f64>> = (1..=10).map(|m| richardson(base * 10f64.powi(-m))).collect();
        let best = ladder
            .windows(2)
            .enumerate()
            .map(|(m, pair)| {
                let spread = pair[0].iter().zip(&pair[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (m, spread)
            })
            .filter(|(_, s)| s.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(ladder.len() - 1, |(m, _)| m + 1);
        for (row, v) in numeric.iter_mut().zip(&ladder[best]) {
            row[j] = *v;
        }
    }
    let mut worst = 0.0f64;
    for j in 0..n {
        let scale = analytic.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
        let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
        for (a, m) in analytic.iter().zip(&numeric) {
            let dev = (a[j] - m[j]).abs() / a[j].abs().max(m[j].abs()).max(floor);
            worst = worst.max(dev);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn sample(model: &ModelSpec, xs: &[f64]) -> FitData {
        let y = xs.iter().map(|&x| model.eval(x)).collect();
        FitData::unweighted(xs.to_vec(), y).unwrap()
    }

    #[test]
    fn exact_guess_is_a_fixed_point() {
        let truth = ModelSpec::Lorentzian {
            center: 1500.0,
            fwhm: 0.2143,
            amplitude: 1.0,
            offset: 0.0,
        };
        let data = sample(&truth, &grid(1499.0, 1501.0, 201));
        let r = fit(&truth, &data).unwrap();
        assert!(r.converged);
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.params, truth.params());
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn monoexp_recovers_from_perturbed_guess() {
        let truth = ModelSpec::MonoExp {
            amplitude: 5000.0,
            tau: 2.4,
            offset: 12.0,
        };
        let data = sample(&truth, &grid(0.0, 12.0, 120));
        for (fa, ft, fo) in [(1.3, 0.7, 1.3), (0.7, 1.3, 0.7), (1.3, 1.3, 0.7)] {
            let guess = ModelSpec::MonoExp {
                amplitude: 5000.0 * fa,
                tau: 2.4 * ft,
                offset: 12.0 * fo,
            };
            let r = fit(&guess, &data).unwrap();
            assert!(r.converged);
            for (got, want) in r.params.iter().zip(truth.params()) {
                assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn too_few_samples_and_bad_weights() {
        let m = ModelSpec::MonoExp {
            amplitude: 1.0,
            tau: 1.0,
            offset: 0.0,
        };
        let d = FitData::unweighted(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.2]).unwrap();
        assert!(matches!(fit(&m, &d), Err(FitError::TooFewSamples { .. })));
        assert!(FitData::new(vec![0.0], vec![1.0], vec![0.0]).is_err());
        assert!(FitData::new(vec![0.0], vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn degenerate_and_singular() {
        let flat = FitData::unweighted(grid(0.0, 1.0, 10), vec![3.0; 10]).unwrap();
        for kind in [ModelKind::Lorentzian, ModelKind::MonoExp, ModelKind::G2Cw] {
            assert!(matches!(initial_guess(&kind, &flat), Err(FitError::DegenerateData(_))));
        }
        // every sample at the same x cannot separate amplitude from offset
        let same_x = FitData::unweighted(vec![1.0; 10], (0..10).map(|i| i as f64).collect()).unwrap();
        let m = ModelSpec::MonoExp {
            amplitude: 1.0,
            tau: 1.0,
            offset: 0.0,
        };
        assert!(matches!(fit(&m, &same_x), Err(FitError::Singular)));
    }

    #[test]
    fn unconverged_is_flagged() {
        let truth = ModelSpec::G2Cw {
            amplitude: 100.0,
            g2_zero: 0.3,
            tau0: 2.0,
        };
        let data = sample(&truth, &grid(-20.0, 20.0, 81));
        let guess = ModelSpec::G2Cw {
            amplitude: 80.0,
            g2_zero: 0.5,
            tau0: 3.0,
        };
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        let r = fit_with(&guess, &data, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn guesses_on_clean_data() {
        let lor = ModelSpec::Lorentzian {
            center: 1500.0,
            fwhm: 0.2143,
            amplitude: 2.0,
            offset: 0.1,
        };
        let g = initial_guess(&ModelKind::Lorentzian, &sample(&lor, &grid(1498.9, 1501.1, 301))).unwrap();
        for (a, b) in g.params().iter().zip(lor.params()) {
            assert!(((a - b) / b).abs() < 0.1, "{a} vs {b}");
        }
        let exp = ModelSpec::MonoExp {
            amplitude: 800.0,
            tau: 2.4,
            offset: 0.0,
        };
        let g = initial_guess(&ModelKind::MonoExp, &sample(&exp, &grid(0.0, 12.0, 200))).unwrap();
        let ModelSpec::MonoExp { tau, .. } = g else { unreachable!() };
        assert!((tau / 2.4 - 1.0).abs() < 0.05, "{tau}");
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let g2 = ModelSpec::G2Cw {
            amplitude: 1000.0,
            g2_zero: 0.43,
            tau0: 2.3,
        };
        assert!(jacobian_check(&g2, &[-5.0, 0.0, 5.0]) < 1e-6);
        let lor = ModelSpec::Lorentzian {
            center: 1500.0,
            fwhm: 0.2143,
            amplitude: 1.0,
            offset: 0.05,
        };
        assert!(jacobian_check(&lor, &[1500.0]) < 1e-6);
        let off = jacobian_check(&lor, &[1499.9, 1500.05, 1500.3]);
        assert!(off < 1e-6, "{off}");
        let comb = ModelSpec::PeakComb {
            shared_decay: 0.45,
            amplitudes: (0..21).map(|i| 100.0 + 7.0 * i as f64).collect(),
            k_min: -10,
            rep_period: 10.0,
        };
        let xs = grid(-104.0, 104.0, 417);
        assert!(jacobian_check(&comb, &xs) < 1e-5);
    }
}
