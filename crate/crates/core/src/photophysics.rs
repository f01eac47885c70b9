//! Closed-form physical models: cavity response, second-harmonic pump rate,
//! two-level steady state, the CW intensity-correlation model and the
//! arithmetic for mixing in (or removing) uncorrelated background.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(
        "measured g2 {measured} is below the background floor {floor}; \
         background estimate too large for the observed antibunching"
    )]
    InconsistentBackground { measured: f64, floor: f64 },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> PhysicsError {
    PhysicsError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Cavity mode used for resonant frequency doubling of the telecom pump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    pub lambda_c_nm: f64,
    pub q_factor: f64,
    /// Scalar conversion gain `k`, ns⁻¹·mW⁻².
    pub shg_coefficient: f64,
}

impl CavityParams {
    pub fn new(lambda_c_nm: f64, q_factor: f64, shg_coefficient: f64) -> Result<Self, PhysicsError> {
        let c = Self {
            lambda_c_nm,
            q_factor,
            shg_coefficient,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.lambda_c_nm > 0.0 && self.lambda_c_nm.is_finite()) {
            return Err(invalid("lambda_c", "must be positive"));
        }
        if !(self.q_factor > 0.0 && self.q_factor.is_finite()) {
            return Err(invalid("q_factor", "must be positive"));
        }
        if !(self.shg_coefficient >= 0.0 && self.shg_coefficient.is_finite()) {
            return Err(invalid("shg_coefficient", "must be non-negative"));
        }
        Ok(())
    }

    /// Full width at half maximum, `λ_c / Q`.
    pub fn fwhm_nm(&self) -> f64 {
        self.lambda_c_nm / self.q_factor
    }
}

/// Quantum-dot transition rates, all in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterParams {
    /// Spontaneous emission rate Γ.
    pub gamma: f64,
    /// Excited → dark rate; 0 disables the dark state.
    pub shelving_rate: f64,
    /// Dark → ground rate.
    pub recovery_rate: f64,
}

impl EmitterParams {
    pub fn two_level(gamma: f64) -> Self {
        Self {
            gamma,
            shelving_rate: 0.0,
            recovery_rate: 0.0,
        }
    }

    /// Synthetic blinking preset that produces adjacent-pulse suppression.
    /// The rates are illustrative, not measured.
    pub fn with_shelving_preset(gamma: f64) -> Self {
        Self {
            gamma,
            shelving_rate: 0.01 * gamma,
            recovery_rate: 0.002,
        }
    }

    pub fn lifetime_ns(&self) -> f64 {
        1.0 / self.gamma
    }

    pub fn has_shelving(&self) -> bool {
        self.shelving_rate > 0.0
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", "must be positive"));
        }
        if !(self.shelving_rate >= 0.0 && self.shelving_rate.is_finite()) {
            return Err(invalid("shelving_rate", "must be non-negative"));
        }
        if self.shelving_rate > 0.0 && !(self.recovery_rate > 0.0 && self.recovery_rate.is_finite()) {
            return Err(invalid(
                "recovery_rate",
                "must be positive when shelving is enabled",
            ));
        }
        if self.recovery_rate < 0.0 {
            return Err(invalid("recovery_rate", "must be non-negative"));
        }
        Ok(())
    }
}

/// `A·[1 − (1 − g²(0))·exp(−|τ|/τ₀)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2CwModel {
    pub amplitude: f64,
    pub g2_zero: f64,
    pub tau0_ns: f64,
}

impl G2CwModel {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if !(self.amplitude > 0.0) {
            return Err(invalid("amplitude", "must be positive"));
        }
        if !(self.g2_zero >= 0.0) {
            return Err(invalid("g2_zero", "must be non-negative"));
        }
        if !(self.tau0_ns > 0.0) {
            return Err(invalid("tau0", "must be positive"));
        }
        Ok(())
    }

    /// Correlation time for a two-level emitter, `1/τ₀ = Γ + r_p`.
    pub fn tau0_for(gamma: f64, pump_rate: f64) -> f64 {
        1.0 / (gamma + pump_rate)
    }
}

/// Uncorrelated background expressed as a signal-to-background rate ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundModel {
    snr: f64,
}

impl BackgroundModel {
    /// `snr` may be `f64::INFINITY` for a background-free measurement.
    pub fn from_snr(snr: f64) -> Result<Self, PhysicsError> {
        if !(snr > 0.0) {
            return Err(invalid("snr", "must be positive"));
        }
        Ok(Self { snr })
    }

    pub fn none() -> Self {
        Self { snr: f64::INFINITY }
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    /// Signal fraction of all counts, `S/(S+B)`.
    pub fn rho(&self) -> f64 {
        if self.snr.is_infinite() {
            1.0
        } else {
            self.snr / (self.snr + 1.0)
        }
    }

    /// g² floor reachable with a perfect single-photon signal, `1 − ρ²`.
    pub fn floor(&self) -> f64 {
        let rho = self.rho();
        1.0 - rho * rho
    }
}

/// Normalized cavity response `1 / (1 + 4Q²(λ/λ_c − 1)²)`.
pub fn lorentzian_response(lambda_nm: f64, cavity: &CavityParams) -> f64 {
    let detuning = (lambda_nm - cavity.lambda_c_nm) / cavity.lambda_c_nm;
    let q = cavity.q_factor;
    1.0 / (1.0 + 4.0 * q * q * detuning * detuning)
}

/// Excitation rate from the intracavity second harmonic, `k·(P·L(λ))²` in ns⁻¹.
pub fn shg_pump_rate(power_mw: f64, lambda_nm: f64, cavity: &CavityParams) -> f64 {
    let coupled = power_mw * lorentzian_response(lambda_nm, cavity);
    cavity.shg_coefficient * coupled * coupled
}

/// Photon emission rate of a two-level emitter under incoherent pumping.
pub fn steady_state_emission_rate(pump_rate: f64, gamma: f64) -> f64 {
    if pump_rate <= 0.0 {
        return 0.0;
    }
    gamma * pump_rate / (gamma + pump_rate)
}

pub fn g2_cw_model(tau_ns: f64, model: &G2CwModel) -> f64 {
    if tau_ns == 0.0 {
        return model.amplitude * model.g2_zero;
    }
    model.amplitude * (1.0 - (1.0 - model.g2_zero) * (-tau_ns.abs() / model.tau0_ns).exp())
}

/// g² that would be measured when a signal with `g2_signal` is diluted by
/// Poissonian background: `1 − ρ²(1 − g)`.
pub fn background_mix(g2_signal: f64, bg: &BackgroundModel) -> f64 {
    let rho = bg.rho();
    if rho == 1.0 {
        return g2_signal;
    }
    1.0 - rho * rho * (1.0 - g2_signal)
}

/// Inverse of [`background_mix`]: `(g_meas − (1 − ρ²)) / ρ²`.
pub fn background_correct(g2_measured: f64, bg: &BackgroundModel) -> Result<f64, PhysicsError> {
    let rho2 = bg.rho() * bg.rho();
    if rho2 == 1.0 {
        return Ok(g2_measured);
    }
    let floor = 1.0 - rho2;
    if g2_measured < floor {
        return Err(PhysicsError::InconsistentBackground {
            measured: g2_measured,
            floor,
        });
    }
    Ok((g2_measured - floor) / rho2)
}
