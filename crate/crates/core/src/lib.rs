//! Simulation and analysis of photon statistics from a quantum dot pumped
//! through cavity-enhanced second-harmonic generation.
//!
//! The crate is organised along the path a photon takes:
//!
//! - [`photophysics`]: closed-form cavity, pump and correlation models.
//! - [`sim`]: exact stochastic sampling of the emitter under a pump waveform.
//! - [`detection`]: beamsplitter, detector efficiency, jitter, dead time and
//!   background counts.
//! - [`correlator`]: coincidence histograms and pulsed peak-area analysis.
//! - [`fitting`]: damped Gauss-Newton least squares and the experiment models.
//!
//! Units are fixed crate-wide: timestamps in picoseconds, rates and lifetimes
//! in ns / ns⁻¹, wavelengths in nm, detector count rates in counts/s.

pub mod correlator;
pub mod detection;
pub mod fitting;
pub mod photophysics;
pub mod seed;
pub mod sim;

pub use correlator::{CoincidenceHistogram, CorrelationConfig, CorrelationMode, PulsedG2Result};
pub use detection::{Channel, DetectorParams, TimeTag, TimeTagStream};
pub use fitting::{FitData, FitResult, ModelKind, ModelSpec};
pub use photophysics::{BackgroundModel, CavityParams, EmitterParams, G2CwModel};
pub use sim::{EmissionRecord, PumpDrive, PumpWaveform, SimConfig};
