//! Simulation and analysis toolkit for the quantum noise of a hybrid rf/dc
//! optically pumped magnetometer (hOPM) probed with polarization-squeezed
//! light.
//!
//! The crate generates stochastic spin trajectories from a Bloch equation
//! driven by Bell-Bloom pumping, spin projection noise and the optical
//! Zeeman shift of a squeezed probe, converts them into Faraday-rotation
//! signals, demodulates at the pump frequency, estimates power spectral
//! densities, fits the three-component noise model (flat photon shot noise
//! plus a Lorentzian atomic envelope of spin projection and measurement
//! back-action noise) and converts residual noise into equivalent magnetic
//! noise via responsivity calibration.
//!
//! Modules follow the processing chain:
//! [`probe`] → [`spin`] → [`readout`] → [`spectral`] → [`noise_model`] →
//! [`sensitivity`], with [`analytic`] providing closed-form perturbation
//! oracles and [`pipeline`] orchestrating full experiments from an
//! [`config::ExperimentConfig`].

pub mod analytic;
pub mod config;
pub mod fit;
pub mod noise_model;
pub mod pipeline;
pub mod probe;
pub mod readout;
pub mod report;
pub mod rng;
pub mod sensitivity;
pub mod spectral;
pub mod spin;
pub mod vec3;

pub use config::ExperimentConfig;
pub use noise_model::{decompose_budget, fit_noise_model, model_psd, NoiseBudget};
pub use probe::{make_probe, make_probe_with_antisqueezing, sample_stokes, ProbeParams, StokesSeries};
pub use readout::{calibrate_demod_phase, demodulate, faraday_signal, IQSeries, RawSignal};
pub use sensitivity::{equivalent_noise, responsivity_at_zero, responsivity_spectrum, Channel, MagneticNoiseSpectrum, Responsivity};
pub use spectral::{average_spectra, log_bin, psd, Spectrum, Window};
pub use spin::{simulate, simulate_deterministic, unpolarized_run, FieldConfig, SpinParams, SpinTrajectory};

/// Crate version embedded in every output file header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
