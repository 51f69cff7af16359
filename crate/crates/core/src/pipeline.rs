//! Experiment pipelines: simulate → demodulate → spectra → fit →
//! decompose, plus responsivity/sensitivity runs and parameter sweeps.
//!
//! All randomness is addressed by (ensemble, iteration) streams under
//! the master seed, so results are bit-identical regardless of worker
//! count, and probe conditions that differ only in squeezing factors
//! share their underlying noise realizations (paired-seed comparisons).
//! Iterations run in parallel through rayon; spectra are accumulated in
//! iteration order.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::noise_model::{
    decompose_budget, fit_noise_model, Decomposition, EnsembleMode, FitError, FitOptions,
    FitResult, Quadrature,
};
use crate::probe::{ProbeError, ProbeParams};
use crate::readout::{calibrate_demod_phase, demodulate, faraday_signal, ReadoutError};
use crate::sensitivity::{self, Channel, MagneticNoiseSpectrum, Responsivity, SensitivityError};
use crate::spectral::{average_spectra, log_bin, psd, SpectralError, Spectrum};
use crate::spin::{simulate, simulate_deterministic, SpinError};
use crate::rng;

/// Hann whole-record periodograms have correlated neighboring bins; this
/// factor deflates the effective Whittle shape (1 + 2·(4/9 + 1/36)).
pub const HANN_BIN_CORRELATION: f64 = 35.0 / 18.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation: {0}")]
    Spin(#[from] SpinError),
    #[error("probe: {0}")]
    Probe(#[from] ProbeError),
    #[error("readout: {0}")]
    Readout(#[from] ReadoutError),
    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),
    #[error("fit: {0}")]
    Fit(#[from] FitError),
    #[error("sensitivity: {0}")]
    Sensitivity(#[from] SensitivityError),
}

/// Averaged spectra, fits and metadata for one (probe condition,
/// ensemble) cell.
#[derive(Debug, Clone)]
pub struct ConditionResult {
    pub condition: String,
    pub probe: ProbeParams,
    pub ensemble: EnsembleMode,
    pub spectrum_i: Spectrum,
    pub spectrum_q: Spectrum,
    pub logbin_i: Spectrum,
    pub logbin_q: Spectrum,
    pub fit_i: FitResult,
    pub fit_q: FitResult,
    /// Mean demodulated carrier power ⟨I⟩² + ⟨Q⟩² across iterations
    /// (counts²); ~0 for unpolarized runs.
    pub carrier_power: f64,
    pub demod_phase: f64,
    /// Largest |G·F_z| seen across iterations.
    pub max_rotation_rad: f64,
}

/// One polarized/unpolarized decomposition.
#[derive(Debug, Clone)]
pub struct DecompositionRow {
    pub condition: String,
    pub quadrature: Quadrature,
    pub decomposition: Decomposition,
    pub carrier_power: f64,
    /// Realized MBA level per unit carrier power (the quantity obeying
    /// the sin²ψ law).
    pub mba_normalized: f64,
}

/// Everything `run_noise` produces.
#[derive(Debug, Clone)]
pub struct NoiseReport {
    pub config_hash: String,
    pub seed: u64,
    pub conditions: Vec<ConditionResult>,
    pub decompositions: Vec<DecompositionRow>,
}

fn fit_options(cfg: &ExperimentConfig, mode: EnsembleMode) -> FitOptions {
    FitOptions {
        mode,
        f_min: cfg.analysis.fit_f_min_hz,
        f_max: cfg.analysis.fit_f_max_hz,
        mask: cfg.analysis.mask_hz.iter().map(|m| (m[0], m[1])).collect(),
        bin_correlation_factor: HANN_BIN_CORRELATION,
        ..Default::default()
    }
}

/// Demodulation phase for the configured operating point, from one
/// noise-free polarized run; both ensembles of a condition reuse it.
pub fn calibrated_phase(cfg: &ExperimentConfig, probe: &ProbeParams) -> Result<f64, PipelineError> {
    let fields = cfg.field_config();
    let mut params = cfg.spin_params();
    if params.pump_rate == 0.0 {
        // Unpolarized-only configs still need a carrier to calibrate on.
        params.pump_rate = 0.05 * params.relaxation / params.pump_duty;
    }
    let dt = cfg.dt();
    let duration = (cfg.run.settle_s + 10.0 / params.expected_linewidth() + 0.03)
        .max(30.0 * params.pump_period());
    let traj = simulate_deterministic(&fields, &params, probe, duration, dt)?;
    Ok(calibrate_demod_phase(&traj, params.coupling, params.omega_p)?)
}

/// Stream index for one ensemble/iteration pair; probe conditions share
/// streams so squeezing comparisons are paired.
fn iteration_stream(ensemble: EnsembleMode, iteration: u32) -> u64 {
    let ens = match ensemble {
        EnsembleMode::Polarized => 0,
        EnsembleMode::Unpolarized => 1,
    };
    rng::run_stream(ens, iteration)
}

/// Run one (condition, ensemble) cell: seeded iterations in parallel,
/// averaged Hann periodograms of both quadratures, log-binned copies and
/// Whittle fits.
pub fn run_condition(
    cfg: &ExperimentConfig,
    condition: &str,
    ensemble: EnsembleMode,
) -> Result<ConditionResult, PipelineError> {
    cfg.validate()?;
    let probe = cfg.probe_for(condition)?;
    let fields = cfg.field_config();
    let mut params = cfg.spin_params();
    if ensemble == EnsembleMode::Unpolarized {
        params.pump_rate = 0.0;
    }
    let dt = cfg.dt();
    let decim = cfg.analysis.decimation;
    let total = cfg.run.duration_s + cfg.run.settle_s;
    let demod_phase = calibrated_phase(cfg, &probe)?;
    let master = cfg.run.seed;

    let per_iter: Result<Vec<_>, PipelineError> = (0..cfg.run.n_iterations)
        .into_par_iter()
        .map(|it| {
            let stream = iteration_stream(ensemble, it);
            let seed = master ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
            let traj = simulate(&fields, &params, &probe, total, dt, seed)?;
            let mut raw = faraday_signal(&traj, params.coupling)?;
            if let Some(tone) = &cfg.analysis.tech_tone {
                inject_tech_tone(&mut raw.samples, dt, params.omega_p, probe.photon_flux, tone);
            }
            let max_rot = raw.max_rotation_rad;
            let mut iq = demodulate(&raw, params.omega_p, demod_phase, decim)?;
            let skip = (cfg.run.settle_s / iq.dt_out).round() as usize;
            iq.drop_prefix(skip);
            let carrier = iq.mean_i().powi(2) + iq.mean_q().powi(2);
            let spec_i = psd(&iq.i, iq.dt_out)?;
            let spec_q = psd(&iq.q, iq.dt_out)?;
            Ok((spec_i, spec_q, carrier, max_rot))
        })
        .collect();
    let per_iter = per_iter?;

    let spectra_i: Vec<Spectrum> = per_iter.iter().map(|r| r.0.clone()).collect();
    let spectra_q: Vec<Spectrum> = per_iter.iter().map(|r| r.1.clone()).collect();
    let spectrum_i = average_spectra(&spectra_i)?;
    let spectrum_q = average_spectra(&spectra_q)?;
    let carrier_power =
        per_iter.iter().map(|r| r.2).sum::<f64>() / per_iter.len().max(1) as f64;
    let max_rotation_rad = per_iter.iter().map(|r| r.3).fold(0.0, f64::max);

    let opts = fit_options(cfg, ensemble);
    let compat = cfg.compat_hash();
    let mut fit_i = fit_noise_model(&spectrum_i, probe.xi2, probe.xibar2, &opts)?;
    fit_i.budget.quadrature = Quadrature::I;
    fit_i.compat_hash = Some(compat.clone());
    let mut fit_q = fit_noise_model(&spectrum_q, probe.xi2, probe.xibar2, &opts)?;
    fit_q.budget.quadrature = Quadrature::Q;
    fit_q.compat_hash = Some(compat);

    let logbin_i = log_bin(&spectrum_i, cfg.analysis.bins_per_decade)?;
    let logbin_q = log_bin(&spectrum_q, cfg.analysis.bins_per_decade)?;

    Ok(ConditionResult {
        condition: condition.to_string(),
        probe,
        ensemble,
        spectrum_i,
        spectrum_q,
        logbin_i,
        logbin_q,
        fit_i,
        fit_q,
        carrier_power,
        demod_phase,
        max_rotation_rad,
    })
}

/// Single-sideband technical tone at ω_p + 2πf, rotation-equivalent
/// amplitude in rad; shows up near f in both demodulated quadratures.
fn inject_tech_tone(samples: &mut [f64], dt: f64, omega_p: f64, flux: f64, tone: &crate::config::TechTone) {
    let omega = omega_p + 2.0 * std::f64::consts::PI * tone.freq_hz;
    let amp = tone.amplitude_rad * flux * dt;
    for (k, s) in samples.iter_mut().enumerate() {
        *s += amp * (omega * k as f64 * dt).cos();
    }
}

/// Full noise study: every configured probe condition in both ensemble
/// preparations, plus the SPN/MBA decompositions per quadrature.
pub fn run_noise(cfg: &ExperimentConfig) -> Result<NoiseReport, PipelineError> {
    cfg.validate()?;
    let mut conditions = Vec::new();
    for name in &cfg.probe.conditions {
        for ensemble in [EnsembleMode::Polarized, EnsembleMode::Unpolarized] {
            conditions.push(run_condition(cfg, name, ensemble)?);
        }
    }
    let mut decompositions = Vec::new();
    for name in &cfg.probe.conditions {
        let pol = conditions
            .iter()
            .find(|c| &c.condition == name && c.ensemble == EnsembleMode::Polarized)
            .expect("polarized result exists");
        let unpol = conditions
            .iter()
            .find(|c| &c.condition == name && c.ensemble == EnsembleMode::Unpolarized)
            .expect("unpolarized result exists");
        for quadrature in [Quadrature::I, Quadrature::Q] {
            let (fit_p, fit_u) = match quadrature {
                Quadrature::I => (&pol.fit_i, &unpol.fit_i),
                Quadrature::Q => (&pol.fit_q, &unpol.fit_q),
            };
            let decomposition = decompose_budget(fit_u, fit_p)?;
            let mba_normalized = if pol.carrier_power > 0.0 {
                decomposition.mba.value / pol.carrier_power
            } else {
                f64::NAN
            };
            decompositions.push(DecompositionRow {
                condition: name.clone(),
                quadrature,
                decomposition,
                carrier_power: pol.carrier_power,
                mba_normalized,
            });
        }
    }
    Ok(NoiseReport {
        config_hash: cfg.hash(),
        seed: cfg.run.seed,
        conditions,
        decompositions,
    })
}

/// Responsivity and equivalent magnetic noise for both channels and
/// every probe condition.
#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<SensitivityRow>,
}

#[derive(Debug, Clone)]
pub struct SensitivityRow {
    pub condition: String,
    pub channel: Channel,
    pub responsivity: Responsivity,
    pub equivalent_noise: MagneticNoiseSpectrum,
}

pub fn run_sensitivity(cfg: &ExperimentConfig) -> Result<SensitivityReport, PipelineError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for name in &cfg.probe.conditions {
        let probe = cfg.probe_for(name)?;
        let noise = run_condition(cfg, name, EnsembleMode::Polarized)?;
        for channel in [Channel::Rf, Channel::Dc] {
            let responsivity = sensitivity::responsivity_for_config(cfg, &probe, channel)?;
            let spectrum = match channel {
                Channel::Rf => &noise.spectrum_i,
                Channel::Dc => &noise.spectrum_q,
            };
            let banded = spectrum.band(
                responsivity.freqs.first().copied().unwrap_or(0.0),
                responsivity.freqs.last().copied().unwrap_or(f64::INFINITY),
            );
            let equivalent_noise = sensitivity::equivalent_noise(&banded, &responsivity)?;
            rows.push(SensitivityRow {
                condition: name.clone(),
                channel,
                responsivity,
                equivalent_noise,
            });
        }
    }
    Ok(SensitivityReport { config_hash: cfg.hash(), seed: cfg.run.seed, rows })
}

/// One row of a parameter sweep: the swept value plus the per-quadrature
/// decomposition summary.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub rows: Vec<DecompositionRow>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub parameter: String,
    pub condition: String,
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

/// Run the noise pipeline for each value of a scalar config parameter
/// (dotted path), decomposing one probe condition per value.
pub fn sweep(
    cfg: &ExperimentConfig,
    path: &str,
    values: &[f64],
    condition: &str,
) -> Result<SweepTable, PipelineError> {
    // Resolve the path (and the condition name) before any run.
    read_path(cfg, path)?;
    cfg.probe_for(condition)?;

    let mut rows = Vec::new();
    for &value in values {
        let swept = cfg.with_path(path, value)?;
        let pol = run_condition(&swept, condition, EnsembleMode::Polarized)?;
        let unpol = run_condition(&swept, condition, EnsembleMode::Unpolarized)?;
        let mut dec_rows = Vec::new();
        for quadrature in [Quadrature::I, Quadrature::Q] {
            let (fit_p, fit_u) = match quadrature {
                Quadrature::I => (&pol.fit_i, &unpol.fit_i),
                Quadrature::Q => (&pol.fit_q, &unpol.fit_q),
            };
            let decomposition = decompose_budget(fit_u, fit_p)?;
            let mba_normalized = if pol.carrier_power > 0.0 {
                decomposition.mba.value / pol.carrier_power
            } else {
                f64::NAN
            };
            dec_rows.push(DecompositionRow {
                condition: condition.to_string(),
                quadrature,
                decomposition,
                carrier_power: pol.carrier_power,
                mba_normalized,
            });
        }
        rows.push(SweepRow { value, rows: dec_rows });
    }
    Ok(SweepTable {
        parameter: path.to_string(),
        condition: condition.to_string(),
        config_hash: cfg.hash(),
        rows,
    })
}

fn read_path(cfg: &ExperimentConfig, path: &str) -> Result<f64, ConfigError> {
    let root: toml::Value =
        toml::from_str(&cfg.to_toml()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut node = &root;
    for part in path.split('.') {
        node = node
            .as_table()
            .and_then(|t| t.get(part))
            .ok_or_else(|| ConfigError::BadPath(path.to_string()))?;
    }
    node.as_float()
        .or_else(|| node.as_integer().map(|v| v as f64))
        .ok_or_else(|| ConfigError::BadPath(path.to_string()))
}

/// Paired measurement of the back-action excess: the polarized atomic
/// term under two antisqueezing factors with identical noise streams,
/// quoted per quadrature as (difference, combined 1σ).
pub struct PairedMbaExcess {
    pub xibar2_low: f64,
    pub xibar2_high: f64,
    pub diff_i: f64,
    pub sigma_i: f64,
    pub diff_q: f64,
    pub sigma_q: f64,
}

/// Run the polarized condition twice with ξ̄² ∈ {low, high} (coherent ξ²)
/// and identical seeds for every other noise source.
pub fn paired_mba_excess(
    cfg: &ExperimentConfig,
    xibar2_low: f64,
    xibar2_high: f64,
) -> Result<PairedMbaExcess, PipelineError> {
    let run = |xibar2: f64| -> Result<(FitResult, FitResult), PipelineError> {
        let mut c = cfg.clone();
        c.probe.squeezing_db = 0.0;
        c.probe.antisqueezing_db = Some(10.0 * xibar2.log10());
        c.probe.conditions = vec!["squeezed".into()];
        let res = run_condition(&c, "squeezed", EnsembleMode::Polarized)?;
        Ok((res.fit_i, res.fit_q))
    };
    let (low_i, low_q) = run(xibar2_low)?;
    let (high_i, high_q) = run(xibar2_high)?;
    let sigma = |a: &FitResult, b: &FitResult| {
        (a.atomic.sigma().powi(2) + b.atomic.sigma().powi(2)).sqrt()
    };
    Ok(PairedMbaExcess {
        xibar2_low,
        xibar2_high,
        diff_i: high_i.atomic.value - low_i.atomic.value,
        sigma_i: sigma(&high_i, &low_i),
        diff_q: high_q.atomic.value - low_q.atomic.value,
        sigma_q: sigma(&high_q, &low_q),
    })
}
