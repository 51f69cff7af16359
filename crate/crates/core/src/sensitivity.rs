//! Responsivity calibration and equivalent magnetic noise.
//!
//! The rf channel reads field amplitude through I, the dc channel reads
//! field magnitude through Q. The zero-frequency responsivity R(0) comes
//! from a linear fit of the quadrature shift against small static
//! perturbations around the operating point (noise-free simulations);
//! its frequency dependence comes from the ratio method: inject a small
//! harmonic test tone, measure the demodulated tone power S(ω), and use
//! R²(ω)/R²(0) = S(ω)/S(0) anchored at the lowest resolvable test
//! frequency. Because both the test tone and the noise pass through the
//! same demodulation chain, the chain response cancels in the equivalent
//! noise S_B(ω) = S(ω)/R²(ω).
//!
//! Test-tone amplitudes are auto-scaled per frequency to hold the
//! response amplitude constant (the response rolls off past the
//! magnetic linewidth); the drive stays within the linear regime found
//! by the R(0) calibration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::probe::ProbeParams;
use crate::readout::{calibrate_demod_phase, demodulate, faraday_signal, IQSeries, ReadoutError};
use crate::spectral::{psd, SpectralError, Spectrum};
use crate::spin::{simulate, simulate_deterministic, SpinError, Tone};
use crate::{probe::ProbeError, rng};

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("need at least two non-zero amplitudes, got {0}")]
    TooFewAmplitudes(usize),
    #[error("nonlinear response: max residual {0:.2}% of span exceeds 2%")]
    Nonlinear(f64),
    #[error("test frequency {0} Hz not resolvable by the record")]
    Unresolvable(f64),
    #[error("responsivity covers [{lo}, {hi}] Hz; {f} Hz would extrapolate")]
    Extrapolation { f: f64, lo: f64, hi: f64 },
    #[error("frequency axes misaligned")]
    Misaligned,
    #[error("no responsivity points")]
    Empty,
    #[error("simulation: {0}")]
    Spin(#[from] SpinError),
    #[error("probe: {0}")]
    Probe(#[from] ProbeError),
    #[error("readout: {0}")]
    Readout(#[from] ReadoutError),
    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),
}

/// Which field the responsivity refers to: rf amplitude (read by I) or
/// dc magnitude (read by Q).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Rf,
    Dc,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Channel::Rf => write!(f, "rf"),
            Channel::Dc => write!(f, "dc"),
        }
    }
}

/// Zero-frequency responsivity fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct R0Fit {
    pub channel: Channel,
    /// Slope of the quadrature shift vs field perturbation
    /// (counts/tesla).
    pub r0: f64,
    /// Fit intercept (counts); consistent with zero in the linear regime.
    pub intercept: f64,
    /// Largest residual relative to the response span.
    pub max_residual_rel: f64,
    /// Set when the residual exceeds the 2% linearity threshold.
    pub nonlinear: bool,
    pub amplitudes: Vec<f64>,
    pub responses: Vec<f64>,
}

/// Frequency-resolved responsivity from the ratio method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Responsivity {
    pub channel: Channel,
    /// R(0) from the static linear fit (counts/tesla).
    pub r0: f64,
    pub freqs: Vec<f64>,
    /// R²(ω)/R²(0), anchored to 1 at the lowest test frequency.
    pub r_ratio: Vec<f64>,
    /// 1σ statistical error of each ratio point.
    pub r_ratio_sigma: Vec<f64>,
    /// Tone signal-to-noise per point; points below 10 are flagged.
    pub tone_snr: Vec<f64>,
    pub unreliable: Vec<bool>,
    pub r0_fit: R0Fit,
}

/// Equivalent magnetic noise spectrum of one channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagneticNoiseSpectrum {
    pub channel: Channel,
    pub freqs: Vec<f64>,
    /// T²/Hz.
    pub s_b: Vec<f64>,
    /// T/√Hz, for plotting.
    pub sqrt_s_b: Vec<f64>,
}

/// Operating-point amplitude bound of the linear regime: the response
/// phase/amplitude excursion stays ≲ 0.1 at γ·B ≈ 0.1·Δω.
pub fn linear_amplitude_bound(cfg: &ExperimentConfig) -> f64 {
    let params = cfg.spin_params();
    0.2 * params.expected_linewidth() / params.gamma
}

/// Demodulation phase of the configured operating point (noise-free
/// calibration run).
pub fn operating_phase(
    cfg: &ExperimentConfig,
    probe: &ProbeParams,
) -> Result<f64, SensitivityError> {
    let fields = cfg.field_config();
    let mut params = cfg.spin_params();
    if params.pump_rate == 0.0 {
        params.pump_rate = 0.05 * params.relaxation / params.pump_duty;
    }
    let duration = (cfg.run.settle_s + 10.0 / params.expected_linewidth() + 0.03)
        .max(30.0 * params.pump_period());
    let traj = simulate_deterministic(&fields, &params, probe, duration, cfg.dt())?;
    Ok(calibrate_demod_phase(&traj, params.coupling, params.omega_p)?)
}

fn settled_iq(
    cfg: &ExperimentConfig,
    iq: &mut IQSeries,
) -> usize {
    let skip = (cfg.run.settle_s / iq.dt_out).round() as usize;
    iq.drop_prefix(skip);
    skip
}

/// Mean response of the channel quadrature for one noise-free run with a
/// static perturbation applied.
fn static_response(
    cfg: &ExperimentConfig,
    probe: &ProbeParams,
    channel: Channel,
    amplitude: f64,
    demod_phase: f64,
    duration: f64,
) -> Result<f64, SensitivityError> {
    let mut fields = cfg.field_config();
    match channel {
        Channel::Dc => fields.dc_offset = amplitude,
        Channel::Rf => fields.b_rf_amp = amplitude,
    }
    let params = cfg.spin_params();
    let traj = simulate_deterministic(&fields, &params, probe, duration, cfg.dt())?;
    let raw = faraday_signal(&traj, params.coupling)?;
    let mut iq = demodulate(&raw, params.omega_p, demod_phase, cfg.analysis.decimation)?;
    settled_iq(cfg, &mut iq);
    Ok(match channel {
        Channel::Rf => iq.mean_i(),
        Channel::Dc => iq.mean_q(),
    })
}

/// Zero-frequency responsivity: linear fit of the mean quadrature shift
/// against small static field perturbations (rf amplitude for I, dc
/// offset for Q), from noise-free simulations around the operating
/// point. Flags nonlinearity when the largest fit residual exceeds 2%
/// of the response span.
pub fn responsivity_at_zero(
    cfg: &ExperimentConfig,
    probe: &ProbeParams,
    channel: Channel,
    amplitudes: &[f64],
) -> Result<R0Fit, SensitivityError> {
    let nonzero = amplitudes.iter().filter(|a| **a != 0.0).count();
    if nonzero < 2 {
        return Err(SensitivityError::TooFewAmplitudes(nonzero));
    }
    let demod_phase = operating_phase(cfg, probe)?;
    let params = cfg.spin_params();
    let duration = cfg.run.settle_s + (20.0 / params.expected_linewidth()).max(0.05);

    let baseline = static_response(cfg, probe, channel, 0.0, demod_phase, duration)?;
    let mut amps = Vec::with_capacity(amplitudes.len());
    let mut responses = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        let r = if a == 0.0 {
            0.0
        } else {
            static_response(cfg, probe, channel, a, demod_phase, duration)? - baseline
        };
        amps.push(a);
        responses.push(r);
    }

    // Ordinary least squares with intercept.
    let n = amps.len() as f64;
    let sx: f64 = amps.iter().sum();
    let sy: f64 = responses.iter().sum();
    let sxx: f64 = amps.iter().map(|a| a * a).sum();
    let sxy: f64 = amps.iter().zip(&responses).map(|(a, r)| a * r).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;

    let span = responses.iter().cloned().fold(f64::MIN, f64::max)
        - responses.iter().cloned().fold(f64::MAX, f64::min);
    let max_residual = amps
        .iter()
        .zip(&responses)
        .map(|(a, r)| (r - (slope * a + intercept)).abs())
        .fold(0.0, f64::max);
    let max_residual_rel = if span > 0.0 { max_residual / span } else { 0.0 };

    Ok(R0Fit {
        channel,
        r0: slope,
        intercept,
        max_residual_rel,
        nonlinear: max_residual_rel > 0.02,
        amplitudes: amps,
        responses,
    })
}

/// Tone power in the spectrum around `f`: density above the local floor
/// integrated over the peak bins, plus the tone SNR (peak density over
/// floor).
fn tone_power(spec: &Spectrum, f: f64) -> (f64, f64) {
    let df = spec.delta_f();
    let idx = (f / df).round() as usize;
    let lo = idx.saturating_sub(3);
    let hi = (idx + 3).min(spec.len() - 1);
    // Local floor from flanking bins.
    let mut floor_bins = Vec::new();
    for j in (idx.saturating_sub(30)..lo).chain(hi + 1..(idx + 30).min(spec.len())) {
        floor_bins.push(spec.psd[j]);
    }
    floor_bins.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = if floor_bins.is_empty() { 0.0 } else { floor_bins[floor_bins.len() / 2] };
    let power: f64 = (lo..=hi).map(|j| (spec.psd[j] - floor).max(0.0) * df).sum();
    let peak = (lo..=hi).map(|j| spec.psd[j]).fold(0.0, f64::max);
    let snr = if floor > 0.0 { peak / floor } else { f64::INFINITY };
    (power, snr)
}

/// Frequency-resolved responsivity by the ratio method.
///
/// For each test frequency a small harmonic perturbation is injected on
/// the channel's field, the demodulated tone power measured, normalized
/// by the drive power, and referenced to the lowest test frequency. Tone
/// amplitudes grow as √(1 + (ω/Δω)²) to hold the response constant;
/// points with tone SNR < 10 are flagged unreliable. Statistical errors
/// come from `responsivity_repeats` independent noise realizations.
pub fn responsivity_spectrum(
    cfg: &ExperimentConfig,
    probe: &ProbeParams,
    channel: Channel,
    test_freqs: &[f64],
    base_amplitude: f64,
) -> Result<Responsivity, SensitivityError> {
    if test_freqs.is_empty() {
        return Err(SensitivityError::Empty);
    }
    let params = cfg.spin_params();
    let demod_phase = operating_phase(cfg, probe)?;
    let dt = cfg.dt();
    let decim = cfg.analysis.decimation;
    let record = cfg.run.duration_s;
    let df = 1.0 / record;
    let delta_omega = params.expected_linewidth();
    let repeats = cfg.analysis.responsivity_repeats.max(1);

    let mut freqs = Vec::new();
    let mut ratios_raw = Vec::new();
    let mut sigmas_raw = Vec::new();
    let mut snrs = Vec::new();

    for (fi, &f_req) in test_freqs.iter().enumerate() {
        // Snap to the record's frequency grid.
        let f = (f_req / df).round() * df;
        if f < 2.0 * df || f > 0.5 / (dt * decim as f64) {
            return Err(SensitivityError::Unresolvable(f_req));
        }
        let omega = 2.0 * std::f64::consts::PI * f;
        let amp = base_amplitude * (1.0 + (omega / delta_omega).powi(2)).sqrt();

        let mut powers = Vec::new();
        let mut snr_acc: f64 = 0.0;
        for rep in 0..repeats {
            let mut fields = cfg.field_config();
            let tone = Tone { freq_hz: f, amplitude: amp };
            match channel {
                Channel::Dc => fields.dc_tone = Some(tone),
                Channel::Rf => fields.rf_am_tone = Some(tone),
            }
            let stream = rng::run_stream(
                1000 + match channel {
                    Channel::Rf => 0,
                    Channel::Dc => 1,
                } * 64
                    + fi as u32,
                rep,
            );
            let seed = cfg.run.seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
            let traj =
                simulate(&fields, &params, probe, record + cfg.run.settle_s, dt, seed)?;
            let raw = faraday_signal(&traj, params.coupling)?;
            let mut iq = demodulate(&raw, params.omega_p, demod_phase, decim)?;
            settled_iq(cfg, &mut iq);
            let series = match channel {
                Channel::Rf => &iq.i,
                Channel::Dc => &iq.q,
            };
            let spec = psd(series, iq.dt_out)?;
            let (p, snr) = tone_power(&spec, f);
            powers.push(p / (amp * amp));
            snr_acc += snr;
        }
        let mean = powers.iter().sum::<f64>() / powers.len() as f64;
        let sigma = if powers.len() > 1 {
            (powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
                / (powers.len() as f64 - 1.0)
                / powers.len() as f64)
                .sqrt()
        } else {
            0.0
        };
        freqs.push(f);
        ratios_raw.push(mean);
        sigmas_raw.push(sigma);
        snrs.push(snr_acc / repeats as f64);
    }

    // Anchor the ratio at the lowest test frequency.
    let anchor = ratios_raw[0];
    let anchor_sigma = sigmas_raw[0];
    let mut r_ratio = Vec::with_capacity(freqs.len());
    let mut r_ratio_sigma = Vec::with_capacity(freqs.len());
    let mut unreliable = Vec::with_capacity(freqs.len());
    for k in 0..freqs.len() {
        let ratio = ratios_raw[k] / anchor;
        let rel = ((sigmas_raw[k] / ratios_raw[k]).powi(2)
            + (anchor_sigma / anchor).powi(2))
        .sqrt();
        r_ratio.push(ratio);
        r_ratio_sigma.push(if k == 0 { 0.0 } else { ratio * rel });
        unreliable.push(snrs[k] < 10.0);
    }

    let bound = linear_amplitude_bound(cfg);
    let r0_amps: Vec<f64> =
        [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|s| s * bound).collect();
    let r0_fit = responsivity_at_zero(cfg, probe, channel, &r0_amps)?;

    Ok(Responsivity {
        channel,
        r0: r0_fit.r0,
        freqs,
        r_ratio,
        r_ratio_sigma,
        tone_snr: snrs,
        unreliable,
        r0_fit,
    })
}

/// Responsivity with all knobs taken from the configuration.
pub fn responsivity_for_config(
    cfg: &ExperimentConfig,
    probe: &ProbeParams,
    channel: Channel,
) -> Result<Responsivity, SensitivityError> {
    let base = 0.1 * linear_amplitude_bound(cfg);
    responsivity_spectrum(cfg, probe, channel, &cfg.analysis.test_tone_freqs_hz, base)
}

/// Convert a noise spectrum into equivalent magnetic noise by pointwise
/// division with R²(ω); R²/R²(0) is interpolated log-log between the
/// measured test frequencies, and frequencies outside the measured range
/// are rejected rather than extrapolated.
pub fn equivalent_noise(
    spec: &Spectrum,
    resp: &Responsivity,
) -> Result<MagneticNoiseSpectrum, SensitivityError> {
    if resp.freqs.len() < 2 {
        return Err(SensitivityError::Empty);
    }
    let (lo, hi) = (resp.freqs[0], *resp.freqs.last().unwrap());
    let mut freqs = Vec::new();
    let mut s_b = Vec::new();
    for (f, p) in spec.freqs.iter().zip(&spec.psd) {
        if *f == 0.0 {
            continue;
        }
        if *f < lo * (1.0 - 1e-9) || *f > hi * (1.0 + 1e-9) {
            return Err(SensitivityError::Extrapolation { f: *f, lo, hi });
        }
        let ratio = interp_loglog(&resp.freqs, &resp.r_ratio, *f);
        let r2 = resp.r0 * resp.r0 * ratio;
        freqs.push(*f);
        s_b.push(p / r2);
    }
    let sqrt_s_b = s_b.iter().map(|v| v.sqrt()).collect();
    Ok(MagneticNoiseSpectrum { channel: resp.channel, freqs, s_b, sqrt_s_b })
}

fn interp_loglog(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = match xs.iter().position(|v| *v >= x) {
        Some(0) => 1,
        Some(i) => i,
        None => xs.len() - 1,
    };
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1].max(1e-300), ys[i].max(1e-300));
    let t = (x.ln() - x0.ln()) / (x1.ln() - x0.ln());
    (y0.ln() + t * (y1.ln() - y0.ln())).exp()
}
