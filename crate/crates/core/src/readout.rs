//! Faraday-rotation readout and lock-in demodulation.
//!
//! The detected Stokes flux follows the small-angle form
//! S₂(t) = G·F_z(t)·S₁(t) + N_{S₂}(t); per simulation step this gives,
//! in photon counts, `samples[k] = G·F_z[k]·Φ·dt + δS₂[k]`, with δS₂ the
//! exact realization stored in the trajectory so readout noise and
//! back-action derive from one squeezed-state realization with the
//! correct S₂/S₃ partition.
//!
//! Demodulation at the pump frequency uses the complex-envelope
//! convention raw(t) = Re[(I + iQ)·e^{i(ω_p t + φ)}]: I is the product
//! with 2·cos(ω_p t + φ) and Q with −2·sin(ω_p t + φ), boxcar-averaged
//! over the decimation window. A unit tone at ω_p and zero relative
//! phase demodulates to I = 1.

use thiserror::Error;

use crate::spin::SpinTrajectory;

#[derive(Debug, Error, PartialEq)]
pub enum ReadoutError {
    #[error("trajectory and Stokes series lengths differ: {0} vs {1}")]
    MismatchedLengths(usize, usize),
    #[error("decimation must be >= 1")]
    ZeroDecimation,
    #[error("fewer samples ({0}) than one decimation block ({1})")]
    TooShort(usize, usize),
    #[error("no oscillation detected: envelope {0:.3e} below {1:.3e}")]
    NoOscillation(f64, f64),
}

/// Detected S₂ signal in photon counts per step.
#[derive(Debug, Clone)]
pub struct RawSignal {
    pub dt: f64,
    pub samples: Vec<f64>,
    /// Largest |G·F_z| along the record; above ~0.1 rad the small-angle
    /// form of the rotation signal degrades.
    pub max_rotation_rad: f64,
}

impl RawSignal {
    /// True when the whole record stayed in the small-angle regime.
    pub fn small_angle_ok(&self) -> bool {
        self.max_rotation_rad < 0.1
    }
}

/// Demodulated in-phase/quadrature series at the pump frequency.
#[derive(Debug, Clone)]
pub struct IQSeries {
    /// Output sample spacing (decimation · input dt).
    pub dt_out: f64,
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub demod_phase: f64,
    pub omega_p: f64,
}

impl IQSeries {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Drop the first `n` output samples (pump-up transient).
    pub fn drop_prefix(&mut self, n: usize) {
        let n = n.min(self.i.len());
        self.i.drain(..n);
        self.q.drain(..n);
    }

    pub fn mean_i(&self) -> f64 {
        self.i.iter().sum::<f64>() / self.i.len().max(1) as f64
    }

    pub fn mean_q(&self) -> f64 {
        self.q.iter().sum::<f64>() / self.q.len().max(1) as f64
    }

    /// Carrier amplitude |⟨I⟩ + i⟨Q⟩|.
    pub fn carrier_amplitude(&self) -> f64 {
        (self.mean_i().powi(2) + self.mean_q().powi(2)).sqrt()
    }
}

/// Convert a spin trajectory plus its stored probe-noise realization into
/// the detected signal.
pub fn faraday_signal(traj: &SpinTrajectory, coupling: f64) -> Result<RawSignal, ReadoutError> {
    if traj.f.len() != traj.stokes.ds2.len() {
        return Err(ReadoutError::MismatchedLengths(traj.f.len(), traj.stokes.ds2.len()));
    }
    let flux_dt = traj.stokes.s1 * traj.dt;
    let mut max_rot: f64 = 0.0;
    let samples = traj
        .f
        .iter()
        .zip(&traj.stokes.ds2)
        .map(|(f, ds2)| {
            let rot = coupling * f[2];
            max_rot = max_rot.max(rot.abs());
            rot * flux_dt + ds2
        })
        .collect();
    Ok(RawSignal { dt: traj.dt, samples, max_rotation_rad: max_rot })
}

/// Lock-in demodulation at `omega_p` with boxcar averaging over
/// `decimation` input samples; a trailing partial block is dropped.
pub fn demodulate(
    raw: &RawSignal,
    omega_p: f64,
    demod_phase: f64,
    decimation: usize,
) -> Result<IQSeries, ReadoutError> {
    if decimation == 0 {
        return Err(ReadoutError::ZeroDecimation);
    }
    let n_blocks = raw.samples.len() / decimation;
    if n_blocks == 0 {
        return Err(ReadoutError::TooShort(raw.samples.len(), decimation));
    }
    let dt = raw.dt;
    let mut i_out = Vec::with_capacity(n_blocks);
    let mut q_out = Vec::with_capacity(n_blocks);
    let inv = 1.0 / decimation as f64;
    for m in 0..n_blocks {
        let (mut acc_i, mut acc_q) = (0.0, 0.0);
        let base = m * decimation;
        for k in 0..decimation {
            let t = (base + k) as f64 * dt;
            let (s, c) = (omega_p * t + demod_phase).sin_cos();
            let x = raw.samples[base + k];
            acc_i += 2.0 * x * c;
            acc_q -= 2.0 * x * s;
        }
        i_out.push(acc_i * inv);
        q_out.push(acc_q * inv);
    }
    Ok(IQSeries { dt_out: dt * decimation as f64, i: i_out, q: q_out, demod_phase, omega_p })
}

/// Find the demodulation phase that zeroes ⟨Q⟩ (with ⟨I⟩ > 0) for a
/// resonant trajectory; subsequent runs at the same operating point
/// reuse the returned value.
///
/// The pump-up transient is skipped and the estimate uses an integer
/// number of pump cycles, so the 2ω_p product term cancels exactly.
/// Fails when no pump-synchronous oscillation is detected (envelope below
/// five standard errors of the estimator).
pub fn calibrate_demod_phase(
    traj: &SpinTrajectory,
    coupling: f64,
    omega_p: f64,
) -> Result<f64, ReadoutError> {
    let raw = faraday_signal(traj, coupling)?;
    let n = raw.samples.len();
    // Let the driven steady state establish itself (~10 linewidths).
    let settle = (10.0 / traj.params.expected_linewidth() / raw.dt).ceil() as usize;
    let skip = settle.min(n / 2);
    // Trim to whole pump cycles.
    let per_cycle = (2.0 * std::f64::consts::PI / (omega_p * raw.dt)).round() as usize;
    let usable = ((n - skip) / per_cycle.max(1)) * per_cycle.max(1);
    if usable == 0 {
        return Err(ReadoutError::TooShort(n, per_cycle));
    }
    let window = &raw.samples[skip..skip + usable];
    let mean = window.iter().sum::<f64>() / usable as f64;
    let (mut re, mut im, mut var) = (0.0, 0.0, 0.0);
    for (k, x) in window.iter().enumerate() {
        let xc = x - mean;
        let (s, c) = (omega_p * raw.dt * (skip + k) as f64).sin_cos();
        re += 2.0 * xc * c;
        im -= 2.0 * xc * s;
        var += xc * xc;
    }
    re /= usable as f64;
    im /= usable as f64;
    var /= usable as f64;
    let envelope = (re * re + im * im).sqrt();
    // Std error of the complex mean estimate for incoherent samples.
    let threshold = 5.0 * (2.0 * var / usable as f64).sqrt();
    if envelope <= threshold {
        return Err(ReadoutError::NoOscillation(envelope, threshold));
    }
    // With raw ≈ A·cos(ω_p t + θ): re + i·im = A·e^{iθ}; demodulating at
    // phase θ puts the carrier entirely in I.
    Ok(im.atan2(re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{make_probe, ProbeParams, StokesSeries};
    use crate::spin::{simulate_deterministic, FieldConfig, SpinParams, SpinTrajectory};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn tone_signal(n: usize, dt: f64, omega: f64, phase: f64) -> RawSignal {
        let samples = (0..n).map(|k| (omega * k as f64 * dt + phase).cos()).collect();
        RawSignal { dt, samples, max_rotation_rad: 0.0 }
    }

    /// Trajectory wrapper with an arbitrary F_z series and silent probe.
    fn synthetic_traj(fz: &[f64], dt: f64) -> SpinTrajectory {
        let probe = ProbeParams::coherent(1e10);
        SpinTrajectory {
            dt,
            f: fz.iter().map(|&z| [0.0, 0.0, z]).collect(),
            stokes: StokesSeries::silent(&probe, dt, fz.len()),
            fields: FieldConfig::new(2.8588e-6, 0.5),
            params: test_params(),
            probe,
            seed: None,
        }
    }

    fn test_params() -> SpinParams {
        SpinParams {
            gamma: 4.3956e10,
            relaxation: 1250.0,
            f_max: 2.0e4,
            pump_rate: 625.0,
            pump_duty: 0.1,
            omega_p: 2.0 * PI * 20_000.0,
            coupling: 2.6e-5,
            spn_strength: 0.0,
            pump_mode: Default::default(),
        }
    }

    #[test]
    fn unit_cosine_demodulates_to_i() {
        let dt = 2.5e-7;
        let omega = 2.0 * PI * 20_000.0;
        let raw = tone_signal(4000, dt, omega, 0.0);
        let iq = demodulate(&raw, omega, 0.0, 200).unwrap();
        for (i, q) in iq.i.iter().zip(&iq.q) {
            assert!((i - 1.0).abs() < 1e-10, "I = {}", i);
            assert!(q.abs() < 1e-10, "Q = {}", q);
        }
    }

    #[test]
    fn quarter_phase_tone_lands_in_q() {
        let dt = 2.5e-7;
        let omega = 2.0 * PI * 20_000.0;
        let raw = tone_signal(4000, dt, omega, FRAC_PI_2);
        let iq = demodulate(&raw, omega, 0.0, 200).unwrap();
        for (i, q) in iq.i.iter().zip(&iq.q) {
            assert!(i.abs() < 1e-10);
            assert!((q - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn white_noise_gives_uncorrelated_equal_quadratures() {
        let dt = 2.5e-7;
        let omega = 2.0 * PI * 20_000.0;
        let n = 400_000;
        let mut rng = crate::rng::stream_rng(5, 0);
        let samples: Vec<f64> = (0..n).map(|_| crate::rng::standard_normal(&mut rng)).collect();
        let raw = RawSignal { dt, samples, max_rotation_rad: 0.0 };
        let iq = demodulate(&raw, omega, 0.3, 20).unwrap();
        let m = iq.len() as f64;
        let vi = iq.i.iter().map(|x| x * x).sum::<f64>() / m;
        let vq = iq.q.iter().map(|x| x * x).sum::<f64>() / m;
        let cov = iq.i.iter().zip(&iq.q).map(|(a, b)| a * b).sum::<f64>() / m;
        // Paired-sample correlation consistent with zero at 5σ.
        assert!(cov.abs() < 5.0 * (vi * vq / m).sqrt(), "corr = {}", cov / (vi * vq).sqrt());
        assert!((vi / vq - 1.0).abs() < 5.0 * (2.0 / m).sqrt() * 2.0);
    }

    #[test]
    fn demodulation_is_linear() {
        let dt = 2.5e-7;
        let omega = 2.0 * PI * 20_000.0;
        let mut rng = crate::rng::stream_rng(6, 0);
        let x: Vec<f64> = (0..10_000).map(|_| crate::rng::standard_normal(&mut rng)).collect();
        let y: Vec<f64> = (0..10_000).map(|_| crate::rng::standard_normal(&mut rng)).collect();
        let (a, b) = (1.7, -0.4);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let mk = |s: Vec<f64>| RawSignal { dt, samples: s, max_rotation_rad: 0.0 };
        let d1 = demodulate(&mk(combo), omega, 0.1, 50).unwrap();
        let dx = demodulate(&mk(x), omega, 0.1, 50).unwrap();
        let dy = demodulate(&mk(y), omega, 0.1, 50).unwrap();
        for m in 0..d1.len() {
            assert!((d1.i[m] - (a * dx.i[m] + b * dy.i[m])).abs() < 1e-12);
            assert!((d1.q[m] - (a * dx.q[m] + b * dy.q[m])).abs() < 1e-12);
        }
    }

    #[test]
    fn narrowband_tone_power_is_conserved() {
        // Tone at ω_p + ε: I² + Q² envelope equals the tone amplitude².
        // The boxcar spans half a pump period, which nulls the 2ω_p
        // product term exactly.
        let dt = 2.5e-7;
        let omega = 2.0 * PI * 20_000.0;
        let eps = 2.0 * PI * 300.0;
        let n = 200_000;
        let amp = 0.7;
        let samples: Vec<f64> =
            (0..n).map(|k| amp * ((omega + eps) * k as f64 * dt).cos()).collect();
        let raw = RawSignal { dt, samples, max_rotation_rad: 0.0 };
        let iq = demodulate(&raw, omega, 0.0, 100).unwrap();
        let power: f64 =
            iq.i.iter().zip(&iq.q).map(|(i, q)| i * i + q * q).sum::<f64>() / iq.len() as f64;
        assert!((power / (amp * amp) - 1.0).abs() < 0.01, "envelope power {}", power / (amp * amp));
    }

    #[test]
    fn partial_final_block_dropped() {
        let raw = tone_signal(1030, 1e-6, 2.0 * PI * 1000.0, 0.0);
        let iq = demodulate(&raw, 2.0 * PI * 1000.0, 0.0, 100).unwrap();
        assert_eq!(iq.len(), 10);
    }

    #[test]
    fn faraday_signal_levels() {
        // Static F_z with no noise gives the constant G·c·Φ·dt.
        let dt = 2.5e-7;
        let fz = vec![3.0; 100];
        let traj = synthetic_traj(&fz, dt);
        let g = 2.6e-5;
        let raw = faraday_signal(&traj, g).unwrap();
        let expected = g * 3.0 * 1e10 * dt;
        assert!(raw.samples.iter().all(|s| (s - expected).abs() < 1e-12));
        assert!(raw.small_angle_ok());
    }

    #[test]
    fn faraday_pure_probe_noise_floor_scales_with_squeezing() {
        // F_z ≡ 0: the output is the probe noise alone, with variance
        // ξ²·Φ·dt per step.
        let dt = 2.5e-7;
        let n = 200_000;
        for (db, xi2) in [(0.0, 1.0), (1.6, 10f64.powf(-0.16))] {
            let probe = make_probe(1e10, db).unwrap();
            let stokes = crate::probe::sample_stokes(&probe, dt, n, 42).unwrap();
            let mut traj = synthetic_traj(&vec![0.0; n], dt);
            traj.stokes = stokes;
            traj.probe = probe;
            let raw = faraday_signal(&traj, 2.6e-5).unwrap();
            let var = raw.samples.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let expected = xi2 * 1e10 * dt;
            assert!(
                (var / expected - 1.0).abs() < 0.02,
                "floor at {} dB: {} vs {}",
                db,
                var,
                expected
            );
        }
    }

    #[test]
    fn calibration_zeroes_q_and_recovers_injected_offset() {
        let params = test_params();
        // Resonant, with the pump cycle commensurate with the step grid.
        let fields = FieldConfig::new(params.omega_p / params.gamma, 0.6);
        let dt = params.pump_period() / 200.0;
        let probe = make_probe(1e10, 0.0).unwrap();
        let traj = simulate_deterministic(&fields, &params, &probe, 0.05, dt).unwrap();
        let phase = calibrate_demod_phase(&traj, params.coupling, params.omega_p).unwrap();

        let raw = faraday_signal(&traj, params.coupling).unwrap();
        let mut iq = demodulate(&raw, params.omega_p, phase, 100).unwrap();
        iq.drop_prefix(iq.len() / 2);
        assert!(
            iq.mean_q().abs() < 1e-6 * iq.mean_i().abs(),
            "Q/I = {:.2e}",
            iq.mean_q() / iq.mean_i()
        );
        assert!(iq.mean_i() > 0.0);

        // Shift-and-recover round trip: offsetting the reference by δ
        // moves the measured envelope phase by -δ.
        for delta in [0.4, -1.1] {
            let shifted = demodulate(&raw, params.omega_p, phase + delta, 100).unwrap();
            let recovered = -shifted.mean_q().atan2(shifted.mean_i());
            assert!(
                (recovered - delta).abs() < 1e-3,
                "recovered {} vs {}",
                recovered,
                delta
            );
        }
    }

    #[test]
    fn calibration_detuned_still_zeroes_q() {
        let params = test_params();
        // Pump grid-commensurate; the Larmor frequency sits half a
        // linewidth above the pump.
        let detune = 0.5 * params.expected_linewidth();
        let fields = FieldConfig::new((params.omega_p + detune) / params.gamma, 0.6);
        let dt = params.pump_period() / 200.0;
        let probe = make_probe(1e10, 0.0).unwrap();
        let traj = simulate_deterministic(&fields, &params, &probe, 0.05, dt).unwrap();
        let phase = calibrate_demod_phase(&traj, params.coupling, params.omega_p).unwrap();
        assert!(phase.abs() > 1e-3, "detuning must shift the calibrated phase");
        let raw = faraday_signal(&traj, params.coupling).unwrap();
        let mut iq = demodulate(&raw, params.omega_p, phase, 100).unwrap();
        iq.drop_prefix(iq.len() / 2);
        assert!(iq.mean_q().abs() < 1e-4 * iq.mean_i().abs());
    }

    #[test]
    fn calibration_fails_without_oscillation() {
        let dt = 2.5e-7;
        let mut traj = synthetic_traj(&vec![0.0; 50_000], dt);
        traj.stokes = crate::probe::sample_stokes(&traj.probe, dt, 50_000, 1).unwrap();
        let err = calibrate_demod_phase(&traj, 2.6e-5, 2.0 * PI * 20_000.0).unwrap_err();
        assert!(matches!(err, ReadoutError::NoOscillation(_, _)));
    }
}
