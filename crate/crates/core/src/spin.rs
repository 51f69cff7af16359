//! Stochastic Bloch-equation integrator for the collective spin.
//!
//! The spin F(t) evolves under
//!
//! ```text
//! dF/dt = [-γ·B(t) + G·S₃(t)·ẑ] × F  -  Γ·F  +  P(t)·[ẑ·F_max - F]  +  N_F(t)
//! ```
//!
//! with B(t) a dc field tipped by ψ from x̂ in the x–z plane plus an rf
//! field along x̂ phase-locked to the pump, P(t) a rectangular Bell-Bloom
//! pulse train at the pump frequency, and N_F isotropic white noise of
//! intensity q² per component (spin projection noise).
//!
//! Integration splits the step: the deterministic precession is applied
//! as an exact rotation (norm-preserving), the optical-Zeeman-shift
//! back-action as an exact rotation about ẑ by G·δS₃, and relaxation,
//! pumping and spin noise by Euler–Maruyama. Exact rotations keep norm
//! drift far below the back-action signatures being measured.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{self, ProbeParams, StokesSeries};
use crate::rng;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum SpinError {
    #[error("step unstable: |omega|*dt = {0:.4} rad >= 0.1")]
    UnstableStep(f64),
    #[error("invalid spin parameter: {0}")]
    InvalidParams(String),
    #[error("invalid field configuration: {0}")]
    InvalidFields(String),
    #[error("probe error: {0}")]
    Probe(#[from] probe::ProbeError),
    #[error("duration {0} shorter than one step {1}")]
    TooShort(f64, f64),
}

/// A small harmonic test perturbation used for responsivity measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    /// Amplitude in tesla.
    pub amplitude: f64,
}

/// Static and rf magnetic fields seen by the ensemble.
///
/// The dc field lies in the x–z plane, tipped an angle ψ from x̂ toward
/// the probe axis ẑ; the rf field is applied along x̂ at the pump
/// frequency. ψ = 0 is the back-action-evading scalar-magnetometer
/// geometry; ψ = 45° is the hybrid rf/dc operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// dc field magnitude (tesla).
    pub b_dc: f64,
    /// Tip angle of B_dc from x̂, in radians, within [0, π/2].
    pub psi: f64,
    /// rf field amplitude along x̂ (tesla); oscillates at the pump frequency.
    pub b_rf_amp: f64,
    /// rf phase relative to the pump cycle (rad).
    pub b_rf_phase: f64,
    /// Static offset added to |B_dc| (tesla); used to probe dc response.
    pub dc_offset: f64,
    /// Harmonic perturbation of |B_dc| (dc-channel responsivity tone).
    pub dc_tone: Option<Tone>,
    /// Amplitude modulation of the rf field (rf-channel responsivity tone).
    pub rf_am_tone: Option<Tone>,
}

impl FieldConfig {
    pub fn new(b_dc: f64, psi: f64) -> Self {
        FieldConfig {
            b_dc,
            psi,
            b_rf_amp: 0.0,
            b_rf_phase: 0.0,
            dc_offset: 0.0,
            dc_tone: None,
            rf_am_tone: None,
        }
    }

    /// Unit vector of the dc field: x̂·cosψ + ẑ·sinψ.
    pub fn b_dc_hat(&self) -> Vec3 {
        [self.psi.cos(), 0.0, self.psi.sin()]
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if !(self.b_dc >= 0.0 && self.b_dc.is_finite()) {
            return Err(SpinError::InvalidFields(format!("b_dc = {}", self.b_dc)));
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.psi) {
            return Err(SpinError::InvalidFields(format!("psi = {} outside [0, pi/2]", self.psi)));
        }
        if !(self.b_rf_amp >= 0.0) {
            return Err(SpinError::InvalidFields(format!("b_rf_amp = {}", self.b_rf_amp)));
        }
        Ok(())
    }

    /// Instantaneous field vector at time `t`; the rf oscillates at
    /// `omega_p`, phase-locked to the pump cycle.
    #[inline]
    pub fn field_at(&self, t: f64, omega_p: f64) -> Vec3 {
        let mut mag = self.b_dc + self.dc_offset;
        if let Some(tone) = &self.dc_tone {
            mag += tone.amplitude * (2.0 * std::f64::consts::PI * tone.freq_hz * t).cos();
        }
        let (s, c) = (self.psi.sin(), self.psi.cos());
        let mut b = [mag * c, 0.0, mag * s];
        let mut rf = self.b_rf_amp;
        if let Some(tone) = &self.rf_am_tone {
            rf += tone.amplitude * (2.0 * std::f64::consts::PI * tone.freq_hz * t).cos();
        }
        if rf != 0.0 {
            b[0] += rf * (omega_p * t + self.b_rf_phase).cos();
        }
        b
    }

    fn is_static(&self) -> bool {
        self.b_rf_amp == 0.0 && self.dc_tone.is_none() && self.rf_am_tone.is_none()
    }

    /// Largest instantaneous field magnitude, for the stability bound.
    fn max_field(&self) -> f64 {
        self.b_dc.abs()
            + self.dc_offset.abs()
            + self.dc_tone.map_or(0.0, |t| t.amplitude.abs())
            + self.b_rf_amp.abs()
            + self.rf_am_tone.map_or(0.0, |t| t.amplitude.abs())
    }
}

/// How the Bell-Bloom pump is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PumpMode {
    /// Rectangular rate pulse covering the first `duty` fraction of each
    /// pump cycle (the physical model).
    #[default]
    Pulsed,
    /// Instantaneous kick F → F + p·(ẑ·F_max − F) once per cycle, with p
    /// matched to the pulse strength; used for cycle-map oracle
    /// comparisons.
    Kick,
}

/// Atomic-ensemble parameters of the Bloch model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinParams {
    /// Gyromagnetic ratio γ (rad·s⁻¹·T⁻¹).
    pub gamma: f64,
    /// Isotropic relaxation rate Γ (s⁻¹).
    pub relaxation: f64,
    /// Maximum polarization F_max (dimensionless spin units).
    pub f_max: f64,
    /// Peak optical pumping rate (s⁻¹).
    pub pump_rate: f64,
    /// Fraction of each pump cycle the pump is on.
    pub pump_duty: f64,
    /// Pump repetition frequency ω_p (rad·s⁻¹); the rf and demodulation
    /// references are locked to it.
    pub omega_p: f64,
    /// Faraday coupling G (rad/photon), shared between readout rotation
    /// and the optical-Zeeman-shift back-action.
    pub coupling: f64,
    /// Spin-projection-noise amplitude q (per-component white-noise
    /// intensity q²).
    pub spn_strength: f64,
    pub pump_mode: PumpMode,
}

impl SpinParams {
    pub fn validate(&self) -> Result<(), SpinError> {
        if !(self.relaxation > 0.0) {
            return Err(SpinError::InvalidParams(format!("relaxation = {}", self.relaxation)));
        }
        if !(self.pump_duty > 0.0 && self.pump_duty <= 1.0) {
            return Err(SpinError::InvalidParams(format!("pump_duty = {}", self.pump_duty)));
        }
        if !(self.omega_p > 0.0) {
            return Err(SpinError::InvalidParams(format!("omega_p = {}", self.omega_p)));
        }
        if !(self.pump_rate >= 0.0 && self.f_max > 0.0 && self.spn_strength >= 0.0) {
            return Err(SpinError::InvalidParams("negative pump_rate/f_max/spn".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(SpinError::InvalidParams(format!("gamma = {}", self.gamma)));
        }
        Ok(())
    }

    /// Larmor frequency γ·|B_dc| (rad/s).
    pub fn larmor(&self, fields: &FieldConfig) -> f64 {
        self.gamma * (fields.b_dc + fields.dc_offset)
    }

    /// Quality factor ω_L/Γ; perturbative oracles assume it is large.
    pub fn quality_factor(&self, fields: &FieldConfig) -> f64 {
        self.larmor(fields) / self.relaxation
    }

    /// Cycle-averaged pump rate.
    pub fn mean_pump_rate(&self) -> f64 {
        self.pump_rate * self.pump_duty
    }

    /// Expected magnetic-resonance linewidth Δω (rad/s) of the noise
    /// Lorentzian: Γ plus the cycle-averaged pump broadening when pumped.
    pub fn expected_linewidth(&self) -> f64 {
        self.relaxation + self.mean_pump_rate()
    }

    /// Pump period 2π/ω_p.
    pub fn pump_period(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega_p
    }

    /// Equivalent per-cycle kick fraction of the rectangular pulse.
    pub fn kick_fraction(&self) -> f64 {
        1.0 - (-self.pump_rate * self.pump_duty * self.pump_period()).exp()
    }

    /// Steady-state polarization magnitude at the stroboscopic pump
    /// phase, from the per-cycle decay/kick fixed point.
    pub fn stroboscopic_polarization(&self) -> f64 {
        let p = self.kick_fraction();
        if p == 0.0 {
            return 0.0;
        }
        let decay = (-(self.relaxation) * self.pump_period()).exp();
        self.f_max * p / (1.0 - (1.0 - p) * decay)
    }
}

/// One simulated realization: the spin at the start of every step plus
/// the Stokes noise that drove it and a snapshot of the configuration.
#[derive(Debug, Clone)]
pub struct SpinTrajectory {
    pub dt: f64,
    /// Spin state at the start of step k (time k·dt).
    pub f: Vec<Vec3>,
    /// The Stokes realization driving readout noise and back-action.
    pub stokes: StokesSeries,
    pub fields: FieldConfig,
    pub params: SpinParams,
    pub probe: ProbeParams,
    pub seed: Option<u64>,
}

impl SpinTrajectory {
    pub fn n_steps(&self) -> usize {
        self.f.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.f.len() as f64
    }

    /// Largest |F| along the trajectory; the model does not clamp, this
    /// monitors the |F| ≤ F_max·(1+ε) invariant.
    pub fn max_norm(&self) -> f64 {
        self.f.iter().map(|f| vec3::norm(*f)).fold(0.0, f64::max)
    }

    pub fn fz(&self) -> Vec<f64> {
        self.f.iter().map(|f| f[2]).collect()
    }
}

#[inline]
fn pump_rate_at(params: &SpinParams, t: f64) -> f64 {
    if params.pump_rate == 0.0 || params.pump_mode == PumpMode::Kick {
        return 0.0;
    }
    let period = params.pump_period();
    // The 1e-9 shift keeps steps that land on a cycle boundary (up to
    // rounding of t/period) deterministically inside the pulse, so every
    // cycle sees an identical pulse window.
    let phase = (t / period + 1e-9).fract();
    if phase < params.pump_duty {
        params.pump_rate
    } else {
        0.0
    }
}

#[inline]
fn step_inner(
    f: Vec3,
    omega_axis: Vec3,
    omega_angle: f64,
    coupling: f64,
    ds3: f64,
    decay: f64,
    pump: f64,
    f_max: f64,
    q: f64,
    dw: Vec3,
    dt: f64,
) -> Vec3 {
    // 1. Exact precession about -γ·B for this step.
    let mut f = if omega_angle != 0.0 {
        vec3::rotate(f, omega_axis, omega_angle)
    } else {
        f
    };
    // 2. Back-action: exact rotation about ẑ by G·δS₃.
    if ds3 != 0.0 {
        f = vec3::rotate_z(f, coupling * ds3);
    }
    // 3. Relaxation, pumping and spin projection noise (Euler–Maruyama).
    let g = decay + pump;
    [
        f[0] - g * f[0] * dt + q * dw[0],
        f[1] - g * f[1] * dt + q * dw[1],
        f[2] + (pump * f_max - g * f[2]) * dt + q * dw[2],
    ]
}

/// Advance the spin one step of `dt` from time `t`.
///
/// `ds3` is the integrated S₃ fluctuation over the step (photons) and
/// `dw` a 3-vector of Wiener increments ~ N(0, dt). The deterministic
/// precession and the back-action enter as exact rotations; relaxation,
/// pumping and spin noise by Euler–Maruyama. Rejects steps that violate
/// the |ω|·dt < 0.1 stability bound.
pub fn step(
    f: Vec3,
    fields: &FieldConfig,
    params: &SpinParams,
    ds3: f64,
    dw: Vec3,
    t: f64,
    dt: f64,
) -> Result<Vec3, SpinError> {
    fields.validate()?;
    params.validate()?;
    let max_angle = params.gamma * fields.max_field() * dt;
    if max_angle >= 0.1 {
        return Err(SpinError::UnstableStep(max_angle));
    }
    let b = fields.field_at(t + 0.5 * dt, params.omega_p);
    let omega = vec3::scale(b, -params.gamma);
    let mag = vec3::norm(omega);
    let (axis, angle) = if mag > 0.0 {
        (vec3::scale(omega, 1.0 / mag), mag * dt)
    } else {
        (vec3::Z_HAT, 0.0)
    };
    Ok(step_inner(
        f,
        axis,
        angle,
        params.coupling,
        ds3,
        params.relaxation,
        pump_rate_at(params, t),
        params.f_max,
        params.spn_strength,
        dw,
        dt,
    ))
}

fn simulate_impl(
    fields: &FieldConfig,
    params: &SpinParams,
    probe_params: &ProbeParams,
    duration: f64,
    dt: f64,
    seed: Option<u64>,
) -> Result<SpinTrajectory, SpinError> {
    fields.validate()?;
    params.validate()?;
    probe_params.validate()?;
    if !(dt > 0.0) || duration < dt {
        return Err(SpinError::TooShort(duration, dt));
    }
    let max_angle = params.gamma * fields.max_field() * dt;
    if max_angle >= 0.1 {
        return Err(SpinError::UnstableStep(max_angle));
    }

    let n_steps = (duration / dt).round() as usize;
    let stokes = match seed {
        Some(s) => {
            let mut rng = rng::substream_rng(s, 0, rng::SUBSTREAM_STOKES);
            probe::sample_stokes_rng(probe_params, dt, n_steps, &mut rng)?
        }
        None => StokesSeries::silent(probe_params, dt, n_steps),
    };
    let mut spin_rng = seed.map(|s| rng::substream_rng(s, 0, rng::SUBSTREAM_SPIN));

    let period = params.pump_period();
    let kick = if params.pump_mode == PumpMode::Kick && params.pump_rate > 0.0 {
        params.kick_fraction()
    } else {
        0.0
    };
    let q = if seed.is_some() { params.spn_strength } else { 0.0 };

    // Static-field fast path: precompute the rotation axis and sin/cos.
    let static_field = fields.is_static();
    let (static_axis, static_sin, static_cos) = {
        let b = fields.field_at(0.0, params.omega_p);
        let omega = vec3::scale(b, -params.gamma);
        let mag = vec3::norm(omega);
        if mag > 0.0 {
            let (s, c) = (mag * dt).sin_cos();
            (vec3::scale(omega, 1.0 / mag), s, c)
        } else {
            (vec3::Z_HAT, 0.0, 1.0)
        }
    };

    let mut f_rec: Vec<Vec3> = Vec::with_capacity(n_steps);
    let mut f = vec3::ZERO;
    let sqrt_dt = dt.sqrt();
    for k in 0..n_steps {
        f_rec.push(f);
        let t = k as f64 * dt;

        // Precession.
        f = if static_field {
            if static_sin != 0.0 || static_cos != 1.0 {
                vec3::rotate_sincos(f, static_axis, static_sin, static_cos)
            } else {
                f
            }
        } else {
            let b = fields.field_at(t + 0.5 * dt, params.omega_p);
            let omega = vec3::scale(b, -params.gamma);
            let mag = vec3::norm(omega);
            if mag > 0.0 {
                vec3::rotate(f, vec3::scale(omega, 1.0 / mag), mag * dt)
            } else {
                f
            }
        };

        // Back-action rotation about ẑ.
        let ds3 = stokes.ds3[k];
        if ds3 != 0.0 {
            f = vec3::rotate_z(f, params.coupling * ds3);
        }

        // Relaxation + pump + spin noise.
        let pump = pump_rate_at(params, t);
        let g = params.relaxation + pump;
        let mut df = [
            -g * f[0] * dt,
            -g * f[1] * dt,
            (pump * params.f_max - g * f[2]) * dt,
        ];
        if let Some(r) = spin_rng.as_mut() {
            if q > 0.0 {
                df[0] += q * sqrt_dt * rng::standard_normal(r);
                df[1] += q * sqrt_dt * rng::standard_normal(r);
                df[2] += q * sqrt_dt * rng::standard_normal(r);
            }
        }
        f = vec3::add(f, df);

        // Instantaneous-kick pump at cycle boundaries.
        if kick > 0.0 {
            let c0 = (t / period + 1e-9).floor();
            let c1 = ((t + dt) / period + 1e-9).floor();
            if c1 > c0 {
                f = [
                    f[0] * (1.0 - kick),
                    f[1] * (1.0 - kick),
                    f[2] + kick * (params.f_max - f[2]),
                ];
            }
        }
    }

    Ok(SpinTrajectory {
        dt,
        f: f_rec,
        stokes,
        fields: *fields,
        params: *params,
        probe: *probe_params,
        seed,
    })
}

/// Simulate a full trajectory with all noise sources, deterministic for a
/// fixed seed. Pump pulses and the rf field are phase-locked to the pump
/// cycle starting at t = 0.
pub fn simulate(
    fields: &FieldConfig,
    params: &SpinParams,
    probe_params: &ProbeParams,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<SpinTrajectory, SpinError> {
    simulate_impl(fields, params, probe_params, duration, dt, Some(seed))
}

/// Noise-free trajectory (no Stokes fluctuations, no spin noise); used
/// for demodulation-phase calibration and responsivity measurements.
pub fn simulate_deterministic(
    fields: &FieldConfig,
    params: &SpinParams,
    probe_params: &ProbeParams,
    duration: f64,
    dt: f64,
) -> Result<SpinTrajectory, SpinError> {
    simulate_impl(fields, params, probe_params, duration, dt, None)
}

/// Convenience wrapper: the same ensemble with the pump off, giving the
/// thermal (unpolarized) spin-noise reference used by the noise-budget
/// decomposition.
pub fn unpolarized_run(
    fields: &FieldConfig,
    params: &SpinParams,
    probe_params: &ProbeParams,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<SpinTrajectory, SpinError> {
    let mut p = *params;
    p.pump_rate = 0.0;
    simulate(fields, &p, probe_params, duration, dt, seed)
}
