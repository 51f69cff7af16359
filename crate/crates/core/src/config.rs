//! Experiment configuration: one human-editable TOML file describing
//! probe, fields, spin ensemble, run settings and analysis options.
//!
//! Defaults mirror the reference operating point: ψ = 45°, a 20 kHz
//! pump locked to the Larmor frequency, three probe conditions
//! (coherent / squeezed / antisqueezed with the measured 1.6 dB and
//! 3 dB levels) and 50 spectral iterations. Every output file embeds
//! the SHA-256 hash of the canonical serialized config so results are
//! traceable to the exact configuration that produced them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::probe::{make_probe_with_antisqueezing, ProbeError, ProbeParams};
use crate::spin::{FieldConfig, PumpMode, SpinParams};

/// Gyromagnetic ratio of the effective ground-state spin (rad·s⁻¹·T⁻¹),
/// ≈ 2π · 6.996 GHz/T.
pub const GAMMA_RB87: f64 = 4.395513e10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown probe condition '{0}' (expected coherent|squeezed|antisqueezed)")]
    UnknownCondition(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("parameter path '{0}' not found or not a scalar")]
    BadPath(String),
    #[error("probe error: {0}")]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Mean photon flux Φ (photons/s).
    pub photon_flux: f64,
    /// S₂ squeezing of the squeezed condition (dB).
    pub squeezing_db: f64,
    /// S₃ antisqueezing of the squeezed condition (dB); omit for a pure
    /// minimum-uncertainty state.
    pub antisqueezing_db: Option<f64>,
    /// Probe conditions to run.
    pub conditions: Vec<String>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            photon_flux: 1.0e10,
            squeezing_db: 1.6,
            antisqueezing_db: Some(3.0),
            conditions: vec!["coherent".into(), "squeezed".into(), "antisqueezed".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsConfig {
    /// dc field magnitude (tesla). The default puts the Larmor frequency
    /// exactly on the default 20 kHz pump.
    pub b_dc_tesla: f64,
    /// Tip angle of B_dc from the pump/probe axis (degrees).
    pub psi_deg: f64,
    /// rf field amplitude along x̂ (tesla).
    pub b_rf_amp_tesla: f64,
    /// rf phase relative to the pump (rad).
    pub b_rf_phase_rad: f64,
}

impl Default for FieldsConfig {
    fn default() -> Self {
        FieldsConfig {
            b_dc_tesla: 2.0 * std::f64::consts::PI * 20_000.0 / GAMMA_RB87,
            psi_deg: 45.0,
            b_rf_amp_tesla: 0.0,
            b_rf_phase_rad: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinConfig {
    /// Gyromagnetic ratio (rad·s⁻¹·T⁻¹).
    pub gamma: f64,
    /// Relaxation rate Γ (s⁻¹).
    pub relaxation: f64,
    /// Maximum polarization (collective spin units; sets the scale
    /// separation between carrier and quantum noise).
    pub f_max: f64,
    /// Peak pump rate (s⁻¹).
    pub pump_rate: f64,
    /// Pump duty cycle.
    pub pump_duty: f64,
    /// Pump repetition frequency (Hz).
    pub pump_freq_hz: f64,
    /// Faraday coupling G (rad/photon), shared by readout and
    /// back-action.
    pub coupling: f64,
    /// Spin-projection-noise amplitude q (per-component intensity q²).
    pub spn_strength: f64,
    pub pump_mode: PumpMode,
}

impl Default for SpinConfig {
    fn default() -> Self {
        SpinConfig {
            gamma: GAMMA_RB87,
            relaxation: 1250.0,
            f_max: 2.0e4,
            pump_rate: 625.0,
            pump_duty: 0.1,
            pump_freq_hz: 20_000.0,
            coupling: 2.6e-5,
            spn_strength: 680.0,
            pump_mode: PumpMode::Pulsed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Analyzed record length per iteration (s), excluding settle time.
    pub duration_s: f64,
    /// Integrator step (s); omit for the default 1/(200·pump rate)
    /// giving 200 steps per pump cycle.
    pub dt_s: Option<f64>,
    /// Periodograms averaged per condition.
    pub n_iterations: u32,
    /// Master seed; every (condition, iteration) derives its own stream.
    pub seed: u64,
    /// Discarded pump-up transient (s).
    pub settle_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            duration_s: 0.2,
            dt_s: None,
            n_iterations: 50,
            seed: 20_260_809,
            settle_s: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechTone {
    pub freq_hz: f64,
    /// Rotation-equivalent amplitude (rad) of the injected tone.
    pub amplitude_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Demodulation boxcar length in input samples; the default half
    /// pump period nulls the 2ω_p product term exactly.
    pub decimation: usize,
    /// Log-bin density of smoothed spectra.
    pub bins_per_decade: u32,
    /// Fit band (Hz).
    pub fit_f_min_hz: f64,
    pub fit_f_max_hz: f64,
    /// Excluded intervals (Hz) passed to the fitter, e.g. around the
    /// technical peak.
    pub mask_hz: Vec<[f64; 2]>,
    /// Responsivity test-tone frequencies (Hz); the lowest one anchors
    /// the ω → 0 reference.
    pub test_tone_freqs_hz: Vec<f64>,
    /// Noise repeats per responsivity point (statistical errors).
    pub responsivity_repeats: u32,
    /// Optional injected technical tone (appears near this frequency in
    /// the demodulated spectra; used to exercise exclusion masks).
    pub tech_tone: Option<TechTone>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            decimation: 100,
            bins_per_decade: 20,
            fit_f_min_hz: 10.0,
            fit_f_max_hz: 10_000.0,
            mask_hz: Vec::new(),
            test_tone_freqs_hz: vec![50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 6400.0],
            responsivity_repeats: 4,
            tech_tone: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    /// Output directory.
    pub dir: String,
    /// Also write unbinned averaged spectra next to the log-binned ones.
    pub write_raw_spectra: bool,
    /// Write (t, F_x, F_y, F_z) trajectories from `simulate`.
    pub export_trajectory: bool,
    /// Keep every Nth sample in trajectory exports.
    pub trajectory_decimation: usize,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            dir: "out".into(),
            write_raw_spectra: true,
            export_trajectory: false,
            trajectory_decimation: 20,
        }
    }
}

/// Full experiment description; see module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub probe: ProbeConfig,
    pub fields: FieldsConfig,
    pub spin: SpinConfig,
    pub run: RunConfig,
    pub analysis: AnalysisConfig,
    pub outputs: OutputsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, truncated to 16 hex
    /// characters; embedded in every output header.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Fingerprint of everything that must agree between the polarized
    /// and unpolarized runs of one decomposition (pumping excluded).
    pub fn compat_hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.spin.pump_rate = 0.0;
        stripped.outputs = OutputsConfig::default();
        stripped.hash()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        if !(self.probe.photon_flux > 0.0) {
            return err(format!("probe.photon_flux = {}", self.probe.photon_flux));
        }
        if self.probe.conditions.is_empty() {
            return err("probe.conditions is empty".into());
        }
        for c in &self.probe.conditions {
            self.probe_for(c)?;
        }
        if !(0.0..=90.0).contains(&self.fields.psi_deg) {
            return err(format!("fields.psi_deg = {} outside [0, 90]", self.fields.psi_deg));
        }
        self.field_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.spin_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.run.duration_s > 0.0) || self.run.n_iterations == 0 {
            return err("run.duration_s and run.n_iterations must be positive".into());
        }
        if self.run.settle_s < 0.0 {
            return err("run.settle_s must be >= 0".into());
        }
        let dt = self.dt();
        if !(dt > 0.0) {
            return err(format!("dt = {dt}"));
        }
        let omega_max = self.spin.gamma * self.fields.b_dc_tesla;
        if omega_max * dt >= 0.1 {
            return err(format!(
                "step unstable: omega_L*dt = {:.3} >= 0.1; reduce run.dt_s",
                omega_max * dt
            ));
        }
        if self.analysis.decimation == 0 {
            return err("analysis.decimation must be >= 1".into());
        }
        if self.analysis.bins_per_decade == 0 {
            return err("analysis.bins_per_decade must be >= 1".into());
        }
        if !(self.analysis.fit_f_min_hz >= 0.0
            && self.analysis.fit_f_max_hz > self.analysis.fit_f_min_hz)
        {
            return err("analysis fit band must satisfy 0 <= f_min < f_max".into());
        }
        // Output rate must cover the analysis band with margin.
        let f_out = 1.0 / (dt * self.analysis.decimation as f64);
        if f_out < 4.0 * self.analysis.fit_f_max_hz {
            return err(format!(
                "output rate {f_out:.0} Hz below 4x analysis bandwidth {:.0} Hz",
                self.analysis.fit_f_max_hz
            ));
        }
        Ok(())
    }

    /// Integrator step: configured value or 200 steps per pump cycle.
    pub fn dt(&self) -> f64 {
        self.run.dt_s.unwrap_or(1.0 / (200.0 * self.spin.pump_freq_hz))
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            b_dc: self.fields.b_dc_tesla,
            psi: self.fields.psi_deg.to_radians(),
            b_rf_amp: self.fields.b_rf_amp_tesla,
            b_rf_phase: self.fields.b_rf_phase_rad,
            dc_offset: 0.0,
            dc_tone: None,
            rf_am_tone: None,
        }
    }

    pub fn spin_params(&self) -> SpinParams {
        SpinParams {
            gamma: self.spin.gamma,
            relaxation: self.spin.relaxation,
            f_max: self.spin.f_max,
            pump_rate: self.spin.pump_rate,
            pump_duty: self.spin.pump_duty,
            omega_p: 2.0 * std::f64::consts::PI * self.spin.pump_freq_hz,
            coupling: self.spin.coupling,
            spn_strength: self.spin.spn_strength,
            pump_mode: self.spin.pump_mode,
        }
    }

    /// Probe parameters of a named condition. The squeezed condition
    /// applies (squeezing_db, antisqueezing_db) to (S₂, S₃); the
    /// antisqueezed condition is the same state with the ellipse rotated
    /// a quarter turn, swapping the two factors.
    pub fn probe_for(&self, condition: &str) -> Result<ProbeParams, ConfigError> {
        let flux = self.probe.photon_flux;
        let sq = self.probe.squeezing_db;
        let anti = self.probe.antisqueezing_db.unwrap_or(sq);
        match condition {
            "coherent" => Ok(ProbeParams::coherent(flux)),
            "squeezed" => Ok(make_probe_with_antisqueezing(flux, sq, anti)?),
            "antisqueezed" => Ok(make_probe_with_antisqueezing(flux, -anti, -sq)?),
            other => Err(ConfigError::UnknownCondition(other.into())),
        }
    }

    /// Set a scalar field by dotted path (e.g. `fields.psi_deg`,
    /// `spin.spn_strength`); used by parameter sweeps. The path is
    /// resolved before any run, and the result re-validated.
    pub fn with_path(&self, path: &str, value: f64) -> Result<ExperimentConfig, ConfigError> {
        let mut root: toml::Value =
            toml::from_str(&self.to_toml()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        {
            let mut node = &mut root;
            let parts: Vec<&str> = path.split('.').collect();
            if parts.len() < 2 {
                return Err(ConfigError::BadPath(path.into()));
            }
            for part in &parts[..parts.len() - 1] {
                node = node
                    .as_table_mut()
                    .and_then(|t| t.get_mut(*part))
                    .ok_or_else(|| ConfigError::BadPath(path.into()))?;
            }
            let table = node.as_table_mut().ok_or_else(|| ConfigError::BadPath(path.into()))?;
            let leaf = *parts.last().unwrap();
            match table.get(leaf) {
                Some(toml::Value::Float(_)) | None => {
                    table.insert(leaf.into(), toml::Value::Float(value));
                }
                Some(toml::Value::Integer(_)) => {
                    table.insert(leaf.into(), toml::Value::Integer(value as i64));
                }
                Some(_) => return Err(ConfigError::BadPath(path.into())),
            }
        }
        let text = toml::to_string(&root).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_resonant() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        // Default dc field puts the Larmor frequency on the pump.
        let omega_l = cfg.spin.gamma * cfg.fields.b_dc_tesla;
        assert!((omega_l / (2.0 * std::f64::consts::PI * 20_000.0) - 1.0).abs() < 1e-12);
        assert!(cfg.probe_for("squeezed").unwrap().xi2 < 1.0);
        assert!(cfg.probe_for("antisqueezed").unwrap().xi2 > 1.0);
        // Antisqueezed condition swaps the two factors.
        let s = cfg.probe_for("squeezed").unwrap();
        let a = cfg.probe_for("antisqueezed").unwrap();
        assert!((s.xi2 - a.xibar2).abs() < 1e-12);
        assert!((s.xibar2 - a.xi2).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip_and_hash_stability() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 16);

        let mut other = cfg.clone();
        other.spin.relaxation = 999.0;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn compat_hash_ignores_pumping() {
        let cfg = ExperimentConfig::default();
        let mut unpol = cfg.clone();
        unpol.spin.pump_rate = 0.0;
        assert_eq!(cfg.compat_hash(), unpol.compat_hash());
        let mut different = cfg.clone();
        different.spin.coupling *= 2.0;
        assert_ne!(cfg.compat_hash(), different.compat_hash());
    }

    #[test]
    fn with_path_sets_scalars_and_rejects_unknown() {
        let cfg = ExperimentConfig::default();
        let swept = cfg.with_path("fields.psi_deg", 30.0).unwrap();
        assert!((swept.fields.psi_deg - 30.0).abs() < 1e-12);
        let swept = cfg.with_path("probe.antisqueezing_db", 6.0).unwrap();
        assert_eq!(swept.probe.antisqueezing_db, Some(6.0));
        assert!(cfg.with_path("nonsense.path", 1.0).is_err());
        assert!(cfg.with_path("fields.no_such_knob", 1.0).is_err());
        // Unvalidatable values are rejected before any run.
        assert!(cfg.with_path("fields.psi_deg", 200.0).is_err());
    }

    #[test]
    fn rejects_unstable_step() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.dt_s = Some(1e-5);
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "[spin]\nrelaxation = 100.0\nturbo = true\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }
}
