//! Stochastic Stokes parameters of the squeezed probe beam.
//!
//! The probe is described by its mean photon flux Φ (the S₁ component in
//! photon-count units) and two variance scalings: ξ² on the S₂
//! fluctuations that enter the detected polarization signal, and ξ̄² on
//! the S₃ (ellipticity) fluctuations that drive measurement back-action
//! through the optical Zeeman shift. Coherent light has ξ² = ξ̄² = 1 and
//! minimum-uncertainty squeezed states satisfy ξ²·ξ̄² = 1; measured
//! squeezed sources are impure (ξ²·ξ̄² > 1), so the product is only
//! required to be ≥ 1.
//!
//! Both fluctuation channels are modeled as white down to the simulation
//! step: per step of length dt the integrated increments are independent
//! Gaussians with Var(δS₂) = ξ²·Φ·dt and Var(δS₃) = ξ̄²·Φ·dt, so the
//! coherent-state one-sided PSD of the S₂ flux is 2Φ.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("photon flux must be positive, got {0}")]
    NonPositiveFlux(f64),
    #[error("squeezing parameter must be finite, got {0}")]
    NonFiniteSqueezing(f64),
    #[error("uncertainty product xi2*xibar2 = {0} < 1 is unphysical")]
    UncertaintyViolation(f64),
    #[error("step size must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("need at least one step")]
    EmptySeries,
}

/// Squeezed-probe parameters: photon flux and the two variance factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    /// Mean photon flux Φ (photons/s); the mean S₁ in photon-count units.
    pub photon_flux: f64,
    /// Squeezing factor ξ² applied to the S₂ fluctuation variance.
    pub xi2: f64,
    /// Antisqueezing factor ξ̄² applied to the S₃ fluctuation variance.
    pub xibar2: f64,
}

impl ProbeParams {
    /// Coherent probe (ξ² = ξ̄² = 1) at the given flux.
    pub fn coherent(photon_flux: f64) -> Self {
        ProbeParams { photon_flux, xi2: 1.0, xibar2: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.photon_flux > 0.0) {
            return Err(ProbeError::NonPositiveFlux(self.photon_flux));
        }
        for v in [self.xi2, self.xibar2] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ProbeError::NonFiniteSqueezing(v));
            }
        }
        let product = self.xi2 * self.xibar2;
        // Rounded dB inputs can land a hair under the pure-state product.
        if product < 1.0 - 1e-9 {
            return Err(ProbeError::UncertaintyViolation(product));
        }
        Ok(())
    }

    /// Squeezing expressed in dB: −10·log₁₀(ξ²).
    pub fn squeezing_db(&self) -> f64 {
        -10.0 * self.xi2.log10()
    }

    /// Antisqueezing expressed in dB: +10·log₁₀(ξ̄²).
    pub fn antisqueezing_db(&self) -> f64 {
        10.0 * self.xibar2.log10()
    }
}

/// Build a pure (minimum-uncertainty) squeezed probe from a squeezing
/// level in dB; ξ̄² = 1/ξ². 0 dB gives coherent light.
pub fn make_probe(photon_flux: f64, squeezing_db: f64) -> Result<ProbeParams, ProbeError> {
    if !squeezing_db.is_finite() {
        return Err(ProbeError::NonFiniteSqueezing(squeezing_db));
    }
    let xi2 = 10f64.powf(-squeezing_db / 10.0);
    let probe = ProbeParams { photon_flux, xi2, xibar2: 1.0 / xi2 };
    probe.validate()?;
    Ok(probe)
}

/// Build an impure squeezed probe with an explicit antisqueezing level in
/// dB; rejects combinations with ξ²·ξ̄² < 1.
pub fn make_probe_with_antisqueezing(
    photon_flux: f64,
    squeezing_db: f64,
    antisqueezing_db: f64,
) -> Result<ProbeParams, ProbeError> {
    if !squeezing_db.is_finite() || !antisqueezing_db.is_finite() {
        return Err(ProbeError::NonFiniteSqueezing(squeezing_db));
    }
    let probe = ProbeParams {
        photon_flux,
        xi2: 10f64.powf(-squeezing_db / 10.0),
        xibar2: 10f64.powf(antisqueezing_db / 10.0),
    };
    probe.validate()?;
    Ok(probe)
}

/// One realization of the integrated Stokes fluctuation increments.
///
/// `ds2[k]` and `ds3[k]` are the integrated S₂/S₃ fluctuations over step
/// k in photon counts; `s1` is the constant mean flux Φ.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesSeries {
    pub dt: f64,
    pub s1: f64,
    pub ds2: Vec<f64>,
    pub ds3: Vec<f64>,
}

impl StokesSeries {
    pub fn len(&self) -> usize {
        self.ds2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds2.is_empty()
    }

    /// Noise-free series (all increments zero), for deterministic runs.
    pub fn silent(probe: &ProbeParams, dt: f64, n_steps: usize) -> StokesSeries {
        StokesSeries {
            dt,
            s1: probe.photon_flux,
            ds2: vec![0.0; n_steps],
            ds3: vec![0.0; n_steps],
        }
    }
}

/// Draw a Stokes fluctuation realization for `n_steps` steps of `dt`.
///
/// Deterministic for a fixed seed: the unit normals are drawn from the
/// Stokes substream of `seed` and then scaled, so runs that differ only
/// in ξ² or ξ̄² share the same underlying noise realization (paired-seed
/// comparisons stay meaningful).
pub fn sample_stokes(
    probe: &ProbeParams,
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Result<StokesSeries, ProbeError> {
    let mut rng = rng::substream_rng(seed, 0, rng::SUBSTREAM_STOKES);
    sample_stokes_rng(probe, dt, n_steps, &mut rng)
}

/// As [`sample_stokes`], drawing from a caller-provided generator.
pub fn sample_stokes_rng(
    probe: &ProbeParams,
    dt: f64,
    n_steps: usize,
    rng: &mut ChaCha12Rng,
) -> Result<StokesSeries, ProbeError> {
    probe.validate()?;
    if !(dt > 0.0) {
        return Err(ProbeError::NonPositiveDt(dt));
    }
    if n_steps == 0 {
        return Err(ProbeError::EmptySeries);
    }
    let sigma2 = (probe.xi2 * probe.photon_flux * dt).sqrt();
    let sigma3 = (probe.xibar2 * probe.photon_flux * dt).sqrt();
    let mut ds2 = vec![0.0; n_steps];
    let mut ds3 = vec![0.0; n_steps];
    // Draw per step in (ds2, ds3) order so the realization is independent
    // of the squeezing factors.
    for k in 0..n_steps {
        ds2[k] = sigma2 * rng::standard_normal(rng);
        ds3[k] = sigma3 * rng::standard_normal(rng);
    }
    Ok(StokesSeries { dt, s1: probe.photon_flux, ds2, ds3 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_var(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn coherent_probe_is_unit() {
        let p = make_probe(1e10, 0.0).unwrap();
        assert_eq!(p.xi2, 1.0);
        assert_eq!(p.xibar2, 1.0);
    }

    #[test]
    fn fig2_squeezing_values() {
        // 1.6 dB squeezing with the measured 3 dB antisqueezing.
        let p = make_probe_with_antisqueezing(1e10, 1.6, 3.0).unwrap();
        assert!((p.xi2 - 0.6918).abs() < 5e-4);
        assert!((p.xibar2 - 1.9953).abs() < 5e-4);
        // Pure-state pairing of the same squeezing level.
        let pure = make_probe(1e10, 1.6).unwrap();
        assert!((pure.xibar2 - 1.0 / pure.xi2).abs() < 1e-15);
        assert!((pure.xibar2 - 1.4454).abs() < 5e-4);
    }

    #[test]
    fn rejects_unphysical_product() {
        let err = make_probe_with_antisqueezing(1e10, 3.0, 1.0).unwrap_err();
        assert!(matches!(err, ProbeError::UncertaintyViolation(_)));
        assert!(make_probe(0.0, 1.0).is_err());
        assert!(make_probe(1e10, f64::NAN).is_err());
    }

    #[test]
    fn db_round_trip() {
        for db in [-3.0, 0.0, 0.7, 1.6, 6.0] {
            let p = make_probe(1e9, db).unwrap();
            assert!((p.squeezing_db() - db).abs() <= 1e-12 * db.abs().max(1.0));
        }
    }

    #[test]
    fn increment_variances_match_configuration() {
        let n = 1_000_000;
        let probe = make_probe_with_antisqueezing(1e10, 1.6, 3.0).unwrap();
        let dt = 2.5e-7;
        let s = sample_stokes(&probe, dt, n, 99).unwrap();
        let unit = probe.photon_flux * dt;
        // Variance estimator std dev is ~ var·sqrt(2/n); allow 3 sigma.
        let tol = 3.0 * (2.0 / n as f64).sqrt();
        assert!((sample_var(&s.ds2) / unit - probe.xi2).abs() < probe.xi2 * tol);
        assert!((sample_var(&s.ds3) / unit - probe.xibar2).abs() < probe.xibar2 * tol);
    }

    #[test]
    fn coherent_symmetry_and_purity_tradeoff() {
        let n = 500_000;
        let dt = 1e-6;
        let probe = ProbeParams::coherent(5e9);
        let s = sample_stokes(&probe, dt, n, 3).unwrap();
        let v2 = sample_var(&s.ds2);
        let v3 = sample_var(&s.ds3);
        let tol = 5.0 * (2.0 / n as f64).sqrt();
        assert!((v2 / v3 - 1.0).abs() < 2.0 * tol);

        // Pure squeezed state: Var(ds2)·Var(ds3)/(Φdt)² = 1.
        let sq = make_probe(5e9, 2.0).unwrap();
        let s = sample_stokes(&sq, dt, n, 4).unwrap();
        let unit = sq.photon_flux * dt;
        let product = sample_var(&s.ds2) / unit * (sample_var(&s.ds3) / unit);
        assert!((product - 1.0).abs() < 3.0 * tol);
    }

    #[test]
    fn increments_uncorrelated_at_lag_one() {
        let n = 200_000;
        let probe = ProbeParams::coherent(1e10);
        let s = sample_stokes(&probe, 1e-6, n, 11).unwrap();
        for x in [&s.ds2, &s.ds3] {
            let var = sample_var(x);
            let lag1: f64 =
                x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n as f64 - 1.0);
            // Autocorrelation estimator std dev ~ var/sqrt(n); 5 sigma.
            assert!(lag1.abs() < 5.0 * var / (n as f64).sqrt());
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let probe = make_probe(1e10, 1.0).unwrap();
        let a = sample_stokes(&probe, 1e-6, 1000, 17).unwrap();
        let b = sample_stokes(&probe, 1e-6, 1000, 17).unwrap();
        assert_eq!(a, b);
        let c = sample_stokes(&probe, 1e-6, 1000, 18).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn scaling_shares_normals_across_squeezing() {
        // Same seed, different xibar2: ds3 differs only by the scale factor.
        let p1 = make_probe_with_antisqueezing(1e10, 0.0, 0.0).unwrap();
        let p2 = make_probe_with_antisqueezing(1e10, 0.0, 6.0).unwrap();
        let a = sample_stokes(&p1, 1e-6, 100, 5).unwrap();
        let b = sample_stokes(&p2, 1e-6, 100, 5).unwrap();
        let ratio = (p2.xibar2 / p1.xibar2).sqrt();
        for k in 0..100 {
            assert!((b.ds3[k] - a.ds3[k] * ratio).abs() < 1e-12 * a.ds3[k].abs().max(1.0));
            assert_eq!(a.ds2[k].to_bits(), b.ds2[k].to_bits());
        }
    }
}
