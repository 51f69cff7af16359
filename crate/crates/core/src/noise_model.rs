//! Three-component quantum-noise model of the demodulated spectra and
//! its maximum-likelihood fit.
//!
//! The demodulated quadrature spectra follow
//!
//! ```text
//! S(ω) = ξ²·S_PSN + L(ω)·(S_SPN + ξ̄²·S_MBA),   L(ω) = Δω²/(ω² + Δω²)
//! ```
//!
//! a frequency-flat photon-shot-noise floor scaling with the squeezing
//! factor ξ², plus a Lorentzian atomic term combining spin projection
//! noise and measurement back-action, the latter scaling with the
//! antisqueezing factor ξ̄².
//!
//! A single spectrum determines the floor, the total atomic amplitude
//! A = S_SPN + ξ̄²·S_MBA and the linewidth Δω; the SPN/MBA split comes
//! from pairing a polarized fit with an unpolarized reference
//! ([`decompose_budget`]): the unpolarized atomic term is pure SPN, and
//! the back-action level is the polarized atomic term minus it.
//!
//! Fitting maximizes the Whittle likelihood for averaged periodograms:
//! each bin of an n-average spectrum is Gamma-distributed with shape n
//! and mean S(ω). Hann windowing correlates neighboring bins, which
//! leaves the estimates unbiased but overdisperses the likelihood; an
//! optional shape deflation factor accounts for it in the intervals.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{minimize, NmOptions};
use crate::rng;
use crate::spectral::Spectrum;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("too few unmasked points: {0} (need >= {1})")]
    TooFewPoints(usize, usize),
    #[error("fit failed to converge after {0} starts")]
    NonConvergence(usize),
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
    #[error("decomposition requires one unpolarized and one polarized fit")]
    WrongModes,
    #[error("fits come from incompatible configurations ({0} vs {1})")]
    IncompatibleConfigs(String, String),
    #[error("mismatched quadratures")]
    MismatchedQuadratures,
}

/// Which demodulated quadrature a spectrum/budget refers to: I reads the
/// rf channel, Q the dc channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    I,
    Q,
}

impl std::fmt::Display for Quadrature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Quadrature::I => write!(f, "I"),
            Quadrature::Q => write!(f, "Q"),
        }
    }
}

/// Ensemble preparation the spectrum came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Polarized,
    Unpolarized,
}

/// Parameters of the noise model for one quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// PSN coefficient (the ξ²-independent floor level), power/Hz.
    pub psn: f64,
    /// SPN level, power/Hz.
    pub spn: f64,
    /// MBA coefficient (ξ̄²-independent), power/Hz.
    pub mba: f64,
    /// Magnetic-resonance linewidth Δω (rad/s).
    pub delta_omega: f64,
    pub xi2: f64,
    pub xibar2: f64,
    pub quadrature: Quadrature,
}

/// Lorentzian envelope L(ω) = Δω²/(ω² + Δω²).
#[inline]
pub fn lorentzian(omega: f64, delta_omega: f64) -> f64 {
    let d2 = delta_omega * delta_omega;
    d2 / (omega * omega + d2)
}

/// Evaluate the noise model at angular frequency `omega` (rad/s).
#[inline]
pub fn model_psd(budget: &NoiseBudget, omega: f64) -> f64 {
    budget.xi2 * budget.psn
        + lorentzian(omega, budget.delta_omega) * (budget.spn + budget.xibar2 * budget.mba)
}

/// Estimate with profile-likelihood intervals.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub value: f64,
    pub lo68: f64,
    pub hi68: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl ParamEstimate {
    fn point(value: f64) -> Self {
        ParamEstimate { value, lo68: value, hi68: value, lo95: value, hi95: value }
    }

    /// Half-width of the 68% interval, a 1σ-like scale.
    pub fn sigma(&self) -> f64 {
        0.5 * (self.hi68 - self.lo68)
    }

    pub fn contains95(&self, v: f64) -> bool {
        v >= self.lo95 && v <= self.hi95
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub mode: EnsembleMode,
    /// Fit band (Hz); bins outside are ignored.
    pub f_min: f64,
    pub f_max: f64,
    /// Excluded frequency intervals (Hz), e.g. around technical tones.
    pub mask: Vec<(f64, f64)>,
    /// Optimize in log-parameter space (default) or linear space.
    pub log_space: bool,
    /// Number of log-spaced Δω initializations.
    pub n_starts: usize,
    /// Compute profile-likelihood intervals.
    pub compute_ci: bool,
    /// Whittle shape deflation for window-induced bin correlation
    /// (≈ 1.94 for Hann whole-record periodograms; 1 for independent bins).
    pub bin_correlation_factor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: EnsembleMode::Polarized,
            f_min: 0.0,
            f_max: f64::INFINITY,
            mask: Vec::new(),
            log_space: true,
            n_starts: 8,
            compute_ci: true,
            bin_correlation_factor: 1.0,
        }
    }
}

/// Result of fitting one spectrum.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub budget: NoiseBudget,
    /// Fitted total atomic amplitude A = S_SPN + ξ̄²·S_MBA (power/Hz) as
    /// realized in this spectrum.
    pub atomic: ParamEstimate,
    /// Fitted PSN coefficient (floor / ξ²).
    pub psn: ParamEstimate,
    /// Fitted linewidth (rad/s).
    pub delta_omega: ParamEstimate,
    /// Attained log-likelihood (up to data-only constants).
    pub log_likelihood: f64,
    pub n_points: usize,
    pub n_averages: u32,
    pub mode: EnsembleMode,
    /// Flat-spectrum flag: the Lorentzian amplitude is so small that Δω
    /// is unidentified.
    pub degenerate_lorentzian: bool,
    /// Configuration fingerprint set by the pipeline; decomposition
    /// refuses to mix fits from different configurations.
    pub compat_hash: Option<String>,
}

struct WhittleData {
    omegas: Vec<f64>,
    values: Vec<f64>,
    shape: f64,
    xi2: f64,
}

impl WhittleData {
    /// Negative log-likelihood up to data-only constants:
    /// Σ shape·(ln m_j + y_j/m_j).
    fn nll(&self, psn: f64, atomic: f64, delta_omega: f64) -> f64 {
        if !(psn > 0.0) || atomic < 0.0 || !(delta_omega > 0.0) {
            return f64::INFINITY;
        }
        let d2 = delta_omega * delta_omega;
        let floor = self.xi2 * psn;
        let mut acc = 0.0;
        for (w, y) in self.omegas.iter().zip(&self.values) {
            let m = floor + atomic * d2 / (w * w + d2);
            acc += m.ln() + y / m;
        }
        self.shape * acc
    }
}

fn select_bins(spec: &Spectrum, opts: &FitOptions) -> (Vec<f64>, Vec<f64>) {
    let mut omegas = Vec::new();
    let mut values = Vec::new();
    'bins: for (f, p) in spec.freqs.iter().zip(&spec.psd) {
        if *f <= 0.0 || *f < opts.f_min || *f > opts.f_max {
            continue;
        }
        for (lo, hi) in &opts.mask {
            if *f >= *lo && *f <= *hi {
                continue 'bins;
            }
        }
        omegas.push(2.0 * std::f64::consts::PI * f);
        values.push(*p);
    }
    (omegas, values)
}

/// Fit the noise model to an averaged spectrum with ξ², ξ̄² fixed from
/// the probe calibration.
///
/// Returns the floor coefficient, the total atomic amplitude, the
/// linewidth and profile-likelihood intervals. In unpolarized mode the
/// atomic term is reported as SPN-only (`mba` constrained to 0); in
/// polarized mode the SPN/MBA split is left to [`decompose_budget`].
pub fn fit_noise_model(
    spec: &Spectrum,
    xi2: f64,
    xibar2: f64,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    if !(xi2 > 0.0) || !(xibar2 > 0.0) {
        return Err(FitError::InvalidOptions("xi2 and xibar2 must be positive".into()));
    }
    if opts.n_starts == 0 {
        return Err(FitError::InvalidOptions("n_starts must be >= 1".into()));
    }
    let (omegas, values) = select_bins(spec, opts);
    let n_free = 3;
    if omegas.len() < 4 * n_free {
        return Err(FitError::TooFewPoints(omegas.len(), 4 * n_free));
    }
    let shape = spec.n_averages.max(1) as f64 / opts.bin_correlation_factor.max(1.0);
    let data = WhittleData { omegas, values, shape, xi2 };

    // Moment-based initial floor and atomic guesses.
    let n = data.values.len();
    let mut sorted_idx: Vec<usize> = (0..n).collect();
    sorted_idx.sort_by(|&a, &b| data.omegas[a].partial_cmp(&data.omegas[b]).unwrap());
    let hi_band: Vec<f64> =
        sorted_idx[(3 * n / 4)..].iter().map(|&i| data.values[i]).collect();
    let lo_band: Vec<f64> = sorted_idx[..(n / 8).max(4)].iter().map(|&i| data.values[i]).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let psn0 = (mean(&hi_band) / xi2).max(1e-300);
    let atomic0 = (mean(&lo_band) - xi2 * psn0).max(0.01 * xi2 * psn0);

    let w_lo = data.omegas.iter().cloned().fold(f64::INFINITY, f64::min);
    let w_hi = data.omegas.iter().cloned().fold(0.0, f64::max);

    let nm_opts = NmOptions { max_iter: 4000, f_tol: 1e-9, x_tol: 1e-11 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged_starts = 0;
    for s in 0..opts.n_starts {
        let frac = (s as f64 + 0.5) / opts.n_starts as f64;
        let dw0 = (2.0 * w_lo).max(1e-3) * (w_hi / (4.0 * w_lo)).powf(frac);
        let result = if opts.log_space {
            let f = |x: &[f64]| data.nll(x[0].exp(), x[1].exp(), x[2].exp());
            let x0 = [psn0.ln(), atomic0.ln(), dw0.ln()];
            let r = minimize(f, &x0, &[0.3, 0.7, 0.7], nm_opts);
            (vec![r.x[0].exp(), r.x[1].exp(), r.x[2].exp()], r.fval, r.converged)
        } else {
            let f = |x: &[f64]| data.nll(x[0], x[1].max(0.0), x[2]);
            let x0 = [psn0, atomic0, dw0];
            let r = minimize(f, &x0, &[0.3 * psn0, 0.7 * atomic0.max(0.1 * psn0), 0.5 * dw0], nm_opts);
            (vec![r.x[0], r.x[1].max(0.0), r.x[2]], r.fval, r.converged)
        };
        if result.2 && result.1.is_finite() {
            converged_starts += 1;
            if best.as_ref().map_or(true, |(_, f)| result.1 < *f) {
                best = Some((result.0, result.1));
            }
        }
    }
    let (params, nll_min) = best.ok_or(FitError::NonConvergence(opts.n_starts))?;
    let _ = converged_starts;
    let (psn_hat, atomic_hat, dw_hat) = (params[0], params[1], params[2]);

    let (psn_est, atomic_est, dw_est) = if opts.compute_ci {
        (
            profile_interval(&data, &params, nll_min, 0),
            profile_interval(&data, &params, nll_min, 1),
            profile_interval(&data, &params, nll_min, 2),
        )
    } else {
        (
            ParamEstimate::point(psn_hat),
            ParamEstimate::point(atomic_hat),
            ParamEstimate::point(dw_hat),
        )
    };

    // Lorentzian degenerate when the atomic amplitude is consistent with
    // zero (lower profile bound ran to zero) or negligible against the
    // floor, or the linewidth ran off the fitted band.
    let degenerate = atomic_hat < 1e-3 * xi2 * psn_hat
        || (opts.compute_ci && atomic_est.lo95 <= 0.0)
        || dw_hat < 0.5 * w_lo
        || (dw_hat > 2.0 * w_hi && atomic_hat < 0.05 * xi2 * psn_hat);

    let (spn, mba) = match opts.mode {
        EnsembleMode::Unpolarized => (atomic_hat, 0.0),
        // A single polarized spectrum cannot split SPN from MBA; report
        // the total in spn and leave mba to the decomposition step.
        EnsembleMode::Polarized => (atomic_hat, 0.0),
    };

    Ok(FitResult {
        budget: NoiseBudget {
            psn: psn_hat,
            spn,
            mba,
            delta_omega: dw_hat,
            xi2,
            xibar2,
            quadrature: Quadrature::I,
        },
        atomic: atomic_est,
        psn: psn_est,
        delta_omega: dw_est,
        log_likelihood: -nll_min,
        n_points: data.values.len(),
        n_averages: spec.n_averages,
        mode: opts.mode,
        degenerate_lorentzian: degenerate,
        compat_hash: None,
    })
}

/// Profile-likelihood interval for parameter `idx` (0 = psn, 1 = atomic,
/// 2 = delta_omega): the other two parameters are re-optimized at each
/// probed value and the 68%/95% crossings of ΔlnL = 0.5 / 1.92 located
/// by bracketed bisection in log space.
fn profile_interval(data: &WhittleData, mle: &[f64], nll_min: f64, idx: usize) -> ParamEstimate {
    let value = mle[idx];
    let others: Vec<usize> = (0..3).filter(|&j| j != idx).collect();
    let nm_opts = NmOptions { max_iter: 1500, f_tol: 1e-10, x_tol: 1e-12 };

    let profile = |v: f64, warm: &[f64]| -> (f64, Vec<f64>) {
        let f = |x: &[f64]| {
            let mut p = [0.0; 3];
            p[idx] = v;
            p[others[0]] = x[0].exp();
            p[others[1]] = x[1].exp();
            data.nll(p[0], p[1], p[2])
        };
        let x0 = [warm[0].max(1e-300).ln(), warm[1].max(1e-300).ln()];
        let r = minimize(f, &x0, &[0.15, 0.15], nm_opts);
        (r.fval, vec![r.x[0].exp(), r.x[1].exp()])
    };

    let warm0: Vec<f64> = others.iter().map(|&j| mle[j]).collect();
    let bound = |delta: f64, up: bool| -> f64 {
        // Expand a bracket away from the MLE until ΔnLL crosses delta.
        let mut step = 0.05f64;
        let mut prev_v = value.max(1e-300);
        let mut warm = warm0.clone();
        for _ in 0..60 {
            let v = if up { prev_v * (1.0 + step).min(4.0) } else { prev_v / (1.0 + step).min(4.0) };
            let (nll, w) = profile(v, &warm);
            if nll - nll_min >= delta {
                // Bisect between prev_v and v.
                let (mut lo, mut hi) = if up { (prev_v, v) } else { (v, prev_v) };
                for _ in 0..40 {
                    let mid = (lo * hi).sqrt();
                    let (nm, _) = profile(mid, &warm);
                    let crossed = nm - nll_min >= delta;
                    if up == crossed {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi / lo < 1.0 + 1e-6 {
                        break;
                    }
                }
                return (lo * hi).sqrt();
            }
            prev_v = v;
            warm = w;
            step *= 1.7;
        }
        // Never crossed: unconstrained on this side.
        if up {
            prev_v
        } else {
            0.0
        }
    };

    let lo68 = bound(0.5, false);
    let hi68 = bound(0.5, true);
    let lo95 = bound(1.92, false);
    let hi95 = bound(1.92, true);
    ParamEstimate { value, lo68, hi68, lo95, hi95 }
}

/// SPN/PSN/MBA decomposition of a polarized/unpolarized fit pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub quadrature: Quadrature,
    /// Floor coefficient (mean of the two fits).
    pub psn: f64,
    /// Spin-projection-noise level: the unpolarized atomic term.
    pub spn: ParamEstimate,
    /// Realized back-action level ξ̄²·S_MBA: polarized atomic − SPN,
    /// clamped at zero.
    pub mba: ParamEstimate,
    /// ξ̄²-independent MBA coefficient S_MBA = mba/ξ̄².
    pub mba_coefficient: f64,
    /// Raw (unclamped) subtraction, for consistency-with-zero tests.
    pub mba_raw: f64,
    pub xibar2: f64,
    pub delta_omega_polarized: f64,
    pub delta_omega_unpolarized: f64,
    pub clamped: bool,
}

/// Split the atomic noise of a polarized spectrum into SPN and MBA using
/// an unpolarized reference from the same configuration: SPN is the
/// unpolarized atomic term, MBA the polarized excess over it (clamped at
/// zero when finite-sample fits subtract to a negative level).
pub fn decompose_budget(
    unpolarized: &FitResult,
    polarized: &FitResult,
) -> Result<Decomposition, FitError> {
    if unpolarized.mode != EnsembleMode::Unpolarized || polarized.mode != EnsembleMode::Polarized {
        return Err(FitError::WrongModes);
    }
    if polarized.budget.quadrature != unpolarized.budget.quadrature {
        return Err(FitError::MismatchedQuadratures);
    }
    if let (Some(a), Some(b)) = (&unpolarized.compat_hash, &polarized.compat_hash) {
        if a != b {
            return Err(FitError::IncompatibleConfigs(a.clone(), b.clone()));
        }
    }
    let spn = unpolarized.atomic;
    let raw = polarized.atomic.value - spn.value;
    let clamped = raw < 0.0;
    let mba_value = raw.max(0.0);
    // Conservative interval arithmetic for the difference.
    let mba = ParamEstimate {
        value: mba_value,
        lo68: (polarized.atomic.lo68 - spn.hi68).max(0.0),
        hi68: (polarized.atomic.hi68 - spn.lo68).max(0.0),
        lo95: (polarized.atomic.lo95 - spn.hi95).max(0.0),
        hi95: (polarized.atomic.hi95 - spn.lo95).max(0.0),
    };
    Ok(Decomposition {
        quadrature: polarized.budget.quadrature,
        psn: 0.5 * (polarized.budget.psn + unpolarized.budget.psn),
        spn,
        mba,
        mba_coefficient: mba_value / polarized.budget.xibar2,
        mba_raw: raw,
        xibar2: polarized.budget.xibar2,
        delta_omega_polarized: polarized.budget.delta_omega,
        delta_omega_unpolarized: unpolarized.budget.delta_omega,
        clamped,
    })
}

/// Draw a synthetic averaged periodogram from a known budget: each bin is
/// Gamma(shape = n_averages, mean = model). Used by fitter self-tests.
pub fn synthetic_spectrum(
    budget: &NoiseBudget,
    freqs: &[f64],
    n_averages: u32,
    seed: u64,
) -> Spectrum {
    let mut rng = rng::stream_rng(seed, 0);
    let shape = n_averages as f64;
    let psd = freqs
        .iter()
        .map(|f| {
            let m = model_psd(budget, 2.0 * std::f64::consts::PI * f);
            if m <= 0.0 {
                return 0.0;
            }
            let gamma = Gamma::new(shape, m / shape).expect("gamma params");
            gamma.sample(&mut rng)
        })
        .collect();
    Spectrum {
        freqs: freqs.to_vec(),
        psd,
        n_averages,
        window: crate::spectral::Window::Hann,
        enbw_hz: 0.0,
    }
}
