//! Single-sided power spectral density estimation.
//!
//! One whole-record Hann-windowed periodogram per iteration, averaged
//! across iterations, with optional logarithmic-bin smoothing for display.
//! The normalization is fixed so that white noise of per-sample variance
//! σ² gives a flat single-sided density of 2σ²·dt, and the periodogram
//! satisfies Parseval exactly: Σ psd·Δf equals the window-weighted
//! variance of the mean-subtracted record.
//!
//! The DC bin is retained (it is ≈ 0 after mean subtraction) so Parseval
//! holds by construction; fitting code masks it out.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("series too short: {0} samples (need >= 16)")]
    TooShort(usize),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("step size must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("no spectra to average")]
    EmptyAverage,
    #[error("mismatched frequency axes or windows")]
    MismatchedAxes,
    #[error("bins_per_decade must be >= 1")]
    InvalidBins,
}

/// Window applied before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    pub fn name(&self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rect => "rect",
        }
    }

    fn coefficient(&self, k: usize, n: usize) -> f64 {
        match self {
            // Periodic Hann, the spectral-estimation convention.
            Window::Hann => {
                0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
            }
            Window::Rect => 1.0,
        }
    }
}

/// Single-sided power spectral density with its frequency axis and
/// averaging metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Frequencies in Hz, strictly increasing, starting at DC.
    pub freqs: Vec<f64>,
    /// Power density in (input units)²/Hz.
    pub psd: Vec<f64>,
    /// Number of periodograms averaged into each bin.
    pub n_averages: u32,
    pub window: Window,
    /// Equivalent noise bandwidth of the window in Hz.
    pub enbw_hz: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Frequency resolution of the underlying record.
    pub fn delta_f(&self) -> f64 {
        if self.freqs.len() >= 2 { self.freqs[1] - self.freqs[0] } else { 0.0 }
    }

    /// Total power Σ psd·Δf; equals the windowed record variance for a
    /// single unsmoothed periodogram.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.delta_f()
    }

    /// Mean density over `[f_lo, f_hi]`, e.g. for noise-floor estimates.
    pub fn mean_in_band(&self, f_lo: f64, f_hi: f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (f, p) in self.freqs.iter().zip(&self.psd) {
            if *f >= f_lo && *f <= f_hi {
                sum += p;
                n += 1;
            }
        }
        if n == 0 { f64::NAN } else { sum / n as f64 }
    }

    /// New spectrum restricted to `[f_lo, f_hi]`.
    pub fn band(&self, f_lo: f64, f_hi: f64) -> Spectrum {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.freqs[i] >= f_lo && self.freqs[i] <= f_hi)
            .collect();
        Spectrum {
            freqs: keep.iter().map(|&i| self.freqs[i]).collect(),
            psd: keep.iter().map(|&i| self.psd[i]).collect(),
            ..*self
        }
    }
}

/// Hann-windowed single-sided periodogram of one record.
pub fn psd(series: &[f64], dt: f64) -> Result<Spectrum, SpectralError> {
    psd_with_window(series, dt, Window::Hann)
}

/// Periodogram with an explicit window choice.
pub fn psd_with_window(series: &[f64], dt: f64, window: Window) -> Result<Spectrum, SpectralError> {
    let n = series.len();
    if n < 16 {
        return Err(SpectralError::TooShort(n));
    }
    if !(dt > 0.0) {
        return Err(SpectralError::NonPositiveDt(dt));
    }
    if let Some(i) = series.iter().position(|x| !x.is_finite()) {
        return Err(SpectralError::NonFinite(i));
    }

    let mean = series.iter().sum::<f64>() / n as f64;
    let mut w_sum = 0.0;
    let mut w2_sum = 0.0;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|k| {
            let w = window.coefficient(k, n);
            w_sum += w;
            w2_sum += w * w;
            Complex64::new((series[k] - mean) * w, 0.0)
        })
        .collect();

    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let n_out = n / 2 + 1;
    let df = 1.0 / (n as f64 * dt);
    let norm = dt / w2_sum;
    let mut freqs = Vec::with_capacity(n_out);
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        // DC and (even-N) Nyquist bins have no mirror copy.
        let c = if j == 0 || (n % 2 == 0 && j == n / 2) { 1.0 } else { 2.0 };
        freqs.push(j as f64 * df);
        out.push(c * buf[j].norm_sqr() * norm);
    }

    Ok(Spectrum {
        freqs,
        psd: out,
        n_averages: 1,
        window,
        enbw_hz: w2_sum / (w_sum * w_sum * dt),
    })
}

/// Pointwise mean of spectra sharing one frequency axis; `n_averages`
/// accumulates.
pub fn average_spectra(spectra: &[Spectrum]) -> Result<Spectrum, SpectralError> {
    let first = spectra.first().ok_or(SpectralError::EmptyAverage)?;
    for s in &spectra[1..] {
        if s.freqs.len() != first.freqs.len()
            || s.window != first.window
            || s.freqs
                .iter()
                .zip(&first.freqs)
                .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
        {
            return Err(SpectralError::MismatchedAxes);
        }
    }
    let mut psd = vec![0.0; first.psd.len()];
    for s in spectra {
        for (acc, p) in psd.iter_mut().zip(&s.psd) {
            *acc += p;
        }
    }
    let inv = 1.0 / spectra.len() as f64;
    for p in psd.iter_mut() {
        *p *= inv;
    }
    Ok(Spectrum {
        freqs: first.freqs.clone(),
        psd,
        n_averages: spectra.iter().map(|s| s.n_averages).sum(),
        window: first.window,
        enbw_hz: first.enbw_hz,
    })
}

/// Average the density within logarithmically spaced frequency bins,
/// giving finer resolution at low frequencies; each output point sits at
/// the geometric mean of its member frequencies. The DC bin and empty
/// bins are dropped.
pub fn log_bin(spec: &Spectrum, bins_per_decade: u32) -> Result<Spectrum, SpectralError> {
    if bins_per_decade < 1 {
        return Err(SpectralError::InvalidBins);
    }
    let positive: Vec<usize> = (0..spec.len()).filter(|&i| spec.freqs[i] > 0.0).collect();
    let Some(&first) = positive.first() else {
        return Ok(Spectrum { freqs: vec![], psd: vec![], ..*spec });
    };
    let f0 = spec.freqs[first];
    let step = 1.0 / bins_per_decade as f64;

    let mut freqs = Vec::new();
    let mut psd = Vec::new();
    let mut bin = 0usize;
    let mut log_sum = 0.0;
    let mut p_sum = 0.0;
    let mut count = 0usize;
    let flush = |log_sum: f64, p_sum: f64, count: usize, freqs: &mut Vec<f64>, psd: &mut Vec<f64>| {
        if count > 0 {
            freqs.push((log_sum / count as f64).exp());
            psd.push(p_sum / count as f64);
        }
    };
    for &i in &positive {
        let f = spec.freqs[i];
        let idx = ((f / f0).log10() / step).floor().max(0.0) as usize;
        if idx != bin {
            flush(log_sum, p_sum, count, &mut freqs, &mut psd);
            bin = idx;
            log_sum = 0.0;
            p_sum = 0.0;
            count = 0;
        }
        log_sum += f.ln();
        p_sum += spec.psd[i];
        count += 1;
    }
    flush(log_sum, p_sum, count, &mut freqs, &mut psd);

    Ok(Spectrum { freqs, psd, ..*spec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::f64::consts::PI;

    /// Brute-force DFT periodogram used as an independent oracle for the
    /// FFT-based implementation.
    fn naive_psd(series: &[f64], dt: f64, window: Window) -> (Vec<f64>, Vec<f64>) {
        let n = series.len();
        let mean = series.iter().sum::<f64>() / n as f64;
        let w: Vec<f64> = (0..n).map(|k| window.coefficient(k, n)).collect();
        let w2: f64 = w.iter().map(|x| x * x).sum();
        let xw: Vec<f64> = (0..n).map(|k| (series[k] - mean) * w[k]).collect();
        let mut freqs = Vec::new();
        let mut psd = Vec::new();
        for j in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, x) in xw.iter().enumerate() {
                let phase = -2.0 * PI * (j * k) as f64 / n as f64;
                re += x * phase.cos();
                im += x * phase.sin();
            }
            let c = if j == 0 || (n % 2 == 0 && j == n / 2) { 1.0 } else { 2.0 };
            freqs.push(j as f64 / (n as f64 * dt));
            psd.push(c * (re * re + im * im) * dt / w2);
        }
        (freqs, psd)
    }

    fn white_noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream_rng(seed, 0);
        (0..n).map(|_| sigma * rng::standard_normal(&mut rng)).collect()
    }

    #[test]
    fn matches_naive_dft() {
        let x = white_noise(64, 1.3, 8);
        for window in [Window::Hann, Window::Rect] {
            let s = psd_with_window(&x, 0.01, window).unwrap();
            let (freqs, ref_psd) = naive_psd(&x, 0.01, window);
            for j in 0..s.len() {
                assert!((s.freqs[j] - freqs[j]).abs() < 1e-12);
                assert!((s.psd[j] - ref_psd[j]).abs() <= 1e-9 * ref_psd[j].max(1e-12));
            }
        }
    }

    #[test]
    fn white_noise_level_is_2_sigma2_dt() {
        let dt = 1e-4;
        let spectra: Vec<Spectrum> = (0..50)
            .map(|i| psd(&white_noise(4096, 1.0, 100 + i), dt).unwrap())
            .collect();
        let avg = average_spectra(&spectra).unwrap();
        assert_eq!(avg.n_averages, 50);
        let level = avg.mean_in_band(avg.delta_f(), 0.5 / dt);
        assert!(
            (level / (2.0 * dt) - 1.0).abs() < 0.05,
            "white floor off: {}",
            level / (2.0 * dt)
        );
    }

    #[test]
    fn tone_integrated_power() {
        let n = 4096;
        let dt = 1e-3;
        let amp = 2.5;
        // Tone on bin 200 exactly.
        let f_tone = 200.0 / (n as f64 * dt);
        let x: Vec<f64> =
            (0..n).map(|k| amp * (2.0 * PI * f_tone * k as f64 * dt).cos()).collect();
        let s = psd(&x, dt).unwrap();
        let df = s.delta_f();
        let peak: f64 = (197..=203).map(|j| s.psd[j] * df).sum();
        assert!((peak - amp * amp / 2.0).abs() < 0.01 * amp * amp / 2.0);
    }

    #[test]
    fn zero_input_zero_spectrum() {
        let s = psd(&vec![0.0; 256], 1.0).unwrap();
        assert!(s.psd.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn parseval_identity() {
        let x = white_noise(5000, 0.7, 21);
        for window in [Window::Hann, Window::Rect] {
            let s = psd_with_window(&x, 2.5e-7, window).unwrap();
            let n = x.len();
            let mean = x.iter().sum::<f64>() / n as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for (k, v) in x.iter().enumerate() {
                let w = window.coefficient(k, n);
                num += (w * (v - mean)).powi(2);
                den += w * w;
            }
            let windowed_var = num / den;
            assert!((s.total_power() / windowed_var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hann_and_rect_floors_agree() {
        let mut hann = Vec::new();
        let mut rect = Vec::new();
        for i in 0..60 {
            let x = white_noise(4096, 1.0, 500 + i);
            hann.push(psd_with_window(&x, 1e-3, Window::Hann).unwrap());
            rect.push(psd_with_window(&x, 1e-3, Window::Rect).unwrap());
        }
        let h = average_spectra(&hann).unwrap();
        let r = average_spectra(&rect).unwrap();
        let bh = h.mean_in_band(h.delta_f(), 500.0);
        let br = r.mean_in_band(r.delta_f(), 500.0);
        assert!((bh / br - 1.0).abs() < 0.01, "hann/rect = {}", bh / br);
        // ENBW of Hann is 1.5 bins, rectangular 1 bin.
        assert!((h.enbw_hz / h.delta_f() - 1.5).abs() < 1e-3);
        assert!((r.enbw_hz / r.delta_f() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn averaging_statistics_follow_chi_squared() {
        // Relative scatter of a 50-average white floor is ~ 1/sqrt(50).
        let dt = 1e-3;
        let spectra: Vec<Spectrum> = (0..50)
            .map(|i| psd(&white_noise(2048, 1.0, 900 + i), dt).unwrap())
            .collect();
        let avg = average_spectra(&spectra).unwrap();
        let band: Vec<f64> = avg
            .freqs
            .iter()
            .zip(&avg.psd)
            .filter(|(f, _)| **f > 0.0)
            .map(|(_, p)| *p)
            .collect();
        let mean = band.iter().sum::<f64>() / band.len() as f64;
        let var = band.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / band.len() as f64;
        let rel = var.sqrt() / mean;
        let expected = 1.0 / 50f64.sqrt();
        assert!(
            rel > 0.7 * expected && rel < 1.3 * expected,
            "relative scatter {} vs expected {}",
            rel,
            expected
        );
    }

    #[test]
    fn averaging_rejects_mismatched_axes() {
        let a = psd(&white_noise(1024, 1.0, 1), 1e-3).unwrap();
        let b = psd(&white_noise(2048, 1.0, 2), 1e-3).unwrap();
        assert_eq!(average_spectra(&[a, b]).unwrap_err(), SpectralError::MismatchedAxes);
    }

    #[test]
    fn average_of_identical_is_identity_and_order_invariant() {
        let s = psd(&white_noise(1024, 1.0, 33), 1e-3).unwrap();
        let avg = average_spectra(&[s.clone(), s.clone(), s.clone()]).unwrap();
        for j in 0..s.len() {
            assert!((avg.psd[j] - s.psd[j]).abs() <= 1e-13 * s.psd[j].max(1e-300));
        }

        let list: Vec<Spectrum> =
            (0..8).map(|i| psd(&white_noise(512, 1.0, 700 + i), 1e-3).unwrap()).collect();
        let fwd = average_spectra(&list).unwrap();
        let rev: Vec<Spectrum> = list.into_iter().rev().collect();
        let bwd = average_spectra(&rev).unwrap();
        for j in 0..fwd.len() {
            assert!((fwd.psd[j] - bwd.psd[j]).abs() <= 1e-13 * fwd.psd[j].max(1e-300));
        }
    }

    #[test]
    fn log_bin_flat_stays_flat() {
        let s = Spectrum {
            freqs: (0..1000).map(|i| i as f64).collect(),
            psd: vec![3.0; 1000],
            n_averages: 1,
            window: Window::Hann,
            enbw_hz: 1.5,
        };
        let b = log_bin(&s, 10).unwrap();
        assert!(!b.is_empty());
        assert!(b.psd.iter().all(|&p| (p - 3.0).abs() < 1e-12));
        assert!(b.freqs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn log_bin_counts_single_occupied_bins() {
        // One frequency per decade occupies one bin each.
        let s = Spectrum {
            freqs: vec![1.0, 10.0, 100.0, 1000.0],
            psd: vec![1.0; 4],
            n_averages: 1,
            window: Window::Hann,
            enbw_hz: 1.5,
        };
        let b = log_bin(&s, 1).unwrap();
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn log_bin_one_over_f_matches_analytic_bin_average() {
        let n = 100_000;
        let df = 0.1;
        let freqs: Vec<f64> = (1..=n).map(|i| i as f64 * df).collect();
        let psd_vals: Vec<f64> = freqs.iter().map(|f| 1.0 / f).collect();
        let s = Spectrum {
            freqs,
            psd: psd_vals,
            n_averages: 1,
            window: Window::Hann,
            enbw_hz: 1.5 * df,
        };
        let b = log_bin(&s, 4).unwrap();
        // Group membership follows the binning rule; compare each well-filled
        // bin's mean against the analytic average of 1/f over its span.
        let f0 = 0.1;
        let step = 0.25;
        let mut checked = 0;
        for (f_c, p) in b.freqs.iter().zip(&b.psd) {
            let idx = ((f_c / f0).log10() / step).floor();
            let lo = (f0 * 10f64.powf(idx * step)).max(f0);
            let hi = (f0 * 10f64.powf((idx + 1.0) * step)).min(n as f64 * df);
            if lo < 50.0 || hi > 9000.0 {
                continue; // sparse or partial bins
            }
            let analytic = (hi / lo).ln() / (hi - lo);
            assert!(
                (p / analytic - 1.0).abs() < 0.02,
                "bin at {}: {} vs analytic {}",
                f_c,
                p,
                analytic
            );
            checked += 1;
        }
        assert!(checked >= 5);
    }
}
