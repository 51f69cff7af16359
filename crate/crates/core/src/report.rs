//! Plain-text output formatting: '#'-prefixed headers carrying the
//! config hash, seed, tool version and column units, followed by
//! whitespace-separated columns. Numbers use shortest-roundtrip float
//! formatting, so identical runs produce byte-identical files.

use crate::noise_model::{Decomposition, FitResult};
use crate::pipeline::{DecompositionRow, SweepTable};
use crate::sensitivity::{MagneticNoiseSpectrum, Responsivity};
use crate::spectral::Spectrum;
use crate::spin::SpinTrajectory;

/// Header fields shared by every output file.
#[derive(Debug, Clone)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    fn render(&self, kind: &str, columns: &str, extra: &[(String, String)]) -> String {
        let mut out = String::new();
        out.push_str(&format!("# hopm {} {}\n", crate::VERSION, kind));
        out.push_str(&format!("# config_hash: {}\n", self.config_hash));
        out.push_str(&format!("# seed: {}\n", self.seed));
        for (k, v) in extra {
            out.push_str(&format!("# {}: {}\n", k, v));
        }
        out.push_str(&format!("# columns: {}\n", columns));
        out
    }
}

/// Spectrum as `freq_hz psd` columns with averaging metadata.
pub fn spectrum_text(spec: &Spectrum, header: &Header, label: &str, units: &str) -> String {
    let mut out = header.render(
        label,
        &format!("freq_hz psd_{units}"),
        &[
            ("n_averages".into(), spec.n_averages.to_string()),
            ("window".into(), spec.window.name().into()),
            ("enbw_hz".into(), format!("{}", spec.enbw_hz)),
        ],
    );
    for (f, p) in spec.freqs.iter().zip(&spec.psd) {
        out.push_str(&format!("{f} {p}\n"));
    }
    out
}

/// Fit report: one `parameter estimate ci68_lo ci68_hi ci95_lo ci95_hi
/// units` row per parameter.
pub fn fit_text(fit: &FitResult, header: &Header, label: &str) -> String {
    let mut out = header.render(
        label,
        "parameter estimate ci68_lo ci68_hi ci95_lo ci95_hi units",
        &[
            ("quadrature".into(), fit.budget.quadrature.to_string()),
            ("mode".into(), format!("{:?}", fit.mode).to_lowercase()),
            ("xi2".into(), format!("{}", fit.budget.xi2)),
            ("xibar2".into(), format!("{}", fit.budget.xibar2)),
            ("log_likelihood".into(), format!("{}", fit.log_likelihood)),
            ("n_points".into(), fit.n_points.to_string()),
            ("degenerate_lorentzian".into(), fit.degenerate_lorentzian.to_string()),
        ],
    );
    for (name, est, units) in [
        ("psn", &fit.psn, "power_per_hz"),
        ("atomic", &fit.atomic, "power_per_hz"),
        ("delta_omega", &fit.delta_omega, "rad_per_s"),
    ] {
        out.push_str(&format!(
            "{name} {} {} {} {} {} {units}\n",
            est.value, est.lo68, est.hi68, est.lo95, est.hi95
        ));
    }
    out
}

/// One decomposition as parameter rows.
pub fn decomposition_text(dec: &Decomposition, header: &Header, label: &str) -> String {
    let mut out = header.render(
        label,
        "parameter estimate ci68_lo ci68_hi ci95_lo ci95_hi units",
        &[
            ("quadrature".into(), dec.quadrature.to_string()),
            ("xibar2".into(), format!("{}", dec.xibar2)),
            ("clamped".into(), dec.clamped.to_string()),
        ],
    );
    out.push_str(&format!("psn {} {0} {0} {0} {0} power_per_hz\n", dec.psn));
    for (name, est) in [("spn", &dec.spn), ("mba", &dec.mba)] {
        out.push_str(&format!(
            "{name} {} {} {} {} {} power_per_hz\n",
            est.value, est.lo68, est.hi68, est.lo95, est.hi95
        ));
    }
    out.push_str(&format!(
        "mba_coefficient {} {0} {0} {0} {0} power_per_hz\n",
        dec.mba_coefficient
    ));
    out.push_str(&format!("mba_raw {} {0} {0} {0} {0} power_per_hz\n", dec.mba_raw));
    out.push_str(&format!(
        "delta_omega_polarized {} {0} {0} {0} {0} rad_per_s\n",
        dec.delta_omega_polarized
    ));
    out.push_str(&format!(
        "delta_omega_unpolarized {} {0} {0} {0} {0} rad_per_s\n",
        dec.delta_omega_unpolarized
    ));
    out
}

/// Combined decomposition summary, one row per (condition, quadrature).
pub fn decomposition_summary_text(rows: &[DecompositionRow], header: &Header) -> String {
    let mut out = header.render(
        "noise budget summary",
        "condition quadrature psn spn spn_ci95_lo spn_ci95_hi mba mba_ci95_lo mba_ci95_hi \
         mba_coefficient mba_normalized delta_omega_pol delta_omega_unpol clamped",
        &[],
    );
    for row in rows {
        let d = &row.decomposition;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            row.condition,
            row.quadrature,
            d.psn,
            d.spn.value,
            d.spn.lo95,
            d.spn.hi95,
            d.mba.value,
            d.mba.lo95,
            d.mba.hi95,
            d.mba_coefficient,
            row.mba_normalized,
            d.delta_omega_polarized,
            d.delta_omega_unpolarized,
            d.clamped
        ));
    }
    out
}

/// Responsivity table: test frequency, ratio, error, SNR, reliability.
pub fn responsivity_text(resp: &Responsivity, header: &Header, label: &str) -> String {
    let mut out = header.render(
        label,
        "freq_hz r_ratio r_ratio_sigma tone_snr unreliable",
        &[
            ("channel".into(), resp.channel.to_string()),
            ("r0_counts_per_tesla".into(), format!("{}", resp.r0)),
            ("r0_max_residual_rel".into(), format!("{}", resp.r0_fit.max_residual_rel)),
        ],
    );
    for k in 0..resp.freqs.len() {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            resp.freqs[k], resp.r_ratio[k], resp.r_ratio_sigma[k], resp.tone_snr[k], resp.unreliable[k]
        ));
    }
    out
}

/// Equivalent magnetic noise as `freq_hz sqrt_s_b` columns.
pub fn magnetic_noise_text(
    m: &MagneticNoiseSpectrum,
    header: &Header,
    label: &str,
) -> String {
    let mut out = header.render(
        label,
        "freq_hz s_b_t2_per_hz sqrt_s_b_t_per_sqrt_hz",
        &[("channel".into(), m.channel.to_string())],
    );
    for k in 0..m.freqs.len() {
        out.push_str(&format!("{} {} {}\n", m.freqs[k], m.s_b[k], m.sqrt_s_b[k]));
    }
    out
}

/// Sweep summary: one row per swept value and quadrature.
pub fn sweep_text(table: &SweepTable, header: &Header) -> String {
    let mut out = header.render(
        "parameter sweep",
        "value quadrature psn spn spn_ci95_lo spn_ci95_hi mba mba_ci95_lo mba_ci95_hi \
         mba_normalized delta_omega_pol",
        &[
            ("parameter".into(), table.parameter.clone()),
            ("condition".into(), table.condition.clone()),
        ],
    );
    for row in &table.rows {
        for dec_row in &row.rows {
            let d = &dec_row.decomposition;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {} {}\n",
                row.value,
                dec_row.quadrature,
                d.psn,
                d.spn.value,
                d.spn.lo95,
                d.spn.hi95,
                d.mba.value,
                d.mba.lo95,
                d.mba.hi95,
                dec_row.mba_normalized,
                d.delta_omega_polarized
            ));
        }
    }
    out
}

/// Trajectory export `t fx fy fz`, keeping every `every`-th step.
pub fn trajectory_text(traj: &SpinTrajectory, header: &Header, every: usize) -> String {
    let every = every.max(1);
    let mut out = header.render(
        "spin trajectory",
        "t_s f_x f_y f_z",
        &[("dt_s".into(), format!("{}", traj.dt))],
    );
    for (k, f) in traj.f.iter().enumerate().step_by(every) {
        out.push_str(&format!("{} {} {} {}\n", k as f64 * traj.dt, f[0], f[1], f[2]));
    }
    out
}

/// Demodulated record export `t i q`.
pub fn iq_text(iq: &crate::readout::IQSeries, header: &Header) -> String {
    let mut out = header.render(
        "demodulated record",
        "t_s i q",
        &[
            ("dt_out_s".into(), format!("{}", iq.dt_out)),
            ("demod_phase_rad".into(), format!("{}", iq.demod_phase)),
        ],
    );
    for k in 0..iq.len() {
        out.push_str(&format!("{} {} {}\n", k as f64 * iq.dt_out, iq.i[k], iq.q[k]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Window;

    #[test]
    fn headers_carry_hash_seed_version_units() {
        let spec = Spectrum {
            freqs: vec![0.0, 5.0, 10.0],
            psd: vec![0.0, 1.25e-3, 2.5e-3],
            n_averages: 50,
            window: Window::Hann,
            enbw_hz: 7.5,
        };
        let header = Header { config_hash: "deadbeef01234567".into(), seed: 42 };
        let text = spectrum_text(&spec, &header, "test spectrum", "counts2_per_hz");
        assert!(text.contains("# config_hash: deadbeef01234567"));
        assert!(text.contains("# seed: 42"));
        assert!(text.contains(&format!("# hopm {}", crate::VERSION)));
        assert!(text.contains("# columns: freq_hz psd_counts2_per_hz"));
        assert!(text.contains("# n_averages: 50"));
        assert!(text.lines().filter(|l| !l.starts_with('#')).count() == 3);
        // Deterministic rendering.
        assert_eq!(text, spectrum_text(&spec, &header, "test spectrum", "counts2_per_hz"));
    }
}
