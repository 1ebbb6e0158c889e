//! Closed-form link budget: fibre loss, click probabilities, expected QBER,
//! monitor-line interference and the analytic secret-rate prediction.
//!
//! Every function here is pure.

use thiserror::Error;

use crate::distillation::{binary_entropy, compute_secret_length, EveBound};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name}: {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("QBER undefined: no signal and no dark clicks")]
    UndefinedQber,
    #[error("visibility undefined: no counts at the fringe maximum")]
    UndefinedVisibility,
    #[error("fringe maximum {max} below minimum {min}")]
    InvertedFringe { max: u64, min: u64 },
}

fn check(name: &'static str, value: f64, ok: bool) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Parameter { name, value })
    }
}

/// Fibre attenuation reported for the ultra-low-loss link.
pub const ULL_ATTENUATION_DB_PER_KM: f64 = 0.164;
/// Splice and connector loss of the 250 km link (42.6 dB total minus 41.0 dB fibre).
pub const ULL_EXCESS_DB_AT_250_KM: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FibreParams {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Whole-link splice/connector loss.
    pub excess_loss_db: f64,
}

impl FibreParams {
    /// ULL fibre with the excess loss scaled linearly from its 250 km value.
    pub fn ull(length_km: f64) -> Self {
        Self {
            length_km,
            attenuation_db_per_km: ULL_ATTENUATION_DB_PER_KM,
            excess_loss_db: ULL_EXCESS_DB_AT_250_KM * length_km / 250.0,
        }
    }

    pub fn total_loss_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km + self.excess_loss_db
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("fibre.length_km", self.length_km, self.length_km >= 0.0)?;
        check(
            "fibre.attenuation_db_per_km",
            self.attenuation_db_per_km,
            self.attenuation_db_per_km >= 0.0,
        )?;
        check(
            "fibre.excess_loss_db",
            self.excess_loss_db,
            self.excess_loss_db >= 0.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    /// Mean photon number of a non-empty pulse.
    pub mu: f64,
    pub pulse_rate_hz: f64,
}

impl SourceParams {
    /// Two pulses per bit slot.
    pub fn bit_rate_hz(&self) -> f64 {
        self.pulse_rate_hz / 2.0
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("source.mu", self.mu, self.mu > 0.0)?;
        check(
            "source.pulse_rate_hz",
            self.pulse_rate_hz,
            self.pulse_rate_hz > 0.0,
        )
    }
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            mu: 0.5,
            pulse_rate_hz: 625e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub gate_window_s: f64,
    pub dead_time_s: f64,
    /// Multiplier on `efficiency` for polarisation or temperature drift.
    pub efficiency_scale: f64,
}

impl DetectorParams {
    /// Data-line SSPD: 2.65 % at 5 Hz dark counts.
    pub fn data_default() -> Self {
        Self {
            efficiency: 0.0265,
            dark_rate_hz: 5.0,
            gate_window_s: 1.6e-9,
            dead_time_s: 1e-7,
            efficiency_scale: 1.0,
        }
    }

    /// Monitor-line SSPD, slightly less efficient at a comparable dark rate.
    pub fn monitor_default() -> Self {
        Self {
            efficiency: 0.02,
            ..Self::data_default()
        }
    }

    pub fn effective_efficiency(&self) -> f64 {
        (self.efficiency * self.efficiency_scale).clamp(0.0, 1.0)
    }

    /// Dark-click probability per gate.
    pub fn dark_prob(&self) -> f64 {
        (self.dark_rate_hz * self.gate_window_s).min(1.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check(
            "detector.efficiency",
            self.efficiency,
            (0.0..=1.0).contains(&self.efficiency),
        )?;
        check(
            "detector.dark_rate_hz",
            self.dark_rate_hz,
            self.dark_rate_hz >= 0.0,
        )?;
        check(
            "detector.gate_window_s",
            self.gate_window_s,
            self.gate_window_s > 0.0,
        )?;
        check(
            "detector.dead_time_s",
            self.dead_time_s,
            self.dead_time_s >= 0.0,
        )?;
        check(
            "detector.efficiency_scale",
            self.efficiency_scale,
            self.efficiency_scale >= 0.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferometerParams {
    pub intrinsic_visibility: f64,
    /// Phase between adjacent pulses; 0 is the destructive-port minimum.
    pub phase_rad: f64,
    pub phase_per_wavelength_step: f64,
    /// Random-walk phase drift, rad/sqrt(s).
    pub drift_std_rad_per_s: f64,
}

impl Default for InterferometerParams {
    fn default() -> Self {
        Self {
            intrinsic_visibility: 0.95,
            phase_rad: 0.0,
            phase_per_wavelength_step: 0.05,
            drift_std_rad_per_s: 0.05,
        }
    }
}

impl InterferometerParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        check(
            "interferometer.intrinsic_visibility",
            self.intrinsic_visibility,
            (0.0..=1.0).contains(&self.intrinsic_visibility),
        )?;
        check("interferometer.phase_rad", self.phase_rad, true)?;
        check(
            "interferometer.phase_per_wavelength_step",
            self.phase_per_wavelength_step,
            true,
        )?;
        check(
            "interferometer.drift_std_rad_per_s",
            self.drift_std_rad_per_s,
            self.drift_std_rad_per_s >= 0.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Fraction of Alice's bit slots sent as decoy sequences.
    pub decoy_fraction: f64,
    /// Fraction of pulses Bob taps off to the monitor interferometer.
    pub monitor_fraction: f64,
    /// Click probability in an empty half relative to a full one
    /// (finite modulator extinction). Fit parameter.
    pub optical_error: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            decoy_fraction: 0.1,
            monitor_fraction: 0.1,
            optical_error: 0.008,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("protocol.decoy_fraction", self.decoy_fraction),
            ("protocol.monitor_fraction", self.monitor_fraction),
            ("protocol.optical_error", self.optical_error),
        ] {
            check(name, v, (0.0..=1.0).contains(&v))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub fibre: FibreParams,
    pub source: SourceParams,
    pub data_detector: DetectorParams,
    pub monitor_detector: DetectorParams,
    pub interferometer: InterferometerParams,
    pub protocol: ProtocolParams,
}

impl LinkParams {
    /// The reported prototype over `length_km` of ULL fibre.
    pub fn ull(length_km: f64) -> Self {
        Self {
            fibre: FibreParams::ull(length_km),
            source: SourceParams::default(),
            data_detector: DetectorParams::data_default(),
            monitor_detector: DetectorParams::monitor_default(),
            interferometer: InterferometerParams::default(),
            protocol: ProtocolParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.fibre.validate()?;
        self.source.validate()?;
        self.data_detector.validate()?;
        self.monitor_detector.validate()?;
        self.interferometer.validate()?;
        self.protocol.validate()
    }
}

impl Default for LinkParams {
    fn default() -> Self {
        Self::ull(250.0)
    }
}

/// Fraction of launched power reaching Bob.
pub fn transmittance(fibre: &FibreParams) -> f64 {
    10f64.powf(-fibre.total_loss_db() / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    /// Per non-empty pulse reaching the data detector.
    pub p_signal: f64,
    /// Per gated half-slot.
    pub p_dark: f64,
}

pub fn click_probabilities(link: &LinkParams) -> ClickProbabilities {
    let t = transmittance(&link.fibre);
    let eta = link.data_detector.effective_efficiency();
    ClickProbabilities {
        p_signal: -(-link.source.mu * t * eta).exp_m1(),
        p_dark: link.data_detector.dark_prob(),
    }
}

/// Q = (e p_s + p_d) / (p_s (1 + e) + 2 p_d).
pub fn expected_qber(link: &LinkParams) -> Result<f64, ModelError> {
    let ClickProbabilities { p_signal, p_dark } = click_probabilities(link);
    qber_from_probs(p_signal, p_dark, link.protocol.optical_error)
}

pub(crate) fn qber_from_probs(p_signal: f64, p_dark: f64, e_opt: f64) -> Result<f64, ModelError> {
    let den = p_signal * (1.0 + e_opt) + 2.0 * p_dark;
    if den <= 0.0 {
        return Err(ModelError::UndefinedQber);
    }
    Ok(((e_opt * p_signal + p_dark) / den).clamp(0.0, 0.5))
}

/// Click probability at the destructive port of the one-pulse-delay
/// interferometer for a pair of adjacent non-empty pulses.
pub fn monitor_click_prob(phase_rad: f64, visibility: f64, base_prob: f64) -> f64 {
    base_prob * (1.0 - visibility * phase_rad.cos()) / 2.0
}

/// Constructive-port counterpart of [`monitor_click_prob`].
pub fn monitor_constructive_prob(phase_rad: f64, visibility: f64, base_prob: f64) -> f64 {
    base_prob * (1.0 + visibility * phase_rad.cos()) / 2.0
}

/// Click probability, summed over both output ports, for a coherent pair of
/// non-empty pulses on the monitor line.
pub fn monitor_base_prob(link: &LinkParams) -> f64 {
    let t = transmittance(&link.fibre);
    let mean = link.source.mu
        * t
        * link.protocol.monitor_fraction
        * link.monitor_detector.effective_efficiency();
    -(-mean).exp_m1()
}

/// (max - min) / (max + min).
pub fn visibility(max_counts: u64, min_counts: u64) -> Result<f64, ModelError> {
    if max_counts == 0 {
        return Err(ModelError::UndefinedVisibility);
    }
    if max_counts < min_counts {
        return Err(ModelError::InvertedFringe {
            max: max_counts,
            min: min_counts,
        });
    }
    Ok((max_counts - min_counts) as f64 / (max_counts + min_counts) as f64)
}

/// Live-time fraction of a non-paralyzable detector.
pub fn dead_time_correction(raw_rate_hz: f64, dead_time_s: f64) -> f64 {
    1.0 / (1.0 + raw_rate_hz * dead_time_s)
}

/// Post-processing assumptions used by [`analytic_rates`].
#[derive(Debug, Clone, Copy)]
pub struct DistillationModel {
    pub block_size: usize,
    /// Reconciliation leakage in units of n h(Q).
    pub leak_efficiency: f64,
    pub epsilon_pa: f64,
    pub eve_bound: EveBound,
}

impl Default for DistillationModel {
    fn default() -> Self {
        Self {
            block_size: 1 << 15,
            leak_efficiency: 1.2,
            epsilon_pa: 1e-9,
            eve_bound: EveBound::Coherence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePrediction {
    pub transmittance: f64,
    pub p_signal: f64,
    pub p_dark: f64,
    pub sifted_rate_hz: f64,
    pub qber: f64,
    pub expected_visibility: f64,
    pub secret_rate_hz: f64,
}

/// Visibility Bob would measure on coherent pairs, including monitor darks.
pub fn expected_visibility(link: &LinkParams) -> f64 {
    let p0 = monitor_base_prob(link);
    let pd = link.monitor_detector.dark_prob();
    if p0 + pd <= 0.0 {
        return 0.0;
    }
    let v = link.interferometer.intrinsic_visibility * link.interferometer.phase_rad.cos();
    (p0 * v / (p0 + 2.0 * pd)).max(0.0)
}

pub fn analytic_rates(
    link: &LinkParams,
    model: &DistillationModel,
) -> Result<RatePrediction, ModelError> {
    link.validate()?;
    let t = transmittance(&link.fibre);
    let ClickProbabilities { p_signal, p_dark } = click_probabilities(link);
    let e = link.protocol.optical_error;
    let f_decoy = link.protocol.decoy_fraction;
    let t_b = link.protocol.monitor_fraction;
    let bit_rate = link.source.bit_rate_hz();
    let vis = expected_visibility(link);

    let p_click_data = p_signal * (1.0 + e) + 2.0 * p_dark;
    let p_click_decoy = 2.0 * p_signal + 2.0 * p_dark;
    let raw_rate =
        bit_rate * (1.0 - t_b) * ((1.0 - f_decoy) * p_click_data + f_decoy * p_click_decoy);
    let live = dead_time_correction(raw_rate, link.data_detector.dead_time_s);
    let sifted_rate = bit_rate * p_click_data * (1.0 - f_decoy) * (1.0 - t_b) * live;

    // dark-only clicks carry no correlation with Alice's bits
    if p_signal <= 0.0 {
        return Ok(RatePrediction {
            transmittance: t,
            p_signal,
            p_dark,
            sifted_rate_hz: 0.0,
            qber: 0.0,
            expected_visibility: vis,
            secret_rate_hz: 0.0,
        });
    }
    let qber = qber_from_probs(p_signal, p_dark, e)?;
    let n = model.block_size.max(1);
    let leak = (model.leak_efficiency * n as f64 * binary_entropy(qber)).ceil() as usize;
    let m = compute_secret_length(n, leak, vis, model.epsilon_pa, model.eve_bound);
    let secret_rate = sifted_rate * m as f64 / n as f64;
    Ok(RatePrediction {
        transmittance: t,
        p_signal,
        p_dark,
        sifted_rate_hz: sifted_rate,
        qber,
        expected_visibility: vis,
        secret_rate_hz: secret_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lossless_fibre() {
        let f = FibreParams {
            length_km: 0.0,
            attenuation_db_per_km: 0.164,
            excess_loss_db: 0.0,
        };
        assert_eq!(transmittance(&f), 1.0);
    }

    #[test]
    fn ull_250_km_budget() {
        let f = FibreParams::ull(250.0);
        assert!((f.total_loss_db() - 42.6).abs() < 1e-9);
        assert!((transmittance(&f) - 5.50e-5).abs() < 1e-7);
        let standard = FibreParams {
            length_km: 213.0,
            attenuation_db_per_km: 0.2,
            excess_loss_db: 0.0,
        };
        assert!((transmittance(&standard) - transmittance(&f)).abs() < 1e-12);
    }

    #[test]
    fn click_probability_examples() {
        let mut link = LinkParams::ull(250.0);
        let p = click_probabilities(&link);
        // 1 - exp(-0.5 * 5.4954e-5 * 0.0265)
        assert!(
            (p.p_signal / 7.2814e-7 - 1.0).abs() < 0.01,
            "{}",
            p.p_signal
        );
        assert!((p.p_dark - 8.0e-9).abs() < 1e-15);
        link.data_detector.efficiency = 0.0;
        assert_eq!(click_probabilities(&link).p_signal, 0.0);
    }

    #[test]
    fn qber_examples() {
        let mut link = LinkParams::ull(100.0);
        let q100 = expected_qber(&link).unwrap();
        assert!((q100 - 0.0083).abs() < 0.0005, "{q100}");
        let q250 = expected_qber(&LinkParams::ull(250.0)).unwrap();
        assert!((q250 - 0.0186).abs() < 0.001, "{q250}");

        link.data_detector.dark_rate_hz = 0.0;
        link.protocol.optical_error = 0.0;
        assert_eq!(expected_qber(&link).unwrap(), 0.0);

        link.data_detector.efficiency = 0.0;
        assert_eq!(expected_qber(&link), Err(ModelError::UndefinedQber));
    }

    #[test]
    fn monitor_port_examples() {
        assert!(monitor_click_prob(0.0, 1.0, 0.3).abs() < 1e-15);
        assert!((monitor_click_prob(std::f64::consts::PI, 1.0, 0.3) - 0.3).abs() < 1e-15);
        assert!((monitor_click_prob(0.0, 0.92, 1.0) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn visibility_examples() {
        assert_eq!(visibility(1000, 0).unwrap(), 1.0);
        assert_eq!(visibility(500, 500).unwrap(), 0.0);
        assert!((visibility(1000, 40).unwrap() - 0.923).abs() < 5e-4);
        assert_eq!(visibility(0, 0), Err(ModelError::UndefinedVisibility));
        assert!(matches!(
            visibility(10, 20),
            Err(ModelError::InvertedFringe { .. })
        ));
    }

    #[test]
    fn dead_time_examples() {
        assert_eq!(dead_time_correction(1e5, 0.0), 1.0);
        assert!((dead_time_correction(1e5, 1e-5) - 0.5).abs() < 1e-12);
        assert!(dead_time_correction(228.0, 1e-7) > 0.99997);
    }

    #[test]
    fn dark_link_has_no_rate() {
        let mut link = LinkParams::ull(100.0);
        link.data_detector.efficiency = 0.0;
        let r = analytic_rates(&link, &DistillationModel::default()).unwrap();
        assert_eq!(r.sifted_rate_hz, 0.0);
        assert_eq!(r.secret_rate_hz, 0.0);
    }

    #[test]
    fn reported_rate_magnitudes() {
        let model = DistillationModel::default();
        let r100 = analytic_rates(&LinkParams::ull(100.0), &model).unwrap();
        let r250 = analytic_rates(&LinkParams::ull(250.0), &model).unwrap();
        assert!(
            (600.0..=60_000.0).contains(&r100.secret_rate_hz),
            "{r100:?}"
        );
        assert!((1.5..=150.0).contains(&r250.secret_rate_hz), "{r250:?}");
    }

    fn fibre_strategy() -> impl Strategy<Value = FibreParams> {
        (0.0..400.0f64, 0.0..0.5f64).prop_map(|(l, a)| FibreParams {
            length_km: l,
            attenuation_db_per_km: a,
            excess_loss_db: 0.0,
        })
    }

    proptest! {
        #[test]
        fn transmittance_multiplies_over_segments(a in fibre_strategy(), extra in 0.0..200.0f64) {
            let b = FibreParams { length_km: extra, ..a };
            let joined = FibreParams { length_km: a.length_km + extra, ..a };
            let lhs = transmittance(&a) * transmittance(&b);
            let rhs = transmittance(&joined);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300) + 1e-300);
            prop_assert!(transmittance(&joined) <= transmittance(&a));
        }

        #[test]
        fn qber_monotone_in_dark_rate_and_length(l in 1.0..300.0f64, dl in 0.0..50.0f64, d in 0.0..100.0f64, dd in 0.0..100.0f64) {
            let mut link = LinkParams::ull(l);
            link.data_detector.dark_rate_hz = d;
            let q0 = expected_qber(&link).unwrap();
            let mut darker = link;
            darker.data_detector.dark_rate_hz = d + dd;
            prop_assert!(expected_qber(&darker).unwrap() >= q0 - 1e-15);
            let mut longer = link;
            longer.fibre = FibreParams::ull(l + dl);
            prop_assert!(expected_qber(&longer).unwrap() >= q0 - 1e-15);
        }

        #[test]
        fn monitor_ports_conserve_probability(phi in -10.0..10.0f64, v in 0.0..=1.0f64, p0 in 0.0..=1.0f64) {
            let sum = monitor_click_prob(phi, v, p0) + monitor_constructive_prob(phi, v, p0);
            prop_assert!((sum - p0).abs() < 1e-12);
        }

        #[test]
        fn visibility_is_scale_invariant(a in 1u64..100_000, frac in 0.0..=1.0f64, m in 1u64..1000) {
            let b = (a as f64 * frac) as u64;
            let v1 = visibility(a, b).unwrap();
            let v2 = visibility(a * m, b * m).unwrap();
            prop_assert!((v1 - v2).abs() < 1e-12);
        }

        #[test]
        fn secret_rate_never_exceeds_sifted(l in 0.0..350.0f64, v in 0.0..=1.0f64) {
            let mut link = LinkParams::ull(l);
            link.interferometer.intrinsic_visibility = v;
            let r = analytic_rates(&link, &DistillationModel::default()).unwrap();
            prop_assert!(r.secret_rate_hz <= r.sifted_rate_hz);
            prop_assert!(r.secret_rate_hz >= 0.0);
        }
    }
}
