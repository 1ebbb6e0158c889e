//! Flat `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use cowqkd::photonic::{DistillationModel, LinkParams, ULL_EXCESS_DB_AT_250_KM};
use cowqkd::randomness::Seed;
use cowqkd::session::{SessionConfig, UnreliablePolicy};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("key `{key}` given twice (lines {first} and {second})")]
    Duplicate {
        key: String,
        first: usize,
        second: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Everything a run depends on. Built from defaults, then a config file,
/// then command-line overrides, in that order.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: Seed,
    pub lengths_km: Vec<f64>,
    /// Slots simulated per sweep row.
    pub slots: u64,
    pub analytic_only: bool,
    /// Link used by `session`, `align` and `predict`'s single point. Its
    /// length is overridden per row in sweeps.
    pub link: LinkParams,
    /// Fixed splice loss; `None` scales the 250 km value with length.
    pub excess_loss_db: Option<f64>,
    pub model: DistillationModel,
    pub session: SessionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: Seed::from_u64(1),
            lengths_km: (0..7).map(|i| 100.0 + 25.0 * i as f64).collect(),
            slots: 1_000_000_000,
            analytic_only: false,
            link: LinkParams::ull(250.0),
            excess_loss_db: None,
            model: DistillationModel::default(),
            session: SessionConfig::default(),
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(key, value, "expected a finite number"))
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    // allow 1e8 style for slot counts
    if let Ok(v) = value.parse::<usize>() {
        return Ok(v);
    }
    match value.parse::<f64>() {
        Ok(f) if f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(63) => Ok(f as usize),
        _ => Err(bad(key, value, "expected a non-negative integer")),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

macro_rules! float_keys {
    ($($name:literal => $($path:ident).+;)*) => {
        const FLOAT_KEYS: &[&str] = &[$($name),*];

        fn set_float(cfg: &mut ExperimentConfig, key: &str, v: f64) -> bool {
            match key {
                $($name => cfg.$($path).+ = v,)*
                _ => return false,
            }
            true
        }

        fn get_float(cfg: &ExperimentConfig, key: &str) -> Option<f64> {
            match key {
                $($name => Some(cfg.$($path).+),)*
                _ => None,
            }
        }
    };
}

float_keys! {
    "fibre.length_km" => link.fibre.length_km;
    "fibre.attenuation_db_per_km" => link.fibre.attenuation_db_per_km;
    "source.mu" => link.source.mu;
    "source.pulse_rate_hz" => link.source.pulse_rate_hz;
    "data_detector.efficiency" => link.data_detector.efficiency;
    "data_detector.dark_rate_hz" => link.data_detector.dark_rate_hz;
    "data_detector.gate_window_s" => link.data_detector.gate_window_s;
    "data_detector.dead_time_s" => link.data_detector.dead_time_s;
    "data_detector.efficiency_scale" => link.data_detector.efficiency_scale;
    "monitor_detector.efficiency" => link.monitor_detector.efficiency;
    "monitor_detector.dark_rate_hz" => link.monitor_detector.dark_rate_hz;
    "monitor_detector.gate_window_s" => link.monitor_detector.gate_window_s;
    "monitor_detector.dead_time_s" => link.monitor_detector.dead_time_s;
    "monitor_detector.efficiency_scale" => link.monitor_detector.efficiency_scale;
    "interferometer.intrinsic_visibility" => link.interferometer.intrinsic_visibility;
    "interferometer.phase_rad" => link.interferometer.phase_rad;
    "interferometer.phase_per_wavelength_step" => link.interferometer.phase_per_wavelength_step;
    "interferometer.drift_std_rad_per_s" => link.interferometer.drift_std_rad_per_s;
    "protocol.decoy_fraction" => link.protocol.decoy_fraction;
    "protocol.monitor_fraction" => link.protocol.monitor_fraction;
    "protocol.optical_error" => link.protocol.optical_error;
    "distillation.leak_efficiency" => model.leak_efficiency;
    "session.detection_timeout_s" => session.detection_timeout_s;
    "session.classical_latency_s" => session.classical_latency_s;
    "session.min_signal_to_dark" => session.visibility_policy.min_signal_to_dark;
    "alignment.noise_time_s" => session.alignment.noise_time_s;
    "alignment.scan_range" => session.alignment.scan_range;
    "alignment.scan_step" => session.alignment.scan_step;
    "alignment.scan_dwell_s" => session.alignment.scan_dwell_s;
    "alignment.settle_time_s" => session.alignment.settle_time_s;
    "alignment.hold_time_s" => session.alignment.hold_time_s;
    "alignment.lock_time_s" => session.alignment.lock_time_s;
    "alignment.gain" => session.alignment.gain;
    "alignment.dither_steps" => session.alignment.dither_steps;
    "alignment.window_s" => session.alignment.window_s;
}

const OTHER_KEYS: &[&str] = &[
    "run.seed",
    "sweep.lengths_km",
    "sweep.slots",
    "sweep.analytic_only",
    "fibre.excess_loss_db",
    "distillation.block_size",
    "distillation.epsilon_pa",
    "session.n_blocks",
    "session.bootstrap_bits",
    "session.auth_reserve_bits",
    "session.cascade_passes",
    "session.min_counts",
    "session.unreliable_visibility",
];

impl ExperimentConfig {
    /// Every accepted key, sorted.
    pub fn keys() -> Vec<&'static str> {
        let mut k: Vec<_> = FLOAT_KEYS.iter().chain(OTHER_KEYS).copied().collect();
        k.sort_unstable();
        k
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        if FLOAT_KEYS.contains(&key) {
            let v = parse_f64(key, value)?;
            set_float(self, key, v);
            return Ok(());
        }
        match key {
            "run.seed" => {
                self.seed = Seed::from_hex(value).map_err(|e| bad(key, value, &e.to_string()))?
            }
            "sweep.lengths_km" => {
                self.lengths_km = value
                    .split(',')
                    .map(|s| parse_f64(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "sweep.slots" => self.slots = parse_usize(key, value)? as u64,
            "sweep.analytic_only" => self.analytic_only = parse_bool(key, value)?,
            "fibre.excess_loss_db" => {
                self.excess_loss_db = match value {
                    "auto" => None,
                    v => Some(parse_f64(key, v)?),
                }
            }
            "distillation.block_size" => {
                let n = parse_usize(key, value)?;
                self.model.block_size = n;
                self.session.block_size = n;
            }
            "distillation.epsilon_pa" => {
                let e = parse_f64(key, value)?;
                self.model.epsilon_pa = e;
                self.session.epsilon_pa = e;
            }
            "session.n_blocks" => self.session.n_blocks = parse_usize(key, value)?,
            "session.bootstrap_bits" => self.session.bootstrap_bits = parse_usize(key, value)?,
            "session.auth_reserve_bits" => {
                self.session.auth_reserve_bits = parse_usize(key, value)?
            }
            "session.cascade_passes" => self.session.cascade_passes = parse_usize(key, value)?,
            "session.min_counts" => {
                self.session.visibility_policy.min_counts = parse_usize(key, value)? as u64
            }
            "session.unreliable_visibility" => {
                self.session.unreliable_visibility = match value {
                    "abort" => UnreliablePolicy::Abort,
                    v => match v.strip_prefix("floor:") {
                        Some(f) => UnreliablePolicy::ProceedWithFloor(parse_f64(key, f)?),
                        None => return Err(bad(key, value, "expected abort or floor:<v>")),
                    },
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = get_float(self, key) {
            return Some(v.to_string());
        }
        let s = match key {
            "run.seed" => self.seed.to_hex(),
            "sweep.lengths_km" => self
                .lengths_km
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "sweep.slots" => self.slots.to_string(),
            "sweep.analytic_only" => self.analytic_only.to_string(),
            "fibre.excess_loss_db" => match self.excess_loss_db {
                None => "auto".into(),
                Some(v) => v.to_string(),
            },
            "distillation.block_size" => self.session.block_size.to_string(),
            "distillation.epsilon_pa" => self.session.epsilon_pa.to_string(),
            "session.n_blocks" => self.session.n_blocks.to_string(),
            "session.bootstrap_bits" => self.session.bootstrap_bits.to_string(),
            "session.auth_reserve_bits" => self.session.auth_reserve_bits.to_string(),
            "session.cascade_passes" => self.session.cascade_passes.to_string(),
            "session.min_counts" => self.session.visibility_policy.min_counts.to_string(),
            "session.unreliable_visibility" => match self.session.unreliable_visibility {
                UnreliablePolicy::Abort => "abort".into(),
                UnreliablePolicy::ProceedWithFloor(f) => format!("floor:{f}"),
            },
            _ => return None,
        };
        Some(s)
    }

    /// Parses `key = value` lines. `#` starts a comment.
    pub fn parse_into(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if let Some(&first) = seen.get(key) {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    first,
                    second: i + 1,
                });
            }
            seen.insert(key.to_string(), i + 1);
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.parse_into(text)?;
        Ok(cfg)
    }

    /// The effective configuration, one `key = value` line per key. Parsing
    /// it back gives an identical configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::keys() {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    /// First 16 hex digits of SHA-256 over [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The configured link at `length_km`.
    pub fn link_at(&self, length_km: f64) -> LinkParams {
        let mut link = self.link;
        link.fibre.length_km = length_km;
        link.fibre.excess_loss_db = self
            .excess_loss_db
            .unwrap_or(ULL_EXCESS_DB_AT_250_KM * length_km / 250.0);
        link
    }

    pub fn link(&self) -> LinkParams {
        self.link_at(self.link.fibre.length_km)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lengths_km.is_empty() {
            return Err(ConfigError::Invalid("sweep.lengths_km is empty".into()));
        }
        if self.lengths_km.iter().any(|&l| l <= 0.0) {
            return Err(ConfigError::Invalid(
                "sweep.lengths_km must be strictly positive".into(),
            ));
        }
        if self.lengths_km.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid(
                "sweep.lengths_km must be strictly increasing".into(),
            ));
        }
        if self.model.leak_efficiency.is_nan() || self.model.leak_efficiency < 1.0 {
            return Err(ConfigError::Invalid(
                "distillation.leak_efficiency must be >= 1".into(),
            ));
        }
        if let UnreliablePolicy::ProceedWithFloor(f) = self.session.unreliable_visibility {
            if !(0.0..=1.0).contains(&f) {
                return Err(ConfigError::Invalid(
                    "session.unreliable_visibility floor must lie in [0, 1]".into(),
                ));
            }
        }
        for &l in &self.lengths_km {
            self.link_at(l)
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.link()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.session
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.session
            .alignment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("source.mu", "0.31").unwrap();
        cfg.set("sweep.lengths_km", "50, 75.5,200").unwrap();
        cfg.set("fibre.excess_loss_db", "2.25").unwrap();
        cfg.set("session.unreliable_visibility", "abort").unwrap();
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(back.lengths_km, vec![50.0, 75.5, 200.0]);
    }

    #[test]
    fn every_key_reads_back() {
        let cfg = ExperimentConfig::default();
        for key in ExperimentConfig::keys() {
            let mut other = ExperimentConfig::default();
            other.set(key, &cfg.get(key).unwrap()).unwrap();
            assert_eq!(other.to_text(), cfg.to_text(), "{key}");
        }
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = ExperimentConfig::from_text("# header\n\nsource.mu = 0.4 # trailing\n").unwrap();
        assert_eq!(cfg.link.source.mu, 0.4);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert_eq!(
            ExperimentConfig::from_text("source.muu = 0.4").unwrap_err(),
            ConfigError::UnknownKey("source.muu".into())
        );
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(
            ExperimentConfig::from_text("source.mu 0.4"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            ExperimentConfig::from_text("source.mu = x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_text("source.mu = 1\nsource.mu = 2"),
            Err(ConfigError::Duplicate { .. })
        ));
    }

    #[test]
    fn unsorted_lengths_fail_validation() {
        let cfg = ExperimentConfig::from_text("sweep.lengths_km = 200, 100").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_text("sweep.lengths_km = 0, 100").unwrap();
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn excess_loss_scales_unless_fixed() {
        let mut cfg = ExperimentConfig::default();
        assert!((cfg.link_at(125.0).fibre.excess_loss_db - 0.8).abs() < 1e-12);
        cfg.set("fibre.excess_loss_db", "3").unwrap();
        assert_eq!(cfg.link_at(125.0).fibre.excess_loss_db, 3.0);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.set("source.mu", "0.6").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
