//! Interferometer alignment on the monitor line: dark-count measurement,
//! wavelength scan, hold at the fringe maximum, then a dithering lock to the
//! minimum while the interferometer phase random-walks.
//!
//! Counts are post-selected on coherent time bins (both overlapping pulses
//! non-empty), where the fringe is `r_sig (1 - V cos theta) / 2 + r_dark`
//! with `theta = phi(t) + c * offset`.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rand_distr::{Distribution, Normal, Poisson};

use crate::photonic::{monitor_base_prob, LinkParams, ModelError};
use crate::randomness::BitSource;

use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Noise,
    Scan,
    HoldMax,
    LockedMin,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Noise => "noise",
            Stage::Scan => "scan",
            Stage::HoldMax => "hold_max",
            Stage::LockedMin => "locked_min",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentController {
    pub noise_time_s: f64,
    /// Scan length in laser offset steps.
    pub scan_range: f64,
    pub scan_step: f64,
    /// Integration time per scan point.
    pub scan_dwell_s: f64,
    /// Integration time per sample and per control update.
    pub settle_time_s: f64,
    pub hold_time_s: f64,
    pub lock_time_s: f64,
    /// Fraction of the estimated phase error corrected per update.
    pub gain: f64,
    /// Dither half-amplitude in offset steps; 0 disables feedback.
    pub dither_steps: f64,
    /// Averaging window for the reported visibility.
    pub window_s: f64,
}

impl Default for AlignmentController {
    fn default() -> Self {
        Self {
            noise_time_s: 10.0,
            scan_range: 300.0,
            scan_step: 1.0,
            scan_dwell_s: 0.1,
            settle_time_s: 1.0,
            hold_time_s: 10.0,
            lock_time_s: 7200.0,
            gain: 0.5,
            dither_steps: 2.0,
            window_s: 30.0,
        }
    }
}

impl AlignmentController {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("alignment.noise_time_s", self.noise_time_s),
            ("alignment.scan_step", self.scan_step),
            ("alignment.scan_dwell_s", self.scan_dwell_s),
            ("alignment.settle_time_s", self.settle_time_s),
            ("alignment.hold_time_s", self.hold_time_s),
            ("alignment.window_s", self.window_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Parameter { name, value: v });
            }
        }
        for (name, v) in [
            ("alignment.lock_time_s", self.lock_time_s),
            ("alignment.gain", self.gain),
            ("alignment.dither_steps", self.dither_steps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::Parameter { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentSample {
    pub time_s: f64,
    pub stage: Stage,
    pub laser_offset_step: f64,
    pub count_rate_hz: f64,
}

/// Least-squares fit `rate = mean + b cos(c x) + s sin(c x)` to the scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanFit {
    pub mean_rate_hz: f64,
    pub cos_coeff: f64,
    pub sin_coeff: f64,
    pub phase_per_step: f64,
}

impl ScanFit {
    pub fn amplitude(&self) -> f64 {
        self.cos_coeff.hypot(self.sin_coeff)
    }

    pub fn rate(&self, offset: f64) -> f64 {
        let x = self.phase_per_step * offset;
        self.mean_rate_hz + self.cos_coeff * x.cos() + self.sin_coeff * x.sin()
    }

    /// Offset in `[0, period)` of the fringe maximum.
    pub fn max_offset(&self) -> f64 {
        self.wrap(self.sin_coeff.atan2(self.cos_coeff))
    }

    pub fn min_offset(&self) -> f64 {
        self.wrap(self.sin_coeff.atan2(self.cos_coeff) + std::f64::consts::PI)
    }

    fn wrap(&self, phase: f64) -> f64 {
        let c = self.phase_per_step;
        let period = TAU / c.abs();
        (phase / c).rem_euclid(period)
    }

    fn fit(points: &[(f64, f64)], c: f64) -> Self {
        // normal equations for the basis [1, cos, sin]
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for &(x, y) in points {
            let row = [1.0, (c * x).cos(), (c * x).sin()];
            for i in 0..3 {
                atb[i] += row[i] * y;
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        let sol = solve3(ata, atb);
        Self {
            mean_rate_hz: sol[0],
            cos_coeff: sol[1],
            sin_coeff: sol[2],
            phase_per_step: c,
        }
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        if d == 0.0 {
            continue;
        }
        let pivot_row = a[col];
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / d;
                for (x, p) in a[row].iter_mut().zip(pivot_row).skip(col) {
                    *x -= f * p;
                }
                b[row] -= f * b[col];
            }
        }
    }
    [0, 1, 2].map(|i| if a[i][i] == 0.0 { 0.0 } else { b[i] / a[i][i] })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTrace {
    pub samples: Vec<AlignmentSample>,
    pub fit: ScanFit,
    pub noise_rate_hz: f64,
    pub max_rate_hz: f64,
    /// (window end time, visibility) over the locked stage.
    pub visibility_series: Vec<(f64, f64)>,
    /// Visibility over the whole locked stage.
    pub visibility: f64,
}

impl AlignmentTrace {
    pub fn min_visibility(&self) -> f64 {
        self.visibility_series
            .iter()
            .map(|&(_, v)| v)
            .fold(self.visibility, f64::min)
    }

    pub fn stage_samples(&self, stage: Stage) -> impl Iterator<Item = &AlignmentSample> {
        self.samples.iter().filter(move |s| s.stage == stage)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time_s,stage,laser_offset_step,count_rate_hz")?;
        for s in &self.samples {
            writeln!(
                out,
                "{:.3},{},{:.4},{:.3}",
                s.time_s,
                s.stage.name(),
                s.laser_offset_step,
                s.count_rate_hz
            )?;
        }
        Ok(())
    }
}

/// Fringe visibility from dark-subtracted maximum and minimum rates.
fn fringe_visibility(max: f64, min: f64, dark: f64) -> f64 {
    let hi = (max - dark).max(0.0);
    let lo = (min - dark).max(0.0);
    if hi + lo <= 0.0 {
        return 0.0;
    }
    ((hi - lo) / (hi + lo)).clamp(0.0, 1.0)
}

struct Bench<'a> {
    source: &'a mut BitSource,
    drift: Option<Normal<f64>>,
    signal_rate: f64,
    dark_rate: f64,
    visibility: f64,
    phase_per_step: f64,
    phase: f64,
    time: f64,
    samples: Vec<AlignmentSample>,
}

impl Bench<'_> {
    /// Integrates for `dt` at `offset`, records the sample and returns counts.
    fn measure(&mut self, stage: Stage, offset: f64, dt: f64, light: bool) -> u64 {
        let theta = self.phase + self.phase_per_step * offset;
        let mut rate = self.dark_rate;
        if light {
            rate += self.signal_rate * (1.0 - self.visibility * theta.cos()) / 2.0;
        }
        let mean = rate * dt;
        let counts = if mean > 0.0 {
            Poisson::new(mean)
                .map(|p| p.sample(&mut *self.source) as u64)
                .unwrap_or(0)
        } else {
            0
        };
        self.samples.push(AlignmentSample {
            time_s: self.time,
            stage,
            laser_offset_step: offset,
            count_rate_hz: counts as f64 / dt,
        });
        self.time += dt;
        if let Some(normal) = self.drift {
            self.phase += normal.sample(&mut *self.source) * dt.sqrt();
        }
        counts
    }
}

/// Runs the four alignment stages and reports the visibility from the held
/// maximum and the locked minimum.
pub fn simulate_alignment(
    link: &LinkParams,
    controller: &AlignmentController,
    source: &mut BitSource,
) -> Result<AlignmentTrace, ProtocolError> {
    link.validate()?;
    controller.validate()?;
    let c = link.interferometer.phase_per_wavelength_step;
    let covered = (controller.scan_range * c).abs();
    if covered < TAU || c == 0.0 {
        return Err(ProtocolError::ScanRange { covered });
    }

    let f = link.protocol.decoy_fraction;
    let coherent_bins_per_s = link.source.bit_rate_hz() * (f + (1.0 + f).powi(2) / 4.0);
    let sigma = link.interferometer.drift_std_rad_per_s;
    let drift = if sigma > 0.0 {
        Some(Normal::new(0.0, sigma).map_err(|_| ModelError::Parameter {
            name: "interferometer.drift_std_rad_per_s",
            value: sigma,
        })?)
    } else {
        None
    };
    let dt = controller.settle_time_s;
    let mut bench = Bench {
        source,
        drift,
        signal_rate: coherent_bins_per_s * monitor_base_prob(link),
        dark_rate: coherent_bins_per_s * link.monitor_detector.dark_prob(),
        visibility: link.interferometer.intrinsic_visibility,
        phase_per_step: c,
        phase: link.interferometer.phase_rad,
        time: 0.0,
        samples: Vec::new(),
    };

    // (i) laser blocked
    let n_noise = (controller.noise_time_s / dt).ceil().max(1.0) as usize;
    let noise_counts: u64 = (0..n_noise)
        .map(|_| bench.measure(Stage::Noise, 0.0, dt, false))
        .sum();
    let noise_rate = noise_counts as f64 / (n_noise as f64 * dt);

    // (ii) wavelength scan
    let n_scan = (controller.scan_range / controller.scan_step).floor() as usize + 1;
    let mut points = Vec::with_capacity(n_scan);
    for i in 0..n_scan {
        let x = i as f64 * controller.scan_step;
        let dwell = controller.scan_dwell_s;
        let counts = bench.measure(Stage::Scan, x, dwell, true);
        points.push((x, counts as f64 / dwell));
    }
    let fit = ScanFit::fit(&points, c);
    let fit_visibility = if fit.mean_rate_hz - noise_rate > 0.0 {
        (fit.amplitude() / (fit.mean_rate_hz - noise_rate)).min(0.999)
    } else {
        0.0
    };

    // (iii) hold at the maximum
    let x_max = fit.max_offset();
    let n_hold = (controller.hold_time_s / dt).ceil().max(1.0) as usize;
    let hold_counts: u64 = (0..n_hold)
        .map(|_| bench.measure(Stage::HoldMax, x_max, dt, true))
        .sum();
    let max_rate = hold_counts as f64 / (n_hold as f64 * dt);

    // (iv) lock to the minimum. With the fringe depth A = M - m known from
    // stage (iii), r(+d) - r(-d) = A sin(eps) sin(delta).
    let delta = c * controller.dither_steps;
    let depth = (max_rate - noise_rate).max(0.0) * 2.0 * fit_visibility / (1.0 + fit_visibility);
    let slope = depth * delta.sin();
    let mut x = fit.min_offset();
    let lock_start = bench.time;
    let lock_end = lock_start + controller.lock_time_s;
    let mut visibility_series = Vec::new();
    let (mut window_counts, mut window_time) = (0u64, 0.0f64);
    let (mut total_counts, mut total_time) = (0u64, 0.0f64);
    while bench.time + 1e-9 < lock_end {
        let counts = if controller.dither_steps > 0.0 {
            let plus = bench.measure(
                Stage::LockedMin,
                x + controller.dither_steps,
                dt / 2.0,
                true,
            );
            let minus = bench.measure(
                Stage::LockedMin,
                x - controller.dither_steps,
                dt / 2.0,
                true,
            );
            if slope > 0.0 {
                let diff = (plus as f64 - minus as f64) / (dt / 2.0);
                let eps = (diff / slope).clamp(-1.0, 1.0).asin();
                x -= controller.gain * eps / c;
            }
            plus + minus
        } else {
            bench.measure(Stage::LockedMin, x, dt, true)
        };
        window_counts += counts;
        window_time += dt;
        total_counts += counts;
        total_time += dt;
        if window_time + 1e-9 >= controller.window_s {
            let v = fringe_visibility(max_rate, window_counts as f64 / window_time, noise_rate);
            visibility_series.push((bench.time, v));
            window_counts = 0;
            window_time = 0.0;
        }
    }
    let visibility = if total_time > 0.0 {
        fringe_visibility(max_rate, total_counts as f64 / total_time, noise_rate)
    } else {
        0.0
    };

    Ok(AlignmentTrace {
        samples: bench.samples,
        fit,
        noise_rate_hz: noise_rate,
        max_rate_hz: max_rate,
        visibility_series,
        visibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_link() -> LinkParams {
        let mut link = LinkParams::ull(100.0);
        link.interferometer.drift_std_rad_per_s = 0.0;
        link
    }

    #[test]
    fn stages_in_order() {
        let ctl = AlignmentController {
            lock_time_s: 300.0,
            ..Default::default()
        };
        let trace =
            simulate_alignment(&LinkParams::ull(100.0), &ctl, &mut BitSource::from_u64(1)).unwrap();
        assert!(trace.samples.windows(2).all(|w| w[0].stage <= w[1].stage));
        assert!(trace.samples.windows(2).all(|w| w[0].time_s < w[1].time_s));
        for stage in [Stage::Noise, Stage::Scan, Stage::HoldMax, Stage::LockedMin] {
            assert!(trace.stage_samples(stage).next().is_some(), "{stage:?}");
        }
        assert!((0.0..=1.0).contains(&trace.visibility));
    }

    #[test]
    fn short_scan_is_rejected() {
        // 5 rad at 0.05 rad per step
        let ctl = AlignmentController {
            scan_range: 100.0,
            ..Default::default()
        };
        let err = simulate_alignment(&quiet_link(), &ctl, &mut BitSource::from_u64(1)).unwrap_err();
        assert!(matches!(err, ProtocolError::ScanRange { .. }));
    }

    #[test]
    fn perfect_fringe_locks_to_dark_level() {
        let mut link = quiet_link();
        link.interferometer.intrinsic_visibility = 1.0;
        let ctl = AlignmentController {
            dither_steps: 0.0,
            lock_time_s: 600.0,
            ..Default::default()
        };
        let trace = simulate_alignment(&link, &ctl, &mut BitSource::from_u64(2)).unwrap();
        let locked: Vec<f64> = trace
            .stage_samples(Stage::LockedMin)
            .map(|s| s.count_rate_hz)
            .collect();
        let mean = locked.iter().sum::<f64>() / locked.len() as f64;
        // dark rate plus at most the quantisation residual of the fit
        assert!(
            mean < trace.noise_rate_hz + 3.0,
            "{mean} vs {}",
            trace.noise_rate_hz
        );
        assert!(trace.visibility > 0.995, "{}", trace.visibility);
    }

    #[test]
    fn scan_matches_generating_fringe() {
        let link = quiet_link();
        let ctl = AlignmentController {
            lock_time_s: 0.0,
            ..Default::default()
        };
        let trace = simulate_alignment(&link, &ctl, &mut BitSource::from_u64(3)).unwrap();
        let f = link.protocol.decoy_fraction;
        let bins = link.source.bit_rate_hz() * (f + (1.0 + f).powi(2) / 4.0);
        let sig = bins * monitor_base_prob(&link);
        let dark = bins * link.monitor_detector.dark_prob();
        let v = link.interferometer.intrinsic_visibility;
        let c = link.interferometer.phase_per_wavelength_step;
        let mut chi2 = 0.0;
        let mut n = 0.0;
        for s in trace.stage_samples(Stage::Scan) {
            let model = sig * (1.0 - v * (c * s.laser_offset_step).cos()) / 2.0 + dark;
            // Poisson variance of a rate over one dwell is model / dwell
            chi2 += (s.count_rate_hz - model).powi(2) * ctl.scan_dwell_s / model;
            n += 1.0;
        }
        let reduced = chi2 / n;
        assert!((0.7..1.3).contains(&reduced), "{reduced}");
        // recovered fringe agrees with the generator
        assert!((trace.fit.amplitude() / (sig * v / 2.0) - 1.0).abs() < 0.02);
        assert!(
            trace.fit.min_offset().abs() < 1.0 || (trace.fit.min_offset() - TAU / c).abs() < 1.0
        );
    }

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let ctl = AlignmentController {
            lock_time_s: 20.0,
            ..Default::default()
        };
        let trace = simulate_alignment(&quiet_link(), &ctl, &mut BitSource::from_u64(4)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("time_s,stage,laser_offset_step,count_rate_hz")
        );
        assert_eq!(lines.count(), trace.samples.len());
    }
}
