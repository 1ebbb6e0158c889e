//! Monte Carlo detection on Bob's data and monitor lines.
//!
//! Click probabilities per pulse are of order 10^-4 to 10^-7, so instead of
//! visiting every pulse the simulator thins a Bernoulli process: candidate
//! pulses are spaced by geometric gaps at the largest per-pulse event
//! probability `q_max`, and each candidate is accepted into one of the event
//! classes (data click, destructive or constructive monitor click) with
//! probability `p_class / q_max`. The result has the same law as the
//! pulse-by-pulse simulation.

use crate::photonic::{click_probabilities, monitor_base_prob, LinkParams};
use crate::randomness::BitSource;

use super::frame::FrameSchedule;
use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Half {
    First,
    Second,
}

impl Half {
    pub fn bit(self) -> bool {
        matches!(self, Half::Second)
    }

    fn of_pulse(pulse: u64) -> Half {
        if pulse.is_multiple_of(2) {
            Half::First
        } else {
            Half::Second
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    Destructive,
    Constructive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataClick {
    pub slot: u64,
    pub half: Half,
}

/// A monitor click in the time bin where pulse `pulse - 1` (long arm) and
/// pulse `pulse` (short arm) overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorClick {
    pub pulse: u64,
    pub port: Port,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionRecord {
    pub n_slots: u64,
    pub data_clicks: Vec<DataClick>,
    pub monitor_clicks: Vec<MonitorClick>,
    /// Pulses whose light was registered on the monitor line.
    pub routed_to_monitor: Vec<u64>,
    /// Data clicks dropped because both halves of a slot fired.
    pub double_clicks: u64,
    /// Data clicks lost to detector dead time.
    pub dead_time_losses: u64,
}

impl DetectionRecord {
    pub fn is_empty(&self) -> bool {
        self.data_clicks.is_empty() && self.monitor_clicks.is_empty()
    }
}

/// Event probabilities for one pulse, given its own and its predecessor's
/// intensity and whether it is the empty half of a data slot.
#[derive(Debug, Clone, Copy)]
struct PulseClass {
    data: f64,
    destructive: f64,
    constructive: f64,
}

impl PulseClass {
    fn total(&self) -> f64 {
        self.data + self.destructive + self.constructive
    }

    // keep the categorical draw valid in saturated regimes
    fn normalised(self) -> Self {
        let t = self.total();
        if t <= 1.0 {
            return self;
        }
        Self {
            data: self.data / t,
            destructive: self.destructive / t,
            constructive: self.constructive / t,
        }
    }
}

struct ClassTable {
    // index: (prev_full as usize) << 1 | cur_full as usize
    classes: [PulseClass; 4],
    q_max: f64,
}

impl ClassTable {
    fn new(link: &LinkParams) -> Self {
        let probs = click_probabilities(link);
        let t_b = link.protocol.monitor_fraction;
        let e = link.protocol.optical_error;
        let p0 = monitor_base_prob(link);
        let p_dm = link.monitor_detector.dark_prob();
        let cos = link.interferometer.phase_rad.cos();
        let v = link.interferometer.intrinsic_visibility;
        let data = |s: f64| (1.0 - t_b) * (1.0 - (1.0 - s) * (1.0 - probs.p_dark));
        let mut classes = [PulseClass {
            data: 0.0,
            destructive: 0.0,
            constructive: 0.0,
        }; 4];
        for prev in [false, true] {
            for cur in [false, true] {
                let signal = if cur {
                    probs.p_signal
                } else {
                    e * probs.p_signal
                };
                let (d, c) = match (prev, cur) {
                    (true, true) => (p0 * (1.0 - v * cos) / 2.0, p0 * (1.0 + v * cos) / 2.0),
                    (false, false) => (0.0, 0.0),
                    _ => (p0 / 4.0, p0 / 4.0),
                };
                classes[(prev as usize) << 1 | cur as usize] = PulseClass {
                    data: data(signal),
                    destructive: d + p_dm,
                    constructive: c + p_dm,
                }
                .normalised();
            }
        }
        let q_max = classes
            .iter()
            .map(PulseClass::total)
            .fold(0.0f64, f64::max)
            .min(1.0);
        Self { classes, q_max }
    }
}

/// Runs one frame through the link. Each pulse is tapped to the monitor with
/// probability `monitor_fraction`; the data detector clicks on full pulses
/// with `p_signal`, on the empty half of a data slot with `e_opt * p_signal`,
/// and on darks. Monitor clicks follow the pairwise interference rule, with
/// the first pulse of the frame treated as having an empty predecessor.
/// Slots where both halves click are discarded, and data clicks within the
/// dead time of the previous registered click are lost.
pub fn simulate_transmission(
    frame: &FrameSchedule,
    link: &LinkParams,
    source: &mut BitSource,
) -> Result<DetectionRecord, ProtocolError> {
    link.validate()?;
    let table = ClassTable::new(link);
    let n_pulses = frame.n_pulses();
    let dead_pulses = (link.data_detector.dead_time_s * link.source.pulse_rate_hz).ceil() as u64;
    let mut record = DetectionRecord {
        n_slots: frame.n_slots(),
        ..Default::default()
    };
    if table.q_max <= 0.0 {
        return Ok(record);
    }

    let mut reader = frame.reader();
    let mut raw_data: Vec<u64> = Vec::new();
    let mut last_data: Option<u64> = None;
    let mut pulse = 0u64;
    loop {
        let gap = source.geometric(table.q_max);
        pulse = match pulse.checked_add(gap) {
            Some(p) if p < n_pulses => p,
            _ => break,
        };
        let cur = reader.pulse(pulse);
        let prev = pulse > 0 && reader.pulse(pulse - 1);
        let class = table.classes[(prev as usize) << 1 | cur as usize];
        let u = source.next_f64() * table.q_max;
        if u < class.data {
            match last_data {
                Some(last) if pulse - last <= dead_pulses && dead_pulses > 0 => {
                    record.dead_time_losses += 1;
                }
                _ => {
                    raw_data.push(pulse);
                    last_data = Some(pulse);
                }
            }
        } else if pulse > 0 && u < class.data + class.destructive + class.constructive {
            let port = if u < class.data + class.destructive {
                Port::Destructive
            } else {
                Port::Constructive
            };
            record.monitor_clicks.push(MonitorClick { pulse, port });
            record.routed_to_monitor.push(pulse);
        }
        pulse += 1;
    }

    let mut i = 0;
    while i < raw_data.len() {
        let p = raw_data[i];
        if p.is_multiple_of(2) && raw_data.get(i + 1) == Some(&(p + 1)) {
            record.double_clicks += 2;
            i += 2;
            continue;
        }
        record.data_clicks.push(DataClick {
            slot: p / 2,
            half: Half::of_pulse(p),
        });
        i += 1;
    }
    Ok(record)
}
