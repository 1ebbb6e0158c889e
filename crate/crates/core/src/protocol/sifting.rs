//! Bob's decoding, the public sifting step and the monitor-line visibility.

use crate::bits::BitString;
use crate::photonic::{visibility, LinkParams};

use super::frame::{FrameSchedule, SlotKind};
use super::transmission::{DetectionRecord, MonitorClick, Port};
use super::ProtocolError;

/// What Bob discloses for a click: the slot, never the half.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Announcement {
    pub slot: u64,
}

/// Bob's view after decoding: public announcements and the private bits in
/// the same order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decoded {
    pub announcements: Vec<Announcement>,
    pub bits: BitString,
}

impl Decoded {
    pub fn len(&self) -> usize {
        self.announcements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.announcements.is_empty()
    }
}

/// First half = 0, second half = 1.
pub fn bob_decode(record: &DetectionRecord) -> Decoded {
    let mut out = Decoded {
        announcements: Vec::with_capacity(record.data_clicks.len()),
        bits: BitString::with_capacity(record.data_clicks.len()),
    };
    for click in &record.data_clicks {
        out.announcements.push(Announcement { slot: click.slot });
        out.bits.push(click.half.bit());
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SiftedBlock {
    pub alice_bits: BitString,
    pub bob_bits: BitString,
    pub slot_indices: Vec<u64>,
    pub decoy_detection_count: u64,
}

impl SiftedBlock {
    pub fn len(&self) -> usize {
        self.alice_bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice_bits.is_empty()
    }

    /// Fraction of disagreeing positions. Only meaningful in simulation,
    /// where both sides are visible.
    pub fn error_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.alice_bits.hamming_distance(&self.bob_bits) as f64 / self.len() as f64
    }
}

/// Drops announcements on decoy slots and pairs up the rest.
pub fn sift(frame: &FrameSchedule, decoded: &Decoded) -> Result<SiftedBlock, ProtocolError> {
    let mut reader = frame.reader();
    let mut block = SiftedBlock::default();
    for (a, bob_bit) in decoded.announcements.iter().zip(decoded.bits.iter()) {
        if a.slot >= frame.n_slots() {
            return Err(ProtocolError::SlotOutOfRange {
                slot: a.slot,
                n_slots: frame.n_slots(),
            });
        }
        match reader.kind(a.slot) {
            SlotKind::Decoy => block.decoy_detection_count += 1,
            SlotKind::Data(bit) => {
                block.alice_bits.push(bit);
                block.bob_bits.push(bob_bit);
                block.slot_indices.push(a.slot);
            }
        }
    }
    Ok(block)
}

/// When a visibility estimate is trusted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityPolicy {
    pub min_counts: u64,
    /// Required ratio of coherent-pair counts to the expected dark counts in
    /// the same time bins.
    pub min_signal_to_dark: f64,
}

impl Default for VisibilityPolicy {
    fn default() -> Self {
        Self {
            min_counts: 100,
            min_signal_to_dark: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityEstimate {
    pub visibility: f64,
    pub destructive: u64,
    pub constructive: u64,
    pub expected_dark: f64,
    pub reliable: bool,
}

/// Monitor clicks in time bins where both overlapping pulses were non-empty
/// (inside decoys and across full-full bit boundaries), as
/// `(destructive, constructive)`.
pub fn coherent_monitor_counts(clicks: &[MonitorClick], frame: &FrameSchedule) -> (u64, u64) {
    let mut reader = frame.reader();
    let (mut destructive, mut constructive) = (0u64, 0u64);
    for click in clicks {
        if click.pulse == 0
            || click.pulse >= frame.n_pulses()
            || !(reader.pulse(click.pulse - 1) && reader.pulse(click.pulse))
        {
            continue;
        }
        match click.port {
            Port::Destructive => destructive += 1,
            Port::Constructive => constructive += 1,
        }
    }
    (destructive, constructive)
}

/// Expected monitor dark counts, both ports, in the coherent time bins of a
/// frame of `n_slots` with decoy fraction `f`: `f + ((1 + f) / 2)^2` such bins
/// per slot.
pub fn expected_coherent_darks(n_slots: u64, decoy_fraction: f64, link: &LinkParams) -> f64 {
    let f = decoy_fraction;
    let bins = n_slots as f64 * (f + (1.0 + f).powi(2) / 4.0);
    2.0 * bins * link.monitor_detector.dark_prob()
}

impl VisibilityEstimate {
    /// With the phase held at the destructive minimum the constructive port
    /// gives the fringe maximum and the destructive port the minimum.
    pub fn from_counts(
        destructive: u64,
        constructive: u64,
        expected_dark: f64,
        policy: &VisibilityPolicy,
    ) -> Result<Self, ProtocolError> {
        let total = destructive + constructive;
        if total == 0 {
            return Err(ProtocolError::InsufficientStatistics);
        }
        let v = if constructive >= destructive {
            visibility(constructive, destructive)?
        } else {
            0.0
        };
        let reliable =
            total >= policy.min_counts && total as f64 >= policy.min_signal_to_dark * expected_dark;
        Ok(Self {
            visibility: v,
            destructive,
            constructive,
            expected_dark,
            reliable,
        })
    }
}

/// Visibility over one frame's coherent monitor bins.
pub fn estimate_visibility(
    record: &DetectionRecord,
    frame: &FrameSchedule,
    link: &LinkParams,
    policy: &VisibilityPolicy,
) -> Result<VisibilityEstimate, ProtocolError> {
    let (d, c) = coherent_monitor_counts(&record.monitor_clicks, frame);
    let dark = expected_coherent_darks(frame.n_slots(), frame.decoy_fraction(), link);
    VisibilityEstimate::from_counts(d, c, dark, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;
    use crate::protocol::transmission::{DataClick, Half};
    use crate::protocol::{generate_frame, simulate_transmission};
    use crate::randomness::BitSource;

    fn record(clicks: &[(u64, Half)], n_slots: u64) -> DetectionRecord {
        DetectionRecord {
            n_slots,
            data_clicks: clicks
                .iter()
                .map(|&(slot, half)| DataClick { slot, half })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn empty_record_decodes_to_nothing() {
        assert!(bob_decode(&DetectionRecord::default()).is_empty());
    }

    #[test]
    fn first_half_is_zero() {
        let d = bob_decode(&record(&[(7, Half::First)], 10));
        assert_eq!(d.announcements, vec![Announcement { slot: 7 }]);
        assert!(!d.bits.get(0));
        let d = bob_decode(&record(&[(7, Half::Second)], 10));
        assert!(d.bits.get(0));
    }

    #[test]
    fn decode_preserves_order() {
        let clicks = [(9, Half::First), (2, Half::Second), (5, Half::First)];
        let d = bob_decode(&record(&clicks, 10));
        let slots: Vec<u64> = d.announcements.iter().map(|a| a.slot).collect();
        assert_eq!(slots, vec![9, 2, 5]);
        assert_eq!(d.bits, BitString::from_bit_str("010"));
    }

    #[test]
    fn decoy_announcements_only_count() {
        let mut src = BitSource::from_u64(1);
        let frame = generate_frame(&mut src, 50, 1.0).unwrap();
        let clicks: Vec<(u64, Half)> = (0..50).map(|s| (s, Half::First)).collect();
        let block = sift(&frame, &bob_decode(&record(&clicks, 50))).unwrap();
        assert!(block.is_empty());
        assert_eq!(block.decoy_detection_count, 50);
    }

    #[test]
    fn out_of_range_is_a_violation() {
        let mut src = BitSource::from_u64(1);
        let frame = generate_frame(&mut src, 5, 0.0).unwrap();
        let err = sift(&frame, &bob_decode(&record(&[(5, Half::First)], 5))).unwrap_err();
        assert_eq!(
            err,
            ProtocolError::SlotOutOfRange {
                slot: 5,
                n_slots: 5
            }
        );
    }

    #[test]
    fn slot_conservation() {
        let mut src = BitSource::from_u64(2);
        let frame = generate_frame(&mut src, 1_000, 0.4).unwrap();
        let clicks: Vec<(u64, Half)> = (0..1_000)
            .step_by(3)
            .map(|s| {
                (
                    s,
                    if s % 2 == 0 {
                        Half::First
                    } else {
                        Half::Second
                    },
                )
            })
            .collect();
        let decoded = bob_decode(&record(&clicks, 1_000));
        let block = sift(&frame, &decoded).unwrap();
        assert_eq!(
            block.len() as u64 + block.decoy_detection_count,
            decoded.len() as u64
        );
        let mut reader = frame.reader();
        assert!(block
            .slot_indices
            .iter()
            .all(|&s| !reader.kind(s).is_decoy()));
    }

    #[test]
    fn no_monitor_counts_is_an_error() {
        let mut src = BitSource::from_u64(3);
        let frame = generate_frame(&mut src, 10, 0.1).unwrap();
        let err = estimate_visibility(
            &DetectionRecord::default(),
            &frame,
            &LinkParams::default(),
            &VisibilityPolicy::default(),
        )
        .unwrap_err();
        assert_eq!(err, ProtocolError::InsufficientStatistics);
    }

    #[test]
    fn perfect_interferometer_reads_one() {
        let mut link = LinkParams::ull(0.0);
        link.interferometer.intrinsic_visibility = 1.0;
        link.monitor_detector.dark_rate_hz = 0.0;
        let mut src = BitSource::from_u64(4);
        let frame = generate_frame(&mut src, 200_000, 0.2).unwrap();
        let rec = simulate_transmission(&frame, &link, &mut src).unwrap();
        let est = estimate_visibility(&rec, &frame, &link, &VisibilityPolicy::default()).unwrap();
        assert_eq!(est.destructive, 0);
        assert_eq!(est.visibility, 1.0);
        assert!(est.reliable);
    }
}
