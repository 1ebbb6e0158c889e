//! The quantum phase of COW: Alice's frames, Monte Carlo transmission over a
//! [`LinkParams`](crate::photonic::LinkParams), Bob's decoding, sifting,
//! monitor-line visibility and the interferometer alignment loop.

mod alignment;
mod frame;
mod sifting;
mod transmission;

use thiserror::Error;

use crate::photonic::ModelError;
use crate::randomness::RandomnessError;

pub use alignment::{
    simulate_alignment, AlignmentController, AlignmentSample, AlignmentTrace, ScanFit, Stage,
};
pub use frame::{generate_frame, FrameReader, FrameSchedule, SlotKind};
pub use sifting::{
    bob_decode, coherent_monitor_counts, estimate_visibility, expected_coherent_darks, sift,
    Announcement, Decoded, SiftedBlock, VisibilityEstimate, VisibilityPolicy,
};
pub use transmission::{
    simulate_transmission, DataClick, DetectionRecord, Half, MonitorClick, Port,
};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("frame must contain at least one slot")]
    EmptyFrame,
    #[error("announced slot {slot} outside frame of {n_slots} slots")]
    SlotOutOfRange { slot: u64, n_slots: u64 },
    #[error("no monitor counts on coherent pulse pairs")]
    InsufficientStatistics,
    #[error("scan covers {covered:.3} rad of phase, need at least 2 pi")]
    ScanRange { covered: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
}
