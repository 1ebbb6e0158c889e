//! Classical post-processing: Cascade reconciliation, secret-length
//! accounting, Toeplitz privacy amplification and Wegman-Carter
//! authentication.

pub mod auth;
pub mod cascade;
pub mod secret;
pub mod toeplitz;

pub use auth::{wc_tag, wc_verify, AuthError, AuthKeyPool, TAG_BITS};
pub use cascade::{
    cascade_reconcile, BlockRule, CascadeConfig, CascadeError, CascadeOutcome, CascadeResponder,
    LocalParityChannel, ParityChannel, ParityQuery, ParityRecord,
};
pub use secret::{
    binary_entropy, compute_secret_length, eve_info_bound, DistillationRecord, EveBound,
};
pub use toeplitz::{toeplitz_hash, ToeplitzError, ToeplitzSeed};
