//! Coherent one-way (COW) quantum key distribution: a seed-deterministic link
//! simulator and the classical key-distillation stack behind it.

pub mod bits;
pub mod distillation;
pub mod photonic;
pub mod protocol;
pub mod randomness;
pub mod session;
