//! Entropy and secret-length accounting.

/// h(p) in bits, with h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Upper bound on the eavesdropper's information per sifted bit given the
/// measured fringe visibility.
#[derive(Debug, Clone, Copy, Default)]
pub enum EveBound {
    /// h((1 + V) / 2).
    #[default]
    Coherence,
    /// Caller-supplied bound; must map [0, 1] into [0, 1].
    Custom(fn(f64) -> f64),
}

impl EveBound {
    pub fn eval(&self, visibility: f64) -> f64 {
        let v = visibility.clamp(0.0, 1.0);
        match self {
            EveBound::Coherence => eve_info_bound(v),
            EveBound::Custom(f) => f(v).clamp(0.0, 1.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EveBound::Coherence => "coherence",
            EveBound::Custom(_) => "custom",
        }
    }
}

/// Default bound h((1 + V) / 2): zero at perfect coherence, one at none.
pub fn eve_info_bound(visibility: f64) -> f64 {
    binary_entropy((1.0 + visibility.clamp(0.0, 1.0)) / 2.0)
}

/// m = max(0, floor(n (1 - I_E(V)) - leaked - 2 log2(1/eps))).
pub fn compute_secret_length(
    n: usize,
    leaked_bits: usize,
    visibility: f64,
    epsilon_pa: f64,
    bound: EveBound,
) -> usize {
    let margin = 2.0 * (1.0 / epsilon_pa).log2();
    let m = n as f64 * (1.0 - bound.eval(visibility)) - leaked_bits as f64 - margin;
    if m <= 0.0 {
        0
    } else {
        m.floor() as usize
    }
}

/// Outcome of distilling one sifted block.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillationRecord {
    pub block_id: u64,
    pub n_sifted: usize,
    pub qber: f64,
    /// Every parity disclosed during reconciliation.
    pub leaked_bits: usize,
    /// Visibility used for the bound (measured, or the floor when unreliable).
    pub visibility: f64,
    /// Estimate from the monitor line, before any floor policy.
    pub measured_visibility: f64,
    pub visibility_reliable: bool,
    pub eve_bound_per_bit: f64,
    pub secret_len: usize,
    pub epsilon_pa: f64,
    /// Simulated time at which the block finished distillation.
    pub sim_time_s: f64,
    pub decoy_detections: u64,
    pub auth_bits_used: usize,
    /// Both sides' final keys matched under the confirmation hash.
    pub confirmed: bool,
}
