//! Cascade interactive error correction.
//!
//! Bob holds the noisy key and drives the protocol; Alice answers parity
//! queries through a [`ParityChannel`]. Every pass splits a (shuffled) copy of
//! the key into blocks. The top-level parities of all passes are fetched in
//! the first exchange. Odd blocks are then bisected in lockstep, one query
//! per block per exchange, as long as their positions do not overlap another
//! running bisection. Each corrected bit toggles the parity of the blocks
//! containing it in every pass, which re-opens blocks in other passes
//! (backtracking).

use thiserror::Error;

use crate::bits::BitString;
use crate::randomness::{BitSource, Seed};

#[derive(Debug, Error, PartialEq)]
pub enum CascadeError {
    #[error("parity channel failed: {0}")]
    Transport(String),
    #[error("peer answered {got} parities for {asked} queries")]
    AnswerCount { asked: usize, got: usize },
    #[error("parity query out of range: {0:?}")]
    BadQuery(ParityQuery),
    #[error("key of {n} bits is shorter than the first block ({block})")]
    KeyTooShort { n: usize, block: usize },
    #[error("keys still differ in {0} positions after reconciliation")]
    ResidualErrors(usize),
    #[error("invalid cascade configuration: {0}")]
    Config(String),
}

/// How the first-pass block size is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockRule {
    /// ceil(0.73 / max(Q, 0.001)), clamped to [8, n/2].
    Standard,
    Fixed(usize),
}

pub const QBER_FLOOR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub num_passes: usize,
    pub initial_block: BlockRule,
    pub shuffle_seed: Seed,
}

impl CascadeConfig {
    pub fn new(shuffle_seed: Seed) -> Self {
        Self {
            num_passes: 4,
            initial_block: BlockRule::Standard,
            shuffle_seed,
        }
    }

    /// Block size for every pass; sizes double and stay at or below n/2.
    pub fn block_sizes(&self, n: usize, qber_estimate: f64) -> Result<Vec<usize>, CascadeError> {
        if self.num_passes == 0 {
            return Err(CascadeError::Config("num_passes must be >= 1".into()));
        }
        let half = (n / 2).max(2);
        let first = match self.initial_block {
            BlockRule::Standard => {
                let k = (0.73 / qber_estimate.max(QBER_FLOOR)).ceil() as usize;
                k.max(8).min(half)
            }
            BlockRule::Fixed(k) => {
                if k < 2 {
                    return Err(CascadeError::Config(format!("initial block {k} < 2")));
                }
                k
            }
        };
        if n < first {
            return Err(CascadeError::KeyTooShort { n, block: first });
        }
        let cap = half.max(first);
        let mut sizes = vec![first];
        for _ in 1..self.num_passes {
            let prev = *sizes.last().unwrap();
            sizes.push((prev * 2).min(cap));
        }
        Ok(sizes)
    }
}

/// Parity of Alice's bits at shuffled offsets `[start, end)` of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParityQuery {
    pub pass: u16,
    pub block: u32,
    pub start: u32,
    pub end: u32,
}

/// One disclosed parity, as it appears in the audit transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParityRecord {
    pub pass: u16,
    pub block: u32,
    pub start: u32,
    pub end: u32,
    pub parity: bool,
}

/// One request/response round trip with the key holder.
pub trait ParityChannel {
    fn exchange(&mut self, queries: &[ParityQuery]) -> Result<Vec<bool>, CascadeError>;
}

/// Block structure and shuffles shared by both sides.
#[derive(Debug, Clone)]
pub struct CascadeLayout {
    n: usize,
    sizes: Vec<usize>,
    // perm[p][i] = original index at shuffled position i
    perm: Vec<Vec<u32>>,
    inv: Vec<Vec<u32>>,
}

impl CascadeLayout {
    /// Pass 0 keeps the original order; later passes use a Fisher-Yates
    /// shuffle drawn from `seed` forked by pass number.
    pub fn new(n: usize, sizes: Vec<usize>, seed: Seed) -> Self {
        let root = BitSource::new(seed);
        let mut perm = Vec::with_capacity(sizes.len());
        let mut inv = Vec::with_capacity(sizes.len());
        for p in 0..sizes.len() {
            let mut order: Vec<u32> = (0..n as u32).collect();
            if p > 0 {
                let mut src = root.fork_str(&format!("cascade-pass-{p}"));
                for i in (1..n).rev() {
                    let j = src.next_below(i as u64 + 1) as usize;
                    order.swap(i, j);
                }
            }
            let mut back = vec![0u32; n];
            for (i, &x) in order.iter().enumerate() {
                back[x as usize] = i as u32;
            }
            perm.push(order);
            inv.push(back);
        }
        Self {
            n,
            sizes,
            perm,
            inv,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn passes(&self) -> usize {
        self.sizes.len()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_blocks(&self, pass: usize) -> usize {
        self.n.div_ceil(self.sizes[pass])
    }

    pub fn block_len(&self, pass: usize, block: usize) -> usize {
        let start = block * self.sizes[pass];
        (start + self.sizes[pass]).min(self.n) - start
    }

    fn block_of(&self, pass: usize, index: usize) -> usize {
        self.inv[pass][index] as usize / self.sizes[pass]
    }

    fn original_index(&self, pass: usize, block: usize, offset: usize) -> usize {
        self.perm[pass][block * self.sizes[pass] + offset] as usize
    }

    pub fn parity(
        &self,
        key: &BitString,
        pass: usize,
        block: usize,
        start: usize,
        end: usize,
    ) -> bool {
        let base = block * self.sizes[pass];
        self.perm[pass][base + start..base + end]
            .iter()
            .fold(false, |acc, &i| acc ^ key.get(i as usize))
    }

    fn check(&self, q: &ParityQuery) -> Result<(), CascadeError> {
        let pass = q.pass as usize;
        let ok = pass < self.passes()
            && (q.block as usize) < self.num_blocks(pass)
            && q.start < q.end
            && q.end as usize <= self.block_len(pass, q.block as usize);
        if ok {
            Ok(())
        } else {
            Err(CascadeError::BadQuery(*q))
        }
    }
}

/// Alice's side: answers parity queries against the reference key.
#[derive(Debug, Clone)]
pub struct CascadeResponder {
    key: BitString,
    layout: CascadeLayout,
}

impl CascadeResponder {
    pub fn new(key: BitString, layout: CascadeLayout) -> Self {
        Self { key, layout }
    }

    pub fn answer(&self, queries: &[ParityQuery]) -> Result<Vec<bool>, CascadeError> {
        queries
            .iter()
            .map(|q| {
                self.layout.check(q)?;
                Ok(self.layout.parity(
                    &self.key,
                    q.pass as usize,
                    q.block as usize,
                    q.start as usize,
                    q.end as usize,
                ))
            })
            .collect()
    }
}

/// In-process channel to a [`CascadeResponder`] that records the transcript.
#[derive(Debug)]
pub struct LocalParityChannel {
    responder: CascadeResponder,
    pub transcript: Vec<ParityRecord>,
    pub exchanges: usize,
}

impl LocalParityChannel {
    pub fn new(alice_key: BitString, layout: CascadeLayout) -> Self {
        Self {
            responder: CascadeResponder::new(alice_key, layout),
            transcript: Vec::new(),
            exchanges: 0,
        }
    }

    pub fn alice_key(&self) -> &BitString {
        &self.responder.key
    }
}

impl ParityChannel for LocalParityChannel {
    fn exchange(&mut self, queries: &[ParityQuery]) -> Result<Vec<bool>, CascadeError> {
        let answers = self.responder.answer(queries)?;
        self.exchanges += 1;
        self.transcript.extend(
            queries
                .iter()
                .zip(&answers)
                .map(|(q, &parity)| ParityRecord {
                    pass: q.pass,
                    block: q.block,
                    start: q.start,
                    end: q.end,
                    parity,
                }),
        );
        Ok(answers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub corrected: BitString,
    /// Parities disclosed by Alice.
    pub leaked_bits: usize,
    /// Request/response round trips, including the top-level exchange.
    pub parity_messages: usize,
    /// Bits Bob flipped; each flip removes exactly one error.
    pub corrections: usize,
    pub block_sizes: Vec<usize>,
}

impl CascadeOutcome {
    /// Compares against Alice's key (available only out of band, e.g. in tests).
    pub fn residual_errors(&self, alice_key: &BitString) -> Result<(), CascadeError> {
        match self.corrected.hamming_distance(alice_key) {
            0 => Ok(()),
            d => Err(CascadeError::ResidualErrors(d)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bisection {
    pass: usize,
    block: usize,
    lo: usize,
    hi: usize,
    // Alice's parity of [lo, hi)
    alice: bool,
}

struct BobState<'a> {
    layout: &'a CascadeLayout,
    key: BitString,
    // Bob's current parity per pass and block
    parity: Vec<Vec<bool>>,
    corrections: usize,
}

impl BobState<'_> {
    fn range_parity(&self, b: &Bisection, lo: usize, hi: usize) -> bool {
        self.layout.parity(&self.key, b.pass, b.block, lo, hi)
    }

    fn flip(&mut self, pass: usize, block: usize, offset: usize) {
        let x = self.layout.original_index(pass, block, offset);
        self.key.flip(x);
        self.corrections += 1;
        for p in 0..self.layout.passes() {
            let blk = self.layout.block_of(p, x);
            self.parity[p][blk] ^= true;
        }
    }
}

/// Runs Cascade from Bob's side. `qber_estimate` selects block sizes and must
/// be known to Alice as well (in a session it travels with the shuffle seed).
pub fn cascade_reconcile<C: ParityChannel>(
    bob_key: &BitString,
    qber_estimate: f64,
    config: &CascadeConfig,
    channel: &mut C,
) -> Result<CascadeOutcome, CascadeError> {
    let n = bob_key.len();
    let sizes = config.block_sizes(n, qber_estimate)?;
    let layout = CascadeLayout::new(n, sizes, config.shuffle_seed);
    reconcile_with_layout(bob_key, &layout, channel)
}

pub fn reconcile_with_layout<C: ParityChannel>(
    bob_key: &BitString,
    layout: &CascadeLayout,
    channel: &mut C,
) -> Result<CascadeOutcome, CascadeError> {
    let passes = layout.passes();
    let n = layout.len();
    let mut state = BobState {
        layout,
        key: bob_key.clone(),
        parity: (0..passes)
            .map(|p| {
                (0..layout.num_blocks(p))
                    .map(|b| layout.parity(bob_key, p, b, 0, layout.block_len(p, b)))
                    .collect()
            })
            .collect(),
        corrections: 0,
    };

    let mut leaked = 0usize;
    let mut rounds = 0usize;
    let mut ask = |queries: &[ParityQuery], leaked: &mut usize, rounds: &mut usize| {
        let answers = channel.exchange(queries)?;
        if answers.len() != queries.len() {
            return Err(CascadeError::AnswerCount {
                asked: queries.len(),
                got: answers.len(),
            });
        }
        *leaked += answers.len();
        *rounds += 1;
        Ok(answers)
    };

    let top_queries: Vec<ParityQuery> = (0..passes)
        .flat_map(|p| {
            (0..layout.num_blocks(p)).map(move |b| ParityQuery {
                pass: p as u16,
                block: b as u32,
                start: 0,
                end: layout.block_len(p, b) as u32,
            })
        })
        .collect();
    let top_answers = if top_queries.is_empty() {
        Vec::new()
    } else {
        ask(&top_queries, &mut leaked, &mut rounds)?
    };
    let mut alice_top: Vec<Vec<bool>> = Vec::with_capacity(passes);
    let mut it = top_answers.into_iter();
    for p in 0..passes {
        alice_top.push(it.by_ref().take(layout.num_blocks(p)).collect());
    }

    let mut busy: Vec<Vec<bool>> = (0..passes)
        .map(|p| vec![false; layout.num_blocks(p)])
        .collect();
    let mut active: Vec<Bisection> = Vec::new();
    // original positions inside some active bisection range
    let mut covered = vec![false; n];

    loop {
        covered.iter_mut().for_each(|c| *c = false);
        for b in &active {
            for off in b.lo..b.hi {
                covered[layout.original_index(b.pass, b.block, off)] = true;
            }
        }
        // Open odd blocks, earlier passes first, skipping any block that
        // overlaps a running bisection so two searches never chase the same
        // error.
        for p in 0..passes {
            for b in 0..layout.num_blocks(p) {
                if busy[p][b] || alice_top[p][b] == state.parity[p][b] {
                    continue;
                }
                let len = layout.block_len(p, b);
                if (0..len).any(|o| covered[layout.original_index(p, b, o)]) {
                    continue;
                }
                for o in 0..len {
                    covered[layout.original_index(p, b, o)] = true;
                }
                busy[p][b] = true;
                active.push(Bisection {
                    pass: p,
                    block: b,
                    lo: 0,
                    hi: len,
                    alice: alice_top[p][b],
                });
            }
        }

        // Drop ranges whose mismatch was cleared by another correction and
        // settle single-bit ranges without asking.
        let mut pending = Vec::with_capacity(active.len());
        for b in active.drain(..) {
            if b.alice == state.range_parity(&b, b.lo, b.hi) {
                busy[b.pass][b.block] = false;
            } else if b.hi - b.lo == 1 {
                state.flip(b.pass, b.block, b.lo);
                busy[b.pass][b.block] = false;
            } else {
                pending.push(b);
            }
        }

        if pending.is_empty() {
            let odd_left = (0..passes)
                .any(|p| (0..layout.num_blocks(p)).any(|b| alice_top[p][b] != state.parity[p][b]));
            if odd_left {
                continue;
            }
            break;
        }

        let queries: Vec<ParityQuery> = pending
            .iter()
            .map(|b| ParityQuery {
                pass: b.pass as u16,
                block: b.block as u32,
                start: b.lo as u32,
                end: (b.lo + (b.hi - b.lo) / 2) as u32,
            })
            .collect();
        let answers = ask(&queries, &mut leaked, &mut rounds)?;

        for (mut b, alice_left) in pending.into_iter().zip(answers) {
            let mid = b.lo + (b.hi - b.lo) / 2;
            let alice_right = b.alice ^ alice_left;
            if alice_left != state.range_parity(&b, b.lo, mid) {
                b.hi = mid;
                b.alice = alice_left;
            } else if alice_right != state.range_parity(&b, mid, b.hi) {
                b.lo = mid;
                b.alice = alice_right;
            } else {
                busy[b.pass][b.block] = false;
                continue;
            }
            if b.hi - b.lo == 1 {
                state.flip(b.pass, b.block, b.lo);
                busy[b.pass][b.block] = false;
            } else {
                active.push(b);
            }
        }
    }

    Ok(CascadeOutcome {
        corrected: state.key,
        leaked_bits: leaked,
        parity_messages: rounds,
        corrections: state.corrections,
        block_sizes: layout.block_sizes().to_vec(),
    })
}

/// Convenience wrapper that reconciles against a local copy of Alice's key.
pub fn reconcile_local(
    alice_key: &BitString,
    bob_key: &BitString,
    qber_estimate: f64,
    config: &CascadeConfig,
) -> Result<(CascadeOutcome, Vec<ParityRecord>), CascadeError> {
    let sizes = config.block_sizes(bob_key.len(), qber_estimate)?;
    let layout = CascadeLayout::new(bob_key.len(), sizes, config.shuffle_seed);
    let mut channel = LocalParityChannel::new(alice_key.clone(), layout.clone());
    let outcome = reconcile_with_layout(bob_key, &layout, &mut channel)?;
    Ok((outcome, channel.transcript))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distillation::binary_entropy;

    fn noisy_pair(n: usize, q: f64, seed: u64) -> (BitString, BitString) {
        let mut src = BitSource::from_u64(seed);
        let alice = src.next_bits(n);
        let mut bob = alice.clone();
        for i in 0..n {
            if src.bernoulli(q).unwrap() {
                bob.flip(i);
            }
        }
        (alice, bob)
    }

    #[test]
    fn block_size_rule() {
        let cfg = CascadeConfig::new(Seed::from_u64(1));
        assert_eq!(
            cfg.block_sizes(32768, 0.02).unwrap(),
            vec![37, 74, 148, 296]
        );
        assert_eq!(cfg.block_sizes(32768, 0.0).unwrap()[0], 730);
        assert_eq!(cfg.block_sizes(32768, 0.5).unwrap()[0], 8);
        assert_eq!(cfg.block_sizes(20, 0.02).unwrap(), vec![10, 10, 10, 10]);
        let fixed = CascadeConfig {
            initial_block: BlockRule::Fixed(2),
            ..cfg.clone()
        };
        assert_eq!(fixed.block_sizes(8, 0.1).unwrap(), vec![2, 4, 4, 4]);
        assert!(matches!(
            CascadeConfig {
                num_passes: 0,
                ..cfg
            }
            .block_sizes(100, 0.1),
            Err(CascadeError::Config(_))
        ));
    }

    #[test]
    fn identical_keys_leak_only_top_level() {
        let (alice, _) = noisy_pair(1024, 0.0, 3);
        let cfg = CascadeConfig::new(Seed::from_u64(2));
        let (out, transcript) = reconcile_local(&alice, &alice, 0.02, &cfg).unwrap();
        assert_eq!(out.corrections, 0);
        let top: usize = (0..4).map(|p| 1024usize.div_ceil(out.block_sizes[p])).sum();
        assert_eq!(out.leaked_bits, top);
        assert_eq!(transcript.len(), top);
        assert_eq!(out.parity_messages, 1);
    }

    #[test]
    fn single_error_found_in_three_bisection_steps() {
        let alice = BitString::from_bit_str("10110010");
        for pos in 0..8 {
            let mut bob = alice.clone();
            bob.flip(pos);
            let cfg = CascadeConfig {
                num_passes: 1,
                initial_block: BlockRule::Fixed(8),
                shuffle_seed: Seed::from_u64(0),
            };
            let (out, transcript) = reconcile_local(&alice, &bob, 0.1, &cfg).unwrap();
            assert_eq!(out.corrected, alice);
            // one top-level parity, then log2(8) = 3 bisection parities
            assert_eq!(transcript.len(), 4);
            assert_eq!(out.parity_messages, 4);
        }
    }

    #[test]
    fn leak_recount_matches_transcript() {
        let (alice, bob) = noisy_pair(20_000, 0.03, 11);
        let cfg = CascadeConfig::new(Seed::from_u64(12));
        let (out, transcript) = reconcile_local(&alice, &bob, 0.03, &cfg).unwrap();
        assert_eq!(out.leaked_bits, transcript.len());
        out.residual_errors(&alice).unwrap();
    }

    #[test]
    fn corrects_moderate_noise_within_entropy_budget() {
        let n = 32_768;
        let (alice, bob) = noisy_pair(n, 0.02, 21);
        let errors = alice.hamming_distance(&bob);
        let cfg = CascadeConfig::new(Seed::from_u64(22));
        let (out, _) = reconcile_local(&alice, &bob, 0.02, &cfg).unwrap();
        out.residual_errors(&alice).unwrap();
        assert_eq!(out.corrections, errors);
        let bound = 1.3 * n as f64 * binary_entropy(0.02);
        assert!(
            (out.leaked_bits as f64) < bound,
            "{} vs {bound}",
            out.leaked_bits
        );
    }

    #[test]
    fn zero_estimate_with_errors_is_reported() {
        let (alice, bob) = noisy_pair(4096, 0.05, 8);
        let cfg = CascadeConfig {
            num_passes: 1,
            ..CascadeConfig::new(Seed::from_u64(1))
        };
        let (out, _) = reconcile_local(&alice, &bob, 0.0, &cfg).unwrap();
        assert!(matches!(
            out.residual_errors(&alice),
            Err(CascadeError::ResidualErrors(_))
        ));
    }

    #[test]
    fn bad_queries_are_rejected() {
        let layout = CascadeLayout::new(16, vec![8], Seed::from_u64(0));
        let r = CascadeResponder::new(BitString::zeros(16), layout);
        let q = ParityQuery {
            pass: 0,
            block: 2,
            start: 0,
            end: 1,
        };
        assert_eq!(r.answer(&[q]), Err(CascadeError::BadQuery(q)));
    }

    struct Broken;
    impl ParityChannel for Broken {
        fn exchange(&mut self, _: &[ParityQuery]) -> Result<Vec<bool>, CascadeError> {
            Err(CascadeError::Transport("link down".into()))
        }
    }

    #[test]
    fn transport_failure_propagates() {
        let cfg = CascadeConfig::new(Seed::from_u64(0));
        let err = cascade_reconcile(&BitString::zeros(100), 0.02, &cfg, &mut Broken).unwrap_err();
        assert_eq!(err, CascadeError::Transport("link down".into()));
    }
}
