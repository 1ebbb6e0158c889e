//! Per-endpoint storage of confirmed secret blocks and the authentication
//! reserve.

use std::collections::VecDeque;

use crate::bits::BitString;
use crate::distillation::{AuthError, AuthKeyPool};

#[derive(Debug, Clone, PartialEq)]
pub struct StoredBlock {
    pub block_id: u64,
    pub bits: BitString,
}

/// `total_generated == stored + consumed` always holds, where `consumed` is
/// what has been moved into the authentication reserve.
#[derive(Debug, Clone)]
pub struct KeyStore {
    blocks: VecDeque<StoredBlock>,
    /// Bootstrap key plus anything moved over from confirmed blocks.
    pub auth: AuthKeyPool,
    total_generated: usize,
    total_consumed: usize,
}

impl KeyStore {
    pub fn new(bootstrap: BitString) -> Self {
        Self {
            blocks: VecDeque::new(),
            auth: AuthKeyPool::new(bootstrap),
            total_generated: 0,
            total_consumed: 0,
        }
    }

    /// Stores a confirmed block. Block ids must be fresh.
    pub fn deposit(&mut self, block_id: u64, bits: BitString) {
        assert!(
            self.blocks.iter().all(|b| b.block_id != block_id),
            "block id {block_id} stored twice"
        );
        self.total_generated += bits.len();
        self.blocks.push_back(StoredBlock { block_id, bits });
    }

    pub fn stored(&self) -> usize {
        self.blocks.iter().map(|b| b.bits.len()).sum()
    }

    pub fn total_generated(&self) -> usize {
        self.total_generated
    }

    pub fn total_consumed(&self) -> usize {
        self.total_consumed
    }

    pub fn blocks(&self) -> impl Iterator<Item = &StoredBlock> {
        self.blocks.iter()
    }

    /// Removes `n` bits of stored secret, oldest first.
    pub fn withdraw_auth(&mut self, n: usize) -> Result<BitString, AuthError> {
        let available = self.stored();
        if n > available {
            return Err(AuthError::KeyDepletion { need: n, available });
        }
        let mut out = BitString::with_capacity(n);
        while out.len() < n {
            let front = self.blocks.front_mut().expect("enough stored bits");
            let take = (n - out.len()).min(front.bits.len());
            out.extend_from(&front.bits.slice(0, take));
            front.bits = front.bits.slice(take, front.bits.len());
            if front.bits.is_empty() {
                self.blocks.pop_front();
            }
        }
        self.total_consumed += n;
        Ok(out)
    }

    /// Moves stored secret into the authentication reserve until it holds
    /// `target` unused bits, or the store runs dry. Returns the bits moved.
    pub fn top_up_auth(&mut self, target: usize) -> usize {
        let want = target
            .saturating_sub(self.auth.available())
            .min(self.stored());
        if want == 0 {
            return 0;
        }
        let bits = self.withdraw_auth(want).expect("bounded by stored");
        self.auth.replenish(&bits);
        want
    }
}
