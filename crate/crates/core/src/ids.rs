//! Identifier newtypes shared across modules.

use std::fmt;

/// Index of a node in a scenario's node list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Block identifier. A 64-bit digest standing in for a block hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u64);

impl BlockId {
    /// Digest of `(miner, number, timestamp, nonce_seed)`.
    ///
    /// Genesis passes `None` for the miner.
    pub fn derive(miner: Option<NodeId>, number: u64, timestamp: f64, nonce_seed: u64) -> Self {
        let miner = miner.map_or(u64::MAX, |m| u64::from(m.0));
        let mut h = mix64(nonce_seed ^ 0x6a09_e667_f3bc_c908);
        h = mix64(h ^ miner);
        h = mix64(h ^ number);
        h = mix64(h ^ timestamp.to_bits());
        BlockId(h)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub u64);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// SplitMix64 finaliser.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
