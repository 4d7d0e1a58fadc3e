//! Blocks, difficulty retargeting, fork choice and block validation.
//!
//! Difficulty follows the Homestead rule without the block-number term: the
//! child difficulty is `parent + (parent / 2048) * a` with
//! `a = max(-99, 1 - floor(dt / 10))`, where `dt` is the timestamp gap to the
//! parent. Blocks with `dt < 10` raise difficulty, `10 <= dt < 20` leaves it
//! unchanged and larger gaps lower it proportionally, saturating at `-99`.
//!
//! Fork choice picks the head with the greatest total difficulty. Exact ties
//! go to the head received first, then to the smaller block id.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::ids::{BlockId, NodeId, TxId};
use crate::ledger::{LedgerError, LedgerState, Transaction};

/// Floor applied after every adjustment.
pub const MIN_DIFFICULTY: u64 = 1024;
/// Adjustments are multiples of `parent_difficulty / DIFFICULTY_BOUND_DIVISOR`.
pub const DIFFICULTY_BOUND_DIVISOR: u64 = 2048;
/// Width of one adjustment step in seconds.
pub const ADJUSTMENT_STEP_S: f64 = 10.0;
/// Most negative adjustment multiplier.
pub const MAX_DOWNWARD_STEPS: i64 = 99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("block timestamp {block} is not after parent timestamp {parent}")]
    NonPositiveInterval { parent: f64, block: f64 },
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("parent of block {0} is not known")]
    UnknownParent(BlockId),
    #[error("block {0} does not extend its parent by exactly one")]
    BadNumber(BlockId),
    #[error("chain has no heads")]
    Empty,
    #[error("invalid genesis configuration: {0}")]
    InvalidGenesis(&'static str),
}

/// Adjustment multiplier `a` for a timestamp gap `dt >= 0`.
pub fn adjustment_factor(dt: f64) -> i64 {
    let steps = (dt / ADJUSTMENT_STEP_S).floor();
    if steps >= (MAX_DOWNWARD_STEPS + 1) as f64 {
        return -MAX_DOWNWARD_STEPS;
    }
    (1 - steps as i64).max(-MAX_DOWNWARD_STEPS)
}

/// Child difficulty for a gap `dt`, without the positivity check.
pub(crate) fn difficulty_for_gap(parent_difficulty: u64, dt: f64) -> u64 {
    let step = i128::from(parent_difficulty / DIFFICULTY_BOUND_DIVISOR);
    let next = i128::from(parent_difficulty) + step * i128::from(adjustment_factor(dt));
    next.clamp(i128::from(MIN_DIFFICULTY), i128::from(u64::MAX)) as u64
}

/// Difficulty of a block stamped `block_timestamp` on a parent with the given
/// difficulty and timestamp.
pub fn adjust_difficulty(
    parent_difficulty: u64,
    parent_timestamp: f64,
    block_timestamp: f64,
) -> Result<u64, ChainError> {
    let dt = block_timestamp - parent_timestamp;
    if !(dt > 0.0) {
        return Err(ChainError::NonPositiveInterval {
            parent: parent_timestamp,
            block: block_timestamp,
        });
    }
    Ok(difficulty_for_gap(parent_difficulty, dt))
}

/// Per-block transaction capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Capacity {
    #[default]
    Unlimited,
    Bits(u64),
}

impl Capacity {
    pub fn admits(self, bits: u64) -> bool {
        match self {
            Capacity::Unlimited => true,
            Capacity::Bits(cap) => bits <= cap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenesisConfig {
    pub nonce_seed: u64,
    pub initial_difficulty: u64,
    pub block_capacity: Capacity,
}

impl Default for GenesisConfig {
    fn default() -> Self {
        Self {
            nonce_seed: 0x42,
            initial_difficulty: 0x40_0000,
            block_capacity: Capacity::Unlimited,
        }
    }
}

impl GenesisConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.initial_difficulty < MIN_DIFFICULTY {
            return Err(ChainError::InvalidGenesis("initial_difficulty below minimum difficulty"));
        }
        if self.block_capacity == Capacity::Bits(0) {
            return Err(ChainError::InvalidGenesis("block_capacity_bits must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockHeader {
    pub number: u64,
    pub parent: Option<BlockId>,
    pub timestamp: f64,
    pub difficulty: u64,
    /// `None` only for genesis.
    pub miner: Option<NodeId>,
    pub capacity: Capacity,
    pub nonce_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn is_genesis(&self) -> bool {
        self.header.parent.is_none()
    }

    pub fn number(&self) -> u64 {
        self.header.number
    }

    pub fn timestamp(&self) -> f64 {
        self.header.timestamp
    }

    pub fn difficulty(&self) -> u64 {
        self.header.difficulty
    }

    /// Builds the child of `parent` mined by `miner` at `timestamp`, with the
    /// retargeted difficulty.
    pub fn child(
        parent: &Block,
        miner: NodeId,
        timestamp: f64,
        transactions: Vec<Transaction>,
    ) -> Result<Block, ChainError> {
        let difficulty =
            adjust_difficulty(parent.header.difficulty, parent.header.timestamp, timestamp)?;
        let number = parent.header.number + 1;
        Ok(Block {
            id: BlockId::derive(Some(miner), number, timestamp, parent.header.nonce_seed),
            header: BlockHeader {
                number,
                parent: Some(parent.id),
                timestamp,
                difficulty,
                miner: Some(miner),
                capacity: parent.header.capacity,
                nonce_seed: parent.header.nonce_seed,
            },
            transactions,
        })
    }

    /// Copy carrying only the header, as stored by light nodes.
    pub fn header_only(&self) -> Block {
        Block { id: self.id, header: self.header.clone(), transactions: Vec::new() }
    }

    pub fn tx_bits(&self) -> u64 {
        self.transactions.iter().map(|tx| tx.size_bits).sum()
    }
}

pub fn make_genesis(config: &GenesisConfig) -> Block {
    Block {
        id: BlockId::derive(None, 0, 0.0, config.nonce_seed),
        header: BlockHeader {
            number: 0,
            parent: None,
            timestamp: 0.0,
            difficulty: config.initial_difficulty,
            miner: None,
            capacity: config.block_capacity,
            nonce_seed: config.nonce_seed,
        },
        transactions: Vec::new(),
    }
}

#[derive(Clone, Debug)]
struct Entry {
    block: Arc<Block>,
    total: u128,
    received_at: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Duplicate,
    Added { new_canonical: bool },
}

/// One node's view of the block tree.
#[derive(Clone, Debug)]
pub struct ChainView {
    entries: HashMap<BlockId, Entry>,
    heads: BTreeSet<BlockId>,
    canonical: BlockId,
    genesis: BlockId,
}

impl ChainView {
    pub fn new(genesis: Arc<Block>, received_at: f64) -> Self {
        let id = genesis.id;
        let total = u128::from(genesis.header.difficulty);
        let mut entries = HashMap::new();
        entries.insert(id, Entry { block: genesis, total, received_at });
        Self { entries, heads: BTreeSet::from([id]), canonical: id, genesis: id }
    }

    pub fn genesis(&self) -> BlockId {
        self.genesis
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: BlockId) -> Option<&Arc<Block>> {
        self.entries.get(&id).map(|e| &e.block)
    }

    pub fn heads(&self) -> &BTreeSet<BlockId> {
        &self.heads
    }

    pub fn received_at(&self, id: BlockId) -> Option<f64> {
        self.entries.get(&id).map(|e| e.received_at)
    }

    /// Cached result of [`ChainView::select_canonical`].
    pub fn canonical_head(&self) -> BlockId {
        self.canonical
    }

    pub fn canonical_block(&self) -> &Arc<Block> {
        &self.entries[&self.canonical].block
    }

    /// Adds a block whose parent is already known.
    pub fn insert(&mut self, block: Arc<Block>, received_at: f64) -> Result<InsertOutcome, ChainError> {
        let id = block.id;
        if self.entries.contains_key(&id) {
            return Ok(InsertOutcome::Duplicate);
        }
        let parent_id = block.header.parent.ok_or(ChainError::UnknownParent(id))?;
        let parent = self.entries.get(&parent_id).ok_or(ChainError::UnknownParent(id))?;
        if parent.block.header.number + 1 != block.header.number {
            return Err(ChainError::BadNumber(id));
        }
        let total = parent.total + u128::from(block.header.difficulty);
        self.heads.remove(&parent_id);
        self.heads.insert(id);
        self.entries.insert(id, Entry { block, total, received_at });
        let new_canonical = self.prefer(id, self.canonical) == Ordering::Greater;
        if new_canonical {
            self.canonical = id;
        }
        Ok(InsertOutcome::Added { new_canonical })
    }

    /// Sum of difficulty from `head` back to genesis inclusive.
    pub fn total_difficulty(&self, head: BlockId) -> Result<u128, ChainError> {
        self.entries.get(&head).map(|e| e.total).ok_or(ChainError::UnknownBlock(head))
    }

    /// Head with the greatest total difficulty; ties go to the earliest
    /// received head, then to the smaller id.
    pub fn select_canonical(&self) -> Result<BlockId, ChainError> {
        self.heads
            .iter()
            .copied()
            .max_by(|a, b| self.prefer(*a, *b))
            .ok_or(ChainError::Empty)
    }

    fn prefer(&self, a: BlockId, b: BlockId) -> Ordering {
        let (ea, eb) = (&self.entries[&a], &self.entries[&b]);
        ea.total
            .cmp(&eb.total)
            .then_with(|| eb.received_at.total_cmp(&ea.received_at))
            .then_with(|| b.cmp(&a))
    }

    pub fn parent_of(&self, id: BlockId) -> Option<BlockId> {
        self.entries.get(&id).and_then(|e| e.block.header.parent)
    }

    /// Walks from `id` towards genesis, `id` first.
    pub fn ancestry(&self, id: BlockId) -> impl Iterator<Item = &Arc<Block>> + '_ {
        let mut next = self.entries.get(&id).map(|e| &e.block);
        std::iter::from_fn(move || {
            let cur = next?;
            next = cur.header.parent.and_then(|p| self.entries.get(&p)).map(|e| &e.block);
            Some(cur)
        })
    }

    /// Blocks from genesis to `head` inclusive.
    pub fn path(&self, head: BlockId) -> Result<Vec<Arc<Block>>, ChainError> {
        if !self.contains(head) {
            return Err(ChainError::UnknownBlock(head));
        }
        let mut path: Vec<_> = self.ancestry(head).cloned().collect();
        path.reverse();
        Ok(path)
    }

    /// True when `ancestor` lies on the path from `descendant` to genesis
    /// (a block counts as its own ancestor).
    pub fn is_ancestor(&self, ancestor: BlockId, descendant: BlockId) -> bool {
        let Some(target) = self.entries.get(&ancestor) else { return false };
        let number = target.block.header.number;
        self.ancestry(descendant)
            .take_while(|b| b.header.number >= number)
            .any(|b| b.id == ancestor)
    }

    /// Most recent common ancestor of two known blocks.
    pub fn fork_point(&self, a: BlockId, b: BlockId) -> Result<BlockId, ChainError> {
        let mut x = self.entries.get(&a).ok_or(ChainError::UnknownBlock(a))?;
        let mut y = self.entries.get(&b).ok_or(ChainError::UnknownBlock(b))?;
        loop {
            if x.block.id == y.block.id {
                return Ok(x.block.id);
            }
            let (xn, yn) = (x.block.header.number, y.block.header.number);
            if xn >= yn {
                x = &self.entries[&x.block.header.parent.ok_or(ChainError::UnknownBlock(a))?];
            }
            if yn >= xn {
                y = &self.entries[&y.block.header.parent.ok_or(ChainError::UnknownBlock(b))?];
            }
        }
    }

    /// Every known block, parents before children, in a deterministic order.
    pub fn blocks_in_order(&self) -> Vec<&Arc<Block>> {
        let mut all: Vec<_> = self.entries.values().map(|e| &e.block).collect();
        all.sort_by_key(|b| (b.header.number, b.id));
        all
    }
}

/// Machine-readable reason a block was rejected.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RejectReason {
    #[error("unknown-parent")]
    UnknownParent,
    #[error("bad-timestamp")]
    BadTimestamp,
    #[error("bad-difficulty: expected {expected}, got {got}")]
    BadDifficulty { expected: u64, got: u64 },
    #[error("bad-transaction: {tx}: {source}")]
    BadTransaction { tx: TxId, source: LedgerError },
    #[error("unauthorized-miner")]
    UnauthorizedMiner,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::UnknownParent => "unknown-parent",
            RejectReason::BadTimestamp => "bad-timestamp",
            RejectReason::BadDifficulty { .. } => "bad-difficulty",
            RejectReason::BadTransaction { .. } => "bad-transaction",
            RejectReason::UnauthorizedMiner => "unauthorized-miner",
        }
    }
}

/// Checks `block` against its parent in `chain` and the ledger state reached
/// at that parent.
pub fn validate_block(block: &Block, chain: &ChainView, ledger: &LedgerState) -> Result<(), RejectReason> {
    let parent = block
        .header
        .parent
        .and_then(|p| chain.get(p))
        .ok_or(RejectReason::UnknownParent)?;
    if parent.header.number + 1 != block.header.number {
        return Err(RejectReason::UnknownParent);
    }
    let expected = adjust_difficulty(parent.header.difficulty, parent.header.timestamp, block.header.timestamp)
        .map_err(|_| RejectReason::BadTimestamp)?;
    if expected != block.header.difficulty {
        return Err(RejectReason::BadDifficulty { expected, got: block.header.difficulty });
    }
    let miner = block.header.miner.ok_or(RejectReason::UnauthorizedMiner)?;
    if !ledger.is_admitted_miner(miner) {
        return Err(RejectReason::UnauthorizedMiner);
    }
    if !block.header.capacity.admits(block.tx_bits()) {
        let tx = block.transactions.last().map_or(TxId(0), |t| t.id);
        return Err(RejectReason::BadTransaction { tx, source: LedgerError::CapacityExceeded });
    }
    let mut scratch = ledger.clone();
    for tx in &block.transactions {
        scratch
            .apply_transaction(tx)
            .map_err(|source| RejectReason::BadTransaction { tx: tx.id, source })?;
    }
    Ok(())
}
