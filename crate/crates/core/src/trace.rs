//! Everything a simulation run records, plus its CSV serialisation.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::Arc;

use crate::chain::Block;
use crate::ids::{BlockId, NodeId};
use crate::ledger::{LedgerState, Transaction};
use crate::scenario::NodeRole;

#[derive(Clone, Debug)]
pub struct BlockRecord {
    pub block: Arc<Block>,
    /// False when the block is off the final canonical chain.
    pub canonical: bool,
}

impl BlockRecord {
    pub fn stale(&self) -> bool {
        !self.canonical
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TxRecord {
    pub tx: Transaction,
    /// Timestamp of the canonical block that carries the transaction.
    pub included_at: Option<f64>,
    pub block: Option<BlockId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadChange {
    pub at: f64,
    pub node: NodeId,
    pub head: BlockId,
    pub number: u64,
    /// Blocks abandoned by the switch; zero for a plain extension.
    pub reorg_depth: u64,
}

/// One head advance seen by the observer node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObserverPoint {
    pub at: f64,
    pub number: u64,
    /// Timestamp gap between the new head and its parent.
    pub block_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyncEpisode {
    pub window_start: f64,
    pub disconnected_s: f64,
    pub backlog_blocks: u64,
    pub backlog_bits: u64,
    pub sync_delay_s: f64,
    /// False when the window closed before the backlog was fetched.
    pub completed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tick {
    pub at: f64,
    pub online_miners: u32,
    /// Distinct canonical heads among online relaying nodes.
    pub distinct_heads: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectedEvent {
    pub at: f64,
    pub node: NodeId,
    pub block: BlockId,
    pub code: &'static str,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeHead {
    pub node: NodeId,
    pub role: NodeRole,
    pub online: bool,
    pub head: BlockId,
}

#[derive(Clone, Debug)]
pub struct SimTrace {
    pub seed: u64,
    pub horizon_s: f64,
    pub warmup_s: f64,
    pub series_window: usize,
    pub genesis: Arc<Block>,
    /// Every mined block in mining order, genesis excluded.
    pub blocks: Vec<BlockRecord>,
    /// Final canonical chain, genesis first.
    pub canonical: Vec<BlockId>,
    pub txs: Vec<TxRecord>,
    pub head_changes: Vec<HeadChange>,
    pub observer: NodeId,
    pub observer_points: Vec<ObserverPoint>,
    pub sync: Vec<SyncEpisode>,
    pub ticks: Vec<Tick>,
    pub rejected: Vec<RejectedEvent>,
    /// Transactions miners dropped because they failed validation.
    pub dropped_txs: u64,
    pub final_heads: Vec<NodeHead>,
    pub genesis_ledger: LedgerState,
    pub canonical_ledger: LedgerState,
    index: HashMap<BlockId, Arc<Block>>,
}

impl SimTrace {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        seed: u64,
        horizon_s: f64,
        warmup_s: f64,
        series_window: usize,
        genesis: Arc<Block>,
        blocks: Vec<BlockRecord>,
        canonical: Vec<BlockId>,
        txs: Vec<TxRecord>,
        observer: NodeId,
        genesis_ledger: LedgerState,
        canonical_ledger: LedgerState,
    ) -> Self {
        let mut index: HashMap<BlockId, Arc<Block>> =
            blocks.iter().map(|r| (r.block.id, Arc::clone(&r.block))).collect();
        index.insert(genesis.id, Arc::clone(&genesis));
        SimTrace {
            seed,
            horizon_s,
            warmup_s,
            series_window,
            genesis,
            blocks,
            canonical,
            txs,
            head_changes: Vec::new(),
            observer,
            observer_points: Vec::new(),
            sync: Vec::new(),
            ticks: Vec::new(),
            rejected: Vec::new(),
            dropped_txs: 0,
            final_heads: Vec::new(),
            genesis_ledger,
            canonical_ledger,
            index,
        }
    }

    pub fn block(&self, id: BlockId) -> Option<&Arc<Block>> {
        self.index.get(&id)
    }

    pub fn canonical_blocks(&self) -> impl Iterator<Item = &Arc<Block>> + '_ {
        self.canonical.iter().map(|id| &self.index[id])
    }

    /// Chain from genesis to `head`.
    pub fn chain_to(&self, head: BlockId) -> Option<Vec<Arc<Block>>> {
        let mut out = Vec::new();
        let mut cur = Some(head);
        while let Some(id) = cur {
            let b = self.index.get(&id)?;
            cur = b.header.parent;
            out.push(Arc::clone(b));
        }
        out.reverse();
        Some(out)
    }

    /// Replays the chain ending at `head` from the genesis ledger.
    pub fn replay(&self, head: BlockId) -> Option<Result<LedgerState, crate::ledger::LedgerError>> {
        let chain = self.chain_to(head)?;
        let mut ledger = self.genesis_ledger.clone();
        for b in chain.iter().skip(1) {
            if let Err(e) = ledger.apply_block(b) {
                return Some(Err(e));
            }
        }
        Some(Ok(ledger))
    }

    pub fn write_blocks_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "number,id,parent,miner,timestamp,difficulty,stale")?;
        let g = &self.genesis;
        writeln!(w, "0,{},,,{},{},0", g.id, g.header.timestamp, g.header.difficulty)?;
        for r in &self.blocks {
            let h = &r.block.header;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                h.number,
                r.block.id,
                h.parent.map(|p| p.to_string()).unwrap_or_default(),
                h.miner.map(|m| m.0.to_string()).unwrap_or_default(),
                h.timestamp,
                h.difficulty,
                u8::from(r.stale())
            )?;
        }
        Ok(())
    }

    pub fn write_txs_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "id,kind,created_at,included_at,block")?;
        for r in &self.txs {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.tx.id,
                r.tx.kind,
                r.tx.created_at,
                r.included_at.map(|t| t.to_string()).unwrap_or_default(),
                r.block.map(|b| b.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }

    pub fn write_sync_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "window_start,disconnected_s,backlog_bits,sync_delay_s")?;
        for s in &self.sync {
            writeln!(w, "{},{},{},{}", s.window_start, s.disconnected_s, s.backlog_bits, s.sync_delay_s)?;
        }
        Ok(())
    }

    /// Head switches that abandoned at least one block.
    pub fn write_reorgs_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "at,node,head,number,reorg_depth")?;
        for h in self.head_changes.iter().filter(|h| h.reorg_depth > 0) {
            writeln!(w, "{},{},{},{},{}", h.at, h.node.0, h.head, h.number, h.reorg_depth)?;
        }
        Ok(())
    }
}
