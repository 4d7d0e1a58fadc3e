use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use super::mining::{hazard_between, time_to_hazard, MinerClock};
use super::topology::hop_distances;
use crate::chain::{make_genesis, validate_block, Block, ChainError, ChainView, InsertOutcome};
use crate::ids::{BlockId, NodeId, TxId};
use crate::ledger::{LedgerError, LedgerState, Role, Transaction, TxKind};
use crate::rng::{self, SimRng};
use crate::scenario::{NodeRole, Scenario, ScenarioError};
use crate::trace::{BlockRecord, HeadChange, NodeHead, ObserverPoint, RejectedEvent, SimTrace, SyncEpisode, Tick, TxRecord};
use crate::workload::{self, WorkloadError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("ledger setup failed: {0}")]
    Ledger(#[from] LedgerError),
    #[error("chain error: {0}")]
    Chain(#[from] ChainError),
}

enum Ev {
    Found { miner: usize, generation: u64 },
    Arrive { node: usize, from: usize, block: Arc<Block> },
    TxCreated { idx: usize },
    TxArrive { node: usize, idx: usize },
    Churn { epoch: u64 },
    Outage { offline: bool },
    Partition { active: bool },
    BankConnect { window: usize },
    BankSynced { window: usize, blocks: Vec<Arc<Block>>, complete: bool },
    BankDisconnect { window: usize },
    Tick,
}

struct Queued {
    at: f64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so the max-heap pops the earliest event, then the first queued.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Node {
    id: NodeId,
    role: NodeRole,
    hashrate: f64,
    peers: Vec<NodeId>,
    churn_off: bool,
    outage_off: bool,
    chain: ChainView,
    mempool: BTreeSet<TxId>,
    seen: HashSet<TxId>,
    in_chain: HashSet<TxId>,
    clock: Option<MinerClock>,
}

impl Node {
    fn up(&self) -> bool {
        !self.churn_off && !self.outage_off
    }
}

struct KnownBlock {
    block: Arc<Block>,
    header: Arc<Block>,
    ledger: Arc<LedgerState>,
}

struct Bank {
    id: usize,
    online: bool,
    window: Option<usize>,
    windows: Vec<(f64, f64)>,
    last_end: f64,
    queued: Vec<usize>,
}

enum Relay {
    No,
    Except(usize),
}

struct Sim<'a> {
    sc: &'a Scenario,
    now: f64,
    horizon: f64,
    delay: f64,
    queue: BinaryHeap<Queued>,
    seq: u64,
    nodes: Vec<Node>,
    relay_adj: Vec<Vec<NodeId>>,
    known: HashMap<BlockId, KnownBlock>,
    mined: Vec<Arc<Block>>,
    global: ChainView,
    txs: Vec<Transaction>,
    bank: Bank,
    partition: BTreeSet<NodeId>,
    partition_active: bool,
    churn_rng: SimRng,
    sync_rng: SimRng,
    observer: usize,
    head_changes: Vec<HeadChange>,
    observer_points: Vec<ObserverPoint>,
    sync: Vec<SyncEpisode>,
    ticks: Vec<Tick>,
    rejected: Vec<RejectedEvent>,
    dropped_txs: u64,
}

/// Builds the ledger every run starts from: admitted miners and users, each
/// user holding `initial_fiat` and `initial_tokens` bought through the bank.
fn genesis_ledger(sc: &Scenario) -> Result<LedgerState, LedgerError> {
    let bank = sc.bank_id();
    let mut ledger = LedgerState::new(bank, sc.ledger.reward_per_block);
    for m in sc.miner_ids() {
        ledger.admit(m, Role::Miner)?;
    }
    for (i, u) in sc.workload_users().into_iter().enumerate() {
        ledger.admit(u, Role::User)?;
        let total = sc.ledger.initial_fiat + sc.ledger.initial_tokens;
        if total > 0 {
            ledger.deposit_fiat(u, total)?;
        }
        if sc.ledger.initial_tokens > 0 {
            ledger.apply_transaction(&Transaction {
                id: TxId(u64::MAX - i as u64),
                kind: TxKind::ExchangeToToken,
                sender: u,
                receiver: bank,
                amount: sc.ledger.initial_tokens,
                size_bits: 0,
                created_at: 0.0,
            })?;
        }
    }
    Ok(ledger)
}

/// Runs `scenario` to its horizon.
pub fn run(scenario: &Scenario) -> Result<SimTrace, SimError> {
    scenario.validate()?;
    let sc = scenario;
    let seed = sc.run.seed;
    let horizon = sc.run.horizon_s;
    let genesis = Arc::new(make_genesis(&sc.genesis));
    let ledger0 = genesis_ledger(sc)?;

    let specs = sc.node_specs();
    let relay_adj: Vec<Vec<NodeId>> = specs
        .iter()
        .map(|s| {
            if s.role.relays() {
                s.peers.iter().copied().filter(|p| specs[p.index()].role.relays()).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let nodes: Vec<Node> = specs
        .into_iter()
        .map(|s| Node {
            id: s.id,
            role: s.role,
            hashrate: s.hashrate,
            peers: s.peers.into_iter().collect(),
            churn_off: false,
            outage_off: false,
            chain: ChainView::new(Arc::clone(&genesis), 0.0),
            mempool: BTreeSet::new(),
            seen: HashSet::new(),
            in_chain: HashSet::new(),
            clock: (s.role == NodeRole::Miner)
                .then(|| MinerClock::new(rng::stream(seed, &format!("mining/{}", s.id.0)))),
        })
        .collect();

    let windows = sc.bank.connected_windows(horizon);
    let mut wl = sc.workload.clone();
    wl.users = sc.workload_users();
    let txs = workload::generate(&wl, horizon, &windows, sc.bank_id(), &mut rng::stream(seed, "workload"))?;

    let mut known = HashMap::new();
    known.insert(
        genesis.id,
        KnownBlock { block: Arc::clone(&genesis), header: Arc::clone(&genesis), ledger: Arc::new(ledger0.clone()) },
    );

    let mut sim = Sim {
        sc,
        now: 0.0,
        horizon,
        delay: sc.disturbance.link_delay_ms / 1000.0,
        queue: BinaryHeap::new(),
        seq: 0,
        nodes,
        relay_adj,
        known,
        mined: Vec::new(),
        global: ChainView::new(Arc::clone(&genesis), 0.0),
        txs,
        bank: Bank { id: sc.bank_id().index(), online: false, window: None, windows, last_end: 0.0, queued: Vec::new() },
        partition: sc.disturbance.partition.as_ref().map(|p| p.group.clone()).unwrap_or_default(),
        partition_active: false,
        churn_rng: rng::stream(seed, "churn"),
        sync_rng: rng::stream(seed, "sync-peer"),
        observer: sc.observer().index(),
        head_changes: Vec::new(),
        observer_points: Vec::new(),
        sync: Vec::new(),
        ticks: Vec::new(),
        rejected: Vec::new(),
        dropped_txs: 0,
    };
    sim.schedule_initial();
    sim.event_loop();
    Ok(sim.finish(genesis, ledger0))
}

impl Sim<'_> {
    fn schedule(&mut self, at: f64, ev: Ev) {
        if at <= self.horizon {
            self.seq += 1;
            self.queue.push(Queued { at, seq: self.seq, ev });
        }
    }

    fn schedule_initial(&mut self) {
        for w in 0..self.bank.windows.len() {
            let (s, e) = self.bank.windows[w];
            self.schedule(s, Ev::BankConnect { window: w });
            self.schedule(e, Ev::BankDisconnect { window: w });
        }
        for idx in 0..self.txs.len() {
            self.schedule(self.txs[idx].created_at, Ev::TxCreated { idx });
        }
        let d = &self.sc.disturbance;
        if d.churn_rate > 0.0 {
            self.schedule(d.churn_epoch_s, Ev::Churn { epoch: 1 });
        }
        if let Some(o) = &d.outage {
            let (start, end) = (o.start_s, o.end_s);
            self.schedule(start, Ev::Outage { offline: true });
            if let Some(e) = end {
                self.schedule(e, Ev::Outage { offline: false });
            }
        }
        if let Some(p) = &d.partition {
            let (start, end) = (p.start_s, p.end_s);
            self.schedule(start, Ev::Partition { active: true });
            if let Some(e) = end {
                self.schedule(e, Ev::Partition { active: false });
            }
        }
        self.schedule(self.sc.run.tick_s, Ev::Tick);
        for i in 0..self.nodes.len() {
            if self.nodes[i].clock.is_some() {
                self.reschedule(i);
            }
        }
    }

    fn event_loop(&mut self) {
        while let Some(q) = self.queue.pop() {
            self.now = q.at;
            match q.ev {
                Ev::Found { miner, generation } => self.on_found(miner, generation),
                Ev::Arrive { node, from, block } => self.on_arrive(node, from, block),
                Ev::TxCreated { idx } => self.on_tx_created(idx),
                Ev::TxArrive { node, idx } => self.on_tx_arrive(node, idx),
                Ev::Churn { epoch } => self.on_churn(epoch),
                Ev::Outage { offline } => self.on_outage(offline),
                Ev::Partition { active } => self.on_partition(active),
                Ev::BankConnect { window } => self.on_bank_connect(window),
                Ev::BankSynced { window, blocks, complete } => self.on_bank_synced(window, blocks, complete),
                Ev::BankDisconnect { window } => self.on_bank_disconnect(window),
                Ev::Tick => self.on_tick(),
            }
        }
    }

    fn is_online(&self, i: usize) -> bool {
        if i == self.bank.id {
            self.bank.online
        } else {
            self.nodes[i].up()
        }
    }

    fn link_usable(&self, a: NodeId, b: NodeId) -> bool {
        !self.partition_active || self.partition.contains(&a) == self.partition.contains(&b)
    }

    // ---- mining clocks ----

    fn accumulate(&mut self, i: usize) {
        let now = self.now;
        let node = &mut self.nodes[i];
        let up = node.up();
        let h = node.hashrate;
        let Node { chain, clock, .. } = node;
        if let Some(c) = clock {
            if up && h > 0.0 && now > c.since {
                let p = chain.canonical_block();
                c.progress += hazard_between(p.header.difficulty, p.header.timestamp, h, c.since, now);
            }
            c.since = now;
        }
    }

    fn reschedule(&mut self, i: usize) {
        let now = self.now;
        let node = &mut self.nodes[i];
        let up = node.up();
        let h = node.hashrate;
        let Node { chain, clock, .. } = node;
        let Some(c) = clock else { return };
        c.generation += 1;
        if !(up && h > 0.0) {
            return;
        }
        let p = chain.canonical_block();
        let mut t = time_to_hazard(p.header.difficulty, p.header.timestamp, h, now, c.remaining());
        if t <= p.header.timestamp {
            t = p.header.timestamp.next_up();
        }
        let generation = c.generation;
        self.schedule(t, Ev::Found { miner: i, generation });
    }

    fn on_found(&mut self, i: usize, generation: u64) {
        let node = &self.nodes[i];
        if !node.up() || node.clock.as_ref().is_none_or(|c| c.generation != generation) {
            return;
        }
        let parent = Arc::clone(node.chain.canonical_block());
        let parent_ledger = Arc::clone(&self.known[&parent.id].ledger);
        let (txs, dropped) = self.build_body(i, &parent_ledger, parent.header.capacity);
        for id in dropped {
            self.nodes[i].mempool.remove(&id);
            self.dropped_txs += 1;
        }
        let block = match Block::child(&parent, self.nodes[i].id, self.now, txs) {
            Ok(b) => b,
            Err(_) => return,
        };
        if let Err(reason) = validate_block(&block, &self.nodes[i].chain, &parent_ledger) {
            self.rejected.push(RejectedEvent { at: self.now, node: NodeId(i as u32), block: block.id, code: reason.code() });
            return;
        }
        let mut ledger = (*parent_ledger).clone();
        if ledger.apply_block(&block).is_err() {
            self.rejected.push(RejectedEvent { at: self.now, node: NodeId(i as u32), block: block.id, code: "bad-transaction" });
            return;
        }
        let block = Arc::new(block);
        let header = Arc::new(block.header_only());
        self.known.insert(block.id, KnownBlock { block: Arc::clone(&block), header, ledger: Arc::new(ledger) });
        self.mined.push(Arc::clone(&block));
        let _ = self.global.insert(Arc::clone(&block), self.now);
        if let Some(c) = self.nodes[i].clock.as_mut() {
            c.redraw(self.now);
        }
        self.accept(i, block, None);
    }

    /// Picks mempool transactions for a block on top of `ledger`: exchange
    /// requests first (only while the bank is connected), then transfers in
    /// creation order. Returns the body and the ids that failed validation.
    fn build_body(&self, i: usize, ledger: &LedgerState, capacity: crate::chain::Capacity) -> (Vec<Transaction>, Vec<TxId>) {
        let mut scratch = ledger.clone();
        let mut body = Vec::new();
        let mut dropped = Vec::new();
        let mut bits = 0u64;
        let pool = &self.nodes[i].mempool;
        for exchange in [true, false] {
            if exchange && !self.bank.online {
                continue;
            }
            for id in pool {
                let tx = &self.txs[id.0 as usize];
                if tx.kind.is_exchange() != exchange {
                    continue;
                }
                if !capacity.admits(bits + tx.size_bits) {
                    break;
                }
                match scratch.apply_transaction(tx) {
                    Ok(()) => {
                        bits += tx.size_bits;
                        body.push(tx.clone());
                    }
                    Err(_) => dropped.push(*id),
                }
            }
        }
        (body, dropped)
    }

    // ---- block propagation ----

    /// Inserts `block` into node `i`'s view. Returns true when it was new.
    fn insert_block(&mut self, i: usize, block: &Arc<Block>) -> bool {
        if !self.known.contains_key(&block.id) {
            self.rejected.push(RejectedEvent { at: self.now, node: NodeId(i as u32), block: block.id, code: "unknown-block" });
            return false;
        }
        let stored =
            if self.nodes[i].role == NodeRole::Light { Arc::clone(&self.known[&block.id].header) } else { Arc::clone(block) };
        self.accumulate(i);
        let old = self.nodes[i].chain.canonical_head();
        match self.nodes[i].chain.insert(stored, self.now) {
            Ok(InsertOutcome::Duplicate) => false,
            Ok(InsertOutcome::Added { new_canonical }) => {
                if new_canonical {
                    self.on_head_change(i, old);
                }
                true
            }
            Err(_) => {
                self.rejected.push(RejectedEvent { at: self.now, node: NodeId(i as u32), block: block.id, code: "unknown-parent" });
                false
            }
        }
    }

    fn accept(&mut self, i: usize, block: Arc<Block>, relay: Option<Relay>) {
        if self.insert_block(i, &block) && self.nodes[i].role.relays() {
            let except = match relay {
                Some(Relay::No) => return,
                Some(Relay::Except(from)) => Some(from),
                None => None,
            };
            self.broadcast(i, &block, except);
        }
    }

    fn broadcast(&mut self, from: usize, block: &Arc<Block>, except: Option<usize>) {
        let at = self.now + self.delay;
        let from_id = self.nodes[from].id;
        for k in 0..self.nodes[from].peers.len() {
            let p = self.nodes[from].peers[k];
            if Some(p.index()) == except || !self.link_usable(from_id, p) || !self.is_online(p.index()) {
                continue;
            }
            self.schedule(at, Ev::Arrive { node: p.index(), from, block: Arc::clone(block) });
        }
    }

    fn on_arrive(&mut self, i: usize, from: usize, block: Arc<Block>) {
        if !self.is_online(i) || self.nodes[i].chain.contains(block.id) {
            return;
        }
        // Missing ancestors are fetched from the sender on the spot.
        let mut missing = Vec::new();
        let mut cur = block.header.parent;
        while let Some(p) = cur {
            if self.nodes[i].chain.contains(p) {
                break;
            }
            let Some(k) = self.known.get(&p) else { break };
            missing.push(Arc::clone(&k.block));
            cur = k.block.header.parent;
        }
        for b in missing.into_iter().rev() {
            self.accept(i, b, Some(Relay::No));
        }
        self.accept(i, block, Some(Relay::Except(from)));
    }

    fn on_head_change(&mut self, i: usize, old: BlockId) {
        let node = &self.nodes[i];
        let new = node.chain.canonical_head();
        let fork = node.chain.fork_point(old, new).unwrap_or(node.chain.genesis());
        let number = |id| node.chain.get(id).map_or(0, |b| b.header.number);
        let head = Arc::clone(node.chain.canonical_block());
        self.head_changes.push(HeadChange {
            at: self.now,
            node: node.id,
            head: new,
            number: head.header.number,
            reorg_depth: number(old) - number(fork),
        });
        if i == self.observer {
            if let Some(parent) = head.header.parent.and_then(|p| node.chain.get(p)) {
                self.observer_points.push(ObserverPoint {
                    at: self.now,
                    number: head.header.number,
                    block_time: head.header.timestamp - parent.header.timestamp,
                });
            }
        }
        if node.clock.is_some() {
            let mut abandoned = Vec::new();
            let mut adopted = Vec::new();
            for b in node.chain.ancestry(old).take_while(|b| b.id != fork) {
                abandoned.extend(b.transactions.iter().map(|t| t.id));
            }
            for b in node.chain.ancestry(new).take_while(|b| b.id != fork) {
                adopted.extend(b.transactions.iter().map(|t| t.id));
            }
            let node = &mut self.nodes[i];
            for id in abandoned {
                node.in_chain.remove(&id);
                node.seen.insert(id);
                node.mempool.insert(id);
            }
            for id in adopted {
                node.in_chain.insert(id);
                node.seen.insert(id);
                node.mempool.remove(&id);
            }
            self.reschedule(i);
        }
    }

    // ---- synchronisation ----

    /// Copies every block `src` knows and `dst` lacks, plus pending
    /// transactions when both mine.
    fn sync_from(&mut self, dst: usize, src: usize) {
        if !matches!(self.nodes[src].role, NodeRole::Miner | NodeRole::Full) {
            return;
        }
        let missing: Vec<Arc<Block>> = self.nodes[src]
            .chain
            .blocks_in_order()
            .into_iter()
            .filter(|b| !self.nodes[dst].chain.contains(b.id))
            .cloned()
            .collect();
        let old = self.nodes[dst].chain.canonical_head();
        for b in &missing {
            self.insert_block(dst, b);
        }
        if self.nodes[dst].clock.is_some() && self.nodes[src].clock.is_some() {
            let pending: Vec<TxId> = self.nodes[src].mempool.iter().copied().collect();
            let node = &mut self.nodes[dst];
            for id in pending {
                if node.seen.insert(id) && !node.in_chain.contains(&id) {
                    node.mempool.insert(id);
                }
            }
        }
        let new = self.nodes[dst].chain.canonical_head();
        if new != old && self.nodes[dst].role.relays() {
            let head = Arc::clone(self.nodes[dst].chain.canonical_block());
            self.broadcast(dst, &head, Some(src));
        }
    }

    fn handshake(&mut self, a: usize, b: usize) {
        self.sync_from(a, b);
        self.sync_from(b, a);
    }

    fn online_relays(&self, exclude: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&j| j != exclude && self.nodes[j].role.relays() && self.nodes[j].up()).collect()
    }

    fn set_flags(&mut self, i: usize, churn_off: Option<bool>, outage_off: Option<bool>) {
        let was = self.nodes[i].up();
        if was {
            self.accumulate(i);
        }
        let node = &mut self.nodes[i];
        if let Some(c) = churn_off {
            node.churn_off = c;
        }
        if let Some(o) = outage_off {
            node.outage_off = o;
        }
        let up = node.up();
        if was == up {
            return;
        }
        if let Some(c) = node.clock.as_mut() {
            c.since = self.now;
        }
        if up {
            self.resync(i);
        }
        self.reschedule(i);
    }

    /// A node coming back fetches what it missed from a random online peer.
    fn resync(&mut self, i: usize) {
        let me = self.nodes[i].id;
        let mut candidates: Vec<usize> = self.nodes[i]
            .peers
            .iter()
            .map(|p| p.index())
            .filter(|&p| self.nodes[p].role.relays() && self.nodes[p].up() && self.link_usable(me, NodeId(p as u32)))
            .collect();
        if candidates.is_empty() {
            candidates = self
                .online_relays(i)
                .into_iter()
                .filter(|&p| self.link_usable(me, NodeId(p as u32)))
                .collect();
        }
        if candidates.is_empty() {
            return;
        }
        let peer = candidates[self.sync_rng.random_range(0..candidates.len())];
        self.handshake(i, peer);
    }

    fn on_churn(&mut self, epoch: u64) {
        let p = self.sc.disturbance.churn_rate;
        for i in 0..self.nodes.len() {
            if self.nodes[i].role == NodeRole::Miner {
                let off = self.churn_rng.random::<f64>() < p;
                self.set_flags(i, Some(off), None);
            }
        }
        self.schedule((epoch + 1) as f64 * self.sc.disturbance.churn_epoch_s, Ev::Churn { epoch: epoch + 1 });
    }

    fn on_outage(&mut self, offline: bool) {
        let nodes: Vec<usize> =
            self.sc.disturbance.outage.as_ref().map(|o| o.nodes.iter().map(|n| n.index()).collect()).unwrap_or_default();
        for i in nodes {
            self.set_flags(i, None, Some(offline));
        }
    }

    fn on_partition(&mut self, active: bool) {
        self.partition_active = active;
        if active {
            return;
        }
        // Restored links exchange chains so the heavier side wins everywhere.
        let mut pairs = Vec::new();
        for (a, n) in self.nodes.iter().enumerate() {
            for p in &n.peers {
                let b = p.index();
                if a < b
                    && b != self.bank.id
                    && self.partition.contains(&n.id) != self.partition.contains(p)
                    && n.up()
                    && self.nodes[b].up()
                {
                    pairs.push((a, b));
                }
            }
        }
        for (a, b) in pairs {
            self.handshake(a, b);
        }
    }

    // ---- transactions ----

    fn on_tx_created(&mut self, idx: usize) {
        if self.txs[idx].kind.is_exchange() && !self.bank.online {
            self.bank.queued.push(idx);
            return;
        }
        self.deliver_tx(idx);
    }

    /// Floods a transaction from its sender over online relays.
    fn deliver_tx(&mut self, idx: usize) {
        let sender = self.txs[idx].sender;
        let s = sender.index();
        if !self.nodes[s].up() {
            return;
        }
        let (sources, base): (Vec<NodeId>, u32) = if self.nodes[s].role.relays() {
            (vec![sender], 0)
        } else {
            let v = self.nodes[s]
                .peers
                .iter()
                .copied()
                .filter(|p| self.nodes[p.index()].role.relays() && self.nodes[p.index()].up() && self.link_usable(sender, *p))
                .collect();
            (v, 1)
        };
        if sources.is_empty() {
            return;
        }
        let dist = hop_distances(&self.relay_adj, &sources, |a, b| self.link_usable(a, b) && self.nodes[b.index()].up());
        for (m, d) in dist.into_iter().enumerate() {
            let Some(d) = d else { continue };
            if self.nodes[m].clock.is_none() {
                continue;
            }
            if self.delay == 0.0 {
                self.on_tx_arrive(m, idx);
            } else {
                let at = self.now + f64::from(d + base) * self.delay;
                self.schedule(at, Ev::TxArrive { node: m, idx });
            }
        }
    }

    fn on_tx_arrive(&mut self, i: usize, idx: usize) {
        let node = &mut self.nodes[i];
        if !node.up() {
            return;
        }
        let id = TxId(idx as u64);
        if node.seen.insert(id) && !node.in_chain.contains(&id) {
            node.mempool.insert(id);
        }
    }

    // ---- bank ----

    fn on_bank_connect(&mut self, w: usize) {
        let (start, end) = self.bank.windows[w];
        self.bank.window = Some(w);
        let disconnected_s = (start - self.bank.last_end).max(0.0);
        let sources = self.online_relays(self.bank.id);
        let backlog: Vec<Arc<Block>> = if sources.is_empty() {
            Vec::new()
        } else {
            let src = sources[self.sync_rng.random_range(0..sources.len())];
            let bank_chain = &self.nodes[self.bank.id].chain;
            let mut v: Vec<Arc<Block>> = self.nodes[src]
                .chain
                .ancestry(self.nodes[src].chain.canonical_head())
                .take_while(|b| !bank_chain.contains(b.id))
                .cloned()
                .collect();
            v.reverse();
            v
        };
        let sc = self.sc;
        let b = &sc.bank;
        let overhead = b.sync_overhead_ms / 1000.0;
        let cost = |blk: &Block| (b.header_bits + blk.tx_bits()) as f64 / b.backhaul_bw_bps + overhead;
        let bits: u64 = backlog.iter().map(|blk| b.header_bits + blk.tx_bits()).sum();
        let delay = bits as f64 / b.backhaul_bw_bps + overhead * backlog.len() as f64;
        let complete = start + delay <= end;
        self.sync.push(SyncEpisode {
            window_start: start,
            disconnected_s,
            backlog_blocks: backlog.len() as u64,
            backlog_bits: bits,
            sync_delay_s: delay,
            completed: complete,
        });
        if complete {
            self.schedule(start + delay, Ev::BankSynced { window: w, blocks: backlog, complete: true });
        } else {
            // Fetch the prefix that fits; the rest waits for the next window.
            let mut used = 0.0;
            let prefix: Vec<Arc<Block>> = backlog
                .into_iter()
                .take_while(|blk| {
                    used += cost(blk);
                    used <= end - start
                })
                .collect();
            self.schedule(end, Ev::BankSynced { window: w, blocks: prefix, complete: false });
        }
    }

    fn on_bank_synced(&mut self, w: usize, blocks: Vec<Arc<Block>>, complete: bool) {
        let i = self.bank.id;
        for b in &blocks {
            if b.header.parent.is_some_and(|p| self.nodes[i].chain.contains(p)) {
                self.insert_block(i, b);
            }
        }
        if complete && self.bank.window == Some(w) {
            self.bank.online = true;
            for idx in std::mem::take(&mut self.bank.queued) {
                self.deliver_tx(idx);
            }
        }
    }

    fn on_bank_disconnect(&mut self, w: usize) {
        self.bank.online = false;
        self.bank.window = None;
        self.bank.last_end = self.bank.windows[w].1;
    }

    fn on_tick(&mut self) {
        let online_miners = self.nodes.iter().filter(|n| n.role == NodeRole::Miner && n.up()).count() as u32;
        let heads: BTreeSet<BlockId> =
            self.nodes.iter().filter(|n| n.role.relays() && n.up()).map(|n| n.chain.canonical_head()).collect();
        self.ticks.push(Tick { at: self.now, online_miners, distinct_heads: heads.len() as u32 });
        self.schedule(self.now + self.sc.run.tick_s, Ev::Tick);
    }

    fn finish(self, genesis: Arc<Block>, ledger0: LedgerState) -> SimTrace {
        let head = self.global.canonical_head();
        let canonical: Vec<BlockId> = self.global.path(head).expect("head is known").iter().map(|b| b.id).collect();
        let on_chain: HashSet<BlockId> = canonical.iter().copied().collect();
        let mut inclusion: HashMap<TxId, (f64, BlockId)> = HashMap::new();
        for id in &canonical {
            let b = &self.known[id].block;
            for tx in &b.transactions {
                inclusion.insert(tx.id, (b.header.timestamp, b.id));
            }
        }
        let txs = self
            .txs
            .into_iter()
            .map(|tx| {
                let inc = inclusion.get(&tx.id).copied();
                TxRecord { tx, included_at: inc.map(|x| x.0), block: inc.map(|x| x.1) }
            })
            .collect();
        let blocks = self
            .mined
            .iter()
            .map(|b| BlockRecord { block: Arc::clone(b), canonical: on_chain.contains(&b.id) })
            .collect();
        let canonical_ledger = (*self.known[&head].ledger).clone();
        let mut trace = SimTrace::assemble(
            self.sc.run.seed,
            self.horizon,
            self.sc.run.warmup_s,
            self.sc.run.series_window,
            genesis,
            blocks,
            canonical,
            txs,
            NodeId(self.observer as u32),
            ledger0,
            canonical_ledger,
        );
        trace.final_heads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeHead {
                node: n.id,
                role: n.role,
                online: if i == self.bank.id { self.bank.online } else { n.up() },
                head: n.chain.canonical_head(),
            })
            .collect();
        trace.head_changes = self.head_changes;
        trace.observer_points = self.observer_points;
        trace.sync = self.sync;
        trace.ticks = self.ticks;
        trace.rejected = self.rejected;
        trace.dropped_txs = self.dropped_txs;
        trace
    }
}
