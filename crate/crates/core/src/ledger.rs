//! The user balance contract.
//!
//! Every participant holds a fiat account and a token account. Exchange
//! transactions convert between the two at one fiat cent per token, regular
//! transactions move tokens between peers, and each valid block mints the
//! block reward for its miner. The bank also admits miners and users.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::chain::Block;
use crate::ids::{NodeId, TxId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxKind {
    /// Peer to peer token transfer.
    Regular,
    /// Sender's fiat converted into tokens through the bank.
    ExchangeToToken,
    /// Sender's tokens converted back into fiat through the bank.
    ExchangeToFiat,
}

impl TxKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TxKind::Regular => "regular",
            TxKind::ExchangeToToken => "exchange_to_token",
            TxKind::ExchangeToFiat => "exchange_to_fiat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regular" => Some(TxKind::Regular),
            "exchange_to_token" => Some(TxKind::ExchangeToToken),
            "exchange_to_fiat" => Some(TxKind::ExchangeToFiat),
            _ => None,
        }
    }

    pub fn is_exchange(self) -> bool {
        self != TxKind::Regular
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A token movement. Exchange transactions name the requesting user as
/// `sender` and the bank as `receiver`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub id: TxId,
    pub kind: TxKind,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub amount: u64,
    pub size_bits: u64,
    pub created_at: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Miner,
    User,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Miner => "miner",
            Role::User => "user",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Account {
    pub owner: NodeId,
    pub fiat: u64,
    pub tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("node {node} already admitted as {role}")]
    AlreadyAdmitted { node: NodeId, role: Role },
    #[error("node {node} is not admitted as {role}")]
    NotAdmitted { node: NodeId, role: Role },
    #[error("insufficient-funds: node {node} needs {needed}, has {available}")]
    InsufficientFunds { node: NodeId, needed: u64, available: u64 },
    #[error("unknown-account: {0}")]
    UnknownAccount(NodeId),
    #[error("malformed transaction: {0}")]
    Malformed(&'static str),
    #[error("block transactions exceed capacity")]
    CapacityExceeded,
    #[error("out-of-order block: expected number {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

impl LedgerError {
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::AlreadyAdmitted { .. } => "duplicate-admission",
            LedgerError::NotAdmitted { .. } => "not-admitted",
            LedgerError::InsufficientFunds { .. } => "insufficient-funds",
            LedgerError::UnknownAccount(_) => "unknown-account",
            LedgerError::Malformed(_) => "malformed",
            LedgerError::CapacityExceeded => "capacity-exceeded",
            LedgerError::OutOfOrder { .. } => "out-of-order",
            LedgerError::UnknownNode(_) => "unknown-node",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerState {
    bank: NodeId,
    accounts: BTreeMap<NodeId, Account>,
    admitted_miners: BTreeSet<NodeId>,
    admitted_users: BTreeSet<NodeId>,
    reward_per_block: u64,
    total_rewards_paid: u64,
    exchanged_in: u64,
    exchanged_out: u64,
    fiat_deposited: u64,
    applied_block_number: u64,
}

impl LedgerState {
    /// Empty ledger at genesis holding only the bank's own account.
    pub fn new(bank: NodeId, reward_per_block: u64) -> Self {
        let mut accounts = BTreeMap::new();
        accounts.insert(bank, Account { owner: bank, fiat: 0, tokens: 0 });
        Self {
            bank,
            accounts,
            admitted_miners: BTreeSet::new(),
            admitted_users: BTreeSet::new(),
            reward_per_block,
            total_rewards_paid: 0,
            exchanged_in: 0,
            exchanged_out: 0,
            fiat_deposited: 0,
            applied_block_number: 0,
        }
    }

    pub fn bank(&self) -> NodeId {
        self.bank
    }

    pub fn reward_per_block(&self) -> u64 {
        self.reward_per_block
    }

    pub fn total_rewards_paid(&self) -> u64 {
        self.total_rewards_paid
    }

    pub fn exchanged_in(&self) -> u64 {
        self.exchanged_in
    }

    pub fn exchanged_out(&self) -> u64 {
        self.exchanged_out
    }

    pub fn fiat_deposited(&self) -> u64 {
        self.fiat_deposited
    }

    pub fn applied_block_number(&self) -> u64 {
        self.applied_block_number
    }

    pub fn account(&self, node: NodeId) -> Option<&Account> {
        self.accounts.get(&node)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn admitted_miners(&self) -> &BTreeSet<NodeId> {
        &self.admitted_miners
    }

    pub fn admitted_users(&self) -> &BTreeSet<NodeId> {
        &self.admitted_users
    }

    pub fn is_admitted_miner(&self, node: NodeId) -> bool {
        self.admitted_miners.contains(&node)
    }

    fn is_party(&self, node: NodeId) -> bool {
        self.admitted_users.contains(&node) || self.admitted_miners.contains(&node)
    }

    pub fn token_supply(&self) -> u64 {
        self.accounts.values().map(|a| a.tokens).sum()
    }

    pub fn fiat_supply(&self) -> u64 {
        self.accounts.values().map(|a| a.fiat).sum()
    }

    /// Token supply equals minted exchange plus rewards minus redemptions,
    /// and fiat equals deposits less the net exchanged amount.
    pub fn is_conserved(&self) -> bool {
        let tokens = i128::from(self.token_supply());
        let fiat = i128::from(self.fiat_supply());
        let (inn, out) = (i128::from(self.exchanged_in), i128::from(self.exchanged_out));
        tokens == inn - out + i128::from(self.total_rewards_paid)
            && fiat == i128::from(self.fiat_deposited) - inn + out
    }

    pub fn admit(&mut self, node: NodeId, role: Role) -> Result<(), LedgerError> {
        if node == self.bank {
            return Err(LedgerError::Malformed("the bank cannot be admitted"));
        }
        let set = match role {
            Role::Miner => &mut self.admitted_miners,
            Role::User => &mut self.admitted_users,
        };
        if !set.insert(node) {
            return Err(LedgerError::AlreadyAdmitted { node, role });
        }
        self.accounts.entry(node).or_insert(Account { owner: node, fiat: 0, tokens: 0 });
        Ok(())
    }

    /// Withdraws an admission, e.g. to sanction a misbehaving miner. The
    /// account and its balances stay.
    pub fn revoke(&mut self, node: NodeId, role: Role) -> Result<(), LedgerError> {
        let set = match role {
            Role::Miner => &mut self.admitted_miners,
            Role::User => &mut self.admitted_users,
        };
        if set.remove(&node) {
            Ok(())
        } else {
            Err(LedgerError::NotAdmitted { node, role })
        }
    }

    /// Credits fiat deposited at the bank outside the chain.
    pub fn deposit_fiat(&mut self, node: NodeId, amount: u64) -> Result<(), LedgerError> {
        let acct = self.accounts.get_mut(&node).ok_or(LedgerError::UnknownAccount(node))?;
        acct.fiat += amount;
        self.fiat_deposited += amount;
        Ok(())
    }

    pub fn apply_transaction(&mut self, tx: &Transaction) -> Result<(), LedgerError> {
        if tx.amount == 0 {
            return Err(LedgerError::Malformed("zero amount"));
        }
        match tx.kind {
            TxKind::Regular => {
                if tx.sender == self.bank || tx.receiver == self.bank {
                    return Err(LedgerError::Malformed("regular transaction names the bank"));
                }
                if tx.sender == tx.receiver {
                    return Err(LedgerError::Malformed("sender equals receiver"));
                }
                for party in [tx.sender, tx.receiver] {
                    if !self.is_party(party) {
                        return Err(LedgerError::UnknownAccount(party));
                    }
                }
                let from = &self.accounts[&tx.sender];
                if from.tokens < tx.amount {
                    return Err(LedgerError::InsufficientFunds {
                        node: tx.sender,
                        needed: tx.amount,
                        available: from.tokens,
                    });
                }
                self.accounts.get_mut(&tx.sender).expect("checked").tokens -= tx.amount;
                self.accounts.get_mut(&tx.receiver).expect("checked").tokens += tx.amount;
            }
            TxKind::ExchangeToToken | TxKind::ExchangeToFiat => {
                if tx.receiver != self.bank || tx.sender == self.bank {
                    return Err(LedgerError::Malformed("exchange must run between a user and the bank"));
                }
                if !self.is_party(tx.sender) {
                    return Err(LedgerError::UnknownAccount(tx.sender));
                }
                let acct = self.accounts.get_mut(&tx.sender).expect("checked");
                let (from, to) = if tx.kind == TxKind::ExchangeToToken {
                    (&mut acct.fiat, &mut acct.tokens)
                } else {
                    (&mut acct.tokens, &mut acct.fiat)
                };
                if *from < tx.amount {
                    return Err(LedgerError::InsufficientFunds {
                        node: tx.sender,
                        needed: tx.amount,
                        available: *from,
                    });
                }
                *from -= tx.amount;
                *to += tx.amount;
                if tx.kind == TxKind::ExchangeToToken {
                    self.exchanged_in += tx.amount;
                } else {
                    self.exchanged_out += tx.amount;
                }
            }
        }
        Ok(())
    }

    pub fn reward_miner(&mut self, miner: NodeId) -> Result<(), LedgerError> {
        if !self.admitted_miners.contains(&miner) {
            return Err(LedgerError::NotAdmitted { node: miner, role: Role::Miner });
        }
        self.accounts.get_mut(&miner).expect("admitted nodes have accounts").tokens += self.reward_per_block;
        self.total_rewards_paid += self.reward_per_block;
        Ok(())
    }

    /// Applies a validated block on top of the state at its parent. The state
    /// is left untouched on error.
    pub fn apply_block(&mut self, block: &Block) -> Result<(), LedgerError> {
        let expected = self.applied_block_number + 1;
        if block.header.number != expected {
            return Err(LedgerError::OutOfOrder { expected, got: block.header.number });
        }
        let miner = block.header.miner.ok_or(LedgerError::Malformed("block without miner"))?;
        let mut next = self.clone();
        for tx in &block.transactions {
            next.apply_transaction(tx)?;
        }
        next.reward_miner(miner)?;
        next.applied_block_number = expected;
        *self = next;
        Ok(())
    }

    /// Writes `node_id,fiat_balance,token_balance,role` rows.
    pub fn write_snapshot_csv<W: Write>(&self, mut w: W, name: impl Fn(NodeId) -> String) -> io::Result<()> {
        writeln!(w, "node_id,fiat_balance,token_balance,role")?;
        for acct in self.accounts.values() {
            let id = acct.owner;
            let role = if id == self.bank {
                "bank"
            } else {
                match (self.admitted_miners.contains(&id), self.admitted_users.contains(&id)) {
                    (true, true) => "miner+user",
                    (true, false) => "miner",
                    (false, true) => "user",
                    (false, false) => "none",
                }
            };
            writeln!(w, "{},{},{},{}", name(id), acct.fiat, acct.tokens, role)?;
        }
        Ok(())
    }
}

/// Splits a miner connection map into connected groups.
///
/// Starting from `start`, the set of direct neighbours is expanded hop by hop
/// until a round adds nothing new. Nodes left over form further groups found
/// by repeating the procedure from the smallest remaining id. Connections are
/// treated as undirected, and nodes that only appear as neighbours count as
/// members of the map. The group containing `start` comes first.
pub fn detect_partition(
    connections: &BTreeMap<NodeId, BTreeSet<NodeId>>,
    start: NodeId,
) -> Result<Vec<BTreeSet<NodeId>>, LedgerError> {
    if !connections.contains_key(&start) {
        return Err(LedgerError::UnknownNode(start));
    }
    let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (&node, peers) in connections {
        adjacency.entry(node).or_default();
        for &peer in peers {
            if peer != node {
                adjacency.entry(node).or_default().insert(peer);
                adjacency.entry(peer).or_default().insert(node);
            }
        }
    }

    let mut remaining: BTreeSet<NodeId> = adjacency.keys().copied().collect();
    let mut groups = Vec::new();
    let mut next_start = Some(start);
    while let Some(origin) = next_start {
        let mut reached = BTreeSet::from([origin]);
        let mut frontier: VecDeque<NodeId> = VecDeque::from([origin]);
        // Each pass builds the next hop set from the previous one and stops
        // once it contributes nothing beyond the union so far.
        while !frontier.is_empty() {
            let mut next_hop = VecDeque::new();
            for node in frontier.drain(..) {
                for &peer in &adjacency[&node] {
                    if reached.insert(peer) {
                        next_hop.push_back(peer);
                    }
                }
            }
            frontier = next_hop;
        }
        for n in &reached {
            remaining.remove(n);
        }
        groups.push(reached);
        next_start = remaining.iter().next().copied();
    }
    Ok(groups)
}
