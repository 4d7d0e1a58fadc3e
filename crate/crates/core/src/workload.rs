//! Poisson transaction workload.
//!
//! Regular transfers arrive as a Poisson process of rate `lambda_t` over the
//! whole horizon. Exchange requests arrive at rate `lambda_e`, but only while
//! the bank is connected.

use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::ids::{NodeId, TxId};
use crate::ledger::{Transaction, TxKind};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error("replay file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    /// Regular transactions per second.
    pub lambda_t: f64,
    /// Exchange requests per second of connected time.
    pub lambda_e: f64,
    pub s_t_bits: u64,
    pub s_e_bits: u64,
    pub amount_min: u64,
    pub amount_max: u64,
    /// Fraction of exchange requests that redeem tokens for fiat.
    pub exchange_to_fiat_share: f64,
    /// Senders and receivers are drawn uniformly from these nodes.
    pub users: Vec<NodeId>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            lambda_t: 1.0,
            lambda_e: 0.0,
            s_t_bits: 4000,
            s_e_bits: 4000,
            amount_min: 1,
            amount_max: 100,
            exchange_to_fiat_share: 0.5,
            users: Vec::new(),
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if !(self.lambda_t >= 0.0 && self.lambda_t.is_finite()) {
            return bad("lambda_t must be a finite non-negative rate");
        }
        if !(self.lambda_e >= 0.0 && self.lambda_e.is_finite()) {
            return bad("lambda_e must be a finite non-negative rate");
        }
        if self.amount_min == 0 || self.amount_min > self.amount_max {
            return bad("amount range must satisfy 1 <= amount_min <= amount_max");
        }
        if self.s_t_bits == 0 || self.s_e_bits == 0 {
            return bad("transaction sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.exchange_to_fiat_share) {
            return bad("exchange_to_fiat_share must lie in [0, 1]");
        }
        if self.lambda_t > 0.0 && self.users.len() < 2 {
            return bad("regular traffic needs at least two users");
        }
        if self.lambda_e > 0.0 && self.users.is_empty() {
            return bad("exchange traffic needs at least one user");
        }
        Ok(())
    }
}

/// Generates the workload for `[0, horizon)`, ordered by creation time, with
/// ids assigned in that order.
pub fn generate<R: Rng + ?Sized>(
    config: &WorkloadConfig,
    horizon: f64,
    connected_windows: &[(f64, f64)],
    bank: NodeId,
    rng: &mut R,
) -> Result<Vec<Transaction>, WorkloadError> {
    if !(horizon > 0.0) {
        return Err(WorkloadError::Invalid("horizon must be positive".into()));
    }
    config.validate()?;
    let mut out = Vec::new();

    if config.lambda_t > 0.0 {
        let gap = Exp::new(config.lambda_t).expect("validated rate");
        let mut t = gap.sample(rng);
        while t < horizon {
            let (sender, receiver) = draw_pair(&config.users, rng);
            let amount = rng.random_range(config.amount_min..=config.amount_max);
            out.push(Transaction {
                id: TxId(0),
                kind: TxKind::Regular,
                sender,
                receiver,
                amount,
                size_bits: config.s_t_bits,
                created_at: t,
            });
            t += gap.sample(rng);
        }
    }

    if config.lambda_e > 0.0 {
        let gap = Exp::new(config.lambda_e).expect("validated rate");
        for &(start, end) in connected_windows {
            let end = end.min(horizon);
            let mut t = start.max(0.0) + gap.sample(rng);
            while t < end {
                let sender = config.users[rng.random_range(0..config.users.len())];
                let kind = if rng.random::<f64>() < config.exchange_to_fiat_share {
                    TxKind::ExchangeToFiat
                } else {
                    TxKind::ExchangeToToken
                };
                let amount = rng.random_range(config.amount_min..=config.amount_max);
                out.push(Transaction {
                    id: TxId(0),
                    kind,
                    sender,
                    receiver: bank,
                    amount,
                    size_bits: config.s_e_bits,
                    created_at: t,
                });
                t += gap.sample(rng);
            }
        }
    }

    out.sort_by(|a, b| a.created_at.total_cmp(&b.created_at));
    for (i, tx) in out.iter_mut().enumerate() {
        tx.id = TxId(i as u64);
    }
    Ok(out)
}

fn draw_pair<R: Rng + ?Sized>(users: &[NodeId], rng: &mut R) -> (NodeId, NodeId) {
    let sender = users[rng.random_range(0..users.len())];
    loop {
        let receiver = users[rng.random_range(0..users.len())];
        if receiver != sender {
            return (sender, receiver);
        }
    }
}

pub const REPLAY_HEADER: &str = "id,kind,sender,receiver,amount,size_bits,created_at";

pub fn write_csv<W: Write>(txs: &[Transaction], mut w: W) -> io::Result<()> {
    writeln!(w, "{REPLAY_HEADER}")?;
    for tx in txs {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            tx.id, tx.kind, tx.sender.0, tx.receiver.0, tx.amount, tx.size_bits, tx.created_at
        )?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<Transaction>, WorkloadError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line == REPLAY_HEADER) {
            continue;
        }
        let err = |msg: &str| WorkloadError::Parse { line: line_no, msg: msg.to_string() };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err("expected 7 fields"));
        }
        let num = |i: usize, what: &str| fields[i].parse::<u64>().map_err(|_| err(what));
        let created_at: f64 = fields[6].parse().map_err(|_| err("bad created_at"))?;
        let prev = out.last().map(|t: &Transaction| t.created_at);
        if prev.is_some_and(|p| created_at < p) {
            return Err(err("created_at must be non-decreasing"));
        }
        out.push(Transaction {
            id: TxId(num(0, "bad id")?),
            kind: TxKind::parse(fields[1]).ok_or_else(|| err("bad kind"))?,
            sender: NodeId(num(2, "bad sender")? as u32),
            receiver: NodeId(num(3, "bad receiver")? as u32),
            amount: num(4, "bad amount")?,
            size_bits: num(5, "bad size_bits")?,
            created_at,
        });
    }
    Ok(out)
}
