//! Ledger conservation fuzzing and partition detection against a
//! union-find oracle.

use std::collections::{BTreeMap, BTreeSet};

use dtchain::ledger::{detect_partition, LedgerState, Role, Transaction, TxKind};
use dtchain::rng;
use dtchain::{NodeId, TxId};
use proptest::prelude::*;
use rand::Rng;

const BANK: NodeId = NodeId(1000);

fn seeded_ledger(users: u32) -> LedgerState {
    let mut l = LedgerState::new(BANK, 5);
    for u in 0..users {
        l.admit(NodeId(u), Role::User).unwrap();
        l.deposit_fiat(NodeId(u), 500).unwrap();
    }
    l.admit(NodeId(0), Role::Miner).unwrap();
    l
}

fn random_tx<R: Rng>(r: &mut R, id: u64, users: u32) -> Transaction {
    let kind = match r.random_range(0..3) {
        0 => TxKind::Regular,
        1 => TxKind::ExchangeToToken,
        _ => TxKind::ExchangeToFiat,
    };
    // Occasionally name strangers or the bank to exercise rejections.
    let pick = |r: &mut R| match r.random_range(0..20) {
        0 => BANK,
        1 => NodeId(users + 7),
        _ => NodeId(r.random_range(0..users)),
    };
    let sender = pick(r);
    let receiver = if kind.is_exchange() && r.random_bool(0.95) { BANK } else { pick(r) };
    Transaction {
        id: TxId(id),
        kind,
        sender,
        receiver,
        amount: r.random_range(0..300),
        size_bits: 4000,
        created_at: id as f64,
    }
}

#[test]
fn fuzz_hundred_thousand_transactions_conserves_value() {
    let users = 12;
    let mut ledger = seeded_ledger(users);
    let mut r = rng::stream(2024, "ledger-fuzz");
    let mut applied = 0;
    for i in 0..100_000u64 {
        let tx = random_tx(&mut r, i, users);
        let before = ledger.clone();
        match ledger.apply_transaction(&tx) {
            Ok(()) => applied += 1,
            Err(_) => assert_eq!(ledger, before, "failed transaction mutated state"),
        }
        if i % 97 == 0 {
            ledger.reward_miner(NodeId(0)).unwrap();
        }
        assert!(ledger.is_conserved(), "conservation broken at tx {i}");
    }
    assert!(applied > 30_000, "fuzz too hostile: {applied} applied");
    assert_eq!(ledger.fiat_supply() + ledger.token_supply(), 500 * u64::from(users) + ledger.total_rewards_paid());
}

/// Classic disjoint-set forest with path halving.
struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
    }
}

#[test]
fn partition_detection_matches_union_find_on_random_graphs() {
    let mut r = rng::stream(77, "graphs");
    for g in 0..1000 {
        let n = r.random_range(1..40usize);
        let density = r.random::<f64>() * 3.0 / n as f64;
        let mut conn: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let mut uf = UnionFind((0..n).collect());
        // Some nodes only ever appear as someone else's neighbour.
        let listed: Vec<bool> = (0..n).map(|i| i == 0 || r.random_bool(0.9)).collect();
        for a in 0..n {
            if listed[a] {
                conn.entry(NodeId(a as u32)).or_default();
            }
        }
        let mut present = listed.clone();
        for a in 0..n {
            if !listed[a] {
                continue;
            }
            for b in 0..n {
                if a != b && r.random_bool(density.min(1.0)) {
                    conn.get_mut(&NodeId(a as u32)).unwrap().insert(NodeId(b as u32));
                    uf.union(a, b);
                    present[b] = true;
                }
            }
        }
        let groups = detect_partition(&conn, NodeId(0)).unwrap();
        let mut expected: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
        for i in (0..n).filter(|&i| present[i]) {
            expected.entry(uf.find(i)).or_default().insert(NodeId(i as u32));
        }
        let got: BTreeSet<BTreeSet<NodeId>> = groups.iter().cloned().collect();
        let want: BTreeSet<BTreeSet<NodeId>> = expected.into_values().collect();
        assert_eq!(got, want, "graph {g}");
        assert_eq!(groups.len(), got.len(), "graph {g}: duplicate groups");
        assert!(groups[0].contains(&NodeId(0)));
    }
}

#[test]
fn partition_detection_rejects_unknown_start() {
    let conn = BTreeMap::from([(NodeId(1), BTreeSet::from([NodeId(2)]))]);
    assert!(detect_partition(&conn, NodeId(9)).is_err());
}

proptest! {
    #[test]
    fn conservation_holds_for_any_sequence(seed in any::<u64>(), len in 1usize..400) {
        let mut ledger = seeded_ledger(5);
        let mut r = rng::stream(seed, "prop");
        for i in 0..len as u64 {
            let tx = random_tx(&mut r, i, 5);
            let before = ledger.clone();
            if ledger.apply_transaction(&tx).is_err() {
                prop_assert_eq!(&ledger, &before);
            }
            prop_assert!(ledger.is_conserved());
        }
    }

    #[test]
    fn transfers_preserve_token_supply(amounts in prop::collection::vec((0u32..4, 0u32..4, 1u64..200), 1..200)) {
        let mut ledger = seeded_ledger(4);
        for u in 0..4 {
            ledger.apply_transaction(&Transaction {
                id: TxId(u64::from(u)), kind: TxKind::ExchangeToToken, sender: NodeId(u), receiver: BANK,
                amount: 400, size_bits: 0, created_at: 0.0,
            }).unwrap();
        }
        let supply = ledger.token_supply();
        for (i, (s, d, a)) in amounts.into_iter().enumerate() {
            let _ = ledger.apply_transaction(&Transaction {
                id: TxId(10 + i as u64), kind: TxKind::Regular, sender: NodeId(s), receiver: NodeId(d),
                amount: a, size_bits: 4000, created_at: i as f64,
            });
            prop_assert_eq!(ledger.token_supply(), supply);
        }
    }
}
