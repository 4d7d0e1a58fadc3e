//! Property tests over consensus rules, analytics and the design models,
//! plus end-to-end checks that tie the simulator back to the models.

use dtchain::analytics::{self, MetricSeries, Resolution};
use dtchain::chain::{adjust_difficulty, MIN_DIFFICULTY};
use dtchain::design::{self, CostInputs, ProfitInputs};
use dtchain::scenario::{BankWindows, Outage, PartitionSpec, Scenario, Topology};
use dtchain::sim;
use dtchain::NodeId;
use proptest::prelude::*;

proptest! {
    #[test]
    fn difficulty_never_rises_with_a_longer_gap(
        parent in MIN_DIFFICULTY..u64::MAX / 4,
        dt1 in 0.001f64..5000.0,
        extra in 0.0f64..5000.0,
    ) {
        let d1 = adjust_difficulty(parent, 0.0, dt1).unwrap();
        let d2 = adjust_difficulty(parent, 0.0, dt1 + extra).unwrap();
        prop_assert!(d2 <= d1);
        prop_assert!(d1 >= MIN_DIFFICULTY && d2 >= MIN_DIFFICULTY);
    }

    #[test]
    fn difficulty_is_monotone_in_parent(a in MIN_DIFFICULTY..1u64 << 40, b in MIN_DIFFICULTY..1u64 << 40, dt in 0.001f64..2000.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(adjust_difficulty(lo, 0.0, dt).unwrap() <= adjust_difficulty(hi, 0.0, dt).unwrap());
    }

    #[test]
    fn percentiles_ignore_input_order(mut xs in prop::collection::vec(0.0f64..1e4, 1..300), seed in any::<u64>()) {
        let before = analytics::percentile_report(&xs).unwrap();
        // Deterministic shuffle driven by the seed.
        let mut s = seed | 1;
        for i in (1..xs.len()).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            xs.swap(i, (s % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(before, analytics::percentile_report(&xs).unwrap());
    }

    #[test]
    fn deltas_telescope(mut ts in prop::collection::vec(0.0f64..1e6, 2..200)) {
        ts.sort_by(f64::total_cmp);
        let d = analytics::timestamp_deltas(&ts);
        let sum: f64 = d.iter().sum();
        prop_assert!((sum - (ts[ts.len() - 1] - ts[0])).abs() < 1e-6);
    }

    #[test]
    fn resolving_period_is_anchored_and_non_negative(
        values in prop::collection::vec(1.0f64..100.0, 0..60),
        t0 in 0.0f64..600.0,
    ) {
        let series = MetricSeries {
            name: "x".into(),
            points: values.iter().enumerate().map(|(i, v)| (i as f64 * 10.0, *v)).collect(),
        };
        match analytics::resolving_period(&series, t0) {
            Resolution::Resolved { start, end, duration } => {
                prop_assert_eq!(start, t0);
                prop_assert!(duration >= 0.0);
                prop_assert!((end - start - duration).abs() < 1e-9);
            }
            Resolution::Unresolved { start } => prop_assert_eq!(start, t0),
        }
    }

    #[test]
    fn min_connections_is_minimal(l_m in 2u64..3000, k in 1u32..6) {
        let c = design::min_connections(l_m, k).unwrap();
        prop_assert!(design::reach(c.l_c, k) >= u128::from(l_m));
        prop_assert!(c.l_c == 1 || design::reach(c.l_c - 1, k) < u128::from(l_m));
        prop_assert!(c.l_c < l_m);
        if k > 1 {
            prop_assert!(c.l_c <= design::min_connections(l_m, k - 1).unwrap().l_c);
        }
    }

    #[test]
    fn profit_falls_as_miners_join(r in 0.1f64..100.0, eta in 1e-12f64..1e-6, h in 1.0f64..1e7, t in 1.0f64..60.0, l_m in 1u64..10_000) {
        let p = |n| design::expected_profit(&ProfitInputs { r, eta, h, mean_t: t, l_m: n }).unwrap();
        prop_assert!(p(l_m + 1) < p(l_m));
    }

    #[test]
    fn cost_is_linear_in_each_count(
        base in (1.0f64..50.0, 1.0f64..1000.0, 1.0f64..10.0, 0.1f64..10.0, 0.0f64..1e-5, 1e3f64..1e7, 1.0f64..1e4),
        counts in (0.0f64..10.0, 0.0f64..1e5, 0.0f64..100.0),
        which in 0usize..3,
        scale in 0.0f64..5.0,
    ) {
        let (l_m, d_m, x_m, r, c_bw, bw, t_c) = base;
        let (x_y, x_b, x_s) = counts;
        let c = CostInputs { l_m, d_m, x_m, r, c_bw, bw, t_c, x_y, x_b, x_s };
        let zeroed = |c: CostInputs| match which {
            0 => CostInputs { x_y: 0.0, ..c },
            1 => CostInputs { x_b: 0.0, ..c },
            _ => CostInputs { x_s: 0.0, ..c },
        };
        let scaled = match which {
            0 => CostInputs { x_y: x_y * scale, ..c },
            1 => CostInputs { x_b: x_b * scale, ..c },
            _ => CostInputs { x_s: x_s * scale, ..c },
        };
        let f0 = design::system_cost(&zeroed(c)).unwrap();
        let f1 = design::system_cost(&c).unwrap();
        let fs = design::system_cost(&scaled).unwrap();
        let tol = 1e-9 * f1.abs().max(fs.abs()).max(1.0);
        prop_assert!((fs - f0 - scale * (f1 - f0)).abs() <= tol);
    }

    #[test]
    fn scenario_text_round_trips(
        seed in any::<u64>(),
        horizon in 1.0f64..1e6,
        miners in 1u32..12,
        light in 0u32..8,
        full in 0u32..3,
        delay in 0.0f64..2000.0,
        churn in 0.0f64..1.0,
        topo in 0usize..4,
        lambda in 0.0f64..30.0,
        windows in 0usize..3,
    ) {
        let mut s = Scenario::new(seed, horizon);
        s.nodes.miners = miners;
        s.nodes.light = light;
        s.nodes.full = full;
        s.disturbance.link_delay_ms = delay;
        s.disturbance.churn_rate = churn;
        s.workload.lambda_t = lambda;
        s.topology = match topo {
            0 => Topology::FullMesh,
            1 => Topology::Ring,
            2 => Topology::Star { hub: NodeId(0) },
            _ => Topology::Explicit((1..miners).map(|i| (NodeId(i - 1), NodeId(i))).collect()),
        };
        s.bank.windows = match windows {
            0 => BankWindows::Always,
            1 => BankWindows::Explicit(vec![(0.0, horizon / 3.0), (horizon / 2.0, horizon)]),
            _ => BankWindows::Periodic { period_s: 3600.0, connected_s: 600.0 },
        };
        if miners > 2 {
            s.disturbance.outage = Some(Outage { nodes: [NodeId(1)].into(), start_s: horizon / 4.0, end_s: None });
            s.disturbance.partition =
                Some(PartitionSpec { group: [NodeId(0)].into(), start_s: 1.0, end_s: Some(horizon / 2.0) });
        }
        prop_assume!(s.validate().is_ok());
        let text = s.to_text();
        let back = Scenario::parse(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_text(), text);
    }
}

#[test]
fn min_connections_grid_and_scaling() {
    for k in 1..=4 {
        for l_m in 4..=100 {
            let c = design::min_connections(l_m, k).unwrap();
            assert!(design::reach(c.l_c, k) >= u128::from(l_m));
            assert!(c.l_c == 1 || design::reach(c.l_c - 1, k) < u128::from(l_m));
            if k == 1 {
                assert_eq!(c.l_c, l_m - 1);
            }
        }
    }
    // Each miner needs an ever smaller share of the network as it grows.
    let gamma = |l_m| design::min_connections(l_m, 2).unwrap().gamma;
    assert!(gamma(10_000) < gamma(1000) && gamma(1000) < gamma(100));
    assert!(gamma(10_000) < 0.02);
}

#[test]
fn canonical_block_times_telescope() {
    let mut s = Scenario::new(3, 7200.0);
    s.disturbance.link_delay_ms = 200.0;
    let t = sim::run(&s).unwrap();
    let bt = analytics::block_times(&t, true).unwrap();
    let ts: Vec<f64> = t.canonical_blocks().map(|b| b.timestamp()).collect();
    let sum: f64 = bt.iter().sum();
    assert!((sum - (ts[ts.len() - 1] - ts[0])).abs() < 1e-6);
}

#[test]
fn simulated_blocks_carry_the_expected_payload() {
    let lambda = 2.0;
    let mut s = Scenario::new(8, 14_400.0);
    s.workload.lambda_t = lambda;
    let t = sim::run(&s).unwrap();
    let summary = analytics::summarize(&t);
    let mean_t = summary.mean_block_time.unwrap();
    let bits: Vec<f64> = t.canonical_blocks().skip(1).map(|b| b.tx_bits() as f64).collect();
    let mean_bits = bits.iter().sum::<f64>() / bits.len() as f64;
    let expected = design::expected_block_bits(lambda, 4000.0, mean_t);
    assert!((mean_bits - expected).abs() / expected < 0.1, "simulated {mean_bits} model {expected}");
}

#[test]
fn mean_processing_time_matches_mean_block_interval() {
    let mut s = Scenario::new(9, 14_400.0);
    s.workload.lambda_t = 1.0;
    let t = sim::run(&s).unwrap();
    let summary = analytics::summarize(&t);
    let (tx, blk) = (summary.mean_tx_time.unwrap(), summary.mean_block_time.unwrap());
    assert!((tx - blk).abs() / blk < 0.1, "tx {tx} block {blk}");
}

#[test]
fn every_transaction_before_the_tip_is_included() {
    let mut s = Scenario::new(10, 7200.0);
    s.workload.lambda_t = 3.0;
    let t = sim::run(&s).unwrap();
    let tip = t.canonical_blocks().last().unwrap().timestamp();
    let times = analytics::tx_processing_times(&t);
    assert!(!times.times.is_empty());
    for r in &t.txs {
        if r.tx.created_at < tip {
            assert!(r.included_at.is_some(), "tx {} created at {} missing", r.tx.id, r.tx.created_at);
        }
    }
    assert_eq!(t.dropped_txs, 0);
}
