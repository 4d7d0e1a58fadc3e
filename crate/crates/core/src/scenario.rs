//! Experiment configuration and its sectioned `key = value` text format.
//!
//! Node ids are laid out as miners, then full nodes, then light nodes, with
//! the bank last. Topology edges connect relaying nodes (miners and full
//! nodes); light nodes attach to `light_peers` relaying nodes each.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::chain::{Capacity, GenesisConfig};
use crate::ids::NodeId;
use crate::workload::WorkloadConfig;

#[derive(Clone, Debug, Error, PartialEq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

fn err<T>(line: Option<usize>, msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError { line, msg: msg.into() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRole {
    Miner,
    Full,
    Light,
    Bank,
}

impl NodeRole {
    pub fn relays(self) -> bool {
        matches!(self, NodeRole::Miner | NodeRole::Full)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: NodeRole,
    /// Hashes per second; zero for non-miners.
    pub hashrate: f64,
    /// Nodes this one forwards blocks to.
    pub peers: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Topology {
    FullMesh,
    Ring,
    Star { hub: NodeId },
    Explicit(Vec<(NodeId, NodeId)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outage {
    pub nodes: BTreeSet<NodeId>,
    pub start_s: f64,
    pub end_s: Option<f64>,
}

/// Links between `group` and every other node are cut during the interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec {
    pub group: BTreeSet<NodeId>,
    pub start_s: f64,
    pub end_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceProfile {
    pub link_delay_ms: f64,
    /// Probability that a miner is offline during a churn epoch.
    pub churn_rate: f64,
    pub churn_epoch_s: f64,
    pub outage: Option<Outage>,
    pub partition: Option<PartitionSpec>,
}

impl Default for DisturbanceProfile {
    fn default() -> Self {
        Self { link_delay_ms: 0.0, churn_rate: 0.0, churn_epoch_s: 1200.0, outage: None, partition: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BankWindows {
    Always,
    Explicit(Vec<(f64, f64)>),
    /// Connected for `connected_s` at the start of every `period_s`.
    Periodic { period_s: f64, connected_s: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankSchedule {
    pub windows: BankWindows,
    pub backhaul_bw_bps: f64,
    pub bw_cost_per_bit: f64,
    pub sync_overhead_ms: f64,
    pub header_bits: u64,
}

impl Default for BankSchedule {
    fn default() -> Self {
        Self {
            windows: BankWindows::Always,
            backhaul_bw_bps: 128_000.0,
            bw_cost_per_bit: 0.0,
            sync_overhead_ms: 5.0,
            header_bits: 2000,
        }
    }
}

impl BankSchedule {
    /// Connected windows clipped to `[0, horizon)`.
    pub fn connected_windows(&self, horizon: f64) -> Vec<(f64, f64)> {
        match &self.windows {
            BankWindows::Always => vec![(0.0, horizon)],
            BankWindows::Explicit(w) => {
                w.iter().filter(|(s, _)| *s < horizon).map(|&(s, e)| (s, e.min(horizon))).collect()
            }
            BankWindows::Periodic { period_s, connected_s } => {
                let mut out = Vec::new();
                let mut k = 0.0;
                while k * period_s < horizon {
                    let s = k * period_s;
                    out.push((s, (s + connected_s).min(horizon)));
                    k += 1.0;
                }
                out
            }
        }
    }

    /// Total connected seconds `T_C` within the horizon.
    pub fn connected_seconds(&self, horizon: f64) -> f64 {
        self.connected_windows(horizon).iter().map(|(s, e)| e - s).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerSetup {
    pub reward_per_block: u64,
    pub initial_fiat: u64,
    pub initial_tokens: u64,
}

impl Default for LedgerSetup {
    fn default() -> Self {
        Self { reward_per_block: 5, initial_fiat: 1_000_000, initial_tokens: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub horizon_s: f64,
    pub seed: u64,
    /// Node whose head changes feed the block-time series.
    pub observer: Option<NodeId>,
    /// Blocks stamped before this time are excluded from metrics.
    pub warmup_s: f64,
    /// Moving-average length applied to the observer series.
    pub series_window: usize,
    pub tick_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeCounts {
    pub miners: u32,
    pub full: u32,
    pub light: u32,
    pub miner_hashrate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub run: RunConfig,
    pub genesis: GenesisConfig,
    pub nodes: NodeCounts,
    pub topology: Topology,
    pub light_peers: u32,
    pub disturbance: DisturbanceProfile,
    pub bank: BankSchedule,
    /// `users` is filled in from the node layout when a run starts.
    pub workload: WorkloadConfig,
    pub ledger: LedgerSetup,
}

impl Scenario {
    /// A scenario with the default layout of 10 miners and 10 light nodes.
    pub fn new(seed: u64, horizon_s: f64) -> Self {
        Scenario {
            run: RunConfig { horizon_s, seed, observer: None, warmup_s: 0.0, series_window: 10, tick_s: 60.0 },
            genesis: GenesisConfig::default(),
            nodes: NodeCounts { miners: 10, full: 0, light: 10, miner_hashrate: 29_000.0 },
            topology: Topology::FullMesh,
            light_peers: 1,
            disturbance: DisturbanceProfile::default(),
            bank: BankSchedule::default(),
            workload: WorkloadConfig::default(),
            ledger: LedgerSetup::default(),
        }
    }

    pub fn relay_count(&self) -> u32 {
        self.nodes.miners + self.nodes.full
    }

    pub fn node_count(&self) -> u32 {
        self.relay_count() + self.nodes.light + 1
    }

    pub fn bank_id(&self) -> NodeId {
        NodeId(self.node_count() - 1)
    }

    pub fn miner_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.miners).map(NodeId)
    }

    pub fn light_ids(&self) -> impl Iterator<Item = NodeId> {
        let start = self.relay_count();
        (start..start + self.nodes.light).map(NodeId)
    }

    pub fn role_of(&self, id: NodeId) -> Option<NodeRole> {
        let m = self.nodes.miners;
        let r = self.relay_count();
        let l = r + self.nodes.light;
        match id.0 {
            i if i < m => Some(NodeRole::Miner),
            i if i < r => Some(NodeRole::Full),
            i if i < l => Some(NodeRole::Light),
            i if i == l => Some(NodeRole::Bank),
            _ => None,
        }
    }

    /// Observer node: the configured one, else the first light node, else
    /// the first full node, else miner 0.
    pub fn observer(&self) -> NodeId {
        self.run.observer.unwrap_or_else(|| {
            if self.nodes.light > 0 {
                NodeId(self.relay_count())
            } else if self.nodes.full > 0 {
                NodeId(self.nodes.miners)
            } else {
                NodeId(0)
            }
        })
    }

    /// Undirected relay edges implied by the topology.
    pub fn relay_edges(&self) -> BTreeSet<(NodeId, NodeId)> {
        let n = self.relay_count();
        let mut edges = BTreeSet::new();
        let mut add = |a: u32, b: u32| {
            if a != b {
                edges.insert((NodeId(a.min(b)), NodeId(a.max(b))));
            }
        };
        match &self.topology {
            Topology::FullMesh => {
                for a in 0..n {
                    for b in a + 1..n {
                        add(a, b);
                    }
                }
            }
            Topology::Ring => {
                if n > 1 {
                    for a in 0..n {
                        add(a, (a + 1) % n);
                    }
                }
            }
            Topology::Star { hub } => {
                for a in 0..n {
                    add(hub.0, a);
                }
            }
            Topology::Explicit(list) => {
                for &(a, b) in list {
                    add(a.0, b.0);
                }
            }
        }
        edges
    }

    /// Full node list with peer sets. Relays forward to their relay
    /// neighbours, their attached light nodes and the bank.
    pub fn node_specs(&self) -> Vec<NodeSpec> {
        let relays = self.relay_count();
        let bank = self.bank_id();
        let mut specs: Vec<NodeSpec> = (0..self.node_count())
            .map(|i| {
                let id = NodeId(i);
                let role = self.role_of(id).expect("id in range");
                let hashrate = if role == NodeRole::Miner { self.nodes.miner_hashrate } else { 0.0 };
                NodeSpec { id, role, hashrate, peers: BTreeSet::new() }
            })
            .collect();
        for (a, b) in self.relay_edges() {
            specs[a.index()].peers.insert(b);
            specs[b.index()].peers.insert(a);
        }
        if relays > 0 {
            for (j, light) in self.light_ids().enumerate() {
                for i in 0..self.light_peers.min(relays) {
                    let relay = (j as u32 * self.light_peers + i) % relays;
                    specs[relay as usize].peers.insert(light);
                    specs[light.index()].peers.insert(NodeId(relay));
                }
            }
        }
        for spec in specs.iter_mut().take(relays as usize) {
            spec.peers.insert(bank);
        }
        specs
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.validate_inner(&|_, _| None)
    }

    fn validate_inner(&self, line: &dyn Fn(&str, &str) -> Option<usize>) -> Result<(), ScenarioError> {
        let r = &self.run;
        if !(r.horizon_s > 0.0 && r.horizon_s.is_finite()) {
            return err(line("run", "horizon_s"), "run.horizon_s must be positive");
        }
        if !(r.warmup_s >= 0.0 && r.warmup_s < r.horizon_s) {
            return err(line("run", "warmup_s"), "run.warmup_s must lie in [0, horizon_s)");
        }
        if r.series_window == 0 {
            return err(line("run", "series_window"), "run.series_window must be at least 1");
        }
        if !(r.tick_s > 0.0) {
            return err(line("run", "tick_s"), "run.tick_s must be positive");
        }
        if let Some(obs) = r.observer {
            if obs.0 >= self.node_count() || obs == self.bank_id() {
                return err(line("run", "observer"), format!("run.observer {obs} is not a declared non-bank node"));
            }
        }
        self.genesis
            .validate()
            .or_else(|e| err(line("genesis", "initial_difficulty"), format!("genesis: {e}")))?;
        if self.nodes.miners == 0 {
            return err(line("nodes", "miners"), "nodes.miners must be at least 1");
        }
        if !(self.nodes.miner_hashrate >= 0.0 && self.nodes.miner_hashrate.is_finite()) {
            return err(line("nodes", "miner_hashrate"), "nodes.miner_hashrate must be non-negative");
        }
        let relays = self.relay_count();
        match &self.topology {
            Topology::Star { hub } if hub.0 >= relays => {
                return err(line("topology", "hub"), format!("topology.hub {hub} is not a relaying node"));
            }
            Topology::Explicit(edges) => {
                for &(a, b) in edges {
                    if a.0 >= relays || b.0 >= relays || a == b {
                        return err(
                            line("topology", "edges"),
                            format!("topology.edges: {a}-{b} must join two distinct relaying nodes"),
                        );
                    }
                }
            }
            _ => {}
        }
        if self.nodes.light > 0 && self.light_peers == 0 {
            return err(line("topology", "light_peers"), "topology.light_peers must be at least 1");
        }
        let d = &self.disturbance;
        if !(d.link_delay_ms >= 0.0 && d.link_delay_ms.is_finite()) {
            return err(line("disturbance", "link_delay_ms"), "disturbance.link_delay_ms must be non-negative");
        }
        if !(0.0..=1.0).contains(&d.churn_rate) {
            return err(line("disturbance", "churn_rate"), "disturbance.churn_rate must lie in [0, 1]");
        }
        if !(d.churn_epoch_s > 0.0) {
            return err(line("disturbance", "churn_epoch_s"), "disturbance.churn_epoch_s must be positive");
        }
        let declared = |ids: &BTreeSet<NodeId>| ids.iter().all(|n| n.0 < self.node_count() && *n != self.bank_id());
        if let Some(o) = &d.outage {
            if o.nodes.is_empty() || !declared(&o.nodes) {
                return err(line("disturbance", "outage_nodes"), "disturbance.outage_nodes must list declared non-bank nodes");
            }
            if o.end_s.is_some_and(|e| e <= o.start_s) || o.start_s < 0.0 {
                return err(line("disturbance", "outage_end_s"), "disturbance outage must end after it starts");
            }
        }
        if let Some(p) = &d.partition {
            if p.group.is_empty() || !declared(&p.group) {
                return err(
                    line("disturbance", "partition_group"),
                    "disturbance.partition_group must list declared non-bank nodes",
                );
            }
            if p.end_s.is_some_and(|e| e <= p.start_s) || p.start_s < 0.0 {
                return err(line("disturbance", "partition_end_s"), "disturbance partition must end after it starts");
            }
        }
        let b = &self.bank;
        match &b.windows {
            BankWindows::Explicit(w) => {
                let mut prev_end = f64::NEG_INFINITY;
                for &(s, e) in w {
                    if !(s >= 0.0 && e > s && s >= prev_end) {
                        return err(line("bank", "windows"), "bank.windows must be ordered, disjoint and non-empty");
                    }
                    prev_end = e;
                }
            }
            BankWindows::Periodic { period_s, connected_s } => {
                if !(*period_s > 0.0 && *connected_s > 0.0 && connected_s <= period_s) {
                    return err(line("bank", "period_s"), "bank.period_s and connected_s need 0 < connected_s <= period_s");
                }
            }
            BankWindows::Always => {}
        }
        if !(b.backhaul_bw_bps > 0.0) {
            return err(line("bank", "backhaul_bw_bps"), "bank.backhaul_bw_bps must be positive");
        }
        if !(b.bw_cost_per_bit >= 0.0 && b.sync_overhead_ms >= 0.0) {
            return err(line("bank", "sync_overhead_ms"), "bank costs and overheads must be non-negative");
        }
        if let Err(e) = self.workload_check() {
            return err(line("workload", "lambda_t"), e);
        }
        Ok(())
    }

    fn workload_check(&self) -> Result<(), String> {
        let mut w = self.workload.clone();
        w.users = self.workload_users();
        w.validate().map_err(|e| e.to_string())
    }

    /// Transaction parties: light nodes when there are at least two of them,
    /// otherwise every non-bank node.
    pub fn workload_users(&self) -> Vec<NodeId> {
        if self.nodes.light >= 2 {
            self.light_ids().collect()
        } else {
            (0..self.node_count() - 1).map(NodeId).collect()
        }
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses `text` after applying `section.key=value` overrides.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Scenario, ScenarioError> {
        let mut doc = Doc::parse(text)?;
        for o in overrides {
            doc.apply_override(o)?;
        }
        doc.build()
    }

    /// Canonical text form; parsing it yields an identical scenario.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.run;
        let _ = writeln!(s, "[run]\nhorizon_s = {}\nseed = {}", r.horizon_s, r.seed);
        if let Some(o) = r.observer {
            let _ = writeln!(s, "observer = {}", o.0);
        }
        let _ = writeln!(s, "warmup_s = {}\nseries_window = {}\ntick_s = {}\n", r.warmup_s, r.series_window, r.tick_s);
        let g = &self.genesis;
        let cap = match g.block_capacity {
            Capacity::Unlimited => "unlimited".to_string(),
            Capacity::Bits(b) => b.to_string(),
        };
        let _ = writeln!(
            s,
            "[genesis]\ninitial_difficulty = {}\nnonce_seed = {}\nblock_capacity_bits = {}\n",
            g.initial_difficulty, g.nonce_seed, cap
        );
        let n = &self.nodes;
        let _ = writeln!(
            s,
            "[nodes]\nminers = {}\nminer_hashrate = {}\nfull = {}\nlight = {}\n",
            n.miners, n.miner_hashrate, n.full, n.light
        );
        let _ = writeln!(s, "[topology]");
        match &self.topology {
            Topology::FullMesh => {
                let _ = writeln!(s, "kind = full-mesh");
            }
            Topology::Ring => {
                let _ = writeln!(s, "kind = ring");
            }
            Topology::Star { hub } => {
                let _ = writeln!(s, "kind = star\nhub = {}", hub.0);
            }
            Topology::Explicit(edges) => {
                let list: Vec<String> = edges.iter().map(|(a, b)| format!("{}-{}", a.0, b.0)).collect();
                let _ = writeln!(s, "kind = explicit\nedges = {}", list.join(", "));
            }
        }
        let _ = writeln!(s, "light_peers = {}\n", self.light_peers);
        let d = &self.disturbance;
        let _ = writeln!(
            s,
            "[disturbance]\nlink_delay_ms = {}\nchurn_rate = {}\nchurn_epoch_s = {}",
            d.link_delay_ms, d.churn_rate, d.churn_epoch_s
        );
        if let Some(o) = &d.outage {
            let _ = writeln!(s, "outage_nodes = {}\noutage_start_s = {}", id_list(&o.nodes), o.start_s);
            if let Some(e) = o.end_s {
                let _ = writeln!(s, "outage_end_s = {e}");
            }
        }
        if let Some(p) = &d.partition {
            let _ = writeln!(s, "partition_group = {}\npartition_start_s = {}", id_list(&p.group), p.start_s);
            if let Some(e) = p.end_s {
                let _ = writeln!(s, "partition_end_s = {e}");
            }
        }
        s.push('\n');
        let b = &self.bank;
        let _ = writeln!(s, "[bank]");
        match &b.windows {
            BankWindows::Always => {
                let _ = writeln!(s, "windows = always");
            }
            BankWindows::Explicit(w) => {
                let list: Vec<String> = w.iter().map(|(a, e)| format!("{a}-{e}")).collect();
                let text = if list.is_empty() { "none".to_string() } else { list.join(", ") };
                let _ = writeln!(s, "windows = {text}");
            }
            BankWindows::Periodic { period_s, connected_s } => {
                let _ = writeln!(s, "period_s = {period_s}\nconnected_s = {connected_s}");
            }
        }
        let _ = writeln!(
            s,
            "backhaul_bw_bps = {}\nbw_cost_per_bit = {}\nsync_overhead_ms = {}\nheader_bits = {}\n",
            b.backhaul_bw_bps, b.bw_cost_per_bit, b.sync_overhead_ms, b.header_bits
        );
        let w = &self.workload;
        let _ = writeln!(
            s,
            "[workload]\nlambda_t = {}\nlambda_e = {}\ns_t_bits = {}\ns_e_bits = {}\namount_min = {}\namount_max = {}\nexchange_to_fiat_share = {}\n",
            w.lambda_t, w.lambda_e, w.s_t_bits, w.s_e_bits, w.amount_min, w.amount_max, w.exchange_to_fiat_share
        );
        let l = &self.ledger;
        let _ = writeln!(
            s,
            "[ledger]\nreward_per_block = {}\ninitial_fiat = {}\ninitial_tokens = {}",
            l.reward_per_block, l.initial_fiat, l.initial_tokens
        );
        s
    }
}

fn id_list(ids: &BTreeSet<NodeId>) -> String {
    ids.iter().map(|n| n.0.to_string()).collect::<Vec<_>>().join(",")
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("run", &["horizon_s", "seed", "observer", "warmup_s", "series_window", "tick_s"]),
    ("genesis", &["initial_difficulty", "nonce_seed", "block_capacity_bits"]),
    ("nodes", &["miners", "miner_hashrate", "full", "light"]),
    ("topology", &["kind", "hub", "edges", "light_peers"]),
    (
        "disturbance",
        &[
            "link_delay_ms",
            "churn_rate",
            "churn_epoch_s",
            "outage_nodes",
            "outage_start_s",
            "outage_end_s",
            "partition_group",
            "partition_start_s",
            "partition_end_s",
        ],
    ),
    (
        "bank",
        &["windows", "period_s", "connected_s", "backhaul_bw_bps", "bw_cost_per_bit", "sync_overhead_ms", "header_bits"],
    ),
    (
        "workload",
        &["lambda_t", "lambda_e", "s_t_bits", "s_e_bits", "amount_min", "amount_max", "exchange_to_fiat_share"],
    ),
    ("ledger", &["reward_per_block", "initial_fiat", "initial_tokens"]),
];

#[derive(Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

#[derive(Default)]
struct Doc {
    sections: BTreeMap<String, Section>,
}

impl Doc {
    fn parse(text: &str) -> Result<Doc, ScenarioError> {
        let mut doc = Doc::default();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .ok_or(ScenarioError { line: Some(line_no), msg: "unterminated section header".into() })?;
                if !SECTIONS.iter().any(|(s, _)| *s == name) {
                    return err(Some(line_no), format!("unknown section [{name}]"));
                }
                if doc.sections.contains_key(name) {
                    return err(Some(line_no), format!("duplicate section [{name}]"));
                }
                doc.sections.insert(name.to_string(), Section { line: line_no, entries: BTreeMap::new() });
                current = Some(name.to_string());
                continue;
            }
            let Some(section) = current.as_ref() else {
                return err(Some(line_no), "key outside of any section");
            };
            let (key, value) = line
                .split_once('=')
                .ok_or(ScenarioError { line: Some(line_no), msg: "expected `key = value`".into() })?;
            doc.set(section, key.trim(), value.trim(), line_no)?;
        }
        Ok(doc)
    }

    fn set(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<(), ScenarioError> {
        let keys = SECTIONS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
        if !keys.contains(&key) {
            return err(Some(line), format!("unknown key {section}.{key}"));
        }
        let sec = self.sections.entry(section.to_string()).or_insert_with(|| Section { line, entries: BTreeMap::new() });
        if line > 0 && sec.entries.contains_key(key) {
            return err(Some(line), format!("duplicate key {section}.{key}"));
        }
        sec.entries.insert(key.to_string(), (value.to_string(), line));
        Ok(())
    }

    fn apply_override(&mut self, spec: &str) -> Result<(), ScenarioError> {
        let (path, value) = spec
            .split_once('=')
            .ok_or(ScenarioError { line: None, msg: format!("override `{spec}` must be section.key=value") })?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or(ScenarioError { line: None, msg: format!("override `{spec}` must be section.key=value") })?;
        if !SECTIONS.iter().any(|(s, _)| *s == section) {
            return err(None, format!("override names unknown section [{section}]"));
        }
        self.set(section, key, value.trim(), 0).map_err(|e| ScenarioError { line: None, ..e })
    }

    fn get(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        self.sections.get(section)?.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        match self.get(section, key) {
            Some((_, l)) if l > 0 => Some(l),
            Some(_) => None,
            None => self.sections.get(section).map(|s| s.line).filter(|l| *l > 0),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ScenarioError> {
        match self.get(section, key) {
            None => Ok(None),
            Some((v, l)) => v.parse().map(Some).or_else(|_| {
                err((l > 0).then_some(l), format!("{section}.{key}: cannot parse `{v}`"))
            }),
        }
    }

    fn or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ScenarioError> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    fn required<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T, ScenarioError> {
        if !self.sections.contains_key(section) {
            return err(None, format!("missing section [{section}] (needs {section}.{key})"));
        }
        self.parsed(section, key)?
            .ok_or_else(|| ScenarioError { line: self.line(section, key), msg: format!("missing required field {section}.{key}") })
    }

    fn ids(&self, section: &str, key: &str) -> Result<Option<BTreeSet<NodeId>>, ScenarioError> {
        let Some((v, l)) = self.get(section, key) else { return Ok(None) };
        let mut out = BTreeSet::new();
        for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let id = part
                .parse::<u32>()
                .or_else(|_| err((l > 0).then_some(l), format!("{section}.{key}: bad node id `{part}`")))?;
            out.insert(NodeId(id));
        }
        Ok(Some(out))
    }

    fn pairs<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Vec<(T, T)>, ScenarioError> {
        let Some((v, l)) = self.get(section, key) else { return Ok(Vec::new()) };
        let mut out = Vec::new();
        for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let parsed = part.split_once('-').and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            match parsed {
                Some(p) => out.push(p),
                None => return err((l > 0).then_some(l), format!("{section}.{key}: bad pair `{part}`")),
            }
        }
        Ok(out)
    }

    fn build(&self) -> Result<Scenario, ScenarioError> {
        let run = RunConfig {
            horizon_s: self.required("run", "horizon_s")?,
            seed: self.required("run", "seed")?,
            observer: self.parsed::<u32>("run", "observer")?.map(NodeId),
            warmup_s: self.or("run", "warmup_s", 0.0)?,
            series_window: self.or("run", "series_window", 10)?,
            tick_s: self.or("run", "tick_s", 60.0)?,
        };
        let defaults = GenesisConfig::default();
        let capacity = match self.get("genesis", "block_capacity_bits") {
            None | Some(("unlimited", _)) => Capacity::Unlimited,
            Some(_) => Capacity::Bits(self.required("genesis", "block_capacity_bits")?),
        };
        let genesis = GenesisConfig {
            initial_difficulty: self.required("genesis", "initial_difficulty")?,
            nonce_seed: self.or("genesis", "nonce_seed", defaults.nonce_seed)?,
            block_capacity: capacity,
        };
        let nodes = NodeCounts {
            miners: self.required("nodes", "miners")?,
            miner_hashrate: self.or("nodes", "miner_hashrate", 29_000.0)?,
            full: self.or("nodes", "full", 0)?,
            light: self.or("nodes", "light", 0)?,
        };
        let kind: String = self.or("topology", "kind", "full-mesh".to_string())?;
        let topology = match kind.as_str() {
            "full-mesh" => Topology::FullMesh,
            "ring" => Topology::Ring,
            "star" => Topology::Star { hub: NodeId(self.or("topology", "hub", 0)?) },
            "explicit" => Topology::Explicit(
                self.pairs::<u32>("topology", "edges")?.into_iter().map(|(a, b)| (NodeId(a), NodeId(b))).collect(),
            ),
            other => {
                return err(self.line("topology", "kind"), format!("topology.kind: unknown topology `{other}`"));
            }
        };
        let dd = DisturbanceProfile::default();
        let outage = match self.ids("disturbance", "outage_nodes")? {
            None => None,
            Some(nodes) => Some(Outage {
                nodes,
                start_s: self.required("disturbance", "outage_start_s")?,
                end_s: self.parsed("disturbance", "outage_end_s")?,
            }),
        };
        let partition = match self.ids("disturbance", "partition_group")? {
            None => None,
            Some(group) => Some(PartitionSpec {
                group,
                start_s: self.required("disturbance", "partition_start_s")?,
                end_s: self.parsed("disturbance", "partition_end_s")?,
            }),
        };
        let disturbance = DisturbanceProfile {
            link_delay_ms: self.or("disturbance", "link_delay_ms", dd.link_delay_ms)?,
            churn_rate: self.or("disturbance", "churn_rate", dd.churn_rate)?,
            churn_epoch_s: self.or("disturbance", "churn_epoch_s", dd.churn_epoch_s)?,
            outage,
            partition,
        };
        let bd = BankSchedule::default();
        let windows = match (self.get("bank", "windows"), self.get("bank", "period_s")) {
            (Some(_), Some((_, l))) => {
                return err((l > 0).then_some(l), "bank.windows and bank.period_s are mutually exclusive");
            }
            (None, Some(_)) => BankWindows::Periodic {
                period_s: self.required("bank", "period_s")?,
                connected_s: self.required("bank", "connected_s")?,
            },
            (None, None) | (Some(("always", _)), None) => BankWindows::Always,
            (Some(("none", _)), None) => BankWindows::Explicit(Vec::new()),
            (Some(_), None) => BankWindows::Explicit(self.pairs::<f64>("bank", "windows")?),
        };
        let bank = BankSchedule {
            windows,
            backhaul_bw_bps: self.or("bank", "backhaul_bw_bps", bd.backhaul_bw_bps)?,
            bw_cost_per_bit: self.or("bank", "bw_cost_per_bit", bd.bw_cost_per_bit)?,
            sync_overhead_ms: self.or("bank", "sync_overhead_ms", bd.sync_overhead_ms)?,
            header_bits: self.or("bank", "header_bits", bd.header_bits)?,
        };
        let wd = WorkloadConfig::default();
        let workload = WorkloadConfig {
            lambda_t: self.or("workload", "lambda_t", wd.lambda_t)?,
            lambda_e: self.or("workload", "lambda_e", wd.lambda_e)?,
            s_t_bits: self.or("workload", "s_t_bits", wd.s_t_bits)?,
            s_e_bits: self.or("workload", "s_e_bits", wd.s_e_bits)?,
            amount_min: self.or("workload", "amount_min", wd.amount_min)?,
            amount_max: self.or("workload", "amount_max", wd.amount_max)?,
            exchange_to_fiat_share: self.or("workload", "exchange_to_fiat_share", wd.exchange_to_fiat_share)?,
            users: Vec::new(),
        };
        let ld = LedgerSetup::default();
        let ledger = LedgerSetup {
            reward_per_block: self.or("ledger", "reward_per_block", ld.reward_per_block)?,
            initial_fiat: self.or("ledger", "initial_fiat", ld.initial_fiat)?,
            initial_tokens: self.or("ledger", "initial_tokens", ld.initial_tokens)?,
        };
        let scenario = Scenario {
            run,
            genesis,
            nodes,
            topology,
            light_peers: self.or("topology", "light_peers", 1)?,
            disturbance,
            bank,
            workload,
            ledger,
        };
        scenario.validate_inner(&|s, k| self.line(s, k))?;
        Ok(scenario)
    }
}
