//! Post-run metrics: block and processing-time percentiles, stale rates,
//! difficulty, and resolving periods after a hashrate change.

use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::trace::SimTrace;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("need at least {needed} blocks, trace has {got}")]
    InsufficientBlocks { needed: usize, got: usize },
    #[error("empty sample")]
    Empty,
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
}

/// Ordered `(t, value)` points.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub const PERCENTILES: [u32; 5] = [50, 70, 90, 95, 99];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PercentileReport {
    pub values: [f64; 5],
}

impl PercentileReport {
    pub fn get(&self, p: u32) -> Option<f64> {
        PERCENTILES.iter().position(|&q| q == p).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        PERCENTILES.iter().copied().zip(self.values.iter().copied())
    }
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p / 100 * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn percentile_report(samples: &[f64]) -> Result<PercentileReport, AnalyticsError> {
    if samples.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mut values = [0.0; 5];
    for (v, p) in values.iter_mut().zip(PERCENTILES) {
        *v = nearest_rank(&s, f64::from(p)).expect("non-empty");
    }
    Ok(PercentileReport { values })
}

/// Gaps between consecutive timestamps after sorting.
pub fn timestamp_deltas(timestamps: &[f64]) -> Vec<f64> {
    let mut ts = timestamps.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Block intervals after warm-up. With `canonical_only` these are the
/// adjacent gaps along the final chain; otherwise every mined block,
/// stale ones included, contributes its gap to its parent.
pub fn block_times(trace: &SimTrace, canonical_only: bool) -> Result<Vec<f64>, AnalyticsError> {
    let gap = |b: &crate::chain::Block| -> Option<f64> {
        let parent = trace.block(b.header.parent?)?;
        (b.header.timestamp >= trace.warmup_s).then(|| b.header.timestamp - parent.header.timestamp)
    };
    let out: Vec<f64> = if canonical_only {
        trace.canonical_blocks().filter_map(|b| gap(b)).collect()
    } else {
        trace.blocks.iter().filter_map(|r| gap(&r.block)).collect()
    };
    if out.is_empty() {
        return Err(AnalyticsError::InsufficientBlocks { needed: 2, got: trace.canonical.len() });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TxTimes {
    /// Inclusion-block timestamp minus creation time, per included tx.
    pub times: Vec<f64>,
    /// Creation times of transactions never included canonically.
    pub unincluded: Vec<f64>,
}

/// Processing times of transactions created after warm-up.
pub fn tx_processing_times(trace: &SimTrace) -> TxTimes {
    let mut out = TxTimes::default();
    for r in trace.txs.iter().filter(|r| r.tx.created_at >= trace.warmup_s) {
        match r.included_at {
            Some(t) => out.times.push(t - r.tx.created_at),
            None => out.unincluded.push(r.tx.created_at),
        }
    }
    out
}

/// Share of mined blocks (stamped after warm-up) that ended up stale.
pub fn stale_rate(trace: &SimTrace) -> f64 {
    let counted: Vec<_> = trace.blocks.iter().filter(|r| r.block.header.timestamp >= trace.warmup_s).collect();
    if counted.is_empty() {
        return 0.0;
    }
    counted.iter().filter(|r| r.stale()).count() as f64 / counted.len() as f64
}

/// Mean difficulty of canonical blocks after warm-up.
pub fn mean_difficulty(trace: &SimTrace) -> Option<f64> {
    let ds: Vec<f64> = trace
        .canonical_blocks()
        .filter(|b| !b.is_genesis() && b.header.timestamp >= trace.warmup_s)
        .map(|b| b.header.difficulty as f64)
        .collect();
    crate::stats::mean(&ds)
}

/// Trailing moving average; output has `len - window + 1` entries.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>, AnalyticsError> {
    if window == 0 {
        return Err(AnalyticsError::ZeroWindow);
    }
    if values.len() < window {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut sum: f64 = values[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out.push(sum / window as f64);
    }
    Ok(out)
}

/// Block times of the observer's head advances, in arrival order.
pub fn observer_series(trace: &SimTrace) -> MetricSeries {
    MetricSeries {
        name: "observer_block_time".into(),
        points: trace.observer_points.iter().map(|p| (p.at, p.block_time)).collect(),
    }
}

/// Moving average over a series, stamped at each window's last point.
pub fn smooth(series: &MetricSeries, window: usize) -> Result<MetricSeries, AnalyticsError> {
    let values: Vec<f64> = series.points.iter().map(|p| p.1).collect();
    let avg = moving_average(&values, window)?;
    if avg.is_empty() {
        return Ok(MetricSeries { name: format!("{}_ma{window}", series.name), points: Vec::new() });
    }
    let points = series.points[window - 1..].iter().zip(avg).map(|(p, v)| (p.0, v)).collect();
    Ok(MetricSeries { name: format!("{}_ma{window}", series.name), points })
}

/// Relative-change threshold and run length of the stabilisation rule.
pub const RESOLVE_TOLERANCE: f64 = 0.05;
pub const RESOLVE_RUN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resolution {
    Resolved { start: f64, end: f64, duration: f64 },
    Unresolved { start: f64 },
}

impl Resolution {
    pub fn duration(&self) -> Option<f64> {
        match self {
            Resolution::Resolved { duration, .. } => Some(*duration),
            Resolution::Unresolved { .. } => None,
        }
    }
}

/// Finds the first point at or after `t0` from which each of the next three
/// changes between adjacent points is below 5 % of the earlier point.
pub fn resolving_period(series: &MetricSeries, t0: f64) -> Resolution {
    let p = &series.points;
    let first = p.partition_point(|(t, _)| *t < t0);
    for j in first..p.len() {
        if j + RESOLVE_RUN >= p.len() {
            break;
        }
        let stable = (j..j + RESOLVE_RUN).all(|k| {
            let (a, b) = (p[k].1, p[k + 1].1);
            a != 0.0 && ((b - a) / a).abs() < RESOLVE_TOLERANCE
        });
        if stable {
            return Resolution::Resolved { start: t0, end: p[j].0, duration: p[j].0 - t0 };
        }
    }
    Resolution::Unresolved { start: t0 }
}

/// Headline numbers for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub seed: u64,
    pub blocks_mined: usize,
    pub canonical_blocks: usize,
    pub stale_rate: f64,
    pub mean_block_time: Option<f64>,
    pub block_times_canonical: Option<PercentileReport>,
    pub block_times_all: Option<PercentileReport>,
    pub tx_times: Option<PercentileReport>,
    pub mean_tx_time: Option<f64>,
    pub txs_included: usize,
    pub txs_unincluded: usize,
    pub txs_dropped: u64,
    pub mean_difficulty: Option<f64>,
    pub rejected_events: usize,
    pub max_reorg_depth: u64,
    pub mean_sync_delay: Option<f64>,
}

pub fn summarize(trace: &SimTrace) -> Summary {
    let canon = block_times(trace, true).ok();
    let all = block_times(trace, false).ok();
    let tx = tx_processing_times(trace);
    let sync: Vec<f64> = trace.sync.iter().filter(|s| s.backlog_blocks > 0).map(|s| s.sync_delay_s).collect();
    Summary {
        seed: trace.seed,
        blocks_mined: trace.blocks.len(),
        canonical_blocks: trace.canonical.len().saturating_sub(1),
        stale_rate: stale_rate(trace),
        mean_block_time: canon.as_deref().and_then(crate::stats::mean),
        block_times_canonical: canon.as_deref().and_then(|s| percentile_report(s).ok()),
        block_times_all: all.as_deref().and_then(|s| percentile_report(s).ok()),
        tx_times: percentile_report(&tx.times).ok(),
        mean_tx_time: crate::stats::mean(&tx.times),
        txs_included: tx.times.len(),
        txs_unincluded: tx.unincluded.len(),
        txs_dropped: trace.dropped_txs,
        mean_difficulty: mean_difficulty(trace),
        rejected_events: trace.rejected.len(),
        max_reorg_depth: trace.head_changes.iter().map(|h| h.reorg_depth).max().unwrap_or(0),
        mean_sync_delay: crate::stats::mean(&sync),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn secs(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4} s"))
}

impl Summary {
    /// Metric name and value pairs, in a fixed order.
    pub fn metrics(&self) -> Vec<(String, Option<f64>)> {
        let mut m = vec![
            ("blocks_mined".to_string(), Some(self.blocks_mined as f64)),
            ("canonical_blocks".to_string(), Some(self.canonical_blocks as f64)),
            ("stale_rate".to_string(), Some(self.stale_rate)),
            ("mean_block_time_s".to_string(), self.mean_block_time),
            ("mean_difficulty".to_string(), self.mean_difficulty),
            ("mean_tx_time_s".to_string(), self.mean_tx_time),
            ("txs_included".to_string(), Some(self.txs_included as f64)),
            ("txs_unincluded".to_string(), Some(self.txs_unincluded as f64)),
            ("txs_dropped".to_string(), Some(self.txs_dropped as f64)),
            ("rejected_events".to_string(), Some(self.rejected_events as f64)),
            ("max_reorg_depth".to_string(), Some(self.max_reorg_depth as f64)),
            ("mean_sync_delay_s".to_string(), self.mean_sync_delay),
        ];
        let reports = [
            ("block_time_canonical", &self.block_times_canonical),
            ("block_time_all", &self.block_times_all),
            ("tx_time", &self.tx_times),
        ];
        for (name, rep) in reports {
            for p in PERCENTILES {
                m.push((format!("{name}_p{p}_s"), rep.and_then(|r| r.get(p))));
            }
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "blocks mined: {} (canonical {}, stale rate {:.4})", self.blocks_mined, self.canonical_blocks, self.stale_rate);
        let _ = writeln!(s, "mean block time: {}", secs(self.mean_block_time));
        let _ = writeln!(s, "mean difficulty: {}", opt(self.mean_difficulty));
        let reports = [
            ("block time, canonical only", &self.block_times_canonical),
            ("block time, stale included", &self.block_times_all),
            ("tx processing time", &self.tx_times),
        ];
        for (label, rep) in reports {
            let _ = write!(s, "{label}:");
            match rep {
                Some(r) => {
                    for (p, v) in r.iter() {
                        let _ = write!(s, " p{p}={v:.3}");
                    }
                }
                None => s.push_str(" n/a"),
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "transactions: {} included, {} unincluded, {} dropped",
            self.txs_included, self.txs_unincluded, self.txs_dropped
        );
        let _ = writeln!(s, "rejected events: {}", self.rejected_events);
        let _ = writeln!(s, "max reorg depth: {}", self.max_reorg_depth);
        let _ = writeln!(s, "mean bank sync delay: {}", secs(self.mean_sync_delay));
        s
    }
}

pub fn write_percentiles_csv<W: Write>(summary: &Summary, mut w: W) -> io::Result<()> {
    writeln!(w, "sample,percentile,value_s")?;
    let reports = [
        ("block_time_canonical", &summary.block_times_canonical),
        ("block_time_all", &summary.block_times_all),
        ("tx_time", &summary.tx_times),
    ];
    for (name, rep) in reports {
        if let Some(r) = rep {
            for (p, v) in r.iter() {
                writeln!(w, "{name},{p},{v}")?;
            }
        }
    }
    Ok(())
}

/// Plot-ready row: one metric value for one sweep point and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct LongRow {
    pub metric: String,
    pub sweep_param: String,
    pub seed: u64,
    pub value: f64,
}

pub fn long_rows(summary: &Summary, sweep_param: &str) -> Vec<LongRow> {
    summary
        .metrics()
        .into_iter()
        .filter_map(|(metric, v)| {
            v.map(|value| LongRow { metric, sweep_param: sweep_param.to_string(), seed: summary.seed, value })
        })
        .collect()
}

pub fn write_long_csv<W: Write>(rows: &[LongRow], mut w: W) -> io::Result<()> {
    writeln!(w, "metric,sweep_param,seed,value")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.metric, r.sweep_param, r.seed, r.value)?;
    }
    Ok(())
}
