//! Single scenario runs and their on-disk artifacts.
//!
//! Every run writes its CSVs and reports together with `manifest.txt`. The
//! manifest is itself a runnable scenario: its `[manifest]` block records
//! versions and SHA-256 digests, and the rest is the fully resolved scenario
//! text, so rerunning it reproduces every artifact byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dtchain::analytics::{self, Resolution};
use dtchain::scenario::Scenario;
use dtchain::sim;
use dtchain::trace::SimTrace;
use sha2::{Digest, Sha256};

use crate::bundled;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_SECTION: &str = "[manifest]";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Scenario text from a file, or from the bundled set when no such file
/// exists. Returns the text and a label for messages.
pub fn load_text(source: &str, base: Option<&Path>) -> Result<(String, String), CliError> {
    let path = match base {
        Some(dir) if Path::new(source).is_relative() => dir.join(source),
        _ => PathBuf::from(source),
    };
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(|e| CliError::Read { path: path.clone(), source: e })?;
        return Ok((text, path.display().to_string()));
    }
    match bundled::scenario(source) {
        Some(text) => Ok((text.to_string(), format!("bundled:{source}"))),
        None => Err(CliError::Read {
            path,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled scenario"),
        }),
    }
}

/// Blanks the `[manifest]` block so a manifest parses as a plain scenario.
/// Line numbers are kept so error messages still point at the right place.
pub fn strip_manifest(text: &str) -> String {
    let mut inside = false;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            inside = t == MANIFEST_SECTION;
        }
        if !inside {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

/// Parses scenario text with `section.key=value` overrides applied in order.
pub fn resolve(text: &str, origin: &str, overrides: &[String]) -> Result<Scenario, CliError> {
    Scenario::parse_with_overrides(&strip_manifest(text), overrides)
        .map_err(|source| CliError::Scenario { origin: origin.to_string(), source })
}

/// Smoothed-series resolving period after the configured outage, if any.
pub fn resolution(scenario: &Scenario, trace: &SimTrace) -> Option<Resolution> {
    let t0 = scenario.disturbance.outage.as_ref()?.start_s;
    let series = analytics::observer_series(trace);
    let smoothed = analytics::smooth(&series, scenario.run.series_window).ok()?;
    Some(analytics::resolving_period(&smoothed, t0))
}

/// Named metric values for one run, in a stable order.
pub fn run_metrics(scenario: &Scenario, trace: &SimTrace) -> Vec<(String, f64)> {
    let summary = analytics::summarize(trace);
    let mut out: Vec<(String, f64)> = summary.metrics().into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    if let Some(r) = resolution(scenario, trace) {
        out.push(("resolved".into(), f64::from(u8::from(r.duration().is_some()))));
        if let Some(d) = r.duration() {
            out.push(("resolving_period_s".into(), d));
        }
    }
    out
}

/// Files produced by one run, rendered in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(&'static str, Vec<u8>)>,
}

impl Artifacts {
    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| *n == name).map(|(_, b)| b.as_slice())
    }

    pub fn digests(&self) -> Vec<(&'static str, String)> {
        self.files.iter().map(|(n, b)| (*n, sha256_hex(b))).collect()
    }
}

fn series_csv(scenario: &Scenario, trace: &SimTrace) -> Vec<u8> {
    let series = analytics::observer_series(trace);
    let w = scenario.run.series_window;
    let values: Vec<f64> = series.points.iter().map(|p| p.1).collect();
    let smoothed = analytics::moving_average(&values, w).unwrap_or_default();
    let mut s = String::from("at,number,block_time_s,smoothed_s\n");
    for (i, p) in trace.observer_points.iter().enumerate() {
        let sm = (i + 1).checked_sub(w).and_then(|j| smoothed.get(j)).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", p.at, p.number, p.block_time, sm);
    }
    s.into_bytes()
}

fn summary_text(scenario: &Scenario, trace: &SimTrace) -> Vec<u8> {
    let summary = analytics::summarize(trace);
    let mut s = summary.to_text();
    let online = scenario.disturbance.churn_rate > 0.0 || scenario.disturbance.outage.is_some();
    if online && !trace.ticks.is_empty() {
        let mean = trace.ticks.iter().map(|t| f64::from(t.online_miners)).sum::<f64>() / trace.ticks.len() as f64;
        let _ = writeln!(s, "mean online miners: {mean:.3}");
    }
    match resolution(scenario, trace) {
        Some(Resolution::Resolved { start, end, duration }) => {
            let _ = writeln!(
                s,
                "resolving period: {duration:.1} s (from {start} to {end}, window {})",
                scenario.run.series_window
            );
        }
        Some(Resolution::Unresolved { start }) => {
            let _ = writeln!(s, "resolving period: unresolved after {start} (window {})", scenario.run.series_window);
        }
        None => {}
    }
    s.into_bytes()
}

/// Runs `scenario` and renders every artifact except the manifest.
pub fn render(scenario: &Scenario) -> Result<Artifacts, CliError> {
    let trace = sim::run(scenario)?;
    let csv = |f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
        let mut buf = Vec::new();
        f(&mut buf).expect("writing to memory cannot fail");
        buf
    };
    let summary = analytics::summarize(&trace);
    let bank = scenario.bank_id();
    let files = vec![
        ("blocks.csv", csv(&|w| trace.write_blocks_csv(w))),
        ("txs.csv", csv(&|w| trace.write_txs_csv(w))),
        ("sync.csv", csv(&|w| trace.write_sync_csv(w))),
        ("reorgs.csv", csv(&|w| trace.write_reorgs_csv(w))),
        (
            "ledger.csv",
            csv(&|w| {
                trace.canonical_ledger.write_snapshot_csv(w, |n| if n == bank { "bank".into() } else { n.0.to_string() })
            }),
        ),
        ("percentiles.csv", csv(&|w| analytics::write_percentiles_csv(&summary, w))),
        ("series.csv", series_csv(scenario, &trace)),
        ("summary.txt", summary_text(scenario, &trace)),
    ];
    Ok(Artifacts { files })
}

/// Manifest text: provenance block followed by the resolved scenario.
pub fn manifest_text(scenario: &Scenario, origin: &str, artifacts: &Artifacts) -> String {
    let resolved = scenario.to_text();
    let mut s = String::new();
    let _ = writeln!(s, "{MANIFEST_SECTION}");
    let _ = writeln!(s, "tool = dtchain-cli {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "core = dtchain-core {}", dtchain::VERSION);
    let _ = writeln!(s, "source = {origin}");
    let _ = writeln!(s, "seed = {}", scenario.run.seed);
    let _ = writeln!(s, "scenario_sha256 = {}", sha256_hex(resolved.as_bytes()));
    for (name, digest) in artifacts.digests() {
        let _ = writeln!(s, "{name} = {digest}");
    }
    s.push('\n');
    s.push_str(&resolved);
    s
}

/// Artifact digests recorded in a manifest.
pub fn manifest_digests(text: &str) -> Vec<(String, String)> {
    let mut inside = false;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.starts_with('[') {
            inside = line == MANIFEST_SECTION;
            continue;
        }
        if let (true, Some((k, v))) = (inside, line.split_once('=')) {
            let k = k.trim();
            if k.ends_with(".csv") || k.ends_with(".txt") {
                out.push((k.to_string(), v.trim().to_string()));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub scenario: String,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: Scenario,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Writes `files` into `dir`, removing everything written (and the
/// directory, if it was created here) when any write fails.
fn write_all(dir: &Path, files: &[(&str, &[u8])]) -> Result<Vec<PathBuf>, CliError> {
    let created_dir = !dir.exists();
    let fail = |path: &Path, e: std::io::Error, written: &[PathBuf]| {
        for p in written {
            let _ = fs::remove_file(p);
        }
        if created_dir {
            let _ = fs::remove_dir_all(dir);
        }
        CliError::Write { path: path.to_path_buf(), source: e }
    };
    fs::create_dir_all(dir).map_err(|e| fail(dir, e, &[]))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            return Err(fail(&path, e, &written));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn run_scenario(opts: &RunOptions) -> Result<RunReport, CliError> {
    let (text, origin) = load_text(&opts.scenario, None)?;
    let mut overrides = opts.overrides.clone();
    if let Some(seed) = opts.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let scenario = resolve(&text, &origin, &overrides)?;
    let artifacts = render(&scenario)?;
    let manifest = manifest_text(&scenario, &origin, &artifacts);
    let mut files: Vec<(&str, &[u8])> = artifacts.files.iter().map(|(n, b)| (*n, b.as_slice())).collect();
    files.push((MANIFEST, manifest.as_bytes()));
    let written = write_all(&opts.out, &files)?;
    let summary = String::from_utf8_lossy(artifacts.get("summary.txt").unwrap_or_default()).into_owned();
    Ok(RunReport { scenario, files: written, summary })
}

/// Reruns a manifest in memory and checks every recorded digest.
pub fn verify_manifest(path: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Read { path: path.to_path_buf(), source: e })?;
    let recorded = manifest_digests(&text);
    if recorded.is_empty() {
        return Err(CliError::Invalid(format!("{}: no artifact digests in [manifest]", path.display())));
    }
    let scenario = resolve(&text, &path.display().to_string(), &[])?;
    let artifacts = render(&scenario)?;
    let fresh = artifacts.digests();
    let mut bad = Vec::new();
    for (name, digest) in &recorded {
        match fresh.iter().find(|(n, _)| n == name) {
            Some((_, d)) if d == digest => {}
            Some(_) => bad.push(format!("{name} differs")),
            None => bad.push(format!("{name} is no longer produced")),
        }
    }
    if bad.is_empty() {
        Ok(recorded.len())
    } else {
        Err(CliError::Mismatch(format!("{}: {}", path.display(), bad.join(", "))))
    }
}
