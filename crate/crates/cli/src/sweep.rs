//! Parameter sweeps: one scenario parameter over a value list, crossed with
//! a seed list, run in parallel and written as long-format CSV.
//!
//! A sweep spec looks like
//!
//! ```text
//! [sweep]
//! scenario = delay-sweep.scenario
//! param = disturbance.link_delay_ms
//! values = 0, 10, 50, 100, 500, 1000
//! seeds = 1-10
//! ```
//!
//! Values are split on `;` when one is present and on `,` otherwise, so list
//! valued parameters such as `outage_nodes` can be swept. `set` adds fixed
//! `section.key=value` overrides, separated by `;`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::CliError;
use crate::run::{self, sha256_hex};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "DTCHAIN_WORKERS";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub scenario: String,
    pub param: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub set: Vec<String>,
}

fn parse_seeds(v: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || format!("cannot parse seed `{part}`");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if b < a {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

impl SweepSpec {
    pub fn parse(text: &str, origin: &str) -> Result<SweepSpec, CliError> {
        let fail = |line: usize, msg: String| CliError::Spec { origin: origin.to_string(), line, msg };
        let mut in_section = false;
        let mut seen_section = 0;
        let mut entries: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if line != "[sweep]" {
                    return Err(fail(line_no, format!("unknown section {line}")));
                }
                in_section = true;
                seen_section = line_no;
                continue;
            }
            if !in_section {
                return Err(fail(line_no, "key outside of the [sweep] section".into()));
            }
            let (k, v) = line.split_once('=').ok_or_else(|| fail(line_no, format!("expected key = value, got `{line}`")))?;
            let k = k.trim();
            if !["scenario", "param", "values", "seeds", "set"].contains(&k) {
                return Err(fail(line_no, format!("unknown key `{k}`")));
            }
            if entries.insert(k, (v.trim(), line_no)).is_some() {
                return Err(fail(line_no, format!("duplicate key `{k}`")));
            }
        }
        let need = |k: &str| entries.get(k).copied().ok_or_else(|| fail(seen_section.max(1), format!("missing key `{k}`")));
        let (scenario, _) = need("scenario")?;
        let (param, pl) = need("param")?;
        if param.split_once('.').is_none_or(|(s, k)| s.is_empty() || k.is_empty()) {
            return Err(fail(pl, format!("param `{param}` must be section.key")));
        }
        let (values, vl) = need("values")?;
        let sep = if values.contains(';') { ';' } else { ',' };
        let values: Vec<String> = values.split(sep).map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
        if values.is_empty() {
            return Err(fail(vl, "values must list at least one value".into()));
        }
        let (seeds, sl) = need("seeds")?;
        let seeds = parse_seeds(seeds).map_err(|m| fail(sl, m))?;
        if seeds.is_empty() {
            return Err(fail(sl, "seeds must list at least one seed".into()));
        }
        let set = entries
            .get("set")
            .map(|(v, _)| v.split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default();
        Ok(SweepSpec { scenario: scenario.to_string(), param: param.to_string(), values, seeds, set })
    }

    pub fn points(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.values.iter().flat_map(move |v| self.seeds.iter().map(move |s| (v.as_str(), *s)))
    }
}

/// One metric of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub metric: String,
    pub metric_value: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    pub runs: usize,
    pub files: Vec<PathBuf>,
}

impl SweepReport {
    /// Seed values of `metric` at sweep value `value`.
    pub fn samples(&self, value: &str, metric: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.value == value && r.metric == metric).map(|r| r.metric_value).collect()
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Worker count from the environment, or rayon's default when unset.
pub fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Invalid(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Runs every (value, seed) point of `spec` against `base` scenario text.
pub fn execute(spec: &SweepSpec, base: &str, origin: &str, workers: Option<usize>) -> Result<Vec<SweepRow>, CliError> {
    let point_err = |value: &str, seed: u64, e: CliError| CliError::Point {
        param: spec.param.clone(),
        value: value.to_string(),
        seed,
        source: Box::new(e),
    };
    // Validate every point before spending time on any run.
    let mut scenarios = Vec::new();
    for (value, seed) in spec.points() {
        let mut overrides = spec.set.clone();
        overrides.push(format!("{}={value}", spec.param));
        overrides.push(format!("run.seed={seed}"));
        let sc = run::resolve(base, origin, &overrides).map_err(|e| point_err(value, seed, e))?;
        scenarios.push((value, seed, sc));
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Invalid(format!("cannot start worker pool: {e}")))?
    };
    let results: Vec<Result<Vec<SweepRow>, CliError>> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|(value, seed, sc)| {
                let trace = dtchain::sim::run(sc).map_err(|e| point_err(value, *seed, e.into()))?;
                Ok(run::run_metrics(sc, &trace)
                    .into_iter()
                    .map(|(metric, metric_value)| SweepRow { value: value.to_string(), seed: *seed, metric, metric_value })
                    .collect())
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

fn long_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("metric,sweep_param,seed,value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.metric, csv_field(&r.value), r.seed, r.metric_value);
    }
    s
}

/// Per value and metric: seed count, mean, sample standard deviation, range.
fn aggregate_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut s = String::from("sweep_param,metric,n,mean,std,min,max\n");
    for value in &spec.values {
        let mut by_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| &r.value == value) {
            by_metric.entry(&r.metric).or_default().push(r.metric_value);
        }
        for (metric, xs) in by_metric {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(s, "{},{metric},{},{mean},{std},{min},{max}", csv_field(value), xs.len());
        }
    }
    s
}

/// Loads a sweep spec from a file or the bundled set.
pub fn load_spec(source: &str) -> Result<(SweepSpec, Option<PathBuf>, String), CliError> {
    let path = Path::new(source);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| CliError::Read { path: path.to_path_buf(), source: e })?;
        let spec = SweepSpec::parse(&text, &path.display().to_string())?;
        return Ok((spec, path.parent().map(Path::to_path_buf), text));
    }
    match crate::bundled::sweep(source) {
        Some(text) => Ok((SweepSpec::parse(text, &format!("bundled:{source}"))?, None, text.to_string())),
        None => Err(CliError::Read {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled sweep"),
        }),
    }
}

pub fn run_sweep(source: &str, out: &Path, workers: Option<usize>) -> Result<SweepReport, CliError> {
    let (spec, dir, spec_text) = load_spec(source)?;
    let (base, origin) = run::load_text(&spec.scenario, dir.as_deref())?;
    let rows = execute(&spec, &base, &origin, workers)?;
    let long = long_csv(&rows);
    let agg = aggregate_csv(&spec, &rows);
    let mut manifest = String::from("[sweep-manifest]\n");
    let _ = writeln!(manifest, "tool = dtchain-cli {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "core = dtchain-core {}", dtchain::VERSION);
    let _ = writeln!(manifest, "spec_sha256 = {}", sha256_hex(spec_text.as_bytes()));
    let _ = writeln!(manifest, "scenario = {origin}");
    let _ = writeln!(manifest, "scenario_sha256 = {}", sha256_hex(base.as_bytes()));
    let _ = writeln!(manifest, "runs = {}", spec.values.len() * spec.seeds.len());
    let _ = writeln!(manifest, "sweep.csv = {}", sha256_hex(long.as_bytes()));
    let _ = writeln!(manifest, "points.csv = {}", sha256_hex(agg.as_bytes()));
    let _ = write!(manifest, "\n{spec_text}");
    fs::create_dir_all(out).map_err(|e| CliError::Write { path: out.to_path_buf(), source: e })?;
    let mut files = Vec::new();
    for (name, body) in [("sweep.csv", &long), ("points.csv", &agg), ("manifest.txt", &manifest)] {
        let path = out.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &files {
                let _ = fs::remove_file(p);
            }
            return Err(CliError::Write { path, source: e });
        }
        files.push(path);
    }
    let runs = spec.values.len() * spec.seeds.len();
    Ok(SweepReport { spec, rows, runs, files })
}
