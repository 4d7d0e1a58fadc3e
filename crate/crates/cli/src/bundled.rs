//! Scenario and sweep files shipped with the binary, one per experiment.

pub const SCENARIOS: &[(&str, &str)] = &[
    ("baseline", include_str!("../scenarios/baseline.scenario")),
    ("rate-sweep", include_str!("../scenarios/rate-sweep.scenario")),
    ("delay-sweep", include_str!("../scenarios/delay-sweep.scenario")),
    ("churn-transient", include_str!("../scenarios/churn-transient.scenario")),
    ("churn-steady", include_str!("../scenarios/churn-steady.scenario")),
    ("bank-sync", include_str!("../scenarios/bank-sync.scenario")),
];

pub const SWEEPS: &[(&str, &str)] = &[
    ("rate-sweep", include_str!("../scenarios/rate-sweep.sweep")),
    ("delay-sweep", include_str!("../scenarios/delay-sweep.sweep")),
    ("churn-transient", include_str!("../scenarios/churn-transient.sweep")),
    ("churn-steady", include_str!("../scenarios/churn-steady.sweep")),
    ("bank-sync", include_str!("../scenarios/bank-sync.sweep")),
    ("bank-bandwidth", include_str!("../scenarios/bank-bandwidth.sweep")),
];

fn lookup(table: &[(&str, &'static str)], name: &str, ext: &str) -> Option<&'static str> {
    let name = name.strip_suffix(ext).unwrap_or(name);
    table.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Bundled scenario text by name, with or without the `.scenario` suffix.
pub fn scenario(name: &str) -> Option<&'static str> {
    lookup(SCENARIOS, name, ".scenario")
}

pub fn sweep(name: &str) -> Option<&'static str> {
    lookup(SWEEPS, name, ".sweep")
}
