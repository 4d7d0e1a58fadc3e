//! Printable front ends for the closed-form design models.

use std::fmt::Write as _;

use dtchain::design::{self, CostInputs, DesignError, ProfitInputs};

use crate::error::CliError;

/// Inputs, formula and results of one calculation.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub model: &'static str,
    pub formula: &'static str,
    pub inputs: Vec<(&'static str, String)>,
    pub results: Vec<(String, f64)>,
}

impl Report {
    pub fn result(&self, name: &str) -> Option<f64> {
        self.results.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n  formula: {}\n  inputs:\n", self.model, self.formula);
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "    {k} = {v}");
        }
        s.push_str("  result:\n");
        for (k, v) in &self.results {
            let _ = writeln!(s, "    {k} = {v}");
        }
        s
    }

    /// `model,quantity,value` rows covering inputs and results.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,quantity,value\n");
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "{},{k},\"{v}\"", self.model);
        }
        for (k, v) in &self.results {
            let _ = writeln!(s, "{},{k},{v}", self.model);
        }
        s
    }
}

fn invalid(e: DesignError) -> CliError {
    CliError::Invalid(e.to_string())
}

pub fn cost(c: &CostInputs) -> Result<Report, CliError> {
    let b = c.breakdown().map_err(invalid)?;
    Ok(Report {
        model: "cost",
        formula: "C = (l_m * d_m / x_m) * x_y + R * x_b + C_BW * T_C * BW * x_s",
        inputs: vec![
            ("miners l_m", c.l_m.to_string()),
            ("device cost d_m", c.d_m.to_string()),
            ("device life x_m (years)", c.x_m.to_string()),
            ("years x_y", c.x_y.to_string()),
            ("reward R", c.r.to_string()),
            ("blocks x_b", c.x_b.to_string()),
            ("bandwidth cost C_BW (per bit)", c.c_bw.to_string()),
            ("bandwidth BW (bit/s)", c.bw.to_string()),
            ("connected time T_C (s)", c.t_c.to_string()),
            ("service periods x_s", c.x_s.to_string()),
        ],
        results: vec![
            ("equipment".into(), b.equipment),
            ("rewards".into(), b.rewards),
            ("network".into(), b.network),
            ("total".into(), b.total),
        ],
    })
}

/// Availability from explicit per-miner online probabilities, or from a
/// common probability `p_d` over `miners`. `k` selects one point of the
/// distribution of online miners.
pub fn outage(p: Option<&[f64]>, miners: Option<u64>, p_d: Option<f64>, k: Option<usize>) -> Result<Report, CliError> {
    let (probs, inputs) = match (p, miners, p_d) {
        (Some(p), None, None) => (p.to_vec(), vec![("online probabilities p", format!("{p:?}"))]),
        (None, Some(n), Some(pd)) => {
            let online = 1.0 - pd;
            (vec![online; n as usize], vec![("miners l_m", n.to_string()), ("offline probability p_d", pd.to_string())])
        }
        _ => return Err(CliError::Invalid("outage needs either --p or both --miners and --p-d".into())),
    };
    let dist = design::poisson_binomial_distribution(&probs).map_err(invalid)?;
    let mut results = Vec::new();
    if let (Some(n), Some(pd)) = (miners, p_d) {
        results.push(("expected online".into(), design::expected_online(n, pd).map_err(invalid)?));
    } else {
        results.push(("expected count".into(), probs.iter().sum()));
    }
    match k {
        Some(k) => {
            let v = design::poisson_binomial_pmf(&probs, k).map_err(invalid)?;
            results.push((format!("P(X = {k})"), v));
        }
        None => results.extend(dist.iter().enumerate().map(|(k, v)| (format!("P(X = {k})"), *v))),
    }
    let mut inputs = inputs;
    if let Some(k) = k {
        inputs.push(("k", k.to_string()));
    }
    Ok(Report {
        model: "outage",
        formula: "P(X = k) = sum over k-subsets A of prod_{i in A} p_i * prod_{j not in A} (1 - p_j); E[online] = l_m * (1 - p_d)",
        inputs,
        results,
    })
}

pub fn profit(p: &ProfitInputs) -> Result<Report, CliError> {
    let pi = design::expected_profit(p).map_err(invalid)?;
    let max = design::max_profitable_miners(p.r, p.eta, p.h, p.mean_t).map_err(invalid)?;
    Ok(Report {
        model: "profit",
        formula: "Pi = R / l_m - eta * h * T; largest l_m with Pi > 0",
        inputs: vec![
            ("reward R", p.r.to_string()),
            ("cost per hash eta", p.eta.to_string()),
            ("hashrate h", p.h.to_string()),
            ("mean block time T (s)", p.mean_t.to_string()),
            ("miners l_m", p.l_m.to_string()),
        ],
        results: vec![("profit per block".into(), pi), ("max profitable miners".into(), max as f64)],
    })
}

pub fn connectivity(l_m: u64, k: u32) -> Result<Report, CliError> {
    let c = design::min_connections(l_m, k).map_err(invalid)?;
    Ok(Report {
        model: "connectivity",
        formula: "smallest l_c with 1 + l_c * sum_{i=0}^{k-1} (l_c - 1)^i >= l_m; gamma = l_c / l_m",
        inputs: vec![("miners l_m", l_m.to_string()), ("hops k", k.to_string())],
        results: vec![("l_c".into(), c.l_c as f64), ("gamma".into(), c.gamma)],
    })
}

/// Minimal connections and their share for every `k` and `l_m` in range.
pub fn connectivity_sweep_csv(ks: &[u32], l_m: std::ops::RangeInclusive<u64>) -> Result<String, CliError> {
    let rows = design::connectivity_sweep(ks, l_m).map_err(invalid)?;
    let mut s = String::from("k,l_m,l_c,gamma\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.k, r.l_m, r.l_c, r.gamma);
    }
    Ok(s)
}

pub fn blockbits(lambda_t: f64, s_t_bits: f64, mean_t: f64) -> Result<Report, CliError> {
    if !(lambda_t >= 0.0 && s_t_bits >= 0.0 && mean_t > 0.0) {
        return Err(CliError::Invalid("blockbits needs non-negative rate and size and a positive mean block time".into()));
    }
    Ok(Report {
        model: "blockbits",
        formula: "E[S_b] = lambda_t * s_t * T",
        inputs: vec![
            ("arrival rate lambda_t (tx/s)", lambda_t.to_string()),
            ("tx size s_t (bits)", s_t_bits.to_string()),
            ("mean block time T (s)", mean_t.to_string()),
        ],
        results: vec![("expected block bits".into(), design::expected_block_bits(lambda_t, s_t_bits, mean_t))],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outage_three_coins() {
        let r = outage(Some(&[0.5, 0.5, 0.5]), None, None, Some(1)).unwrap();
        assert_eq!(r.result("P(X = 1)"), Some(0.375));
        assert!(outage(None, Some(3), None, None).is_err());
        let full = outage(None, Some(20), Some(0.1), None).unwrap();
        assert!((full.result("expected online").unwrap() - 18.0).abs() < 1e-12);
        assert_eq!(full.results.len(), 22);
    }

    #[test]
    fn connectivity_example() {
        let r = connectivity(100, 2).unwrap();
        assert_eq!(r.result("l_c"), Some(10.0));
        assert_eq!(r.result("gamma"), Some(0.1));
        assert!(r.to_text().contains("l_c = 10"));
    }

    #[test]
    fn sweep_csv_has_every_row() {
        let csv = connectivity_sweep_csv(&[1, 2, 3, 4], 4..=100).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4 * 97);
        assert!(csv.contains("\n2,100,10,0.1\n"));
    }

    #[test]
    fn csv_rows_name_the_model() {
        let r = blockbits(1.0, 2000.0, 12.0).unwrap();
        assert_eq!(r.result("expected block bits"), Some(24000.0));
        assert!(r.to_csv().lines().all(|l| l.starts_with("model,") || l.starts_with("blockbits,")));
    }
}
