//! Closed-form design models: cost, availability, profit and connectivity.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("{0}")]
    Invalid(&'static str),
    #[error("k = {k} is outside 0..={n}")]
    OutOfRange { k: usize, n: usize },
}

/// Bits a block must hold to carry one interval's worth of traffic.
pub fn expected_block_bits(lambda_t: f64, s_t_bits: f64, mean_t: f64) -> f64 {
    lambda_t * s_t_bits * mean_t
}

/// Inputs to the total operating cost of a village chain.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostInputs {
    /// Tokens per mining device.
    pub d_m: f64,
    pub l_m: f64,
    /// Device lifetime in years.
    pub x_m: f64,
    /// Reward per block.
    pub r: f64,
    /// Tokens per bit of backhaul.
    pub c_bw: f64,
    /// Backhaul bits per second.
    pub bw: f64,
    /// Connected seconds per service period.
    pub t_c: f64,
    pub x_y: f64,
    pub x_b: f64,
    pub x_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    pub equipment: f64,
    pub rewards: f64,
    pub network: f64,
    pub total: f64,
}

impl CostInputs {
    pub fn validate(&self) -> Result<(), DesignError> {
        let all = [self.d_m, self.l_m, self.x_m, self.r, self.c_bw, self.bw, self.t_c, self.x_y, self.x_b, self.x_s];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DesignError::Invalid("cost inputs must be finite and non-negative"));
        }
        if self.x_m == 0.0 && self.l_m * self.d_m > 0.0 {
            return Err(DesignError::Invalid("device lifetime must be positive"));
        }
        Ok(())
    }

    /// Yearly equipment cost `C_E`.
    pub fn equipment_per_year(&self) -> f64 {
        if self.l_m * self.d_m == 0.0 {
            0.0
        } else {
            self.l_m * self.d_m / self.x_m
        }
    }

    pub fn breakdown(&self) -> Result<CostBreakdown, DesignError> {
        self.validate()?;
        let equipment = self.equipment_per_year() * self.x_y;
        let rewards = self.r * self.x_b;
        let network = self.c_bw * self.t_c * self.bw * self.x_s;
        Ok(CostBreakdown { equipment, rewards, network, total: equipment + rewards + network })
    }
}

pub fn system_cost(inputs: &CostInputs) -> Result<f64, DesignError> {
    inputs.breakdown().map(|b| b.total)
}

fn check_probabilities(p: &[f64]) -> Result<(), DesignError> {
    if p.iter().all(|x| (0.0..=1.0).contains(x)) {
        Ok(())
    } else {
        Err(DesignError::Invalid("probabilities must lie in [0, 1]"))
    }
}

/// Full distribution of the number of successes among independent trials
/// with probabilities `p`, by dynamic-programming convolution.
pub fn poisson_binomial_distribution(p: &[f64]) -> Result<Vec<f64>, DesignError> {
    check_probabilities(p)?;
    let mut dist = vec![0.0; p.len() + 1];
    dist[0] = 1.0;
    for (i, &q) in p.iter().enumerate() {
        for k in (0..=i + 1).rev() {
            let stay = dist[k] * (1.0 - q);
            let step = if k > 0 { dist[k - 1] * q } else { 0.0 };
            dist[k] = stay + step;
        }
    }
    Ok(dist)
}

pub fn poisson_binomial_pmf(p: &[f64], k: usize) -> Result<f64, DesignError> {
    if k > p.len() {
        return Err(DesignError::OutOfRange { k, n: p.len() });
    }
    Ok(poisson_binomial_distribution(p)?[k])
}

/// Mean number of online miners when each is offline with probability `p_d`.
pub fn expected_online(l_m: u64, p_d: f64) -> Result<f64, DesignError> {
    check_probabilities(&[p_d])?;
    Ok(l_m as f64 * (1.0 - p_d))
}

/// Miners to deploy so that `target` are online on average.
pub fn required_miners(target: f64, p_d: f64) -> Result<f64, DesignError> {
    check_probabilities(&[p_d])?;
    if p_d >= 1.0 {
        return Err(DesignError::Invalid("p_d = 1 leaves no miner online"));
    }
    Ok(target / (1.0 - p_d))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfitInputs {
    /// Reward per block.
    pub r: f64,
    /// Tokens per hash.
    pub eta: f64,
    /// Hashes per second per miner.
    pub h: f64,
    /// Mean block interval in seconds.
    pub mean_t: f64,
    pub l_m: u64,
}

/// Expected profit per mined block for one miner: `R / l_m - eta * h * T`.
pub fn expected_profit(inputs: &ProfitInputs) -> Result<f64, DesignError> {
    if inputs.l_m == 0 {
        return Err(DesignError::Invalid("l_m must be at least 1"));
    }
    Ok(inputs.r / inputs.l_m as f64 - inputs.eta * inputs.h * inputs.mean_t)
}

/// Largest miner count that keeps the expected profit strictly positive.
pub fn max_profitable_miners(r: f64, eta: f64, h: f64, mean_t: f64) -> Result<u64, DesignError> {
    let cost = eta * h * mean_t;
    if !(cost > 0.0 && r > 0.0) {
        return Err(DesignError::Invalid("reward and per-block hashing cost must be positive"));
    }
    let profit = |l_m: u64| r / l_m as f64 - cost;
    let bound = r / cost;
    let mut n = if bound <= 1.0 { 0 } else { bound.ceil() as u64 - 1 };
    while profit(n + 1) > 0.0 {
        n += 1;
    }
    while n > 0 && profit(n) <= 0.0 {
        n -= 1;
    }
    Ok(n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Connectivity {
    pub l_c: u64,
    /// Fraction of all miners each miner must connect to.
    pub gamma: f64,
}

/// Nodes reachable within `k` hops when every node keeps `l_c` links,
/// counting the origin: `1 + l_c * sum_{i<k} (l_c - 1)^i`.
pub fn reach(l_c: u64, k: u32) -> u128 {
    let base = u128::from(l_c.saturating_sub(1));
    let mut term: u128 = 1;
    let mut sum: u128 = 0;
    for _ in 0..k {
        sum = sum.saturating_add(term);
        term = term.saturating_mul(base);
    }
    1u128.saturating_add(u128::from(l_c).saturating_mul(sum))
}

/// Smallest per-miner connection count that reaches every miner within `k` hops.
pub fn min_connections(l_m: u64, k: u32) -> Result<Connectivity, DesignError> {
    if l_m < 2 {
        return Err(DesignError::Invalid("l_m must be at least 2"));
    }
    if k < 1 {
        return Err(DesignError::Invalid("k must be at least 1"));
    }
    let l_c = (1..l_m)
        .find(|&c| reach(c, k) >= u128::from(l_m))
        .expect("l_c = l_m - 1 always reaches every miner");
    Ok(Connectivity { l_c, gamma: l_c as f64 / l_m as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConnectivityRow {
    pub k: u32,
    pub l_m: u64,
    pub l_c: u64,
    pub gamma: f64,
}

/// Minimal connections over a grid of hop limits and network sizes.
pub fn connectivity_sweep(ks: &[u32], l_m: std::ops::RangeInclusive<u64>) -> Result<Vec<ConnectivityRow>, DesignError> {
    let mut rows = Vec::new();
    for &k in ks {
        for n in l_m.clone() {
            let c = min_connections(n, k)?;
            rows.push(ConnectivityRow { k, l_m: n, l_c: c.l_c, gamma: c.gamma });
        }
    }
    Ok(rows)
}

/// Samples from the idealised processing model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TxProcessingSample {
    pub block_times: Vec<f64>,
    pub tx_times: Vec<f64>,
}

/// Monte Carlo of the idealised model: exponential block intervals, Poisson
/// arrivals, every transaction included in the first block after it arrives.
/// Block intervals are drawn first so the block sample does not depend on
/// the arrival rate.
pub fn simulate_tx_processing<R: Rng + ?Sized>(
    lambda_t: f64,
    mean_t: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<TxProcessingSample, DesignError> {
    if !(mean_t > 0.0 && horizon > 0.0 && lambda_t >= 0.0) {
        return Err(DesignError::Invalid("mean_t and horizon must be positive, lambda_t non-negative"));
    }
    let interval = Exp::new(1.0 / mean_t).expect("positive rate");
    let mut block_at = Vec::new();
    let mut t = interval.sample(rng);
    while t < horizon {
        block_at.push(t);
        t += interval.sample(rng);
    }
    let mut out = TxProcessingSample::default();
    let mut prev = 0.0;
    for &b in &block_at {
        out.block_times.push(b - prev);
        prev = b;
    }
    if lambda_t > 0.0 {
        let arrival = Exp::new(lambda_t).expect("positive rate");
        let mut next = 0;
        let mut t = arrival.sample(rng);
        while t < horizon {
            while next < block_at.len() && block_at[next] <= t {
                next += 1;
            }
            let Some(&b) = block_at.get(next) else { break };
            out.tx_times.push(b - t);
            t += arrival.sample(rng);
        }
    }
    Ok(out)
}
