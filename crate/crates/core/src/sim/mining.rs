//! Proof-of-work as a race of exponential clocks.
//!
//! A miner working on a parent succeeds at rate `h / D(t)`, where `D(t)` is
//! the difficulty a block stamped at `t` would carry. `D` is piecewise
//! constant in 10 s steps of the gap to the parent and stops changing once the
//! downward adjustment saturates, so the cumulative hazard is piecewise
//! linear and can be inverted exactly.

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1};

use crate::chain::{difficulty_for_gap, ADJUSTMENT_STEP_S, MAX_DOWNWARD_STEPS};
use crate::rng::SimRng;

/// Draws one block interval with mean `difficulty / online_hashrate`.
/// Returns `None` when nobody is hashing.
pub fn sample_block_interval<R: Rng + ?Sized>(difficulty: u64, online_hashrate: f64, rng: &mut R) -> Option<f64> {
    if !(online_hashrate > 0.0) || difficulty == 0 {
        return None;
    }
    let exp = Exp::new(online_hashrate / difficulty as f64).ok()?;
    Some(exp.sample(rng))
}

/// Picks a winner with probability proportional to hashrate.
pub fn choose_winner<R: Rng + ?Sized>(hashrates: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = hashrates.iter().filter(|h| **h > 0.0).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &h) in hashrates.iter().enumerate() {
        if h > 0.0 {
            if x < h {
                return Some(i);
            }
            x -= h;
            last = Some(i);
        }
    }
    last
}

const SATURATED_SEGMENT: u64 = MAX_DOWNWARD_STEPS as u64 + 2;

/// Segment index of a gap and its end (infinite once saturated).
fn segment(dt: f64) -> (u64, f64) {
    let k = (dt.max(0.0) / ADJUSTMENT_STEP_S).floor();
    if k >= SATURATED_SEGMENT as f64 {
        (SATURATED_SEGMENT, f64::INFINITY)
    } else {
        (k as u64, (k + 1.0) * ADJUSTMENT_STEP_S)
    }
}

fn segment_rate(parent_difficulty: u64, k: u64, hashrate: f64) -> f64 {
    hashrate / difficulty_for_gap(parent_difficulty, k as f64 * ADJUSTMENT_STEP_S) as f64
}

/// Cumulative hazard accrued between absolute times `from` and `to`.
pub(crate) fn hazard_between(parent_difficulty: u64, parent_ts: f64, hashrate: f64, from: f64, to: f64) -> f64 {
    let mut total = 0.0;
    let mut dt = from - parent_ts;
    let end = to - parent_ts;
    while dt < end {
        let (k, seg_end) = segment(dt);
        let stop = seg_end.min(end);
        total += segment_rate(parent_difficulty, k, hashrate) * (stop - dt);
        dt = stop;
    }
    total
}

/// Absolute time at which `remaining` further hazard has accrued, starting at `from`.
pub(crate) fn time_to_hazard(parent_difficulty: u64, parent_ts: f64, hashrate: f64, from: f64, remaining: f64) -> f64 {
    let mut left = remaining.max(0.0);
    let mut dt = from - parent_ts;
    loop {
        let (k, seg_end) = segment(dt);
        let rate = segment_rate(parent_difficulty, k, hashrate);
        let span = seg_end - dt;
        if rate * span >= left {
            return parent_ts + dt + left / rate;
        }
        left -= rate * span;
        dt = seg_end;
    }
}

/// One miner's clock: success comes when accrued hazard reaches an Exp(1)
/// threshold. Accrued hazard survives parent switches and offline spells.
#[derive(Clone, Debug)]
pub(crate) struct MinerClock {
    pub threshold: f64,
    pub progress: f64,
    pub since: f64,
    pub generation: u64,
    rng: SimRng,
}

impl MinerClock {
    pub fn new(mut rng: SimRng) -> Self {
        let threshold = Exp1.sample(&mut rng);
        Self { threshold, progress: 0.0, since: 0.0, generation: 0, rng }
    }

    pub fn redraw(&mut self, now: f64) {
        self.threshold = Exp1.sample(&mut self.rng);
        self.progress = 0.0;
        self.since = now;
    }

    pub fn remaining(&self) -> f64 {
        (self.threshold - self.progress).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn interval_mean_matches_difficulty_over_hashrate() {
        let mut r = rng::stream(1, "interval");
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_block_interval(120_000, 10_000.0, &mut r).unwrap()).sum::<f64>() / n as f64;
        assert!((11.7..=12.3).contains(&mean), "mean {mean}");
        let mut r = rng::stream(2, "interval");
        let doubled: f64 =
            (0..n).map(|_| sample_block_interval(120_000, 20_000.0, &mut r).unwrap()).sum::<f64>() / n as f64;
        let ratio = doubled / mean;
        assert!((0.48..=0.52).contains(&ratio), "ratio {ratio}");
        assert_eq!(sample_block_interval(120_000, 0.0, &mut r), None);
    }

    #[test]
    fn draws_are_reproducible() {
        let a: Vec<f64> = {
            let mut r = rng::stream(5, "interval");
            (0..10).map(|_| sample_block_interval(1000, 1.0, &mut r).unwrap()).collect()
        };
        let mut r = rng::stream(5, "interval");
        let b: Vec<f64> = (0..10).map(|_| sample_block_interval(1000, 1.0, &mut r).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn winner_follows_hashrate() {
        let mut r = rng::stream(3, "winner");
        let mut counts = [0u32; 3];
        for _ in 0..30_000 {
            counts[choose_winner(&[1.0, 0.0, 2.0], &mut r).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0);
        let share = f64::from(counts[2]) / 30_000.0;
        assert!((share - 2.0 / 3.0).abs() < 0.02, "share {share}");
        assert_eq!(choose_winner(&[0.0, 0.0], &mut r), None);
    }

    #[test]
    fn hazard_inverse_round_trips() {
        let d = 4_194_304;
        for &(from, rem) in &[(0.0, 0.01), (5.0, 0.5), (33.0, 3.0), (0.0, 40.0), (2000.0, 1.0)] {
            let t = time_to_hazard(d, 0.0, 29_000.0, from, rem);
            let back = hazard_between(d, 0.0, 29_000.0, from, t);
            assert!((back - rem).abs() < 1e-9 * rem.max(1.0), "{from} {rem}: {back}");
        }
    }

    #[test]
    fn hazard_in_first_segment_uses_raised_difficulty() {
        let d = 2048 * 1000;
        let h = hazard_between(d, 0.0, 1000.0, 0.0, 5.0);
        assert!((h - 5.0 * 1000.0 / (d + 1000) as f64).abs() < 1e-15);
    }

    #[test]
    fn clock_redraw_resets_progress() {
        let mut c = MinerClock::new(rng::stream(1, "mining/0"));
        c.progress = 0.3;
        c.redraw(12.0);
        assert_eq!(c.progress, 0.0);
        assert_eq!(c.since, 12.0);
        assert!(c.threshold > 0.0);
    }
}
