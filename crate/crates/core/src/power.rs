//! Sample power: split probabilities along a factor ordering, the minimum
//! split probability `M`, `lambda_min = 1/M`, required sample sizes, and the
//! bisection simulator for permutation distributions.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::combinatorics::{self, Permutation};
use crate::sample::{subpop_index, Sample};

/// Largest `m` for the exhaustive minimum over all orderings.
pub const EXACT_MAX_M: usize = 8;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("factor {index} ('{name}') has a single level in the sample")]
    Degenerate { index: usize, name: String },
    #[error("empty sample")]
    Empty,
    #[error("exact mode supports m <= {EXACT_MAX_M}, got {0}")]
    ExactTooLarge(usize),
    #[error("block size k = {k} must be in 1..={m}")]
    BadBlock { k: usize, m: usize },
    #[error("m = {0} out of range")]
    BadM(usize),
    #[error(transparent)]
    Combinatorics(#[from] combinatorics::CombinatoricsError),
}

pub type Result<T> = std::result::Result<T, PowerError>;

/// Distinct profiles with multiplicities.
fn profile_counts(s: &Sample) -> Vec<(u32, u64)> {
    subpop_index(s).iter().map(|(p, ids)| (p.0, ids.len() as u64)).collect()
}

fn splits(counts: &[(u32, u64)], order: &[usize]) -> Vec<f64> {
    let mut alive: Vec<(u32, u64)> = counts.to_vec();
    order
        .iter()
        .map(|&f| {
            let total: u64 = alive.iter().map(|c| c.1).sum();
            if total == 0 {
                return 0.0;
            }
            let ones: u64 = alive.iter().filter(|c| c.0 >> f & 1 == 1).map(|c| c.1).sum();
            let zeros = total - ones;
            let keep_ones = ones >= zeros;
            alive.retain(|c| (c.0 >> f & 1 == 1) == keep_ones);
            ones.min(zeros) as f64 / total as f64
        })
        .collect()
}

/// Rare-level fraction at each step of `order`. The walk keeps the larger side
/// of every split, so step `t` is measured on the subset that agrees with the
/// majority level of all earlier factors.
pub fn split_probabilities(s: &Sample, order: &[usize]) -> Vec<f64> {
    splits(&profile_counts(s), order)
}

/// Rare-level marginal frequency of each factor.
pub fn rare_levels(s: &Sample) -> Vec<f64> {
    let n = s.n() as f64;
    (0..s.m())
        .map(|f| {
            let ones = s.units().iter().filter(|u| u.profile.get(f)).count() as f64;
            ones.min(n - ones) / n
        })
        .collect()
}

/// Inverse Simpson index `1 / sum p_i^2` of a level distribution.
pub fn inverse_simpson(probs: &[f64]) -> f64 {
    1.0 / probs.iter().map(|p| p * p).sum::<f64>()
}

/// Ceiling that ignores float noise below one part in 10^12.
fn ceil_count(x: f64) -> u64 {
    (x * (1.0 - 1e-12)).ceil() as u64
}

/// Required sizes for a minimum split probability: `(2^m / M, n 2^m / (M e))`.
pub fn required_sizes(m: usize, min_split: f64, n: u64) -> (u64, u64) {
    let lambda = 1.0 / min_split;
    let cells = (1u64 << m) as f64;
    (ceil_count(cells * lambda), ceil_count(n as f64 * cells * lambda / std::f64::consts::E))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinSplitMode {
    /// Smallest marginal rare-level frequency; step one of any ordering.
    #[default]
    Marginal,
    /// Minimum over all `m!` orderings and all steps.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub m: usize,
    pub n: usize,
    pub n_target: u64,
    pub mode: MinSplitMode,
    pub min_split_prob: f64,
    pub lambda_min: f64,
    pub n_single: u64,
    pub n_many: u64,
    /// Balanced-sample counterparts: `2^m` and `n 2^m / e`.
    pub balanced_single: u64,
    pub balanced_many: u64,
    pub rare_levels: Vec<f64>,
    pub inverse_simpson: Vec<f64>,
}

/// Minimum split probability over every ordering of the factors.
pub fn exact_min_split(s: &Sample) -> Result<f64> {
    let m = s.m();
    if m > EXACT_MAX_M {
        return Err(PowerError::ExactTooLarge(m));
    }
    let counts = profile_counts(s);
    let total = combinatorics::count_permutations(m)?;
    let min = (0..total)
        .into_par_iter()
        .map(|code| {
            let order = Permutation::unrank(code, m).expect("code in range");
            splits(&counts, order.items()).into_iter().fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min)
}

pub fn power_report(s: &Sample, n_target: Option<u64>, mode: MinSplitMode) -> Result<PowerReport> {
    if s.n() == 0 {
        return Err(PowerError::Empty);
    }
    let m = s.m();
    let rare = rare_levels(s);
    if let Some(index) = rare.iter().position(|&p| p == 0.0) {
        return Err(PowerError::Degenerate { index, name: s.factor_names()[index].clone() });
    }
    let min_split = match mode {
        MinSplitMode::Marginal => rare.iter().copied().fold(f64::INFINITY, f64::min),
        MinSplitMode::Exact => exact_min_split(s)?,
    };
    let n_target = n_target.unwrap_or(s.n() as u64);
    let (n_single, n_many) = required_sizes(m, min_split, n_target);
    let (balanced_single, balanced_many) = required_sizes(m, 1.0, n_target);
    Ok(PowerReport {
        m,
        n: s.n(),
        n_target,
        mode,
        min_split_prob: min_split,
        lambda_min: 1.0 / min_split,
        n_single,
        n_many,
        balanced_single,
        balanced_many,
        inverse_simpson: rare.iter().map(|&p| inverse_simpson(&[p, 1.0 - p])).collect(),
        rare_levels: rare,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionResult {
    pub m: usize,
    pub k: usize,
    pub draws: u64,
    pub seed: u64,
    /// Full-permutation code -> count.
    pub frequencies: BTreeMap<u64, u64>,
}

const SHARD: u64 = 8192;

/// One ordering: repeatedly draw a block of `k` of the remaining factors
/// uniformly at random and append it in ascending order.
fn draw_order(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut order = Vec::with_capacity(m);
    while !remaining.is_empty() {
        let take = k.min(remaining.len());
        let mut picked: Vec<usize> = sample_indices(rng, remaining.len(), take).into_vec();
        picked.sort_unstable_by(|a, b| b.cmp(a));
        let mut block: Vec<usize> = picked.into_iter().map(|i| remaining.remove(i)).collect();
        block.sort_unstable();
        order.extend(block);
    }
    order
}

/// Tallies `draws` orderings of `m` factors built from blocks of `k`. Draws are
/// sharded over seed-derived ChaCha streams, so the tally does not depend on
/// the thread count.
pub fn bisection_simulate(m: usize, k: usize, draws: u64, seed: u64) -> Result<BisectionResult> {
    if m == 0 || m > combinatorics::MAX_M {
        return Err(PowerError::BadM(m));
    }
    if k == 0 || k > m {
        return Err(PowerError::BadBlock { k, m });
    }
    let shards = draws.div_ceil(SHARD);
    let frequencies = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let n = SHARD.min(draws - shard * SHARD);
            let mut tally: BTreeMap<u64, u64> = BTreeMap::new();
            for _ in 0..n {
                let order = Permutation::new(draw_order(m, k, &mut rng)).expect("valid ordering");
                *tally.entry(order.rank().value).or_default() += 1;
            }
            tally
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (code, c) in b {
                *a.entry(code).or_default() += c;
            }
            a
        });
    Ok(BisectionResult { m, k, draws, seed, frequencies })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
}

/// Pearson chi-square against the uniform distribution over `categories`;
/// categories missing from `counts` count as zero.
pub fn chi_square_uniform<I: IntoIterator<Item = u64>>(counts: I, categories: u64) -> ChiSquareTest {
    let counts: Vec<u64> = counts.into_iter().collect();
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / categories as f64;
    let observed: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let missing = categories - counts.len() as u64;
    let statistic = observed + missing as f64 * expected;
    let dof = categories - 1;
    let p_value = ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.sf(statistic));
    ChiSquareTest { statistic, dof, p_value }
}

impl BisectionResult {
    pub fn uniformity(&self) -> ChiSquareTest {
        let cats = combinatorics::count_permutations(self.m).expect("m <= 20");
        chi_square_uniform(self.frequencies.values().copied(), cats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Profile;

    fn sample(m: usize, ps: &[u32]) -> Sample {
        let ps: Vec<Profile> = ps.iter().map(|&p| Profile(p)).collect();
        Sample::from_profiles(m, &ps, None).unwrap()
    }

    #[test]
    fn balanced_splits() {
        assert_eq!(split_probabilities(&sample(2, &[0, 1, 2, 3]), &[0, 1]), vec![0.5, 0.5]);
        let cube = sample(4, &(0..16).collect::<Vec<_>>());
        assert!(split_probabilities(&cube, &[2, 0, 3, 1]).iter().all(|&p| p == 0.5));
        // factor 1 always on
        let p = split_probabilities(&sample(2, &[2, 3]), &[1, 0]);
        assert_eq!(p, vec![0.0, 0.5]);
        assert_eq!(split_probabilities(&sample(2, &[]), &[0, 1]), vec![0.0, 0.0]);
    }

    #[test]
    fn required_sizes_follow_formula() {
        assert_eq!(required_sizes(10, 0.05, 1).0, 20480);
        assert_eq!(required_sizes(10, 0.5, 100), (2048, 75342));
        assert_eq!(required_sizes(10, 1.0, 1).0, 1024);
    }

    #[test]
    fn report_and_degenerate() {
        let cube = sample(3, &(0..8).collect::<Vec<_>>());
        let r = power_report(&cube, None, MinSplitMode::Marginal).unwrap();
        assert_eq!(r.min_split_prob, 0.5);
        assert_eq!(r.n_single, 16);
        assert_eq!(r.balanced_single, 8);
        assert!(r.inverse_simpson.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let e = power_report(&sample(2, &[2, 3]), None, MinSplitMode::Marginal).unwrap_err();
        assert!(matches!(e, PowerError::Degenerate { index: 1, .. }));
    }

    #[test]
    fn exact_is_below_marginal() {
        let s = sample(3, &[0, 1, 2, 3, 4, 5, 7, 7, 6, 1, 1]);
        let marginal = power_report(&s, None, MinSplitMode::Marginal).unwrap().min_split_prob;
        let exact = power_report(&s, None, MinSplitMode::Exact).unwrap().min_split_prob;
        assert!(exact <= marginal);
        assert!(power_report(&sample(9, &[0, 511]), None, MinSplitMode::Exact).is_err());
    }

    #[test]
    fn bisection_blocks() {
        let r = bisection_simulate(4, 4, 1000, 1).unwrap();
        assert_eq!(r.frequencies.len(), 1);
        assert_eq!(r.frequencies[&0], 1000);
        let r = bisection_simulate(4, 2, 5000, 1).unwrap();
        assert_eq!(r.frequencies.values().sum::<u64>(), 5000);
        // two ascending pairs: C(4,2) = 6 orderings
        assert_eq!(r.frequencies.len(), 6);
        for &code in r.frequencies.keys() {
            let p = Permutation::unrank(code, 4).unwrap();
            assert!(p.items()[0] < p.items()[1] && p.items()[2] < p.items()[3]);
        }
        assert_eq!(bisection_simulate(4, 1, 3000, 9).unwrap(), bisection_simulate(4, 1, 3000, 9).unwrap());
        assert!(bisection_simulate(4, 0, 10, 0).is_err());
    }

    #[test]
    fn uniform_draws_pass_chi_square() {
        let r = bisection_simulate(4, 1, 100_000, 11).unwrap();
        assert_eq!(r.frequencies.len(), 24);
        assert!(r.uniformity().p_value > 0.001);
    }
}
