//! Repeated simulation studies: external accuracy under orderings, depth
//! flatness of pairwise square errors, and the common error component under
//! omitted factors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curves::{learning_curve, split_order, CurveConfig};
use super::estimators::plan_for;
use super::learners::LearnerKind;
use super::{sign_test, substream_seed, HarnessError};
use crate::effects::{decompose, error_grid, observe_all, pairwise_error_matrix, Axis, ErrorDecomposition};
use crate::enumeration::{square_cover, CoverConfig};
use crate::orderings::Strategy;
use crate::sample::Sample;
use crate::simgen::{generate, Case, GenSpec};

#[derive(Debug, Clone)]
pub struct OrderingStudy {
    pub spec: GenSpec,
    pub strategies: Vec<Strategy>,
    pub learner: LearnerKind,
    /// Training prefix as a fraction of the internal section.
    pub train_fraction: f64,
    pub external_fraction: f64,
    pub runs: usize,
    pub seed: u64,
    pub cover: CoverConfig,
}

impl OrderingStudy {
    pub fn new(spec: GenSpec, runs: usize, seed: u64) -> Self {
        Self {
            spec,
            strategies: vec![Strategy::Random, Strategy::SquareVertical, Strategy::Tsp],
            learner: LearnerKind::Logistic,
            train_fraction: 0.25,
            external_fraction: super::curves::DEFAULT_EXTERNAL_FRACTION,
            runs,
            seed,
            cover: CoverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingRun {
    pub run: usize,
    pub n_train: usize,
    pub external_acc: BTreeMap<Strategy, f64>,
    pub internal_acc: BTreeMap<Strategy, f64>,
}

/// Paired comparison of one strategy against the random order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub strategy: Strategy,
    pub above: u64,
    pub below: u64,
    pub ties: u64,
    pub mean_diff: f64,
    /// One-sided sign-test p-values for "above" and "below".
    pub p_above: f64,
    pub p_below: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub runs: Vec<OrderingRun>,
    pub versus_random: Vec<PairedComparison>,
}

pub fn ordering_study(study: &OrderingStudy) -> Result<OrderingReport, HarnessError> {
    let runs: Vec<OrderingRun> = (0..study.runs)
        .into_par_iter()
        .map(|run| {
            let seed = substream_seed(study.seed, run as u64);
            let (s, _) = generate(&GenSpec { seed, ..study.spec.clone() })?;
            let mut ext = BTreeMap::new();
            let mut int = BTreeMap::new();
            let mut n_train = 0;
            for &strategy in &study.strategies {
                let plan = plan_for(&s, strategy, &study.cover, seed);
                let (internal, _) = split_order(&plan.order, study.external_fraction);
                n_train = ((internal.len() as f64 * study.train_fraction).round() as usize).max(1);
                let cfg = CurveConfig {
                    external_fraction: study.external_fraction,
                    ..CurveConfig::new(study.learner, vec![n_train], seed)
                };
                let rec = learning_curve(&s, &plan, &cfg)?.remove(0);
                ext.insert(strategy, rec.external_acc);
                int.insert(strategy, rec.internal_acc);
            }
            Ok(OrderingRun { run, n_train, external_acc: ext, internal_acc: int })
        })
        .collect::<Result<_, HarnessError>>()?;
    let versus_random = study
        .strategies
        .iter()
        .filter(|&&s| s != Strategy::Random)
        .map(|&strategy| compare(&runs, strategy))
        .collect();
    Ok(OrderingReport { runs, versus_random })
}

fn compare(runs: &[OrderingRun], strategy: Strategy) -> PairedComparison {
    let (mut above, mut below, mut ties, mut sum) = (0, 0, 0, 0.0);
    for r in runs {
        let d = r.external_acc[&strategy] - r.external_acc[&Strategy::Random];
        sum += d;
        match d.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => above += 1,
            Some(std::cmp::Ordering::Less) => below += 1,
            _ => ties += 1,
        }
    }
    PairedComparison {
        strategy,
        above,
        below,
        ties,
        mean_diff: sum / runs.len().max(1) as f64,
        p_above: sign_test(above, below),
        p_below: sign_test(below, above),
    }
}

/// Least-squares slope of `ys` against `1..=len`.
pub fn depth_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let xbar = (n + 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 + 1.0 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessRun {
    pub run: usize,
    pub size: usize,
    /// Mean pairwise error per depth (vertical grouping), depths `1..=size`.
    pub depth_means: Vec<f64>,
    pub level: f64,
    pub slope: f64,
    /// `|slope| / level`.
    pub normalized_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessSize {
    pub size: usize,
    pub runs: usize,
    pub mean_level: f64,
    /// Mean over runs of the per-run normalized slope.
    pub mean_normalized_slope: f64,
    /// Normalized slope of the run-averaged depth profile.
    pub pooled_normalized_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub runs: Vec<FlatnessRun>,
    pub sizes: Vec<FlatnessSize>,
}

/// Pairwise square errors by depth for each square size: squares of exactly
/// that size are drawn without replacement from each simulated sample.
pub fn flatness_study(spec: &GenSpec, sizes: &[usize], runs: usize, seed: u64) -> Result<FlatnessReport, HarnessError> {
    let per_run: Vec<Vec<FlatnessRun>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let rs = substream_seed(seed, run as u64);
            let (s, _) = generate(&GenSpec { seed: rs, ..spec.clone() })?;
            let mut out = Vec::new();
            for &size in sizes {
                let cover = CoverConfig { min_size: size, max_size: size, ..CoverConfig::default() };
                let obs = observe_all(&square_cover(&s, &cover, rs), &s);
                let cells = pairwise_error_matrix(&obs, None);
                let depth_means: Option<Vec<f64>> = (1..=size)
                    .map(|d| {
                        cells.iter().find(|c| c.axis == Axis::Vertical && c.size == size && c.index == d).and_then(|c| c.mean)
                    })
                    .collect();
                let Some(depth_means) = depth_means else { continue };
                let level = depth_means.iter().sum::<f64>() / size as f64;
                let slope = depth_slope(&depth_means);
                out.push(FlatnessRun { run, size, level, slope, normalized_slope: slope.abs() / level, depth_means });
            }
            Ok(out)
        })
        .collect::<Result<_, HarnessError>>()?;
    let runs: Vec<FlatnessRun> = per_run.into_iter().flatten().collect();
    let sizes = sizes
        .iter()
        .filter_map(|&size| {
            let rs: Vec<&FlatnessRun> = runs.iter().filter(|r| r.size == size).collect();
            if rs.is_empty() {
                return None;
            }
            let k = rs.len() as f64;
            let pooled: Vec<f64> = (0..size).map(|d| rs.iter().map(|r| r.depth_means[d]).sum::<f64>() / k).collect();
            let mean_level = pooled.iter().sum::<f64>() / size as f64;
            Some(FlatnessSize {
                size,
                runs: rs.len(),
                mean_level,
                mean_normalized_slope: rs.iter().map(|r| r.normalized_slope).sum::<f64>() / k,
                pooled_normalized_slope: depth_slope(&pooled).abs() / mean_level,
            })
        })
        .collect();
    Ok(FlatnessReport { runs, sizes })
}

#[derive(Debug, Clone)]
pub struct OmittedStudy {
    pub m: usize,
    pub n: usize,
    /// Omitted counts to evaluate; the fully observed run is the baseline.
    pub omitted: Vec<usize>,
    pub square_size: usize,
    pub runs: usize,
    pub seed: u64,
}

impl OmittedStudy {
    pub fn new(n: usize, runs: usize, seed: u64) -> Self {
        Self { m: 10, n, omitted: vec![3, 2, 1, 0], square_size: 2, runs, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedRun {
    pub run: usize,
    pub omitted: usize,
    pub decomposition: ErrorDecomposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedReport {
    pub runs: Vec<OmittedRun>,
    /// `(omitted count, mean eps_square, mean unfloored eps_square, runs)`.
    pub means: Vec<(usize, f64, f64, usize)>,
    /// Runs skipped because some grid was unbalanced.
    pub skipped: usize,
}

/// Additive samples with nested sets of columns removed. The error grid
/// covers the factors that are never removed; each grid is decomposed against
/// the grid of the same sample with every column present.
pub fn omitted_study(study: &OmittedStudy) -> Result<OmittedReport, HarnessError> {
    let max_q = study.omitted.iter().copied().max().unwrap_or(0);
    let per_run: Vec<Option<Vec<OmittedRun>>> = (0..study.runs)
        .into_par_iter()
        .map(|run| {
            let rs = substream_seed(study.seed, run as u64);
            let (full, _) = generate(&GenSpec::new(Case::Additive, study.m, study.n, rs))?;
            let mut order: Vec<usize> = (0..study.m).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(rs));
            let always: Vec<usize> = order[max_q..].to_vec();
            let grid_for = |q: usize| -> Result<Option<crate::effects::ErrorGrid>, HarnessError> {
                let keep: Vec<usize> = (0..study.m).filter(|f| !order[..q].contains(f)).collect();
                let s: Sample = full.select_factors(&keep)?;
                let cover = CoverConfig { min_size: study.square_size, max_size: study.square_size, ..CoverConfig::default() };
                let obs = observe_all(&square_cover(&s, &cover, rs), &s);
                let cols: Vec<usize> = always.iter().map(|f| keep.iter().position(|k| k == f).expect("kept")).collect();
                let grid = error_grid(&obs, study.square_size, &cols);
                Ok(grid.values.iter().all(Option::is_some).then_some(grid))
            };
            let Some(baseline) = grid_for(0)? else { return Ok(None) };
            let mut out = Vec::new();
            for &q in &study.omitted {
                let Some(grid) = grid_for(q)? else { return Ok(None) };
                let decomposition = decompose(&grid, Some(&baseline)).map_err(|e| HarnessError::Invalid(e.to_string()))?;
                out.push(OmittedRun { run, omitted: q, decomposition });
            }
            Ok(Some(out))
        })
        .collect::<Result<_, HarnessError>>()?;
    let skipped = per_run.iter().filter(|r| r.is_none()).count();
    let runs: Vec<OmittedRun> = per_run.into_iter().flatten().flatten().collect();
    let means = study
        .omitted
        .iter()
        .map(|&q| {
            let rs: Vec<&OmittedRun> = runs.iter().filter(|r| r.omitted == q).collect();
            let k = rs.len().max(1) as f64;
            let eps = rs.iter().map(|r| r.decomposition.eps_square).sum::<f64>() / k;
            let raw = rs.iter().map(|r| r.decomposition.eps_square_raw).sum::<f64>() / k;
            (q, eps, raw, rs.len())
        })
        .collect();
    Ok(OmittedReport { runs, means, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_line() {
        assert!((depth_slope(&[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
        assert_eq!(depth_slope(&[4.0, 4.0]), 0.0);
    }
}
