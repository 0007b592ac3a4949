//! Effect estimators compared against simulated ground truth: the square
//! estimator (mean of square effect observations), g-computation and greedy
//! propensity-score matching.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learners::{Dataset, Logistic, LOGISTIC_PENALTY};
use super::{substream_seed, HarnessError};
use crate::effects::{estimate_all, observe_all, RunningStats};
use crate::enumeration::{square_cover, CoverConfig};
use crate::orderings::{order_random, order_square, order_tsp, OrderingPlan, Strategy};
use crate::sample::{Profile, Sample, UnitId};
use crate::simgen::{generate, GenSpec};

pub const DEFAULT_CALIPER: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    SquareEq4,
    Gcomp,
    Psm,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::SquareEq4, Estimator::Gcomp, Estimator::Psm];
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::SquareEq4 => "square_eq4",
            Estimator::Gcomp => "gcomp",
            Estimator::Psm => "psm",
        })
    }
}

fn check_levels(s: &Sample, factor: usize) -> Result<(), HarnessError> {
    if factor >= s.m() {
        return Err(HarnessError::Invalid(format!("factor {factor} outside 0..{}", s.m())));
    }
    if !s.has_outcomes() {
        return Err(HarnessError::MissingOutcomes);
    }
    let on = s.units().iter().filter(|u| u.profile.get(factor)).count();
    if on == 0 || on == s.n() {
        return Err(HarnessError::DegenerateFactor(factor));
    }
    Ok(())
}

fn outcome_model(s: &Sample) -> Logistic {
    let m = s.m();
    let x = s.units().iter().map(|u| u.profile.features(m)).collect();
    let y = s.units().iter().map(|u| u.outcome.unwrap_or(f64::NAN)).collect();
    Logistic::fit(&Dataset::new(x, y), LOGISTIC_PENALTY)
}

fn standardized_contrast(model: &Logistic, over: &[Profile], factor: usize, m: usize) -> f64 {
    let diff: f64 = over
        .iter()
        .map(|p| model.prob(&p.set(factor, true).features(m)) - model.prob(&p.set(factor, false).features(m)))
        .sum();
    diff / over.len() as f64
}

/// Mean over all units of the fitted outcome probability with `factor` set
/// to 1 minus the same with `factor` set to 0.
pub fn gcomp(s: &Sample, factor: usize) -> Result<f64, HarnessError> {
    check_levels(s, factor)?;
    let profiles: Vec<Profile> = s.units().iter().map(|u| u.profile).collect();
    Ok(standardized_contrast(&outcome_model(s), &profiles, factor, s.m()))
}

/// g-computation for every factor from a single outcome fit, averaging the
/// contrast over `population` profiles (the fitting sample when `None`).
pub fn gcomp_all(s: &Sample, population: Option<&[Profile]>) -> Result<Vec<f64>, HarnessError> {
    for f in 0..s.m() {
        check_levels(s, f)?;
    }
    let own: Vec<Profile>;
    let over = match population {
        Some(p) => p,
        None => {
            own = s.units().iter().map(|u| u.profile).collect();
            &own
        }
    };
    let model = outcome_model(s);
    Ok((0..s.m()).map(|f| standardized_contrast(&model, over, f, s.m())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmResult {
    pub estimate: f64,
    pub matched: usize,
    pub treated: usize,
}

/// Propensity from a logistic fit of `factor` on the other factors; treated
/// units, in id order, take the nearest unused control within `caliper`.
/// The estimate is the mean matched outcome difference.
pub fn psm(s: &Sample, factor: usize, caliper: f64) -> Result<PsmResult, HarnessError> {
    check_levels(s, factor)?;
    let m = s.m();
    let covariates = |p: Profile| -> Vec<f64> { (0..m).filter(|&i| i != factor).map(|i| p.get(i) as u8 as f64).collect() };
    let x = s.units().iter().map(|u| covariates(u.profile)).collect();
    let t = s.units().iter().map(|u| u.profile.get(factor) as u8 as f64).collect();
    let model = Logistic::fit(&Dataset::new(x, t), LOGISTIC_PENALTY);
    // propensities lie in (0, 1), where f64 bit patterns sort like the values
    let mut controls: BTreeMap<(u64, UnitId), f64> = BTreeMap::new();
    let mut treated: Vec<(UnitId, f64, f64)> = Vec::new();
    for u in s.units() {
        let e = model.prob(&covariates(u.profile));
        let y = u.outcome.expect("checked");
        if u.profile.get(factor) {
            treated.push((u.id, e, y));
        } else {
            controls.insert((e.to_bits(), u.id), y);
        }
    }
    treated.sort_by_key(|t| t.0);
    let mut diffs = RunningStats::default();
    for &(_, e, y) in &treated {
        let key = (e.to_bits(), 0);
        let below = controls.range(..key).next_back().map(|(k, _)| *k);
        let above = controls.range(key..).next().map(|(k, _)| *k);
        let dist = |k: (u64, UnitId)| (f64::from_bits(k.0) - e).abs();
        let best = match (below, above) {
            (Some(b), Some(a)) => Some(if dist(a) < dist(b) { a } else { b }),
            (b, a) => b.or(a),
        };
        if let Some(k) = best.filter(|&k| dist(k) <= caliper) {
            let yc = controls.remove(&k).expect("present");
            diffs.push(y - yc);
        }
    }
    if diffs.count == 0 {
        return Err(HarnessError::NoMatches { factor, caliper });
    }
    Ok(PsmResult { estimate: diffs.mean, matched: diffs.count as usize, treated: treated.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareEstimate {
    /// Per-factor mean delta; `None` where no square observed the factor.
    pub estimates: Vec<Option<f64>>,
    pub counts: Vec<u64>,
    pub squares: usize,
}

/// Square estimator: squares drawn without replacement from the sample
/// ([`square_cover`]), every observation of a factor averaged.
pub fn square_eq4(s: &Sample, cover: &CoverConfig, seed: u64) -> Result<SquareEstimate, HarnessError> {
    if !s.has_outcomes() {
        return Err(HarnessError::MissingOutcomes);
    }
    let squares = square_cover(s, cover, seed);
    let obs = observe_all(&squares, s);
    let est = estimate_all(&obs, s.m());
    Ok(SquareEstimate {
        estimates: est.iter().map(|e| e.as_ref().map(|e| e.mean)).collect(),
        counts: est.iter().map(|e| e.as_ref().map_or(0, |e| e.count)).collect(),
        squares: squares.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub run: usize,
    pub strategy: Strategy,
    pub estimator: Estimator,
    /// Per emitted factor; `None` where the estimator produced nothing.
    pub estimates: Vec<Option<f64>>,
    /// Sum of squared errors against ground truth; `None` if any factor lacks
    /// an estimate.
    pub sse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub strategy: Strategy,
    pub estimator: Estimator,
    pub runs: usize,
    pub mean_sse: f64,
    pub sd_sse: f64,
    /// Runs with no defined SSE.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub spec: GenSpec,
    pub n_sub: usize,
    pub results: Vec<EstimatorResult>,
    pub summary: Vec<BenchmarkSummary>,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub strategies: Vec<Strategy>,
    pub n_sub: usize,
    pub runs: usize,
    pub seed: u64,
    pub caliper: f64,
    /// Squares used both to order the sample and inside the square estimator.
    pub cover: CoverConfig,
    /// Average g-computation contrasts over the full generated sample's
    /// profiles rather than the subsample's.
    pub standardize_gcomp: bool,
}

impl BenchConfig {
    pub fn new(strategies: Vec<Strategy>, n_sub: usize, runs: usize, seed: u64) -> Self {
        Self {
            strategies,
            n_sub,
            runs,
            seed,
            caliper: DEFAULT_CALIPER,
            cover: CoverConfig { min_size: 1, ..CoverConfig::default() },
            standardize_gcomp: false,
        }
    }
}

/// Orders a sample's units under a strategy. Square strategies walk a square
/// cover of the sample's profiles, built without looking at outcomes.
pub fn plan_for(s: &Sample, strategy: Strategy, cover: &CoverConfig, seed: u64) -> OrderingPlan {
    match strategy {
        Strategy::Random => order_random(s, seed),
        Strategy::Tsp => order_tsp(s, seed),
        Strategy::SquareVertical | Strategy::SquareHorizontal => {
            let squares = square_cover(&s.without_outcomes(), cover, seed);
            let axis = if strategy == Strategy::SquareVertical {
                crate::effects::Axis::Vertical
            } else {
                crate::effects::Axis::Horizontal
            };
            order_square(s, &squares, axis, seed)
        }
    }
}

fn sse(est: &[Option<f64>], truth: &[f64]) -> Option<f64> {
    est.iter().zip(truth).map(|(e, t)| e.map(|e| (e - t).powi(2))).sum()
}

/// One benchmark run: generate, subsample under each strategy, estimate.
pub fn benchmark_run(
    spec: &GenSpec,
    cfg: &BenchConfig,
    run: usize,
) -> Result<Vec<EstimatorResult>, HarnessError> {
    let run_seed = substream_seed(cfg.seed, run as u64);
    let spec = GenSpec { seed: run_seed, ..spec.clone() };
    let (s, truth) = generate(&spec)?;
    let truth = truth.kept_effects();
    let population: Vec<Profile> = s.units().iter().map(|u| u.profile).collect();
    let mut out = Vec::new();
    for &strategy in &cfg.strategies {
        let plan = plan_for(&s, strategy, &cfg.cover, run_seed);
        let ids: Vec<UnitId> = plan.order[..cfg.n_sub.min(plan.order.len())].to_vec();
        let sub = s.subset(&ids);
        for estimator in Estimator::ALL {
            let estimates: Vec<Option<f64>> = match estimator {
                Estimator::SquareEq4 => square_eq4(&sub, &cfg.cover, run_seed)?.estimates,
                Estimator::Gcomp => {
                    let over = cfg.standardize_gcomp.then_some(population.as_slice());
                    match gcomp_all(&sub, over) {
                        Ok(v) => v.into_iter().map(Some).collect(),
                        Err(HarnessError::DegenerateFactor(_)) => vec![None; s.m()],
                        Err(e) => return Err(e),
                    }
                }
                Estimator::Psm => (0..s.m()).map(|f| psm(&sub, f, cfg.caliper).ok().map(|r| r.estimate)).collect(),
            };
            out.push(EstimatorResult { run, strategy, estimator, sse: sse(&estimates, &truth), estimates });
        }
    }
    Ok(out)
}

pub fn estimator_benchmark(spec: &GenSpec, cfg: &BenchConfig) -> Result<BenchmarkReport, HarnessError> {
    let per_run: Vec<Vec<EstimatorResult>> =
        (0..cfg.runs).into_par_iter().map(|r| benchmark_run(spec, cfg, r)).collect::<Result<_, _>>()?;
    let results: Vec<EstimatorResult> = per_run.into_iter().flatten().collect();
    let mut groups: BTreeMap<(Strategy, Estimator), (RunningStats, usize)> = BTreeMap::new();
    for r in &results {
        let g = groups.entry((r.strategy, r.estimator)).or_default();
        match r.sse {
            Some(v) => g.0.push(v),
            None => g.1 += 1,
        }
    }
    let summary = groups
        .into_iter()
        .map(|((strategy, estimator), (st, failures))| BenchmarkSummary {
            strategy,
            estimator,
            runs: st.count as usize,
            mean_sse: st.mean,
            sd_sse: st.variance().sqrt(),
            failures,
        })
        .collect();
    Ok(BenchmarkReport { spec: spec.clone(), n_sub: cfg.n_sub, results, summary })
}
