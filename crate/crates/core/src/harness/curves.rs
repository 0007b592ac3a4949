//! Learning curves: training on growing prefixes of an ordering, with 4-fold
//! cross-validated internal accuracy and accuracy on an untouched external
//! tail of the same ordering.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learners::{Dataset, LearnerKind};
use super::{substream_seed, HarnessError};
use crate::orderings::{OrderingPlan, Strategy};
use crate::sample::{Profile, Sample, UnitId};

pub const DEFAULT_FOLDS: usize = 4;
pub const DEFAULT_EXTERNAL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Predict the outcome class from the profile.
    #[default]
    Outcome,
    /// Predict whether the outcome rises across a singleton difference, from
    /// the difference vector and the lower profile.
    Diff,
}

impl std::str::FromStr for Task {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "outcome" => Ok(Task::Outcome),
            "diff" => Ok(Task::Diff),
            _ => Err(HarnessError::Invalid(format!("unknown task '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub step: usize,
    /// Training units (prefix length of the internal section).
    pub n: usize,
    pub strategy: Strategy,
    pub learner: LearnerKind,
    pub task: Task,
    pub internal_acc: f64,
    pub external_acc: f64,
    pub seed: u64,
    /// Hash of the external rows; constant along a curve.
    pub external_digest: u64,
}

#[derive(Debug, Clone)]
pub struct CurveConfig {
    pub learner: LearnerKind,
    /// Prefix lengths of the internal section, nondecreasing.
    pub steps: Vec<usize>,
    pub external_fraction: f64,
    pub folds: usize,
    pub task: Task,
    pub seed: u64,
}

impl CurveConfig {
    pub fn new(learner: LearnerKind, steps: Vec<usize>, seed: u64) -> Self {
        Self {
            learner,
            steps,
            external_fraction: DEFAULT_EXTERNAL_FRACTION,
            folds: DEFAULT_FOLDS,
            task: Task::Outcome,
            seed,
        }
    }
}

/// Internal and external sections of an order.
pub fn split_order(order: &[UnitId], external_fraction: f64) -> (&[UnitId], &[UnitId]) {
    let n = order.len();
    let ext = ((n as f64 * external_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    order.split_at(n - ext.min(n))
}

/// `k` evenly spaced prefix lengths ending at `n`.
pub fn even_steps(n: usize, k: usize) -> Vec<usize> {
    (1..=k).map(|i| (n * i).div_ceil(k).max(1)).collect()
}

fn outcomes(s: &Sample, ids: &[UnitId]) -> Result<Vec<(Profile, f64)>, HarnessError> {
    ids.iter()
        .map(|&id| {
            let u = s.unit(id).ok_or(HarnessError::UnknownUnit(id))?;
            Ok((u.profile, u.outcome.ok_or(HarnessError::MissingOutcomes)?))
        })
        .collect()
}

/// Rows for the outcome task.
pub fn outcome_rows(s: &Sample, ids: &[UnitId]) -> Result<Dataset, HarnessError> {
    let m = s.m();
    let rows = outcomes(s, ids)?;
    Ok(Dataset::new(rows.iter().map(|(p, _)| p.features(m)).collect(), rows.iter().map(|r| r.1).collect()))
}

/// Rows for the difference task. Units are paired across each singleton
/// difference present among `ids`, members of the two buckets matched in
/// order, each unit used at most once per edge. Features are the signed
/// difference vector followed by the lower profile; the target is whether
/// the upper unit's outcome is larger.
pub fn diff_rows(s: &Sample, ids: &[UnitId]) -> Result<Dataset, HarnessError> {
    let m = s.m();
    let mut buckets: HashMap<Profile, Vec<(UnitId, f64)>> = HashMap::new();
    for (&id, (p, y)) in ids.iter().zip(outcomes(s, ids)?) {
        buckets.entry(p).or_default().push((id, y));
    }
    let mut keys: Vec<Profile> = buckets.keys().copied().collect();
    keys.sort_unstable();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &lo in &keys {
        for f in 0..m {
            if lo.get(f) {
                continue;
            }
            let hi = lo.toggle(f);
            let Some(up) = buckets.get(&hi) else { continue };
            for (a, b) in buckets[&lo].iter().zip(up) {
                let mut row = vec![0.0; m];
                row[f] = 1.0;
                row.extend(lo.features(m));
                x.push(row);
                y.push(if b.1 > a.1 { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(Dataset::new(x, y))
}

fn rows_for(s: &Sample, ids: &[UnitId], task: Task) -> Result<Dataset, HarnessError> {
    match task {
        Task::Outcome => outcome_rows(s, ids),
        Task::Diff => diff_rows(s, ids),
    }
}

/// Mean held-out accuracy over `folds` seeded folds. With fewer than two
/// rows the model is scored on its own training data.
pub fn cv_accuracy(learner: LearnerKind, data: &Dataset, folds: usize, seed: u64) -> Result<f64, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::EmptyTraining);
    }
    let k = folds.min(data.len());
    if k < 2 {
        return Ok(learner.fit(data, seed)?.accuracy(data));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let accs: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = idx.iter().copied().skip(f).step_by(k).collect();
            let train: Vec<usize> = idx.iter().enumerate().filter(|(i, _)| i % k != f).map(|(_, &r)| r).collect();
            let model = learner.fit(&data.subset(&train), substream_seed(seed, f as u64))?;
            Ok(model.accuracy(&data.subset(&test)))
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(accs.iter().sum::<f64>() / k as f64)
}

pub fn digest(s: &Sample, ids: &[UnitId]) -> u64 {
    let mut h = DefaultHasher::new();
    for &id in ids {
        id.hash(&mut h);
        if let Some(u) = s.unit(id) {
            u.profile.hash(&mut h);
            u.outcome.map(f64::to_bits).hash(&mut h);
        }
    }
    h.finish()
}

pub fn learning_curve(s: &Sample, plan: &OrderingPlan, cfg: &CurveConfig) -> Result<Vec<CurveRecord>, HarnessError> {
    if !s.has_outcomes() {
        return Err(HarnessError::MissingOutcomes);
    }
    if !(cfg.external_fraction > 0.0 && cfg.external_fraction < 1.0) {
        return Err(HarnessError::Invalid(format!("external fraction {} outside (0, 1)", cfg.external_fraction)));
    }
    if cfg.steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(HarnessError::Invalid("curve steps must be nondecreasing".into()));
    }
    let (internal, external) = split_order(&plan.order, cfg.external_fraction);
    let ext_rows = rows_for(s, external, cfg.task)?;
    let ext_digest = digest(s, external);
    cfg.steps
        .par_iter()
        .enumerate()
        .map(|(step, &n)| {
            let n = n.min(internal.len());
            let at_step = |e: HarnessError| HarnessError::Step { step, n, source: Box::new(e) };
            let train = rows_for(s, &internal[..n], cfg.task).map_err(at_step)?;
            let fold_seed = substream_seed(cfg.seed, step as u64);
            let internal_acc = cv_accuracy(cfg.learner, &train, cfg.folds, fold_seed).map_err(at_step)?;
            let model = cfg.learner.fit(&train, fold_seed).map_err(at_step)?;
            Ok(CurveRecord {
                step,
                n,
                strategy: plan.strategy,
                learner: cfg.learner,
                task: cfg.task,
                internal_acc,
                external_acc: model.accuracy(&ext_rows),
                seed: cfg.seed,
                external_digest: ext_digest,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orderings::order_random;

    fn constant_sample(n: usize) -> Sample {
        let ps: Vec<Profile> = (0..n as u32).map(|i| Profile(i % 8)).collect();
        Sample::from_profiles(3, &ps, Some(&vec![1.0; n])).unwrap()
    }

    #[test]
    fn constant_outcome_gives_majority_accuracy() {
        let s = constant_sample(40);
        let plan = order_random(&s, 1);
        for learner in LearnerKind::ALL {
            let recs = learning_curve(&s, &plan, &CurveConfig::new(learner, even_steps(30, 3), 2)).unwrap();
            assert!(recs.iter().all(|r| r.internal_acc == 1.0 && r.external_acc == 1.0));
        }
    }

    #[test]
    fn external_digest_is_fixed_and_full_step_matches_direct_cv() {
        let ps: Vec<Profile> = (0..200u32).map(|i| Profile(i * 7 % 16)).collect();
        let ys: Vec<f64> = (0..200).map(|i| ((i * 7 % 16) % 3 == 0) as u8 as f64).collect();
        let s = Sample::from_profiles(4, &ps, Some(&ys)).unwrap();
        let plan = order_random(&s, 3);
        let cfg = CurveConfig::new(LearnerKind::Forest, even_steps(150, 5), 4);
        let recs = learning_curve(&s, &plan, &cfg).unwrap();
        assert!(recs.windows(2).all(|w| w[0].external_digest == w[1].external_digest && w[0].n <= w[1].n));
        let (internal, _) = split_order(&plan.order, 0.25);
        let direct = cv_accuracy(cfg.learner, &outcome_rows(&s, internal).unwrap(), 4, substream_seed(4, 4)).unwrap();
        assert_eq!(recs.last().unwrap().internal_acc, direct);
        assert_eq!(recs, learning_curve(&s, &plan, &cfg).unwrap());
    }

    #[test]
    fn diff_rows_pair_edges() {
        let s = Sample::from_profiles(2, &[Profile(0), Profile(1), Profile(3)], Some(&[0.0, 1.0, 1.0])).unwrap();
        let d = diff_rows(&s, &[0, 1, 2]).unwrap();
        // edges 00-01 (rise) and 01-11 (flat)
        assert_eq!(d.len(), 2);
        assert_eq!(d.y, vec![1.0, 0.0]);
        assert_eq!(d.x[0], vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_outcomes_rejected() {
        let s = Sample::from_profiles(1, &[Profile(0), Profile(1)], None).unwrap();
        let plan = order_random(&s, 0);
        assert!(learning_curve(&s, &plan, &CurveConfig::new(LearnerKind::Logistic, vec![1], 0)).is_err());
    }
}
