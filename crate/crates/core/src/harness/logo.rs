//! Leave-one-group-out prediction, optionally with each group's common
//! square error as an extra input column.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::learners::{Dataset, LearnerKind};
use super::{substream_seed, HarnessError};
use crate::effects::{decompose, error_grid, observe_all, ErrorGrid};
use crate::enumeration::{square_cover, CoverConfig};
use crate::sample::{Profile, Sample, Unit, UnitId};
use crate::simgen::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: String,
    pub n: usize,
    pub mse: f64,
    /// The group's common square error, when requested.
    pub eps_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogoReport {
    pub learner: LearnerKind,
    pub with_eps_sq: bool,
    pub groups: Vec<GroupResult>,
    pub mean_mse: f64,
}

#[derive(Debug, Clone)]
pub struct LogoConfig {
    pub learner: LearnerKind,
    pub with_eps_sq: bool,
    /// Square size whose error grid feeds the common error estimate.
    pub square_size: usize,
    pub seed: u64,
}

impl LogoConfig {
    pub fn new(learner: LearnerKind, with_eps_sq: bool, seed: u64) -> Self {
        Self { learner, with_eps_sq, square_size: 2, seed }
    }
}

fn grid_of(s: &Sample, size: usize, seed: u64) -> ErrorGrid {
    let cover = CoverConfig { min_size: size, max_size: size, ..CoverConfig::default() };
    let squares = square_cover(s, &cover, seed);
    let factors: Vec<usize> = (0..s.m()).collect();
    error_grid(&observe_all(&squares, s), size, &factors)
}

/// Common error of a group's grid against a baseline grid: the decomposition's
/// `eps_square` when the group grid is balanced, else the floored difference
/// of grand means over the defined cells.
pub fn group_eps_sq(grid: &ErrorGrid, baseline: &ErrorGrid) -> f64 {
    match decompose(grid, Some(baseline)) {
        Ok(d) => d.eps_square,
        Err(_) => match (grid.grand_mean(), baseline.grand_mean()) {
            (Some(g), Some(b)) => (g - b).max(0.0),
            _ => 0.0,
        },
    }
}

fn groups_of(s: &Sample) -> Result<BTreeMap<String, Vec<UnitId>>, HarnessError> {
    let mut groups: BTreeMap<String, Vec<UnitId>> = BTreeMap::new();
    for u in s.units() {
        let g = u.group.clone().ok_or(HarnessError::MissingGroups)?;
        groups.entry(g).or_default().push(u.id);
    }
    Ok(groups)
}

pub fn logo_task(s: &Sample, cfg: &LogoConfig) -> Result<LogoReport, HarnessError> {
    if !s.has_outcomes() {
        return Err(HarnessError::MissingOutcomes);
    }
    let groups = groups_of(s)?;
    if groups.len() < 2 {
        return Err(HarnessError::TooFewGroups(groups.len()));
    }
    for (g, ids) in &groups {
        if ids.len() == 1 {
            warn!("group '{g}' has a single unit");
        }
    }
    let m = s.m();
    let eps: BTreeMap<&str, f64> = if cfg.with_eps_sq {
        let baseline = grid_of(s, cfg.square_size, cfg.seed);
        groups
            .iter()
            .map(|(g, ids)| {
                let grid = grid_of(&s.subset(ids), cfg.square_size, cfg.seed);
                (g.as_str(), group_eps_sq(&grid, &baseline))
            })
            .collect()
    } else {
        BTreeMap::new()
    };
    let row = |u: &Unit, g: &str| -> Vec<f64> {
        let mut x = u.profile.features(m);
        if cfg.with_eps_sq {
            x.push(eps[g]);
        }
        x
    };
    let mut results = Vec::new();
    for (i, (g, ids)) in groups.iter().enumerate() {
        let (mut tx, mut ty) = (Vec::new(), Vec::new());
        for (h, hids) in &groups {
            if h == g {
                continue;
            }
            for &id in hids {
                let u = s.unit(id).expect("unit");
                tx.push(row(u, h));
                ty.push(u.outcome.expect("checked"));
            }
        }
        let model = cfg.learner.fit(&Dataset::new(tx, ty), substream_seed(cfg.seed, 1000 + i as u64))?;
        let test: Vec<&Unit> = ids.iter().map(|&id| s.unit(id).expect("unit")).collect();
        let mse = test.iter().map(|u| (model.prob(&row(u, g)) - u.outcome.expect("checked")).powi(2)).sum::<f64>()
            / test.len() as f64;
        results.push(GroupResult { group: g.clone(), n: ids.len(), mse, eps_sq: eps.get(g.as_str()).copied() });
    }
    let mean_mse = results.iter().map(|r| r.mse).sum::<f64>() / results.len() as f64;
    Ok(LogoReport { learner: cfg.learner, with_eps_sq: cfg.with_eps_sq, groups: results, mean_mse })
}

/// Synthetic grouped sample: shared factor effects plus, per group, a hidden
/// binary factor with a non-negative effect that differs by group. It raises
/// both the group's outcome rate and the spread of its square differences.
/// The hidden factor never appears as a column.
pub fn grouped_sample(m: usize, groups: usize, per_group: usize, seed: u64) -> Result<Sample, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let beta0 = -beta.iter().sum::<f64>() / 2.0;
    let mut units = Vec::with_capacity(groups * per_group);
    for g in 0..groups {
        let hidden = if g == 0 { 0.0 } else { rng.gen_range(0.0..3.0) };
        for _ in 0..per_group {
            let p = Profile(rng.gen_range(0..1u32 << m));
            let z = rng.gen_bool(0.5) as u8 as f64;
            let eta = beta0 + (0..m).filter(|&i| p.get(i)).map(|i| beta[i]).sum::<f64>() + hidden * z;
            let y = rng.gen_bool(sigmoid(eta)) as u8 as f64;
            units.push(Unit { id: units.len() as UnitId, profile: p, outcome: Some(y), group: Some(format!("g{g}")) });
        }
    }
    let names = (0..m).map(|i| format!("x{i}")).collect();
    Ok(Sample::new(names, units)?)
}
