//! Effect observations read off assigned squares, per-factor estimates with
//! their external-validity score (precision of the observations), and the
//! two-way decomposition of error grids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::enumeration::Square;
use crate::sample::{Sample, UnitId};

#[derive(Debug, Error)]
pub enum EffectsError {
    #[error("no observations for factor {0}")]
    NoObservations(usize),
    #[error("unbalanced grid: factor {factor} has no value at depth {depth}")]
    Unbalanced { factor: usize, depth: usize },
    #[error("grid shape mismatch: {0}")]
    Shape(String),
    #[error("unknown reference unit {0}")]
    UnknownUnit(UnitId),
    #[error("grid csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("grid csv: bad value '{0}'")]
    BadValue(String),
}

pub type Result<T> = std::result::Result<T, EffectsError>;

/// One counterfactual difference across a square edge, oriented so that
/// `delta = y(factor on) - y(factor off)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectObservation {
    pub factor: usize,
    /// Column, 1-based.
    pub depth: usize,
    /// Row (rotation index), 1-based.
    pub row: usize,
    pub size: usize,
    pub square: usize,
    pub y_before: f64,
    pub y_after: f64,
    pub delta: f64,
}

/// Emits one observation per row and depth whose two endpoint cells (the
/// reference for depth 1) carry units with outcomes.
pub fn observe(sq: &Square, sample: &Sample, square_id: usize) -> Vec<EffectObservation> {
    let k = sq.size;
    let mut out = Vec::new();
    for r in 0..k {
        let mut prev = sq.reference_id;
        for c in 0..k {
            let cell = sq.cell(r, c);
            let ys = prev.and_then(|p| sample.outcome(p)).zip(cell.unit.and_then(|u| sample.outcome(u)));
            if let Some((y_prev, y_cell)) = ys {
                let (y_before, y_after) =
                    if cell.profile.get(cell.factor) { (y_prev, y_cell) } else { (y_cell, y_prev) };
                out.push(EffectObservation {
                    factor: cell.factor,
                    depth: c + 1,
                    row: r + 1,
                    size: k,
                    square: square_id,
                    y_before,
                    y_after,
                    delta: y_after - y_before,
                });
            }
            prev = cell.unit;
        }
    }
    out
}

pub fn observe_all(squares: &[Square], sample: &Sample) -> Vec<EffectObservation> {
    squares.iter().enumerate().flat_map(|(i, sq)| observe(sq, sample, i)).collect()
}

/// Streaming count / mean / M2 with associative merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        Self {
            count: n,
            mean: self.mean + d * other.count as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.count as f64 * other.count as f64) / n as f64,
        }
    }

    /// Sample variance (n - 1 denominator); 0 for a single value.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

fn ser_ev<S: Serializer>(ev: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if ev.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*ev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub factor: usize,
    pub mean: f64,
    pub variance: f64,
    pub count: u64,
    /// `1 / variance`; `f64::INFINITY` (serialized as `"inf"`) at zero variance.
    #[serde(serialize_with = "ser_ev")]
    pub ev: f64,
}

impl EffectEstimate {
    pub fn from_stats(factor: usize, st: &RunningStats) -> Self {
        let variance = st.variance();
        let ev = if variance > 0.0 { 1.0 / variance } else { f64::INFINITY };
        Self { factor, mean: st.mean, variance, count: st.count, ev }
    }
}

pub fn estimate(observations: &[EffectObservation], factor: usize) -> Result<EffectEstimate> {
    let st: RunningStats =
        observations.iter().filter(|o| o.factor == factor).map(|o| o.delta).collect();
    if st.count == 0 {
        return Err(EffectsError::NoObservations(factor));
    }
    Ok(EffectEstimate::from_stats(factor, &st))
}

/// Estimates for every factor in `0..m`; factors without observations are `None`.
pub fn estimate_all(observations: &[EffectObservation], m: usize) -> Vec<Option<EffectEstimate>> {
    let mut stats = vec![RunningStats::default(); m];
    for o in observations {
        stats[o.factor].push(o.delta);
    }
    stats
        .iter()
        .enumerate()
        .map(|(f, st)| (st.count > 0).then(|| EffectEstimate::from_stats(f, st)))
        .collect()
}

/// Mean outcome difference to a reference unit, per realized difference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceEffect {
    pub factors: Vec<usize>,
    pub mean_delta: f64,
    pub count: u64,
}

/// For every nonempty set `D` of factors realized as `x_j xor x_i` by some unit
/// `j`, the mean of `y_j - y_i`. Sorted by set size, then lexicographically.
pub fn reference_decomposition(s: &Sample, reference_id: UnitId) -> Result<Vec<DifferenceEffect>> {
    let reference = s.unit(reference_id).ok_or(EffectsError::UnknownUnit(reference_id))?;
    let y_ref = reference.outcome.unwrap_or(f64::NAN);
    let mut groups: BTreeMap<u32, RunningStats> = BTreeMap::new();
    for u in s.units() {
        let diff = u.profile.0 ^ reference.profile.0;
        if diff == 0 {
            continue;
        }
        if let Some(y) = u.outcome {
            groups.entry(diff).or_default().push(y - y_ref);
        }
    }
    let mut out: Vec<DifferenceEffect> = groups
        .into_iter()
        .map(|(mask, st)| DifferenceEffect {
            factors: (0..s.m()).filter(|&i| mask >> i & 1 == 1).collect(),
            mean_delta: st.mean,
            count: st.count,
        })
        .collect();
    out.sort_by(|a, b| a.factors.len().cmp(&b.factors.len()).then(a.factors.cmp(&b.factors)));
    Ok(out)
}

/// Accumulates `sum_{i<j} (v_i - v_j)^2` per factor without forming pairs:
/// for one factor, `n * sum v^2 - (sum v)^2`.
#[derive(Debug, Clone, Default)]
struct PairAcc {
    per_factor: BTreeMap<usize, (f64, f64, u64)>,
    truth: RunningStats,
}

impl PairAcc {
    fn push(&mut self, o: &EffectObservation, truth: Option<&[f64]>) {
        let e = self.per_factor.entry(o.factor).or_default();
        e.0 += o.delta;
        e.1 += o.delta * o.delta;
        e.2 += 1;
        if let Some(t) = truth {
            let d = o.delta - t[o.factor];
            self.truth.push(d * d);
        }
    }

    fn finish(&self) -> (u64, Option<f64>) {
        let mut sum = 0.0;
        let mut pairs = 0u64;
        for &(s, s2, n) in self.per_factor.values() {
            if n >= 2 {
                sum += (n as f64 * s2 - s * s).max(0.0);
                pairs += n * (n - 1) / 2;
            }
        }
        (pairs, (pairs > 0).then(|| sum / pairs as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// grouped by column (depth)
    Vertical,
    /// grouped by row
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseCell {
    pub axis: Axis,
    pub size: usize,
    /// Depth (vertical) or row (horizontal), 1-based.
    pub index: usize,
    pub observations: u64,
    pub pairs: u64,
    /// Mean of `(delta_ij - delta_uv)^2` over same-factor pairs; absent below two.
    pub mean: Option<f64>,
    /// Mean of `(delta - truth)^2` when ground truth is supplied.
    pub truth_mse: Option<f64>,
}

/// Mean squared disagreement among same-factor observations, grouped by square
/// size and column (vertical) or row (horizontal).
pub fn pairwise_error_matrix(
    observations: &[EffectObservation],
    ground_truth: Option<&[f64]>,
) -> Vec<PairwiseCell> {
    let mut groups: BTreeMap<(Axis, usize, usize), PairAcc> = BTreeMap::new();
    for o in observations {
        groups.entry((Axis::Vertical, o.size, o.depth)).or_default().push(o, ground_truth);
        groups.entry((Axis::Horizontal, o.size, o.row)).or_default().push(o, ground_truth);
    }
    groups
        .into_iter()
        .map(|((axis, size, index), acc)| {
            let (pairs, mean) = acc.finish();
            PairwiseCell {
                axis,
                size,
                index,
                observations: acc.per_factor.values().map(|e| e.2).sum(),
                pairs,
                mean,
                truth_mse: ground_truth.map(|_| acc.truth.mean),
            }
        })
        .collect()
}

/// Factor-by-depth grid of per-cell errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrid {
    pub factors: Vec<usize>,
    pub depths: usize,
    /// Factor-major, `factors.len() * depths` cells.
    pub values: Vec<Option<f64>>,
}

impl ErrorGrid {
    pub fn from_rows(factors: Vec<usize>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let depths = rows.first().map_or(0, Vec::len);
        if rows.len() != factors.len() || rows.iter().any(|r| r.len() != depths) {
            return Err(EffectsError::Shape("ragged rows".into()));
        }
        Ok(Self { factors, depths, values: rows.into_iter().flatten().map(Some).collect() })
    }

    pub fn get(&self, row: usize, depth: usize) -> Option<f64> {
        self.values[row * self.depths + depth]
    }

    /// Reorders the depth columns: column `j` of the result is column `perm[j]`.
    pub fn permute_depths(&self, perm: &[usize]) -> Self {
        let values = (0..self.factors.len())
            .flat_map(|r| perm.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect();
        Self { factors: self.factors.clone(), depths: self.depths, values }
    }

    pub fn grand_mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.values.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| ordered_mean(v))
    }

    /// CSV with header `factor,d1,..,dK`; empty cells are missing.
    pub fn read_csv<R: std::io::Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let depths = rdr.headers()?.len().saturating_sub(1);
        let mut factors = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != depths + 1 {
                return Err(EffectsError::Shape(format!("row with {} cells", rec.len())));
            }
            factors.push(rec[0].parse().map_err(|_| EffectsError::BadValue(rec[0].to_string()))?);
            for cell in rec.iter().skip(1) {
                values.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse().map_err(|_| EffectsError::BadValue(cell.to_string()))?)
                });
            }
        }
        Ok(Self { factors, depths, values })
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["factor".to_string()];
        header.extend((1..=self.depths).map(|d| format!("d{d}")));
        w.write_record(&header)?;
        for (r, f) in self.factors.iter().enumerate() {
            let mut rec = vec![f.to_string()];
            rec.extend((0..self.depths).map(|d| self.get(r, d).map_or(String::new(), |v| v.to_string())));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Per-(factor, depth) mean pairwise squared disagreement among observations
/// from squares of `size`, over the listed factors.
pub fn error_grid(observations: &[EffectObservation], size: usize, factors: &[usize]) -> ErrorGrid {
    let mut acc: BTreeMap<(usize, usize), PairAcc> = BTreeMap::new();
    for o in observations.iter().filter(|o| o.size == size) {
        acc.entry((o.factor, o.depth)).or_default().push(o, None);
    }
    let values = factors
        .iter()
        .flat_map(|&f| (1..=size).map(move |d| (f, d)))
        .map(|key| acc.get(&key).and_then(|a| a.finish().1))
        .collect();
    ErrorGrid { factors: factors.to_vec(), depths: size, values }
}

/// Mean computed over sorted values, so the result does not depend on the
/// order the values arrive in.
fn ordered_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub grand_mean: f64,
    /// `(factor, eps(a))`, summing to zero.
    pub eps_factor: Vec<(usize, f64)>,
    /// `eps_d` for depths `1..=K`, summing to zero.
    pub eps_depth: Vec<f64>,
    /// Common component against the baseline, floored at zero.
    pub eps_square: f64,
    /// Unfloored difference of grand means; 0 without a baseline.
    pub eps_square_raw: f64,
    pub baseline_mean: Option<f64>,
    pub residual_norm: f64,
    pub max_abs_residual: f64,
}

/// Additive two-way fit by row and column means. `eps_square` is the grand
/// mean of `grid` minus that of `baseline` (0 when no baseline is given).
pub fn decompose(grid: &ErrorGrid, baseline: Option<&ErrorGrid>) -> Result<ErrorDecomposition> {
    let (nf, nd) = (grid.factors.len(), grid.depths);
    if nf == 0 || nd == 0 || grid.values.len() != nf * nd {
        return Err(EffectsError::Shape(format!("{nf} factors x {nd} depths")));
    }
    for r in 0..nf {
        for d in 0..nd {
            if grid.get(r, d).is_none() {
                return Err(EffectsError::Unbalanced { factor: grid.factors[r], depth: d + 1 });
            }
        }
    }
    let at = |r: usize, d: usize| grid.get(r, d).unwrap();
    let grand = ordered_mean((0..nf).flat_map(|r| (0..nd).map(move |d| (r, d))).map(|(r, d)| at(r, d)).collect());
    let row_eff: Vec<f64> = (0..nf).map(|r| ordered_mean((0..nd).map(|d| at(r, d)).collect()) - grand).collect();
    let col_eff: Vec<f64> = (0..nd).map(|d| ordered_mean((0..nf).map(|r| at(r, d)).collect()) - grand).collect();
    let mut sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for (r, re) in row_eff.iter().enumerate() {
        for (d, ce) in col_eff.iter().enumerate() {
            let res = at(r, d) - grand - re - ce;
            sq += res * res;
            max_abs = max_abs.max(res.abs());
        }
    }
    let baseline_mean = match baseline {
        Some(b) => Some(b.grand_mean().ok_or_else(|| EffectsError::Shape("empty baseline".into()))?),
        None => None,
    };
    let raw = baseline_mean.map_or(0.0, |b| grand - b);
    Ok(ErrorDecomposition {
        grand_mean: grand,
        eps_factor: grid.factors.iter().copied().zip(row_eff).collect(),
        eps_depth: col_eff,
        eps_square: raw.max(0.0),
        eps_square_raw: raw,
        baseline_mean,
        residual_norm: sq.sqrt(),
        max_abs_residual: max_abs,
    })
}
