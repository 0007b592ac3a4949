//! Binary-factor samples: CSV ingestion, subpopulation buckets and
//! singleton (Hamming distance 1) differences between profiles.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Profiles are bit-packed into a `u32`; factor `i` is bit `i`.
pub const MAX_FACTORS: usize = 20;

pub type UnitId = u32;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column '{column}': expected 0 or 1, found '{value}'")]
    NonBinary { row: usize, column: String, value: String },
    #[error("row {row}, column '{column}': invalid outcome '{value}'")]
    BadOutcome { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} cells, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("outcome column '{0}' not found in header")]
    MissingOutcome(String),
    #[error("group column '{0}' not found in header")]
    MissingGroup(String),
    #[error("{0} factors exceed the supported maximum of {MAX_FACTORS}")]
    TooManyFactors(usize),
    #[error("sample has no factor columns")]
    NoFactors,
    #[error("invalid sample: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, SampleError>;

/// A factor profile `x in {0,1}^m`, bit `i` holding factor `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Profile(pub u32);

impl Profile {
    pub fn from_bits(bits: &[bool]) -> Self {
        Self(bits.iter().enumerate().fold(0, |acc, (i, &b)| acc | (b as u32) << i))
    }

    pub fn get(self, factor: usize) -> bool {
        self.0 >> factor & 1 == 1
    }

    pub fn set(self, factor: usize, value: bool) -> Self {
        if value {
            Self(self.0 | 1 << factor)
        } else {
            Self(self.0 & !(1 << factor))
        }
    }

    pub fn toggle(self, factor: usize) -> Self {
        Self(self.0 ^ 1 << factor)
    }

    pub fn distance(self, other: Self) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    /// Factor values as `0.0 / 1.0`, in factor order.
    pub fn features(self, m: usize) -> Vec<f64> {
        (0..m).map(|i| if self.get(i) { 1.0 } else { 0.0 }).collect()
    }

    /// `"001"`-style rendering, character `i` is factor `i`.
    pub fn render(self, m: usize) -> String {
        (0..m).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: UnitId,
    pub profile: Profile,
    pub outcome: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    factor_names: Vec<String>,
    units: Vec<Unit>,
}

impl Sample {
    /// Builds a sample, checking id uniqueness and the factor cap.
    pub fn new(factor_names: Vec<String>, units: Vec<Unit>) -> Result<Self> {
        let m = factor_names.len();
        if m > MAX_FACTORS {
            return Err(SampleError::TooManyFactors(m));
        }
        let mut ids: Vec<UnitId> = units.iter().map(|u| u.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SampleError::Invalid("duplicate unit id".into()));
        }
        let mask = (1u32 << m) - 1;
        if units.iter().any(|u| u.profile.0 & !mask != 0) {
            return Err(SampleError::Invalid("profile has bits beyond m".into()));
        }
        Ok(Self { factor_names, units })
    }

    /// Sample from raw profiles and outcomes; ids are positions.
    pub fn from_profiles(m: usize, profiles: &[Profile], outcomes: Option<&[f64]>) -> Result<Self> {
        let names = (0..m).map(|i| format!("x{i}")).collect();
        let units = profiles
            .iter()
            .enumerate()
            .map(|(i, &profile)| Unit {
                id: i as UnitId,
                profile,
                outcome: outcomes.map(|o| o[i]),
                group: None,
            })
            .collect();
        Self::new(names, units)
    }

    pub fn m(&self) -> usize {
        self.factor_names.len()
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn has_outcomes(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.outcome.is_some())
    }

    /// Unit lookup by id. Ids produced by the loaders and generators are
    /// positions, so the fast path is direct indexing.
    pub fn unit(&self, id: UnitId) -> Option<&Unit> {
        match self.units.get(id as usize) {
            Some(u) if u.id == id => Some(u),
            _ => self.units.iter().find(|u| u.id == id),
        }
    }

    pub fn outcome(&self, id: UnitId) -> Option<f64> {
        self.unit(id).and_then(|u| u.outcome)
    }

    /// Keeps the listed units, in the given order.
    pub fn subset(&self, ids: &[UnitId]) -> Self {
        let units = ids.iter().filter_map(|&id| self.unit(id).cloned()).collect();
        Self { factor_names: self.factor_names.clone(), units }
    }

    /// Projects onto the listed factor columns (in the given order).
    pub fn select_factors(&self, keep: &[usize]) -> Result<Self> {
        let names = keep.iter().map(|&i| self.factor_names[i].clone()).collect();
        let units = self
            .units
            .iter()
            .map(|u| {
                let bits: Vec<bool> = keep.iter().map(|&i| u.profile.get(i)).collect();
                Unit { profile: Profile::from_bits(&bits), ..u.clone() }
            })
            .collect();
        Self::new(names, units)
    }

    pub fn without_outcomes(&self) -> Self {
        let units = self.units.iter().map(|u| Unit { outcome: None, ..u.clone() }).collect();
        Self { factor_names: self.factor_names.clone(), units }
    }

    /// Writes the sample as CSV: factor columns, then optional outcome and group.
    pub fn write_csv<W: std::io::Write>(&self, out: W, outcome_name: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let with_y = self.has_outcomes();
        let with_g = self.units.iter().any(|u| u.group.is_some());
        let mut header = self.factor_names.clone();
        if with_y {
            header.push(outcome_name.to_string());
        }
        if with_g {
            header.push("group".to_string());
        }
        w.write_record(&header)?;
        for u in &self.units {
            let mut rec: Vec<String> =
                (0..self.m()).map(|i| if u.profile.get(i) { "1" } else { "0" }.to_string()).collect();
            if with_y {
                rec.push(fmt_outcome(u.outcome.unwrap_or(f64::NAN)));
            }
            if with_g {
                rec.push(u.group.clone().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn fmt_outcome(y: f64) -> String {
    if y == 0.0 || y == 1.0 {
        format!("{}", y as u8)
    } else {
        format!("{y}")
    }
}

/// Column roles for [`load_sample`].
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub outcome: Option<String>,
    pub group: Option<String>,
}

/// Parses a header + comma-separated 0/1 matrix. Every column that is not the
/// outcome or group column is a factor, in header order. Unit ids are the
/// 0-based data row numbers.
pub fn load_sample<R: Read>(source: R, opts: &LoadOptions) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(source);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &Option<String>| name.as_ref().map(|n| header.iter().position(|h| h == n));
    let outcome_col = match find(&opts.outcome) {
        Some(None) => return Err(SampleError::MissingOutcome(opts.outcome.clone().unwrap())),
        Some(Some(i)) => Some(i),
        None => None,
    };
    let group_col = match find(&opts.group) {
        Some(None) => return Err(SampleError::MissingGroup(opts.group.clone().unwrap())),
        Some(Some(i)) => Some(i),
        None => None,
    };
    let factor_cols: Vec<usize> =
        (0..header.len()).filter(|&i| Some(i) != outcome_col && Some(i) != group_col).collect();
    if factor_cols.is_empty() {
        return Err(SampleError::NoFactors);
    }
    if factor_cols.len() > MAX_FACTORS {
        return Err(SampleError::TooManyFactors(factor_cols.len()));
    }
    let mut units = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // 1-based data row, header excluded
        let row = row + 1;
        if rec.len() != header.len() {
            return Err(SampleError::Ragged { row, expected: header.len(), found: rec.len() });
        }
        let mut bits = 0u32;
        for (bit, &col) in factor_cols.iter().enumerate() {
            match &rec[col] {
                "0" => {}
                "1" => bits |= 1 << bit,
                other => {
                    return Err(SampleError::NonBinary {
                        row,
                        column: header[col].clone(),
                        value: other.to_string(),
                    })
                }
            }
        }
        let outcome = match outcome_col {
            Some(col) => {
                let raw = &rec[col];
                match raw.parse::<f64>() {
                    Ok(y) if y.is_finite() => Some(y),
                    _ => {
                        return Err(SampleError::BadOutcome {
                            row,
                            column: header[col].clone(),
                            value: raw.to_string(),
                        })
                    }
                }
            }
            None => None,
        };
        units.push(Unit {
            id: (row - 1) as UnitId,
            profile: Profile(bits),
            outcome,
            group: group_col.map(|c| rec[c].to_string()),
        });
    }
    let names = factor_cols.iter().map(|&c| header[c].clone()).collect();
    Sample::new(names, units)
}

/// Direction of a singleton difference, seen from `from` to `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// factor goes 0 -> 1
    Rising,
    /// factor goes 1 -> 0
    Falling,
}

/// A profile-level singleton difference. `from_id` / `to_id` are the lowest
/// unit ids of each bucket; the full membership lives in [`SubpopIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiffEdge {
    pub from: Profile,
    pub to: Profile,
    pub from_id: UnitId,
    pub to_id: UnitId,
    pub factor: usize,
    pub direction: Direction,
}

impl DiffEdge {
    pub fn reversed(self) -> Self {
        Self {
            from: self.to,
            to: self.from,
            from_id: self.to_id,
            to_id: self.from_id,
            factor: self.factor,
            direction: match self.direction {
                Direction::Rising => Direction::Falling,
                Direction::Falling => Direction::Rising,
            },
        }
    }
}

/// Units bucketed by identical profile.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubpopIndex {
    m: usize,
    buckets: BTreeMap<Profile, Vec<UnitId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpopStats {
    pub m: usize,
    pub n: usize,
    pub buckets: usize,
    pub possible_profiles: u64,
    pub min_bucket: usize,
    pub max_bucket: usize,
    pub mean_bucket: f64,
    pub singletons: usize,
}

impl SubpopIndex {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn members(&self, p: Profile) -> &[UnitId] {
        self.buckets.get(&p).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, p: Profile) -> bool {
        self.buckets.contains_key(&p)
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn profiles(&self) -> impl Iterator<Item = Profile> + '_ {
        self.buckets.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Profile, &[UnitId])> {
        self.buckets.iter().map(|(p, ids)| (*p, ids.as_slice()))
    }

    /// Dense presence table over all `2^m` profiles.
    pub fn presence(&self) -> Vec<bool> {
        let mut present = vec![false; 1usize << self.m];
        for p in self.buckets.keys() {
            present[p.0 as usize] = true;
        }
        present
    }

    pub fn stats(&self) -> SubpopStats {
        let sizes: Vec<usize> = self.buckets.values().map(Vec::len).collect();
        let n: usize = sizes.iter().sum();
        SubpopStats {
            m: self.m,
            n,
            buckets: sizes.len(),
            possible_profiles: 1u64 << self.m,
            min_bucket: sizes.iter().copied().min().unwrap_or(0),
            max_bucket: sizes.iter().copied().max().unwrap_or(0),
            mean_bucket: if sizes.is_empty() { 0.0 } else { n as f64 / sizes.len() as f64 },
            singletons: sizes.iter().filter(|&&s| s == 1).count(),
        }
    }
}

/// Exact partition of unit ids by profile; ids within a bucket are ascending.
pub fn subpop_index(s: &Sample) -> SubpopIndex {
    let mut buckets: BTreeMap<Profile, Vec<UnitId>> = BTreeMap::new();
    for u in s.units() {
        buckets.entry(u.profile).or_default().push(u.id);
    }
    for ids in buckets.values_mut() {
        ids.sort_unstable();
    }
    SubpopIndex { m: s.m(), buckets }
}

/// One edge per pair of present profiles at Hamming distance 1, oriented from
/// the profile with the factor off to the profile with it on.
pub fn singleton_diffs(s: &Sample) -> Vec<DiffEdge> {
    singleton_diffs_indexed(&subpop_index(s))
}

pub fn singleton_diffs_indexed(idx: &SubpopIndex) -> Vec<DiffEdge> {
    let mut edges = Vec::new();
    for (p, ids) in idx.iter() {
        for factor in 0..idx.m {
            if p.get(factor) {
                continue;
            }
            let q = p.toggle(factor);
            if let Some(other) = idx.buckets.get(&q) {
                edges.push(DiffEdge {
                    from: p,
                    to: q,
                    from_id: ids[0],
                    to_id: other[0],
                    factor,
                    direction: Direction::Rising,
                });
            }
        }
    }
    edges
}

/// Both orientations of every singleton difference.
pub fn directed_diffs(s: &Sample) -> Vec<DiffEdge> {
    singleton_diffs(s).into_iter().flat_map(|e| [e, e.reversed()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, outcome: Option<&str>) -> Result<Sample> {
        load_sample(
            text.as_bytes(),
            &LoadOptions { outcome: outcome.map(str::to_string), group: None },
        )
    }

    fn profiles(m: usize, rows: &[&str]) -> Sample {
        let ps: Vec<Profile> = rows
            .iter()
            .map(|r| Profile::from_bits(&r.chars().map(|c| c == '1').collect::<Vec<_>>()))
            .collect();
        Sample::from_profiles(m, &ps, None).unwrap()
    }

    #[test]
    fn loads_bits_and_outcome() {
        let s = parse("a,b,c\n0,0,1\n1,0,1\n1,1,1\n0,0,0\n", None).unwrap();
        assert_eq!((s.m(), s.n()), (3, 4));
        assert_eq!(s.units()[0].profile.render(3), "001");
        assert!(!s.has_outcomes());

        let s = parse("a,y,b\n0,1,1\n1,0.5,0\n", Some("y")).unwrap();
        assert_eq!(s.factor_names(), &["a", "b"]);
        assert_eq!(s.outcome(1), Some(0.5));
    }

    #[test]
    fn rejects_bad_cells() {
        let err = parse("a,b\n0,1\n2,0\n", None).unwrap_err();
        match err {
            SampleError::NonBinary { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "a", "2"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("a,b\n0,\n", None), Err(SampleError::NonBinary { .. })));
        assert!(matches!(parse("a,b\n0,1\n", Some("y")), Err(SampleError::MissingOutcome(_))));
        assert!(matches!(parse("a,y\n0,x\n", Some("y")), Err(SampleError::BadOutcome { .. })));
        assert!(matches!(parse("a,b\n0,1,1\n", None), Err(SampleError::Ragged { .. })));
    }

    #[test]
    fn singleton_edges() {
        let e = singleton_diffs(&profiles(3, &["000", "001"]));
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].factor, 2);
        assert!(singleton_diffs(&profiles(3, &["000", "011"])).is_empty());

        let all: Vec<Profile> = (0..8).map(Profile).collect();
        let cube = Sample::from_profiles(3, &all, None).unwrap();
        assert_eq!(singleton_diffs(&cube).len(), 12);
        let d = directed_diffs(&cube);
        for e in &d {
            assert!(d.contains(&e.reversed()));
            assert_eq!(e.from.distance(e.to), 1);
        }
    }

    #[test]
    fn buckets() {
        let idx = subpop_index(&profiles(3, &["000", "001", "010", "100"]));
        assert_eq!(idx.len(), 4);
        let idx = subpop_index(&profiles(2, &["01", "01", "11"]));
        assert_eq!(idx.members(Profile::from_bits(&[false, true])), &[0, 1]);
        assert_eq!(idx.stats().n, 3);

        let all: Vec<Profile> = (0..1024).map(Profile).collect();
        let cube = Sample::from_profiles(10, &all, None).unwrap();
        assert_eq!(subpop_index(&cube).len(), 1024);
        assert_eq!(singleton_diffs(&cube).len(), 10 * 512);
    }

    #[test]
    fn csv_round_trip() {
        let s = parse("a,b,y\n0,1,1\n1,1,0\n", Some("y")).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, "y").unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap(), Some("y")).unwrap(), s);
    }
}
