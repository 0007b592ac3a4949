//! Observed permutation chains, their inverted index, and Latin squares built
//! from rotation orbits.
//!
//! A chain starts at a reference profile and toggles one new factor per step,
//! visiting only profiles present in the sample. A square of size `k` anchored
//! at reference `x` is a `k`-sequence `s` of distinct factors together with its
//! `k` cyclic rotations; row `r` walks the rotation starting at `s[r]`, so cell
//! `(r, c)` holds factor `s[(r + c) mod k]` and the profile `x` toggled on the
//! cyclic window `s[r..=r+c]`. Every factor appears once per row and column.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorics::{self, PartialPermutation, PermCode};
use crate::sample::{subpop_index, Profile, Sample, SubpopIndex, UnitId};

pub const DEFAULT_ROW_CAP: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum EnumerationError {
    #[error("row cap exceeded: {rows} chains, cap {cap}")]
    RowCap { rows: u64, cap: usize },
    #[error("sample has no singleton differences")]
    NoDiffs,
}

pub type Result<T> = std::result::Result<T, EnumerationError>;

/// A maximal run of singleton differences from a reference profile.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chain {
    pub reference: Profile,
    pub reference_id: UnitId,
    pub factors: Vec<u8>,
}

impl Chain {
    /// `(factor, profile after the step)` pairs.
    pub fn steps(&self) -> Vec<(usize, Profile)> {
        let mut p = self.reference;
        self.factors
            .iter()
            .map(|&f| {
                p = p.toggle(f as usize);
                (f as usize, p)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn code(&self, m: usize) -> PermCode {
        prefix_code(&self.factors, m)
    }
}

fn prefix_code(factors: &[u8], m: usize) -> PermCode {
    let items = factors.iter().map(|&f| f as usize).collect();
    combinatorics::rank(&PartialPermutation::new(items, m).expect("chain factors are distinct"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapPolicy {
    Error,
    /// Keep the first `row_cap` rows in (factor sequence, reference) order.
    Truncate,
}

#[derive(Debug, Clone, Copy)]
pub struct EnumConfig {
    pub max_len: Option<usize>,
    pub row_cap: usize,
    pub on_cap: CapPolicy,
}

impl Default for EnumConfig {
    fn default() -> Self {
        Self { max_len: None, row_cap: DEFAULT_ROW_CAP, on_cap: CapPolicy::Error }
    }
}

/// Rows of observed chains and the inverted index `PermCode -> rows`.
#[derive(Debug, Clone)]
pub struct PermMatrix {
    m: usize,
    rows: Vec<Chain>,
    index: HashMap<PermCode, Vec<usize>>,
    total_rows: u64,
    truncated: bool,
}

impl PermMatrix {
    pub fn from_rows(m: usize, rows: Vec<Chain>) -> Self {
        let mut index: HashMap<PermCode, Vec<usize>> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            index.entry(row.code(m)).or_default().push(i);
        }
        let total_rows = rows.len() as u64;
        Self { m, rows, index, total_rows, truncated: false }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rows(&self) -> &[Chain] {
        &self.rows
    }

    pub fn rows_with(&self, code: PermCode) -> &[usize] {
        self.index.get(&code).map_or(&[], Vec::as_slice)
    }

    pub fn total_rows(&self) -> u64 {
        self.total_rows
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Number of maximal chains per reference, by memoized suffix counting over
/// the present vertices.
fn count_rows(idx: &SubpopIndex, present: &[bool], max_len: usize) -> u64 {
    let m = idx.m();
    idx.profiles()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&x| {
            let mut memo: HashMap<u32, u64> = HashMap::new();
            fn go(
                x: u32,
                v: u32,
                m: usize,
                max_len: usize,
                present: &[bool],
                memo: &mut HashMap<u32, u64>,
            ) -> u64 {
                if let Some(&c) = memo.get(&v) {
                    return c;
                }
                let moved = x ^ v;
                let mut total = 0u64;
                if (moved.count_ones() as usize) < max_len {
                    for f in 0..m {
                        let w = v ^ 1 << f;
                        if moved >> f & 1 == 0 && present[w as usize] {
                            total = total.saturating_add(go(x, w, m, max_len, present, memo));
                        }
                    }
                }
                let c = total.max(1);
                memo.insert(v, c);
                c
            }
            let c = go(x.0, x.0, m, max_len, present, &mut memo);
            // an isolated reference contributes no row
            let isolated = (0..m).all(|f| !present[(x.0 ^ 1 << f) as usize]);
            if isolated || max_len == 0 {
                0
            } else {
                c
            }
        })
        .reduce(|| 0, u64::saturating_add)
}

/// Enumerates every maximal chain from every present reference profile.
/// Rows come out in lexicographic order of their factor sequence, then by
/// reference, which is PermCode order within each length class.
pub fn build_perm_matrix(s: &Sample, cfg: &EnumConfig) -> Result<PermMatrix> {
    let idx = subpop_index(s);
    build_perm_matrix_indexed(&idx, cfg)
}

pub fn build_perm_matrix_indexed(idx: &SubpopIndex, cfg: &EnumConfig) -> Result<PermMatrix> {
    let m = idx.m();
    let present = idx.presence();
    let max_len = cfg.max_len.unwrap_or(m).min(m);
    let total = count_rows(idx, &present, max_len);
    if total == 0 {
        return Err(EnumerationError::NoDiffs);
    }
    if total > cfg.row_cap as u64 && cfg.on_cap == CapPolicy::Error {
        return Err(EnumerationError::RowCap { rows: total, cap: cfg.row_cap });
    }
    struct Walk<'a> {
        m: usize,
        max_len: usize,
        cap: usize,
        present: &'a [bool],
        idx: &'a SubpopIndex,
        rows: Vec<Chain>,
    }
    impl Walk<'_> {
        fn go(&mut self, prefix: &mut Vec<u8>, moved: u32, active: &[u32]) {
            if self.rows.len() >= self.cap {
                return;
            }
            let can_grow = prefix.len() < self.max_len;
            let extends = |x: u32, f: usize| {
                can_grow && moved >> f & 1 == 0 && self.present[(x ^ moved ^ 1 << f) as usize]
            };
            if !prefix.is_empty() {
                for &x in active {
                    if (0..self.m).all(|f| !extends(x, f)) {
                        if self.rows.len() >= self.cap {
                            return;
                        }
                        self.rows.push(Chain {
                            reference: Profile(x),
                            reference_id: self.idx.members(Profile(x))[0],
                            factors: prefix.clone(),
                        });
                    }
                }
            }
            for f in 0..self.m {
                let next: Vec<u32> = active.iter().copied().filter(|&x| extends(x, f)).collect();
                if !next.is_empty() {
                    prefix.push(f as u8);
                    self.go(prefix, moved | 1 << f, &next);
                    prefix.pop();
                }
            }
        }
    }
    let refs: Vec<u32> = idx.profiles().map(|p| p.0).collect();
    let mut walk = Walk { m, max_len, cap: cfg.row_cap, present: &present, idx, rows: Vec::new() };
    walk.go(&mut Vec::new(), 0, &refs);
    let truncated = total > walk.rows.len() as u64;
    if truncated {
        warn!("perm matrix truncated to {} of {} rows", walk.rows.len(), total);
    }
    let mut pm = PermMatrix::from_rows(m, walk.rows);
    pm.total_rows = total;
    pm.truncated = truncated;
    Ok(pm)
}

/// One cell of a square.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub factor: usize,
    pub profile: Profile,
    pub unit: Option<UnitId>,
}

/// A `size x size` cyclic Latin square anchored at a reference profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Square {
    pub size: usize,
    pub m: usize,
    pub reference: Profile,
    pub reference_id: Option<UnitId>,
    /// Canonical rotation (smallest factor first), ranked as a partial
    /// permutation of the `m` factors.
    pub base: Vec<usize>,
    pub code: u64,
    /// Which rotations are realized as chains in the sample.
    pub rows_present: Vec<bool>,
    /// Row-major, `size * size` cells.
    pub cells: Vec<Cell>,
}

impl Square {
    pub fn new(m: usize, reference: Profile, base: Vec<usize>, rows_present: Vec<bool>) -> Self {
        let k = base.len();
        let mut cells = Vec::with_capacity(k * k);
        for r in 0..k {
            let mut p = reference;
            for c in 0..k {
                let f = base[(r + c) % k];
                p = p.toggle(f);
                cells.push(Cell { factor: f, profile: p, unit: None });
            }
        }
        let code = combinatorics::rank(&PartialPermutation::new(base.clone(), m).expect("distinct"))
            .value;
        Self { size: k, m, reference, reference_id: None, base, code, rows_present, cells }
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[row * self.size + col]
    }

    pub fn is_complete(&self) -> bool {
        self.rows_present.iter().all(|&b| b)
    }

    pub fn key(&self) -> SquareKey {
        SquareKey { size: self.size, code: self.code, reference: self.reference }
    }

    /// Each factor exactly once per row and once per column.
    pub fn is_latin(&self) -> bool {
        let k = self.size;
        let mut base_sorted = self.base.clone();
        base_sorted.sort_unstable();
        let check = |mut v: Vec<usize>| {
            v.sort_unstable();
            v == base_sorted
        };
        (0..k).all(|r| check((0..k).map(|c| self.cell(r, c).factor).collect()))
            && (0..k).all(|c| check((0..k).map(|r| self.cell(r, c).factor).collect()))
    }

    pub fn assigned(&self) -> usize {
        self.cells.iter().filter(|c| c.unit.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SquareKey {
    pub size: usize,
    pub code: u64,
    pub reference: Profile,
}

/// Whether squares are deduplicated by rotation orbit alone or kept per
/// reference profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    Orbit,
    PerReference,
}

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    pub min_size: usize,
    pub scope: Scope,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self { min_size: 2, scope: Scope::Orbit }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquareInventory {
    pub m: usize,
    pub rows: u64,
    pub total_rows: u64,
    pub truncated: bool,
    /// Complete squares by size (index = size).
    pub complete_by_size: Vec<u64>,
    /// Orbits with at least two realized rotations, complete ones included,
    /// by size. Counting complete orbits here keeps the count monotone in `n`.
    pub partial_by_size: Vec<u64>,
    /// Distinct full permutations observed as chains.
    pub observed_full: u64,
    /// Observed full permutations by number of fixed points `d`.
    pub by_fixed_points: Vec<u64>,
    /// Distinct factor sequences of each length observed as chain prefixes.
    pub prefixes_by_length: Vec<u64>,
}

impl SquareInventory {
    pub fn derangements(&self) -> u64 {
        self.by_fixed_points.first().copied().unwrap_or(0)
    }

    /// Every count within its combinatorial limit.
    pub fn within_limits(&self) -> bool {
        let m = self.m;
        let full_ok = combinatorics::count_permutations(m).map_or(true, |c| self.observed_full <= c);
        let fixed_ok = self.by_fixed_points.iter().enumerate().all(|(d, &c)| {
            combinatorics::count_partial(m, d).map_or(true, |lim| c <= lim)
        });
        let prefix_ok = self.prefixes_by_length.iter().enumerate().all(|(k, &c)| {
            combinatorics::count_arrangements(m, m - k).map_or(true, |lim| c <= lim)
        });
        // orbits of k-sequences: C(m,k) (k-1)!
        let orbit_ok = (1..=m).all(|k| {
            let lim = combinatorics::count_arrangements(m, m - k).map_or(u64::MAX, |a| a / k as u64);
            self.complete_by_size[k] <= lim && self.partial_by_size[k] <= lim
        });
        full_ok && fixed_ok && prefix_ok && orbit_ok
    }
}

fn canonical_rotation(seq: &[u8]) -> (usize, Vec<u8>) {
    let r = seq.iter().enumerate().min_by_key(|(_, &f)| f).map_or(0, |(i, _)| i);
    let mut v = seq.to_vec();
    v.rotate_left(r);
    (r, v)
}

/// Groups realized chain prefixes into rotation orbits. Every orbit with at
/// least two realized rotations at some reference is emitted once, anchored at
/// the reference where it is complete (lowest such profile), or else where
/// the most rotations are realized.
pub fn assemble_squares(pm: &PermMatrix, opts: &AssembleOptions) -> (Vec<Square>, SquareInventory) {
    let m = pm.m;
    let mut realized: HashSet<(u32, Vec<u8>)> = HashSet::new();
    let mut full: HashSet<Vec<u8>> = HashSet::new();
    let mut prefixes: Vec<HashSet<Vec<u8>>> = vec![HashSet::new(); m + 1];
    for row in &pm.rows {
        for k in 1..=row.factors.len() {
            let pre = &row.factors[..k];
            if realized.insert((row.reference.0, pre.to_vec())) {
                prefixes[k].insert(pre.to_vec());
            }
        }
        if row.factors.len() == m {
            full.insert(row.factors.clone());
        }
    }
    let mut by_fixed_points = vec![0u64; m + 1];
    for p in &full {
        let d = p.iter().enumerate().filter(|(i, &x)| *i == x as usize).count();
        by_fixed_points[d] += 1;
    }

    // (size, canonical sequence, reference) -> present rotations
    let mut orbits: BTreeMap<(usize, Vec<u8>), BTreeMap<u32, Vec<bool>>> = BTreeMap::new();
    for (x, seq) in &realized {
        let k = seq.len();
        if k < opts.min_size.max(1) {
            continue;
        }
        let (r, canon) = canonical_rotation(seq);
        let slot = orbits.entry((k, canon)).or_default().entry(*x).or_insert_with(|| vec![false; k]);
        // canonical rotated left by r gives seq, i.e. seq is row r
        slot[(k - r) % k] = true;
    }

    let mut complete_by_size = vec![0u64; m + 1];
    let mut partial_by_size = vec![0u64; m + 1];
    let mut squares = Vec::new();
    for ((k, canon), per_ref) in orbits {
        let base: Vec<usize> = canon.iter().map(|&f| f as usize).collect();
        let score = |rows: &Vec<bool>| rows.iter().filter(|&&b| b).count();
        match opts.scope {
            Scope::Orbit => {
                // BTreeMap iteration is by ascending reference, max_by_key keeps the last max
                let best = per_ref
                    .iter()
                    .rev()
                    .max_by_key(|(_, rows)| score(rows))
                    .map(|(x, rows)| (*x, rows.clone()));
                if let Some((x, rows)) = best {
                    let present = score(&rows);
                    if present == k {
                        complete_by_size[k] += 1;
                    }
                    if present >= 2 || (k == 1 && present == 1) {
                        partial_by_size[k] += 1;
                        squares.push(Square::new(m, Profile(x), base.clone(), rows));
                    }
                }
            }
            Scope::PerReference => {
                let mut any_complete = false;
                let mut any_partial = false;
                for (x, rows) in per_ref {
                    let present = score(&rows);
                    if present == k {
                        any_complete = true;
                    }
                    if present >= 2 || (k == 1 && present == 1) {
                        any_partial = true;
                        squares.push(Square::new(m, Profile(x), base.clone(), rows));
                    }
                }
                complete_by_size[k] += any_complete as u64;
                partial_by_size[k] += any_partial as u64;
            }
        }
    }
    let inv = SquareInventory {
        m,
        rows: pm.rows.len() as u64,
        total_rows: pm.total_rows,
        truncated: pm.truncated,
        complete_by_size,
        partial_by_size,
        observed_full: full.len() as u64,
        by_fixed_points,
        prefixes_by_length: prefixes.iter().map(|s| s.len() as u64).collect(),
    };
    (squares, inv)
}

/// Builds the matrix and assembles squares in one go.
pub fn enumerate(
    s: &Sample,
    cfg: &EnumConfig,
    opts: &AssembleOptions,
) -> Result<(Vec<Square>, SquareInventory)> {
    let pm = build_perm_matrix(s, cfg)?;
    Ok(assemble_squares(&pm, opts))
}

/// Assigns distinct unit ids to cells, drawing each profile's bucket without
/// replacement within the square. The reference unit is drawn first from the
/// reference bucket. Exhausted buckets leave the cell absent.
pub fn assign_members(sq: &Square, idx: &SubpopIndex, seed: u64) -> Square {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: HashMap<Profile, Vec<UnitId>> = HashMap::new();
    let mut draw = |p: Profile, rng: &mut ChaCha8Rng| -> Option<UnitId> {
        let pool = pools.entry(p).or_insert_with(|| {
            let mut ids = idx.members(p).to_vec();
            ids.shuffle(rng);
            ids
        });
        pool.pop()
    };
    let mut out = sq.clone();
    out.reference_id = sq.reference_id.or_else(|| draw(sq.reference, &mut rng));
    for cell in &mut out.cells {
        cell.unit = draw(cell.profile, &mut rng);
    }
    out
}

/// Limits for the direct square search.
#[derive(Debug, Clone, Copy)]
pub struct SquareSearch {
    pub min_size: usize,
    pub max_size: usize,
    /// Stop a reference after this many squares.
    pub per_reference: usize,
    /// DFS nodes explored per reference before giving up on it.
    pub node_budget: usize,
    pub scope: Scope,
}

impl SquareSearch {
    pub fn sizes(min_size: usize, max_size: usize) -> Self {
        Self { min_size, max_size, per_reference: usize::MAX, node_budget: usize::MAX, scope: Scope::Orbit }
    }
}

/// Prefix masks of a sequence: `masks[j]` toggles `seq[..j]`.
fn window(masks: &[u32], k: usize, start: usize, len: usize) -> u32 {
    if start + len <= k {
        masks[start + len] ^ masks[start]
    } else {
        (masks[k] ^ masks[start]) ^ masks[start + len - k]
    }
}

/// Depth-first search for complete cyclic squares from one reference.
/// Sequences are generated with their smallest factor first (one per orbit);
/// each extension must keep every non-wrapping window present, and a length
/// in range closes a square when the wrapping windows are present as well.
struct SquareDfs<'a, F: Fn(u32) -> bool> {
    x: u32,
    present: &'a F,
    min_size: usize,
    max_size: usize,
    limit: usize,
    budget: usize,
    nodes: usize,
    order: Vec<usize>,
    found: Vec<Vec<usize>>,
}

impl<F: Fn(u32) -> bool> SquareDfs<'_, F> {
    fn run(&mut self) {
        let mut seq = Vec::with_capacity(self.max_size);
        let mut masks = vec![0u32];
        for i in 0..self.order.len() {
            let f0 = self.order[i];
            self.extend(&mut seq, &mut masks, f0, f0);
            if self.done() {
                return;
            }
        }
    }

    fn done(&self) -> bool {
        self.found.len() >= self.limit || self.nodes >= self.budget
    }

    fn extend(&mut self, seq: &mut Vec<usize>, masks: &mut Vec<u32>, f: usize, first: usize) {
        if self.done() {
            return;
        }
        self.nodes += 1;
        let j = seq.len();
        let mask = masks[j] | 1 << f;
        // windows ending at the new element
        for i in 0..=j {
            if !(self.present)(self.x ^ mask ^ masks[i]) {
                return;
            }
        }
        seq.push(f);
        masks.push(mask);
        let k = j + 1;
        if k >= self.min_size && self.closes(masks, k) {
            self.found.push(seq.clone());
        }
        if k < self.max_size {
            for idx in 0..self.order.len() {
                let g = self.order[idx];
                if g > first && mask >> g & 1 == 0 {
                    self.extend(seq, masks, g, first);
                    if self.done() {
                        break;
                    }
                }
            }
        }
        seq.pop();
        masks.pop();
    }

    fn closes(&self, masks: &[u32], k: usize) -> bool {
        (1..k).all(|start| ((k - start + 1)..k).all(|len| (self.present)(self.x ^ window(masks, k, start, len))))
    }
}

fn search_reference<F: Fn(u32) -> bool>(
    m: usize,
    x: u32,
    present: &F,
    cfg: &SquareSearch,
    order: Vec<usize>,
) -> Vec<Vec<usize>> {
    let mut dfs = SquareDfs {
        x,
        present,
        min_size: cfg.min_size.max(1),
        max_size: cfg.max_size.min(m),
        limit: cfg.per_reference,
        budget: cfg.node_budget,
        nodes: 0,
        order,
        found: Vec::new(),
    };
    dfs.run();
    dfs.found
}

/// Complete squares found by direct search over present profiles, without
/// materializing chains. Agrees with the complete squares of
/// [`assemble_squares`] when budgets are unlimited.
pub fn find_squares(idx: &SubpopIndex, cfg: &SquareSearch) -> Vec<Square> {
    let m = idx.m();
    let present = idx.presence();
    let is_present = |p: u32| present[p as usize];
    let refs: Vec<Profile> = idx.profiles().collect();
    let per_ref: Vec<(Profile, Vec<Vec<usize>>)> = refs
        .par_iter()
        .map(|&x| (x, search_reference(m, x.0, &is_present, cfg, (0..m).collect())))
        .collect();
    let mut seen: HashSet<(usize, Vec<usize>)> = HashSet::new();
    let mut out = Vec::new();
    for (x, seqs) in per_ref {
        for seq in seqs {
            if cfg.scope == Scope::Orbit && !seen.insert((seq.len(), seq.clone())) {
                continue;
            }
            let k = seq.len();
            let mut sq = Square::new(m, x, seq, vec![true; k]);
            sq.reference_id = idx.members(x).first().copied();
            out.push(sq);
        }
    }
    out.sort_by_key(|s| (s.size, s.code, s.reference));
    out
}

/// Whether any complete square of exactly `size` exists among the present
/// profiles.
pub fn has_complete_square(present: &[bool], m: usize, size: usize) -> bool {
    let is_present = |p: u32| present[p as usize];
    let cfg = SquareSearch {
        min_size: size,
        max_size: size,
        per_reference: 1,
        node_budget: usize::MAX,
        scope: Scope::Orbit,
    };
    (0..present.len() as u32)
        .into_par_iter()
        .filter(|&x| present[x as usize])
        .any(|x| !search_reference(m, x, &is_present, &cfg, (0..m).collect()).is_empty())
}

/// Smallest prefix of `profiles` (in insertion order) that contains a complete
/// square of `size`. Existence is monotone in the prefix, so this bisects.
pub fn first_complete_square(profiles: &[Profile], m: usize, size: usize) -> Option<usize> {
    let present_upto = |n: usize| {
        let mut present = vec![false; 1 << m];
        for p in &profiles[..n] {
            present[p.0 as usize] = true;
        }
        present
    };
    if !has_complete_square(&present_upto(profiles.len()), m, size) {
        return None;
    }
    let (mut lo, mut hi) = (0usize, profiles.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_complete_square(&present_upto(mid), m, size) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

#[derive(Debug, Clone, Copy)]
pub struct CoverConfig {
    pub min_size: usize,
    pub max_size: usize,
    pub node_budget: usize,
    pub max_squares: usize,
}

impl Default for CoverConfig {
    fn default() -> Self {
        Self { min_size: 2, max_size: usize::MAX, node_budget: 20_000, max_squares: usize::MAX }
    }
}

/// Draws squares from the sample as if sampling without replacement across
/// squares: units are visited in seeded random order, each still-unused unit
/// serves as a reference, and the largest complete square over profiles that
/// still have unused members is taken and filled from the shared pool.
pub fn square_cover(s: &Sample, cfg: &CoverConfig, seed: u64) -> Vec<Square> {
    let m = s.m();
    let idx = subpop_index(s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: HashMap<Profile, Vec<UnitId>> = HashMap::new();
    for (p, ids) in idx.iter() {
        let mut ids = ids.to_vec();
        ids.shuffle(&mut rng);
        pool.insert(p, ids);
    }
    let mut remaining = vec![0u32; 1 << m];
    for (p, ids) in &pool {
        remaining[p.0 as usize] = ids.len() as u32;
    }
    let mut order: Vec<UnitId> = s.units().iter().map(|u| u.id).collect();
    order.shuffle(&mut rng);
    let mut used: HashSet<UnitId> = HashSet::new();
    let mut squares = Vec::new();
    let search = SquareSearch {
        min_size: cfg.min_size,
        max_size: cfg.max_size.min(m),
        per_reference: usize::MAX,
        node_budget: cfg.node_budget,
        scope: Scope::PerReference,
    };
    for id in order {
        if squares.len() >= cfg.max_squares {
            break;
        }
        if used.contains(&id) {
            continue;
        }
        let x = s.unit(id).expect("unit").profile;
        // the reference itself is held out of the pool while searching
        remaining[x.0 as usize] -= 1;
        let is_present = |p: u32| remaining[p as usize] > 0;
        let mut factor_order: Vec<usize> = (0..m).collect();
        factor_order.shuffle(&mut rng);
        let found = search_reference(m, x.0, &is_present, &search, factor_order);
        let Some(best) = found.into_iter().max_by_key(Vec::len) else {
            remaining[x.0 as usize] += 1;
            continue;
        };
        let bucket = pool.get_mut(&x).expect("reference bucket");
        bucket.retain(|&u| u != id);
        used.insert(id);
        let k = best.len();
        let mut base = best;
        let r = base.iter().enumerate().min_by_key(|(_, &f)| f).map_or(0, |(i, _)| i);
        base.rotate_left(r);
        let mut sq = Square::new(m, x, base, vec![true; k]);
        sq.reference_id = Some(id);
        for cell in &mut sq.cells {
            if let Some(u) = pool.get_mut(&cell.profile).and_then(Vec::pop) {
                remaining[cell.profile.0 as usize] -= 1;
                used.insert(u);
                cell.unit = Some(u);
            }
        }
        squares.push(sq);
    }
    squares
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_of(m: usize, ps: &[u32]) -> Sample {
        let ps: Vec<Profile> = ps.iter().map(|&p| Profile(p)).collect();
        Sample::from_profiles(m, &ps, None).unwrap()
    }

    fn cube(m: usize) -> Sample {
        sample_of(m, &(0..1u32 << m).collect::<Vec<_>>())
    }

    #[test]
    fn single_edge_matrix() {
        let pm = build_perm_matrix(&sample_of(3, &[0b000, 0b100]), &EnumConfig::default()).unwrap();
        // one row per reference, both of length 1 on factor 2
        assert_eq!(pm.rows().len(), 2);
        assert!(pm.rows().iter().all(|r| r.factors == vec![2]));
        assert!(matches!(
            build_perm_matrix(&sample_of(3, &[0, 0b011]), &EnumConfig::default()),
            Err(EnumerationError::NoDiffs)
        ));
    }

    #[test]
    fn full_cube_matrix() {
        let pm = build_perm_matrix(&cube(3), &EnumConfig::default()).unwrap();
        assert_eq!(pm.rows().len(), 8 * 6);
        assert_eq!(pm.total_rows(), 48);
        let code = PartialPermutation::new(vec![1, 2, 0], 3).unwrap().rank();
        assert_eq!(pm.rows_with(code).len(), 8);
    }

    #[test]
    fn missing_top_vertex() {
        let s = sample_of(3, &(0..7).collect::<Vec<_>>());
        let pm = build_perm_matrix(&s, &EnumConfig::default()).unwrap();
        for row in pm.rows() {
            assert!(row.steps().iter().all(|(_, p)| p.0 != 7));
            if row.reference.0 == 0 {
                assert!(row.len() < 3);
            }
        }
        assert_eq!(pm.rows().iter().map(Chain::len).max(), Some(3));
    }

    #[test]
    fn row_cap() {
        let cfg = EnumConfig { row_cap: 10, ..Default::default() };
        assert!(matches!(build_perm_matrix(&cube(3), &cfg), Err(EnumerationError::RowCap { .. })));
        let cfg = EnumConfig { row_cap: 10, on_cap: CapPolicy::Truncate, ..Default::default() };
        let pm = build_perm_matrix(&cube(3), &cfg).unwrap();
        assert_eq!(pm.rows().len(), 10);
        assert!(pm.truncated());
        // lowest sequences first: (0,1,2) from all 8 references, then (0,2,1)
        assert!(pm.rows()[..8].iter().all(|r| r.factors == vec![0, 1, 2]));
        assert_eq!(pm.rows()[8].factors, vec![0, 2, 1]);
    }

    fn chain(x: u32, f: &[u8]) -> Chain {
        Chain { reference: Profile(x), reference_id: 0, factors: f.to_vec() }
    }

    #[test]
    fn squares_from_rows() {
        let pm = PermMatrix::from_rows(3, vec![chain(0, &[0, 1, 2]), chain(0, &[1, 2, 0]), chain(0, &[2, 0, 1])]);
        let (sq, inv) = assemble_squares(&pm, &AssembleOptions::default());
        assert_eq!(sq.len(), 1);
        assert!(sq[0].is_complete() && sq[0].is_latin());
        assert_eq!(inv.complete_by_size[3], 1);

        let pm = PermMatrix::from_rows(3, vec![chain(0, &[0, 1, 2]), chain(0, &[1, 2, 0])]);
        let (sq, inv) = assemble_squares(&pm, &AssembleOptions::default());
        assert_eq!(sq.len(), 1);
        assert_eq!(sq[0].rows_present.iter().filter(|&&b| b).count(), 2);
        assert_eq!(inv.complete_by_size[3], 0);
        assert_eq!(inv.partial_by_size[3], 1);
    }

    #[test]
    fn cube3_has_two_full_squares() {
        let (sq, inv) = enumerate(&cube(3), &EnumConfig::default(), &AssembleOptions::default()).unwrap();
        assert_eq!(inv.complete_by_size[3], 2);
        assert_eq!(sq.iter().filter(|s| s.size == 3 && s.is_complete()).count(), 2);
        assert!(sq.iter().all(Square::is_latin));
        assert_eq!(inv.observed_full, 6);
        assert_eq!(inv.derangements(), 2);
        assert!(inv.within_limits());
    }

    #[test]
    fn assignment_without_replacement() {
        // m = 2 cube; square (0,1) from 00 ends both rows at 11
        let s = sample_of(2, &[0, 1, 2, 3]);
        let idx = subpop_index(&s);
        let sq = Square::new(2, Profile(0), vec![0, 1], vec![true, true]);
        let a = assign_members(&sq, &idx, 7);
        assert_eq!(a.reference_id, Some(0));
        assert_eq!(a.cell(0, 1).profile, Profile(3));
        assert_eq!(a.cell(1, 1).profile, Profile(3));
        assert_eq!(a.assigned(), 3);
        assert!(a.cell(1, 1).unit.is_none());
        assert_eq!(assign_members(&sq, &idx, 7), a);

        let s = sample_of(2, &[0, 1, 2, 3, 3]);
        let a = assign_members(&sq, &subpop_index(&s), 1);
        assert_eq!(a.assigned(), 4);
        assert_ne!(a.cell(0, 1).unit, a.cell(1, 1).unit);
    }

    #[test]
    fn direct_search_matches_assembly() {
        let s = sample_of(4, &[0, 1, 2, 3, 4, 5, 6, 8, 9, 10, 12, 14, 15]);
        let (sq, _) = enumerate(&s, &EnumConfig::default(), &AssembleOptions { min_size: 2, scope: Scope::PerReference }).unwrap();
        let mut a: Vec<SquareKey> = sq.iter().filter(|s| s.is_complete()).map(Square::key).collect();
        let mut cfg = SquareSearch::sizes(2, 4);
        cfg.scope = Scope::PerReference;
        let mut b: Vec<SquareKey> = find_squares(&subpop_index(&s), &cfg).iter().map(Square::key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn m10_cube_has_full_square() {
        let present = vec![true; 1024];
        assert!(has_complete_square(&present, 10, 10));
        let mut present = vec![true; 1024];
        present[0b1111111111] = false;
        assert!(has_complete_square(&present, 10, 10));
    }

    #[test]
    fn cover_uses_units_once() {
        let s = sample_of(3, &[0, 1, 2, 4, 3, 5, 6, 7, 0, 1, 2, 4]);
        let sq = square_cover(&s, &CoverConfig::default(), 3);
        assert!(!sq.is_empty());
        let mut ids: Vec<UnitId> = sq
            .iter()
            .flat_map(|q| q.cells.iter().filter_map(|c| c.unit).chain(q.reference_id))
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert!(sq.iter().all(Square::is_latin));
        assert_eq!(square_cover(&s, &CoverConfig::default(), 3), sq);
    }
}
