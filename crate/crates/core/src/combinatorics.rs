//! Exact counting and ranking of permutations, derangements and partial
//! permutations.
//!
//! Ranks use the lexicographic Lehmer convention: digit `i` counts the unused
//! items smaller than `items[i]`. A full permutation of `m` items weights digit
//! `i` by `(m-1-i)!`. A partial permutation (an ordered sequence of `k = m - d`
//! distinct items, `d` items held fixed) weights digit `i` by the falling
//! factorial `(m-1-i)! / d!`, i.e. the number of ways to complete the
//! remaining `k-1-i` positions from `m-1-i` items. Both are computed in linear
//! time with a bitmask of used items.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest `m` for which counts and ranks fit in a `u64`.
pub const MAX_M: usize = 20;

/// Largest `m` accepted by the blocked (hierarchical) index.
pub const MAX_HIERARCHICAL_M: usize = 64;

/// Block width of the hierarchical index.
pub const BLOCK: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CombinatoricsError {
    #[error("count overflows u64 for m = {m} (max {MAX_M})")]
    Overflow { m: usize },
    #[error("fixed-point count d = {d} exceeds m = {m}")]
    Domain { m: usize, d: usize },
    #[error("invalid permutation: {0}")]
    Invalid(String),
    #[error("code {value} out of range for m = {m}, d = {d} (count {count})")]
    OutOfRange { value: u64, m: usize, d: usize, count: u64 },
}

pub type Result<T> = std::result::Result<T, CombinatoricsError>;

fn guard(m: usize) -> Result<()> {
    if m > MAX_M {
        Err(CombinatoricsError::Overflow { m })
    } else {
        Ok(())
    }
}

/// `m!`
pub fn count_permutations(m: usize) -> Result<u64> {
    guard(m)?;
    Ok((1..=m as u64).product())
}

/// Number of derangements `D_m` via `D_m = (m-1)(D_{m-1} + D_{m-2})`.
pub fn count_derangements(m: usize) -> Result<u64> {
    guard(m)?;
    let (mut prev, mut cur) = (1u64, 0u64);
    if m == 0 {
        return Ok(1);
    }
    for k in 2..=m as u64 {
        let next = (k - 1) * (cur + prev);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Binomial coefficient, exact for `n <= 64`-ish arguments that fit in u64.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Permutations of `m` items with exactly `d` fixed points: `C(m,d) D_{m-d}`.
pub fn count_partial(m: usize, d: usize) -> Result<u64> {
    guard(m)?;
    if d > m {
        return Err(CombinatoricsError::Domain { m, d });
    }
    Ok(binomial(m, d) * count_derangements(m - d)?)
}

/// Ordered sequences of `m - d` distinct items drawn from `m`: `m! / d!`.
/// This is the size of the rank space of a [`PartialPermutation`].
pub fn count_arrangements(m: usize, d: usize) -> Result<u64> {
    if d > m {
        return Err(CombinatoricsError::Domain { m, d });
    }
    falling(m, m - d).ok_or(CombinatoricsError::Overflow { m })
}

/// `n (n-1) ... (n-k+1)`, `None` on overflow.
fn falling(n: usize, k: usize) -> Option<u64> {
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u64)?;
    }
    Some(acc)
}

/// A full permutation of `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(items: Vec<usize>) -> Result<Self> {
        check_distinct(&items, items.len())?;
        Ok(Self(items))
    }

    pub fn identity(m: usize) -> Self {
        Self((0..m).collect())
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Positions `i` with `items[i] == i`.
    pub fn fixed_points(&self) -> usize {
        self.0.iter().enumerate().filter(|(i, &x)| *i == x).count()
    }

    /// Left rotation by `r`: `items[r..] ++ items[..r]`.
    pub fn rotate(&self, r: usize) -> Self {
        Self(rotate_left(&self.0, r))
    }

    /// The `m` cyclic rotations, starting with `self`.
    pub fn rotations(&self) -> Vec<Self> {
        (0..self.len()).map(|r| self.rotate(r)).collect()
    }

    pub fn rank(&self) -> PermCode {
        rank(&self.as_partial())
    }

    pub fn unrank(value: u64, m: usize) -> Result<Self> {
        let p = unrank(PermCode { value, m, d: 0 })?;
        Ok(Self(p.items))
    }

    pub fn as_partial(&self) -> PartialPermutation {
        PartialPermutation { items: self.0.clone(), m: self.0.len() }
    }
}

/// An ordered sequence of `k <= m` distinct items of `0..m`; the other
/// `d = m - k` items are held fixed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartialPermutation {
    items: Vec<usize>,
    m: usize,
}

impl PartialPermutation {
    pub fn new(items: Vec<usize>, m: usize) -> Result<Self> {
        check_distinct(&items, m)?;
        Ok(Self { items, m })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn fixed_points(&self) -> usize {
        self.m - self.items.len()
    }

    pub fn rotate(&self, r: usize) -> Self {
        Self { items: rotate_left(&self.items, r), m: self.m }
    }

    pub fn rotations(&self) -> Vec<Self> {
        (0..self.len().max(1)).map(|r| self.rotate(r)).collect()
    }

    pub fn rank(&self) -> PermCode {
        rank(self)
    }

    /// Returns the full permutation when no item is held fixed.
    pub fn into_full(self) -> Option<Permutation> {
        (self.items.len() == self.m).then_some(Permutation(self.items))
    }
}

/// Canonical integer rank of a (partial) permutation within its `(m, d)` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PermCode {
    pub value: u64,
    pub m: usize,
    pub d: usize,
}

fn rotate_left(items: &[usize], r: usize) -> Vec<usize> {
    if items.is_empty() {
        return Vec::new();
    }
    let r = r % items.len();
    items[r..].iter().chain(&items[..r]).copied().collect()
}

fn check_distinct(items: &[usize], m: usize) -> Result<()> {
    if items.len() > m {
        return Err(CombinatoricsError::Invalid(format!(
            "{} items exceed m = {m}",
            items.len()
        )));
    }
    if m > MAX_HIERARCHICAL_M {
        return Err(CombinatoricsError::Overflow { m });
    }
    let mut seen = 0u64;
    for &x in items {
        if x >= m {
            return Err(CombinatoricsError::Invalid(format!("item {x} not in 0..{m}")));
        }
        if seen >> x & 1 == 1 {
            return Err(CombinatoricsError::Invalid(format!("item {x} repeated")));
        }
        seen |= 1 << x;
    }
    Ok(())
}

/// Digit weights for a `k`-sequence over `m` items, most significant first.
fn weights(m: usize, k: usize) -> Option<Vec<u64>> {
    // weight_i = P(m-1-i, k-1-i)
    let mut w = vec![1u64; k];
    for i in (0..k.saturating_sub(1)).rev() {
        w[i] = w[i + 1].checked_mul((m - 1 - i) as u64)?;
    }
    Some(w)
}

/// Lehmer rank. For `m <= 20` this never overflows; larger `m` is only
/// reachable through [`hierarchical_index`], which ranks blocks of at most
/// [`BLOCK`] items.
pub fn rank(p: &PartialPermutation) -> PermCode {
    let k = p.items.len();
    let w = weights(p.m, k).expect("rank overflow: use hierarchical_index for large m");
    let mut used = 0u64;
    let mut value = 0u64;
    for (i, &x) in p.items.iter().enumerate() {
        let below = (used & ((1u64 << x) - 1)).count_ones() as u64;
        value += (x as u64 - below) * w[i];
        used |= 1 << x;
    }
    PermCode { value, m: p.m, d: p.m - k }
}

/// Exact inverse of [`rank`].
pub fn unrank(code: PermCode) -> Result<PartialPermutation> {
    let PermCode { value, m, d } = code;
    if d > m {
        return Err(CombinatoricsError::Domain { m, d });
    }
    if m > MAX_HIERARCHICAL_M {
        return Err(CombinatoricsError::Overflow { m });
    }
    let k = m - d;
    let count = count_arrangements(m, d)?;
    if value >= count {
        return Err(CombinatoricsError::OutOfRange { value, m, d, count });
    }
    let w = weights(m, k).ok_or(CombinatoricsError::Overflow { m })?;
    let mut free: Vec<usize> = (0..m).collect();
    let mut rest = value;
    let mut items = Vec::with_capacity(k);
    for wi in w {
        let digit = (rest / wi) as usize;
        rest %= wi;
        items.push(free.remove(digit));
    }
    Ok(PartialPermutation { items, m })
}

/// Blocked index for large `m`: the permutation is cut into contiguous blocks
/// of at most [`BLOCK`] positions and each block is ranked as a partial
/// permutation over the items not used by earlier blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierarchicalCode {
    pub m: usize,
    pub codes: Vec<PermCode>,
}

pub fn hierarchical_index(p: &Permutation) -> Result<HierarchicalCode> {
    let m = p.len();
    if m > MAX_HIERARCHICAL_M {
        return Err(CombinatoricsError::Overflow { m });
    }
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut codes = Vec::with_capacity(m.div_ceil(BLOCK));
    for block in p.items().chunks(BLOCK) {
        let relabeled: Vec<usize> = block
            .iter()
            .map(|x| remaining.binary_search(x).expect("distinct items"))
            .collect();
        let local = PartialPermutation { items: relabeled, m: remaining.len() };
        codes.push(rank(&local));
        remaining.retain(|x| !block.contains(x));
    }
    Ok(HierarchicalCode { m, codes })
}

impl HierarchicalCode {
    pub fn decode(&self) -> Result<Permutation> {
        let mut remaining: Vec<usize> = (0..self.m).collect();
        let mut items = Vec::with_capacity(self.m);
        for &code in &self.codes {
            if code.m != remaining.len() {
                return Err(CombinatoricsError::Invalid(format!(
                    "block code expects {} free items, {} remain",
                    code.m,
                    remaining.len()
                )));
            }
            let local = unrank(code)?;
            let block: Vec<usize> = local.items.iter().map(|&i| remaining[i]).collect();
            remaining.retain(|x| !block.contains(x));
            items.extend(block);
        }
        Permutation::new(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// All permutations of `0..m` in lexicographic order (Heap-free recursion).
    fn brute_perms(m: usize) -> Vec<Vec<usize>> {
        fn go(prefix: &mut Vec<usize>, m: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == m {
                out.push(prefix.clone());
                return;
            }
            for x in 0..m {
                if !prefix.contains(&x) {
                    prefix.push(x);
                    go(prefix, m, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(&mut Vec::new(), m, &mut out);
        out
    }

    fn brute_fixed(m: usize, d: usize) -> u64 {
        brute_perms(m)
            .iter()
            .filter(|p| p.iter().enumerate().filter(|(i, &x)| *i == x).count() == d)
            .count() as u64
    }

    #[test]
    fn factorials() {
        assert_eq!(count_permutations(0).unwrap(), 1);
        assert_eq!(count_permutations(5).unwrap(), 120);
        assert_eq!(count_permutations(10).unwrap(), 3_628_800);
        assert_eq!(count_permutations(20).unwrap(), 2_432_902_008_176_640_000);
        assert_eq!(count_permutations(21), Err(CombinatoricsError::Overflow { m: 21 }));
    }

    #[test]
    fn derangements_match_brute_force() {
        assert_eq!(count_derangements(1).unwrap(), 0);
        assert_eq!(count_derangements(4).unwrap(), 9);
        assert_eq!(count_derangements(5).unwrap(), 44);
        for m in 0..=7 {
            assert_eq!(count_derangements(m).unwrap(), brute_fixed(m, 0), "m = {m}");
        }
        assert!(count_derangements(21).is_err());
    }

    #[test]
    fn partial_counts() {
        assert_eq!(count_partial(4, 1).unwrap(), 8);
        assert_eq!(count_partial(6, 0).unwrap(), 265);
        assert_eq!(count_partial(7, 7).unwrap(), 1);
        assert_eq!(count_partial(3, 4), Err(CombinatoricsError::Domain { m: 3, d: 4 }));
        for m in 0..=7 {
            let total: u64 = (0..=m).map(|d| count_partial(m, d).unwrap()).sum();
            assert_eq!(total, count_permutations(m).unwrap());
        }
    }

    #[test]
    fn rank_examples() {
        let r = |v: Vec<usize>| Permutation::new(v).unwrap().rank().value;
        assert_eq!(r(vec![0, 1, 2]), 0);
        assert_eq!(r(vec![2, 1, 0]), 5);
        assert_eq!(r(vec![2, 0, 1]), 4);
        // lexicographic enumeration order equals rank order
        for (i, p) in brute_perms(4).into_iter().enumerate() {
            assert_eq!(r(p), i as u64);
        }
    }

    #[test]
    fn unrank_examples() {
        assert_eq!(Permutation::unrank(0, 4).unwrap().items(), &[0, 1, 2, 3]);
        assert_eq!(Permutation::unrank(23, 4).unwrap().items(), &[3, 2, 1, 0]);
        assert!(matches!(
            Permutation::unrank(24, 4),
            Err(CombinatoricsError::OutOfRange { .. })
        ));
    }

    #[test]
    fn partial_rank_is_lexicographic() {
        // all 2-sequences over 4 items, lexicographic
        let mut i = 0;
        for a in 0..4 {
            for b in (0..4).filter(|&b| b != a) {
                let p = PartialPermutation::new(vec![a, b], 4).unwrap();
                assert_eq!(p.rank(), PermCode { value: i, m: 4, d: 2 });
                i += 1;
            }
        }
        assert_eq!(i, count_arrangements(4, 2).unwrap());
    }

    #[test]
    fn rotations_cycle() {
        let p = Permutation::new(vec![0, 1, 2]).unwrap();
        let rot: Vec<_> = p.rotations().into_iter().map(|q| q.0).collect();
        assert_eq!(rot, vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]]);
        let q = Permutation::new(vec![3, 0, 4, 1, 2]).unwrap();
        let mut r = q.clone();
        for _ in 0..5 {
            r = r.rotate(1);
        }
        assert_eq!(r, q);
        let mut distinct = q.rotations();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn invalid_inputs() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        assert!(PartialPermutation::new(vec![1, 5], 4).is_err());
    }

    #[test]
    fn hierarchical_blocks() {
        let p = Permutation::identity(12);
        let h = hierarchical_index(&p).unwrap();
        assert_eq!(h.codes.len(), 2);
        assert!(h.codes.iter().all(|c| c.value == 0));
        assert_eq!(h.codes[0], PermCode { value: 0, m: 12, d: 2 });
        assert_eq!(h.codes[1], PermCode { value: 0, m: 2, d: 0 });
        assert_eq!(h.decode().unwrap(), p);
        let rev = Permutation::new((0..25).rev().collect()).unwrap();
        let h = hierarchical_index(&rev).unwrap();
        assert_eq!(h.codes.len(), 3);
        assert_eq!(h.decode().unwrap(), rev);
    }
}
