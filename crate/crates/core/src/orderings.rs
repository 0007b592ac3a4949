//! Full-sample unit orderings: seeded shuffles, square transversals and a
//! greedy Hamming-distance tour.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::Axis;
use crate::enumeration::Square;
use crate::sample::{Profile, Sample, UnitId};

#[derive(Debug, Error)]
pub enum OrderingError {
    #[error("unknown ordering strategy '{0}'")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    SquareVertical,
    SquareHorizontal,
    Tsp,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::Random, Strategy::SquareVertical, Strategy::SquareHorizontal, Strategy::Tsp];
}

impl FromStr for Strategy {
    type Err = OrderingError;

    fn from_str(s: &str) -> Result<Self, OrderingError> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(Strategy::Random),
            "square_vertical" | "vertical" => Ok(Strategy::SquareVertical),
            "square_horizontal" | "horizontal" => Ok(Strategy::SquareHorizontal),
            "tsp" => Ok(Strategy::Tsp),
            _ => Err(OrderingError::UnknownStrategy(s.to_string())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::Random => "random",
            Strategy::SquareVertical => "square_vertical",
            Strategy::SquareHorizontal => "square_horizontal",
            Strategy::Tsp => "tsp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Number of squares walked (square strategies).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub squares: Option<usize>,
    /// Units emitted from square cells before the random tail.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covered: Option<usize>,
    /// Tour start (tsp).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<UnitId>,
    /// Set when a square ordering fell back to a random order.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

impl Provenance {
    fn seed(seed: u64) -> Self {
        Self { seed, squares: None, covered: None, start: None, fallback: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingPlan {
    pub strategy: Strategy,
    pub order: Vec<UnitId>,
    pub provenance: Provenance,
}

impl OrderingPlan {
    /// True when `order` lists every unit id of `s` exactly once.
    pub fn is_permutation_of(&self, s: &Sample) -> bool {
        let mut a = self.order.clone();
        let mut b: Vec<UnitId> = s.units().iter().map(|u| u.id).collect();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }
}

pub fn order_random(s: &Sample, seed: u64) -> OrderingPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<UnitId> = s.units().iter().map(|u| u.id).collect();
    order.shuffle(&mut rng);
    OrderingPlan { strategy: Strategy::Random, order, provenance: Provenance::seed(seed) }
}

/// Walks the assigned cells of `squares`: vertical is column-major across all
/// squares (every depth-1 cell, then depth 2, ...), horizontal is row-major
/// (one full path after another). The reference unit of each square leads.
/// Units no square covers follow in seeded random order.
pub fn order_square(s: &Sample, squares: &[Square], axis: Axis, seed: u64) -> OrderingPlan {
    let strategy = match axis {
        Axis::Vertical => Strategy::SquareVertical,
        Axis::Horizontal => Strategy::SquareHorizontal,
    };
    if squares.is_empty() {
        warn!("no squares to walk; falling back to a random order");
        let mut plan = order_random(s, seed);
        plan.strategy = strategy;
        plan.provenance.fallback = true;
        plan.provenance.squares = Some(0);
        return plan;
    }
    let known: HashSet<UnitId> = s.units().iter().map(|u| u.id).collect();
    let mut seen = HashSet::new();
    let mut order = Vec::with_capacity(s.n());
    let mut emit = |u: Option<UnitId>, order: &mut Vec<UnitId>| {
        if let Some(u) = u {
            if known.contains(&u) && seen.insert(u) {
                order.push(u);
            }
        }
    };
    for sq in squares {
        emit(sq.reference_id, &mut order);
    }
    match axis {
        Axis::Vertical => {
            let depth = squares.iter().map(|q| q.size).max().unwrap_or(0);
            for c in 0..depth {
                for sq in squares.iter().filter(|q| c < q.size) {
                    for r in 0..sq.size {
                        emit(sq.cell(r, c).unit, &mut order);
                    }
                }
            }
        }
        Axis::Horizontal => {
            for sq in squares {
                for cell in &sq.cells {
                    emit(cell.unit, &mut order);
                }
            }
        }
    }
    let covered = order.len();
    let mut rest: Vec<UnitId> = s.units().iter().map(|u| u.id).filter(|u| !seen.contains(u)).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.extend(rest);
    OrderingPlan {
        strategy,
        order,
        provenance: Provenance { squares: Some(squares.len()), covered: Some(covered), ..Provenance::seed(seed) },
    }
}

/// Greedy nearest-neighbour tour on Hamming distance from a seeded start unit.
/// Ties go to the lowest unit id, so duplicates of the current profile are
/// emitted back to back.
pub fn order_tsp(s: &Sample, seed: u64) -> OrderingPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(s.n());
    if s.n() == 0 {
        return OrderingPlan { strategy: Strategy::Tsp, order, provenance: Provenance::seed(seed) };
    }
    let start = s.units()[rng.gen_range(0..s.n())].id;
    order.extend(tour_from(s, start));
    OrderingPlan {
        strategy: Strategy::Tsp,
        order,
        provenance: Provenance { start: Some(start), ..Provenance::seed(seed) },
    }
}

/// The greedy tour from a given unit. Works over profile buckets, so each
/// step costs at most one scan of the distinct profiles.
pub fn tour_from(s: &Sample, start: UnitId) -> Vec<UnitId> {
    // ids in descending order so `pop` yields the lowest
    let mut buckets: BTreeMap<Profile, Vec<UnitId>> = BTreeMap::new();
    for u in s.units() {
        buckets.entry(u.profile).or_default().push(u.id);
    }
    for ids in buckets.values_mut() {
        ids.sort_unstable_by(|a, b| b.cmp(a));
    }
    let Some(first) = s.unit(start) else { return Vec::new() };
    let mut cur = first.profile;
    let bucket = buckets.get_mut(&cur).expect("start bucket");
    bucket.retain(|&u| u != start);
    if bucket.is_empty() {
        buckets.remove(&cur);
    }
    let mut order = vec![start];
    while !buckets.is_empty() {
        let next = buckets
            .iter()
            .map(|(&p, ids)| (p.distance(cur), *ids.last().expect("nonempty bucket"), p))
            .min()
            .expect("nonempty");
        let (_, id, p) = next;
        let ids = buckets.get_mut(&p).expect("bucket");
        ids.pop();
        if ids.is_empty() {
            buckets.remove(&p);
        }
        order.push(id);
        cur = p;
    }
    order
}

/// Sum of Hamming distances between consecutive units of an order.
pub fn tour_length(s: &Sample, order: &[UnitId]) -> u64 {
    order
        .windows(2)
        .map(|w| {
            let a = s.unit(w[0]).expect("unit").profile;
            let b = s.unit(w[1]).expect("unit").profile;
            a.distance(b) as u64
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumeration::{assign_members, Square};
    use crate::sample::subpop_index;

    fn sample_of(m: usize, ps: &[u32]) -> Sample {
        let ps: Vec<Profile> = ps.iter().map(|&p| Profile(p)).collect();
        Sample::from_profiles(m, &ps, None).unwrap()
    }

    #[test]
    fn random_is_deterministic_permutation() {
        let s = sample_of(2, &[0, 1, 2, 3, 1, 2]);
        let a = order_random(&s, 4);
        assert!(a.is_permutation_of(&s));
        assert_eq!(a, order_random(&s, 4));
        assert_eq!(order_random(&sample_of(1, &[1]), 0).order, vec![0]);
    }

    #[test]
    fn tsp_follows_unique_greedy_path() {
        let s = sample_of(3, &[0b000, 0b100, 0b110]);
        assert_eq!(tour_from(&s, 0), vec![0, 1, 2]);
        assert_eq!(tour_length(&s, &[0, 1, 2]), 2);
    }

    #[test]
    fn tsp_emits_duplicates_together() {
        let s = sample_of(2, &[0, 3, 0, 1, 3, 0]);
        let order = tour_from(&s, 0);
        assert_eq!(order, vec![0, 2, 5, 3, 1, 4]);
        let plan = order_tsp(&s, 17);
        assert!(plan.is_permutation_of(&s));
    }

    #[test]
    fn square_orders() {
        let s = sample_of(3, &(0..8).collect::<Vec<_>>());
        let idx = subpop_index(&s);
        let sq = assign_members(&Square::new(3, Profile(0), vec![0, 1, 2], vec![true; 3]), &idx, 1);
        let v = order_square(&s, std::slice::from_ref(&sq), Axis::Vertical, 3);
        let h = order_square(&s, std::slice::from_ref(&sq), Axis::Horizontal, 3);
        assert!(v.is_permutation_of(&s) && h.is_permutation_of(&s));
        // reference, then the three depth-1 members
        let depth1: HashSet<UnitId> = (0..3).map(|r| sq.cell(r, 0).unit.unwrap()).collect();
        assert_eq!(v.order[0], 0);
        assert_eq!(v.order[1..4].iter().copied().collect::<HashSet<_>>(), depth1);
        let cov = v.provenance.covered.unwrap();
        assert_eq!(cov, h.provenance.covered.unwrap());
        let set = |p: &OrderingPlan| p.order[..cov].iter().copied().collect::<HashSet<_>>();
        assert_eq!(set(&v), set(&h));
        assert_ne!(v.order[..cov], h.order[..cov]);
    }

    #[test]
    fn square_without_squares_falls_back() {
        let s = sample_of(2, &[0, 1, 2]);
        let plan = order_square(&s, &[], Axis::Vertical, 8);
        assert!(plan.provenance.fallback);
        assert_eq!(plan.order, order_random(&s, 8).order);
    }

    #[test]
    fn strategy_names() {
        for st in Strategy::ALL {
            assert_eq!(st.to_string().parse::<Strategy>().unwrap(), st);
        }
    }
}
