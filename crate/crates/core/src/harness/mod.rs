//! Experiment driver: reference learners, learning curves under orderings,
//! the causal-estimator benchmark, leave-one-group-out prediction and the
//! simulation studies built on them.

pub mod curves;
pub mod estimators;
pub mod experiments;
pub mod learners;
pub mod logo;

use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

use crate::sample::{SampleError, UnitId};
use crate::simgen::SimgenError;

pub use curves::{cv_accuracy, learning_curve, CurveConfig, CurveRecord, Task};
pub use estimators::{estimator_benchmark, gcomp, psm, square_eq4, BenchConfig, Estimator, EstimatorResult};
pub use learners::{Dataset, Fitted, LearnerKind};
pub use logo::{logo_task, LogoConfig, LogoReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("sample has no outcome column")]
    MissingOutcomes,
    #[error("sample has no group column")]
    MissingGroups,
    #[error("need at least 2 groups, found {0}")]
    TooFewGroups(usize),
    #[error("factor {0} takes a single level in the sample")]
    DegenerateFactor(usize),
    #[error("no matches within caliper {caliper} for factor {factor}")]
    NoMatches { factor: usize, caliper: f64 },
    #[error("unknown unit {0}")]
    UnknownUnit(UnitId),
    #[error("unknown learner '{0}' (expected logistic or forest)")]
    UnknownLearner(String),
    #[error("curve step {step} (n = {n}): {source}")]
    Step { step: usize, n: usize, source: Box<HarnessError> },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Simgen(#[from] SimgenError),
}

/// Independent seed for the `index`-th run or fold under `seed`.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One-sided sign test: probability of at least `wins` successes among
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if wins == 0 || n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(wins - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        // P(X >= 20 | 30, 1/2)
        assert!((sign_test(20, 10) - 0.049_368_573_352_694_51).abs() < 1e-12);
        assert_eq!(sign_test(0, 5), 1.0);
        assert!((sign_test(1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn substreams_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| substream_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
