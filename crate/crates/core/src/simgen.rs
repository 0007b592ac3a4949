//! Synthetic binary-factor samples with sigmoidal outcomes and their exact
//! ground-truth marginal effects.
//!
//! Four cases are supported: `hypercube` (p = 0.5, beta = 1/m), `additive`
//! (p, beta ~ U(0,1)), `correlated` (factor k copies factor k-1 with
//! probability rho) and `omitted` (additive, with columns dropped from the
//! emitted sample).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::{Profile, Sample, SampleError};

/// Ground truth is summed exactly over all profiles up to this many factors.
pub const EXACT_TRUTH_MAX_M: usize = 12;
const MC_TRUTH_DRAWS: usize = 200_000;

#[derive(Debug, Error)]
pub enum SimgenError {
    #[error("unknown case '{0}' (expected hypercube, additive, correlated or omitted)")]
    UnknownCase(String),
    #[error("unknown outcome kind '{0}' (expected bernoulli, probability or linear)")]
    UnknownOutcome(String),
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

pub type Result<T> = std::result::Result<T, SimgenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    Hypercube,
    Additive,
    Correlated,
    Omitted,
}

impl FromStr for Case {
    type Err = SimgenError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hypercube" => Ok(Case::Hypercube),
            "additive" => Ok(Case::Additive),
            "correlated" => Ok(Case::Correlated),
            "omitted" => Ok(Case::Omitted),
            _ => Err(SimgenError::UnknownCase(s.to_string())),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Case::Hypercube => "hypercube",
            Case::Additive => "additive",
            Case::Correlated => "correlated",
            Case::Omitted => "omitted",
        };
        f.write_str(s)
    }
}

/// How the outcome column is produced from the linear predictor `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    /// `y ~ Bernoulli(sigmoid(eta))`
    #[default]
    Bernoulli,
    /// `y = sigmoid(eta)`, noiseless
    Probability,
    /// `y = eta`, noiseless and additive
    Linear,
}

impl FromStr for OutcomeKind {
    type Err = SimgenError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" => Ok(OutcomeKind::Bernoulli),
            "probability" => Ok(OutcomeKind::Probability),
            "linear" => Ok(OutcomeKind::Linear),
            _ => Err(SimgenError::UnknownOutcome(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub case: Case,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    /// Copy probability, correlated case only.
    pub rho: Option<f64>,
    pub omitted_count: usize,
    /// Overrides for the drawn parameters.
    pub p: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub beta0: Option<f64>,
    /// Emit profiles `0, 1, 2, ...` cyclically instead of sampling them.
    pub exhaustive: bool,
    pub outcome: OutcomeKind,
}

impl GenSpec {
    pub fn new(case: Case, m: usize, n: usize, seed: u64) -> Self {
        Self {
            case,
            m,
            n,
            seed,
            rho: (case == Case::Correlated).then_some(0.25),
            omitted_count: 3,
            p: None,
            beta: None,
            beta0: None,
            exhaustive: false,
            outcome: OutcomeKind::Bernoulli,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimgenError::Invalid(msg));
        if self.m == 0 || self.m > crate::sample::MAX_FACTORS {
            return bad(format!("m = {} outside 1..={}", self.m, crate::sample::MAX_FACTORS));
        }
        match (self.case, self.rho) {
            (Case::Correlated, None) => return bad("correlated case needs rho".into()),
            (Case::Correlated, Some(r)) if !(0.0..=1.0).contains(&r) => {
                return bad(format!("rho = {r} outside [0, 1]"))
            }
            (c, Some(_)) if c != Case::Correlated => return bad("rho is only used by the correlated case".into()),
            _ => {}
        }
        if self.case == Case::Omitted && self.omitted_count >= self.m {
            return bad(format!("omitted_count {} must be below m = {}", self.omitted_count, self.m));
        }
        for (name, v) in [("p", &self.p), ("beta", &self.beta)] {
            if let Some(v) = v {
                if v.len() != self.m {
                    return bad(format!("{name} has {} entries, expected {}", v.len(), self.m));
                }
            }
        }
        if let Some(p) = &self.p {
            if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return bad("p entries must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Resolved generative parameters for one spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub case: Case,
    pub m: usize,
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta0: f64,
    pub rho: Option<f64>,
    /// Factors missing from the emitted sample (sorted).
    pub omitted: Vec<usize>,
    /// Factors present in the emitted sample, in column order.
    pub kept: Vec<usize>,
    pub outcome: OutcomeKind,
}

impl Model {
    pub fn from_spec(spec: &GenSpec) -> Result<Self> {
        spec.validate()?;
        let m = spec.m;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (p, beta) = match spec.case {
            Case::Hypercube => (vec![0.5; m], vec![1.0 / m as f64; m]),
            _ => {
                let p: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
                let beta: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
                (p, beta)
            }
        };
        let p = spec.p.clone().unwrap_or(p);
        let beta = spec.beta.clone().unwrap_or(beta);
        let mut omitted = Vec::new();
        if spec.case == Case::Omitted {
            let mut all: Vec<usize> = (0..m).collect();
            all.shuffle(&mut rng);
            omitted = all[..spec.omitted_count].to_vec();
            omitted.sort_unstable();
        }
        let kept = (0..m).filter(|f| !omitted.contains(f)).collect();
        let mut model = Model {
            case: spec.case,
            m,
            p,
            beta,
            beta0: 0.0,
            rho: spec.rho,
            omitted,
            kept,
            outcome: spec.outcome,
        };
        model.beta0 = match spec.beta0 {
            Some(b) => b,
            None => model.centering_intercept(),
        };
        Ok(model)
    }

    pub fn eta(&self, x: Profile) -> f64 {
        self.beta0 + (0..self.m).filter(|&i| x.get(i)).map(|i| self.beta[i]).sum::<f64>()
    }

    /// Probability of profile `x` under the generative distribution.
    pub fn profile_prob(&self, x: Profile) -> f64 {
        let bern = |i: usize, v: bool| if v { self.p[i] } else { 1.0 - self.p[i] };
        let mut pr = bern(0, x.get(0));
        for i in 1..self.m {
            let v = x.get(i);
            pr *= match self.rho {
                Some(rho) => rho * (v == x.get(i - 1)) as u8 as f64 + (1.0 - rho) * bern(i, v),
                None => bern(i, v),
            };
        }
        pr
    }

    pub fn draw_profile<R: Rng>(&self, rng: &mut R) -> Profile {
        let mut x = Profile(0);
        for i in 0..self.m {
            let v = match self.rho {
                Some(rho) if i > 0 && rng.gen::<f64>() < rho => x.get(i - 1),
                _ => rng.gen::<f64>() < self.p[i],
            };
            x = x.set(i, v);
        }
        x
    }

    /// `E[sigmoid(beta0 + beta.x)]` under the profile distribution.
    pub fn mean_probability(&self, beta0: f64) -> f64 {
        let shift = beta0 - self.beta0;
        self.expect(|x| sigmoid(self.eta(x) + shift))
    }

    fn expect<F: Fn(Profile) -> f64>(&self, f: F) -> f64 {
        if self.m <= EXACT_TRUTH_MAX_M {
            (0..1u32 << self.m).map(Profile).map(|x| self.profile_prob(x) * f(x)).sum()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..MC_TRUTH_DRAWS).map(|_| f(self.draw_profile(&mut rng))).sum::<f64>() / MC_TRUTH_DRAWS as f64
        }
    }

    /// Intercept putting the mean outcome probability at 0.5.
    fn centering_intercept(&self) -> f64 {
        let total: f64 = self.beta.iter().map(|b| b.abs()).sum();
        let (mut lo, mut hi) = (-total - 1.0, total + 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.mean_probability(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Marginal effect of `factor` on the outcome scale: the mean over the
    /// co-factor distribution of `f(x | a = 1) - f(x | a = 0)`.
    pub fn effect(&self, factor: usize) -> f64 {
        let link = |x: Profile| match self.outcome {
            OutcomeKind::Linear => self.eta(x),
            _ => sigmoid(self.eta(x)),
        };
        self.expect(|x| link(x.set(factor, true)) - link(x.set(factor, false)))
    }

    pub fn effects(&self) -> Vec<f64> {
        (0..self.m).map(|a| self.effect(a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub case: Case,
    pub m: usize,
    /// Per-factor marginal effects over all `m` factors.
    pub effects: Vec<f64>,
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta0: f64,
    pub rho: Option<f64>,
    pub omitted: Vec<usize>,
    pub kept: Vec<usize>,
    /// True when effects were summed exactly rather than simulated.
    pub exact: bool,
    pub outcome: OutcomeKind,
}

impl GroundTruth {
    fn of(model: &Model) -> Self {
        Self {
            case: model.case,
            m: model.m,
            effects: model.effects(),
            p: model.p.clone(),
            beta: model.beta.clone(),
            beta0: model.beta0,
            rho: model.rho,
            omitted: model.omitted.clone(),
            kept: model.kept.clone(),
            exact: model.m <= EXACT_TRUTH_MAX_M,
            outcome: model.outcome,
        }
    }

    /// Effects of the emitted columns, in column order.
    pub fn kept_effects(&self) -> Vec<f64> {
        self.kept.iter().map(|&a| self.effects[a]).collect()
    }
}

/// Draws a sample and its ground truth. Parameters come from the seed's first
/// stream, profiles and outcomes from the second.
pub fn generate(spec: &GenSpec) -> Result<(Sample, GroundTruth)> {
    let model = Model::from_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut profiles = Vec::with_capacity(spec.n);
    let mut outcomes = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let x = if spec.exhaustive { Profile((i % (1usize << spec.m)) as u32) } else { model.draw_profile(&mut rng) };
        let eta = model.eta(x);
        let y = match spec.outcome {
            OutcomeKind::Bernoulli => (rng.gen::<f64>() < sigmoid(eta)) as u8 as f64,
            OutcomeKind::Probability => sigmoid(eta),
            OutcomeKind::Linear => eta,
        };
        profiles.push(x);
        outcomes.push(y);
    }
    let full = Sample::from_profiles(spec.m, &profiles, Some(&outcomes))?;
    let sample = if model.omitted.is_empty() { full } else { full.select_factors(&model.kept)? };
    Ok((sample, GroundTruth::of(&model)))
}

pub fn ground_truth_effect(spec: &GenSpec, factor: usize) -> Result<f64> {
    if factor >= spec.m {
        return Err(SimgenError::Invalid(format!("factor {factor} outside 0..{}", spec.m)));
    }
    Ok(Model::from_spec(spec)?.effect(factor))
}
