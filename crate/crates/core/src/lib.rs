//! External validity of effect observations in binary-factor samples.
//!
//! Samples are read as sets of hypercube vertices. Chains of singleton
//! differences from a reference profile give observed (partial) permutations;
//! their cyclic rotation orbits give Latin squares whose cells yield
//! counterfactual effect observations. The precision of those observations is
//! the external-validity score of each factor.

pub mod combinatorics;
pub mod effects;
pub mod enumeration;
pub mod harness;
pub mod orderings;
pub mod power;
pub mod sample;
pub mod simgen;
