//! Defender strategies for adversarial patrolling with time-dependent damage.
//!
//! A [`PatrollingGraph`] describes the terrain: vertices, targets with a cost per
//! time unit, and edges with integral traversal times. A Defender commits to a
//! finite-memory ([`RegularStrategy`]) random walk over memory-augmented vertices,
//! and an Attacker who watches the walk picks the worst moment to attack a target.
//! The damage of an attack is the target cost times the time until the Defender
//! next visits the attacked target.
//!
//! The crate provides
//!
//! * exact evaluation of the worst-case expected damage of a strategy through
//!   bottom strongly connected components and expected hitting-time systems
//!   ([`evaluator`]),
//! * a differentiable surrogate loss with an adjoint gradient ([`gradient`]),
//! * the Adam-based synthesis loop ([`optimizer`]),
//! * brute-force cross-checks: value iteration, Monte Carlo walks and
//!   exhaustive enumeration of deterministic strategies ([`oracle`]).

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod evaluator;
pub mod fixtures;
pub mod gradient;
pub mod graph;
pub mod linalg;
pub mod optimizer;
pub mod oracle;
pub mod strategy;

mod par;

pub use error::{Error, Result};
pub use evaluator::{evaluate, Damage, EvaluationReport};
pub use graph::{PatrollingGraph, ValidationReport};
pub use optimizer::{synthesize, OptimizerConfig, SynthesisResult};
pub use strategy::{AugmentedSpace, CoefficientMatrix, MemoryMap, RegularStrategy};
