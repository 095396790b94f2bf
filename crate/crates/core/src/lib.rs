//! Desk-scale laboratory for black-box search problems on games and maps.
//!
//! The crate wires together five layers:
//!
//! * [`query`] — query channels with budgets, transcripts, answer-precision
//!   policies, and empirical query-count statistics.
//! * [`paths`] — hypercube walks, cycle cutting, simple-path instances, the
//!   end-of-simple-path oracle, and the hit-the-path adversary game.
//! * [`fixpoint`] — Lipschitz maps on `[0,1]^n` under the max norm, the
//!   path-following map built from a simple path, and numeric certification
//!   of its displacement floor.
//! * [`games`] — normal-form games (explicit and oracle-backed), the
//!   two-group game wrapping a map, and approximate-equilibrium verifiers.
//! * [`reductions`] / [`dynamics`] — the adapter chain between the problems
//!   and query-counted adaptive play dynamics.
//!
//! All randomness flows through explicit seeds; there is no hidden global
//! generator, so every experiment is reproducible from its config.

pub mod dynamics;
pub mod fixpoint;
pub mod games;
pub mod paths;
pub mod query;
pub mod reductions;

pub use fixpoint::{BoxMap, Certificate, PathFunction, Point};
pub use games::{ExplicitGame, FunctionGame, Game, MixedProfile, MixedStrategy};
pub use paths::{HVertex, SimplePath, Walk};
pub use query::{PrecisionPolicy, QueryBudget, QueryTranscript};
