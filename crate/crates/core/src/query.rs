//! Black-box query channels: budgets, transcripts, answer-precision policies,
//! and empirical query-count statistics.
//!
//! Every oracle in this crate answers through a [`QueryTranscript`]; the
//! transcript count is the unit of measurement for all experiments.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("query budget exhausted after {limit} queries")]
    BudgetExhausted { limit: u64 },
    #[error("QC_p undefined: success fraction {success_fraction} < p = {p}")]
    UndefinedQuantile { success_fraction: f64, p: f64 },
    #[error("summary requires at least one trial")]
    NoTrials,
    #[error("target probability must lie in (0,1), got {0}")]
    InvalidTargetProbability(f64),
}

/// Cap on the number of recorded queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryBudget {
    limit: Option<u64>,
}

impl QueryBudget {
    pub fn limited(limit: u64) -> Self {
        Self { limit: Some(limit) }
    }

    pub fn unlimited() -> Self {
        Self { limit: None }
    }

    pub fn limit(&self) -> Option<u64> {
        self.limit
    }

    fn admits(&self, used: u64) -> bool {
        self.limit.is_none_or(|limit| used < limit)
    }
}

/// Channel tag for a recorded query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryKind {
    /// Pure action profile, answered with every player's payoff.
    PureProfile,
    /// Distribution over profiles, answered within the precision policy.
    Distribution,
    /// Point of `[0,1]^n`, answered with the map's value there.
    Point,
    /// Distribution over points, answered within the precision policy.
    PointDistribution,
    /// Hypercube vertex, answered with the path's local visit info.
    Esp,
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            QueryKind::PureProfile => "wsn",
            QueryKind::Distribution => "wsn-dist",
            QueryKind::Point => "afp",
            QueryKind::PointDistribution => "afp-dist",
            QueryKind::Esp => "esp",
        };
        f.write_str(tag)
    }
}

/// Canonical decimal with 17 significant digits; round-trips `f64` exactly.
pub fn canonical_decimal(x: f64) -> String {
    format!("{x:.16e}")
}

/// Query or answer payload in canonical exportable form.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Reals(Vec<f64>),
    Ints(Vec<i64>),
    Text(String),
    Empty,
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Reals(values) => {
                let parts: Vec<String> = values.iter().map(|v| canonical_decimal(*v)).collect();
                f.write_str(&parts.join(" "))
            }
            Payload::Ints(values) => {
                let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                f.write_str(&parts.join(" "))
            }
            Payload::Text(text) => f.write_str(text),
            Payload::Empty => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub kind: QueryKind,
    pub query: Payload,
    pub answer: Payload,
}

/// Append-only record of queries and answers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryTranscript {
    entries: Vec<TranscriptEntry>,
}

impl QueryTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    /// Appends one entry, enforcing the budget.
    pub fn record(
        &mut self,
        budget: &QueryBudget,
        kind: QueryKind,
        query: Payload,
        answer: Payload,
    ) -> Result<(), QueryError> {
        if !budget.admits(self.count()) {
            return Err(QueryError::BudgetExhausted {
                limit: budget.limit().unwrap_or(0),
            });
        }
        self.entries.push(TranscriptEntry {
            kind,
            query,
            answer,
        });
        Ok(())
    }

    /// Line-delimited export: `kind<TAB>query<TAB>answer`.
    pub fn export_lines(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                entry.kind, entry.query, entry.answer
            ));
        }
        out
    }
}

/// How a within-`delta` answer is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerMode {
    /// Return the true value.
    Exact,
    /// Round each component to the nearest multiple of `delta`.
    GridRounding,
    /// Add seeded uniform noise from `[-delta, delta]` per component.
    SeededUniformNoise,
}

/// Answer-precision policy: every emitted answer `w` satisfies
/// `||w - true_value||_inf <= delta`.
///
/// Solvers must be correct for every within-`delta` answer sequence; the
/// default grid-rounding adversary makes failures reproducible. The adversary
/// sees only the query stream, never the algorithm's internal randomness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionPolicy {
    delta: f64,
    mode: AnswerMode,
}

impl PrecisionPolicy {
    pub fn new(delta: f64, mode: AnswerMode) -> Self {
        assert!((0.0..=1.0).contains(&delta), "delta must lie in [0,1]");
        Self { delta, mode }
    }

    pub fn exact() -> Self {
        Self::new(0.0, AnswerMode::Exact)
    }

    pub fn grid_rounding(delta: f64) -> Self {
        Self::new(delta, AnswerMode::GridRounding)
    }

    pub fn seeded_uniform_noise(delta: f64) -> Self {
        Self::new(delta, AnswerMode::SeededUniformNoise)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mode(&self) -> AnswerMode {
        self.mode
    }

    /// Emits a within-`delta` answer for `true_value`; deterministic per seed.
    pub fn perturb(&self, true_value: &[f64], seed: u64) -> Vec<f64> {
        if self.delta == 0.0 {
            return true_value.to_vec();
        }
        match self.mode {
            AnswerMode::Exact => true_value.to_vec(),
            AnswerMode::GridRounding => true_value
                .iter()
                .map(|v| (v / self.delta).round() * self.delta)
                .collect(),
            AnswerMode::SeededUniformNoise => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                true_value
                    .iter()
                    .map(|v| v + rng.gen_range(-self.delta..=self.delta))
                    .collect()
            }
        }
    }
}

/// Empirical query-complexity summary over a batch of trials.
///
/// `qc_e` is the mean count over all trials; `qc_p` is the smallest count `c`
/// such that at least a `p` fraction of trials succeeded within `c` queries.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryStats {
    pub counts: Vec<u64>,
    pub successes: Vec<bool>,
    pub p: f64,
    pub qc_p: u64,
    pub qc_e: f64,
    pub success_fraction: f64,
}

pub fn summarize(trials: &[(u64, bool)], p: f64) -> Result<QueryStats, QueryError> {
    if trials.is_empty() {
        return Err(QueryError::NoTrials);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(QueryError::InvalidTargetProbability(p));
    }
    let total = trials.len() as f64;
    let qc_e = trials.iter().map(|(c, _)| *c as f64).sum::<f64>() / total;
    let success_count = trials.iter().filter(|(_, ok)| *ok).count();
    let success_fraction = success_count as f64 / total;
    if success_fraction < p {
        return Err(QueryError::UndefinedQuantile {
            success_fraction,
            p,
        });
    }
    let mut success_counts: Vec<u64> = trials
        .iter()
        .filter(|(_, ok)| *ok)
        .map(|(c, _)| *c)
        .collect();
    success_counts.sort_unstable();
    let mut qc_p = *success_counts.last().expect("at least one success");
    for &c in &success_counts {
        let covered = trials
            .iter()
            .filter(|(count, ok)| *ok && *count <= c)
            .count();
        if covered as f64 / total >= p {
            qc_p = c;
            break;
        }
    }
    Ok(QueryStats {
        counts: trials.iter().map(|(c, _)| *c).collect(),
        successes: trials.iter().map(|(_, ok)| *ok).collect(),
        p,
        qc_p,
        qc_e,
        success_fraction,
    })
}
