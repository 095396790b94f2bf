//! Adaptive play with query accounting: dynamics whose step-`t` strategies
//! are computable from `k` additional pure payoff queries per step, run
//! against a game behind a recording transcript. Includes regret matching
//! and best-reply play as reference instances, and the answer-perturbation
//! tester for the dynamic's Lipschitz continuity in its query answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::games::{Game, MixedProfile, MixedStrategy};
use crate::query::{Payload, PrecisionPolicy, QueryBudget, QueryKind, QueryTranscript};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("query leak at step {step}: planned {got} queries, declared {expected}")]
    QueryLeak {
        step: usize,
        expected: usize,
        got: usize,
    },
    #[error("strategy shape mismatch at step {step}")]
    StrategyShape { step: usize },
}

/// Queries and answers of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAnswers {
    pub queries: Vec<Vec<usize>>,
    pub payoffs: Vec<Vec<f64>>,
}

/// A `k`-queries dynamic: a per-step query plan over realized history and a
/// strategy map over the answers. The strategy map never sees the game, so
/// the step-`t` strategies are computable from the `t k` recorded answers
/// alone; replaying a transcript through a fresh map reproduces the run.
pub trait AdaptiveDynamic {
    /// Queries per step, `k`, for a game with these action counts.
    fn queries_per_step(&self, action_counts: &[usize]) -> usize;

    /// The `k` pure profiles to query at `step` (1-based), given the
    /// realized profiles of earlier steps.
    fn plan_queries(
        &self,
        step: usize,
        realized: &[Vec<usize>],
        action_counts: &[usize],
    ) -> Vec<Vec<usize>>;

    /// A fresh strategy map for one run.
    fn strategy_map(&self, action_counts: &[usize]) -> Box<dyn StrategyMap>;
}

/// Per-run strategy state, advanced once per step with that step's answers
/// and the realized profiles of all earlier steps.
pub trait StrategyMap {
    fn next(&mut self, step: usize, realized: &[Vec<usize>], answers: &StepAnswers)
        -> MixedProfile;
}

/// Full record of one run: per-step mixed profiles, realized profiles,
/// query answers, and the transcript (exactly `k` entries per step).
#[derive(Debug, Clone)]
pub struct History {
    pub action_counts: Vec<usize>,
    pub mixed: Vec<MixedProfile>,
    pub realized: Vec<Vec<usize>>,
    pub answers: Vec<StepAnswers>,
    pub transcript: QueryTranscript,
}

impl History {
    pub fn steps(&self) -> usize {
        self.realized.len()
    }

    /// Recomputes the strategy sequence from the recorded answers alone;
    /// equality with `self.mixed` is the information-firewall check.
    pub fn replay(&self, dynamic: &dyn AdaptiveDynamic) -> Vec<MixedProfile> {
        let mut map = dynamic.strategy_map(&self.action_counts);
        (1..=self.steps())
            .map(|t| map.next(t, &self.realized[..t - 1], &self.answers[t - 1]))
            .collect()
    }

    /// CSV export, one row per step and player:
    /// `step,player,distribution,realized` with the action distribution
    /// semicolon-joined in canonical decimals.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("step,player,distribution,realized\n");
        for t in 0..self.steps() {
            for player in 0..self.action_counts.len() {
                let distribution: Vec<String> = self.mixed[t]
                    .strategy(player)
                    .probs()
                    .iter()
                    .map(|p| crate::query::canonical_decimal(*p))
                    .collect();
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    t + 1,
                    player,
                    distribution.join(";"),
                    self.realized[t][player]
                ));
            }
        }
        out
    }
}

/// Runs the dynamic for `steps` steps. Each step plans its queries, records
/// them, computes the mixed profile from answers alone, and realizes one
/// pure profile from it. Deterministic per seed.
pub fn run_dynamic(
    game: &dyn Game,
    dynamic: &dyn AdaptiveDynamic,
    steps: usize,
    seed: u64,
) -> Result<History, DynamicsError> {
    run_until(game, dynamic, steps, seed, |_| false).map(|(history, _)| history)
}

/// Runs the dynamic until `stop` returns true after a step, or `max_steps`
/// elapse. Returns the history and the stopping step, if any.
pub fn run_until<F>(
    game: &dyn Game,
    dynamic: &dyn AdaptiveDynamic,
    max_steps: usize,
    seed: u64,
    mut stop: F,
) -> Result<(History, Option<usize>), DynamicsError>
where
    F: FnMut(&History) -> bool,
{
    let action_counts = game.action_counts();
    let k = dynamic.queries_per_step(&action_counts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = dynamic.strategy_map(&action_counts);
    let mut history = History {
        action_counts: action_counts.clone(),
        mixed: Vec::new(),
        realized: Vec::new(),
        answers: Vec::new(),
        transcript: QueryTranscript::new(),
    };
    let budget = QueryBudget::unlimited();
    for step in 1..=max_steps {
        let queries = dynamic.plan_queries(step, &history.realized, &action_counts);
        if queries.len() != k {
            return Err(DynamicsError::QueryLeak {
                step,
                expected: k,
                got: queries.len(),
            });
        }
        let mut payoffs = Vec::with_capacity(k);
        for q in &queries {
            let u = game.payoffs(q);
            history
                .transcript
                .record(
                    &budget,
                    QueryKind::PureProfile,
                    Payload::Ints(q.iter().map(|&a| a as i64).collect()),
                    Payload::Reals(u.clone()),
                )
                .expect("unlimited budget");
            payoffs.push(u);
        }
        let step_answers = StepAnswers { queries, payoffs };
        let profile = map.next(step, &history.realized, &step_answers);
        history.answers.push(step_answers);
        if profile.num_players() != action_counts.len()
            || (0..action_counts.len())
                .any(|i| profile.strategy(i).num_actions() != action_counts[i])
        {
            return Err(DynamicsError::StrategyShape { step });
        }
        let realized: Vec<usize> = profile
            .strategies()
            .iter()
            .map(|s| sample_action(s, &mut rng))
            .collect();
        history.mixed.push(profile);
        history.realized.push(realized);
        if stop(&history) {
            return Ok((history, Some(step)));
        }
    }
    Ok((history, None))
}

/// Outcome of a dynamic wrapped as a query algorithm.
#[derive(Debug, Clone)]
pub struct AlgorithmOutcome {
    pub profile: MixedProfile,
    pub steps: usize,
    pub queries: u64,
    pub stopped: bool,
}

/// Wraps a dynamic and a stopping rule as a query algorithm: the induced
/// solver plays the dynamic and spends `k * steps` queries until the rule
/// fires.
pub fn dynamic_to_algorithm<'a, F>(
    dynamic: &'a dyn AdaptiveDynamic,
    stop: F,
    max_steps: usize,
) -> impl FnMut(&dyn Game, u64) -> Result<AlgorithmOutcome, DynamicsError> + 'a
where
    F: FnMut(&History) -> bool + Copy + 'a,
{
    move |game, seed| {
        let (history, stopped_at) = run_until(game, dynamic, max_steps, seed, stop)?;
        let steps = stopped_at.unwrap_or(max_steps);
        Ok(AlgorithmOutcome {
            profile: history.mixed[steps - 1].clone(),
            steps,
            queries: history.transcript.count(),
            stopped: stopped_at.is_some(),
        })
    }
}

fn sample_action(strategy: &MixedStrategy, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for a in 0..strategy.num_actions() {
        acc += strategy.prob(a);
        if u < acc {
            return a;
        }
    }
    strategy.num_actions() - 1
}

/// Plays a fixed mixed profile; a `0`-queries dynamic.
pub struct ConstantDynamic {
    profile: MixedProfile,
}

impl ConstantDynamic {
    pub fn new(profile: MixedProfile) -> Self {
        Self { profile }
    }

    pub fn uniform(action_counts: &[usize]) -> Self {
        Self {
            profile: MixedProfile::uniform(action_counts),
        }
    }
}

struct ConstantMap(MixedProfile);

impl StrategyMap for ConstantMap {
    fn next(&mut self, _: usize, _: &[Vec<usize>], _: &StepAnswers) -> MixedProfile {
        self.0.clone()
    }
}

impl AdaptiveDynamic for ConstantDynamic {
    fn queries_per_step(&self, _: &[usize]) -> usize {
        0
    }

    fn plan_queries(&self, _: usize, _: &[Vec<usize>], _: &[usize]) -> Vec<Vec<usize>> {
        Vec::new()
    }

    fn strategy_map(&self, _: &[usize]) -> Box<dyn StrategyMap> {
        Box::new(ConstantMap(self.profile.clone()))
    }
}

/// The query plan shared by the one-step-lookback dynamics: at every step,
/// each player's every action against the previous realized profile (an
/// arbitrary fixed profile at step one), `sum(m_i)` queries in all.
fn lookback_plan(step: usize, realized: &[Vec<usize>], action_counts: &[usize]) -> Vec<Vec<usize>> {
    let n = action_counts.len();
    let base: Vec<usize> = if step == 1 {
        vec![0; n]
    } else {
        realized[step - 2].clone()
    };
    let mut out = Vec::with_capacity(action_counts.iter().sum());
    for player in 0..n {
        for action in 0..action_counts[player] {
            let mut q = base.clone();
            q[player] = action;
            out.push(q);
        }
    }
    out
}

fn query_offset(action_counts: &[usize], player: usize) -> usize {
    action_counts[..player].iter().sum()
}

/// Regret matching: play proportional to the positive part of the
/// cumulative regrets, uniform while no regret is positive. An optional
/// smoothing floor `eta` mixes in the uniform distribution. With `m`
/// actions per player this is an `n m`-queries dynamic.
pub struct RegretMatching {
    eta: f64,
}

impl RegretMatching {
    pub fn new() -> Self {
        Self { eta: 0.0 }
    }

    pub fn with_floor(eta: f64) -> Self {
        assert!((0.0..=1.0).contains(&eta));
        Self { eta }
    }
}

impl Default for RegretMatching {
    fn default() -> Self {
        Self::new()
    }
}

struct RegretMap {
    action_counts: Vec<usize>,
    eta: f64,
    /// cumulative regrets, per player per action
    regrets: Vec<Vec<f64>>,
}

impl StrategyMap for RegretMap {
    fn next(
        &mut self,
        step: usize,
        realized: &[Vec<usize>],
        answers: &StepAnswers,
    ) -> MixedProfile {
        // this step's queries were built on the previous realized profile,
        // so they price every deviation from it
        if step >= 2 {
            let prev = &realized[step - 2];
            #[allow(clippy::needless_range_loop)]
            for player in 0..self.action_counts.len() {
                let offset = query_offset(&self.action_counts, player);
                let u_played = answers.payoffs[offset + prev[player]][player];
                for a in 0..self.action_counts[player] {
                    self.regrets[player][a] += answers.payoffs[offset + a][player] - u_played;
                }
            }
        }
        let strategies = self
            .regrets
            .iter()
            .zip(&self.action_counts)
            .map(|(regrets, &m)| {
                let positive: Vec<f64> = regrets.iter().map(|r| r.max(0.0)).collect();
                let total: f64 = positive.iter().sum();
                let base: Vec<f64> = if total > 0.0 {
                    positive.iter().map(|r| r / total).collect()
                } else {
                    vec![1.0 / m as f64; m]
                };
                let probs: Vec<f64> = base
                    .iter()
                    .map(|p| (1.0 - self.eta) * p + self.eta / m as f64)
                    .collect();
                MixedStrategy::new(probs).expect("normalized")
            })
            .collect();
        MixedProfile::new(strategies)
    }
}

impl AdaptiveDynamic for RegretMatching {
    fn queries_per_step(&self, action_counts: &[usize]) -> usize {
        action_counts.iter().sum()
    }

    fn plan_queries(
        &self,
        step: usize,
        realized: &[Vec<usize>],
        action_counts: &[usize],
    ) -> Vec<Vec<usize>> {
        lookback_plan(step, realized, action_counts)
    }

    fn strategy_map(&self, action_counts: &[usize]) -> Box<dyn StrategyMap> {
        Box::new(RegretMap {
            action_counts: action_counts.to_vec(),
            eta: self.eta,
            regrets: action_counts.iter().map(|&m| vec![0.0; m]).collect(),
        })
    }
}

/// One regret-matching update in isolation: the profile played at `step`
/// given the recorded history, from a fresh map.
pub fn regret_matching_profile(
    step: usize,
    realized: &[Vec<usize>],
    answers: &[StepAnswers],
    action_counts: &[usize],
    eta: f64,
) -> MixedProfile {
    let dynamic = RegretMatching::with_floor(eta);
    let mut map = dynamic.strategy_map(action_counts);
    let mut out = None;
    for t in 1..=step {
        out = Some(map.next(t, &realized[..t - 1], &answers[t - 1]));
    }
    out.expect("step >= 1")
}

/// Best-reply play: a point mass on the best action against the previous
/// realized profile (lowest index on ties), uniform at the first step. An
/// `n m`-queries dynamic.
pub struct BestReplyDynamic;

struct BestReplyMap {
    action_counts: Vec<usize>,
}

impl StrategyMap for BestReplyMap {
    fn next(&mut self, step: usize, _: &[Vec<usize>], answers: &StepAnswers) -> MixedProfile {
        if step == 1 {
            return MixedProfile::uniform(&self.action_counts);
        }
        let strategies = (0..self.action_counts.len())
            .map(|player| {
                let m = self.action_counts[player];
                let offset = query_offset(&self.action_counts, player);
                let mut best = 0usize;
                let mut best_value = f64::NEG_INFINITY;
                for a in 0..m {
                    let u = answers.payoffs[offset + a][player];
                    if u > best_value {
                        best_value = u;
                        best = a;
                    }
                }
                MixedStrategy::pure(best, m)
            })
            .collect();
        MixedProfile::new(strategies)
    }
}

impl AdaptiveDynamic for BestReplyDynamic {
    fn queries_per_step(&self, action_counts: &[usize]) -> usize {
        action_counts.iter().sum()
    }

    fn plan_queries(
        &self,
        step: usize,
        realized: &[Vec<usize>],
        action_counts: &[usize],
    ) -> Vec<Vec<usize>> {
        lookback_plan(step, realized, action_counts)
    }

    fn strategy_map(&self, action_counts: &[usize]) -> Box<dyn StrategyMap> {
        Box::new(BestReplyMap {
            action_counts: action_counts.to_vec(),
        })
    }
}

/// Total-variation-style distance between two distributions over the same
/// action set: the sum of absolute probability differences.
pub fn d1(x: &MixedStrategy, y: &MixedStrategy) -> f64 {
    assert_eq!(x.num_actions(), y.num_actions());
    (0..x.num_actions())
        .map(|a| (x.prob(a) - y.prob(a)).abs())
        .sum()
}

/// Sampled lower bound on the dynamic's Lipschitz constant with respect to
/// its query answers.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub nu_hat: f64,
    pub alpha: f64,
    pub max_divergence: f64,
}

/// Replays seeded runs of the dynamic against answer streams perturbed by
/// at most `alpha` (grid-rounding adversary) and reports the largest
/// per-player strategy divergence divided by `alpha`. The perturbed replay
/// shares the exact run's realized history and query plan, so only the
/// answers differ. The estimate is a lower bound: the definition quantifies
/// over all answer sequences, the tester samples finitely many.
pub fn lipschitz_test(
    dynamic: &dyn AdaptiveDynamic,
    game: &dyn Game,
    steps: usize,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<LipschitzEstimate, DynamicsError> {
    assert!(alpha > 0.0);
    let policy = PrecisionPolicy::grid_rounding(alpha.min(1.0));
    let mut max_divergence = 0.0f64;
    for trial in 0..trials {
        let history = run_dynamic(game, dynamic, steps, seed.wrapping_add(trial as u64))?;
        let mut perturbed_map = dynamic.strategy_map(&history.action_counts);
        for t in 1..=history.steps() {
            let perturbed = StepAnswers {
                queries: history.answers[t - 1].queries.clone(),
                payoffs: history.answers[t - 1]
                    .payoffs
                    .iter()
                    .map(|row| policy.perturb(row, 0))
                    .collect(),
            };
            let alt = perturbed_map.next(t, &history.realized[..t - 1], &perturbed);
            for player in 0..history.action_counts.len() {
                let div = d1(history.mixed[t - 1].strategy(player), alt.strategy(player));
                max_divergence = max_divergence.max(div);
            }
        }
    }
    Ok(LipschitzEstimate {
        nu_hat: max_divergence / alpha,
        alpha,
        max_divergence,
    })
}

/// A finite-support mixture over pure profiles.
pub type ProfileMixture = Vec<(Vec<usize>, f64)>;

/// Queries and answers of one step of a distribution-queries dynamic.
#[derive(Debug, Clone, PartialEq)]
pub struct DistStepAnswers {
    pub queries: Vec<ProfileMixture>,
    pub payoffs: Vec<Vec<f64>>,
}

/// A `k`-distribution-queries dynamic: the per-step plan emits mixtures
/// over profiles instead of pure profiles, covering aggregate-statistic
/// dynamics in the fictitious-play family. Answers arrive through an
/// answer-precision policy, which is how the noisy-answer harness runs a
/// dynamic built for exact answers against within-`delta` streams.
pub trait DistributionDynamic {
    fn queries_per_step(&self, action_counts: &[usize]) -> usize;

    fn plan_queries(
        &self,
        step: usize,
        realized: &[Vec<usize>],
        action_counts: &[usize],
    ) -> Vec<ProfileMixture>;

    fn strategy_map(&self, action_counts: &[usize]) -> Box<dyn DistStrategyMap>;
}

/// Per-run strategy state of a distribution-queries dynamic.
pub trait DistStrategyMap {
    fn next(
        &mut self,
        step: usize,
        realized: &[Vec<usize>],
        answers: &DistStepAnswers,
    ) -> MixedProfile;
}

/// Run record of a distribution-queries dynamic.
#[derive(Debug, Clone)]
pub struct DistHistory {
    pub action_counts: Vec<usize>,
    pub mixed: Vec<MixedProfile>,
    pub realized: Vec<Vec<usize>>,
    pub answers: Vec<DistStepAnswers>,
    pub transcript: QueryTranscript,
}

impl DistHistory {
    pub fn steps(&self) -> usize {
        self.realized.len()
    }

    /// Strategy sequence recomputed from the recorded answers alone.
    pub fn replay(&self, dynamic: &dyn DistributionDynamic) -> Vec<MixedProfile> {
        let mut map = dynamic.strategy_map(&self.action_counts);
        (1..=self.steps())
            .map(|t| map.next(t, &self.realized[..t - 1], &self.answers[t - 1]))
            .collect()
    }
}

/// Runs a distribution-queries dynamic: each planned mixture is answered
/// with the exact expectation over its finite support, perturbed per the
/// policy (the exact policy recovers the noiseless dynamics model), and
/// recorded as one distribution query.
pub fn run_distribution_dynamic(
    game: &dyn Game,
    dynamic: &dyn DistributionDynamic,
    steps: usize,
    seed: u64,
    policy: &PrecisionPolicy,
) -> Result<DistHistory, DynamicsError> {
    let action_counts = game.action_counts();
    let k = dynamic.queries_per_step(&action_counts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = dynamic.strategy_map(&action_counts);
    let mut history = DistHistory {
        action_counts: action_counts.clone(),
        mixed: Vec::new(),
        realized: Vec::new(),
        answers: Vec::new(),
        transcript: QueryTranscript::new(),
    };
    let budget = QueryBudget::unlimited();
    for step in 1..=steps {
        let queries = dynamic.plan_queries(step, &history.realized, &action_counts);
        if queries.len() != k {
            return Err(DynamicsError::QueryLeak {
                step,
                expected: k,
                got: queries.len(),
            });
        }
        let mut payoffs = Vec::with_capacity(k);
        for mixture in &queries {
            let mut expectation = vec![0.0; action_counts.len()];
            for (profile, weight) in mixture {
                let u = game.payoffs(profile);
                for (e, v) in expectation.iter_mut().zip(&u) {
                    *e += weight * v;
                }
            }
            // the answer seed varies per entry so noisy channels stay
            // deterministic per run without repeating across queries
            let answer = policy.perturb(&expectation, seed ^ history.transcript.count());
            let query_text = mixture
                .iter()
                .map(|(profile, weight)| {
                    let actions: Vec<String> = profile.iter().map(|a| a.to_string()).collect();
                    format!(
                        "{}@{}",
                        crate::query::canonical_decimal(*weight),
                        actions.join(" ")
                    )
                })
                .collect::<Vec<_>>()
                .join(";");
            history
                .transcript
                .record(
                    &budget,
                    QueryKind::Distribution,
                    Payload::Text(query_text),
                    Payload::Reals(answer.clone()),
                )
                .expect("unlimited budget");
            payoffs.push(answer);
        }
        let step_answers = DistStepAnswers { queries, payoffs };
        let profile = map.next(step, &history.realized, &step_answers);
        history.answers.push(step_answers);
        if profile.num_players() != action_counts.len()
            || (0..action_counts.len())
                .any(|i| profile.strategy(i).num_actions() != action_counts[i])
        {
            return Err(DynamicsError::StrategyShape { step });
        }
        let realized: Vec<usize> = profile
            .strategies()
            .iter()
            .map(|s| sample_action(s, &mut rng))
            .collect();
        history.mixed.push(profile);
        history.realized.push(realized);
    }
    Ok(history)
}

/// Largest empirical swap regret over the realized plays: for each player
/// and ordered action pair `(a, b)`, the average gain from having played
/// `b` whenever `a` was played.
pub fn max_swap_regret(game: &dyn Game, realized: &[Vec<usize>]) -> f64 {
    assert!(!realized.is_empty());
    let n = game.num_players();
    let t = realized.len() as f64;
    let mut worst = 0.0f64;
    for player in 0..n {
        let m = game.num_actions(player);
        let mut gain = vec![vec![0.0f64; m]; m];
        let mut deviation = vec![0usize; n];
        for profile in realized {
            let played = profile[player];
            let u_played = game.payoff(player, profile);
            deviation.copy_from_slice(profile);
            #[allow(clippy::needless_range_loop)]
            for b in 0..m {
                deviation[player] = b;
                gain[played][b] += game.payoff(player, &deviation) - u_played;
            }
        }
        for row in &gain {
            for &g in row {
                worst = worst.max(g / t);
            }
        }
    }
    worst
}
