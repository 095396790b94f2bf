//! Normal-form games with payoffs in `[0,1]`: explicit payoff tensors, the
//! oracle-backed two-group game wrapping a map of the cube, best-reply
//! values, and the approximate-equilibrium verifiers.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::fixpoint::{BoxMap, Point};
use crate::query::canonical_decimal;

/// Probability below which an action does not count as support.
pub const SUPPORT_EPS: f64 = 1e-12;

/// Slack used by the verifiers when comparing payoffs.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("probabilities must be nonnegative and sum to one (sum = {0})")]
    InvalidDistribution(f64),
    #[error("profile space too large: {profiles} pure profiles exceed {limit}")]
    TooLarge { profiles: u128, limit: u128 },
    #[error("payoff {value} outside [0,1]")]
    PayoffOutOfRange { value: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Mixed strategy of one player.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedStrategy {
    probs: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(probs: Vec<f64>) -> Result<Self, GameError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(GameError::InvalidDistribution(sum));
        }
        Ok(Self { probs })
    }

    pub fn pure(action: usize, num_actions: usize) -> Self {
        assert!(action < num_actions);
        let mut probs = vec![0.0; num_actions];
        probs[action] = 1.0;
        Self { probs }
    }

    pub fn uniform(num_actions: usize) -> Self {
        assert!(num_actions > 0);
        Self {
            probs: vec![1.0 / num_actions as f64; num_actions],
        }
    }

    pub fn num_actions(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Actions with probability above [`SUPPORT_EPS`].
    pub fn support(&self) -> Vec<usize> {
        (0..self.probs.len())
            .filter(|&a| self.probs[a] > SUPPORT_EPS)
            .collect()
    }
}

/// One mixed strategy per player.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProfile {
    strategies: Vec<MixedStrategy>,
}

impl MixedProfile {
    pub fn new(strategies: Vec<MixedStrategy>) -> Self {
        Self { strategies }
    }

    pub fn pure(profile: &[usize], action_counts: &[usize]) -> Self {
        Self {
            strategies: profile
                .iter()
                .zip(action_counts)
                .map(|(&a, &m)| MixedStrategy::pure(a, m))
                .collect(),
        }
    }

    pub fn uniform(action_counts: &[usize]) -> Self {
        Self {
            strategies: action_counts
                .iter()
                .map(|&m| MixedStrategy::uniform(m))
                .collect(),
        }
    }

    pub fn num_players(&self) -> usize {
        self.strategies.len()
    }

    pub fn strategy(&self, player: usize) -> &MixedStrategy {
        &self.strategies[player]
    }

    pub fn strategies(&self) -> &[MixedStrategy] {
        &self.strategies
    }
}

/// A normal-form game answering pure-profile payoff queries.
pub trait Game {
    fn num_players(&self) -> usize;
    fn num_actions(&self, player: usize) -> usize;
    /// Payoffs of every player at a pure action profile.
    fn payoffs(&self, profile: &[usize]) -> Vec<f64>;

    fn payoff(&self, player: usize, profile: &[usize]) -> f64 {
        self.payoffs(profile)[player]
    }

    fn action_counts(&self) -> Vec<usize> {
        (0..self.num_players())
            .map(|i| self.num_actions(i))
            .collect()
    }

    fn num_profiles(&self) -> u128 {
        (0..self.num_players())
            .map(|i| self.num_actions(i) as u128)
            .product()
    }
}

/// Explicit payoff tensor, stored per profile in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitGame {
    action_counts: Vec<usize>,
    /// `payoffs[profile_index * n + player]`
    payoffs: Vec<f64>,
}

impl ExplicitGame {
    pub fn new(action_counts: Vec<usize>, payoffs: Vec<f64>) -> Result<Self, GameError> {
        if action_counts.is_empty() || action_counts.contains(&0) {
            return Err(GameError::InvalidParameters(
                "every player needs an action".into(),
            ));
        }
        let profiles: u128 = action_counts.iter().map(|&m| m as u128).product();
        let expected = profiles * action_counts.len() as u128;
        if payoffs.len() as u128 != expected {
            return Err(GameError::InvalidParameters(format!(
                "expected {expected} payoffs, got {}",
                payoffs.len()
            )));
        }
        for &value in &payoffs {
            if !(0.0..=1.0).contains(&value) {
                return Err(GameError::PayoffOutOfRange { value });
            }
        }
        Ok(Self {
            action_counts,
            payoffs,
        })
    }

    /// Builds the tensor by evaluating `f` on every profile in lex order.
    pub fn from_fn(
        action_counts: Vec<usize>,
        mut f: impl FnMut(&[usize]) -> Vec<f64>,
    ) -> Result<Self, GameError> {
        let n = action_counts.len();
        let mut payoffs = Vec::new();
        let mut profile = vec![0usize; n];
        loop {
            let row = f(&profile);
            assert_eq!(row.len(), n, "payoff row must cover every player");
            payoffs.extend_from_slice(&row);
            if !advance_profile(&mut profile, &action_counts) {
                break;
            }
        }
        Self::new(action_counts, payoffs)
    }

    /// Lexicographic index of a profile (first player's action most
    /// significant).
    pub fn profile_index(&self, profile: &[usize]) -> usize {
        assert_eq!(profile.len(), self.action_counts.len());
        let mut idx = 0usize;
        for (a, m) in profile.iter().zip(&self.action_counts) {
            assert!(a < m, "action out of range");
            idx = idx * m + a;
        }
        idx
    }

    pub fn payoff_tensor(&self) -> &[f64] {
        &self.payoffs
    }

    /// Serialization: header `n m_1..m_n`, then one line of `n` payoffs per
    /// profile in lexicographic order, 17-significant-digit decimals.
    pub fn to_text(&self) -> String {
        let n = self.action_counts.len();
        let mut out = format!(
            "{} {}\n",
            n,
            self.action_counts
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        for row in self.payoffs.chunks(n) {
            let parts: Vec<String> = row.iter().map(|v| canonical_decimal(*v)).collect();
            out.push_str(&parts.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GameError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(GameError::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(GameError::Parse {
                line: 1,
                msg: "header must be `n m_1..m_n`".into(),
            });
        }
        let n: usize = fields[0].parse().map_err(|e| GameError::Parse {
            line: 1,
            msg: format!("bad n: {e}"),
        })?;
        if fields.len() != n + 1 {
            return Err(GameError::Parse {
                line: 1,
                msg: format!("expected {n} action counts, got {}", fields.len() - 1),
            });
        }
        let action_counts: Result<Vec<usize>, _> =
            fields[1..].iter().map(|f| f.parse::<usize>()).collect();
        let action_counts = action_counts.map_err(|e| GameError::Parse {
            line: 1,
            msg: format!("{e}"),
        })?;
        let profiles: usize = action_counts.iter().product();
        let mut payoffs = Vec::with_capacity(profiles * n);
        let mut rows = 0usize;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 2;
            let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|e| GameError::Parse {
                line: line_no,
                msg: format!("{e}"),
            })?;
            if row.len() != n {
                return Err(GameError::Parse {
                    line: line_no,
                    msg: format!("expected {n} payoffs, got {}", row.len()),
                });
            }
            payoffs.extend_from_slice(&row);
            rows += 1;
        }
        if rows != profiles {
            return Err(GameError::Parse {
                line: rows + 2,
                msg: format!("expected {profiles} payoff rows, got {rows}"),
            });
        }
        Self::new(action_counts, payoffs)
    }
}

impl Game for ExplicitGame {
    fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    fn num_actions(&self, player: usize) -> usize {
        self.action_counts[player]
    }

    fn payoffs(&self, profile: &[usize]) -> Vec<f64> {
        let n = self.action_counts.len();
        let idx = self.profile_index(profile);
        self.payoffs[idx * n..(idx + 1) * n].to_vec()
    }

    fn payoff(&self, player: usize, profile: &[usize]) -> f64 {
        let n = self.action_counts.len();
        self.payoffs[self.profile_index(profile) * n + player]
    }
}

/// Two-group game wrapping a map `f` of the cube. Group one (players
/// `0..n`) plays vector `a`, group two (players `n..2n`) plays vector `b`;
/// all actions lie on the grid `{0, 1/k, ..., 1}` with
/// `k = ceil((lambda + 3) / eps)`. Payoffs, shifted into `[0,1]`:
///
/// * group one: `1 - (a_i - b_i)^2` — match the other group;
/// * group two: `1 - (b_i - f_i(a))^2` — match the map's value.
///
/// The additive shift preserves both equilibrium notions exactly. A
/// pure-profile query evaluates `f` once per distinct `a` (memoized); each
/// query still answers with all `2n` payoffs.
pub struct FunctionGame {
    f: Rc<dyn BoxMap>,
    lambda: f64,
    eps: f64,
    k: usize,
    eval_cache: RefCell<HashMap<Vec<usize>, Rc<Vec<f64>>>>,
    distinct_evals: Cell<usize>,
}

/// Grid resolution `k = ceil((lambda + 3) / eps)`, snapping near-integer
/// ratios before the ceiling so exact constants stay exact.
pub fn grid_resolution(lambda: f64, eps: f64) -> Result<usize, GameError> {
    // NaN fails both guards
    if lambda.is_nan() || lambda < 0.0 || eps.is_nan() || eps <= 0.0 {
        return Err(GameError::InvalidParameters(format!(
            "lambda={lambda}, eps={eps}"
        )));
    }
    let raw = (lambda + 3.0) / eps;
    let snapped = if (raw - raw.round()).abs() <= 1e-9 * raw.abs().max(1.0) {
        raw.round()
    } else {
        raw.ceil()
    };
    if !(3.0..=1e9).contains(&snapped) {
        return Err(GameError::InvalidParameters(format!(
            "grid resolution {snapped} out of range"
        )));
    }
    Ok(snapped as usize)
}

/// Builds the two-group game for a map with Lipschitz constant `lambda` and
/// target accuracy `eps`.
pub fn game_from_function(
    f: Rc<dyn BoxMap>,
    lambda: f64,
    eps: f64,
) -> Result<FunctionGame, GameError> {
    let k = grid_resolution(lambda, eps)?;
    Ok(FunctionGame {
        f,
        lambda,
        eps,
        k,
        eval_cache: RefCell::new(HashMap::new()),
        distinct_evals: Cell::new(0),
    })
}

impl FunctionGame {
    pub fn dimension(&self) -> usize {
        self.f.dimension()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn map(&self) -> &Rc<dyn BoxMap> {
        &self.f
    }

    /// Number of distinct `a`-vectors on which `f` has been evaluated.
    pub fn distinct_evals(&self) -> usize {
        self.distinct_evals.get()
    }

    pub fn grid_value(&self, action: usize) -> f64 {
        action as f64 / self.k as f64
    }

    /// `f` evaluated at the grid point of the group-one actions, memoized.
    pub fn f_of_actions(&self, a: &[usize]) -> Rc<Vec<f64>> {
        if let Some(hit) = self.eval_cache.borrow().get(a) {
            return Rc::clone(hit);
        }
        let x: Vec<f64> = a.iter().map(|&ai| self.grid_value(ai)).collect();
        let point = Point::new(x).expect("grid actions lie in the cube");
        let value = Rc::new(self.f.eval(&point).coords().to_vec());
        self.eval_cache
            .borrow_mut()
            .insert(a.to_vec(), Rc::clone(&value));
        self.distinct_evals.set(self.distinct_evals.get() + 1);
        value
    }

    /// All pure `eps`-well-supported equilibria, enumerated coordinatewise:
    /// once `f(a)` is fixed the two payoff groups decouple per coordinate,
    /// so for each `a` the admissible `b_i` form independent candidate sets.
    pub fn enumerate_pure_wsne(&self, eps: f64) -> Result<Vec<Vec<usize>>, GameError> {
        let n = self.dimension();
        let k = self.k;
        let a_profiles = ((k + 1) as u128).pow(n as u32);
        if a_profiles > 20_000_000 {
            return Err(GameError::TooLarge {
                profiles: a_profiles,
                limit: 20_000_000,
            });
        }
        let mut out = Vec::new();
        let mut a = vec![0usize; n];
        let a_counts = vec![k + 1; n];
        loop {
            let fa = self.f_of_actions(&a);
            let mut cands: Vec<Vec<usize>> = Vec::with_capacity(n);
            let mut feasible = true;
            for i in 0..n {
                let min_sq = (0..=k)
                    .map(|b| (self.grid_value(b) - fa[i]).powi(2))
                    .fold(f64::INFINITY, f64::min);
                let set: Vec<usize> = (0..=k)
                    .filter(|&b| {
                        let bv = self.grid_value(b);
                        let group1 = (self.grid_value(a[i]) - bv).powi(2) <= eps + TIE_EPS;
                        let group2 = (bv - fa[i]).powi(2) <= min_sq + eps + TIE_EPS;
                        group1 && group2
                    })
                    .collect();
                if set.is_empty() {
                    feasible = false;
                    break;
                }
                cands.push(set);
            }
            if feasible {
                let radices: Vec<usize> = cands.iter().map(Vec::len).collect();
                let mut idx = vec![0usize; n];
                loop {
                    let mut profile = Vec::with_capacity(2 * n);
                    profile.extend_from_slice(&a);
                    profile.extend((0..n).map(|i| cands[i][idx[i]]));
                    out.push(profile);
                    if out.len() > 5_000_000 {
                        return Err(GameError::TooLarge {
                            profiles: out.len() as u128,
                            limit: 5_000_000,
                        });
                    }
                    let mut advanced = false;
                    for j in (0..n).rev() {
                        idx[j] += 1;
                        if idx[j] < radices[j] {
                            advanced = true;
                            break;
                        }
                        idx[j] = 0;
                    }
                    if !advanced {
                        break;
                    }
                }
            }
            if !advance_profile(&mut a, &a_counts) {
                break;
            }
        }
        Ok(out)
    }
}

impl Game for FunctionGame {
    fn num_players(&self) -> usize {
        2 * self.dimension()
    }

    fn num_actions(&self, _player: usize) -> usize {
        self.k + 1
    }

    fn payoffs(&self, profile: &[usize]) -> Vec<f64> {
        let n = self.dimension();
        assert_eq!(profile.len(), 2 * n, "profile must cover both groups");
        let (a, b) = profile.split_at(n);
        let fa = self.f_of_actions(a);
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let d = self.grid_value(a[i]) - self.grid_value(b[i]);
            out.push(1.0 - d * d);
        }
        for i in 0..n {
            let d = self.grid_value(b[i]) - fa[i];
            out.push(1.0 - d * d);
        }
        out
    }
}

fn advance_profile(profile: &mut [usize], action_counts: &[usize]) -> bool {
    for i in (0..profile.len()).rev() {
        profile[i] += 1;
        if profile[i] < action_counts[i] {
            return true;
        }
        profile[i] = 0;
    }
    false
}

/// Expected payoff of `player` playing `action` against the opponents'
/// mixed strategies, by enumeration over the opponents' support product.
pub fn expected_payoff(
    game: &dyn Game,
    player: usize,
    action: usize,
    profile: &MixedProfile,
) -> f64 {
    let n = game.num_players();
    assert_eq!(profile.num_players(), n);
    let supports: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            if i == player {
                vec![action]
            } else {
                profile.strategy(i).support()
            }
        })
        .collect();
    let combos: f64 = supports.iter().map(|s| s.len() as f64).product();
    assert!(combos <= 2e7, "support product too large for enumeration");

    let mut idx = vec![0usize; n];
    let mut pure = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for i in 0..n {
            pure[i] = supports[i][idx[i]];
            if i != player {
                weight *= profile.strategy(i).prob(pure[i]);
            }
        }
        if weight > 0.0 {
            total += weight * game.payoff(player, &pure);
        }
        let mut advanced = false;
        for j in (0..n).rev() {
            idx[j] += 1;
            if idx[j] < supports[j].len() {
                advanced = true;
                break;
            }
            idx[j] = 0;
        }
        if !advanced {
            break;
        }
    }
    total
}

/// Best-reply value: the maximum expected payoff of `player` over its pure
/// actions against the opponents' mixed strategies. Ties resolve to the
/// lowest action index wherever a single best reply is needed.
pub fn best_reply_value(game: &dyn Game, player: usize, profile: &MixedProfile) -> f64 {
    (0..game.num_actions(player))
        .map(|a| expected_payoff(game, player, a, profile))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The quadratic form of a group-one player's expected payoff against a
/// group-two mixed strategy on the same grid:
/// `1 - (a_i - E[y_i])^2 - Var(y_i)`.
pub fn expected_payoff_quadratic(action: usize, k: usize, y: &MixedStrategy) -> f64 {
    let a = action as f64 / k as f64;
    let mut mean = 0.0;
    let mut second = 0.0;
    for b in 0..y.num_actions() {
        let bv = b as f64 / k as f64;
        mean += y.prob(b) * bv;
        second += y.prob(b) * bv * bv;
    }
    let var = second - mean * mean;
    1.0 - (a - mean).powi(2) - var
}

/// True iff no player can gain more than `eps` by deviating.
pub fn is_eps_ne(game: &dyn Game, profile: &MixedProfile, eps: f64) -> bool {
    for player in 0..game.num_players() {
        let strategy = profile.strategy(player);
        let mut value = 0.0;
        let mut best = f64::NEG_INFINITY;
        for a in 0..game.num_actions(player) {
            let u = expected_payoff(game, player, a, profile);
            best = best.max(u);
            if strategy.prob(a) > 0.0 {
                value += strategy.prob(a) * u;
            }
        }
        if value < best - eps - TIE_EPS {
            return false;
        }
    }
    true
}

/// True iff every support action of every player is an `eps`-best reply.
pub fn is_eps_wsne(game: &dyn Game, profile: &MixedProfile, eps: f64) -> bool {
    for player in 0..game.num_players() {
        let mut best = f64::NEG_INFINITY;
        let mut support_values = Vec::new();
        for a in 0..game.num_actions(player) {
            let u = expected_payoff(game, player, a, profile);
            best = best.max(u);
            if profile.strategy(player).prob(a) > SUPPORT_EPS {
                support_values.push(u);
            }
        }
        if support_values.iter().any(|u| *u < best - eps - TIE_EPS) {
            return false;
        }
    }
    true
}

/// All pure profiles that are `eps`-well-supported equilibria, by full
/// enumeration. Refuses profile spaces beyond `10^7`.
pub fn brute_force_pure_wsne(game: &dyn Game, eps: f64) -> Result<Vec<Vec<usize>>, GameError> {
    let profiles = game.num_profiles();
    if profiles > 10_000_000 {
        return Err(GameError::TooLarge {
            profiles,
            limit: 10_000_000,
        });
    }
    let n = game.num_players();
    let action_counts = game.action_counts();
    let mut out = Vec::new();
    let mut profile = vec![0usize; n];
    let mut deviation = vec![0usize; n];
    loop {
        let payoffs = game.payoffs(&profile);
        let mut ok = true;
        'players: for player in 0..n {
            deviation.copy_from_slice(&profile);
            for alt in 0..action_counts[player] {
                deviation[player] = alt;
                if game.payoff(player, &deviation) > payoffs[player] + eps + TIE_EPS {
                    ok = false;
                    break 'players;
                }
            }
        }
        if ok {
            out.push(profile.clone());
        }
        if !advance_profile(&mut profile, &action_counts) {
            break;
        }
    }
    Ok(out)
}
