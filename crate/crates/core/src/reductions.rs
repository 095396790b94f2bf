//! The adapter chain between the problems: equilibrium-to-fixed-point
//! extraction, the game wrapper over a map, the map wrapper over a path,
//! the sampling reduction from distribution to pure queries, the one-query
//! payoff extraction on exact channels, and the well-supported-from-plain
//! approximate-equilibrium construction.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fixpoint::{
    build_path_function, BoxMap, CellIndex, Certificate, FixpointError, PathFunction, Point,
};
use crate::games::{
    expected_payoff, game_from_function, is_eps_ne, is_eps_wsne, ExplicitGame, FunctionGame, Game,
    GameError, MixedProfile, MixedStrategy,
};
use crate::paths::{HVertex, PathError, SimplePath};
use crate::query::{Payload, QueryBudget, QueryError, QueryKind, QueryTranscript};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("profile is not a {eps}-well-supported equilibrium")]
    NotAnEquilibrium { eps: f64 },
    #[error("player {player}'s support exceeds a one-step grid window")]
    SupportTooWide { player: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("payoff {value} is not binary")]
    NonBinaryPayoffs { value: f64 },
    #[error("{profiles} profiles exceed the exact-arithmetic limit {limit}")]
    TooManyProfiles { profiles: u128, limit: u128 },
    #[error("map lacks a positive displacement certificate")]
    CertificationMissing,
    #[error("solver failed: {0}")]
    SolverFailed(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Fixpoint(#[from] FixpointError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

/// Per-coordinate two-point support windows of a two-group game profile:
/// group one confined to `{alpha_i, alpha_i + 1}`, group two to
/// `{beta_i, beta_i + 1}` (grid indices).
#[derive(Debug, Clone, PartialEq)]
pub struct SupportWindow {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
}

/// Confirms every player's support fits a one-step grid window.
pub fn support_windows(
    game: &FunctionGame,
    profile: &MixedProfile,
) -> Result<SupportWindow, ReductionError> {
    let n = game.dimension();
    let k = game.k();
    let mut window = |player: usize| -> Result<usize, ReductionError> {
        let support = profile.strategy(player).support();
        let lo = *support
            .first()
            .ok_or(ReductionError::SupportTooWide { player })?;
        let hi = *support.last().expect("nonempty support");
        if hi - lo > 1 {
            return Err(ReductionError::SupportTooWide { player });
        }
        Ok(lo.min(k.saturating_sub(1)))
    };
    let alpha: Result<Vec<usize>, _> = (0..n).map(&mut window).collect();
    let beta: Result<Vec<usize>, _> = (n..2 * n).map(&mut window).collect();
    Ok(SupportWindow {
        alpha: alpha?,
        beta: beta?,
    })
}

/// Extracts an approximate fixed point of the wrapped map from a
/// `3/(4k^2)`-well-supported equilibrium: any pure group-one support
/// profile works; this takes the lowest-index support action per
/// coordinate. The returned point `c` satisfies
/// `||c - f(c)||_inf <= (lambda + 3)/k <= eps`.
pub fn wsne_to_fixed_point(
    game: &FunctionGame,
    profile: &MixedProfile,
) -> Result<Point, ReductionError> {
    let k = game.k() as f64;
    let eq_eps = 3.0 / (4.0 * k * k);
    if !is_eps_wsne(game, profile, eq_eps) {
        return Err(ReductionError::NotAnEquilibrium { eps: eq_eps });
    }
    let windows = support_windows(game, profile)?;
    let _ = windows;
    let n = game.dimension();
    let coords: Vec<f64> = (0..n)
        .map(|i| {
            let support = profile.strategy(i).support();
            game.grid_value(support[0])
        })
        .collect();
    Ok(Point::new(coords).expect("grid coordinates lie in the cube"))
}

/// Pure-profile payoff channel over a two-group game, with transcript
/// accounting: one recorded query per call, answered with all `2n` payoffs.
pub struct WsnOracle<'a> {
    game: &'a FunctionGame,
    transcript: QueryTranscript,
    budget: QueryBudget,
}

impl WsnOracle<'_> {
    pub fn k(&self) -> usize {
        self.game.k()
    }

    pub fn num_players(&self) -> usize {
        self.game.num_players()
    }

    pub fn num_actions(&self) -> usize {
        self.game.k() + 1
    }

    pub fn queries_used(&self) -> u64 {
        self.transcript.count()
    }

    pub fn query(&mut self, profile: &[usize]) -> Result<Vec<f64>, ReductionError> {
        let payoffs = self.game.payoffs(profile);
        self.transcript.record(
            &self.budget,
            QueryKind::PureProfile,
            Payload::Ints(profile.iter().map(|&a| a as i64).collect()),
            Payload::Reals(payoffs.clone()),
        )?;
        Ok(payoffs)
    }
}

#[derive(Debug)]
pub struct AfpViaWsnReport {
    pub point: Point,
    pub equilibrium: MixedProfile,
    pub k: usize,
    pub queries: u64,
    pub distinct_map_evals: usize,
    pub transcript: QueryTranscript,
}

/// Solves the approximate-fixed-point problem through a well-supported
/// equilibrium solver: wraps the map in the two-group game, lets the solver
/// query pure profiles (each distinct profile evaluates the map once), and
/// extracts the fixed point from the returned equilibrium.
pub fn solve_afp_via_wsn<S>(
    f: Rc<dyn BoxMap>,
    lambda: f64,
    eps: f64,
    budget: QueryBudget,
    solver: S,
) -> Result<AfpViaWsnReport, ReductionError>
where
    S: FnOnce(&mut WsnOracle<'_>) -> Result<MixedProfile, ReductionError>,
{
    let game = game_from_function(f, lambda, eps)?;
    let mut oracle = WsnOracle {
        game: &game,
        transcript: QueryTranscript::new(),
        budget,
    };
    let equilibrium = solver(&mut oracle)?;
    // verification below evaluates the map on its own; the solver's
    // accounting stops here
    let distinct_map_evals = game.distinct_evals();
    let point = wsne_to_fixed_point(&game, &equilibrium)?;
    Ok(AfpViaWsnReport {
        point,
        equilibrium,
        k: game.k(),
        queries: oracle.transcript.count(),
        distinct_map_evals,
        transcript: oracle.transcript,
    })
}

/// Point-query channel over a path-following map, with the point-to-vertex
/// accounting of the underlying oracle: each point query records the vertex
/// it maps to — the containing inner cell's vertex for points of
/// `[2/6, 4/6]^n`, the start vertex otherwise.
pub struct AfpOracle<'a> {
    f: &'a PathFunction,
    path: &'a SimplePath,
    transcript: QueryTranscript,
    budget: QueryBudget,
}

impl AfpOracle<'_> {
    pub fn dimension(&self) -> usize {
        self.f.dimension()
    }

    pub fn queries_used(&self) -> u64 {
        self.transcript.count()
    }

    pub fn query(&mut self, x: &Point) -> Result<Point, ReductionError> {
        let vertex = esp_vertex_for_point(x);
        let info = self.path.esp_answer(&vertex)?;
        self.transcript.record(
            &self.budget,
            QueryKind::Esp,
            Payload::Ints(vertex.coords().iter().map(|&c| c as i64).collect()),
            Payload::Text(info.to_string()),
        )?;
        Ok(self.f.eval(x))
    }
}

/// Vertex a point query corresponds to: the containing inner cell's vertex
/// inside `[2/6, 4/6]^n`, the start vertex everywhere else.
pub fn esp_vertex_for_point(x: &Point) -> HVertex {
    let n = x.dimension();
    let inner = x
        .coords()
        .iter()
        .all(|&v| (2.0 / 6.0..=4.0 / 6.0).contains(&v));
    if !inner {
        return HVertex::all_ones(n);
    }
    let coords: Vec<i64> = x
        .coords()
        .iter()
        .map(|&v| (((v * 6.0).floor() as i64) - 1).clamp(1, 2))
        .collect();
    HVertex::from_coords(&coords).expect("inner cell vertex")
}

#[derive(Debug)]
pub struct EspViaAfpReport {
    pub end_vertex: HVertex,
    pub reported_point: Point,
    pub esp_queries: u64,
    pub afp_queries: u64,
    pub transcript: QueryTranscript,
}

/// Finds the end of a simple path through an approximate-fixed-point
/// solver: builds the path-following map, maps every point query to one
/// vertex query, and decodes the solver's reported fixed point to the cell
/// whose center is nearest. Correct whenever the reported point lies in the
/// certified end cell.
pub fn solve_esp_via_afp<S>(
    path: &SimplePath,
    certificate: &Certificate,
    budget: QueryBudget,
    solver: S,
) -> Result<EspViaAfpReport, ReductionError>
where
    S: FnOnce(&mut AfpOracle<'_>) -> Result<Point, ReductionError>,
{
    if certificate.eps_star <= 0.0 || certificate.path_hash != path.path_hash() {
        return Err(ReductionError::CertificationMissing);
    }
    let f = build_path_function(path)?;
    let mut oracle = AfpOracle {
        f: &f,
        path,
        transcript: QueryTranscript::new(),
        budget,
    };
    let reported = solver(&mut oracle)?;
    let cell = CellIndex::nearest_center(&reported);
    let coords: Vec<i64> = cell
        .indices()
        .iter()
        .map(|&c| (c as i64 - 1).clamp(1, 2))
        .collect();
    let end_vertex = HVertex::from_coords(&coords).expect("decoded vertex");
    let queries = oracle.transcript.count();
    Ok(EspViaAfpReport {
        end_vertex,
        reported_point: reported,
        esp_queries: queries,
        afp_queries: queries,
        transcript: oracle.transcript,
    })
}

/// Answers a distribution query over action profiles by sampling
/// `ceil(n / delta^2)` pure profiles i.i.d. from the mixture (`n` players),
/// querying each, and returning the per-player empirical means.
pub fn sample_dist_query(
    game: &dyn Game,
    mixture: &[(Vec<usize>, f64)],
    delta: f64,
    seed: u64,
    transcript: &mut QueryTranscript,
    budget: &QueryBudget,
) -> Result<Vec<f64>, ReductionError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ReductionError::PreconditionViolated(format!(
            "delta {delta} outside (0,1]"
        )));
    }
    let total: f64 = mixture.iter().map(|(_, w)| w).sum();
    if mixture.is_empty() || (total - 1.0).abs() > 1e-9 || mixture.iter().any(|(_, w)| *w <= 0.0) {
        return Err(ReductionError::PreconditionViolated(
            "invalid mixture".into(),
        ));
    }
    let n = game.num_players();
    let samples = (n as f64 / (delta * delta)).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = vec![0.0; n];
    for _ in 0..samples {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut chosen = &mixture[mixture.len() - 1].0;
        for (profile, w) in mixture {
            acc += w;
            if u < acc {
                chosen = profile;
                break;
            }
        }
        let payoffs = game.payoffs(chosen);
        transcript.record(
            budget,
            QueryKind::PureProfile,
            Payload::Ints(chosen.iter().map(|&a| a as i64).collect()),
            Payload::Reals(payoffs.clone()),
        )?;
        for (m, p) in mean.iter_mut().zip(&payoffs) {
            *m += p / samples as f64;
        }
    }
    Ok(mean)
}

/// Recovers the whole payoff tensor of a binary-payoff game from a single
/// exact-answer distribution query: weights `2^j / (2^N - 1)` over the `N`
/// lexicographic profiles make the exact expectation a base-two encoding of
/// every payoff bit.
pub fn one_query_extraction(
    game: &ExplicitGame,
    transcript: &mut QueryTranscript,
    budget: &QueryBudget,
) -> Result<ExplicitGame, ReductionError> {
    let profiles = game.num_profiles();
    if profiles > 127 {
        return Err(ReductionError::TooManyProfiles {
            profiles,
            limit: 127,
        });
    }
    let n = game.num_players();
    let big_n = profiles as u32;
    for &value in game.payoff_tensor() {
        if value != 0.0 && value != 1.0 {
            return Err(ReductionError::NonBinaryPayoffs { value });
        }
    }
    // exact expectation numerators over the common denominator 2^N - 1
    let mut numerators = vec![0u128; n];
    let tensor = game.payoff_tensor();
    for j in 0..big_n as usize {
        for (player, numerator) in numerators.iter_mut().enumerate() {
            if tensor[j * n + player] == 1.0 {
                *numerator |= 1u128 << j;
            }
        }
    }
    transcript.record(
        budget,
        QueryKind::Distribution,
        Payload::Text(format!(
            "x(a(j)) = 2^j / (2^{big_n} - 1), lexicographic profiles"
        )),
        Payload::Text(
            numerators
                .iter()
                .map(|u| format!("{u}/(2^{big_n}-1)"))
                .collect::<Vec<_>>()
                .join(" "),
        ),
    )?;
    // decode every payoff bit from the exact answer
    let mut decoded = vec![0.0; tensor.len()];
    for j in 0..big_n as usize {
        for (player, numerator) in numerators.iter().enumerate() {
            decoded[j * n + player] = ((numerator >> j) & 1) as f64;
        }
    }
    Ok(ExplicitGame::new(game.action_counts(), decoded)?)
}

/// Where the payoff values used by [`classify_actions`] come from.
#[derive(Debug, Clone, Copy)]
pub enum ValueSource {
    /// Exact expected payoffs.
    Exact,
    /// Empirical means of seeded opponent samples, sized so that all
    /// estimates are within `eps/8` of truth except with probability
    /// `failure_budget`.
    Sampled { failure_budget: f64, seed: u64 },
}

/// Samples per estimated action value in sampled mode:
/// `ceil(32 ln(2 m n / failure_budget) / eps^2)`.
pub fn sampled_value_count(m: usize, n: usize, eps: f64, failure_budget: f64) -> usize {
    (32.0 * (2.0 * m as f64 * n as f64 / failure_budget).ln() / (eps * eps)).ceil() as usize
}

/// Worst-case per-value sample count preset for the fixed
/// `eps = 10^-8` regime; listed for comparison, far beyond desk scale.
pub fn reference_sample_count(n_players: u128) -> u128 {
    10u128.pow(18) * n_players
}

/// Action classification against a mixed profile: good actions within
/// `eps/4` of the best reply, bad actions more than `eps/2` below it,
/// medium in between. With `eps/8`-precise sampled values a single
/// threshold `br_hat - 3 eps/8` separates the classes: every truly good
/// action classifies good and every truly bad one classifies bad; where the
/// medium actions land makes no difference downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedActions {
    pub good: Vec<usize>,
    pub medium: Vec<usize>,
    pub bad: Vec<usize>,
    /// A representative good action (the value-maximizing one).
    pub representative: usize,
}

pub fn classify_actions(
    game: &dyn Game,
    profile: &MixedProfile,
    player: usize,
    eps: f64,
    source: ValueSource,
) -> ClassifiedActions {
    assert!(eps > 0.0);
    let m = game.num_actions(player);
    let values: Vec<f64> = match source {
        ValueSource::Exact => (0..m)
            .map(|a| expected_payoff(game, player, a, profile))
            .collect(),
        ValueSource::Sampled {
            failure_budget,
            seed,
        } => {
            let n = game.num_players();
            let samples = sampled_value_count(m, n, eps, failure_budget);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(player as u64));
            let mut pure = vec![0usize; n];
            (0..m)
                .map(|a| {
                    let mut mean = 0.0;
                    for _ in 0..samples {
                        #[allow(clippy::needless_range_loop)]
                        for i in 0..n {
                            pure[i] = if i == player {
                                a
                            } else {
                                sample_action(profile.strategy(i), &mut rng)
                            };
                        }
                        mean += game.payoff(player, &pure);
                    }
                    mean / samples as f64
                })
                .collect()
        }
    };
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let representative = values
        .iter()
        .position(|v| *v == best)
        .expect("some action attains the maximum");

    let mut good = Vec::new();
    let mut medium = Vec::new();
    let mut bad = Vec::new();
    match source {
        ValueSource::Exact => {
            for (a, &u) in values.iter().enumerate() {
                if u >= best - eps / 4.0 {
                    good.push(a);
                } else if u < best - eps / 2.0 {
                    bad.push(a);
                } else {
                    medium.push(a);
                }
            }
        }
        ValueSource::Sampled { .. } => {
            let threshold = best - 3.0 * eps / 8.0;
            for (a, &u) in values.iter().enumerate() {
                if u >= threshold {
                    good.push(a);
                } else {
                    bad.push(a);
                }
            }
        }
    }
    ClassifiedActions {
        good,
        medium,
        bad,
        representative,
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

/// Builds an `eps`-well-supported equilibrium from an
/// `eps^2/(16n)`-approximate equilibrium by moving all probability mass off
/// the medium and bad actions onto a representative good action.
pub fn wsne_from_ane(
    game: &dyn Game,
    profile: &MixedProfile,
    eps: f64,
    source: ValueSource,
) -> Result<MixedProfile, ReductionError> {
    let n = game.num_players();
    let precondition = eps * eps / (16.0 * n as f64);
    if !is_eps_ne(game, profile, precondition) {
        return Err(ReductionError::PreconditionViolated(format!(
            "profile is not a {precondition}-approximate equilibrium"
        )));
    }
    let mut strategies = Vec::with_capacity(n);
    for player in 0..n {
        let classes = classify_actions(game, profile, player, eps, source);
        let old = profile.strategy(player);
        let mut probs = old.probs().to_vec();
        let mut moved = 0.0;
        for &a in classes.medium.iter().chain(&classes.bad) {
            moved += probs[a];
            probs[a] = 0.0;
        }
        probs[classes.representative] += moved;
        strategies.push(MixedStrategy::new(probs).expect("mass moving preserves the distribution"));
    }
    Ok(MixedProfile::new(strategies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::{certify_displacement, is_eps_fixed_point, FnMap};
    use crate::games::brute_force_pure_wsne;
    use crate::paths::{cut_cycles, random_walk};

    fn constant_map(n: usize, value: f64) -> Rc<dyn BoxMap> {
        Rc::new(FnMap::new(n, move |x: &[f64]| vec![value; x.len()]))
    }

    #[test]
    fn extraction_from_pure_equilibrium_of_zero_map() {
        let game = game_from_function(constant_map(1, 0.0), 1.0, 0.5).unwrap();
        let eq = MixedProfile::pure(&[0, 0], &game.action_counts());
        let point = wsne_to_fixed_point(&game, &eq).unwrap();
        assert_eq!(point.coords(), &[0.0]);
    }

    #[test]
    fn extraction_from_identity_map_matched_profile() {
        let identity: Rc<dyn BoxMap> = Rc::new(FnMap::new(2, |x: &[f64]| x.to_vec()));
        let game = game_from_function(identity, 1.0, 0.5).unwrap();
        let k = game.k();
        let eq = MixedProfile::pure(&[3, 5, 3, 5], &game.action_counts());
        let point = wsne_to_fixed_point(&game, &eq).unwrap();
        assert_eq!(point.coords(), &[3.0 / k as f64, 5.0 / k as f64]);
        assert!(is_eps_fixed_point(game.map().as_ref(), &point, 0.0));
    }

    #[test]
    fn extraction_rejects_non_equilibria_and_wide_supports() {
        let game = game_from_function(constant_map(1, 0.0), 1.0, 0.5).unwrap();
        let not_eq = MixedProfile::pure(&[7, 0], &game.action_counts());
        assert!(matches!(
            wsne_to_fixed_point(&game, &not_eq),
            Err(ReductionError::NotAnEquilibrium { .. })
        ));
    }

    #[test]
    fn support_windows_require_adjacent_grid_points() {
        let game = game_from_function(constant_map(1, 0.0), 1.0, 0.5).unwrap();
        let k = game.k();
        let two_point = MixedProfile::new(vec![
            MixedStrategy::new({
                let mut p = vec![0.0; k + 1];
                p[3] = 0.25;
                p[4] = 0.75;
                p
            })
            .unwrap(),
            MixedStrategy::pure(0, k + 1),
        ]);
        let windows = support_windows(&game, &two_point).unwrap();
        assert_eq!(windows.alpha, vec![3]);
        assert_eq!(windows.beta, vec![0]);

        let wide = MixedProfile::new(vec![
            MixedStrategy::new({
                let mut p = vec![0.0; k + 1];
                p[2] = 0.5;
                p[5] = 0.5;
                p
            })
            .unwrap(),
            MixedStrategy::pure(0, k + 1),
        ]);
        assert!(matches!(
            support_windows(&game, &wide),
            Err(ReductionError::SupportTooWide { player: 0 })
        ));
    }

    #[test]
    fn chain_on_tiny_path_function() {
        // end-to-end: certified path map -> game -> brute forced pure
        // equilibria -> extracted points are certified fixed points
        let walk = random_walk(2, 30, 5);
        let path = cut_cycles(&walk);
        let f = build_path_function(&path).unwrap();
        let cert = certify_displacement(&f, 20).unwrap();
        assert!(cert.eps_star > 0.0);
        let f: Rc<dyn BoxMap> = Rc::new(build_path_function(&path).unwrap());
        let eps_game = (cert.lambda_star + 3.0) / 24.0; // caps k at 24
        let game = game_from_function(Rc::clone(&f), cert.lambda_star, eps_game).unwrap();
        let eq_eps = 3.0 / (4.0 * (game.k() as f64).powi(2));
        let found = game.enumerate_pure_wsne(eq_eps).unwrap();
        assert!(!found.is_empty(), "no pure equilibrium found");
        for profile in &found {
            let eq = MixedProfile::pure(profile, &game.action_counts());
            let point = wsne_to_fixed_point(&game, &eq).unwrap();
            assert!(is_eps_fixed_point(f.as_ref(), &point, game.eps()));
            assert!(f_end_contains(&path, &point));
        }
    }

    fn f_end_contains(path: &SimplePath, point: &Point) -> bool {
        CellIndex::from_vertex(&path.end()).contains(point)
    }

    #[test]
    fn solve_afp_via_wsn_counts_one_eval_per_distinct_query() {
        let f = constant_map(1, 0.0);
        let report = solve_afp_via_wsn(f, 1.0, 0.5, QueryBudget::unlimited(), |oracle| {
            // query a few profiles, repeat one, then answer with the known
            // pure equilibrium
            oracle.query(&[0, 0])?;
            oracle.query(&[1, 2])?;
            oracle.query(&[0, 0])?;
            Ok(MixedProfile::pure(
                &[0, 0],
                &[oracle.num_actions(), oracle.num_actions()],
            ))
        })
        .unwrap();
        assert_eq!(report.queries, 3);
        assert!(report.distinct_map_evals <= 3);
        assert_eq!(report.point.coords(), &[0.0]);
    }

    #[test]
    fn solve_esp_via_afp_trivial_and_real_paths() {
        // length-one path: any sound solver reports the start cell
        let trivial = SimplePath::from_vertices(vec![HVertex::all_ones(2)]).unwrap();
        let f = build_path_function(&trivial).unwrap();
        let cert = certify_displacement(&f, 10).unwrap();
        let report = solve_esp_via_afp(&trivial, &cert, QueryBudget::unlimited(), |oracle| {
            // grid scan solver: probe candidate cell centers
            let mut best = (f64::INFINITY, Point::new(vec![0.5, 0.5]).unwrap());
            for cx in 0..6u8 {
                for cy in 0..6u8 {
                    let center = CellIndex::new(vec![cx, cy]).center();
                    let p = Point::new(center).unwrap();
                    let fx = oracle.query(&p)?;
                    let disp = crate::fixpoint::inf_dist(fx.coords(), p.coords());
                    if disp < best.0 {
                        best = (disp, p);
                    }
                }
            }
            Ok(best.1)
        })
        .unwrap();
        assert_eq!(report.end_vertex, HVertex::all_ones(2));
        assert_eq!(report.esp_queries, report.afp_queries);

        // a walk-built path: decoded end equals the true end
        let path = cut_cycles(&random_walk(2, 40, 9));
        let f = build_path_function(&path).unwrap();
        let cert = certify_displacement(&f, 20).unwrap();
        assert!(cert.eps_star > 0.0);
        let report = solve_esp_via_afp(&path, &cert, QueryBudget::unlimited(), |oracle| {
            let mut best = (f64::INFINITY, Point::new(vec![0.5, 0.5]).unwrap());
            let m = 48usize;
            for i in 0..=m {
                for j in 0..=m {
                    let p = Point::new(vec![i as f64 / m as f64, j as f64 / m as f64]).unwrap();
                    let fx = oracle.query(&p)?;
                    let disp = crate::fixpoint::inf_dist(fx.coords(), p.coords());
                    if disp < best.0 {
                        best = (disp, p);
                    }
                }
            }
            Ok(best.1)
        })
        .unwrap();
        assert_eq!(report.end_vertex, path.end());
    }

    #[test]
    fn esp_via_afp_decodes_corner_path_end() {
        let path = SimplePath::from_vertices(vec![
            HVertex::from_coords(&[1, 1]).unwrap(),
            HVertex::from_coords(&[2, 1]).unwrap(),
            HVertex::from_coords(&[2, 2]).unwrap(),
        ])
        .unwrap();
        let f = build_path_function(&path).unwrap();
        let cert = certify_displacement(&f, 20).unwrap();
        let report = solve_esp_via_afp(&path, &cert, QueryBudget::unlimited(), |oracle| {
            let mut best = (f64::INFINITY, Point::new(vec![0.5, 0.5]).unwrap());
            let m = 60usize;
            for i in 0..=m {
                for j in 0..=m {
                    let p = Point::new(vec![i as f64 / m as f64, j as f64 / m as f64]).unwrap();
                    let fx = oracle.query(&p)?;
                    let disp = crate::fixpoint::inf_dist(fx.coords(), p.coords());
                    if disp < best.0 {
                        best = (disp, p);
                    }
                }
            }
            Ok(best.1)
        })
        .unwrap();
        assert_eq!(report.end_vertex, HVertex::from_coords(&[2, 2]).unwrap());
    }

    #[test]
    fn afp_via_wsn_with_exhaustive_solver_lands_in_end_cell() {
        // certified two-dimensional path map, solved by an exhaustive
        // matched-profile scan over the game's action grid
        let path = cut_cycles(&random_walk(2, 36, 23));
        let f = build_path_function(&path).unwrap();
        let cert = certify_displacement(&f, 20).unwrap();
        assert!(cert.eps_star > 0.0);
        let shared: Rc<dyn BoxMap> = Rc::new(build_path_function(&path).unwrap());
        // eps floored so the grid lands on k = 24, whose points include the
        // end-cell center
        let eps_game = (cert.lambda_star + 3.0) / 24.0;
        let report = solve_afp_via_wsn(
            Rc::clone(&shared),
            cert.lambda_star,
            eps_game,
            QueryBudget::unlimited(),
            |oracle| {
                let k = oracle.k();
                let n = oracle.num_players() / 2;
                // scan matched profiles (a, a); the group-two payoffs score
                // how close a is to f(a)
                let mut best: Option<(f64, Vec<usize>)> = None;
                let mut a = vec![0usize; n];
                loop {
                    let profile: Vec<usize> = a.iter().chain(a.iter()).copied().collect();
                    let payoffs = oracle.query(&profile)?;
                    let score = payoffs[n..].iter().cloned().fold(f64::INFINITY, f64::min);
                    if best.as_ref().is_none_or(|(s, _)| score > *s) {
                        best = Some((score, profile));
                    }
                    let mut advanced = false;
                    for i in (0..n).rev() {
                        a[i] += 1;
                        if a[i] <= k {
                            advanced = true;
                            break;
                        }
                        a[i] = 0;
                    }
                    if !advanced {
                        break;
                    }
                }
                let (_, profile) = best.expect("nonempty scan");
                Ok(MixedProfile::pure(&profile, &vec![k + 1; 2 * n]))
            },
        )
        .unwrap();
        assert!(is_eps_fixed_point(
            shared.as_ref(),
            &report.point,
            cert.eps_star
        ));
        assert!(CellIndex::from_vertex(&path.end()).contains(&report.point));
        // one map evaluation per distinct solver query
        assert!(report.distinct_map_evals as u64 <= report.queries);
    }

    #[test]
    fn esp_via_afp_requires_positive_certificate() {
        let path = cut_cycles(&random_walk(2, 10, 1));
        let bogus = Certificate {
            lambda_star: 1.0,
            eps_star: -0.5,
            h: 1.0 / 60.0,
            n: 2,
            path_hash: path.path_hash(),
        };
        let out = solve_esp_via_afp(&path, &bogus, QueryBudget::unlimited(), |_| {
            Ok(Point::new(vec![0.5, 0.5]).unwrap())
        });
        assert!(matches!(out, Err(ReductionError::CertificationMissing)));
    }

    #[test]
    fn esp_point_mapping_rule() {
        let inner = Point::new(vec![0.4, 0.62]).unwrap();
        assert_eq!(
            esp_vertex_for_point(&inner),
            HVertex::from_coords(&[1, 2]).unwrap()
        );
        let outer = Point::new(vec![0.1, 0.5]).unwrap();
        assert_eq!(esp_vertex_for_point(&outer), HVertex::all_ones(2));
    }

    #[test]
    fn sample_dist_query_point_mass_is_exact() {
        let game =
            ExplicitGame::new(vec![2, 2], vec![0.1, 0.9, 0.3, 0.3, 1.0, 0.0, 0.5, 0.5]).unwrap();
        let mut transcript = QueryTranscript::new();
        let out = sample_dist_query(
            &game,
            &[(vec![1, 0], 1.0)],
            0.5,
            7,
            &mut transcript,
            &QueryBudget::unlimited(),
        )
        .unwrap();
        assert_eq!(out, game.payoffs(&[1, 0]));
    }

    #[test]
    fn sample_dist_query_sample_count_is_n_over_delta_squared() {
        let game = ExplicitGame::new(vec![2, 2], vec![0.0; 8]).unwrap();
        let mut transcript = QueryTranscript::new();
        sample_dist_query(
            &game,
            &[(vec![0, 0], 0.5), (vec![1, 1], 0.5)],
            1.0,
            3,
            &mut transcript,
            &QueryBudget::unlimited(),
        )
        .unwrap();
        assert_eq!(transcript.count(), 2); // n = 2 players, delta = 1
    }

    #[test]
    fn one_query_extraction_examples() {
        let mut transcript = QueryTranscript::new();
        let budget = QueryBudget::unlimited();

        // payoffs (1, 0) for one player with two actions: numerator 2^0
        let game = ExplicitGame::new(vec![2], vec![1.0, 0.0]).unwrap();
        let decoded = one_query_extraction(&game, &mut transcript, &budget).unwrap();
        assert_eq!(decoded, game);

        let zeros = ExplicitGame::new(vec![2, 2], vec![0.0; 8]).unwrap();
        assert_eq!(
            one_query_extraction(&zeros, &mut transcript, &budget).unwrap(),
            zeros
        );

        let ones = ExplicitGame::new(vec![2, 2], vec![1.0; 8]).unwrap();
        assert_eq!(
            one_query_extraction(&ones, &mut transcript, &budget).unwrap(),
            ones
        );
        assert_eq!(transcript.count(), 3); // one query each

        let fractional = ExplicitGame::new(vec![2], vec![0.5, 1.0]).unwrap();
        assert!(matches!(
            one_query_extraction(&fractional, &mut transcript, &budget),
            Err(ReductionError::NonBinaryPayoffs { .. })
        ));
    }

    #[test]
    fn classify_actions_exact_thresholds() {
        let eps = 0.2;
        // values: br = 0.9, a middling 0.9 - eps/8, a bad 0.5
        let game = ExplicitGame::new(vec![3], vec![0.9, 0.9 - eps / 8.0, 0.5]).unwrap();
        let profile = MixedProfile::uniform(&[3]);
        let classes = classify_actions(&game, &profile, 0, eps, ValueSource::Exact);
        assert_eq!(classes.good, vec![0, 1]);
        assert!(classes.medium.is_empty());
        assert_eq!(classes.bad, vec![2]);
        assert_eq!(classes.representative, 0);

        let flat = ExplicitGame::new(vec![3], vec![0.4, 0.4, 0.4]).unwrap();
        let classes = classify_actions(&flat, &profile, 0, eps, ValueSource::Exact);
        assert_eq!(classes.good, vec![0, 1, 2]);
    }

    #[test]
    fn classify_actions_sampled_respects_margins() {
        // separable game with well-separated good/bad values: sampled
        // classification must agree with the exact one on both classes
        let eps = 0.2;
        let game = ExplicitGame::from_fn(vec![3, 2], |profile| {
            let mine = [0.9, 0.85, 0.2][profile[0]];
            let theirs = [0.7, 0.6][profile[1]];
            vec![mine, theirs]
        })
        .unwrap();
        let profile = MixedProfile::new(vec![
            MixedStrategy::new(vec![0.8, 0.15, 0.05]).unwrap(),
            MixedStrategy::uniform(2),
        ]);
        for seed in 0..1000u64 {
            let classes = classify_actions(
                &game,
                &profile,
                0,
                eps,
                ValueSource::Sampled {
                    failure_budget: 1e-3,
                    seed,
                },
            );
            assert!(classes.good.contains(&0), "seed {seed}");
            assert!(classes.good.contains(&1), "seed {seed}");
            assert!(classes.bad.contains(&2), "seed {seed}");
        }
    }

    #[test]
    fn wsne_from_ane_keeps_exact_pure_equilibria() {
        let game = ExplicitGame::new(vec![2], vec![0.3, 0.8]).unwrap();
        let eq = MixedProfile::pure(&[1], &[2]);
        let out = wsne_from_ane(&game, &eq, 0.2, ValueSource::Exact).unwrap();
        assert_eq!(out, eq);
    }

    #[test]
    fn wsne_from_ane_moves_bad_mass() {
        let eps = 0.2;
        let n = 1.0;
        // stray mass on the worthless action, small enough to honor the
        // eps^2/(16n) equilibrium precondition (its payoff gap is 1)
        let shift = 0.9 * eps * eps / (16.0 * n);
        let game = ExplicitGame::new(vec![3], vec![1.0, 1.0 - eps / 8.0, 0.0]).unwrap();
        let eq = MixedProfile::new(vec![
            MixedStrategy::new(vec![1.0 - shift, 0.0, shift]).unwrap()
        ]);
        let out = wsne_from_ane(&game, &eq, eps, ValueSource::Exact).unwrap();
        assert_eq!(out.strategy(0).prob(2), 0.0);
        assert!((out.strategy(0).prob(0) - 1.0).abs() < 1e-12);
        assert!(is_eps_wsne(&game, &out, eps));
        // moved mass stays within the total-variation budget eps/(4n)
        let moved: f64 = (0..3)
            .map(|a| (out.strategy(0).prob(a) - eq.strategy(0).prob(a)).max(0.0))
            .sum();
        assert!(moved <= eps / (4.0 * n) + 1e-12);
    }

    #[test]
    fn wsne_from_ane_rejects_distant_profiles() {
        let game = ExplicitGame::new(vec![2], vec![0.0, 1.0]).unwrap();
        let bad = MixedProfile::pure(&[0], &[2]);
        assert!(matches!(
            wsne_from_ane(&game, &bad, 0.2, ValueSource::Exact),
            Err(ReductionError::PreconditionViolated(_))
        ));
    }

    #[test]
    fn wsne_from_ane_passes_verifier_on_random_planted_games() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eps = 0.25;
        for trial in 0..50 {
            // separable 3-player game: payoffs depend on own action only
            let m = 3usize;
            let n = 3usize;
            let tables: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let mut t: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..=1.0)).collect();
                    t[0] = 1.0; // make action 0 the best reply
                    t
                })
                .collect();
            let game = ExplicitGame::from_fn(vec![m; n], |profile| {
                (0..n).map(|i| tables[i][profile[i]]).collect()
            })
            .unwrap();
            // plant x near the pure best profile with tiny stray mass
            let budget = eps * eps / (16.0 * n as f64);
            let strategies: Vec<MixedStrategy> = (0..n)
                .map(|i| {
                    let worst_gap = 1.0 - tables[i].iter().cloned().fold(f64::INFINITY, f64::min);
                    let stray = if worst_gap > 0.0 {
                        (0.9 * budget / worst_gap).min(0.2)
                    } else {
                        0.2
                    };
                    let mut probs = vec![stray / (m - 1) as f64; m];
                    probs[0] = 1.0 - stray;
                    MixedStrategy::new(probs).unwrap()
                })
                .collect();
            let x = MixedProfile::new(strategies);
            let y = wsne_from_ane(&game, &x, eps, ValueSource::Exact).unwrap();
            assert!(is_eps_wsne(&game, &y, eps), "trial {trial}");
        }
    }

    #[test]
    fn brute_forced_equilibria_match_structured_route_end_to_end() {
        // dual route on the same small game instance
        let f = constant_map(1, 0.37);
        let game = game_from_function(f, 1.0, 0.5).unwrap();
        let eq_eps = 3.0 / (4.0 * (game.k() as f64).powi(2));
        let mut a = game.enumerate_pure_wsne(eq_eps).unwrap();
        let mut b = brute_force_pure_wsne(&game, eq_eps).unwrap();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
