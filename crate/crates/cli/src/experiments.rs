//! The experiment campaigns behind `qclab run`, one function per kind.
//! Trials run in parallel with independent seeds; nothing mutates its
//! input instance.

use std::rc::Rc;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use qclab::dynamics::{max_swap_regret, run_dynamic, RegretMatching};
use qclab::fixpoint::{
    build_path_function, certify_displacement, inf_dist, is_eps_fixed_point, BoxMap, CellIndex,
};
use qclab::games::{game_from_function, ExplicitGame, Game, MixedProfile};
use qclab::paths::{cut_cycles, htp_play, max_cycle_length, random_walk, HtpWinner};
use qclab::query::{QueryBudget, QueryTranscript};
use qclab::reductions::{sample_dist_query, wsne_to_fixed_point};

use crate::config::{ExperimentConfig, ExperimentKind, RunRecord, SCHEMA_VERSION};

/// Runs every (n, trial) cell of the campaign grid and returns the records
/// sorted by (n, trial).
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let mut cells = Vec::new();
    for n in config.n_lo..=config.n_hi {
        for trial in 0..config.trials {
            cells.push((n, trial));
        }
    }
    let mut records = cells
        .par_iter()
        .map(|&(n, trial)| run_trial(config, n, trial))
        .collect::<Result<Vec<RunRecord>>>()?;
    records.sort_by_key(|r| (r.n, r.trial));
    Ok(records)
}

fn run_trial(config: &ExperimentConfig, n: usize, trial: usize) -> Result<RunRecord> {
    let seed = config
        .seed
        .wrapping_add(trial as u64)
        .wrapping_add((n as u64) << 32);
    let start = Instant::now();
    let mut record = RunRecord {
        schema: SCHEMA_VERSION,
        kind: config.kind.to_string(),
        trial,
        n,
        seed,
        queries: 0,
        success: false,
        wall_ms: 0.0,
        lambda_star: None,
        eps_star: None,
        detail: 0.0,
    };
    match config.kind {
        ExperimentKind::WalkCycles => {
            let walk = random_walk(n, config.walk_len, seed);
            let longest = max_cycle_length(&walk);
            record.success = longest <= n * n;
            record.detail = longest as f64;
        }
        ExperimentKind::Htp => {
            let path = cut_cycles(&random_walk(n, config.walk_len, seed));
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
            let outcome = htp_play(
                &path,
                |_, _| {
                    let bits = rng.gen_range(0..(1u64 << n));
                    qclab::paths::HVertex::from_bits(n, bits)
                },
                config.steps,
            );
            record.queries = outcome.queries_used as u64;
            record.success = outcome.winner == HtpWinner::Algorithm;
            record.detail = path.len() as f64;
        }
        ExperimentKind::Certify => {
            let path = cut_cycles(&random_walk(n, config.walk_len.min(1 << (2 * n)), seed));
            let cert = certify_displacement(&build_path_function(&path)?, config.per_cell)?;
            record.success = cert.eps_star > 0.0;
            record.lambda_star = Some(cert.lambda_star);
            record.eps_star = Some(cert.eps_star);
            record.detail = cert.eps_star;
        }
        ExperimentKind::ChainE2e => {
            let path = cut_cycles(&random_walk(n, config.walk_len.min(1 << (2 * n)), seed));
            let f = Rc::new(build_path_function(&path)?);
            let cert = certify_displacement(&f, config.per_cell)?;
            ensure!(cert.eps_star > 0.0, "trial {trial}: certification failed");
            record.lambda_star = Some(cert.lambda_star);
            record.eps_star = Some(cert.eps_star);
            // cap the action grid for the enumeration step
            let eps_game = ((cert.lambda_star + 3.0) / config.k_cap as f64).max(cert.eps_star);
            let game =
                game_from_function(Rc::clone(&f) as Rc<dyn BoxMap>, cert.lambda_star, eps_game)?;
            let eq_eps = 3.0 / (4.0 * (game.k() as f64).powi(2));
            let found = game.enumerate_pure_wsne(eq_eps)?;
            ensure!(
                !found.is_empty(),
                "trial {trial}: no pure equilibrium found"
            );
            let eq = MixedProfile::pure(&found[0], &game.action_counts());
            let point = wsne_to_fixed_point(&game, &eq)?;
            let end_cell = CellIndex::from_vertex(&path.end());
            record.queries = game.distinct_evals() as u64;
            record.detail = inf_dist(f.eval(&point).coords(), point.coords());
            record.success =
                is_eps_fixed_point(f.as_ref(), &point, game.eps()) && end_cell.contains(&point);
        }
        ExperimentKind::Sampling => {
            // synthetic game with exactly computable expectations: uniform
            // mixture over two profiles with payoffs 0 and 1 per player
            let game = two_profile_game(n)?;
            let mixture = vec![(vec![0usize; n], 0.5), (vec![1usize; n], 0.5)];
            let exact = vec![0.5; n];
            let mut transcript = QueryTranscript::new();
            let estimate = sample_dist_query(
                &game,
                &mixture,
                config.delta,
                seed,
                &mut transcript,
                &QueryBudget::unlimited(),
            )
            .context("sampling reduction")?;
            let err = inf_dist(&estimate, &exact);
            record.queries = transcript.count();
            record.success = err <= config.delta;
            record.detail = err;
        }
        ExperimentKind::Dynamics => {
            let game = matching_pennies();
            let dynamic = RegretMatching::new();
            let history = run_dynamic(&game, &dynamic, config.steps, seed)?;
            let regret = max_swap_regret(&game, &history.realized);
            record.queries = history.transcript.count();
            record.success = regret <= config.eps;
            record.detail = regret;
        }
    }
    record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(record)
}

/// `n`-player two-action game whose payoffs depend only on the shared
/// profile: all-zeros pays 0, everything else pays 1, for every player.
fn two_profile_game(n: usize) -> Result<ExplicitGame> {
    Ok(ExplicitGame::from_fn(vec![2; n], |profile| {
        let value = if profile.iter().all(|&a| a == 0) {
            0.0
        } else {
            1.0
        };
        vec![value; n]
    })?)
}

fn matching_pennies() -> ExplicitGame {
    ExplicitGame::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0])
        .expect("valid payoffs")
}

/// Per-dimension aggregate of a record batch.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub trials: usize,
    pub success_fraction: f64,
    pub queries_mean: f64,
    pub queries_p50: u64,
    pub queries_p90: u64,
    pub lambda_star_mean: Option<f64>,
    pub eps_star_mean: Option<f64>,
    pub detail_mean: f64,
}

/// Aggregates records per dimension: success fraction, query-count mean and
/// quantiles, certificate constants where present.
pub fn summarize_records(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut dims: Vec<usize> = records.iter().map(|r| r.n).collect();
    dims.sort_unstable();
    dims.dedup();
    dims.iter()
        .map(|&n| {
            let batch: Vec<&RunRecord> = records.iter().filter(|r| r.n == n).collect();
            let trials = batch.len();
            let successes = batch.iter().filter(|r| r.success).count();
            let mut counts: Vec<u64> = batch.iter().map(|r| r.queries).collect();
            counts.sort_unstable();
            let quantile = |q: f64| -> u64 {
                let idx = ((q * trials as f64).ceil() as usize).clamp(1, trials) - 1;
                counts[idx]
            };
            let mean_of = |extract: fn(&RunRecord) -> Option<f64>| -> Option<f64> {
                let values: Vec<f64> = batch.iter().filter_map(|r| extract(r)).collect();
                if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                }
            };
            SummaryRow {
                n,
                trials,
                success_fraction: successes as f64 / trials as f64,
                queries_mean: counts.iter().sum::<u64>() as f64 / trials as f64,
                queries_p50: quantile(0.5),
                queries_p90: quantile(0.9),
                lambda_star_mean: mean_of(|r| r.lambda_star),
                eps_star_mean: mean_of(|r| r.eps_star),
                detail_mean: batch.iter().map(|r| r.detail).sum::<f64>() / trials as f64,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "n,trials,success_fraction,queries_mean,queries_p50,queries_p90,lambda_star_mean,eps_star_mean,detail_mean\n",
    );
    for row in rows {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.n,
            row.trials,
            row.success_fraction,
            row.queries_mean,
            row.queries_p50,
            row.queries_p90,
            opt(row.lambda_star_mean),
            opt(row.eps_star_mean),
            row.detail_mean,
        ));
    }
    out
}
