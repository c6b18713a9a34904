//! Woodbury update against full re-factorization.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::build_grounded_system;
use crate::linalg;
use crate::multi::{woodbury_update, ModificationSet};
use crate::oracle::random_grid;
use crate::single::BranchDelta;

/// Results of both paths must agree to this relative Frobenius distance
/// before timings are reported.
pub const EQUALITY_GATE: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub n_buses: usize,
    pub m: usize,
    pub reps: usize,
    pub update_median: Duration,
    pub rebuild_median: Duration,
    pub speedup: f64,
    pub max_rel_diff: f64,
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

/// Times `reps` Woodbury updates of `m` random branches against rebuilding
/// and re-factorizing the modified grid, on a random grid of `n_buses`
/// buses and average degree 3.
pub fn run_bench(n_buses: usize, m: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    if n_buses < 2 || reps == 0 {
        return Err(Error::InvalidModification(
            "benchmark needs at least two buses and one repetition".into(),
        ));
    }
    let grid = random_grid(seed, n_buses, 3.0);
    let sys = build_grounded_system(&grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut ids: Vec<usize> = Vec::new();
    while ids.len() < m.min(grid.n_branches()) {
        let k = rng.random_range(0..grid.n_branches());
        if !ids.contains(&k) {
            ids.push(k);
        }
    }
    let mods = ModificationSet::new(
        ids.iter()
            .map(|&k| {
                let br = &grid.branches()[k];
                BranchDelta::new(br.id, br.susceptance * rng.random_range(-0.5..0.5))
            })
            .collect(),
    )?;
    let modified = mods.apply_to(&grid)?;

    let mut update_times = Vec::with_capacity(reps);
    let mut rebuild_times = Vec::with_capacity(reps);
    let mut max_rel_diff: f64 = 0.0;
    for _ in 0..reps {
        let t = Instant::now();
        let updated = woodbury_update(&sys, &grid, &mods)?;
        update_times.push(t.elapsed());

        let t = Instant::now();
        let rebuilt = build_grounded_system(&modified)?;
        rebuild_times.push(t.elapsed());

        max_rel_diff = max_rel_diff.max(linalg::rel_frobenius(&updated, rebuilt.inverse()));
    }
    if max_rel_diff > EQUALITY_GATE {
        return Err(Error::InvalidModification(format!(
            "update and rebuild disagree: relative difference {max_rel_diff:e}"
        )));
    }
    let update_median = median(update_times);
    let rebuild_median = median(rebuild_times);
    Ok(BenchReport {
        n_buses,
        m: mods.len(),
        reps,
        update_median,
        rebuild_median,
        speedup: rebuild_median.as_secs_f64() / update_median.as_secs_f64().max(1e-12),
        max_rel_diff,
    })
}
