#![allow(dead_code)]

use std::path::PathBuf;

use gridfactors_core::case_io::load_grid;
use gridfactors_core::factors::{compute_flows, ptdf_matrix};
use gridfactors_core::grid::{build_grounded_system, BranchId, BusIndex, Grid, GroundedSystem};
use gridfactors_core::multi::{woodbury_update, ModificationSet};
use gridfactors_core::oracle::{
    contract_and_solve, random_grid, random_split, rebuild_and_solve, rel_frobenius,
    with_random_switches, Modification,
};
use gridfactors_core::single::{lcdf_column, lodf_column, ptdf_after_mod, updated_inverse, BranchDelta};
use gridfactors_core::topology::{merge_inverse, split_inverse, SplitSpec, TriConfig};
use gridfactors_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INV_TOL: f64 = 1e-8;
pub const FLOW_TOL: f64 = 1e-9;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(name)
}

pub fn case6ww() -> Grid {
    load_grid(&case_path("case6ww.m")).unwrap()
}

pub fn split5() -> SplitSpec {
    let text = std::fs::read_to_string(case_path("case6ww_split5.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    serde_json::from_value(v["splits"][0].clone()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Grid size and degree vary with the seed: 5..=30 buses, degree 2..4.
pub fn suite_grid(seed: u64) -> Grid {
    let mut r = rng(seed.wrapping_mul(7919));
    let n = r.random_range(5..=30);
    let d = r.random_range(2.0..4.0);
    random_grid(seed, n, d)
}

pub fn flows_from_inverse(grid: &Grid, index: &BusIndex, inv: &DMatrix<f64>) -> DVector<f64> {
    let theta = inv * index.reduce(&grid.injections()).unwrap();
    compute_flows(grid, index, &theta).unwrap().flows
}

/// Outcome of one oracle comparison.
#[derive(Debug, Default, Clone, Copy)]
pub struct Tally {
    pub cases: usize,
    pub islanding: usize,
    pub worst_inv: f64,
    pub worst_flow: f64,
}

impl Tally {
    pub fn record(&mut self, inv: f64, flow: f64) -> Result<(), String> {
        self.cases += 1;
        self.worst_inv = self.worst_inv.max(inv);
        self.worst_flow = self.worst_flow.max(flow);
        if !(inv <= INV_TOL) || !(flow <= FLOW_TOL) {
            return Err(format!("inverse rel {inv:e}, flow {flow:e}"));
        }
        Ok(())
    }

    pub fn merge(&mut self, other: Tally) {
        self.cases += other.cases;
        self.islanding += other.islanding;
        self.worst_inv = self.worst_inv.max(other.worst_inv);
        self.worst_flow = self.worst_flow.max(other.worst_flow);
    }
}

/// Islanding verdicts of the update and the oracle must agree; returns
/// `true` when both say the modification islands.
fn islanding_agrees<T>(update: &Result<T, Error>, oracle_disconnected: bool, what: &str) -> Result<bool, String> {
    match update {
        Err(e) if e.is_islanding() => {
            if oracle_disconnected {
                Ok(true)
            } else {
                Err(format!("{what}: update reports islanding, oracle is connected"))
            }
        }
        Err(e) => Err(format!("{what}: {e}")),
        Ok(_) if oracle_disconnected => Err(format!("{what}: oracle disconnected, update did not flag it")),
        Ok(_) => Ok(false),
    }
}

fn oracle_or_islanding(
    grid: &Grid,
    m: &Modification,
) -> Result<Option<gridfactors_core::oracle::OracleSolution>, String> {
    match rebuild_and_solve(grid, m) {
        Ok(s) => Ok(Some(s)),
        Err(Error::Disconnected { .. }) => Ok(None),
        Err(e) => Err(format!("oracle: {e}")),
    }
}

pub fn single_mod(seed: u64, t: &mut Tally) -> Result<(), String> {
    let g = suite_grid(seed);
    let sys = build_grounded_system(&g).unwrap();
    let mut r = rng(seed ^ 0x51);
    let br = &g.branches()[r.random_range(0..g.n_branches())];
    let mut u: f64 = r.random_range(-0.9..1.5);
    if u.abs() < 1e-3 {
        u = 0.5;
    }
    let d = BranchDelta::new(br.id, br.susceptance * u);
    let inv = updated_inverse(&sys, &g, d).map_err(|e| e.to_string())?;
    let sol = rebuild_and_solve(&g, &Modification::Deltas(&[d])).map_err(|e| e.to_string())?;
    let ptdf = ptdf_after_mod(&sys, &g, d).map_err(|e| e.to_string())?;
    let p = sys.index().reduce(&g.injections()).unwrap();
    let flows = ptdf.apply(&p);
    let inv_err = rel_frobenius(&inv, &sol.inverse).max(rel_frobenius(&ptdf.values, &sol.ptdf()));
    t.record(inv_err, (flows - &sol.flows).amax())
}

pub fn outage(seed: u64, t: &mut Tally) -> Result<(), String> {
    let g = suite_grid(seed);
    let sys = build_grounded_system(&g).unwrap();
    let mut r = rng(seed ^ 0x0a);
    let br = &g.branches()[r.random_range(0..g.n_branches())];
    let d = BranchDelta::outage(&g, br.id).unwrap();
    let update = updated_inverse(&sys, &g, d);
    let oracle = oracle_or_islanding(&g, &Modification::Deltas(&[d]))?;
    if islanding_agrees(&update, oracle.is_none(), &format!("outage of {}", br.id))? {
        t.islanding += 1;
        return Ok(());
    }
    let sol = oracle.unwrap();
    let base = flows_from_inverse(&g, sys.index(), sys.inverse());
    let col = lodf_column(&sys, &g, br.id).map_err(|e| e.to_string())?;
    let post = &base + col * base[g.branch_position(br.id).unwrap()];
    t.record(rel_frobenius(&update.unwrap(), &sol.inverse), (post - &sol.flows).amax())
}

pub fn closing(seed: u64, t: &mut Tally) -> Result<(), String> {
    let full = suite_grid(seed);
    let bridges = full.bridges();
    let mut r = rng(seed ^ 0xc1);
    let candidates: Vec<_> = full.branches().iter().filter(|b| !bridges.contains(&b.id)).collect();
    if candidates.is_empty() {
        return Ok(());
    }
    let target = candidates[r.random_range(0..candidates.len())].clone();
    let mut branches = full.branches().to_vec();
    let pos = full.branch_position(target.id).unwrap();
    branches[pos].in_service = false;
    let g = full.with_branches(branches).unwrap();
    let sys = build_grounded_system(&g).unwrap();
    let d = BranchDelta::new(target.id, target.susceptance);
    let inv = updated_inverse(&sys, &g, d).map_err(|e| e.to_string())?;
    let sol = rebuild_and_solve(&g, &Modification::Deltas(&[d])).map_err(|e| e.to_string())?;
    let state = gridfactors_core::factors::base_flows(&sys, &g).unwrap();
    let nu = sys.index().nu_branch(&target);
    let dtheta: f64 = nu.iter().map(|&(i, v)| v * state.angles[i]).sum();
    let col = lcdf_column(&sys, &g, target.id, target.susceptance).map_err(|e| e.to_string())?;
    let post = &state.flows + col * dtheta;
    t.record(rel_frobenius(&inv, &sol.inverse), (post - &sol.flows).amax())
}

pub fn merge(seed: u64, t: &mut Tally) -> Result<(), String> {
    let (g, ids) = with_random_switches(&suite_grid(seed), seed ^ 0x3e, 1);
    let sys = build_grounded_system(&g).unwrap();
    let inv = merge_inverse(&sys, &g, ids[0]).map_err(|e| e.to_string())?;
    let exact = contract_and_solve(&g, &ids).map_err(|e| e.to_string())?;
    let f = flows_from_inverse(&g, sys.index(), &inv);
    let f_exact = flows_from_inverse(&g, sys.index(), &exact);
    t.record(rel_frobenius(&inv, &exact), (f - f_exact).amax())
}

pub fn split(seed: u64, t: &mut Tally) -> Result<(), String> {
    let g = suite_grid(seed);
    let Some(spec) = random_split(&g, seed ^ 0x5b) else {
        return Ok(());
    };
    let sys = build_grounded_system(&g).unwrap();
    let tri = TriConfig::from_system(&sys, &g, std::slice::from_ref(&spec)).map_err(|e| e.to_string())?;
    let update = split_inverse(&tri);
    let oracle = oracle_or_islanding(&g, &Modification::Splits(std::slice::from_ref(&spec)))?;
    if islanding_agrees(&update, oracle.is_none(), &format!("split of {}", spec.parent))? {
        t.islanding += 1;
        return Ok(());
    }
    let sol = oracle.unwrap();
    let inv = update.unwrap();
    let f = flows_from_inverse(tri.grid_open(), tri.index_open(), &inv);
    t.record(rel_frobenius(&inv, &sol.inverse), (f - &sol.flows).amax())
}

pub fn multi(seed: u64, t: &mut Tally) -> Result<(), String> {
    let g = suite_grid(seed);
    let sys = build_grounded_system(&g).unwrap();
    let mut r = rng(seed ^ 0x3f);
    let m = 1 + (seed % 4) as usize;
    let mut picked: Vec<BranchId> = Vec::new();
    while picked.len() < m.min(g.n_branches()) {
        let id = g.branches()[r.random_range(0..g.n_branches())].id;
        if !picked.contains(&id) {
            picked.push(id);
        }
    }
    let deltas: Vec<BranchDelta> = picked
        .iter()
        .map(|&id| {
            let b = g.branch(id).unwrap().susceptance;
            if r.random_bool(0.3) {
                BranchDelta::new(id, -b)
            } else {
                BranchDelta::new(id, b * r.random_range(-0.8..1.5))
            }
        })
        .collect();
    let mods = ModificationSet::new(deltas.clone()).unwrap();
    let update = woodbury_update(&sys, &g, &mods);
    let oracle = oracle_or_islanding(&g, &Modification::Deltas(&deltas))?;
    if islanding_agrees(&update, oracle.is_none(), &format!("modification set {picked:?}"))? {
        t.islanding += 1;
        return Ok(());
    }
    let sol = oracle.unwrap();
    let inv = update.unwrap();
    let g_mod = mods.apply_to(&g).unwrap();
    let f = flows_from_inverse(&g_mod, sys.index(), &inv);
    t.record(rel_frobenius(&inv, &sol.inverse), (f - &sol.flows).amax())
}

pub type Case = fn(u64, &mut Tally) -> Result<(), String>;

pub const SUITE: [(&str, Case); 6] = [
    ("single modification", single_mod),
    ("outage", outage),
    ("closing", closing),
    ("merge", merge),
    ("split", split),
    ("simultaneous", multi),
];

/// Runs every category over `seeds`; the first failure aborts with a
/// message naming the category and seed.
pub fn run_suite(seeds: std::ops::Range<u64>) -> Result<Tally, String> {
    let mut total = Tally::default();
    for (name, case) in SUITE {
        let mut t = Tally::default();
        for seed in seeds.clone() {
            case(seed, &mut t).map_err(|e| format!("{name}, seed {seed}: {e}"))?;
        }
        total.merge(t);
    }
    Ok(total)
}

pub fn system(g: &Grid) -> GroundedSystem {
    build_grounded_system(g).unwrap()
}

pub fn ptdf(g: &Grid) -> DMatrix<f64> {
    ptdf_matrix(&system(g), g).values
}
