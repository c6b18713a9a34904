//! A combined what-if: branch susceptance changes, switch settings and bus
//! splits applied in that order on top of one reference factorization.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grounded_system, grounded_laplacian, BranchId, BranchKind, BusIndex, Grid, GroundedSystem};
use crate::multi::{multi_merge_inverse, multi_split_inverse, woodbury_update, ModificationSet, SwitchCache, SwitchState, SwitchStates};
use crate::pst::{flows_with_shifts, ShiftVector};
use crate::single::BranchDelta;
use crate::topology::{pad_inverse, SplitSpec};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub deltas: Vec<BranchDelta>,
    /// Overrides for switch states; switches not listed keep the state in
    /// the grid.
    #[serde(default)]
    pub switches: BTreeMap<BranchId, SwitchState>,
    #[serde(default)]
    pub splits: Vec<SplitSpec>,
}

impl Scenario {
    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty() && self.switches.is_empty() && self.splits.is_empty()
    }
}

/// Post-modification grid, its (updated) grounded system and flows.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub grid: Grid,
    pub system: GroundedSystem,
    pub flows: DVector<f64>,
}

fn wrap(grid: &Grid, inverse: nalgebra::DMatrix<f64>) -> Result<GroundedSystem> {
    let index = BusIndex::new(grid);
    let laplacian = grounded_laplacian(grid, &index);
    GroundedSystem::from_updated_inverse(index, laplacian, inverse)
}

/// Evaluates the scenario against a grid that may itself contain closed
/// switches. One factorization of the switch-open reference is made; every
/// step after that is an update.
pub fn evaluate(grid: &Grid, scenario: &Scenario) -> Result<Outcome> {
    let base = build_grounded_system(grid)?;

    let mods = ModificationSet::new(scenario.deltas.clone())?;
    let (grid1, sys1) = if mods.is_empty() {
        (grid.clone(), base)
    } else {
        let inv = woodbury_update(&base, grid, &mods)?;
        let g = mods.apply_to(grid)?;
        let s = wrap(&g, inv)?;
        (g, s)
    };

    let switch_ids: Vec<BranchId> = grid1
        .branches()
        .iter()
        .filter(|b| b.kind == BranchKind::Switch)
        .map(|b| b.id)
        .collect();
    for id in scenario.switches.keys() {
        if !switch_ids.contains(id) {
            return Err(Error::InvalidModification(format!("branch {id} is not a switch")));
        }
    }
    let mut states = BTreeMap::new();
    for id in &switch_ids {
        let closed = grid1.branch(*id)?.in_service;
        let state = scenario.switches.get(id).copied().unwrap_or(if closed {
            SwitchState::Closed
        } else {
            SwitchState::Open
        });
        states.insert(*id, state);
    }
    let mut branches = grid1.branches().to_vec();
    for br in branches.iter_mut() {
        if let Some(s) = states.get(&br.id) {
            br.in_service = *s == SwitchState::Closed;
        }
    }
    let grid2 = grid1.with_branches(branches)?;
    let closed: Vec<BranchId> = states
        .iter()
        .filter(|(_, s)| **s == SwitchState::Closed)
        .map(|(id, _)| *id)
        .collect();
    let sys2 = if closed.is_empty() {
        sys1
    } else {
        let cache = SwitchCache::new(&sys1, &grid1, &closed)?;
        let inv = multi_merge_inverse(&sys1, &cache, &SwitchStates::all(SwitchState::Closed, closed.len()))?;
        wrap(&grid2, inv)?
    };

    let (grid3, sys3) = if scenario.splits.is_empty() {
        (grid2, sys2)
    } else {
        if !closed.is_empty() {
            return Err(Error::InvalidModification(
                "bus splits cannot be combined with closed switches".into(),
            ));
        }
        let tri = pad_inverse(sys2.inverse(), &grid2, &scenario.splits)?;
        let inv = multi_split_inverse(&tri)?;
        let g = tri.grid_open().clone();
        let s = wrap(&g, inv)?;
        (g, s)
    };

    finish(grid3, sys3)
}

fn finish(grid: Grid, system: GroundedSystem) -> Result<Outcome> {
    let p = grid.injections();
    let mut flows = flows_with_shifts(&system, &grid, &p, &ShiftVector::from_grid(&grid))?.flows;
    fill_switch_flows(&grid, &p, &mut flows)?;
    Ok(Outcome { grid, system, flows })
}

/// Largest number of switches [`enumerate_switches`] accepts.
pub const MAX_ENUMERATED: usize = 16;

/// One switch setting of an enumeration and what it produced.
#[derive(Debug)]
pub struct Setting {
    pub states: BTreeMap<BranchId, SwitchState>,
    pub outcome: Result<Outcome>,
}

/// Every open/closed combination of the grid's switches, on top of the
/// scenario's deltas. The switch overrides of the scenario are ignored.
/// `K` and `K_d` are built once; settings are evaluated in parallel and
/// returned in mask order, bit `i` closing the `i`-th switch in branch order.
pub fn enumerate_switches(grid: &Grid, scenario: &Scenario) -> Result<Vec<Setting>> {
    if !scenario.splits.is_empty() {
        return Err(Error::InvalidModification(
            "switch enumeration cannot be combined with bus splits".into(),
        ));
    }
    let ids: Vec<BranchId> = grid
        .branches()
        .iter()
        .filter(|b| b.kind == BranchKind::Switch)
        .map(|b| b.id)
        .collect();
    if ids.len() > MAX_ENUMERATED {
        return Err(Error::InvalidModification(format!(
            "{} switches exceed the enumeration limit of {MAX_ENUMERATED}",
            ids.len()
        )));
    }
    let mut open = grid.branches().to_vec();
    for br in open.iter_mut().filter(|b| b.kind == BranchKind::Switch) {
        br.in_service = false;
    }
    let grid0 = grid.with_branches(open)?;
    let base = build_grounded_system(&grid0)?;
    let mods = ModificationSet::new(scenario.deltas.clone())?;
    let (grid1, sys1) = if mods.is_empty() {
        (grid0, base)
    } else {
        let inv = woodbury_update(&base, &grid0, &mods)?;
        let g = mods.apply_to(&grid0)?;
        let s = wrap(&g, inv)?;
        (g, s)
    };
    let cache = if ids.is_empty() {
        None
    } else {
        Some(SwitchCache::new(&sys1, &grid1, &ids)?)
    };
    let settings = (0..1u64 << ids.len())
        .into_par_iter()
        .map(|mask| {
            let states = SwitchStates::from_mask(mask, ids.len());
            let map: BTreeMap<BranchId, SwitchState> = ids.iter().copied().zip(states.0.iter().copied()).collect();
            let outcome = (|| {
                let mut branches = grid1.branches().to_vec();
                for br in branches.iter_mut() {
                    if let Some(s) = map.get(&br.id) {
                        br.in_service = *s == SwitchState::Closed;
                    }
                }
                let g = grid1.with_branches(branches)?;
                let sys = match &cache {
                    Some(cache) if mask != 0 => wrap(&g, multi_merge_inverse(&sys1, cache, &states)?)?,
                    _ => sys1.clone(),
                };
                finish(g, sys)
            })();
            Setting { states: map, outcome }
        })
        .collect();
    Ok(settings)
}

/// Flows on closed switches from KCL, peeling leaves of the switch forest.
pub fn fill_switch_flows(grid: &Grid, p: &DVector<f64>, flows: &mut DVector<f64>) -> Result<()> {
    let mut residual = p.clone();
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (e, br) in grid.branches().iter().enumerate() {
        let (i, j) = (grid.bus_position(br.from)?, grid.bus_position(br.to)?);
        if br.is_closed_switch() {
            incident.entry(i).or_default().push(e);
            incident.entry(j).or_default().push(e);
        } else {
            residual[i] -= flows[e];
            residual[j] += flows[e];
        }
    }
    let mut done = vec![false; grid.n_branches()];
    let mut queue: VecDeque<usize> = incident
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(k, _)| *k)
        .collect();
    while let Some(v) = queue.pop_front() {
        let open: Vec<usize> = incident[&v].iter().copied().filter(|e| !done[*e]).collect();
        if open.len() != 1 {
            continue;
        }
        let e = open[0];
        done[e] = true;
        let br = &grid.branches()[e];
        let (i, j) = (grid.bus_position(br.from)?, grid.bus_position(br.to)?);
        let (other, f) = if i == v { (j, residual[v]) } else { (i, -residual[v]) };
        flows[e] = f;
        residual[other] += residual[v];
        residual[v] = 0.0;
        let rest = incident[&other].iter().filter(|e| !done[**e]).count();
        if rest == 1 {
            queue.push_back(other);
        }
    }
    Ok(())
}
