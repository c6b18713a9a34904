//! Simultaneous modifications: Woodbury updates for several branches,
//! multi-switch merges through the `Xi` matrix, and multi-coupler splits.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{ptdf_from_inverse, FactorMatrix};
use crate::grid::{BranchId, BusId, Grid, GroundedSystem};
use crate::linalg;
use crate::single::BranchDelta;
use crate::topology::TriConfig;

/// Ordered list of branch susceptance changes applied as one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModificationSet {
    entries: Vec<BranchDelta>,
}

impl ModificationSet {
    pub fn new(entries: Vec<BranchDelta>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &entries {
            if !seen.insert(d.branch) {
                return Err(Error::InvalidModification(format!(
                    "branch {} appears twice in the modification set",
                    d.branch
                )));
            }
        }
        Ok(ModificationSet { entries })
    }

    pub fn outages(grid: &Grid, branches: &[BranchId]) -> Result<Self> {
        let entries = branches
            .iter()
            .map(|&b| BranchDelta::outage(grid, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[BranchDelta] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Post-modification effective susceptance per branch (grid order).
    pub fn modified_susceptances(&self, grid: &Grid) -> Result<DVector<f64>> {
        let mut b = grid.susceptances();
        for d in &self.entries {
            b[grid.branch_position(d.branch)?] += d.delta_b;
        }
        Ok(b)
    }

    /// The grid with the changes written into its branch list. A branch whose
    /// susceptance drops to zero is taken out of service; a positive change
    /// on an out-of-service line puts it back with the new value.
    pub fn apply_to(&self, grid: &Grid) -> Result<Grid> {
        let b = self.modified_susceptances(grid)?;
        let mut branches = grid.branches().to_vec();
        for d in &self.entries {
            let pos = grid.branch_position(d.branch)?;
            let br = &mut branches[pos];
            if b[pos].abs() <= 1e-12 * br.susceptance.max(1.0) {
                br.in_service = false;
            } else {
                if br.kind == crate::grid::BranchKind::Switch {
                    br.kind = crate::grid::BranchKind::Line;
                }
                br.susceptance = b[pos];
                br.in_service = true;
            }
        }
        grid.with_branches(branches)
    }

    fn context(&self) -> String {
        let ids: Vec<String> = self.entries.iter().map(|d| d.branch.to_string()).collect();
        format!("modification set [{}]", ids.join(", "))
    }
}

/// `B_m^-1 = B_r^-1 - B_r^-1 U (A^-1 + U^T B_r^-1 U)^-1 U^T B_r^-1`.
pub fn woodbury_update(
    sys: &GroundedSystem,
    grid: &Grid,
    mods: &ModificationSet,
) -> Result<DMatrix<f64>> {
    woodbury_on(sys.inverse(), sys, grid, mods)
}

fn woodbury_on(
    inverse: &DMatrix<f64>,
    sys: &GroundedSystem,
    grid: &Grid,
    mods: &ModificationSet,
) -> Result<DMatrix<f64>> {
    let active: Vec<&BranchDelta> = mods.entries.iter().filter(|d| d.delta_b != 0.0).collect();
    for d in &active {
        let b = grid.branch(d.branch)?.effective_susceptance();
        if b + d.delta_b < 0.0 && (b + d.delta_b).abs() > 1e-12 * b.max(1.0) {
            return Err(Error::InvalidModification(format!(
                "branch {}: susceptance {b} + {} is negative",
                d.branch, d.delta_b
            )));
        }
    }
    if active.is_empty() {
        return Ok(inverse.clone());
    }
    let index = sys.index();
    let nus: Vec<_> = active
        .iter()
        .map(|d| Ok(index.nu_branch(grid.branch(d.branch)?)))
        .collect::<Result<_>>()?;
    let m = active.len();
    let n = inverse.nrows();
    let mut x = DMatrix::zeros(n, m);
    for (j, nu) in nus.iter().enumerate() {
        x.set_column(j, &linalg::inv_times_nu(inverse, nu));
    }
    let mut inner = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            inner[(i, j)] = linalg::nu_dot(&nus[i], &x.column(j).into_owned());
        }
    }
    let k_scale = linalg::max_abs(&inner);
    let mut a_scale: f64 = 0.0;
    for (i, d) in active.iter().enumerate() {
        inner[(i, i)] += 1.0 / d.delta_b;
        a_scale = a_scale.max((1.0 / d.delta_b).abs());
    }
    let y = linalg::solve_checked(&inner, &x.transpose(), k_scale.max(a_scale))
        .map_err(|pivot| Error::islanding(mods.context(), pivot))?;
    let mut out = inverse - &x * y;
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// `PTDF_{a,i} = (b_a + db_a) nu_a^T B_m^-1 u_i` for every branch.
pub fn multi_ptdf(sys: &GroundedSystem, grid: &Grid, mods: &ModificationSet) -> Result<FactorMatrix> {
    let inv = woodbury_update(sys, grid, mods)?;
    let b = mods.modified_susceptances(grid)?;
    Ok(ptdf_from_inverse(grid, sys.index(), &inv, |e| b[e]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchState {
    Open,
    Closed,
}

/// `U`, `B_r^-1 U`, `K = U^T B_r^-1 U` and `K_d` for a fixed list of
/// switches against the all-open reference. Built once, shared by every
/// switch setting.
#[derive(Clone, Debug)]
pub struct SwitchCache {
    switches: Vec<BranchId>,
    endpoints: Vec<(BusId, BusId)>,
    x: DMatrix<f64>,
    k: DMatrix<f64>,
    k_diag: DVector<f64>,
}

impl SwitchCache {
    pub fn new(sys: &GroundedSystem, grid: &Grid, switches: &[BranchId]) -> Result<Self> {
        let mut seen = HashSet::new();
        let index = sys.index();
        let n = sys.dim();
        let m = switches.len();
        let mut x = DMatrix::zeros(n, m);
        let mut nus = Vec::with_capacity(m);
        let mut endpoints = Vec::with_capacity(m);
        for (j, &s) in switches.iter().enumerate() {
            if !seen.insert(s) {
                return Err(Error::InvalidModification(format!("switch {s} listed twice")));
            }
            let br = grid.branch(s)?;
            if br.effective_susceptance() != 0.0 {
                return Err(Error::InvalidModification(format!(
                    "branch {s} is part of the reference; switches must be open there"
                )));
            }
            let nu = index.nu_branch(br);
            x.set_column(j, &linalg::inv_times_nu(sys.inverse(), &nu));
            nus.push(nu);
            endpoints.push((br.from, br.to));
        }
        let k = DMatrix::from_fn(m, m, |i, j| linalg::nu_dot(&nus[i], &x.column(j).into_owned()));
        let k_diag = k.diagonal();
        let scale = sys.inverse().diagonal().amax();
        for (j, &s) in switches.iter().enumerate() {
            if !(k_diag[j] > 1e-12 * scale) {
                return Err(Error::DegenerateSwitch {
                    switch: s,
                    value: k_diag[j],
                });
            }
        }
        Ok(SwitchCache {
            switches: switches.to_vec(),
            endpoints,
            x,
            k,
            k_diag,
        })
    }

    pub fn switches(&self) -> &[BranchId] {
        &self.switches
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn k_diag(&self) -> &DVector<f64> {
        &self.k_diag
    }

    /// `xi_i = b k_i / (1 + b k_i)` for a finite switch susceptance `b`.
    pub fn xi_finite(&self, i: usize, b: f64) -> f64 {
        let bk = b * self.k_diag[i];
        bk / (1.0 + bk)
    }
}

/// Open/closed setting per cached switch, in cache order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchStates(pub Vec<SwitchState>);

impl SwitchStates {
    pub fn all(state: SwitchState, m: usize) -> Self {
        SwitchStates(vec![state; m])
    }

    /// Setting number `mask` of the `2^M` enumeration: bit `i` closes switch
    /// `i`.
    pub fn from_mask(mask: u64, m: usize) -> Self {
        SwitchStates(
            (0..m)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        SwitchState::Closed
                    } else {
                        SwitchState::Open
                    }
                })
                .collect(),
        )
    }

    pub fn from_map(cache: &SwitchCache, map: &BTreeMap<BranchId, SwitchState>) -> Result<Self> {
        for id in map.keys() {
            if !cache.switches.contains(id) {
                return Err(Error::UnknownBranch(*id));
            }
        }
        Ok(SwitchStates(
            cache
                .switches
                .iter()
                .map(|s| map.get(s).copied().unwrap_or(SwitchState::Open))
                .collect(),
        ))
    }
}

/// Diagonal of `Xi`: 0 for open, 1 for closed.
pub fn xi_from_states(cache: &SwitchCache, states: &SwitchStates) -> Result<DVector<f64>> {
    linalg::check_len(cache.switches.len(), states.0.len())?;
    Ok(DVector::from_iterator(
        states.0.len(),
        states.0.iter().map(|s| match s {
            SwitchState::Open => 0.0,
            SwitchState::Closed => 1.0,
        }),
    ))
}

/// `B_m^-1 = B_r^-1 - B_r^-1 U Xi (K_d + (K - K_d) Xi)^-1 U^T B_r^-1`.
pub fn multi_merge_inverse(
    sys: &GroundedSystem,
    cache: &SwitchCache,
    states: &SwitchStates,
) -> Result<DMatrix<f64>> {
    let xi = xi_from_states(cache, states)?;
    if xi.iter().all(|&v| v == 0.0) {
        return Ok(sys.inverse().clone());
    }
    let m = xi.len();
    let bracket = DMatrix::from_fn(m, m, |i, j| {
        let kd = if i == j { cache.k_diag[i] } else { 0.0 };
        kd + (cache.k[(i, j)] - kd) * xi[j]
    });
    let y = linalg::solve_checked(&bracket, &cache.x.transpose(), linalg::max_abs(&cache.k)).map_err(
        |pivot| {
            redundant_closing(cache, states).unwrap_or_else(|| {
                Error::islanding("switch setting produces a singular merge", pivot)
            })
        },
    )?;
    let x_xi = DMatrix::from_fn(cache.x.nrows(), m, |r, j| cache.x[(r, j)] * xi[j]);
    let mut out = sys.inverse() - x_xi * y;
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// Closed switches whose endpoints are already joined through other closed
/// switches.
fn redundant_closing(cache: &SwitchCache, states: &SwitchStates) -> Option<Error> {
    let mut parent: HashMap<BusId, BusId> = HashMap::new();
    fn find(parent: &mut HashMap<BusId, BusId>, x: BusId) -> BusId {
        let p = *parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let root = find(parent, p);
        parent.insert(x, root);
        root
    }
    let mut cycle = Vec::new();
    for (i, s) in states.0.iter().enumerate() {
        if *s != SwitchState::Closed {
            continue;
        }
        let (a, b) = cache.endpoints[i];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            cycle.push(cache.switches[i]);
        } else {
            parent.insert(ra, rb);
        }
    }
    (!cycle.is_empty()).then_some(Error::RedundantClosing { switches: cycle })
}

/// PTDF rows `b_a nu_a^T B_m^-1` after a switch setting, for every branch
/// that is not one of the cached switches.
pub fn merged_multi_ptdf(
    sys: &GroundedSystem,
    grid: &Grid,
    cache: &SwitchCache,
    states: &SwitchStates,
) -> Result<FactorMatrix> {
    let inv = multi_merge_inverse(sys, cache, states)?;
    let b = grid.susceptances();
    let keep: Vec<usize> = grid
        .branches()
        .iter()
        .enumerate()
        .filter(|(_, br)| !cache.switches.contains(&br.id))
        .map(|(e, _)| e)
        .collect();
    let full = ptdf_from_inverse(grid, sys.index(), &inv, |e| b[e]);
    Ok(FactorMatrix {
        kind: full.kind,
        values: full.values.select_rows(keep.iter()),
        rows: keep.iter().map(|&e| full.rows[e]).collect(),
        cols: full.cols,
    })
}

/// `B_o^-1 = B_c^-1 + (1 - B_c^-1 B_o) U [U^T (B_o - B_o B_c^-1 B_o) U]^-1
/// U^T (1 - B_o B_c^-1)` for all couplers of the configuration.
pub fn multi_split_inverse(tri: &TriConfig) -> Result<DMatrix<f64>> {
    let (w, s_inv_wt) = tri.checked_split_solve()?;
    let mut out = tri.closed_inverse() + w * s_inv_wt;
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// PTDF of the open grid after all splits of the configuration.
pub fn multi_split_ptdf(tri: &TriConfig) -> Result<FactorMatrix> {
    let inv = multi_split_inverse(tri)?;
    let b = tri.grid_open().susceptances();
    Ok(ptdf_from_inverse(tri.grid_open(), tri.index_open(), &inv, |e| b[e]))
}
