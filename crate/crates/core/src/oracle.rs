//! Brute-force reference: rebuild the modified grid, assemble its Laplacian
//! from scratch and invert it with a general LU. Shares no code with the
//! update formulas, and is used to check them.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Branch, BranchId, BranchKind, Bus, BusId, Grid};
use crate::single::BranchDelta;
use crate::topology::{Side, SplitSpec};

/// Modification applied by rebuilding.
#[derive(Clone, Debug)]
pub enum Modification<'a> {
    None,
    Deltas(&'a [BranchDelta]),
    Splits(&'a [SplitSpec]),
    /// Close the listed switches, modelled as lines of susceptance `b_large`.
    Switches { closed: &'a [BranchId], b_large: f64 },
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub grid: Grid,
    /// Non-slack buses in grid order.
    pub rows: Vec<BusId>,
    /// Susceptance used for each branch (grid order).
    pub susceptances: DVector<f64>,
    pub inverse: DMatrix<f64>,
    pub angles: DVector<f64>,
    pub flows: DVector<f64>,
}

impl OracleSolution {
    /// Flows for another injection vector (full length, bus order).
    pub fn flows_for(&self, p: &DVector<f64>) -> DVector<f64> {
        let theta = self.angles_for(p);
        self.flows_from_angles(&theta)
    }

    pub fn angles_for(&self, p: &DVector<f64>) -> DVector<f64> {
        let reduced = DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|id| p[self.grid.bus_position(*id).unwrap()]),
        );
        &self.inverse * reduced
    }

    /// Flows with phase shifts `theta_shift` (radians, branch order) from
    /// the branch equation `f = b (theta_from - theta_to + theta_shift)`,
    /// solving with the shift moved into the injections.
    pub fn flows_with_shifts(&self, p: &DVector<f64>, shifts: &DVector<f64>) -> DVector<f64> {
        let mut p_hat = p.clone();
        for (e, br) in self.grid.branches().iter().enumerate() {
            let w = self.susceptances[e] * shifts[e];
            p_hat[self.grid.bus_position(br.from).unwrap()] -= w;
            p_hat[self.grid.bus_position(br.to).unwrap()] += w;
        }
        let theta = self.angles_for(&p_hat);
        let mut f = self.flows_from_angles(&theta);
        for e in 0..f.len() {
            f[e] += self.susceptances[e] * shifts[e];
        }
        f
    }

    fn flows_from_angles(&self, theta: &DVector<f64>) -> DVector<f64> {
        let row: HashMap<BusId, usize> = self.rows.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let angle = |b: BusId| row.get(&b).map_or(0.0, |&i| theta[i]);
        DVector::from_iterator(
            self.grid.n_branches(),
            self.grid
                .branches()
                .iter()
                .zip(self.susceptances.iter())
                .map(|(br, &b)| b * (angle(br.from) - angle(br.to))),
        )
    }

    /// Dense PTDF (branch x non-slack bus).
    pub fn ptdf(&self) -> DMatrix<f64> {
        let row: HashMap<BusId, usize> = self.rows.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let mut out = DMatrix::zeros(self.grid.n_branches(), self.rows.len());
        for (e, br) in self.grid.branches().iter().enumerate() {
            let b = self.susceptances[e];
            for c in 0..self.rows.len() {
                let f = row.get(&br.from).map_or(0.0, |&i| self.inverse[(i, c)]);
                let t = row.get(&br.to).map_or(0.0, |&i| self.inverse[(i, c)]);
                out[(e, c)] = b * (f - t);
            }
        }
        out
    }
}

/// The modified grid, built directly.
pub fn rebuild(grid: &Grid, modification: &Modification) -> Result<Grid> {
    match modification {
        Modification::None | Modification::Switches { .. } => Ok(grid.clone()),
        Modification::Deltas(deltas) => {
            let mut branches = grid.branches().to_vec();
            for d in deltas.iter() {
                let pos = grid.branch_position(d.branch)?;
                let br = &mut branches[pos];
                let current = if br.in_service && br.kind != BranchKind::Switch {
                    br.susceptance
                } else {
                    0.0
                };
                let b = current + d.delta_b;
                if b.abs() <= 1e-12 * current.max(1.0) {
                    br.in_service = false;
                } else {
                    if br.kind == BranchKind::Switch {
                        br.kind = BranchKind::Line;
                    }
                    br.susceptance = b;
                    br.in_service = true;
                }
            }
            grid.with_branches(branches)
        }
        Modification::Splits(splits) => {
            let mut g = grid.clone();
            for s in splits.iter() {
                g = split_directly(&g, s)?;
            }
            Ok(g)
        }
    }
}

fn split_directly(grid: &Grid, s: &SplitSpec) -> Result<Grid> {
    let new_id = s
        .new_bus
        .unwrap_or_else(|| BusId(grid.buses().iter().map(|b| b.id.0).max().unwrap() + 1));
    let moved = s.injection_to_new.unwrap_or(0.0);
    let mut buses: Vec<Bus> = grid
        .buses()
        .iter()
        .map(|b| {
            let mut b = b.clone();
            if b.id == s.parent {
                b.injection -= moved;
            }
            b
        })
        .collect();
    buses.push(Bus::new(new_id.0, moved));
    let branches = grid
        .branches()
        .iter()
        .map(|br| {
            let mut br = br.clone();
            if s.assignments.get(&br.id) == Some(&Side::New) {
                if br.from == s.parent {
                    br.from = new_id;
                } else {
                    br.to = new_id;
                }
            }
            br
        })
        .collect();
    Ok(Grid::new(buses, branches)?.with_base_mva(grid.base_mva()))
}

/// Rebuilds, checks connectivity by traversal, assembles and inverts.
pub fn rebuild_and_solve(grid: &Grid, modification: &Modification) -> Result<OracleSolution> {
    let g = rebuild(grid, modification)?;
    let closed: BTreeSet<BranchId> = match modification {
        Modification::Switches { closed, .. } => closed.iter().copied().collect(),
        _ => BTreeSet::new(),
    };
    let b_large = match modification {
        Modification::Switches { b_large, .. } => *b_large,
        _ => 0.0,
    };
    let susceptances = DVector::from_iterator(
        g.n_branches(),
        g.branches().iter().map(|br| {
            if closed.contains(&br.id) {
                b_large
            } else if br.kind == BranchKind::Switch || !br.in_service {
                0.0
            } else {
                br.susceptance
            }
        }),
    );

    let n = g.n_buses();
    let pos: HashMap<BusId, usize> = g.buses().iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut full = DMatrix::zeros(n, n);
    for (br, &b) in g.branches().iter().zip(susceptances.iter()) {
        if b == 0.0 {
            continue;
        }
        let (i, j) = (pos[&br.from], pos[&br.to]);
        full[(i, i)] += b;
        full[(j, j)] += b;
        full[(i, j)] -= b;
        full[(j, i)] -= b;
        let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
        parent[ri] = rj;
    }
    let r0 = root(&mut parent, 0);
    if (0..n).any(|i| root(&mut parent, i) != r0) {
        let mut groups: HashMap<usize, Vec<BusId>> = HashMap::new();
        for (i, bus) in g.buses().iter().enumerate() {
            groups.entry(root(&mut parent, i)).or_default().push(bus.id);
        }
        let mut components: Vec<Vec<BusId>> = groups.into_values().collect();
        components.sort();
        return Err(Error::Disconnected { components });
    }

    let slack_pos = g.buses().iter().position(|b| b.is_slack).unwrap();
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack_pos).collect();
    let reduced = full.select_rows(keep.iter()).select_columns(keep.iter());
    let inverse = reduced.lu().try_inverse().ok_or(Error::Singular)?;
    let rows: Vec<BusId> = keep.iter().map(|&i| g.buses()[i].id).collect();
    let mut sol = OracleSolution {
        grid: g,
        rows,
        susceptances,
        inverse,
        angles: DVector::zeros(0),
        flows: DVector::zeros(0),
    };
    let p = sol.grid.injections();
    sol.angles = sol.angles_for(&p);
    sol.flows = sol.flows_from_angles(&sol.angles);
    Ok(sol)
}

/// Exact merge reference: buses joined by the `closed` switches are
/// contracted into one node, the contracted Laplacian is assembled and
/// inverted, and the result is expanded back to the rows of `grid` (non-slack
/// buses in grid order; buses merged with the slack get zero rows).
pub fn contract_and_solve(grid: &Grid, closed: &[BranchId]) -> Result<DMatrix<f64>> {
    let n = grid.n_buses();
    let pos: HashMap<BusId, usize> = grid.buses().iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut group: Vec<usize> = (0..n).collect();
    fn find(group: &mut [usize], mut x: usize) -> usize {
        while group[x] != x {
            group[x] = group[group[x]];
            x = group[x];
        }
        x
    }
    for id in closed {
        let br = grid.branch(*id)?;
        let (a, b) = (find(&mut group, pos[&br.from]), find(&mut group, pos[&br.to]));
        group[a] = b;
    }
    let slack_pos = grid.buses().iter().position(|b| b.is_slack).unwrap();
    let slack_root = find(&mut group, slack_pos);
    let mut node_of_root: HashMap<usize, usize> = HashMap::new();
    let mut node = vec![None; n];
    for i in 0..n {
        let r = find(&mut group, i);
        if r == slack_root {
            continue;
        }
        let next = node_of_root.len();
        node[i] = Some(*node_of_root.entry(r).or_insert(next));
    }
    let m = node_of_root.len();
    let mut lap = DMatrix::zeros(m, m);
    for br in grid.branches() {
        if br.kind == BranchKind::Switch || !br.in_service {
            continue;
        }
        let b = br.susceptance;
        let (i, j) = (node[pos[&br.from]], node[pos[&br.to]]);
        if find(&mut group, pos[&br.from]) == find(&mut group, pos[&br.to]) {
            continue;
        }
        if let Some(i) = i {
            lap[(i, i)] += b;
        }
        if let Some(j) = j {
            lap[(j, j)] += b;
        }
        if let (Some(i), Some(j)) = (i, j) {
            lap[(i, j)] -= b;
            lap[(j, i)] -= b;
        }
    }
    let inv = if m == 0 {
        DMatrix::zeros(0, 0)
    } else {
        lap.lu().try_inverse().ok_or(Error::Singular)?
    };
    let rows: Vec<Option<usize>> = (0..n).filter(|&i| i != slack_pos).map(|i| node[i]).collect();
    Ok(DMatrix::from_fn(rows.len(), rows.len(), |r, c| match (rows[r], rows[c]) {
        (Some(a), Some(b)) => inv[(a, b)],
        _ => 0.0,
    }))
}

/// Random connected grid: a random spanning tree plus
/// `max(0, round(n d / 2) - (n - 1))` extra distinct edges, susceptances
/// uniform in `[0.5, 2]`, balanced random injections, slack at bus 1.
pub fn random_grid(seed: u64, n: usize, avg_degree: f64) -> Grid {
    assert!(n >= 2, "random grid needs at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut list = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order[1..].shuffle(&mut rng);
    for k in 1..n {
        let a = order[rng.random_range(0..k)];
        let b = order[k];
        edges.insert((a.min(b), a.max(b)));
        list.push((a, b));
    }
    let target = ((n as f64 * avg_degree / 2.0).round() as usize).saturating_sub(n - 1);
    let max_extra = n * (n - 1) / 2 - (n - 1);
    let extra = target.min(max_extra);
    let mut added = 0;
    while added < extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || !edges.insert((a.min(b), a.max(b))) {
            continue;
        }
        list.push((a, b));
        added += 1;
    }
    let branches = list
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            Branch::line(k as u32 + 1, a as u32 + 1, b as u32 + 1, rng.random_range(0.5..=2.0))
        })
        .collect();
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    p.iter_mut().for_each(|v| *v -= mean);
    let residual: f64 = p.iter().sum();
    p[0] -= residual;
    let buses = p
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == 0 {
                Bus::slack(1, v)
            } else {
                Bus::new(i as u32 + 1, v)
            }
        })
        .collect();
    Grid::new(buses, branches).expect("generated grid is valid")
}

/// Turns `count` random lines into PSTs with shifts uniform in
/// `[-0.2, 0.2]` rad.
pub fn with_random_psts(grid: &Grid, seed: u64, count: usize) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..grid.n_branches()).collect();
    positions.shuffle(&mut rng);
    let mut branches = grid.branches().to_vec();
    for &pos in positions.iter().take(count) {
        let br = &branches[pos];
        branches[pos] = Branch::pst(
            br.id.0,
            br.from.0,
            br.to.0,
            br.susceptance,
            rng.random_range(-0.2..=0.2),
        );
    }
    grid.with_branches(branches).expect("valid grid")
}

/// Adds `count` open switches between random distinct bus pairs, with ids
/// following the largest branch id.
pub fn with_random_switches(grid: &Grid, seed: u64, count: usize) -> (Grid, Vec<BranchId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branches = grid.branches().to_vec();
    let mut next = branches.iter().map(|b| b.id.0).max().unwrap_or(0) + 1;
    let mut ids = Vec::new();
    let n = grid.n_buses();
    while ids.len() < count {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let (fa, fb) = (grid.buses()[a].id, grid.buses()[b].id);
        branches.push(Branch::switch(next, fa.0, fb.0, false));
        ids.push(BranchId(next));
        next += 1;
    }
    (grid.with_branches(branches).expect("valid grid"), ids)
}

/// Random split of a bus with at least two incident in-service branches.
/// Every incident branch is assigned; at least one goes to each side, and a
/// random share of the injection moves. The split may island the grid.
pub fn random_split(grid: &Grid, seed: u64) -> Option<SplitSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<&Bus> = grid
        .buses()
        .iter()
        .filter(|b| grid.branches().iter().filter(|br| br.touches(b.id)).count() >= 2)
        .collect();
    candidates.shuffle(&mut rng);
    let bus = candidates.first()?;
    let incident: Vec<BranchId> = grid
        .branches()
        .iter()
        .filter(|br| br.touches(bus.id))
        .map(|br| br.id)
        .collect();
    let pivot = rng.random_range(0..incident.len());
    let mut spec = SplitSpec::new(bus.id);
    let mut moved_any = false;
    let mut kept_any = false;
    for (i, &id) in incident.iter().enumerate() {
        let new = if i == pivot {
            true
        } else if i == (pivot + 1) % incident.len() {
            false
        } else {
            rng.random_bool(0.5)
        };
        moved_any |= new;
        kept_any |= !new;
        spec = spec.assign(id, if new { Side::New } else { Side::Parent });
    }
    debug_assert!(moved_any && kept_any);
    Some(spec.with_injection_to_new(bus.injection * rng.random_range(0.0..1.0)))
}

/// `||a - b||_F / max(||b||_F, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
