//! Grid data model and the grounded nodal susceptance matrix.
//!
//! A [`Grid`] is immutable once built. Bus order and branch order are the
//! input order and are never re-sorted: factor signs depend on branch
//! orientation, and every matrix produced by this crate indexes buses and
//! branches in that order.
//!
//! The grounded system drops the slack bus. Its row/column layout is kept by
//! [`BusIndex`]: non-slack buses in grid order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BranchId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Display for BranchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: BusId,
    /// Net injection, per-unit.
    pub injection: f64,
    pub is_slack: bool,
}

impl Bus {
    pub fn new(id: u32, injection: f64) -> Self {
        Bus {
            id: BusId(id),
            injection,
            is_slack: false,
        }
    }

    pub fn slack(id: u32, injection: f64) -> Self {
        Bus {
            id: BusId(id),
            injection,
            is_slack: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    #[default]
    Line,
    /// Ideal switch: susceptance 0 when open, infinite when closed. Never
    /// enters the grounded Laplacian directly.
    Switch,
    /// Phase-shifting transformer.
    Pst,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub id: BranchId,
    pub from: BusId,
    pub to: BusId,
    /// Series susceptance, per-unit.
    pub susceptance: f64,
    pub kind: BranchKind,
    /// Phase shift in radians, PST only.
    pub shift_angle: f64,
    /// For lines and PSTs: in service. For switches: closed.
    pub in_service: bool,
}

impl Branch {
    pub fn line(id: u32, from: u32, to: u32, susceptance: f64) -> Self {
        Branch {
            id: BranchId(id),
            from: BusId(from),
            to: BusId(to),
            susceptance,
            kind: BranchKind::Line,
            shift_angle: 0.0,
            in_service: true,
        }
    }

    pub fn switch(id: u32, from: u32, to: u32, closed: bool) -> Self {
        Branch {
            id: BranchId(id),
            from: BusId(from),
            to: BusId(to),
            susceptance: 0.0,
            kind: BranchKind::Switch,
            shift_angle: 0.0,
            in_service: closed,
        }
    }

    pub fn pst(id: u32, from: u32, to: u32, susceptance: f64, shift_angle: f64) -> Self {
        Branch {
            id: BranchId(id),
            from: BusId(from),
            to: BusId(to),
            susceptance,
            kind: BranchKind::Pst,
            shift_angle,
            in_service: true,
        }
    }

    pub fn out_of_service(mut self) -> Self {
        self.in_service = false;
        self
    }

    /// Susceptance as it enters `E 𝔅 E^T`: zero for switches and for
    /// out-of-service branches.
    pub fn effective_susceptance(&self) -> f64 {
        if self.kind == BranchKind::Switch || !self.in_service {
            0.0
        } else {
            self.susceptance
        }
    }

    pub fn is_closed_switch(&self) -> bool {
        self.kind == BranchKind::Switch && self.in_service
    }

    pub fn touches(&self, bus: BusId) -> bool {
        self.from == bus || self.to == bus
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    base_mva: f64,
    bus_pos: HashMap<BusId, usize>,
    branch_pos: HashMap<BranchId, usize>,
}

/// `|sum p| <= BALANCE_TOL * max(1, sum |p|)`.
pub const BALANCE_TOL: f64 = 1e-6;

impl Grid {
    pub fn new(buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Grid> {
        let grid = Self::unchecked(buses, branches)?;
        grid.check_balance()?;
        Ok(grid)
    }

    /// Builds the grid and moves any imbalance onto the slack bus. Returns
    /// the adjustment that was applied to the slack injection.
    pub fn rebalanced(mut buses: Vec<Bus>, branches: Vec<Branch>) -> Result<(Grid, f64)> {
        let sum: f64 = buses.iter().map(|b| b.injection).sum();
        if let Some(slack) = buses.iter_mut().find(|b| b.is_slack) {
            slack.injection -= sum;
        }
        let grid = Self::unchecked(buses, branches)?;
        Ok((grid, -sum))
    }

    fn unchecked(buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Grid> {
        if buses.is_empty() {
            return Err(Error::InvalidGrid("grid has no buses".into()));
        }
        let mut bus_pos = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if bus_pos.insert(b.id, i).is_some() {
                return Err(Error::InvalidGrid(format!("duplicate bus id {}", b.id)));
            }
            if !b.injection.is_finite() {
                return Err(Error::InvalidGrid(format!("bus {}: non-finite injection", b.id)));
            }
        }
        let slacks = buses.iter().filter(|b| b.is_slack).count();
        if slacks != 1 {
            return Err(Error::InvalidGrid(format!(
                "expected exactly one slack bus, found {slacks}"
            )));
        }
        let mut branch_pos = HashMap::with_capacity(branches.len());
        for (i, br) in branches.iter().enumerate() {
            if branch_pos.insert(br.id, i).is_some() {
                return Err(Error::InvalidGrid(format!("duplicate branch id {}", br.id)));
            }
            let structural = |reason: String| Error::Structural {
                branch: br.id,
                reason,
            };
            for end in [br.from, br.to] {
                if !bus_pos.contains_key(&end) {
                    return Err(structural(format!("endpoint bus {end} does not exist")));
                }
            }
            if br.from == br.to {
                return Err(structural("from and to bus coincide".into()));
            }
            if !(br.susceptance >= 0.0) || !br.susceptance.is_finite() {
                return Err(structural(format!("invalid susceptance {}", br.susceptance)));
            }
            if br.kind != BranchKind::Switch && br.in_service && br.susceptance == 0.0 {
                return Err(structural("in-service branch with zero susceptance".into()));
            }
            if br.kind != BranchKind::Pst && br.shift_angle != 0.0 {
                return Err(structural("phase shift on a non-PST branch".into()));
            }
        }
        Ok(Grid {
            buses,
            branches,
            base_mva: 1.0,
            bus_pos,
            branch_pos,
        })
    }

    pub fn with_base_mva(mut self, base_mva: f64) -> Self {
        self.base_mva = base_mva;
        self
    }

    fn check_balance(&self) -> Result<()> {
        let sum: f64 = self.buses.iter().map(|b| b.injection).sum();
        let abs: f64 = self.buses.iter().map(|b| b.injection.abs()).sum();
        if sum.abs() > BALANCE_TOL * abs.max(1.0) {
            return Err(Error::Unbalanced { sum });
        }
        Ok(())
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Same buses and base, new branch list.
    pub fn with_branches(&self, branches: Vec<Branch>) -> Result<Grid> {
        Ok(Grid::unchecked(self.buses.clone(), branches)?.with_base_mva(self.base_mva))
    }

    pub fn into_parts(self) -> (Vec<Bus>, Vec<Branch>) {
        (self.buses, self.branches)
    }

    /// MVA base used to report flows in MW. 1.0 for grids without one.
    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack(&self) -> BusId {
        self.buses.iter().find(|b| b.is_slack).map(|b| b.id).unwrap()
    }

    pub fn bus_position(&self, id: BusId) -> Result<usize> {
        self.bus_pos.get(&id).copied().ok_or(Error::UnknownBus(id))
    }

    pub fn branch_position(&self, id: BranchId) -> Result<usize> {
        self.branch_pos
            .get(&id)
            .copied()
            .ok_or(Error::UnknownBranch(id))
    }

    pub fn bus(&self, id: BusId) -> Result<&Bus> {
        Ok(&self.buses[self.bus_position(id)?])
    }

    pub fn branch(&self, id: BranchId) -> Result<&Branch> {
        Ok(&self.branches[self.branch_position(id)?])
    }

    pub fn branch_ids(&self) -> Vec<BranchId> {
        self.branches.iter().map(|b| b.id).collect()
    }

    pub fn max_bus_id(&self) -> BusId {
        self.buses.iter().map(|b| b.id).max().unwrap()
    }

    /// Full-length injection vector in bus order.
    pub fn injections(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.injection))
    }

    /// Diagonal of 𝔅 as a vector in branch order (effective susceptances).
    pub fn susceptances(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.branches.len(),
            self.branches.iter().map(Branch::effective_susceptance),
        )
    }

    /// Connected components using in-service lines and PSTs, plus closed
    /// switches when `with_closed_switches` is set. Components are listed in
    /// order of their first bus.
    pub fn components(&self, with_closed_switches: bool) -> Vec<Vec<BusId>> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let conducts = br.effective_susceptance() > 0.0
                || (with_closed_switches && br.is_closed_switch());
            if conducts {
                let (i, j) = (self.bus_pos[&br.from], self.bus_pos[&br.to]);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                comp.push(self.buses[u].id);
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Bridges among in-service lines/PSTs: branches whose removal alone
    /// disconnects the grid.
    pub fn bridges(&self) -> HashSet<BranchId> {
        let mut out = HashSet::new();
        for (k, br) in self.branches.iter().enumerate() {
            if br.effective_susceptance() == 0.0 {
                continue;
            }
            let mut branches = self.branches.clone();
            branches[k].in_service = false;
            let g = Grid {
                buses: self.buses.clone(),
                branches,
                base_mva: self.base_mva,
                bus_pos: self.bus_pos.clone(),
                branch_pos: self.branch_pos.clone(),
            };
            if g.components(false).len() > 1 {
                out.insert(br.id);
            }
        }
        out
    }
}

/// Row layout of grounded quantities: every bus except the slack, in grid
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct BusIndex {
    slack: BusId,
    order: Vec<BusId>,
    row_of: HashMap<BusId, usize>,
    /// Row for each bus position in the grid (None for the slack).
    by_position: Vec<Option<usize>>,
}

impl BusIndex {
    pub fn new(grid: &Grid) -> Self {
        let slack = grid.slack();
        let mut order = Vec::with_capacity(grid.n_buses() - 1);
        let mut row_of = HashMap::new();
        let mut by_position = Vec::with_capacity(grid.n_buses());
        for b in grid.buses() {
            if b.id == slack {
                by_position.push(None);
            } else {
                row_of.insert(b.id, order.len());
                by_position.push(Some(order.len()));
                order.push(b.id);
            }
        }
        BusIndex {
            slack,
            order,
            row_of,
            by_position,
        }
    }

    pub fn slack(&self) -> BusId {
        self.slack
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Bus ids in row order.
    pub fn buses(&self) -> &[BusId] {
        &self.order
    }

    /// Grounded row of a bus, `None` for the slack.
    pub fn row(&self, bus: BusId) -> Option<usize> {
        self.row_of.get(&bus).copied()
    }

    pub fn bus_at(&self, row: usize) -> BusId {
        self.order[row]
    }

    /// Sparse `nu` for an oriented pair: +1 at `from`, -1 at `to`, slack
    /// entries dropped.
    pub fn nu(&self, from: BusId, to: BusId) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(2);
        if let Some(i) = self.row(from) {
            out.push((i, 1.0));
        }
        if let Some(j) = self.row(to) {
            out.push((j, -1.0));
        }
        out
    }

    pub fn nu_branch(&self, branch: &Branch) -> Vec<(usize, f64)> {
        self.nu(branch.from, branch.to)
    }

    /// Drops the slack entry of a full-length (bus order) vector.
    pub fn reduce(&self, full: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(self.by_position.len(), full.len())?;
        let mut out = DVector::zeros(self.order.len());
        for (pos, row) in self.by_position.iter().enumerate() {
            if let Some(r) = row {
                out[*r] = full[pos];
            }
        }
        Ok(out)
    }

    /// Inverse of [`reduce`](Self::reduce), with zero at the slack.
    pub fn expand(&self, reduced: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(self.order.len(), reduced.len())?;
        Ok(DVector::from_iterator(
            self.by_position.len(),
            self.by_position
                .iter()
                .map(|row| row.map_or(0.0, |r| reduced[r])),
        ))
    }
}

#[derive(Clone, Debug)]
pub struct IncidenceMatrix {
    /// `N_n x N_e`, rows in bus order.
    pub full: DMatrix<f64>,
    /// Slack row removed, rows in [`BusIndex`] order.
    pub reduced: DMatrix<f64>,
    pub bus_ids: Vec<BusId>,
    pub branch_ids: Vec<BranchId>,
}

pub fn build_incidence(grid: &Grid) -> Result<IncidenceMatrix> {
    let index = BusIndex::new(grid);
    let (nn, ne) = (grid.n_buses(), grid.n_branches());
    let mut full = DMatrix::zeros(nn, ne);
    let mut reduced = DMatrix::zeros(index.len(), ne);
    for (e, br) in grid.branches().iter().enumerate() {
        let from = grid.bus_position(br.from).map_err(|_| Error::Structural {
            branch: br.id,
            reason: format!("dangling from bus {}", br.from),
        })?;
        let to = grid.bus_position(br.to).map_err(|_| Error::Structural {
            branch: br.id,
            reason: format!("dangling to bus {}", br.to),
        })?;
        full[(from, e)] = 1.0;
        full[(to, e)] = -1.0;
        for (row, v) in index.nu_branch(br) {
            reduced[(row, e)] = v;
        }
    }
    Ok(IncidenceMatrix {
        full,
        reduced,
        bus_ids: grid.buses().iter().map(|b| b.id).collect(),
        branch_ids: grid.branch_ids(),
    })
}

/// `E 𝔅 E^T` with the slack row and column removed, assembled branch by
/// branch.
pub fn grounded_laplacian(grid: &Grid, index: &BusIndex) -> DMatrix<f64> {
    let n = index.len();
    let mut b = DMatrix::zeros(n, n);
    for br in grid.branches() {
        let s = br.effective_susceptance();
        if s == 0.0 {
            continue;
        }
        let nu = index.nu_branch(br);
        for &(i, vi) in &nu {
            for &(j, vj) in &nu {
                b[(i, j)] += s * vi * vj;
            }
        }
    }
    b
}

/// The grounded Laplacian of a connected grid with its dense inverse.
///
/// Switches are open in this reference (they have no finite susceptance);
/// closed switches are applied on top through the merge formulas.
#[derive(Clone, Debug)]
pub struct GroundedSystem {
    index: BusIndex,
    laplacian: DMatrix<f64>,
    inverse: DMatrix<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl GroundedSystem {
    pub fn index(&self) -> &BusIndex {
        &self.index
    }

    pub fn slack(&self) -> BusId {
        self.index.slack()
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    /// Grounded Laplacian `B`.
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// `B^-1`.
    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Wraps an inverse obtained from an update formula so that the factor
    /// routines can run on the modified system. `laplacian` is kept for
    /// reference only; with closed switches merged it has no finite form and
    /// callers pass the switch-open Laplacian.
    pub fn from_updated_inverse(
        index: BusIndex,
        laplacian: DMatrix<f64>,
        inverse: DMatrix<f64>,
    ) -> Result<Self> {
        linalg::check_len(index.len(), inverse.nrows())?;
        linalg::check_len(index.len(), inverse.ncols())?;
        Ok(GroundedSystem {
            index,
            laplacian,
            inverse,
            factor: None,
        })
    }

    /// Solves `B X = rhs` with the stored Cholesky factor, or with the
    /// inverse when the system came from an update.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Some(f) => f.solve(rhs),
            None => &self.inverse * rhs,
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Some(f) => f.solve(rhs),
            None => &self.inverse * rhs,
        }
    }

    /// `nu_e^T B^-1 nu_e` for a branch.
    pub fn effective_reactance(&self, branch: &Branch) -> f64 {
        let nu = self.index.nu_branch(branch);
        let x = linalg::inv_times_nu(&self.inverse, &nu);
        linalg::nu_dot(&nu, &x)
    }
}

pub fn build_grounded_system(grid: &Grid) -> Result<GroundedSystem> {
    let components = grid.components(false);
    if components.len() > 1 {
        return Err(Error::Disconnected { components });
    }
    let index = BusIndex::new(grid);
    let laplacian = grounded_laplacian(grid, &index);
    let factor = Cholesky::new(laplacian.clone()).ok_or(Error::Singular)?;
    let mut inverse = factor.inverse();
    linalg::symmetrize(&mut inverse);
    Ok(GroundedSystem {
        index,
        laplacian,
        inverse,
        factor: Some(factor),
    })
}

/// Full (ungrounded) Laplacian in bus order.
pub fn full_laplacian(grid: &Grid) -> DMatrix<f64> {
    let n = grid.n_buses();
    let mut l = DMatrix::zeros(n, n);
    for br in grid.branches() {
        let s = br.effective_susceptance();
        if s == 0.0 {
            continue;
        }
        let (i, j) = (grid.bus_pos[&br.from], grid.bus_pos[&br.to]);
        l[(i, i)] += s;
        l[(j, j)] += s;
        l[(i, j)] -= s;
        l[(j, i)] -= s;
    }
    l
}

/// Moore-Penrose pseudo-inverse of the full Laplacian,
/// `(B + J/N)^-1 - J/N`. Cross-check only.
pub fn pseudo_inverse_check(grid: &Grid) -> Result<DMatrix<f64>> {
    let components = grid.components(false);
    if components.len() > 1 {
        return Err(Error::Disconnected { components });
    }
    let n = grid.n_buses();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let shifted = full_laplacian(grid) + &j;
    let inv = shifted.try_inverse().ok_or(Error::Singular)?;
    Ok(inv - j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn two_bus() -> Grid {
        Grid::new(
            vec![Bus::new(1, 1.0), Bus::slack(2, -1.0)],
            vec![Branch::line(1, 1, 2, 1.0)],
        )
        .unwrap()
    }

    fn triangle() -> Grid {
        Grid::new(
            vec![Bus::new(1, 1.0), Bus::new(2, 0.0), Bus::slack(3, -1.0)],
            vec![
                Branch::line(1, 1, 2, 1.0),
                Branch::line(2, 2, 3, 1.0),
                Branch::line(3, 1, 3, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn incidence_two_bus() {
        let e = build_incidence(&two_bus()).unwrap();
        assert_eq!(e.full, DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
        assert_eq!(e.reduced, DMatrix::from_row_slice(1, 1, &[1.0]));
    }

    #[test]
    fn incidence_triangle_column_sums() {
        let e = build_incidence(&triangle()).unwrap();
        assert_eq!(e.full.shape(), (3, 3));
        for c in e.full.column_iter() {
            assert_eq!(c.sum(), 0.0);
            assert_eq!(c.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(c.iter().filter(|&&v| v == -1.0).count(), 1);
        }
    }

    #[test]
    fn grounded_two_bus() {
        let sys = build_grounded_system(&two_bus()).unwrap();
        assert_eq!(sys.laplacian()[(0, 0)], 1.0);
        assert_eq!(sys.inverse()[(0, 0)], 1.0);
    }

    #[test]
    fn grounded_triangle() {
        let sys = build_grounded_system(&triangle()).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        assert_eq!(sys.laplacian(), &b);
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]) / 3.0;
        assert!((sys.inverse() - expect).amax() < 1e-15);
    }

    #[test]
    fn disconnected_grid_reports_components() {
        let g = Grid::new(
            vec![Bus::slack(1, 0.0), Bus::new(2, 0.0), Bus::new(3, 0.0)],
            vec![Branch::line(1, 1, 2, 1.0)],
        )
        .unwrap();
        match build_grounded_system(&g) {
            Err(Error::Disconnected { components }) => {
                assert_eq!(components, vec![vec![BusId(1), BusId(2)], vec![BusId(3)]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pseudo_inverse_two_bus() {
        let p = pseudo_inverse_check(&two_bus()).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]) / 4.0;
        assert!((p - expect).amax() < 1e-15);
    }

    #[test]
    fn pseudo_inverse_defining_property() {
        let g = triangle();
        let l = full_laplacian(&g);
        let p = pseudo_inverse_check(&g).unwrap();
        assert!((&l * &p * &l - &l).amax() < 1e-9);
    }

    #[test]
    fn invalid_grids_rejected() {
        let dangling = Grid::new(
            vec![Bus::slack(1, 0.0), Bus::new(2, 0.0)],
            vec![Branch::line(7, 1, 3, 1.0)],
        );
        assert!(matches!(dangling, Err(Error::Structural { branch: BranchId(7), .. })));
        let self_loop = Grid::new(
            vec![Bus::slack(1, 0.0), Bus::new(2, 0.0)],
            vec![Branch::line(1, 2, 2, 1.0)],
        );
        assert!(matches!(self_loop, Err(Error::Structural { .. })));
        let two_slacks = Grid::new(vec![Bus::slack(1, 0.0), Bus::slack(2, 0.0)], vec![]);
        assert!(matches!(two_slacks, Err(Error::InvalidGrid(_))));
        let dup = Grid::new(vec![Bus::slack(1, 0.0), Bus::new(1, 0.0)], vec![]);
        assert!(matches!(dup, Err(Error::InvalidGrid(_))));
        let unbalanced = Grid::new(vec![Bus::slack(1, 1.0), Bus::new(2, 0.0)], vec![]);
        assert!(matches!(unbalanced, Err(Error::Unbalanced { .. })));
    }

    #[test]
    fn rebalance_moves_mismatch_to_slack() {
        let (g, adj) = Grid::rebalanced(
            vec![Bus::slack(1, 0.0), Bus::new(2, -0.7)],
            vec![Branch::line(1, 1, 2, 1.0)],
        )
        .unwrap();
        assert!(close(adj, 0.7, 1e-15));
        assert!(close(g.bus(BusId(1)).unwrap().injection, 0.7, 1e-15));
    }

    #[test]
    fn bus_index_round_trip_noncontiguous() {
        let g = Grid::new(
            vec![Bus::new(3, 1.0), Bus::slack(1, 0.0), Bus::new(7, -1.0)],
            vec![Branch::line(1, 3, 1, 1.0), Branch::line(2, 1, 7, 1.0)],
        )
        .unwrap();
        let idx = BusIndex::new(&g);
        assert_eq!(idx.buses(), &[BusId(3), BusId(7)]);
        for (row, &id) in idx.buses().iter().enumerate() {
            assert_eq!(idx.row(id), Some(row));
            assert_eq!(idx.bus_at(row), id);
        }
        let p = g.injections();
        assert_eq!(idx.expand(&idx.reduce(&p).unwrap()).unwrap(), p.map(|v| v));
    }

    #[test]
    fn ldl_pivots_detect_connectivity() {
        let g = triangle();
        let idx = BusIndex::new(&g);
        let b = grounded_laplacian(&g, &idx);
        assert!(linalg::ldl_pivots(&b).iter().all(|&p| p > 0.0));
        let (buses, mut branches) = g.into_parts();
        branches[1].in_service = false;
        branches[2].in_service = false;
        let g = Grid::new(buses, branches).unwrap();
        let b = grounded_laplacian(&g, &BusIndex::new(&g));
        assert!(linalg::ldl_pivots(&b).iter().any(|&p| p <= 1e-12));
    }
}
