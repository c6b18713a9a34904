//! Bus merges and bus splits.
//!
//! A closed ideal switch (busbar coupler) is the `b -> inf` limit of a
//! branch. Merges take the limit directly in the Sherman-Morrison update.
//! Splits go through three configurations of the same substation:
//!
//! * merged: the coupled busbars are one node (`B_m`, the reference),
//! * closed: the busbars are separate nodes joined by the closed coupler
//!   (`B_c^-1` is `B_m^-1` with the parent row/column copied, never
//!   inverted),
//! * open: the coupler is open (`B_o`, the grid of interest).
//!
//! `B_o^-1` follows from `B_c^-1` and `B_o` without ever forming the
//! divergent `B_c`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{ptdf_from_inverse, FactorMatrix};
use crate::grid::{
    grounded_laplacian, BranchId, Bus, BusId, BusIndex, Grid, GroundedSystem,
};
use crate::linalg;
use crate::single::ISLANDING_TOL;

/// Relative tolerance on the split bracket `nu_s^T (B_o - B_o B_c^-1 B_o)
/// nu_s`, scaled by `||B_o||_inf ||nu_s||^2`.
pub const SPLIT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Parent,
    New,
}

/// Split of one bus into two busbars joined by an implicit coupler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub parent: BusId,
    /// Id of the created bus; defaults to the largest existing id + 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_bus: Option<BusId>,
    /// Side for every branch incident to `parent`.
    pub assignments: BTreeMap<BranchId, Side>,
    /// Part of the parent injection moved to the new bus. Required when the
    /// parent injection is nonzero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_to_new: Option<f64>,
}

impl SplitSpec {
    pub fn new(parent: BusId) -> Self {
        SplitSpec {
            parent,
            new_bus: None,
            assignments: BTreeMap::new(),
            injection_to_new: None,
        }
    }

    pub fn assign(mut self, branch: BranchId, side: Side) -> Self {
        self.assignments.insert(branch, side);
        self
    }

    pub fn with_injection_to_new(mut self, p: f64) -> Self {
        self.injection_to_new = Some(p);
        self
    }

    pub fn resolve_new_bus(&self, grid: &Grid) -> BusId {
        self.new_bus
            .unwrap_or_else(|| BusId(grid.max_bus_id().0 + 1))
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidSplit {
            parent: self.parent,
            reason: reason.into(),
        }
    }

    fn validate(&self, grid: &Grid) -> Result<BusId> {
        let parent = grid.bus(self.parent)?;
        let new_bus = self.resolve_new_bus(grid);
        if grid.bus_position(new_bus).is_ok() {
            return Err(self.invalid(format!("new bus id {new_bus} already exists")));
        }
        for br in grid.branches() {
            if br.touches(self.parent) && !self.assignments.contains_key(&br.id) {
                return Err(self.invalid(format!("incident branch {} is not assigned", br.id)));
            }
        }
        for id in self.assignments.keys() {
            if !grid.branch(*id)?.touches(self.parent) {
                return Err(self.invalid(format!("branch {id} is not incident")));
            }
        }
        if self.injection_to_new.is_none() && parent.injection != 0.0 {
            return Err(self.invalid("bus has an injection; injection_to_new is required"));
        }
        Ok(new_bus)
    }

    /// Branches moved to the new bus, as endpoint moves.
    pub fn endpoint_moves(&self, grid: &Grid) -> Result<Vec<EndpointMove>> {
        let new_bus = self.validate(grid)?;
        Ok(self
            .assignments
            .iter()
            .filter(|(_, &side)| side == Side::New)
            .map(|(&branch, _)| EndpointMove {
                branch,
                old_bus: self.parent,
                new_bus,
            })
            .collect())
    }

    /// The grid with the coupler open: new bus appended after the existing
    /// buses, `New` branches re-attached to it and the injection divided.
    pub fn apply(&self, grid: &Grid) -> Result<Grid> {
        let new_bus = self.validate(grid)?;
        let moved = self.injection_to_new.unwrap_or(0.0);
        let base = grid.base_mva();
        let (mut buses, mut branches) = grid.clone().into_parts();
        for b in buses.iter_mut().filter(|b| b.id == self.parent) {
            b.injection -= moved;
        }
        buses.push(Bus::new(new_bus.0, moved));
        for br in branches.iter_mut() {
            if self.assignments.get(&br.id) == Some(&Side::New) {
                if br.from == self.parent {
                    br.from = new_bus;
                }
                if br.to == self.parent {
                    br.to = new_bus;
                }
            }
        }
        Ok(Grid::new(buses, branches)?.with_base_mva(base))
    }
}

/// Re-attachment of one branch end from `old_bus` to `new_bus`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EndpointMove {
    pub branch: BranchId,
    pub old_bus: BusId,
    pub new_bus: BusId,
}

/// Merged / closed / open bookkeeping for one or more couplers.
#[derive(Clone, Debug)]
pub struct TriConfig {
    merged_dim: usize,
    grid_open: Grid,
    index_open: BusIndex,
    couplers: Vec<Coupler>,
    closed_inverse: DMatrix<f64>,
    open_laplacian: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coupler {
    pub parent: BusId,
    pub new_bus: BusId,
    /// Sparse `nu_s` (parent -> new) in open-grid rows.
    pub nu: Vec<(usize, f64)>,
}

impl TriConfig {
    pub fn grid_open(&self) -> &Grid {
        &self.grid_open
    }

    pub fn index_open(&self) -> &BusIndex {
        &self.index_open
    }

    pub fn couplers(&self) -> &[Coupler] {
        &self.couplers
    }

    /// Padded `B_c^-1`.
    pub fn closed_inverse(&self) -> &DMatrix<f64> {
        &self.closed_inverse
    }

    /// Grounded Laplacian of the open grid, `B_o`.
    pub fn open_laplacian(&self) -> &DMatrix<f64> {
        &self.open_laplacian
    }

    pub fn merged_dim(&self) -> usize {
        self.merged_dim
    }

    /// Drops the rows/columns of the new buses from an open-layout matrix.
    pub fn unpad(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.view((0, 0), (self.merged_dim, self.merged_dim)).into_owned()
    }

    /// Injections of the open grid in open-grid bus order.
    pub fn open_injections(&self) -> DVector<f64> {
        self.grid_open.injections()
    }

    pub(crate) fn coupler_matrix(&self) -> DMatrix<f64> {
        let n = self.index_open.len();
        let mut u = DMatrix::zeros(n, self.couplers.len());
        for (c, cp) in self.couplers.iter().enumerate() {
            for &(i, v) in &cp.nu {
                u[(i, c)] += v;
            }
        }
        u
    }

    /// `W = (1 - B_c^-1 B_o) U` and the inner matrix `S = U^T B_o W =
    /// U^T (B_o - B_o B_c^-1 B_o) U`.
    pub(crate) fn split_terms(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let u = self.coupler_matrix();
        let bo_u = &self.open_laplacian * &u;
        let w = &u - &self.closed_inverse * &bo_u;
        let s = bo_u.transpose() * &w;
        (w, s)
    }

    fn single(&self) -> Result<&Coupler> {
        match self.couplers.as_slice() {
            [c] => Ok(c),
            _ => Err(Error::InvalidModification(format!(
                "expected one coupler, configuration has {}",
                self.couplers.len()
            ))),
        }
    }

    /// Single-coupler `w = (1 - B_c^-1 B_o) nu_s` and the bracket scalar.
    fn coupler_terms(&self) -> Result<(DVector<f64>, f64)> {
        let c = self.single()?;
        let nu = linalg::dense_nu(self.index_open.len(), &c.nu);
        let y = &self.open_laplacian * &nu;
        let w = &nu - &self.closed_inverse * &y;
        Ok((w.clone(), y.dot(&w)))
    }

    fn bracket_tolerance(&self, nu_norm2: f64) -> f64 {
        SPLIT_TOL * linalg::norm_inf(&self.open_laplacian) * nu_norm2
    }

    /// Split islanding criterion for the single coupler:
    /// `(value, islands)`.
    pub fn bracket(&self) -> Result<(f64, bool)> {
        let c = self.single()?;
        let (_, scalar) = self.coupler_terms()?;
        let nu2: f64 = c.nu.iter().map(|(_, v)| v * v).sum();
        Ok((scalar, scalar.abs() <= self.bracket_tolerance(nu2)))
    }

    fn checked_coupler_terms(&self) -> Result<(DVector<f64>, f64)> {
        let (w, scalar) = self.coupler_terms()?;
        let c = self.single()?;
        let nu2: f64 = c.nu.iter().map(|(_, v)| v * v).sum();
        if scalar.abs() <= self.bracket_tolerance(nu2) {
            return Err(Error::islanding(
                format!("split of bus {}", c.parent),
                scalar,
            ));
        }
        Ok((w, scalar))
    }

    /// `S^-1 W^T` for all couplers, or an islanding error when `S` is
    /// singular.
    pub(crate) fn checked_split_solve(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (w, s) = self.split_terms();
        let scale = linalg::norm_inf(&self.open_laplacian);
        let s_inv_wt = linalg::solve_checked(&s, &w.transpose(), scale).map_err(|pivot| {
            let parents: Vec<String> = self.couplers.iter().map(|c| c.parent.to_string()).collect();
            Error::islanding(format!("split of buses [{}]", parents.join(", ")), pivot)
        })?;
        Ok((w, s_inv_wt))
    }
}

/// Builds the three-configuration bookkeeping: applies the splits to the
/// merged grid and pads `B_m^-1` into `B_c^-1` by copying each parent's
/// row and column into the new bus's slot.
pub fn pad_inverse(
    merged_inverse: &DMatrix<f64>,
    merged_grid: &Grid,
    splits: &[SplitSpec],
) -> Result<TriConfig> {
    let merged_index = BusIndex::new(merged_grid);
    linalg::check_len(merged_index.len(), merged_inverse.nrows())?;
    let mut grid = merged_grid.clone();
    let mut pairs = Vec::with_capacity(splits.len());
    for split in splits {
        let new_bus = split.resolve_new_bus(&grid);
        grid = split.apply(&grid)?;
        pairs.push((split.parent, new_bus));
    }
    let index_open = BusIndex::new(&grid);

    // Source row in the merged layout for every open-layout row; None means
    // the bus sits at the slack (angle pinned to zero).
    let mut source: Vec<Option<usize>> = (0..merged_index.len()).map(Some).collect();
    for &(parent, _) in &pairs {
        let src = index_open.row(parent).and_then(|r| source[r]);
        source.push(src);
    }
    let n = index_open.len();
    let closed_inverse = DMatrix::from_fn(n, n, |i, j| match (source[i], source[j]) {
        (Some(a), Some(b)) => merged_inverse[(a, b)],
        _ => 0.0,
    });

    let couplers = pairs
        .into_iter()
        .map(|(parent, new_bus)| Coupler {
            parent,
            new_bus,
            nu: index_open.nu(parent, new_bus),
        })
        .collect();
    let open_laplacian = grounded_laplacian(&grid, &index_open);
    Ok(TriConfig {
        merged_dim: merged_index.len(),
        grid_open: grid,
        index_open,
        couplers,
        closed_inverse,
        open_laplacian,
    })
}

impl TriConfig {
    pub fn from_system(sys: &GroundedSystem, grid: &Grid, splits: &[SplitSpec]) -> Result<Self> {
        pad_inverse(sys.inverse(), grid, splits)
    }
}

/// Inverse of the open grid for a single coupler:
/// `B_o^-1 = B_c^-1 + w w^T / (nu_s^T (B_o - B_o B_c^-1 B_o) nu_s)`.
pub fn split_inverse(tri: &TriConfig) -> Result<DMatrix<f64>> {
    let (w, scalar) = tri.checked_coupler_terms()?;
    let mut out = tri.closed_inverse.clone();
    out.ger(1.0 / scalar, &w, &w, 1.0);
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// Bus split distribution factors for a single coupler.
pub fn bsdf_vector(tri: &TriConfig) -> Result<DVector<f64>> {
    let (w, scalar) = tri.checked_coupler_terms()?;
    let grid = &tri.grid_open;
    Ok(DVector::from_iterator(
        grid.n_branches(),
        grid.branches().iter().map(|br| {
            let nu = tri.index_open.nu_branch(br);
            br.effective_susceptance() * linalg::nu_dot(&nu, &w) / scalar
        }),
    ))
}

/// `PTDF_c = 𝔅_o E^T B_c^-1` in the open-grid layout.
pub fn closed_ptdf(tri: &TriConfig) -> FactorMatrix {
    let b = tri.grid_open.susceptances();
    ptdf_from_inverse(&tri.grid_open, &tri.index_open, &tri.closed_inverse, |e| b[e])
}

/// `PTDF_o = PTDF_c + bsdf w^T`.
pub fn open_ptdf(tri: &TriConfig) -> Result<FactorMatrix> {
    let (w, _) = tri.checked_coupler_terms()?;
    let bsdf = bsdf_vector(tri)?;
    let mut ptdf = closed_ptdf(tri);
    ptdf.values.ger(1.0, &bsdf, &w, 1.0);
    Ok(ptdf)
}

/// `B_o^-1 nu_e` from the expansion around `B_c^-1`, for any number of
/// couplers.
fn open_inverse_times(
    tri: &TriConfig,
    w: &DMatrix<f64>,
    s_inv_wt: &DMatrix<f64>,
    nu: &[(usize, f64)],
) -> DVector<f64> {
    let x_c = linalg::inv_times_nu(&tri.closed_inverse, nu);
    // W S^-1 W^T nu
    let mut coeff = DVector::zeros(s_inv_wt.nrows());
    for &(i, v) in nu {
        coeff.axpy(v, &s_inv_wt.column(i), 1.0);
    }
    x_c + w * coeff
}

/// LODF column of branch `e` in the open grid, built from `B_c^-1` and the
/// split correction without forming `B_o^-1`.
pub fn lodf_after_split(tri: &TriConfig, e: BranchId) -> Result<DVector<f64>> {
    let grid = &tri.grid_open;
    let pos = grid.branch_position(e)?;
    let br = &grid.branches()[pos];
    let b = br.effective_susceptance();
    if b == 0.0 {
        return Err(Error::InvalidModification(format!(
            "branch {e} is not in service"
        )));
    }
    let (w, s_inv_wt) = tri.checked_split_solve()?;
    let nu_e = tri.index_open.nu_branch(br);
    let x = open_inverse_times(tri, &w, &s_inv_wt, &nu_e);
    let k = linalg::nu_dot(&nu_e, &x);
    let den = 1.0 - b * k;
    if den.abs() <= ISLANDING_TOL * (b * k).max(1.0) {
        return Err(Error::islanding(
            format!("outage of branch {e} after split"),
            den,
        ));
    }
    let mut col = DVector::from_iterator(
        grid.n_branches(),
        grid.branches().iter().map(|other| {
            let nu = tri.index_open.nu_branch(other);
            other.effective_susceptance() * linalg::nu_dot(&nu, &x) / den
        }),
    );
    col[pos] = -1.0;
    Ok(col)
}

/// Finite-coupler form: the outage of a coupler with susceptance `b_s`
/// from an explicitly inverted closed configuration,
/// `B_o^-1 = B_c^-1 + b_s B_c^-1 nu (b_s - b_s^2 nu^T B_c^-1 nu)^-1 b_s nu^T B_c^-1`.
/// Only meaningful for finite `b_s`; used to check the limit formulas.
///
/// For a stiff coupler `1 - b_s k` is of order `1/b_s` and cannot be formed
/// by subtraction. Since `B_o x = nu (1 - b_s k)` for `x = B_c^-1 nu`, it is
/// taken from the open Laplacian instead.
pub fn coupler_outage_finite(
    closed_inverse_finite: &DMatrix<f64>,
    open_laplacian: &DMatrix<f64>,
    nu: &[(usize, f64)],
    b_s: f64,
) -> Result<DMatrix<f64>> {
    let x = linalg::inv_times_nu(closed_inverse_finite, nu);
    let nu2: f64 = nu.iter().map(|(_, v)| v * v).sum();
    let one_minus_bk = linalg::nu_dot(nu, &(open_laplacian * &x)) / nu2;
    let scale = linalg::norm_inf(open_laplacian) * x.amax() * nu2.sqrt();
    if one_minus_bk.abs() <= SPLIT_TOL * scale {
        return Err(Error::islanding("finite coupler outage", one_minus_bk));
    }
    let mut out = closed_inverse_finite.clone();
    out.ger(b_s / one_minus_bk, &x, &x, 1.0);
    Ok(out)
}

/// Merge limit for an arbitrary inverse and terminal vector:
/// `X [1 - (nu^T X nu)^-1 nu nu^T X]`.
pub fn merge_with(inverse: &DMatrix<f64>, nu: &[(usize, f64)], switch: BranchId) -> Result<DMatrix<f64>> {
    let x = linalg::inv_times_nu(inverse, nu);
    let k = linalg::nu_dot(nu, &x);
    let scale = inverse.diagonal().amax();
    if !(k > 1e-12 * scale) {
        return Err(Error::DegenerateSwitch { switch, value: k });
    }
    let mut out = linalg::rank_one(inverse, &x, 1.0 / k);
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// Inverse after closing switch (or branch) `s` as an ideal connection.
pub fn merge_inverse(sys: &GroundedSystem, grid: &Grid, s: BranchId) -> Result<DMatrix<f64>> {
    let nu = sys.index().nu_branch(grid.branch(s)?);
    merge_with(sys.inverse(), &nu, s)
}

/// PTDF after merging across `s`, for every branch except `s` (whose flow
/// is not defined by an angle difference).
pub fn merged_ptdf(sys: &GroundedSystem, grid: &Grid, s: BranchId) -> Result<FactorMatrix> {
    let inv = merge_inverse(sys, grid, s)?;
    let pos = grid.branch_position(s)?;
    let b = grid.susceptances();
    let full = ptdf_from_inverse(grid, sys.index(), &inv, |e| if e == pos { 0.0 } else { b[e] });
    let keep: Vec<usize> = (0..grid.n_branches()).filter(|&e| e != pos).collect();
    Ok(FactorMatrix {
        kind: full.kind,
        values: full.values.select_rows(keep.iter()),
        rows: keep.iter().map(|&e| full.rows[e]).collect(),
        cols: full.cols,
    })
}

/// Flow over the closed switch from KCL at its from bus:
/// `f_s = p_from - E_{from,:} PTDF_m p`.
pub fn switch_flow(
    grid: &Grid,
    index: &BusIndex,
    s: BranchId,
    p: &DVector<f64>,
    merged: &FactorMatrix,
) -> Result<f64> {
    let from = grid.branch(s)?.from;
    let flows = merged.apply(&index.reduce(p)?);
    let mut out = p[grid.bus_position(from)?];
    for (r, id) in merged.rows.iter().enumerate() {
        let br = grid.branch(*id)?;
        if br.from == from {
            out -= flows[r];
        } else if br.to == from {
            out += flows[r];
        }
    }
    Ok(out)
}

/// Bus split via an idle bus: the merged grid is extended by an isolated
/// zero-injection bus `new_bus`, and moving branch ends onto it is a rank-2
/// change `Delta B = U V`. The isolated bus makes the extended Laplacian
/// singular, so it is tied to ground with strength `c` (the moved
/// susceptance) for the Woodbury step and the tie is removed by a final
/// rank-1 correction.
///
/// Rows of the result follow the open grid: merged rows, then `new_bus`.
pub fn idle_bus_split(
    sys: &GroundedSystem,
    grid: &Grid,
    new_bus: BusId,
    moves: &[EndpointMove],
) -> Result<DMatrix<f64>> {
    let Some(first) = moves.first() else {
        return Err(Error::islanding("idle bus with no moved branches", 0.0));
    };
    let parent = first.old_bus;
    if grid.bus_position(new_bus).is_ok() {
        return Err(Error::InvalidSplit {
            parent,
            reason: format!("idle bus {new_bus} already exists"),
        });
    }
    let index = sys.index();
    let n = index.len();
    let idle = n;
    let dim = n + 1;

    // a: moved susceptance at the far end of each moved branch
    let mut a: DVector<f64> = DVector::zeros(dim);
    let mut c = 0.0;
    for m in moves {
        if m.old_bus != parent || m.new_bus != new_bus {
            return Err(Error::InvalidSplit {
                parent,
                reason: "all moves must go from one bus to the idle bus".into(),
            });
        }
        let br = grid.branch(m.branch)?;
        let far = if br.from == parent {
            br.to
        } else if br.to == parent {
            br.from
        } else {
            return Err(Error::InvalidSplit {
                parent,
                reason: format!("branch {} is not incident", m.branch),
            });
        };
        let b = br.effective_susceptance();
        if let Some(r) = index.row(far) {
            a[r] += b;
        }
        c += b;
    }
    if c == 0.0 {
        return Err(Error::islanding("idle bus receives no susceptance", 0.0));
    }

    let parent_row = index.row(parent);
    let mut u = DMatrix::zeros(dim, 2);
    let mut v = DMatrix::zeros(2, dim);
    for r in 0..n {
        u[(r, 0)] = a[r] / c;
        u[(r, 1)] = a[r] / c;
        v[(0, r)] = -a[r];
        v[(1, r)] = a[r];
    }
    if let Some(p) = parent_row {
        u[(p, 0)] = -1.0;
        v[(0, p)] = c;
    }
    u[(idle, 1)] = -1.0;
    v[(1, idle)] = -c;

    // B_c with the idle bus tied to ground: diag(B_m^-1, 1/c)
    let mut base = DMatrix::zeros(dim, dim);
    base.view_mut((0, 0), (n, n)).copy_from(sys.inverse());
    base[(idle, idle)] = 1.0 / c;

    let bu = &base * &u;
    let cap = DMatrix::identity(2, 2) + &v * &bu;
    let vb = &v * &base;
    let corr = linalg::solve_checked(&cap, &vb, 1.0)
        .map_err(|pivot| Error::islanding(format!("idle-bus split of bus {parent}"), pivot))?;
    let tied = &base - &bu * corr;

    // remove the ground tie: B_o = tied_matrix - c e e^T
    let x = tied.column(idle).into_owned();
    let den = 1.0 - c * x[idle];
    if den.abs() <= ISLANDING_TOL * (c * x[idle]).max(1.0) {
        return Err(Error::islanding(format!("idle-bus split of bus {parent}"), den));
    }
    let mut out = tied;
    out.ger(c / den, &x, &x, 1.0);
    linalg::symmetrize(&mut out);
    Ok(out)
}
