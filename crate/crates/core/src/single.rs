//! Single-branch susceptance changes: line modifications, outages and
//! closings, via Sherman-Morrison on the grounded inverse.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{ptdf_matrix, FactorMatrix};
use crate::grid::{BranchId, Grid, GroundedSystem};
use crate::linalg;

/// `|1 + db k| <= ISLANDING_TOL * max(1, |db| k)` is treated as zero.
pub const ISLANDING_TOL: f64 = 1e-8;

/// Change `b_e -> b_e + delta_b` of one branch's effective susceptance.
/// `delta_b = -b_e` is an outage; on an out-of-service branch (`b_e = 0`) a
/// positive delta closes it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchDelta {
    pub branch: BranchId,
    #[serde(rename = "db")]
    pub delta_b: f64,
}

impl BranchDelta {
    pub fn new(branch: BranchId, delta_b: f64) -> Self {
        BranchDelta { branch, delta_b }
    }

    pub fn outage(grid: &Grid, branch: BranchId) -> Result<Self> {
        let b = grid.branch(branch)?.effective_susceptance();
        Ok(BranchDelta::new(branch, -b))
    }
}

/// Pieces shared by every single-branch formula: `x = B^-1 nu_e`,
/// `k = nu_e^T B^-1 nu_e` and the denominator `1 + db k`.
pub(crate) struct Update {
    pub pos: usize,
    pub b: f64,
    pub db: f64,
    pub x: DVector<f64>,
    pub k: f64,
    pub den: f64,
}

impl Update {
    pub fn new(sys: &GroundedSystem, grid: &Grid, d: BranchDelta) -> Result<Update> {
        let pos = grid.branch_position(d.branch)?;
        let br = &grid.branches()[pos];
        let b = br.effective_susceptance();
        if b + d.delta_b < 0.0 && (b + d.delta_b).abs() > 1e-12 * b.max(1.0) {
            return Err(Error::InvalidModification(format!(
                "branch {}: susceptance {b} + {} is negative",
                d.branch, d.delta_b
            )));
        }
        let nu = sys.index().nu_branch(br);
        let x = linalg::inv_times_nu(sys.inverse(), &nu);
        let k = linalg::nu_dot(&nu, &x);
        let den = 1.0 + d.delta_b * k;
        Ok(Update {
            pos,
            b,
            db: d.delta_b,
            x,
            k,
            den,
        })
    }

    pub fn check(&self, branch: BranchId) -> Result<()> {
        if self.den.abs() <= ISLANDING_TOL * (self.db.abs() * self.k).max(1.0) {
            return Err(Error::islanding(
                format!("modification of branch {branch}"),
                self.den,
            ));
        }
        Ok(())
    }
}

/// Sherman-Morrison update of `B_r^-1` by `db nu nu^T`.
pub fn updated_inverse(sys: &GroundedSystem, grid: &Grid, d: BranchDelta) -> Result<DMatrix<f64>> {
    if d.delta_b == 0.0 {
        grid.branch(d.branch)?;
        return Ok(sys.inverse().clone());
    }
    let u = Update::new(sys, grid, d)?;
    u.check(d.branch)?;
    let mut out = linalg::rank_one(sys.inverse(), &u.x, u.db / u.den);
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// PTDF of the modified grid. Rows other than `e` follow the rank-one
/// update of the reference PTDF; row `e` is `b~_e nu_e^T B_m^-1`, which
/// vanishes for an outage.
pub fn ptdf_after_mod(sys: &GroundedSystem, grid: &Grid, d: BranchDelta) -> Result<FactorMatrix> {
    let reference = ptdf_matrix(sys, grid);
    ptdf_after_mod_from(sys, grid, &reference, d)
}

pub(crate) fn ptdf_after_mod_from(
    sys: &GroundedSystem,
    grid: &Grid,
    reference: &FactorMatrix,
    d: BranchDelta,
) -> Result<FactorMatrix> {
    let u = Update::new(sys, grid, d)?;
    if d.delta_b == 0.0 {
        return Ok(reference.clone());
    }
    u.check(d.branch)?;
    let coeff = u.db / u.den;
    // PTDF_r nu_e: column difference at the terminals.
    let col_diff = reference_times_nu(reference, sys, grid, u.pos);
    let mut out = reference.clone();
    out.values.ger(-coeff, &col_diff, &u.x, 1.0);
    // B_m^-1 nu_e = x / den
    let row = u.x.transpose() * ((u.b + u.db) / u.den);
    out.values.set_row(u.pos, &row);
    Ok(out)
}

fn reference_times_nu(
    reference: &FactorMatrix,
    sys: &GroundedSystem,
    grid: &Grid,
    pos: usize,
) -> DVector<f64> {
    let nu = sys.index().nu_branch(&grid.branches()[pos]);
    let mut out = DVector::zeros(reference.values.nrows());
    for (c, v) in nu {
        out.axpy(v, &reference.values.column(c), 1.0);
    }
    out
}

/// LODF column of branch `e`: post-outage flows are
/// `f_m = f_r + LODF_{:,e} f_r[e]`. The self entry is -1.
pub fn lodf_column(sys: &GroundedSystem, grid: &Grid, e: BranchId) -> Result<DVector<f64>> {
    let d = BranchDelta::outage(grid, e)?;
    if d.delta_b == 0.0 {
        return Err(Error::InvalidModification(format!(
            "branch {e} is not in service"
        )));
    }
    let u = Update::new(sys, grid, d)?;
    u.check(e)?;
    let index = sys.index();
    let mut col = DVector::from_iterator(
        grid.n_branches(),
        grid.branches().iter().map(|br| {
            let nu = index.nu_branch(br);
            br.effective_susceptance() * linalg::nu_dot(&nu, &u.x) / u.den
        }),
    );
    col[u.pos] = -1.0;
    Ok(col)
}

/// Angle difference across branch `e` after its outage, from the
/// pre-outage flow: `f_r[e] / (b_e - b_e (PTDF_{e,i} - PTDF_{e,j}))`.
pub fn post_outage_angle_diff(
    sys: &GroundedSystem,
    grid: &Grid,
    e: BranchId,
    reference_flows: &DVector<f64>,
) -> Result<f64> {
    let d = BranchDelta::outage(grid, e)?;
    let u = Update::new(sys, grid, d)?;
    u.check(e)?;
    linalg::check_len(grid.n_branches(), reference_flows.len())?;
    // PTDF_{e,i} - PTDF_{e,j} = b_e nu_e^T B^-1 nu_e
    let ptdf_diff = u.b * u.k;
    Ok(reference_flows[u.pos] / (u.b + u.db * ptdf_diff))
}

/// LCDF column for closing the out-of-service branch `e` with susceptance
/// `new_b`: `f_m = f_r + LCDF_{:,e} (nu_e^T theta_r)`.
pub fn lcdf_column(
    sys: &GroundedSystem,
    grid: &Grid,
    e: BranchId,
    new_b: f64,
) -> Result<DVector<f64>> {
    let br = grid.branch(e)?;
    if br.effective_susceptance() != 0.0 {
        return Err(Error::InvalidModification(format!(
            "branch {e} is already in service"
        )));
    }
    if !(new_b > 0.0) {
        return Err(Error::InvalidModification(format!(
            "closing susceptance must be positive, got {new_b}"
        )));
    }
    let u = Update::new(sys, grid, BranchDelta::new(e, new_b))?;
    let index = sys.index();
    let mut col = DVector::from_iterator(
        grid.n_branches(),
        grid.branches().iter().map(|br| {
            let nu = index.nu_branch(br);
            -new_b * br.effective_susceptance() * linalg::nu_dot(&nu, &u.x) / u.den
        }),
    );
    col[u.pos] = new_b / u.den;
    Ok(col)
}
