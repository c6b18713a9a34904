//! Phase-shifting transformers.
//!
//! A PST branch carries `f = b (theta_from - theta_to + theta_shift)`. The
//! shift enters either as effective injections at the terminals or through
//! the PSDF matrix; both give the same flows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factors::{compute_flows, ptdf_matrix, FactorKind, FactorMatrix, FlowState, Labels};
use crate::grid::{BranchId, BranchKind, BusIndex, Grid, GroundedSystem};
use crate::linalg;

/// Per-branch shift angles (radians) in grid branch order.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftVector(DVector<f64>);

impl ShiftVector {
    pub fn zeros(grid: &Grid) -> Self {
        ShiftVector(DVector::zeros(grid.n_branches()))
    }

    /// Shift angles stored on the grid's PST branches.
    pub fn from_grid(grid: &Grid) -> Self {
        ShiftVector(DVector::from_iterator(
            grid.n_branches(),
            grid.branches().iter().map(|b| b.shift_angle),
        ))
    }

    /// Explicit settings; any branch not listed gets zero.
    pub fn from_settings(grid: &Grid, settings: &[(BranchId, f64)]) -> Result<Self> {
        let mut v = DVector::zeros(grid.n_branches());
        for &(id, angle) in settings {
            let pos = grid.branch_position(id)?;
            if grid.branches()[pos].kind != BranchKind::Pst && angle != 0.0 {
                return Err(Error::InvalidModification(format!(
                    "branch {id} is not a phase shifter"
                )));
            }
            v[pos] = angle;
        }
        Ok(ShiftVector(v))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        linalg::check_len(grid.n_branches(), self.0.len())?;
        for (br, &s) in grid.branches().iter().zip(self.0.iter()) {
            if s != 0.0 && br.kind != BranchKind::Pst {
                return Err(Error::InvalidModification(format!(
                    "branch {} is not a phase shifter",
                    br.id
                )));
            }
        }
        Ok(())
    }
}

/// `p^ = p - sum_pst b_kl theta_kl nu_kl`, full length in bus order.
pub fn effective_injections(
    grid: &Grid,
    p: &DVector<f64>,
    shifts: &ShiftVector,
) -> Result<DVector<f64>> {
    shifts.validate(grid)?;
    linalg::check_len(grid.n_buses(), p.len())?;
    let mut out = p.clone();
    for (br, &s) in grid.branches().iter().zip(shifts.0.iter()) {
        if s == 0.0 {
            continue;
        }
        let w = br.effective_susceptance() * s;
        out[grid.bus_position(br.from)?] -= w;
        out[grid.bus_position(br.to)?] += w;
    }
    Ok(out)
}

/// Flows with PSTs via effective injections, including the `b_e theta_e`
/// correction on each PST branch itself.
pub fn flows_with_shifts(
    sys: &GroundedSystem,
    grid: &Grid,
    p: &DVector<f64>,
    shifts: &ShiftVector,
) -> Result<FlowState> {
    let p_hat = effective_injections(grid, p, shifts)?;
    let theta = sys.solve_vec(&sys.index().reduce(&p_hat)?);
    let mut state = compute_flows(grid, sys.index(), &theta)?;
    for (e, br) in grid.branches().iter().enumerate() {
        state.flows[e] += br.effective_susceptance() * shifts.0[e];
    }
    Ok(state)
}

/// Branch x branch PSDF: `PSDF_{l,e} = b_e [l = e] - b_e (PTDF_{l,from(e)} -
/// PTDF_{l,to(e)})`, with slack columns of the PTDF taken as zero.
pub fn psdf_matrix(sys: &GroundedSystem, grid: &Grid) -> FactorMatrix {
    let ptdf = ptdf_matrix(sys, grid);
    psdf_from_ptdf(grid, sys.index(), &ptdf, &grid.susceptances())
}

/// PSDF for any PTDF in the layout of `index` (for example one updated after
/// a branch modification) and matching branch susceptances.
pub fn psdf_from_ptdf(
    grid: &Grid,
    index: &BusIndex,
    ptdf: &FactorMatrix,
    susceptances: &DVector<f64>,
) -> FactorMatrix {
    let ne = grid.n_branches();
    // E_r 𝔅 : n x N_e
    let mut eb = DMatrix::zeros(index.len(), ne);
    for (e, br) in grid.branches().iter().enumerate() {
        for (row, v) in index.nu_branch(br) {
            eb[(row, e)] = v * susceptances[e];
        }
    }
    let mut values = -(&ptdf.values * eb);
    for e in 0..ne {
        values[(e, e)] += susceptances[e];
    }
    FactorMatrix {
        kind: FactorKind::Psdf,
        values,
        rows: grid.branch_ids(),
        cols: Labels::Branches(grid.branch_ids()),
    }
}
