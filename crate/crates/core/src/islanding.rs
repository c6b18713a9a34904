//! Islanding criteria from the update denominators, with a graph-traversal
//! cross-check.

use serde::Serialize;

use crate::error::Result;
use crate::grid::{BranchId, BusId, Grid, GroundedSystem};
use crate::multi::{woodbury_update, ModificationSet};
use crate::single::ISLANDING_TOL;
use crate::topology::TriConfig;

/// Value of an islanding criterion and the verdict derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Criterion {
    pub value: f64,
    pub islands: bool,
}

/// Outage of `e`: `1 - b_e nu_e^T B_r^-1 nu_e`, zero exactly for bridges.
pub fn outage_islands(sys: &GroundedSystem, grid: &Grid, e: BranchId) -> Result<Criterion> {
    let br = grid.branch(e)?;
    let b = br.effective_susceptance();
    let bk = b * sys.effective_reactance(br);
    let value = 1.0 - bk;
    Ok(Criterion {
        value,
        islands: b > 0.0 && value.abs() <= ISLANDING_TOL * bk.max(1.0),
    })
}

/// Split criterion for a single-coupler configuration.
pub fn split_islands(tri: &TriConfig) -> Result<Criterion> {
    let (value, islands) = tri.bracket()?;
    Ok(Criterion { value, islands })
}

/// Whether a simultaneous modification set leaves the grid connected,
/// judged by the pivot test on the Woodbury inner matrix.
pub fn modification_islands(sys: &GroundedSystem, grid: &Grid, mods: &ModificationSet) -> Result<bool> {
    match woodbury_update(sys, grid, mods) {
        Ok(_) => Ok(false),
        Err(e) if e.is_islanding() => Ok(true),
        Err(e) => Err(e),
    }
}

/// Connected components by traversal, closed switches conducting.
pub fn traversal_connectivity(grid: &Grid) -> Vec<Vec<BusId>> {
    grid.components(true)
}

/// Components after removing a set of branches, by traversal.
pub fn components_without(grid: &Grid, removed: &[BranchId]) -> Result<Vec<Vec<BusId>>> {
    let mut branches = grid.branches().to_vec();
    for id in removed {
        branches[grid.branch_position(*id)?].in_service = false;
    }
    let g = grid.with_branches(branches)?;
    Ok(g.components(true))
}

/// `|1 - b_e k_e|` over every in-service branch; the smallest values flag
/// the bridges.
pub fn outage_criteria(sys: &GroundedSystem, grid: &Grid) -> Result<Vec<(BranchId, Criterion)>> {
    grid.branches()
        .iter()
        .filter(|br| br.effective_susceptance() > 0.0)
        .map(|br| Ok((br.id, outage_islands(sys, grid, br.id)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grounded_system, Branch, Bus};

    #[test]
    fn radial_outage_islands_exactly() {
        let g = Grid::new(
            vec![Bus::slack(1, -1.0), Bus::new(2, 0.5), Bus::new(3, 0.5)],
            vec![
                Branch::line(1, 1, 2, 2.0),
                Branch::line(2, 2, 3, 0.5),
            ],
        )
        .unwrap();
        let sys = build_grounded_system(&g).unwrap();
        for id in [1, 2] {
            let c = outage_islands(&sys, &g, BranchId(id)).unwrap();
            assert!(c.islands);
            assert!(c.value.abs() <= 1e-12);
        }
        assert_eq!(components_without(&g, &[BranchId(2)]).unwrap().len(), 2);
    }

    #[test]
    fn meshed_outage_keeps_connected() {
        let g = Grid::new(
            vec![Bus::slack(1, -1.0), Bus::new(2, 0.5), Bus::new(3, 0.5)],
            vec![
                Branch::line(1, 1, 2, 1.0),
                Branch::line(2, 2, 3, 1.0),
                Branch::line(3, 3, 1, 1.0),
            ],
        )
        .unwrap();
        let sys = build_grounded_system(&g).unwrap();
        let c = outage_islands(&sys, &g, BranchId(1)).unwrap();
        assert!(!c.islands);
        assert!((c.value - 1.0 / 3.0).abs() < 1e-14);
    }
}
