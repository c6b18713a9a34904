//! (n-1) screening with LODF columns, parallel across outages.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{BranchId, Grid, GroundedSystem};
use crate::islanding::outage_islands;
use crate::linalg;
use crate::single::lodf_column;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutageReport {
    pub branch: BranchId,
    /// `1 - b_e k_e`; zero for bridges.
    pub criterion: f64,
    pub islands: bool,
    /// Most loaded remaining branch after the outage and its flow.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<(BranchId, f64)>,
}

/// Post-outage flows `f + LODF_{:,e} f_e` for a non-islanding outage.
pub fn post_outage_flows(
    sys: &GroundedSystem,
    grid: &Grid,
    flows: &DVector<f64>,
    e: BranchId,
) -> Result<DVector<f64>> {
    linalg::check_len(grid.n_branches(), flows.len())?;
    let col = lodf_column(sys, grid, e)?;
    let fe = flows[grid.branch_position(e)?];
    Ok(flows + col * fe)
}

/// One report per in-service branch, sorted by severity: islanding
/// outages first, then by the largest post-outage `|f|`, ties by branch id.
pub fn n1_screen(sys: &GroundedSystem, grid: &Grid, flows: &DVector<f64>) -> Result<Vec<OutageReport>> {
    let outages: Vec<BranchId> = grid
        .branches()
        .iter()
        .filter(|b| b.effective_susceptance() > 0.0)
        .map(|b| b.id)
        .collect();
    let mut reports = outages
        .par_iter()
        .map(|&e| {
            let c = outage_islands(sys, grid, e)?;
            let worst = if c.islands {
                None
            } else {
                let post = post_outage_flows(sys, grid, flows, e)?;
                let skip = grid.branch_position(e)?;
                post.iter()
                    .enumerate()
                    .filter(|(k, _)| *k != skip)
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                    .map(|(k, &f)| (grid.branches()[k].id, f))
            };
            Ok(OutageReport {
                branch: e,
                criterion: c.value,
                islands: c.islands,
                worst,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| {
        b.islands
            .cmp(&a.islands)
            .then_with(|| {
                let fa = a.worst.map_or(0.0, |w| w.1.abs());
                let fb = b.worst.map_or(0.0, |w| w.1.abs());
                fb.total_cmp(&fa)
            })
            .then(a.branch.cmp(&b.branch))
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::base_flows;
    use crate::grid::{build_grounded_system, Branch, Bus};

    #[test]
    fn radial_grid_all_islanding() {
        let g = Grid::new(
            vec![Bus::slack(1, -1.0), Bus::new(2, 0.5), Bus::new(3, 0.5)],
            vec![Branch::line(1, 1, 2, 1.0), Branch::line(2, 2, 3, 1.0)],
        )
        .unwrap();
        let sys = build_grounded_system(&g).unwrap();
        let f = base_flows(&sys, &g).unwrap().flows;
        let r = n1_screen(&sys, &g, &f).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|o| o.islands && o.worst.is_none()));
    }

    #[test]
    fn triangle_outage_moves_flow() {
        let g = Grid::new(
            vec![Bus::new(1, 1.0), Bus::new(2, 0.0), Bus::slack(3, -1.0)],
            vec![
                Branch::line(1, 1, 2, 1.0),
                Branch::line(2, 2, 3, 1.0),
                Branch::line(3, 1, 3, 1.0),
            ],
        )
        .unwrap();
        let sys = build_grounded_system(&g).unwrap();
        let f = base_flows(&sys, &g).unwrap().flows;
        let post = post_outage_flows(&sys, &g, &f, BranchId(3)).unwrap();
        assert!((post[0] - 1.0).abs() < 1e-14);
        assert!(post[2].abs() < 1e-15);
        let r = n1_screen(&sys, &g, &f).unwrap();
        for o in &r {
            assert!((o.worst.unwrap().1.abs() - 1.0).abs() < 1e-14);
        }
    }
}
