//! Baseline DC solution: angles, flows and the PTDF matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::grid::{BranchId, BusId, BusIndex, Grid, GroundedSystem};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    Ptdf,
    Psdf,
    LodfColumns,
    LcdfColumns,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Buses(Vec<BusId>),
    Branches(Vec<BranchId>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Buses(v) => v.len(),
            Labels::Branches(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A labeled branch x bus (or branch x branch) factor matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMatrix {
    pub kind: FactorKind,
    pub values: DMatrix<f64>,
    pub rows: Vec<BranchId>,
    pub cols: Labels,
}

impl FactorMatrix {
    pub fn row_of(&self, branch: BranchId) -> Option<usize> {
        self.rows.iter().position(|&b| b == branch)
    }

    pub fn col_of_bus(&self, bus: BusId) -> Option<usize> {
        match &self.cols {
            Labels::Buses(v) => v.iter().position(|&b| b == bus),
            Labels::Branches(_) => None,
        }
    }

    /// Entry for a branch and a bus column; the slack column is zero.
    pub fn get(&self, branch: BranchId, bus: BusId) -> Option<f64> {
        let r = self.row_of(branch)?;
        Some(self.col_of_bus(bus).map_or(0.0, |c| self.values[(r, c)]))
    }

    /// Copy with the (implicit, all-zero) slack column materialized at the
    /// slack's position in grid bus order.
    pub fn with_slack_column(&self, grid: &Grid) -> FactorMatrix {
        let Labels::Buses(_) = &self.cols else {
            return self.clone();
        };
        let ids: Vec<BusId> = grid.buses().iter().map(|b| b.id).collect();
        let mut values = DMatrix::zeros(self.values.nrows(), ids.len());
        for (c, id) in ids.iter().enumerate() {
            if let Some(src) = self.col_of_bus(*id) {
                values.set_column(c, &self.values.column(src));
            }
        }
        FactorMatrix {
            kind: self.kind,
            values,
            rows: self.rows.clone(),
            cols: Labels::Buses(ids),
        }
    }

    /// Applies a bus-column factor matrix to a reduced injection vector.
    pub fn apply(&self, reduced: &DVector<f64>) -> DVector<f64> {
        &self.values * reduced
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    /// Angles in grounded coordinates (slack fixed at 0, not stored).
    pub angles: DVector<f64>,
    /// Flow per branch in grid branch order, per-unit.
    pub flows: DVector<f64>,
}

impl FlowState {
    /// Index and value of the branch with the largest `|f|`.
    pub fn max_loaded(&self) -> Option<(usize, f64)> {
        self.flows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, &f)| (i, f))
    }

    /// Largest KCL residual `max_n |p_n - sum_k f_{n->k}|` over all buses.
    pub fn kcl_residual(&self, grid: &Grid, p: &DVector<f64>) -> f64 {
        let mut net = p.clone();
        for (e, br) in grid.branches().iter().enumerate() {
            let f = self.flows[e];
            net[grid.bus_position(br.from).unwrap()] -= f;
            net[grid.bus_position(br.to).unwrap()] += f;
        }
        net.amax()
    }
}

/// `theta = B^-1 p` in grounded coordinates. `p` is full-length (bus order);
/// the slack entry is dropped.
pub fn solve_angles(sys: &GroundedSystem, p: &DVector<f64>) -> Result<DVector<f64>> {
    let reduced = sys.index().reduce(p)?;
    Ok(sys.solve_vec(&reduced))
}

/// `f = 𝔅 E^T theta`.
pub fn compute_flows(grid: &Grid, index: &BusIndex, angles: &DVector<f64>) -> Result<FlowState> {
    linalg::check_len(index.len(), angles.len())?;
    let flows = DVector::from_iterator(
        grid.n_branches(),
        grid.branches().iter().map(|br| {
            let nu = index.nu_branch(br);
            br.effective_susceptance() * linalg::nu_dot(&nu, angles)
        }),
    );
    Ok(FlowState {
        angles: angles.clone(),
        flows,
    })
}

/// Angles and flows for the grid's own injections.
pub fn base_flows(sys: &GroundedSystem, grid: &Grid) -> Result<FlowState> {
    let theta = solve_angles(sys, &grid.injections())?;
    compute_flows(grid, sys.index(), &theta)
}

/// `𝔅 E^T B^-1` from column solves against the stored factor, in grid
/// branch order with non-slack bus columns.
pub fn ptdf_matrix(sys: &GroundedSystem, grid: &Grid) -> FactorMatrix {
    let index = sys.index();
    // rhs = E_r 𝔅 (n x N_e); PTDF^T = B^-1 E_r 𝔅 since B is symmetric.
    let mut rhs = DMatrix::zeros(index.len(), grid.n_branches());
    for (e, br) in grid.branches().iter().enumerate() {
        let b = br.effective_susceptance();
        if b == 0.0 {
            continue;
        }
        for (row, v) in index.nu_branch(br) {
            rhs[(row, e)] = b * v;
        }
    }
    let values = sys.solve(&rhs).transpose();
    FactorMatrix {
        kind: FactorKind::Ptdf,
        values,
        rows: grid.branch_ids(),
        cols: Labels::Buses(index.buses().to_vec()),
    }
}

/// PTDF rows `b_e nu_e^T X` for an arbitrary inverse `X` in the layout of
/// `index`, with per-branch susceptances supplied by the caller.
pub(crate) fn ptdf_from_inverse(
    grid: &Grid,
    index: &BusIndex,
    inverse: &DMatrix<f64>,
    susceptance: impl Fn(usize) -> f64,
) -> FactorMatrix {
    let n = index.len();
    let mut values = DMatrix::zeros(grid.n_branches(), n);
    for (e, br) in grid.branches().iter().enumerate() {
        let b = susceptance(e);
        if b == 0.0 {
            continue;
        }
        for (row, v) in index.nu_branch(br) {
            let mut out = values.row_mut(e);
            out += inverse.row(row) * (b * v);
        }
    }
    FactorMatrix {
        kind: FactorKind::Ptdf,
        values,
        rows: grid.branch_ids(),
        cols: Labels::Buses(index.buses().to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grounded_system, Branch, Bus};

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
    fn zero_injection_zero_angles() {
        let g = triangle();
        let sys = build_grounded_system(&g).unwrap();
        let theta = solve_angles(&sys, &DVector::zeros(3)).unwrap();
        assert_eq!(theta, DVector::zeros(2));
        let fs = compute_flows(&g, sys.index(), &theta).unwrap();
        assert_eq!(fs.flows, DVector::zeros(3));
    }

    #[test]
    fn two_bus_angle() {
        let g = Grid::new(
            vec![Bus::new(1, 1.0), Bus::slack(2, -1.0)],
            vec![Branch::line(1, 1, 2, 1.0)],
        )
        .unwrap();
        let sys = build_grounded_system(&g).unwrap();
        let theta = solve_angles(&sys, &g.injections()).unwrap();
        assert_eq!(theta[0], 1.0);
        let ptdf = ptdf_matrix(&sys, &g);
        assert_eq!(ptdf.values, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn triangle_angles_flows_ptdf() {
        let g = triangle();
        let sys = build_grounded_system(&g).unwrap();
        let theta = solve_angles(&sys, &g.injections()).unwrap();
        assert!((theta[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((theta[1] - 1.0 / 3.0).abs() < 1e-15);
        let fs = compute_flows(&g, sys.index(), &theta).unwrap();
        for (got, want) in fs.flows.iter().zip([1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(fs.kcl_residual(&g, &g.injections()) < 1e-15);
        let ptdf = ptdf_matrix(&sys, &g);
        assert!((ptdf.get(BranchId(3), BusId(1)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ptdf.get(BranchId(3), BusId(3)), Some(0.0));
    }

    #[test]
    fn slack_column_materialized() {
        let g = triangle();
        let sys = build_grounded_system(&g).unwrap();
        let full = ptdf_matrix(&sys, &g).with_slack_column(&g);
        assert_eq!(full.values.shape(), (3, 3));
        assert!(full.values.column(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ptdf_from_inverse_matches_solves() {
        let g = triangle();
        let sys = build_grounded_system(&g).unwrap();
        let b = g.susceptances();
        let a = ptdf_from_inverse(&g, sys.index(), sys.inverse(), |e| b[e]);
        assert!((a.values - ptdf_matrix(&sys, &g).values).amax() < 1e-15);
    }
}
