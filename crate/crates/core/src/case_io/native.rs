//! Native JSON grid format.
//!
//! ```json
//! {"base_mva": 100,
//!  "buses": [{"id": 1, "injection": 0.5, "slack": true}, ...],
//!  "branches": [{"id": 1, "from": 1, "to": 2, "b": 10.0, "kind": "line"}, ...]}
//! ```
//!
//! Without a `slack` flag the lowest bus id is the slack.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Branch, BranchId, BranchKind, Bus, BusId, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_mva: Option<f64>,
    pub buses: Vec<NativeBus>,
    pub branches: Vec<NativeBranch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeBus {
    pub id: BusId,
    pub injection: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub slack: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeBranch {
    pub id: BranchId,
    pub from: BusId,
    pub to: BusId,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub kind: BranchKind,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift_angle: f64,
    /// In service for lines and PSTs, closed for switches.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub in_service: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_true(b: &bool) -> bool {
    *b
}

fn default_true() -> bool {
    true
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl NativeGrid {
    pub fn to_grid(&self) -> Result<Grid> {
        let explicit = self.buses.iter().any(|b| b.slack);
        let lowest = self.buses.iter().map(|b| b.id).min();
        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                injection: b.injection,
                is_slack: if explicit { b.slack } else { Some(b.id) == lowest },
            })
            .collect();
        let branches = self
            .branches
            .iter()
            .map(|b| Branch {
                id: b.id,
                from: b.from,
                to: b.to,
                susceptance: b.b,
                kind: b.kind,
                shift_angle: b.shift_angle,
                in_service: b.in_service,
            })
            .collect();
        let grid = Grid::new(buses, branches)?;
        Ok(match self.base_mva {
            Some(base) => grid.with_base_mva(base),
            None => grid,
        })
    }

    pub fn from_grid(grid: &Grid) -> Self {
        NativeGrid {
            base_mva: (grid.base_mva() != 1.0).then_some(grid.base_mva()),
            buses: grid
                .buses()
                .iter()
                .map(|b| NativeBus {
                    id: b.id,
                    injection: b.injection,
                    slack: b.is_slack,
                })
                .collect(),
            branches: grid
                .branches()
                .iter()
                .map(|b| NativeBranch {
                    id: b.id,
                    from: b.from,
                    to: b.to,
                    b: b.susceptance,
                    kind: b.kind,
                    shift_angle: b.shift_angle,
                    in_service: b.in_service,
                })
                .collect(),
        }
    }
}

pub fn grid_from_json(text: &str) -> Result<Grid> {
    serde_json::from_str::<NativeGrid>(text)?.to_grid()
}

pub fn grid_to_json(grid: &Grid) -> Result<String> {
    Ok(serde_json::to_string_pretty(&NativeGrid::from_grid(grid))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let g = Grid::new(
            vec![Bus::new(3, 0.25), Bus::slack(1, -0.5), Bus::new(7, 0.25)],
            vec![
                Branch::line(1, 3, 1, 2.0),
                Branch::pst(2, 1, 7, 1.5, 0.1),
                Branch::switch(3, 3, 7, true),
                Branch::line(4, 7, 3, 0.5).out_of_service(),
            ],
        )
        .unwrap()
        .with_base_mva(100.0);
        let text = grid_to_json(&g).unwrap();
        assert_eq!(grid_from_json(&text).unwrap(), g);
    }

    #[test]
    fn default_slack_is_lowest_id() {
        let g = grid_from_json(
            r#"{"buses":[{"id":4,"injection":1},{"id":2,"injection":-1}],
                "branches":[{"id":1,"from":4,"to":2,"b":1,"kind":"line"}]}"#,
        )
        .unwrap();
        assert_eq!(g.slack(), BusId(2));
    }
}
