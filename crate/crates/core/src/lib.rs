//! DC power-flow distribution factors with low-rank updates.
//!
//! A [`grid::Grid`] is factored once into a [`grid::GroundedSystem`]. PTDF,
//! PSDF, LODF and LCDF factors follow from the stored inverse, and branch
//! changes, switch closings and bus splits are applied as Sherman-Morrison
//! or Woodbury updates of that inverse instead of a new factorization.
//!
//! ```
//! use gridfactors_core::grid::{build_grounded_system, Branch, Bus, Grid};
//! use gridfactors_core::factors::base_flows;
//!
//! let grid = Grid::new(
//!     vec![Bus::new(1, 1.0), Bus::slack(2, -1.0)],
//!     vec![Branch::line(1, 1, 2, 4.0)],
//! )?;
//! let sys = build_grounded_system(&grid)?;
//! let state = base_flows(&sys, &grid)?;
//! assert_eq!(state.flows[0], 1.0);
//! # Ok::<(), gridfactors_core::Error>(())
//! ```

pub mod bench;
pub mod case_io;
pub mod error;
pub mod factors;
pub mod grid;
pub mod islanding;
pub mod linalg;
pub mod multi;
pub mod oracle;
pub mod pst;
pub mod scenario;
pub mod screening;
pub mod single;
pub mod topology;

pub use error::{Error, Result};
