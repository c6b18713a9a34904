//! Reading grids and writing factor matrices.

pub mod csv;
pub mod matpower;
pub mod native;

pub use self::csv::{read_factors, write_factors};
pub use self::matpower::{parse_matpower, MatpowerCase};
pub use self::native::{grid_from_json, grid_to_json, NativeGrid};

use std::path::Path;

use crate::error::Result;
use crate::grid::Grid;

/// Loads a grid from a `.m` Matpower case or a native `.json` file, chosen
/// by extension.
pub fn load_grid(path: &Path) -> Result<Grid> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => grid_from_json(&text),
        _ => parse_matpower(&text)?.to_grid(),
    }
}
