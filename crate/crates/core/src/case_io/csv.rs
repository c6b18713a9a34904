//! CSV export of factor matrices.
//!
//! Header `branch,bus1,bus2,...` (or `branch,branch1,...` for branch
//! columns), then one line per row branch. Values use the shortest
//! representation that parses back to the same `f64`.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::factors::{FactorKind, FactorMatrix, Labels};
use crate::grid::{BranchId, BusId};

pub fn write_factors<W: Write>(matrix: &FactorMatrix, mut sink: W) -> Result<()> {
    let mut header = String::from("branch");
    match &matrix.cols {
        Labels::Buses(ids) => ids.iter().for_each(|id| header.push_str(&format!(",bus{id}"))),
        Labels::Branches(ids) => ids
            .iter()
            .for_each(|id| header.push_str(&format!(",branch{id}"))),
    }
    writeln!(sink, "{header}")?;
    for (r, id) in matrix.rows.iter().enumerate() {
        let mut line = id.to_string();
        for v in matrix.values.row(r).iter() {
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads a matrix written by [`write_factors`]. The kind is not stored in
/// the file and must be supplied.
pub fn read_factors<R: BufRead>(source: R, kind: FactorKind) -> Result<FactorMatrix> {
    let mut lines = source.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty input"))??;
    let mut cols = header.split(',');
    if cols.next() != Some("branch") {
        return Err(parse_err(1, "header must start with 'branch'"));
    }
    let labels: Vec<&str> = cols.collect();
    let parse_id = |s: &str, prefix: &str| -> Result<u32> {
        s.strip_prefix(prefix)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(1, format!("bad column label '{s}'")))
    };
    let cols = match labels.first() {
        Some(l) if l.starts_with("branch") => Labels::Branches(
            labels
                .iter()
                .map(|s| parse_id(s, "branch").map(BranchId))
                .collect::<Result<_>>()?,
        ),
        _ => Labels::Buses(
            labels
                .iter()
                .map(|s| parse_id(s, "bus").map(BusId))
                .collect::<Result<_>>()?,
        ),
    };
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(line_no, "bad branch id"))?;
        rows.push(BranchId(id));
        let before = data.len();
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad value '{f}'")))?,
            );
        }
        if data.len() - before != cols.len() {
            return Err(parse_err(line_no, "row length differs from header"));
        }
    }
    Ok(FactorMatrix {
        kind,
        values: DMatrix::from_row_slice(rows.len(), cols.len(), &data),
        rows,
        cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bus_ptdf_shape() {
        let m = FactorMatrix {
            kind: FactorKind::Ptdf,
            values: DMatrix::from_element(1, 1, 1.0),
            rows: vec![BranchId(1)],
            cols: Labels::Buses(vec![BusId(1)]),
        };
        let mut out = Vec::new();
        write_factors(&m, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "branch,bus1\n1,1.0\n");
    }

    #[test]
    fn bit_exact_round_trip() {
        let m = FactorMatrix {
            kind: FactorKind::LodfColumns,
            values: DMatrix::from_row_slice(2, 2, &[0.1 + 0.2, -1.0 / 3.0, 1e-300, -0.0]),
            rows: vec![BranchId(4), BranchId(9)],
            cols: Labels::Branches(vec![BranchId(9), BranchId(4)]),
        };
        let mut out = Vec::new();
        write_factors(&m, &mut out).unwrap();
        let back = read_factors(out.as_slice(), FactorKind::LodfColumns).unwrap();
        assert_eq!(back.rows, m.rows);
        assert_eq!(back.cols, m.cols);
        for (a, b) in back.values.iter().zip(m.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
