//! Matpower case files: the `baseMVA`, `bus`, `gen` and `branch` tables of
//! a `.m` file. Anything else is skipped.

use std::f64::consts::PI;

use log::info;

use crate::error::{Error, Result};
use crate::grid::{Branch, BranchKind, Bus, Grid};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatpowerCase {
    pub base_mva: f64,
    pub bus: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
    pub branch: Vec<Vec<f64>>,
}

struct Block {
    name: String,
    start_line: usize,
    rows: Vec<(usize, Vec<f64>)>,
    numeric: bool,
}

fn strip_comment(line: &str) -> &str {
    line.find('%').map_or(line, |i| &line[..i])
}

fn parse_row(chunk: &str, line: usize) -> Result<Option<Vec<f64>>> {
    let tokens: Vec<&str> = chunk
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Ok(None);
    }
    tokens
        .iter()
        .map(|t| match *t {
            "Inf" | "inf" => Ok(f64::INFINITY),
            "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
            _ => t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric token '{t}'"),
            }),
        })
        .collect::<Result<Vec<f64>>>()
        .map(Some)
}

/// Parses the Matpower subset. Errors carry 1-based line numbers.
pub fn parse_matpower(text: &str) -> Result<MatpowerCase> {
    let mut case = MatpowerCase::default();
    let mut base: Option<f64> = None;
    let mut found = [false; 3];
    let mut block: Option<Block> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if block.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some((name, value)) = rest.split_once('=') else {
                continue;
            };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[').or_else(|| value.strip_prefix('{')) {
                let numeric = matches!(name.as_str(), "bus" | "gen" | "branch");
                block = Some(Block {
                    name,
                    start_line: line_no,
                    rows: Vec::new(),
                    numeric,
                });
                line = body;
            } else {
                if name == "baseMVA" {
                    let v = value.trim_end_matches(';').trim();
                    base = Some(v.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("baseMVA '{v}' is not a number"),
                    })?);
                }
                continue;
            }
        }
        let b = block.as_mut().unwrap();
        let (body, closed) = match line.find([']', '}']) {
            Some(pos) => (&line[..pos], true),
            None => (line, false),
        };
        if b.numeric {
            for chunk in body.split(';') {
                if let Some(row) = parse_row(chunk.trim_end_matches("..."), line_no)? {
                    b.rows.push((line_no, row));
                }
            }
        }
        if closed {
            let b = block.take().unwrap();
            let (slot, min_cols, table) = match b.name.as_str() {
                "bus" => (0, BUS_COLS, &mut case.bus),
                "gen" => (1, GEN_COLS, &mut case.gen),
                "branch" => (2, BRANCH_COLS, &mut case.branch),
                _ => continue,
            };
            found[slot] = true;
            let width = b.rows.first().map_or(min_cols, |r| r.1.len());
            for (line, row) in b.rows {
                if row.len() < min_cols {
                    return Err(Error::Parse {
                        line,
                        msg: format!(
                            "{} row has {} columns, at least {min_cols} required",
                            b.name,
                            row.len()
                        ),
                    });
                }
                if row.len() != width {
                    return Err(Error::Parse {
                        line,
                        msg: format!("{} row has {} columns, expected {width}", b.name, row.len()),
                    });
                }
                table.push(row);
            }
        }
    }
    if let Some(b) = block {
        return Err(Error::Parse {
            line: b.start_line,
            msg: format!("table mpc.{} is not terminated", b.name),
        });
    }
    let last = text.lines().count();
    let base = base.ok_or(Error::Parse {
        line: last,
        msg: "missing mpc.baseMVA".into(),
    })?;
    if !(base > 0.0) {
        return Err(Error::Parse {
            line: last,
            msg: format!("baseMVA must be positive, got {base}"),
        });
    }
    case.base_mva = base;
    for (name, ok) in ["bus", "gen", "branch"].iter().zip(found) {
        if !ok {
            return Err(Error::Parse {
                line: last,
                msg: format!("missing table mpc.{name}"),
            });
        }
    }
    Ok(case)
}

fn as_id(v: f64, what: &str) -> Result<u32> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(Error::Conversion(format!("{what} '{v}' is not a positive integer id")))
    }
}

impl MatpowerCase {
    /// DC grid: `p = (sum Pg - Pd) / baseMVA`, `b = 1/x`, slack at the
    /// type-3 bus (lowest id when there is none), imbalance moved to the
    /// slack. Branch ids are 1-based row numbers; status-0 branches stay in
    /// the grid out of service; a nonzero shift angle makes a PST.
    pub fn to_grid(&self) -> Result<Grid> {
        let slack_id = self
            .bus
            .iter()
            .find(|r| r[1] == 3.0)
            .map(|r| r[0])
            .or_else(|| self.bus.iter().map(|r| r[0]).reduce(f64::min))
            .ok_or_else(|| Error::Conversion("case has no buses".into()))?;
        let mut buses = Vec::with_capacity(self.bus.len());
        for r in &self.bus {
            let id = as_id(r[0], "bus")?;
            let inj = -r[2] / self.base_mva;
            buses.push(if r[0] == slack_id {
                Bus::slack(id, inj)
            } else {
                Bus::new(id, inj)
            });
        }
        for r in &self.gen {
            let id = as_id(r[0], "generator bus")?;
            if r[7] <= 0.0 {
                continue;
            }
            let bus = buses
                .iter_mut()
                .find(|b| b.id.0 == id)
                .ok_or_else(|| Error::Conversion(format!("generator at unknown bus {id}")))?;
            bus.injection += r[1] / self.base_mva;
        }
        let mut branches = Vec::with_capacity(self.branch.len());
        for (k, r) in self.branch.iter().enumerate() {
            let id = k as u32 + 1;
            let (from, to) = (as_id(r[0], "from bus")?, as_id(r[1], "to bus")?);
            if r[3] == 0.0 {
                return Err(Error::Conversion(format!("branch {id} has zero reactance")));
            }
            let b = 1.0 / r[3];
            let mut br = if r[9] != 0.0 {
                Branch::pst(id, from, to, b, -r[9] * PI / 180.0)
            } else {
                Branch::line(id, from, to, b)
            };
            if r[10] == 0.0 {
                br = br.out_of_service();
                br.kind = BranchKind::Line;
                br.shift_angle = 0.0;
            }
            branches.push(br);
        }
        let (grid, adjustment) = Grid::rebalanced(buses, branches)?;
        if adjustment != 0.0 {
            info!(
                "rebalanced slack bus {} by {adjustment:e} pu",
                grid.slack()
            );
        }
        Ok(grid.with_base_mva(self.base_mva))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	50	0	0	0	1	1	0	230	1	1.1	0.9; % load
];
mpc.gen = [
	1	50	0	0	0	1	100	1;
];
mpc.branch = [
	1	2	0.01	0.1	0	0	0	0	0	0	1;
];
";

    #[test]
    fn tiny_case() {
        let case = parse_matpower(TINY).unwrap();
        assert_eq!(case.bus.len(), 2);
        assert_eq!(case.bus[1].len(), 13);
        let g = case.to_grid().unwrap();
        assert_eq!(g.base_mva(), 100.0);
        assert!((g.branches()[0].susceptance - 10.0).abs() < 1e-12);
        assert!((g.buses()[1].injection + 0.5).abs() < 1e-15);
    }

    #[test]
    fn trailing_comment_ignored() {
        let plain = TINY.replace(" % load", "");
        assert_eq!(parse_matpower(TINY).unwrap(), parse_matpower(&plain).unwrap());
    }

    #[test]
    fn empty_gen_table() {
        let text = TINY.replace("\t1\t50\t0\t0\t0\t1\t100\t1;\n", "");
        let case = parse_matpower(&text).unwrap();
        assert!(case.gen.is_empty());
        let g = case.to_grid().unwrap();
        assert!((g.buses()[0].injection - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_token_reports_line() {
        let text = TINY.replace("0.01\t0.1", "0.01\tx");
        match parse_matpower(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_rejected() {
        let text = TINY.replace("0\t0\t0\t0\t0\t1;\n];", "0\t0\t0\t1;\n];");
        assert!(matches!(parse_matpower(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_branch_table() {
        let cut = TINY.split("mpc.branch").next().unwrap();
        assert!(matches!(parse_matpower(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_reactance_rejected() {
        let text = TINY.replace("0.01\t0.1", "0.01\t0");
        let case = parse_matpower(&text).unwrap();
        assert!(matches!(case.to_grid(), Err(Error::Conversion(_))));
    }

    #[test]
    fn balanced_loads_zero_injection() {
        let text = TINY.replace("1\t50\t0\t0\t0\t1\t100\t1;", "2\t50\t0\t0\t0\t1\t100\t1;");
        let g = parse_matpower(&text).unwrap().to_grid().unwrap();
        assert!(g.injections().iter().all(|&p| p == 0.0));
    }
}
