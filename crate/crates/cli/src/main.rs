use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gridfactors_core::bench::run_bench;
use gridfactors_core::case_io::{load_grid, write_factors};
use gridfactors_core::factors::{ptdf_matrix, FactorMatrix};
use gridfactors_core::grid::{BranchId, BranchKind, Grid};
use gridfactors_core::islanding::outage_criteria;
use gridfactors_core::multi::SwitchState;
use gridfactors_core::pst::psdf_matrix;
use gridfactors_core::scenario::{enumerate_switches, evaluate, Outcome, Scenario};
use gridfactors_core::screening::n1_screen;
use gridfactors_core::Error;
use log::debug;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gridfactors", version, about = "DC power-flow distribution factors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Branch flows of a case and its most loaded branch.
    Flows {
        case: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Phase shift of a PST branch in radians, as `branch=radians`.
        #[arg(long = "shift", value_parser = parse_shift)]
        shifts: Vec<(BranchId, f64)>,
    },
    /// Writes a factor matrix as CSV.
    Factors {
        case: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flows before and after a modification set.
    Whatif {
        case: PathBuf,
        mods: PathBuf,
        /// Evaluates every open/closed combination of the case's switches.
        #[arg(long)]
        enumerate: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// (n-1) outage screening.
    N1 {
        case: PathBuf,
        /// Screens the grid after this modification set.
        #[arg(long)]
        after: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Outage islanding criteria as JSON lines.
    Islanding { case: PathBuf },
    /// Woodbury update against full re-factorization on a random grid.
    Bench {
        #[arg(long, default_value_t = 500)]
        buses: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Ptdf,
    Psdf,
}

fn parse_shift(s: &str) -> Result<(BranchId, f64), String> {
    let (id, rad) = s.split_once('=').ok_or("expected branch=radians")?;
    let id: u32 = id.trim().parse().map_err(|_| format!("bad branch id '{id}'"))?;
    let rad: f64 = rad.trim().parse().map_err(|_| format!("bad angle '{rad}'"))?;
    Ok((BranchId(id), rad))
}

enum Failure {
    Core(Error),
    /// Invalid case or modification file.
    Input(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type CliResult = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Conversion(_) | Error::Json(_) | Error::Io(_) => 2,
        Error::Disconnected { .. } | Error::Singular => 3,
        Error::Islanding { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Disconnected { .. } | Error::Singular => 3,
                _ => 2,
            })
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GRIDFACTORS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GRIDFACTORS_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    debug!("rayon pool capped at {n} threads");
    Ok(())
}

fn run(command: Command) -> CliResult {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match command {
        Command::Flows { case, format, shifts } => {
            let grid = with_shifts(&load_case(&case)?, &shifts).map_err(Failure::Input)?;
            let outcome = evaluate(&grid, &Scenario::default())?;
            print_flows(&mut out, &outcome, format)?;
        }
        Command::Factors { case, kind, out: path } => {
            let grid = load_case(&case)?;
            let outcome = evaluate(&grid, &Scenario::default())?;
            let matrix: FactorMatrix = match kind {
                Kind::Ptdf => ptdf_matrix(&outcome.system, &outcome.grid),
                Kind::Psdf => psdf_matrix(&outcome.system, &outcome.grid),
            };
            match path {
                Some(p) => write_factors(&matrix, BufWriter::new(File::create(p)?))?,
                None => write_factors(&matrix, &mut out)?,
            }
        }
        Command::Whatif {
            case,
            mods,
            enumerate,
            format,
        } => {
            let grid = load_case(&case)?;
            let scenario = load_scenario(&mods)?;
            if enumerate {
                print_enumeration(&mut out, &grid, &scenario, format)?;
            } else {
                whatif(&mut out, &grid, &scenario, format)?;
            }
        }
        Command::N1 { case, after, format } => {
            let grid = load_case(&case)?;
            let scenario = match after {
                Some(p) => load_scenario(&p)?,
                None => Scenario::default(),
            };
            let outcome = evaluate(&grid, &scenario)?;
            print_n1(&mut out, &outcome, format)?;
        }
        Command::Islanding { case } => {
            let grid = load_case(&case)?;
            let outcome = evaluate(&grid, &Scenario::default())?;
            for (id, c) in outage_criteria(&outcome.system, &outcome.grid)? {
                let line = json!({"branch": id.0, "criterion": c.value, "islands": c.islands});
                writeln!(out, "{line}")?;
            }
        }
        Command::Bench {
            buses,
            m,
            reps,
            seed,
            format,
        } => {
            if reps == 0 || buses < 2 {
                return Err(Failure::Usage("--buses must be at least 2 and --reps positive".into()));
            }
            let r = run_bench(buses, m, reps, seed)?;
            if format == Format::Table {
                writeln!(out, "buses  m  reps  update_us  rebuild_us  speedup  max_rel_diff")?;
                writeln!(
                    out,
                    "{}  {}  {}  {:.1}  {:.1}  {:.1}  {:.2e}",
                    r.n_buses,
                    r.m,
                    r.reps,
                    r.update_median.as_secs_f64() * 1e6,
                    r.rebuild_median.as_secs_f64() * 1e6,
                    r.speedup,
                    r.max_rel_diff
                )?;
            } else if format == Format::Csv {
                writeln!(out, "buses,m,reps,update_us,rebuild_us,speedup,max_rel_diff")?;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.n_buses,
                    r.m,
                    r.reps,
                    r.update_median.as_secs_f64() * 1e6,
                    r.rebuild_median.as_secs_f64() * 1e6,
                    r.speedup,
                    r.max_rel_diff
                )?;
            } else {
                let line = json!({
                    "buses": r.n_buses,
                    "m": r.m,
                    "reps": r.reps,
                    "update_us": r.update_median.as_secs_f64() * 1e6,
                    "rebuild_us": r.rebuild_median.as_secs_f64() * 1e6,
                    "speedup": r.speedup,
                    "max_rel_diff": r.max_rel_diff,
                });
                writeln!(out, "{line}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn load_case(path: &Path) -> Result<Grid, Failure> {
    load_grid(path).map_err(Failure::Input)
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(e.into()))?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(e.into()))
}

fn with_shifts(grid: &Grid, shifts: &[(BranchId, f64)]) -> Result<Grid, Error> {
    if shifts.is_empty() {
        return Ok(grid.clone());
    }
    let mut branches = grid.branches().to_vec();
    for &(id, angle) in shifts {
        let br = &mut branches[grid.branch_position(id)?];
        if br.kind != BranchKind::Pst {
            return Err(Error::InvalidModification(format!("branch {id} is not a phase shifter")));
        }
        br.shift_angle = angle;
    }
    grid.with_branches(branches)
}

fn mw(grid: &Grid, f: f64) -> f64 {
    f * grid.base_mva()
}

fn max_loaded(outcome: &Outcome) -> Option<(usize, f64)> {
    outcome
        .flows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        .map(|(k, &f)| (k, f))
}

fn describe_max(outcome: &Outcome) -> String {
    match max_loaded(outcome) {
        Some((k, f)) => {
            let br = &outcome.grid.branches()[k];
            format!(
                "max |f| = {:.4} MW on branch {} ({},{})",
                mw(&outcome.grid, f.abs()),
                br.id,
                br.from,
                br.to
            )
        }
        None => "no branches".into(),
    }
}

fn print_flows(out: &mut impl Write, outcome: &Outcome, format: Format) -> io::Result<()> {
    let g = &outcome.grid;
    match format {
        Format::Table => {
            writeln!(out, "{:>7} {:>6} {:>6} {:>14} {:>14}", "branch", "from", "to", "flow_pu", "flow_mw")?;
            for (br, &f) in g.branches().iter().zip(outcome.flows.iter()) {
                writeln!(
                    out,
                    "{:>7} {:>6} {:>6} {:>14.6} {:>14.4}",
                    br.id,
                    br.from,
                    br.to,
                    f,
                    mw(g, f)
                )?;
            }
            writeln!(out, "{}", describe_max(outcome))
        }
        Format::Csv => {
            writeln!(out, "branch,from,to,flow_pu,flow_mw")?;
            for (br, &f) in g.branches().iter().zip(outcome.flows.iter()) {
                writeln!(out, "{},{},{},{:?},{:?}", br.id, br.from, br.to, f, mw(g, f))?;
            }
            Ok(())
        }
        Format::Jsonl => {
            for (br, &f) in g.branches().iter().zip(outcome.flows.iter()) {
                let line = json!({"branch": br.id.0, "from": br.from.0, "to": br.to.0, "flow_pu": f, "flow_mw": mw(g, f)});
                writeln!(out, "{line}")?;
            }
            Ok(())
        }
    }
}

fn whatif(out: &mut impl Write, grid: &Grid, scenario: &Scenario, format: Format) -> CliResult {
    let pre = evaluate(grid, &Scenario::default())?;
    let post = match evaluate(grid, scenario) {
        Ok(o) => o,
        Err(e @ Error::Islanding { .. }) => {
            if let Error::Islanding { criterion, .. } = &e {
                writeln!(out, "islanding: yes (criterion {criterion:e})")?;
                out.flush()?;
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let pre_by_id: HashMap<BranchId, f64> = pre
        .grid
        .branches()
        .iter()
        .zip(pre.flows.iter())
        .map(|(b, &f)| (b.id, f))
        .collect();
    let g = &post.grid;
    let rows = g.branches().iter().zip(post.flows.iter()).map(|(br, &f)| {
        let before = pre_by_id.get(&br.id).copied().unwrap_or(0.0);
        (br, mw(g, before), mw(g, f))
    });
    match format {
        Format::Table => {
            writeln!(
                out,
                "{:>7} {:>6} {:>6} {:>12} {:>12} {:>12}",
                "branch", "from", "to", "pre_mw", "post_mw", "delta_mw"
            )?;
            for (br, a, b) in rows {
                writeln!(
                    out,
                    "{:>7} {:>6} {:>6} {:>12.4} {:>12.4} {:>12.4}",
                    br.id,
                    br.from,
                    br.to,
                    a,
                    b,
                    b - a
                )?;
            }
            writeln!(out, "islanding: no")?;
            writeln!(out, "pre:  {}", describe_max(&pre))?;
            writeln!(out, "post: {}", describe_max(&post))?;
        }
        Format::Csv => {
            writeln!(out, "branch,from,to,pre_mw,post_mw,delta_mw")?;
            for (br, a, b) in rows {
                writeln!(out, "{},{},{},{:?},{:?},{:?}", br.id, br.from, br.to, a, b, b - a)?;
            }
        }
        Format::Jsonl => {
            for (br, a, b) in rows {
                let line = json!({"branch": br.id.0, "from": br.from.0, "to": br.to.0, "pre_mw": a, "post_mw": b, "delta_mw": b - a});
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

fn print_enumeration(out: &mut impl Write, grid: &Grid, scenario: &Scenario, format: Format) -> CliResult {
    let settings = enumerate_switches(grid, scenario)?;
    for (mask, s) in settings.iter().enumerate() {
        let states: Vec<String> = s
            .states
            .iter()
            .map(|(id, st)| {
                let c = match st {
                    SwitchState::Open => "open",
                    SwitchState::Closed => "closed",
                };
                format!("{id}={c}")
            })
            .collect();
        let (status, max) = match &s.outcome {
            Ok(o) => ("ok".to_string(), max_loaded(o).map(|(k, f)| (o.grid.branches()[k].id, mw(&o.grid, f.abs())))),
            Err(Error::Islanding { .. }) => ("islands".to_string(), None),
            Err(Error::RedundantClosing { .. }) => ("redundant".to_string(), None),
            Err(e) => (format!("error: {e}"), None),
        };
        match format {
            Format::Jsonl => {
                let map: serde_json::Map<String, serde_json::Value> = s
                    .states
                    .iter()
                    .map(|(id, st)| (id.to_string(), serde_json::to_value(st).unwrap_or_default()))
                    .collect();
                let line = json!({
                    "setting": mask,
                    "switches": map,
                    "status": status,
                    "max_branch": max.map(|m| m.0 .0),
                    "max_mw": max.map(|m| m.1),
                });
                writeln!(out, "{line}")?;
            }
            _ => {
                let tail = max.map_or(String::new(), |(id, f)| format!(" max |f| = {f:.4} MW on branch {id}"));
                writeln!(out, "{mask:>4} {} {status}{tail}", states.join(" "))?;
            }
        }
    }
    Ok(())
}

fn print_n1(out: &mut impl Write, outcome: &Outcome, format: Format) -> CliResult {
    let g = &outcome.grid;
    let reports = n1_screen(&outcome.system, g, &outcome.flows)?;
    if format == Format::Csv {
        writeln!(out, "branch,from,to,islands,criterion,worst_branch,worst_mw")?;
    }
    if format == Format::Table {
        writeln!(
            out,
            "{:>7} {:>6} {:>6} {:>8} {:>12} {:>12} {:>12}",
            "branch", "from", "to", "islands", "criterion", "worst", "worst_mw"
        )?;
    }
    for r in &reports {
        let br = g.branch(r.branch)?;
        match format {
            Format::Table => {
                let (worst, f) = r
                    .worst
                    .map_or(("-".to_string(), "-".to_string()), |(id, f)| {
                        (id.to_string(), format!("{:.4}", mw(g, f.abs())))
                    });
                writeln!(
                    out,
                    "{:>7} {:>6} {:>6} {:>8} {:>12.4e} {:>12} {:>12}",
                    br.id,
                    br.from,
                    br.to,
                    if r.islands { "yes" } else { "no" },
                    r.criterion,
                    worst,
                    f
                )?;
            }
            Format::Csv => {
                let (worst, f) = r
                    .worst
                    .map_or((String::new(), String::new()), |(id, f)| (id.to_string(), format!("{:?}", mw(g, f.abs()))));
                writeln!(out, "{},{},{},{},{:?},{worst},{f}", br.id, br.from, br.to, r.islands, r.criterion)?;
            }
            Format::Jsonl => {
                let line = json!({
                    "branch": br.id.0,
                    "from": br.from.0,
                    "to": br.to.0,
                    "islands": r.islands,
                    "criterion": r.criterion,
                    "worst_branch": r.worst.map(|w| w.0 .0),
                    "worst_mw": r.worst.map(|w| mw(g, w.1.abs())),
                });
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}
