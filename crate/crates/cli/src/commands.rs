//! The subcommands. Each returns an [`Outcome`] instead of exiting so the
//! binary and the tests share one code path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flexgrid::fixtures::{build, write_scenario, ScenarioSpec};
use flexgrid::geometry::{load_for, PqvFor};
use flexgrid::grid::{load_grid, BusKind, GridModel};
use flexgrid::opman::{
    detect_with, robustness_sweep, DispatchResult, DispatchStatus, LimitOverrides, Limits, Method, PhaseTimes,
    Scenario, ScenarioConfig,
};
use flexgrid::powerflow::{solve_power_flow, PowerFlowOptions};
use log::info;
use serde_json::json;

use crate::artifacts::{self, write_json};
use crate::manifest::{config_hash, RunManifest};
use crate::{exit, exit_code, InputArgs, SolverArgs};

/// Exit code plus the lines meant for stdout and stderr.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl Outcome {
    fn fail(code: i32, diagnostics: Vec<String>) -> Self {
        Outcome {
            code,
            stdout: Vec::new(),
            diagnostics,
        }
    }
}

/// Prefixes a library error with the file it came from, unless the error
/// already names it.
fn in_file(path: &Path, e: &flexgrid::Error) -> String {
    match e {
        flexgrid::Error::Parse { .. } | flexgrid::Error::Io { .. } => e.to_string(),
        _ => format!("{}: {e}", path.display()),
    }
}

fn for_files(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Inputs read from the command line, with every file that was touched.
struct Loaded {
    scenario: Scenario,
    overrides: LimitOverrides,
    inputs: Vec<PathBuf>,
}

/// Loads a scenario file or a grid plus FOR directory. Collects every
/// problem it finds rather than stopping at the first.
fn load(input: &InputArgs) -> Result<Loaded, Vec<String>> {
    let mut diags = Vec::new();
    let mut inputs = Vec::new();
    let (grid_path, for_paths, config) = match (&input.scenario, &input.grid) {
        (Some(s), _) => {
            inputs.push(s.clone());
            let cfg = ScenarioConfig::load(s).map_err(|e| vec![e.to_string()])?;
            let base = s.parent().unwrap_or(Path::new("."));
            let fors: Vec<(Option<usize>, PathBuf)> = cfg.fors.iter().map(|(&b, p)| (Some(b), base.join(p))).collect();
            (base.join(&cfg.grid), fors, Some(cfg))
        }
        (None, Some(g)) => {
            let fors = match &input.fors {
                Some(dir) => for_files(dir).map_err(|e| vec![e])?.into_iter().map(|p| (None, p)).collect(),
                None => Vec::new(),
            };
            (g.clone(), fors, None)
        }
        (None, None) => return Err(vec!["usage: one of --scenario or --grid is required".to_string()]),
    };

    inputs.push(grid_path.clone());
    let grid = load_grid(&grid_path).map_err(|e| diags.push(in_file(&grid_path, &e))).ok();
    let mut fors: BTreeMap<usize, PqvFor> = BTreeMap::new();
    for (listed, path) in for_paths {
        inputs.push(path.clone());
        match load_for(&path) {
            Ok(f) => {
                if let Some(b) = listed.filter(|&b| b != f.bus_id) {
                    diags.push(format!("{}: bus_id {} but listed for bus {b}", path.display(), f.bus_id));
                } else if fors.contains_key(&f.bus_id) {
                    diags.push(format!("{}: second FOR for bus {}", path.display(), f.bus_id));
                } else {
                    fors.insert(f.bus_id, f);
                }
            }
            Err(e) => diags.push(in_file(&path, &e)),
        }
    }
    let Some(grid) = grid else {
        return Err(diags);
    };
    diags.extend(cross_check(&grid, &fors));

    let overrides = config.as_ref().map(|c| c.limits.clone()).unwrap_or_default();
    let limits = Limits::with_overrides(&grid, &overrides).map_err(|e| diags.push(format!("limits: {e}"))).ok();
    if let Some(cfg) = &config {
        if let Err(e) = cfg.correction.validate() {
            diags.push(format!("correction: {e}"));
        }
        if let Some(s) = cfg.sweep.as_ref().filter(|s| s.bus >= grid.n_buses()) {
            diags.push(format!("sweep.bus: bus {} does not exist", s.bus));
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    let scenario = Scenario {
        grid,
        fors,
        limits: limits.expect("checked above"),
        method: config.as_ref().and_then(|c| c.method),
        correction: config.as_ref().map(|c| c.correction.clone()).unwrap_or_default(),
        sweep: config.and_then(|c| c.sweep),
    };
    Ok(Loaded {
        scenario,
        overrides,
        inputs,
    })
}

/// FORs must sit on flexible buses and every flexible bus needs one.
fn cross_check(grid: &GridModel, fors: &BTreeMap<usize, PqvFor>) -> Vec<String> {
    let mut out = Vec::new();
    for (&b, f) in fors {
        match grid.buses.get(b) {
            None => out.push(format!("FOR for bus {b}: no such bus in the grid")),
            Some(bus) if bus.kind != BusKind::Flexible => {
                out.push(format!("FOR for bus {b}: bus kind is {}, expected flexible", bus.kind))
            }
            Some(bus) => {
                if (f.op0.p - bus.p0).abs() > 1e-6 || (f.op0.q - bus.q0).abs() > 1e-6 {
                    log::warn!("bus {b}: FOR op0 differs from the grid's p0/q0");
                }
            }
        }
    }
    for b in grid.buses.iter().filter(|b| b.kind == BusKind::Flexible) {
        if !fors.contains_key(&b.id) {
            out.push(format!("bus {}: flexible but no FOR was given", b.id));
        }
    }
    out
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Writes the manifest (when there is an output directory) and converts
/// the final state into an outcome.
fn finish(mut m: RunManifest, out: Option<&Path>, started: Instant, mut outcome: Outcome) -> Outcome {
    m.exit_status = outcome.code;
    m.message = outcome.diagnostics.join("\n");
    m.wall_times.insert("run".into(), secs(started.elapsed()));
    if let Some(dir) = out {
        if let Err(e) = m.write(dir) {
            outcome.diagnostics.push(format!("{}: cannot write manifest: {e}", dir.display()));
            if outcome.code == exit::OK {
                outcome.code = exit::INPUT;
            }
        }
    }
    outcome
}

fn io_failure(dir: &Path, e: std::io::Error) -> Outcome {
    Outcome::fail(exit::INPUT, vec![format!("{}: {e}", dir.display())])
}

fn add_inputs(m: &mut RunManifest, inputs: &[PathBuf]) {
    for p in inputs {
        m.add_input(p);
    }
}

fn record_phases(m: &mut RunManifest, prefix: &str, t: &PhaseTimes) {
    for (name, d) in [
        ("prepare", t.prepare),
        ("power_flow", t.power_flow),
        ("sensitivities", t.sensitivities),
        ("build", t.build),
        ("solve", t.solve),
        ("total", t.total),
    ] {
        m.wall_times.insert(format!("{prefix}{name}"), secs(d));
    }
}

pub fn cmd_validate(input: &InputArgs, out: Option<&Path>) -> Outcome {
    let started = Instant::now();
    let mut m = RunManifest::new("validate");
    if input.scenario.is_none() && input.grid.is_none() {
        // A FOR directory on its own is checked file by file.
        let Some(dir) = &input.fors else {
            return finish(m, out, started, Outcome::fail(exit::INPUT, vec!["usage: give --scenario, --grid or --fors".into()]));
        };
        let files = match for_files(dir) {
            Ok(f) => f,
            Err(e) => return finish(m, out, started, Outcome::fail(exit::INPUT, vec![e])),
        };
        add_inputs(&mut m, &files);
        let diags: Vec<String> = files
            .iter()
            .filter_map(|p| load_for(p).err().map(|e| in_file(p, &e)))
            .collect();
        let outcome = if diags.is_empty() {
            Outcome {
                code: exit::OK,
                stdout: vec![format!("ok: {} FOR files", files.len())],
                diagnostics: Vec::new(),
            }
        } else {
            Outcome::fail(exit::INPUT, diags)
        };
        return finish(m, out, started, outcome);
    }
    match load(input) {
        Ok(l) => {
            add_inputs(&mut m, &l.inputs);
            let s = &l.scenario;
            let outcome = Outcome {
                code: exit::OK,
                stdout: vec![format!(
                    "ok: {} buses, {} branches, {} FORs",
                    s.grid.n_buses(),
                    s.grid.n_branches(),
                    s.fors.len()
                )],
                diagnostics: Vec::new(),
            };
            finish(m, out, started, outcome)
        }
        Err(diags) => finish(m, out, started, Outcome::fail(exit::INPUT, diags)),
    }
}

pub fn cmd_powerflow(input: &InputArgs, out: &Path) -> Outcome {
    let started = Instant::now();
    let mut m = RunManifest::new("powerflow");
    let l = match load(input) {
        Ok(l) => l,
        Err(d) => return finish(m, Some(out), started, Outcome::fail(exit::INPUT, d)),
    };
    add_inputs(&mut m, &l.inputs);
    let s = &l.scenario;
    let slack_v = s.correction.slack_v.unwrap_or(s.grid.buses[s.grid.slack()].v0);
    m.config_hash = config_hash(&json!({
        "command": "powerflow",
        "limits": l.overrides,
        "slack_v": slack_v,
    }));
    let t = Instant::now();
    let state = match solve_power_flow(&s.grid, None, slack_v, &PowerFlowOptions::default()) {
        Ok(st) => st,
        Err(e) => return finish(m, Some(out), started, Outcome::fail(exit_code(&e), vec![e.to_string()])),
    };
    m.wall_times.insert("power_flow".into(), secs(t.elapsed()));
    let tol = s.correction.tolerances;
    let report = detect_with(&state, &s.limits, &tol);
    let written = std::fs::create_dir_all(out)
        .and_then(|_| artifacts::write_buses(&out.join("buses.csv"), &s.limits, &tol, &state, None))
        .and_then(|_| artifacts::write_branches(&out.join("branches.csv"), &s.grid, &s.limits, &tol, &state, None))
        .and_then(|_| write_json(&out.join("report.json"), &json!({ "state": state, "violations": report })));
    if let Err(e) = written {
        return finish(m, Some(out), started, io_failure(out, e));
    }
    let outcome = Outcome {
        code: exit::OK,
        stdout: vec![format!(
            "power flow converged in {} iterations (mismatch {:.2e}); {} voltage and {} current violations",
            state.iterations,
            state.mismatch,
            report.voltage.len(),
            report.current.len()
        )],
        diagnostics: Vec::new(),
    };
    finish(m, Some(out), started, outcome)
}

/// Method, iteration cap and the scenario copy they apply to.
fn configure(l: &Loaded, solver: &SolverArgs) -> Result<(Method, Scenario), String> {
    let method = solver.method.or(l.scenario.method).unwrap_or(Method::Convex);
    let mut s = l.scenario.clone();
    if let Some(n) = solver.max_iters {
        s.correction.max_iters = n;
    }
    s.correction.validate().map_err(|e| format!("correction: {e}"))?;
    if !s.dims_ok(method) {
        return Err(format!("{method} needs voltage-indexed FORs with at least two slices"));
    }
    Ok((method, s))
}

fn summary(method: Method, r: &DispatchResult) -> String {
    format!(
        "{method}: {} after {} iterations; violations {} voltage / {} current before, {} / {} after; displacement {:.4} pu",
        status_name(r.status),
        r.iterations,
        r.initial_report.voltage.len(),
        r.initial_report.current.len(),
        r.final_report.voltage.len(),
        r.final_report.current.len(),
        r.displacement()
    )
}

fn status_name(s: DispatchStatus) -> &'static str {
    match s {
        DispatchStatus::Success => "success",
        DispatchStatus::ViolationsRemain => "violations remain",
        DispatchStatus::MembershipLost => "FOR membership lost",
    }
}

pub fn cmd_solve(input: &InputArgs, solver: &SolverArgs, out: &Path) -> Outcome {
    let started = Instant::now();
    let mut m = RunManifest::new("solve");
    let l = match load(input) {
        Ok(l) => l,
        Err(d) => return finish(m, Some(out), started, Outcome::fail(exit::INPUT, d)),
    };
    add_inputs(&mut m, &l.inputs);
    let (method, s) = match configure(&l, solver) {
        Ok(x) => x,
        Err(d) => return finish(m, Some(out), started, Outcome::fail(exit::INPUT, vec![d])),
    };
    m.config_hash = config_hash(&json!({
        "command": "solve",
        "method": method,
        "correction": s.correction,
        "limits": l.overrides,
    }));
    let prepared = match s.segmented(method) {
        Ok(p) => p,
        Err(e) => return finish(m, Some(out), started, Outcome::fail(exit_code(&e), vec![e.to_string()])),
    };
    info!("solving with {method}");
    let r = match s.correct(method) {
        Ok(r) => r,
        Err(e) => return finish(m, Some(out), started, Outcome::fail(exit_code(&e), vec![e.to_string()])),
    };
    record_phases(&mut m, "", &r.timings);
    if let Err(e) = artifacts::write_solution(out, &s.grid, &s.limits, &s.correction.tolerances, &prepared, &r) {
        return finish(m, Some(out), started, io_failure(out, e));
    }
    let code = if r.is_success() { exit::OK } else { exit::VIOLATIONS };
    let mut outcome = Outcome {
        code,
        stdout: vec![summary(method, &r)],
        diagnostics: Vec::new(),
    };
    if code != exit::OK {
        outcome.diagnostics.push(format!("{method}: {}", status_name(r.status)));
    }
    finish(m, Some(out), started, outcome)
}

/// Directory name of one sweep level.
pub fn level_dir(index: usize, level: f64) -> String {
    format!("level_{index:02}_{level}mvar")
}

pub fn cmd_sweep(input: &InputArgs, solver: &SolverArgs, out: &Path) -> Outcome {
    let started = Instant::now();
    let mut m = RunManifest::new("sweep");
    let l = match load(input) {
        Ok(l) => l,
        Err(d) => return finish(m, Some(out), started, Outcome::fail(exit::INPUT, d)),
    };
    add_inputs(&mut m, &l.inputs);
    let (method, s) = match configure(&l, solver) {
        Ok(x) => x,
        Err(d) => return finish(m, Some(out), started, Outcome::fail(exit::INPUT, vec![d])),
    };
    let Some(sweep) = s.sweep.clone() else {
        let d = vec!["sweep: the scenario has no sweep block".to_string()];
        return finish(m, Some(out), started, Outcome::fail(exit::INPUT, d));
    };
    m.config_hash = config_hash(&json!({
        "command": "sweep",
        "method": method,
        "correction": s.correction,
        "limits": l.overrides,
        "sweep": sweep,
    }));
    let prepared = match s.segmented(method) {
        Ok(p) => p,
        Err(e) => return finish(m, Some(out), started, Outcome::fail(exit_code(&e), vec![e.to_string()])),
    };
    let levels = match robustness_sweep(&s.grid, &s.fors, &s.limits, method, &s.correction, &sweep) {
        Ok(v) => v,
        Err(e) => return finish(m, Some(out), started, Outcome::fail(exit_code(&e), vec![e.to_string()])),
    };
    let mut stdout = Vec::new();
    let mut diagnostics = Vec::new();
    for (k, lv) in levels.iter().enumerate() {
        let dir = out.join(level_dir(k, lv.level_mvar));
        let mut grid = s.grid.clone();
        grid.buses[sweep.bus].q0 += lv.level_mvar / grid.s_base;
        let written = match &lv.result {
            Some(r) => {
                record_phases(&mut m, &format!("{}/", level_dir(k, lv.level_mvar)), &r.timings);
                stdout.push(format!("{} Mvar: {}", lv.level_mvar, summary(method, r)));
                artifacts::write_solution(&dir, &grid, &s.limits, &s.correction.tolerances, &prepared, r)
            }
            None => {
                let msg = lv.error.clone().unwrap_or_default();
                diagnostics.push(format!("{} Mvar: {msg}", lv.level_mvar));
                std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("error.txt"), msg + "\n"))
            }
        };
        if let Err(e) = written {
            return finish(m, Some(out), started, io_failure(&dir, e));
        }
    }
    if let Err(e) = artifacts::write_sweep_summary(&out.join("summary.csv"), &levels) {
        return finish(m, Some(out), started, io_failure(out, e));
    }
    let ok = levels.iter().filter(|l| l.succeeded()).count();
    stdout.push(format!("{ok} of {} levels corrected", levels.len()));
    finish(
        m,
        Some(out),
        started,
        Outcome {
            code: exit::OK,
            stdout,
            diagnostics,
        },
    )
}

pub fn cmd_synth(seed: u64, buses: usize, out: &Path) -> Outcome {
    let started = Instant::now();
    let mut m = RunManifest::new("synth");
    m.config_hash = config_hash(&json!({ "command": "synth", "seed": seed, "buses": buses }));
    let spec = ScenarioSpec {
        n_buses: buses,
        seed,
        ..Default::default()
    };
    let fx = match build(&spec) {
        Ok(f) => f,
        Err(e) => return finish(m, Some(out), started, Outcome::fail(exit::INPUT, vec![e.to_string()])),
    };
    let path = match write_scenario(&fx.scenario, out) {
        Ok(p) => p,
        Err(e) => return finish(m, Some(out), started, Outcome::fail(exit::INPUT, vec![e.to_string()])),
    };
    let outcome = Outcome {
        code: exit::OK,
        stdout: vec![format!(
            "wrote {} ({} buses, congested branch {}, FOR buses {:?})",
            path.display(),
            fx.scenario.grid.n_buses(),
            fx.congested_branch,
            fx.scenario.fors.keys().collect::<Vec<_>>()
        )],
        diagnostics: Vec::new(),
    };
    finish(m, Some(out), started, outcome)
}
