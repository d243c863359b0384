//! CSV and JSON artifacts.
//!
//! Floats are written in Rust's shortest round-trip form, so repeated runs
//! on the same inputs produce identical bytes.

use std::fs;
use std::io;
use std::path::Path;

use flexgrid::grid::GridModel;
use flexgrid::opman::{detect_with, DispatchResult, Limits, Prepared, SweepLevel, Tolerances};
use flexgrid::powerflow::PowerFlowState;
use serde::Serialize;

pub const VIOLATION: &str = "VIOLATION";
pub const OK: &str = "OK";

fn flag(bad: bool) -> &'static str {
    if bad {
        VIOLATION
    } else {
        OK
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

/// Per-bus flags from the violation report of `state`.
fn bus_flags(state: &PowerFlowState, limits: &Limits, tol: &Tolerances) -> Vec<bool> {
    let mut out = vec![false; state.v.len()];
    for v in detect_with(state, limits, tol).voltage {
        out[v.bus] = true;
    }
    out
}

fn branch_flags(state: &PowerFlowState, limits: &Limits, tol: &Tolerances) -> Vec<bool> {
    let mut out = vec![false; limits.imax.len()];
    for c in detect_with(state, limits, tol).current {
        out[c.branch] = true;
    }
    out
}

/// `buses.csv`: voltages before and, when given, after correction.
pub fn write_buses(
    path: &Path,
    limits: &Limits,
    tol: &Tolerances,
    init: &PowerFlowState,
    opt: Option<&PowerFlowState>,
) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let init_flags = bus_flags(init, limits, tol);
    match opt {
        None => {
            w.write_record(["id", "v_init", "vmin", "vmax", "status"]).map_err(csv_err)?;
            for (k, v) in init.v.iter().enumerate() {
                w.write_record([
                    k.to_string(),
                    v.to_string(),
                    limits.vmin[k].to_string(),
                    limits.vmax[k].to_string(),
                    flag(init_flags[k]).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        Some(opt) => {
            let opt_flags = bus_flags(opt, limits, tol);
            w.write_record(["id", "v_init", "v_opt", "vmin", "vmax", "status_init", "status_opt"])
                .map_err(csv_err)?;
            for k in 0..init.v.len() {
                w.write_record([
                    k.to_string(),
                    init.v[k].to_string(),
                    opt.v[k].to_string(),
                    limits.vmin[k].to_string(),
                    limits.vmax[k].to_string(),
                    flag(init_flags[k]).to_string(),
                    flag(opt_flags[k]).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()
}

/// `branches.csv`: loading ratios before and, when given, after correction.
pub fn write_branches(
    path: &Path,
    grid: &GridModel,
    limits: &Limits,
    tol: &Tolerances,
    init: &PowerFlowState,
    opt: Option<&PowerFlowState>,
) -> io::Result<()> {
    let ratios = |s: &PowerFlowState| -> Vec<f64> {
        (0..limits.imax.len())
            .map(|k| s.branch_i[2 * k].max(s.branch_i[2 * k + 1]) / limits.imax[k])
            .collect()
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let (r0, f0) = (ratios(init), branch_flags(init, limits, tol));
    let mut header = vec!["id", "from_bus", "to_bus", "i_max", "ratio_init"];
    let opt = opt.map(|s| (ratios(s), branch_flags(s, limits, tol)));
    if opt.is_some() {
        header.extend(["ratio_opt", "status_init", "status_opt"]);
    } else {
        header.push("status");
    }
    w.write_record(&header).map_err(csv_err)?;
    for (k, br) in grid.branches.iter().enumerate() {
        let mut row = vec![
            k.to_string(),
            br.from_bus.to_string(),
            br.to_bus.to_string(),
            limits.imax[k].to_string(),
            r0[k].to_string(),
        ];
        match &opt {
            Some((r1, f1)) => row.extend([r1[k].to_string(), flag(f0[k]).to_string(), flag(f1[k]).to_string()]),
            None => row.push(flag(f0[k]).to_string()),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// `dispatch.csv`: applied set-point changes and membership per FOR bus.
pub fn write_dispatch(path: &Path, grid: &GridModel, r: &DispatchResult) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["bus", "p0", "q0", "dp", "dq", "p", "q", "v_init", "v_opt", "member"])
        .map_err(csv_err)?;
    for (d, m) in r.deltas.iter().zip(&r.membership) {
        let b = &grid.buses[d.bus];
        w.write_record([
            d.bus.to_string(),
            b.p0.to_string(),
            b.q0.to_string(),
            d.dp.to_string(),
            d.dq.to_string(),
            m.p.to_string(),
            m.q.to_string(),
            r.initial_state.v[d.bus].to_string(),
            m.v.to_string(),
            m.member.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// `iterations.csv`: one row per optimization step.
pub fn write_iterations(path: &Path, r: &DispatchResult) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "iteration",
        "objective",
        "accepted",
        "q_step",
        "lp_iterations",
        "nodes",
        "voltage_violations",
        "current_violations",
        "max_ratio",
    ])
    .map_err(csv_err)?;
    for h in &r.history {
        w.write_record([
            h.iteration.to_string(),
            h.objective.to_string(),
            h.accepted.to_string(),
            h.q_step.map(|q| q.to_string()).unwrap_or_default(),
            h.lp_iterations.to_string(),
            h.nodes.to_string(),
            h.voltage_violations.to_string(),
            h.current_violations.to_string(),
            h.max_ratio.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

/// Segment or hull dumps under `dir/fors/`.
pub fn write_regions(dir: &Path, prepared: &Prepared) -> io::Result<()> {
    let dir = dir.join("fors");
    fs::create_dir_all(&dir)?;
    match prepared {
        Prepared::Segments(s) => {
            for (b, seg) in s {
                fs::write(dir.join(format!("bus{b:03}_segments.json")), seg.to_json() + "\n")?;
            }
        }
        Prepared::Hulls(h) => {
            for (b, hs) in h {
                fs::write(dir.join(format!("bus{b:03}_hull.json")), hs.hull.to_json() + "\n")?;
                fs::write(dir.join(format!("bus{b:03}_halfspaces.json")), hs.half_spaces.to_json() + "\n")?;
            }
        }
    }
    Ok(())
}

/// Everything `solve` writes for one dispatch result, apart from the manifest.
pub fn write_solution(
    dir: &Path,
    grid: &GridModel,
    limits: &Limits,
    tol: &Tolerances,
    prepared: &Prepared,
    r: &DispatchResult,
) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), r.to_json() + "\n")?;
    write_buses(&dir.join("buses.csv"), limits, tol, &r.initial_state, Some(&r.final_state))?;
    write_branches(&dir.join("branches.csv"), grid, limits, tol, &r.initial_state, Some(&r.final_state))?;
    write_dispatch(&dir.join("dispatch.csv"), grid, r)?;
    write_iterations(&dir.join("iterations.csv"), r)?;
    write_regions(dir, prepared)
}

/// `summary.csv` of a sweep.
pub fn write_sweep_summary(path: &Path, levels: &[SweepLevel]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["level_mvar", "iterations", "success", "displacement", "pre_dv", "status"])
        .map_err(csv_err)?;
    for l in levels {
        let (iters, disp, status) = match (&l.result, &l.error) {
            (Some(r), _) => (
                r.iterations.to_string(),
                r.displacement().to_string(),
                serde_json::to_value(r.status)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            ),
            (None, e) => (String::new(), String::new(), format!("error: {}", e.as_deref().unwrap_or("unknown"))),
        };
        w.write_record([
            l.level_mvar.to_string(),
            iters,
            l.succeeded().to_string(),
            disp,
            l.pre_dv.map(|v| v.to_string()).unwrap_or_default(),
            status,
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}
