//! Deterministic test scenarios built on [`synth_grid`] and
//! [`synth_for_with`].
//!
//! The reference scenario mirrors a corrective-dispatch situation on a
//! 30-bus HV ring: one congested line, two buses below their voltage
//! band, a handful of buses offering flexibility through non-convex
//! PQ(V) regions, and a bus designated for reactive-injection sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{synth_for_with, OperatingPoint, PqvFor, SynthForParams};
use crate::grid::{synth_grid, BusKind, GridModel};
use crate::opman::{CorrectionConfig, Limits, Scenario, ScenarioConfig, SweepConfig};
use crate::powerflow::{solve_power_flow, PowerFlowOptions};

/// Knobs of a generated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub n_buses: usize,
    pub seed: u64,
    /// Loading the most loaded line is set to, relative to its new limit.
    pub overload: f64,
    /// Number of buses pushed below the lower voltage limit.
    pub low_buses: usize,
    /// Extra FOR buses besides the congestion-relief and low-voltage ones.
    pub extra_fors: Vec<usize>,
    pub n_slices: usize,
    pub for_size: SynthForParams,
    pub vmax: f64,
    /// Reactive sweep levels in Mvar.
    pub sweep_levels: Vec<f64>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_buses: 30,
            seed: 7,
            overload: 1.0 / 0.9,
            low_buses: 2,
            extra_fors: vec![5, 14],
            n_slices: 7,
            for_size: SynthForParams {
                op0: OperatingPoint { p: 0.0, q: 0.0, v: 1.0 },
                p_width: 0.6,
                q_cap: 0.5,
                q_ind: 0.4,
            },
            vmax: 1.05,
            sweep_levels: vec![-50.0, -100.0, -150.0, -200.0],
        }
    }
}

/// A generated scenario plus the facts it was built around.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub scenario: Scenario,
    pub congested_branch: usize,
    pub low_buses: Vec<usize>,
}

pub fn reference_scenario() -> Result<Fixture> {
    build(&ScenarioSpec::default())
}

/// Builds a scenario from `spec`.
///
/// The most loaded ring line gets a thermal limit just below its base
/// current. The lower voltage limit is placed between the `low_buses`-th
/// and the next-lowest bus voltage. FOR buses are the receiving end of
/// the congested line and its downstream neighbour, the low-voltage
/// buses and `extra_fors`. The sweep bus is the non-FOR transformer bus
/// farthest from the congestion.
pub fn build(spec: &ScenarioSpec) -> Result<Fixture> {
    let mut grid = synth_grid(spec.n_buses, spec.seed)?;
    let slack = grid.slack();
    let slack_v = grid.buses[slack].v0;
    let base = solve_power_flow(&grid, None, slack_v, &PowerFlowOptions::default())?;

    let ratios = base.branch_ratios(&grid);
    let congested = (0..grid.n_branches())
        .filter(|&k| grid.branches[k].from_bus != slack && grid.branches[k].to_bus != slack)
        .max_by(|&a, &b| ratios[a].total_cmp(&ratios[b]))
        .ok_or_else(|| Error::InvalidGrid("no ring line to congest".into()))?;
    let i_now = base.branch_i[2 * congested].max(base.branch_i[2 * congested + 1]);
    grid.branches[congested].i_max = round3(i_now / spec.overload);

    let mut order: Vec<usize> = grid.non_slack();
    order.sort_by(|&a, &b| base.v[a].total_cmp(&base.v[b]));
    let k = spec.low_buses.min(order.len().saturating_sub(1));
    let low: Vec<usize> = order[..k].to_vec();
    let vmin = if k == 0 {
        round3(base.v[order[0]] - 0.01)
    } else {
        round3((base.v[order[k - 1]] + base.v[order[k]]) / 2.0)
    };
    if low.iter().any(|&b| base.v[b] >= vmin) || order[k..].iter().any(|&b| base.v[b] < vmin) {
        return Err(Error::InvalidGrid(format!("no voltage gap to place vmin around bus {:?}", low)));
    }
    for b in grid.buses.iter_mut() {
        b.vmin = vmin;
        b.vmax = spec.vmax;
    }

    // Receiving end of the congested line and the next bus along the ring.
    let br = &grid.branches[congested];
    let (from, to) = (br.from_bus, br.to_bus);
    let recv = if base.delta[from] > base.delta[to] { to } else { from };
    let next = grid
        .branches
        .iter()
        .filter(|b| b.id != congested && (b.from_bus == recv || b.to_bus == recv))
        .map(|b| if b.from_bus == recv { b.to_bus } else { b.from_bus })
        .filter(|&b| b != slack && b != from && b != to)
        .min_by(|&a, &b| base.delta[a].total_cmp(&base.delta[b]));
    let mut for_buses: Vec<usize> = vec![recv];
    for_buses.extend(next);
    for_buses.extend(&low);
    for_buses.extend(spec.extra_fors.iter().copied().filter(|&b| b < grid.n_buses() && b != slack));
    for_buses.sort_unstable();
    for_buses.dedup();

    let mut fors = BTreeMap::new();
    for &b in &for_buses {
        grid.buses[b].kind = BusKind::Flexible;
        let bus = &grid.buses[b];
        let params = SynthForParams {
            op0: OperatingPoint {
                p: bus.p0,
                q: bus.q0,
                v: base.v[b],
            },
            ..spec.for_size
        };
        let f = synth_for_with(b, spec.seed, spec.n_slices, &params);
        f.validate()?;
        fors.insert(b, f);
    }
    let grid = GridModel::new(grid.s_base, grid.buses, grid.branches)?;

    // Sweep at the transformer-fed bus that is neither a FOR bus nor an
    // end of the congested line, farthest (by bus index) from it.
    let sweep_bus = grid
        .branches
        .iter()
        .filter(|b| b.from_bus == slack || b.to_bus == slack)
        .map(|b| if b.from_bus == slack { b.to_bus } else { b.from_bus })
        .filter(|b| !fors.contains_key(b) && *b != from && *b != to)
        .max_by_key(|&b| b.abs_diff(recv).min(grid.n_buses() - 1 - b.abs_diff(recv)));

    let limits = Limits::from_grid(&grid);
    Ok(Fixture {
        scenario: Scenario {
            grid,
            fors,
            limits,
            method: None,
            correction: CorrectionConfig::default(),
            sweep: sweep_bus.map(|bus| SweepConfig {
                bus,
                q_levels: spec.sweep_levels.clone(),
            }),
        },
        congested_branch: congested,
        low_buses: low,
    })
}

/// The scenario suite used for cross-method comparisons: the reference
/// scenario plus smaller and reseeded variants.
pub fn scenario_suite() -> Result<Vec<(String, Fixture)>> {
    let mut out = vec![("reference".to_string(), reference_scenario()?)];
    let variants = [
        ("ring14-s3", 14, 3, vec![]),
        ("ring20-s11", 20, 11, vec![6]),
        ("ring30-s21", 30, 21, vec![9]),
    ];
    for (name, n, seed, extra) in variants {
        let spec = ScenarioSpec {
            n_buses: n,
            seed,
            extra_fors: extra,
            ..Default::default()
        };
        match build(&spec) {
            Ok(f) => out.push((name.to_string(), f)),
            Err(e) => log::warn!("scenario {name} skipped: {e}"),
        }
    }
    Ok(out)
}

/// Writes `grid.json`, one FOR file per bus under `fors/` and
/// `scenario.json` into `dir`; returns the scenario path.
pub fn write_scenario(s: &Scenario, dir: &Path) -> Result<PathBuf> {
    let fors_dir = dir.join("fors");
    fs::create_dir_all(&fors_dir).map_err(|e| Error::io(&fors_dir, e))?;
    s.grid.save(&dir.join("grid.json"))?;
    let mut paths = BTreeMap::new();
    for (&b, f) in &s.fors {
        let rel = PathBuf::from("fors").join(format!("bus{b:03}.json"));
        f.save(&dir.join(&rel))?;
        paths.insert(b, rel);
    }
    let cfg = ScenarioConfig {
        grid: PathBuf::from("grid.json"),
        fors: paths,
        limits: Default::default(),
        method: s.method,
        correction: s.correction.clone(),
        sweep: s.sweep.clone(),
    };
    let path = dir.join("scenario.json");
    let text = serde_json::to_string_pretty(&cfg).expect("scenario serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads every FOR file in `dir`, keyed by bus id.
pub fn load_for_dir(dir: &Path) -> Result<BTreeMap<usize, PqvFor>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut out = BTreeMap::new();
    for p in entries {
        let f = crate::geometry::load_for(&p)?;
        if out.insert(f.bus_id, f).is_some() {
            return Err(Error::Model(format!("{}: second FOR for the same bus", p.display())));
        }
    }
    Ok(out)
}

fn round3(x: f64) -> f64 {
    (x * 1e3).round() / 1e3
}
