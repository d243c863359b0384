//! Corrective operational management: detect limit violations, dispatch
//! FOR flexibility through one of the three formulations, verify with the
//! nonlinear power flow and iterate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::convexify::{half_spaces, hull_of_for, HalfSpaceSet, TriangulatedHull};
use crate::error::{Error, Result};
use crate::geometry::{load_for, segment_2d_nominal, segment_3d, PqvFor, SegmentedFor};
use crate::grid::{load_grid, GridModel};
use crate::optimize::{
    build_convex_lp, build_milp_2d, build_milp_3d, solve_lp, solve_milp_with, Axis, BusDelta, Costs, DispatchModel,
    LinearPoint, LpModel, Margins, MilpModel, MilpOptions, Status, DEFAULT_NODE_LIMIT,
};
use crate::powerflow::{sensitivities, solve_power_flow, Injections, PowerFlowOptions, PowerFlowState};

/// Tolerance on FOR membership of applied operating points (pu).
pub const MEMBERSHIP_TOL: f64 = 1e-6;

/// Reactive trust radius (pu) past which a widened step is left unbounded.
const MAX_Q_STEP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub vmin: Vec<f64>,
    pub vmax: Vec<f64>,
    pub imax: Vec<f64>,
}

/// Per-element replacements of the grid's own limits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitOverrides {
    #[serde(default)]
    pub vmin: BTreeMap<usize, f64>,
    #[serde(default)]
    pub vmax: BTreeMap<usize, f64>,
    #[serde(default)]
    pub imax: BTreeMap<usize, f64>,
}

impl Limits {
    pub fn from_grid(grid: &GridModel) -> Self {
        Limits {
            vmin: grid.buses.iter().map(|b| b.vmin).collect(),
            vmax: grid.buses.iter().map(|b| b.vmax).collect(),
            imax: grid.branches.iter().map(|b| b.i_max).collect(),
        }
    }

    pub fn with_overrides(grid: &GridModel, o: &LimitOverrides) -> Result<Self> {
        let mut l = Self::from_grid(grid);
        for (map, target, what) in [(&o.vmin, &mut l.vmin, "bus"), (&o.vmax, &mut l.vmax, "bus"), (&o.imax, &mut l.imax, "branch")] {
            for (&k, &v) in map {
                *target
                    .get_mut(k)
                    .ok_or_else(|| Error::Model(format!("limit override for unknown {what} {k}")))? = v;
            }
        }
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, (lo, hi)) in self.vmin.iter().zip(&self.vmax).enumerate() {
            if !(lo < hi) {
                return Err(Error::Model(format!("bus {k}: vmin {lo} must be below vmax {hi}")));
            }
        }
        if let Some(k) = self.imax.iter().position(|&i| !(i > 0.0)) {
            return Err(Error::Model(format!("branch {k}: imax must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// pu voltage beyond the band before a breach is reported.
    pub voltage: f64,
    /// Loading ratio above 1 before an overload is reported.
    pub current: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            voltage: 1e-4,
            current: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoltageViolation {
    pub bus: usize,
    pub v: f64,
    pub bound: f64,
    /// Distance beyond the bound (positive).
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurrentViolation {
    pub branch: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViolationReport {
    pub voltage: Vec<VoltageViolation>,
    pub current: Vec<CurrentViolation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty() && self.current.is_empty()
    }
}

pub fn detect(state: &PowerFlowState, limits: &Limits) -> ViolationReport {
    detect_with(state, limits, &Tolerances::default())
}

/// Lists every breach, most severe first.
pub fn detect_with(state: &PowerFlowState, limits: &Limits, tol: &Tolerances) -> ViolationReport {
    let mut voltage: Vec<VoltageViolation> = state
        .v
        .iter()
        .enumerate()
        .filter_map(|(bus, &v)| {
            if v > limits.vmax[bus] + tol.voltage {
                Some(VoltageViolation {
                    bus,
                    v,
                    bound: limits.vmax[bus],
                    margin: v - limits.vmax[bus],
                })
            } else if v < limits.vmin[bus] - tol.voltage {
                Some(VoltageViolation {
                    bus,
                    v,
                    bound: limits.vmin[bus],
                    margin: limits.vmin[bus] - v,
                })
            } else {
                None
            }
        })
        .collect();
    voltage.sort_by(|a, b| b.margin.total_cmp(&a.margin).then(a.bus.cmp(&b.bus)));
    let mut current: Vec<CurrentViolation> = limits
        .imax
        .iter()
        .enumerate()
        .map(|(k, &imax)| CurrentViolation {
            branch: k,
            ratio: state.branch_i[2 * k].max(state.branch_i[2 * k + 1]) / imax,
        })
        .filter(|c| c.ratio > 1.0 + tol.current)
        .collect();
    current.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then(a.branch.cmp(&b.branch)));
    ViolationReport { voltage, current }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Milp2d,
    Milp3d,
    Convex,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Milp2d, Method::Milp3d, Method::Convex];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Milp2d => "milp2d",
            Method::Milp3d => "milp3d",
            Method::Convex => "convex",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Model(format!("unknown method {s:?} (expected milp2d, milp3d or convex)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    pub max_iters: usize,
    pub tolerances: Tolerances,
    pub margins: Margins,
    pub costs: Costs,
    /// P segments per FOR (doubled in 3D).
    pub k_max: usize,
    /// Voltage segments per FOR.
    pub l_max: usize,
    /// Scale of each hull about its centroid before use (1 keeps the hull).
    pub hull_scale: f64,
    /// Shrink factor applied to a hull after a step left its FOR.
    pub repair_shrink: f64,
    pub node_limit: usize,
    /// Trust region on reactive power: largest `|Δq|` per bus and
    /// iteration (pu). Q is free of cost, so without it each step swings
    /// Q across the region and the linearized currents lose accuracy.
    pub q_step_limit: f64,
    /// Slack voltage; the slack bus's `v0` when absent.
    pub slack_v: Option<f64>,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            max_iters: 5,
            tolerances: Tolerances::default(),
            margins: Margins {
                voltage: 5e-4,
                current: 5e-3,
            },
            costs: Costs::default(),
            k_max: 3,
            l_max: 3,
            hull_scale: 1.0,
            repair_shrink: 0.8,
            node_limit: DEFAULT_NODE_LIMIT,
            q_step_limit: 0.05,
            slack_v: None,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.costs.validate()?;
        if self.k_max == 0 || self.l_max == 0 {
            return Err(Error::Model("k_max and l_max must be at least 1".into()));
        }
        if !(self.hull_scale > 0.0 && self.hull_scale <= 1.0) {
            return Err(Error::Model(format!("hull_scale {} must lie in (0, 1]", self.hull_scale)));
        }
        if !(self.repair_shrink > 0.0 && self.repair_shrink < 1.0) {
            return Err(Error::Model(format!("repair_shrink {} must lie in (0, 1)", self.repair_shrink)));
        }
        if !(self.q_step_limit > 0.0) {
            return Err(Error::Model(format!("q_step_limit {} must be positive", self.q_step_limit)));
        }
        if self.max_iters == 0 {
            return Err(Error::Model("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// FOR representation consumed by a method.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Prepared {
    Segments(BTreeMap<usize, SegmentedFor>),
    Hulls(BTreeMap<usize, HullSet>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HullSet {
    pub hull: TriangulatedHull,
    pub half_spaces: HalfSpaceSet,
}

pub fn prepare(fors: &BTreeMap<usize, PqvFor>, method: Method, config: &CorrectionConfig) -> Result<Prepared> {
    Ok(match method {
        Method::Milp2d => Prepared::Segments(
            fors.iter()
                .map(|(&b, f)| Ok((b, segment_2d_nominal(f, config.k_max)?)))
                .collect::<Result<_>>()?,
        ),
        Method::Milp3d => Prepared::Segments(
            fors.iter()
                .map(|(&b, f)| Ok((b, segment_3d(f, config.k_max, config.l_max)?)))
                .collect::<Result<_>>()?,
        ),
        Method::Convex => Prepared::Hulls(
            fors.iter()
                .map(|(&b, f)| {
                    let hull = hull_of_for(f)?;
                    let mut hs = half_spaces(&hull, b)?;
                    if config.hull_scale != 1.0 {
                        hs = hs.scaled(hull.centroid(), config.hull_scale);
                    }
                    Ok((b, HullSet { hull, half_spaces: hs }))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispatchStatus {
    Success,
    ViolationsRemain,
    MembershipLost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Membership {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    pub v: f64,
    pub member: bool,
}

/// Segments chosen by the last MILP solve at one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Selection {
    pub bus: usize,
    pub p_segment: usize,
    pub sum_x_p: f64,
    pub v_segment: Option<usize>,
    pub sum_x_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub accepted: bool,
    /// Reactive trust radius the step was solved with; `None` once widened
    /// past every bound.
    pub q_step: Option<f64>,
    pub lp_iterations: usize,
    pub nodes: usize,
    /// Buses whose hull was shrunk after this step.
    pub shrunk: Vec<usize>,
    /// Breaches left under the nonlinear power flow after this step.
    pub voltage_violations: usize,
    pub current_violations: usize,
    /// Largest branch loading after this step.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub prepare: Duration,
    pub power_flow: Duration,
    pub sensitivities: Duration,
    pub build: Duration,
    pub solve: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchResult {
    pub method: Method,
    pub status: DispatchStatus,
    pub iterations: usize,
    /// Applied `Δp, Δq` per FOR bus; `dv` is the resulting voltage change.
    pub deltas: Vec<BusDelta>,
    pub initial_state: PowerFlowState,
    pub final_state: PowerFlowState,
    pub initial_report: ViolationReport,
    pub final_report: ViolationReport,
    pub membership: Vec<Membership>,
    pub selections: Vec<Selection>,
    pub history: Vec<IterationRecord>,
    /// Kept out of the serialized report so that it stays reproducible.
    #[serde(skip)]
    pub timings: PhaseTimes,
}

impl DispatchResult {
    pub fn is_success(&self) -> bool {
        self.status == DispatchStatus::Success
    }

    /// Objective of the first optimization, taken at the initial state.
    pub fn first_objective(&self) -> Option<f64> {
        self.history.first().map(|h| h.objective)
    }

    /// Euclidean norm of all applied `(Δp, Δq)`.
    pub fn displacement(&self) -> f64 {
        self.deltas.iter().map(|d| d.dp * d.dp + d.dq * d.dq).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn is_member(method: Method, fr: &PqvFor, p: f64, q: f64, v: f64) -> bool {
    let v = match method {
        Method::Milp2d => fr.slices[fr.nominal_slice()].v_slack,
        _ => v,
    };
    fr.contains_tol(p, q, v, MEMBERSHIP_TOL).unwrap_or(false)
}

enum Built {
    Lp(DispatchModel<LpModel>),
    Milp(DispatchModel<MilpModel>),
}

/// Names the constraint family whose removal restores feasibility.
fn diagnose(lp: &LpModel) -> String {
    let families: [(&str, fn(&str) -> bool); 3] = [
        ("current limits", |n| n.starts_with("imax")),
        ("FOR region", |n| !(n.starts_with("imax") || n.starts_with("sens") || n.starts_with("abs"))),
        ("voltage band", |_| false),
    ];
    for (name, drop) in families {
        let mut relaxed = lp.clone();
        relaxed.constraints.retain(|c| !drop(&c.name));
        if name == "voltage band" {
            for v in relaxed.variables.iter_mut().filter(|v| v.name.starts_with("dv[")) {
                v.lo = f64::NEG_INFINITY;
                v.hi = f64::INFINITY;
            }
        }
        if matches!(solve_lp(&relaxed), Ok(s) if s.is_optimal()) {
            return name.to_string();
        }
    }
    "combined limits".to_string()
}

fn selections(model: &MilpModel, x: &[f64]) -> Vec<Selection> {
    let mut out: BTreeMap<usize, Selection> = BTreeMap::new();
    for g in &model.groups {
        let sum: f64 = g.vars.iter().map(|&j| x[j]).sum();
        let pick = (0..g.vars.len()).max_by(|&a, &b| x[g.vars[a]].total_cmp(&x[g.vars[b]])).unwrap_or(0);
        let e = out.entry(g.bus).or_insert(Selection {
            bus: g.bus,
            p_segment: 0,
            sum_x_p: 0.0,
            v_segment: None,
            sum_x_v: None,
        });
        match g.axis {
            Axis::P => {
                e.p_segment = pick;
                e.sum_x_p = sum;
            }
            Axis::V => {
                e.v_segment = Some(pick);
                e.sum_x_v = Some(sum);
            }
        }
    }
    out.into_values().collect()
}

pub fn correct(
    grid: &GridModel,
    fors: &BTreeMap<usize, PqvFor>,
    limits: &Limits,
    method: Method,
    config: &CorrectionConfig,
) -> Result<DispatchResult> {
    let t_total = Instant::now();
    config.validate()?;
    limits.validate()?;
    let n = grid.n_buses();
    if limits.vmin.len() != n || limits.vmax.len() != n || limits.imax.len() != grid.n_branches() {
        return Err(Error::Dimension {
            expected: n,
            got: limits.vmin.len(),
        });
    }
    for (&b, f) in fors {
        if f.bus_id != b || b >= n {
            return Err(Error::Model(format!("FOR keyed as bus {b} describes bus {}", f.bus_id)));
        }
        let bus = &grid.buses[b];
        if (f.op0.p - bus.p0).abs() > 1e-6 || (f.op0.q - bus.q0).abs() > 1e-6 {
            warn!("bus {b}: FOR op0 ({}, {}) differs from the grid injection ({}, {})", f.op0.p, f.op0.q, bus.p0, bus.q0);
        }
    }
    let mut times = PhaseTimes::default();
    let t = Instant::now();
    let prepared = prepare(fors, method, config)?;
    times.prepare = t.elapsed();
    let mut hulls: BTreeMap<usize, HalfSpaceSet> = match &prepared {
        Prepared::Hulls(h) => h.iter().map(|(&b, h)| (b, h.half_spaces.clone())).collect(),
        Prepared::Segments(_) => BTreeMap::new(),
    };

    let slack_v = config.slack_v.unwrap_or(grid.buses[grid.slack()].v0);
    let pf_opts = PowerFlowOptions::default();
    let run_pf = |inj: &Injections, times: &mut PhaseTimes| {
        let t = Instant::now();
        let s = solve_power_flow(grid, Some(inj), slack_v, &pf_opts);
        times.power_flow += t.elapsed();
        s
    };

    let mut applied = Injections::zeros(n);
    let initial = run_pf(&applied, &mut times)?;
    let initial_report = detect_with(&initial, limits, &config.tolerances);
    info!(
        "{method}: initial state has {} voltage and {} current violations",
        initial_report.voltage.len(),
        initial_report.current.len()
    );
    let point_of = |applied: &Injections, b: usize| (fors[&b].op0.p + applied.dp[b], fors[&b].op0.q + applied.dq[b]);
    let all_members = |applied: &Injections, state: &PowerFlowState| {
        fors.iter().all(|(&b, f)| {
            let (p, q) = point_of(applied, b);
            is_member(method, f, p, q, state.v[b])
        })
    };

    let mut state = initial.clone();
    let mut report = initial_report.clone();
    let mut history = Vec::new();
    let mut last_selection = Vec::new();
    let mut iterations = 0;
    while !(report.is_empty() && all_members(&applied, &state)) && iterations < config.max_iters {
        iterations += 1;
        let t = Instant::now();
        let sens = sensitivities(grid, &state)?;
        times.sensitivities += t.elapsed();

        let points: BTreeMap<usize, (f64, f64)> = fors.keys().map(|&b| (b, point_of(&applied, b))).collect();
        let opts = MilpOptions {
            node_limit: config.node_limit,
            ..Default::default()
        };
        // The reactive trust region only steadies the iteration. When it
        // alone makes the step infeasible, widen it until it no longer binds.
        let mut radius = config.q_step_limit;
        let (built, sol) = loop {
            let ctx = LinearPoint {
                grid,
                state: &state,
                sens: &sens,
                limits,
                costs: &config.costs,
                points: &points,
                margins: config.margins,
                q_step_limit: radius,
            };
            let t = Instant::now();
            let built = match (&prepared, method) {
                (Prepared::Segments(s), Method::Milp2d) => Built::Milp(build_milp_2d(&ctx, s)?),
                (Prepared::Segments(s), _) => Built::Milp(build_milp_3d(&ctx, s)?),
                (Prepared::Hulls(_), _) => Built::Lp(build_convex_lp(&ctx, &hulls)?),
            };
            times.build += t.elapsed();
            let t = Instant::now();
            let sol = match &built {
                Built::Lp(m) => solve_lp(&m.model)?,
                Built::Milp(m) => solve_milp_with(&m.model, &opts)?,
            };
            times.solve += t.elapsed();
            if sol.status != Status::Infeasible || radius.is_infinite() {
                break (built, sol);
            }
            radius = if radius >= MAX_Q_STEP { f64::INFINITY } else { radius * 2.0 };
            debug!("{method} iteration {iterations}: infeasible, reactive step widened to {radius}");
        };
        let (vars, base): (_, &LpModel) = match &built {
            Built::Lp(m) => (&m.vars, &m.model),
            Built::Milp(m) => (&m.vars, &m.model.base),
        };
        debug!("{method} iteration {iterations}: status {:?}, objective {}", sol.status, sol.objective);
        match sol.status {
            Status::Optimal => {}
            Status::NodeLimit if !sol.x.is_empty() => warn!("{method}: node limit reached, gap {:.3e}", sol.gap),
            Status::NodeLimit => {
                return Err(Error::NoIncumbent {
                    method: method.to_string(),
                })
            }
            Status::Infeasible => {
                return Err(Error::Infeasible {
                    method: method.to_string(),
                    family: diagnose(base),
                })
            }
            other => return Err(Error::Numerical(format!("{method} solve ended with status {other:?}"))),
        }
        if let Built::Milp(m) = &built {
            last_selection = selections(&m.model, &sol.x);
        }
        let deltas = DispatchModel { model: (), vars: vars.clone() }.deltas(&sol.x);

        let mut next = applied.clone();
        for d in &deltas {
            if fors.contains_key(&d.bus) {
                next.dp[d.bus] += d.dp;
                next.dq[d.bus] += d.dq;
            }
        }
        let next_state = run_pf(&next, &mut times)?;
        let mut record = IterationRecord {
            iteration: iterations,
            objective: sol.objective,
            accepted: true,
            q_step: radius.is_finite().then_some(radius),
            lp_iterations: sol.iterations,
            nodes: sol.nodes,
            shrunk: Vec::new(),
            voltage_violations: 0,
            current_violations: 0,
            max_ratio: next_state.branch_ratios(grid).into_iter().fold(0.0, f64::max),
        };
        {
            let r = detect_with(&next_state, limits, &config.tolerances);
            record.voltage_violations = r.voltage.len();
            record.current_violations = r.current.len();
        }
        if method == Method::Convex {
            for (&b, f) in fors {
                let (p, q) = point_of(&next, b);
                if !is_member(method, f, p, q, next_state.v[b]) {
                    let (pc, qc) = point_of(&applied, b);
                    let hs = &hulls[&b];
                    hulls.insert(b, hs.scaled([pc, qc, state.v[b]], config.repair_shrink));
                    record.shrunk.push(b);
                }
            }
            record.accepted = record.shrunk.is_empty() || !all_members(&applied, &state);
        }
        if record.accepted {
            applied = next;
            state = next_state;
            report = detect_with(&state, limits, &config.tolerances);
        } else {
            info!("{method}: step left the FOR at buses {:?}; shrinking their hulls", record.shrunk);
        }
        history.push(record);
    }

    let membership: Vec<Membership> = fors
        .iter()
        .map(|(&b, f)| {
            let (p, q) = point_of(&applied, b);
            let v = state.v[b];
            Membership {
                bus: b,
                p,
                q,
                v,
                member: is_member(method, f, p, q, v),
            }
        })
        .collect();
    let status = if !report.is_empty() {
        DispatchStatus::ViolationsRemain
    } else if membership.iter().any(|m| !m.member) {
        DispatchStatus::MembershipLost
    } else {
        DispatchStatus::Success
    };
    let deltas = fors
        .keys()
        .map(|&b| BusDelta {
            bus: b,
            dp: applied.dp[b],
            dq: applied.dq[b],
            dv: state.v[b] - initial.v[b],
        })
        .collect();
    times.total = t_total.elapsed();
    info!("{method}: {status:?} after {iterations} iterations");
    Ok(DispatchResult {
        method,
        status,
        iterations,
        deltas,
        initial_state: initial,
        final_state: state,
        initial_report,
        final_report: report,
        membership,
        selections: last_selection,
        history,
        timings: times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub bus: usize,
    /// Reactive injections added at `bus`, in Mvar.
    pub q_levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepLevel {
    pub level_mvar: f64,
    /// Voltage change at the injection bus before any correction.
    pub pre_dv: Option<f64>,
    pub result: Option<DispatchResult>,
    pub error: Option<String>,
}

impl SweepLevel {
    pub fn succeeded(&self) -> bool {
        self.result.as_ref().is_some_and(DispatchResult::is_success)
    }
}

/// Re-runs [`correct`] with extra reactive power injected at one bus,
/// once per level. Failures are recorded per level.
pub fn robustness_sweep(
    grid: &GridModel,
    fors: &BTreeMap<usize, PqvFor>,
    limits: &Limits,
    method: Method,
    config: &CorrectionConfig,
    sweep: &SweepConfig,
) -> Result<Vec<SweepLevel>> {
    if sweep.bus >= grid.n_buses() {
        return Err(Error::Model(format!("sweep bus {} does not exist", sweep.bus)));
    }
    if let Some(l) = sweep.q_levels.iter().find(|l| !l.is_finite()) {
        return Err(Error::Model(format!("sweep level {l} is not finite")));
    }
    let slack_v = config.slack_v.unwrap_or(grid.buses[grid.slack()].v0);
    let base_v = solve_power_flow(grid, None, slack_v, &PowerFlowOptions::default())
        .ok()
        .map(|s| s.v[sweep.bus]);
    Ok(sweep
        .q_levels
        .iter()
        .map(|&level| {
            let mut g = grid.clone();
            g.buses[sweep.bus].q0 += level / grid.s_base;
            let pre_dv = solve_power_flow(&g, None, slack_v, &PowerFlowOptions::default())
                .ok()
                .zip(base_v)
                .map(|(s, v0)| s.v[sweep.bus] - v0);
            match correct(&g, fors, limits, method, config) {
                Ok(r) => SweepLevel {
                    level_mvar: level,
                    pre_dv,
                    result: Some(r),
                    error: None,
                },
                Err(e) => {
                    warn!("sweep level {level} Mvar failed: {e}");
                    SweepLevel {
                        level_mvar: level,
                        pre_dv,
                        result: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

/// Scenario file: paths are relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub grid: PathBuf,
    /// FOR file per bus id.
    #[serde(default)]
    pub fors: BTreeMap<usize, PathBuf>,
    #[serde(default)]
    pub limits: LimitOverrides,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub correction: CorrectionConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

/// A scenario with every referenced file loaded and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: GridModel,
    pub fors: BTreeMap<usize, PqvFor>,
    pub limits: Limits,
    pub method: Option<Method>,
    pub correction: CorrectionConfig,
    pub sweep: Option<SweepConfig>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn resolve(&self, base: &Path) -> Result<Scenario> {
        let grid = load_grid(&base.join(&self.grid))?;
        let fors = self
            .fors
            .iter()
            .map(|(&b, p)| {
                let f = load_for(&base.join(p))?;
                if f.bus_id != b {
                    return Err(Error::InvalidFor {
                        bus: f.bus_id,
                        message: format!("file {} is listed for bus {b}", p.display()),
                    });
                }
                Ok((b, f))
            })
            .collect::<Result<_>>()?;
        let limits = Limits::with_overrides(&grid, &self.limits)?;
        self.correction.validate()?;
        Ok(Scenario {
            grid,
            fors,
            limits,
            method: self.method,
            correction: self.correction.clone(),
            sweep: self.sweep.clone(),
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioConfig::load(path)?.resolve(base)
}

impl Scenario {
    pub fn correct(&self, method: Method) -> Result<DispatchResult> {
        correct(&self.grid, &self.fors, &self.limits, method, &self.correction)
    }

    pub fn segmented(&self, method: Method) -> Result<Prepared> {
        prepare(&self.fors, method, &self.correction)
    }

    pub fn dims_ok(&self, method: Method) -> bool {
        method != Method::Milp3d || self.fors.values().all(|f| f.dims() == 3)
    }
}

impl Prepared {
    pub fn segments(&self) -> Option<&BTreeMap<usize, SegmentedFor>> {
        match self {
            Prepared::Segments(s) => Some(s),
            Prepared::Hulls(_) => None,
        }
    }
}
