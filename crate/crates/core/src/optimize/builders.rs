//! Corrective-dispatch models around a linearization point: the 2D and
//! 3D segment MILPs and the convex half-space LP.
//!
//! All three share the decision vector `[Δp, Δq, Δδ, Δv]` over non-slack
//! buses, the sensitivity equalities tying `Δδ, Δv` to `Δp, Δq`, the
//! voltage band as bounds on `Δv`, and one current-limit row per branch
//! terminal. They differ in how each FOR bus is kept inside its region.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lp::{LpModel, Sense};
use super::milp::{Axis, MilpModel, SegmentRegistry, Sos1Group};
use crate::convexify::HalfSpaceSet;
use crate::error::{Error, Result};
use crate::geometry::{SegmentedFor, Segments};
use crate::grid::{BusKind, GridModel};
use crate::opman::Limits;
use crate::powerflow::{PowerFlowState, SensitivityBundle};

const INF: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusCost {
    pub p: f64,
    pub q: f64,
}

/// Linear prices on `|Δp|` and `|Δq|` per pu. Reactive power is free by
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    #[serde(default = "one")]
    pub p: f64,
    #[serde(default)]
    pub q: f64,
    #[serde(default)]
    pub per_bus: BTreeMap<usize, BusCost>,
}

fn one() -> f64 {
    1.0
}

impl Default for Costs {
    fn default() -> Self {
        Costs {
            p: 1.0,
            q: 0.0,
            per_bus: BTreeMap::new(),
        }
    }
}

impl Costs {
    pub fn of(&self, bus: usize) -> BusCost {
        self.per_bus.get(&bus).copied().unwrap_or(BusCost { p: self.p, q: self.q })
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(BusCost { p: self.p, q: self.q }).chain(self.per_bus.values().copied());
        for c in all {
            if !(c.p >= 0.0 && c.q >= 0.0 && c.p.is_finite() && c.q.is_finite()) {
                return Err(Error::Model(format!("costs must be finite and non-negative, got {c:?}")));
            }
        }
        Ok(())
    }
}

/// Tightening applied to the limit rows so that linearization error does
/// not leave the nonlinear solution just outside the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// pu voltage.
    pub voltage: f64,
    /// Fraction of `i_max`.
    pub current: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins { voltage: 0.0, current: 0.0 }
    }
}

/// Everything the builders need about the current operating point.
#[derive(Debug, Clone, Copy)]
pub struct LinearPoint<'a> {
    pub grid: &'a GridModel,
    pub state: &'a PowerFlowState,
    pub sens: &'a SensitivityBundle,
    pub limits: &'a Limits,
    pub costs: &'a Costs,
    /// Present absolute `(P, Q)` of every FOR bus.
    pub points: &'a BTreeMap<usize, (f64, f64)>,
    pub margins: Margins,
    /// Bound on `|Δq|` of every FOR bus in one step (pu). `Δp` is held by
    /// the region alone; it carries a cost, so the optimizer does not
    /// wander along it.
    pub q_step_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BusVars {
    pub bus: usize,
    pub dp: usize,
    pub dq: usize,
    pub ddelta: usize,
    pub dv: usize,
}

/// A built model plus the location of each bus's `Δ` variables in it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchModel<M> {
    pub model: M,
    pub vars: Vec<BusVars>,
}

/// Per-bus `(Δp, Δq, Δv)` read from a solution vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusDelta {
    pub bus: usize,
    pub dp: f64,
    pub dq: f64,
    pub dv: f64,
}

impl<M> DispatchModel<M> {
    pub fn deltas(&self, x: &[f64]) -> Vec<BusDelta> {
        self.vars
            .iter()
            .map(|b| BusDelta {
                bus: b.bus,
                dp: x[b.dp],
                dq: x[b.dq],
                dv: x[b.dv],
            })
            .collect()
    }
}

/// Shared rows. `flexible` lists the buses whose `Δp, Δq` are free.
fn network(ctx: &LinearPoint, flexible: &[usize]) -> Result<(LpModel, Vec<BusVars>)> {
    let LinearPoint {
        grid,
        state,
        sens,
        limits,
        costs,
        margins,
        ..
    } = *ctx;
    costs.validate()?;
    if !(ctx.q_step_limit > 0.0) {
        return Err(Error::Model(format!("reactive step limit {} must be positive", ctx.q_step_limit)));
    }
    let n = sens.n();
    if state.v.len() != grid.n_buses() || limits.vmin.len() != grid.n_buses() || limits.imax.len() != grid.n_branches() {
        return Err(Error::Dimension {
            expected: grid.n_buses(),
            got: state.v.len(),
        });
    }
    for b in &grid.buses {
        let has = flexible.contains(&b.id);
        match b.kind {
            BusKind::Flexible if !has => {
                return Err(Error::Model(format!("bus {} is flexible but has no FOR", b.id)));
            }
            BusKind::Slack | BusKind::Fixed if has => {
                return Err(Error::Model(format!("bus {} has a FOR but is not flexible", b.id)));
            }
            _ => {}
        }
    }

    let mut lp = LpModel::new();
    let mut vars = Vec::with_capacity(n);
    for &b in &sens.non_slack {
        let free = flexible.contains(&b);
        let (dp, dq) = if free {
            let q = ctx.q_step_limit;
            (lp.add_var(format!("dp[{b}]"), -INF, INF, 0.0), lp.add_var(format!("dq[{b}]"), -q, q, 0.0))
        } else {
            (lp.add_var(format!("dp[{b}]"), 0.0, 0.0, 0.0), lp.add_var(format!("dq[{b}]"), 0.0, 0.0, 0.0))
        };
        let ddelta = lp.add_var(format!("dd[{b}]"), -INF, INF, 0.0);
        let v = state.v[b];
        let vlo = limits.vmin[b] + margins.voltage - v;
        let vhi = limits.vmax[b] - margins.voltage - v;
        let (vlo, vhi) = if vlo <= vhi { (vlo, vhi) } else { ((vlo + vhi) / 2.0, (vlo + vhi) / 2.0) };
        let dv = lp.add_var(format!("dv[{b}]"), vlo, vhi, 0.0);
        vars.push(BusVars { bus: b, dp, dq, ddelta, dv });
    }
    let free: Vec<usize> = (0..n).filter(|&k| flexible.contains(&sens.non_slack[k])).collect();

    for k in 0..n {
        for (name, target, dp_m, dq_m) in [
            ("sens_d", vars[k].ddelta, &sens.ddelta_dp, &sens.ddelta_dq),
            ("sens_v", vars[k].dv, &sens.dv_dp, &sens.dv_dq),
        ] {
            let mut row = vec![(target, 1.0)];
            for &j in &free {
                row.push((vars[j].dp, -dp_m[(k, j)]));
                row.push((vars[j].dq, -dq_m[(k, j)]));
            }
            lp.add_constraint(format!("{name}[{}]", vars[k].bus), row, Sense::Eq, 0.0);
        }
    }

    for t in 0..sens.n_terminals() {
        let br = t / 2;
        let row: Vec<(usize, f64)> = (0..n)
            .flat_map(|k| [(vars[k].ddelta, sens.di_ddelta[(t, k)]), (vars[k].dv, sens.di_dv[(t, k)])])
            .filter(|&(_, a)| a != 0.0)
            .collect();
        let cap = limits.imax[br] * (1.0 - margins.current) - state.branch_i[t];
        let end = if t % 2 == 0 { 'a' } else { 'b' };
        lp.add_constraint(format!("imax[{br}{end}]"), row, Sense::Le, cap);
    }

    for bv in &vars {
        if !flexible.contains(&bv.bus) {
            continue;
        }
        let c = costs.of(bv.bus);
        for (price, var, tag) in [(c.p, bv.dp, "p"), (c.q, bv.dq, "q")] {
            if price > 0.0 {
                let t = lp.add_var(format!("abs_d{tag}[{}]", bv.bus), 0.0, INF, price);
                lp.add_constraint(format!("abs_d{tag}_pos[{}]", bv.bus), vec![(t, 1.0), (var, -1.0)], Sense::Ge, 0.0);
                lp.add_constraint(format!("abs_d{tag}_neg[{}]", bv.bus), vec![(t, 1.0), (var, 1.0)], Sense::Ge, 0.0);
            }
        }
    }
    Ok((lp, vars))
}

fn bus_vars(vars: &[BusVars], bus: usize) -> Result<BusVars> {
    vars.iter()
        .copied()
        .find(|b| b.bus == bus)
        .ok_or_else(|| Error::Model(format!("FOR bus {bus} is not a non-slack bus")))
}

fn point(ctx: &LinearPoint, bus: usize) -> Result<(f64, f64)> {
    ctx.points
        .get(&bus)
        .copied()
        .ok_or_else(|| Error::Model(format!("no operating point for FOR bus {bus}")))
}

/// Active-power segment selection shared by both MILPs: returns the
/// segment variables and binaries.
fn p_segments(
    lp: &mut LpModel,
    bv: BusVars,
    p_cur: f64,
    segs: &[(f64, f64)],
) -> (Vec<usize>, Vec<usize>) {
    let b = bv.bus;
    let mut dps = Vec::with_capacity(segs.len());
    let mut xs = Vec::with_capacity(segs.len());
    for (k, &(_, width)) in segs.iter().enumerate() {
        dps.push(lp.add_var(format!("dp_seg[{b},{k}]"), 0.0, width, 0.0));
        xs.push(lp.add_var(format!("x_p[{b},{k}]"), 0.0, 1.0, 0.0));
    }
    let mut row = vec![(bv.dp, 1.0)];
    for (k, &(p_min, width)) in segs.iter().enumerate() {
        row.push((dps[k], -1.0));
        row.push((xs[k], -p_min));
        lp.add_constraint(format!("p_active[{b},{k}]"), vec![(dps[k], 1.0), (xs[k], -width)], Sense::Le, 0.0);
    }
    lp.add_constraint(format!("p_link[{b}]"), row, Sense::Eq, -p_cur);
    lp.add_constraint(format!("p_one[{b}]"), xs.iter().map(|&x| (x, 1.0)).collect(), Sense::Eq, 1.0);
    (dps, xs)
}

/// Segment MILP on planar FORs: the bus picks one trapezoid and its Q
/// stays between that trapezoid's edges. Voltage does not enter the FOR.
pub fn build_milp_2d(ctx: &LinearPoint, fors: &BTreeMap<usize, SegmentedFor>) -> Result<DispatchModel<MilpModel>> {
    let buses: Vec<usize> = fors.keys().copied().collect();
    let (mut lp, vars) = network(ctx, &buses)?;
    let mut groups = Vec::new();
    let mut registry = Vec::new();
    for (&b, sf) in fors {
        let Segments::Planar { segments, .. } = &sf.segments else {
            return Err(Error::Model(format!("bus {b}: 2D model needs a planar segmentation")));
        };
        if segments.is_empty() {
            return Err(Error::Model(format!("bus {b}: no segments")));
        }
        for s in segments {
            if !(s.dp_max > 0.0) || s.upper_at(0.0) < s.lower_at(0.0) || s.upper_at(s.dp_max) < s.lower_at(s.dp_max) {
                return Err(Error::Model(format!("bus {b}: segment {} violates its invariants", s.ki)));
            }
        }
        let bv = bus_vars(&vars, b)?;
        let (p_cur, q_cur) = point(ctx, b)?;
        let bounds: Vec<(f64, f64)> = segments.iter().map(|s| (s.p_c_min, s.dp_max)).collect();
        let (dps, xs) = p_segments(&mut lp, bv, p_cur, &bounds);
        let mut up = vec![(bv.dq, 1.0)];
        let mut lo = vec![(bv.dq, 1.0)];
        for (k, s) in segments.iter().enumerate() {
            up.extend([(xs[k], -s.q_c_init_up), (dps[k], -s.m_up)]);
            lo.extend([(xs[k], -s.q_c_init_lo), (dps[k], -s.m_lo)]);
        }
        lp.add_constraint(format!("q_up[{b}]"), up, Sense::Le, -q_cur);
        lp.add_constraint(format!("q_lo[{b}]"), lo, Sense::Ge, -q_cur);
        groups.push(Sos1Group { bus: b, axis: Axis::P, vars: xs });
        registry.push(SegmentRegistry {
            bus: b,
            dp_seg: dps,
            p_constants: bounds.iter().map(|s| s.0).collect(),
            ..Default::default()
        });
    }
    let model = MilpModel { base: lp, groups, registry };
    model.validate()?;
    Ok(DispatchModel { model, vars })
}

/// Segment MILP on PQ(V) FORs: the bus picks one P segment and one
/// voltage segment; its own `Δv` is the voltage coordinate. Q faces of
/// the unselected P segments are released by the big-M constant.
pub fn build_milp_3d(ctx: &LinearPoint, fors: &BTreeMap<usize, SegmentedFor>) -> Result<DispatchModel<MilpModel>> {
    let buses: Vec<usize> = fors.keys().copied().collect();
    let (mut lp, vars) = network(ctx, &buses)?;
    let mut groups = Vec::new();
    let mut registry = Vec::new();
    for (&b, sf) in fors {
        let Segments::Volumetric { n_p, n_v, cells } = &sf.segments else {
            return Err(Error::Model(format!("bus {b}: 3D model needs a volumetric segmentation")));
        };
        let (n_p, n_v) = (*n_p, *n_v);
        if n_p == 0 || n_v == 0 || cells.len() != n_p * n_v {
            return Err(Error::Model(format!("bus {b}: segment grid is {n_p} x {n_v} with {} cells", cells.len())));
        }
        let cell = |k: usize, l: usize| &cells[l * n_p + k];
        for c in cells {
            if !(c.dv_max > 0.0 && c.dp_max > 0.0) || c.upper_at(0.0) < c.lower_at(0.0) || c.upper_at(c.dv_max) < c.lower_at(c.dv_max) {
                return Err(Error::Model(format!("bus {b}: cell ({}, {}) violates its invariants", c.ki, c.li)));
            }
        }
        let m = sf.c_max;
        let bv = bus_vars(&vars, b)?;
        let (p_cur, q_cur) = point(ctx, b)?;
        let v_cur = ctx.state.v[b];
        let p_bounds: Vec<(f64, f64)> = (0..n_p).map(|k| (cell(k, 0).p_c_min, cell(k, 0).dp_max)).collect();
        let (dps, xk) = p_segments(&mut lp, bv, p_cur, &p_bounds);

        let mut dvs = Vec::with_capacity(n_v);
        let mut xl = Vec::with_capacity(n_v);
        for l in 0..n_v {
            dvs.push(lp.add_var(format!("dv_seg[{b},{l}]"), 0.0, cell(0, l).dv_max, 0.0));
            xl.push(lp.add_var(format!("x_v[{b},{l}]"), 0.0, 1.0, 0.0));
            lp.add_constraint(
                format!("v_active[{b},{l}]"),
                vec![(dvs[l], 1.0), (xl[l], -cell(0, l).dv_max)],
                Sense::Le,
                0.0,
            );
        }
        let mut link = vec![(bv.dv, 1.0)];
        for l in 0..n_v {
            link.extend([(dvs[l], -1.0), (xl[l], -cell(0, l).v_c_min)]);
        }
        lp.add_constraint(format!("v_link[{b}]"), link, Sense::Eq, -v_cur);
        lp.add_constraint(format!("v_one[{b}]"), xl.iter().map(|&x| (x, 1.0)).collect(), Sense::Eq, 1.0);

        let mut dqs = Vec::with_capacity(n_p);
        for k in 0..n_p {
            let q = lp.add_var(format!("q_seg[{b},{k}]"), -m, m, 0.0);
            dqs.push(q);
            lp.add_constraint(format!("q_on_up[{b},{k}]"), vec![(q, 1.0), (xk[k], -m)], Sense::Le, 0.0);
            lp.add_constraint(format!("q_on_lo[{b},{k}]"), vec![(q, 1.0), (xk[k], m)], Sense::Ge, 0.0);
            let mut up = vec![(q, 1.0), (xk[k], m)];
            let mut lo = vec![(q, 1.0), (xk[k], -m)];
            for l in 0..n_v {
                let c = cell(k, l);
                up.extend([(xl[l], -c.q_c_init_up), (dvs[l], -c.m_up)]);
                lo.extend([(xl[l], -c.q_c_init_lo), (dvs[l], -c.m_lo)]);
            }
            lp.add_constraint(format!("q_face_up[{b},{k}]"), up, Sense::Le, m);
            lp.add_constraint(format!("q_face_lo[{b},{k}]"), lo, Sense::Ge, -m);
        }
        let mut agg: Vec<(usize, f64)> = dqs.iter().map(|&q| (q, 1.0)).collect();
        agg.push((bv.dq, -1.0));
        lp.add_constraint(format!("q_sum[{b}]"), agg, Sense::Eq, q_cur);

        groups.push(Sos1Group { bus: b, axis: Axis::P, vars: xk });
        groups.push(Sos1Group { bus: b, axis: Axis::V, vars: xl });
        registry.push(SegmentRegistry {
            bus: b,
            dp_seg: dps,
            dv_seg: dvs,
            dq_seg: dqs,
            p_constants: p_bounds.iter().map(|s| s.0).collect(),
            v_constants: (0..n_v).map(|l| cell(0, l).v_c_min).collect(),
        });
    }
    let model = MilpModel { base: lp, groups, registry };
    model.validate()?;
    Ok(DispatchModel { model, vars })
}

/// Convex LP: each FOR bus keeps `(p, q, v) + Δ` inside its hull rows.
pub fn build_convex_lp(ctx: &LinearPoint, hulls: &BTreeMap<usize, HalfSpaceSet>) -> Result<DispatchModel<LpModel>> {
    let buses: Vec<usize> = hulls.keys().copied().collect();
    let (mut lp, vars) = network(ctx, &buses)?;
    for (&b, hs) in hulls {
        if hs.rows.is_empty() {
            return Err(Error::Model(format!("bus {b}: empty half-space set")));
        }
        let bv = bus_vars(&vars, b)?;
        let (p, q) = point(ctx, b)?;
        let v = ctx.state.v[b];
        for (t, r) in hs.rows.iter().enumerate() {
            let rhs = r[3] - (r[0] * p + r[1] * q + r[2] * v);
            let row: Vec<(usize, f64)> = [(bv.dp, r[0]), (bv.dq, r[1]), (bv.dv, r[2])]
                .into_iter()
                .filter(|&(_, a)| a != 0.0)
                .collect();
            lp.add_constraint(format!("hull[{b},{t}]"), row, Sense::Le, rhs);
        }
    }
    lp.validate()?;
    Ok(DispatchModel { model: lp, vars })
}
