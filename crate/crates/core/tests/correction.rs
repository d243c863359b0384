//! Corrective dispatch on generated scenarios, judged by an independent
//! nonlinear power flow and the FOR membership test.

use std::collections::BTreeMap;

use flexgrid::convexify::HalfSpaceSet;
use flexgrid::fixtures::{reference_scenario, scenario_suite};
use flexgrid::opman::{correct, detect, prepare, robustness_sweep, DispatchResult, Method, Prepared, Scenario};
use flexgrid::optimize::{build_convex_lp, solve_lp, LinearPoint};
use flexgrid::powerflow::{sensitivities, solve_power_flow, Injections, PowerFlowOptions};

const V_TOL: f64 = 1e-4;
const I_TOL: f64 = 1e-3;

/// Re-applies the reported deltas and checks limits and membership from
/// scratch instead of trusting the result's own report.
fn verify(s: &Scenario, r: &DispatchResult, method: Method) {
    let g = &s.grid;
    let mut inj = Injections::zeros(g.n_buses());
    for d in &r.deltas {
        inj.dp[d.bus] = d.dp;
        inj.dq[d.bus] = d.dq;
    }
    let st = solve_power_flow(g, Some(&inj), g.buses[g.slack()].v0, &PowerFlowOptions::default()).unwrap();
    for b in 0..g.n_buses() {
        assert!(st.v[b] >= s.limits.vmin[b] - V_TOL && st.v[b] <= s.limits.vmax[b] + V_TOL, "{method}: bus {b} at {}", st.v[b]);
    }
    for (k, ratio) in st.branch_ratios(g).iter().enumerate() {
        assert!(*ratio <= 1.0 + I_TOL, "{method}: branch {k} loaded {ratio}");
    }
    for d in &r.deltas {
        let f = &s.fors[&d.bus];
        let v = match method {
            Method::Milp2d => f.slices[f.nominal_slice()].v_slack,
            _ => st.v[d.bus],
        };
        assert!(f.contains_tol(f.op0.p + d.dp, f.op0.q + d.dq, v, 1e-6).unwrap(), "{method}: bus {} left its FOR", d.bus);
    }
}

#[test]
fn reference_scenario_is_corrected_by_every_method() {
    let fx = reference_scenario().unwrap();
    let s = &fx.scenario;
    let before = detect(&solve_power_flow(&s.grid, None, s.grid.buses[s.grid.slack()].v0, &PowerFlowOptions::default()).unwrap(), &s.limits);
    assert!(before.voltage.len() >= 2 && !before.current.is_empty());
    for method in [Method::Convex, Method::Milp2d, Method::Milp3d] {
        let r = s.correct(method).unwrap();
        assert!(r.is_success(), "{method}: {:?}", r.status);
        assert!(r.final_report.is_empty());
        assert!(r.membership.iter().all(|m| m.member));
        assert!(r.displacement() > 0.0);
        verify(s, &r, method);
        if method != Method::Convex {
            for sel in &r.selections {
                assert!((sel.sum_x_p - 1.0).abs() < 1e-9);
                if method == Method::Milp3d {
                    assert!((sel.sum_x_v.unwrap() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn nothing_to_correct_means_no_change() {
    let fx = reference_scenario().unwrap();
    let mut s = fx.scenario.clone();
    s.limits.vmin.iter_mut().for_each(|v| *v = 0.9);
    s.limits.imax.iter_mut().for_each(|i| *i *= 10.0);
    for method in [Method::Convex, Method::Milp3d] {
        let r = s.correct(method).unwrap();
        assert!(r.is_success());
        assert_eq!(r.iterations, 0);
        assert!(r.deltas.iter().all(|d| d.dp == 0.0 && d.dq == 0.0));
        assert_eq!(r.initial_state, r.final_state);
    }
}

#[test]
fn reports_are_reproducible() {
    let s = reference_scenario().unwrap().scenario;
    let a = s.correct(Method::Convex).unwrap().to_json();
    let b = s.correct(Method::Convex).unwrap().to_json();
    assert_eq!(a, b);
}

/// The hull contains the FOR, so at the same linearization point the LP
/// can do at least as well as the 3D MILP.
#[test]
fn convex_relaxation_never_costs_more() {
    let mut compared = 0;
    for (name, fx) in scenario_suite().unwrap() {
        let s = &fx.scenario;
        let lp = correct(&s.grid, &s.fors, &s.limits, Method::Convex, &s.correction).unwrap();
        let milp = correct(&s.grid, &s.fors, &s.limits, Method::Milp3d, &s.correction).unwrap();
        let (Some(a), Some(b)) = (lp.first_objective(), milp.first_objective()) else {
            continue;
        };
        assert!(a <= b + 1e-9, "{name}: convex {a} > milp3d {b}");
        compared += 1;
    }
    assert!(compared >= 3, "only {compared} scenarios compared");
}

#[test]
fn sweep_levels_are_all_corrected() {
    let s = reference_scenario().unwrap().scenario;
    let sweep = s.sweep.clone().unwrap();
    assert_eq!(sweep.q_levels, vec![-50.0, -100.0, -150.0, -200.0]);
    let levels = robustness_sweep(&s.grid, &s.fors, &s.limits, Method::Convex, &s.correction, &sweep).unwrap();
    assert_eq!(levels.len(), 4);
    let mut last = 0.0;
    for l in &levels {
        assert!(l.succeeded(), "{} Mvar: {:?}", l.level_mvar, l.error);
        let r = l.result.as_ref().unwrap();
        assert!(r.membership.iter().all(|m| m.member));
        let dv = l.pre_dv.unwrap().abs();
        assert!(dv > last, "{} Mvar: |dv| {dv} after {last}", l.level_mvar);
        last = dv;
    }
}

/// Reactive power is free, so active power only moves where it is needed:
/// pinning any bus that does move back to `Δp = 0` must cost more or make
/// the step infeasible, and some FOR buses keep `Δp = 0`.
#[test]
fn active_power_moves_only_where_needed() {
    let s = reference_scenario().unwrap().scenario;
    assert_eq!(s.correction.costs.q, 0.0);
    let g = &s.grid;
    let st = solve_power_flow(g, None, g.buses[g.slack()].v0, &PowerFlowOptions::default()).unwrap();
    let sens = sensitivities(g, &st).unwrap();
    let Prepared::Hulls(h) = prepare(&s.fors, Method::Convex, &s.correction).unwrap() else {
        unreachable!()
    };
    let hulls: BTreeMap<usize, HalfSpaceSet> = h.into_iter().map(|(b, h)| (b, h.half_spaces)).collect();
    let points: BTreeMap<usize, (f64, f64)> = s.fors.iter().map(|(&b, f)| (b, (f.op0.p, f.op0.q))).collect();
    let ctx = LinearPoint {
        grid: g,
        state: &st,
        sens: &sens,
        limits: &s.limits,
        costs: &s.correction.costs,
        points: &points,
        margins: s.correction.margins,
        q_step_limit: s.correction.q_step_limit,
    };
    let m = build_convex_lp(&ctx, &hulls).unwrap();
    let best = solve_lp(&m.model).unwrap();
    assert!(best.is_optimal());
    let (mut moved, mut still) = (0, 0);
    for v in m.vars.iter().filter(|v| s.fors.contains_key(&v.bus)) {
        if best.x[v.dp].abs() <= 1e-9 {
            still += 1;
            continue;
        }
        moved += 1;
        let mut pinned = m.model.clone();
        pinned.variables[v.dp].lo = 0.0;
        pinned.variables[v.dp].hi = 0.0;
        let alt = solve_lp(&pinned).unwrap();
        assert!(!alt.is_optimal() || alt.objective > best.objective + 1e-9, "bus {}: its P move is not needed", v.bus);
    }
    assert!(moved >= 1 && still >= 1, "{moved} buses moved P, {still} kept it");
}
