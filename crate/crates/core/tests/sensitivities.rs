//! Power-flow Jacobian and branch-current sensitivities against central
//! finite differences of an independent branch-by-branch evaluation.

use flexgrid::grid::{synth_grid, GridModel};
use flexgrid::powerflow::{
    jacobian, sensitivities, solve_power_flow, Injections, PowerFlowOptions, PowerFlowState,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const REL: f64 = 1e-6;

/// Bus injections and terminal current magnitudes, summed branch by branch
/// from the series admittances (no admittance matrix involved).
fn oracle(grid: &GridModel, v: &[f64], delta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = v.len();
    let u: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(v[i], delta[i])).collect();
    let mut s = vec![Complex64::new(0.0, 0.0); n];
    let mut i_mag = Vec::new();
    for br in &grid.branches {
        let y = Complex64::from_polar(br.y_mag, br.theta);
        let i_ft = y * (u[br.from_bus] - u[br.to_bus]);
        s[br.from_bus] += u[br.from_bus] * i_ft.conj();
        s[br.to_bus] += u[br.to_bus] * (-i_ft).conj();
        i_mag.push(i_ft.norm());
        i_mag.push(i_ft.norm());
    }
    (s.iter().map(|x| x.re).collect(), s.iter().map(|x| x.im).collect(), i_mag)
}

/// `|a - b| <= REL * max(|b|, scale)`, where `scale` is the largest entry
/// of the reference so that structural zeros are judged against it.
fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= REL * b.abs().max(scale)
}

/// A converged state, nudged off the solution so the check does not rely
/// on the mismatch being zero.
fn random_state(grid: &GridModel, rng: &mut ChaCha8Rng) -> PowerFlowState {
    let slack_v = grid.buses[grid.slack()].v0;
    let mut s = solve_power_flow(grid, None, slack_v, &PowerFlowOptions::default()).unwrap();
    for b in grid.non_slack() {
        s.v[b] += rng.random_range(-0.02..0.02);
        s.delta[b] += rng.random_range(-0.02..0.02);
    }
    s
}

fn grids() -> Vec<GridModel> {
    (0..20u64).map(|k| synth_grid(3 + (k as usize % 8), 100 + k).unwrap()).collect()
}

#[test]
fn jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for grid in grids() {
        let st = random_state(&grid, &mut rng);
        let ns = grid.non_slack();
        let m = ns.len();
        let jac = jacobian(&grid, &st);
        assert_eq!(jac.shape(), (2 * m, 2 * m));
        let scale = jac.amax();
        for (col, &b) in ns.iter().enumerate() {
            for (axis, offset) in [(0, 0), (1, m)] {
                let (mut v_hi, mut d_hi) = (st.v.clone(), st.delta.clone());
                let (mut v_lo, mut d_lo) = (st.v.clone(), st.delta.clone());
                if axis == 0 {
                    d_hi[b] += H;
                    d_lo[b] -= H;
                } else {
                    v_hi[b] += H;
                    v_lo[b] -= H;
                }
                let (p1, q1, _) = oracle(&grid, &v_hi, &d_hi);
                let (p0, q0, _) = oracle(&grid, &v_lo, &d_lo);
                for (row, &i) in ns.iter().enumerate() {
                    let dp = (p1[i] - p0[i]) / (2.0 * H);
                    let dq = (q1[i] - q0[i]) / (2.0 * H);
                    let (jp, jq) = (jac[(row, col + offset)], jac[(row + m, col + offset)]);
                    assert!(close(jp, dp, scale), "n={} dp{i}/d{b}: {jp} vs {dp}", grid.n_buses());
                    assert!(close(jq, dq, scale), "n={} dq{i}/d{b}: {jq} vs {dq}", grid.n_buses());
                }
            }
        }
    }
}

#[test]
fn current_sensitivities_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for grid in grids() {
        let st = random_state(&grid, &mut rng);
        let sens = sensitivities(&grid, &st).unwrap();
        let scale = sens.di_ddelta.amax().max(sens.di_dv.amax());
        for (col, &b) in sens.non_slack.iter().enumerate() {
            for (angle, mat) in [(true, &sens.di_ddelta), (false, &sens.di_dv)] {
                let (mut v_hi, mut d_hi) = (st.v.clone(), st.delta.clone());
                let (mut v_lo, mut d_lo) = (st.v.clone(), st.delta.clone());
                if angle {
                    d_hi[b] += H;
                    d_lo[b] -= H;
                } else {
                    v_hi[b] += H;
                    v_lo[b] -= H;
                }
                let i1 = oracle(&grid, &v_hi, &d_hi).2;
                let i0 = oracle(&grid, &v_lo, &d_lo).2;
                for t in 0..i1.len() {
                    let fd = (i1[t] - i0[t]) / (2.0 * H);
                    assert!(close(mat[(t, col)], fd, scale), "terminal {t} bus {b}: {} vs {fd}", mat[(t, col)]);
                }
            }
        }
    }
}

#[test]
fn inverse_blocks_invert_the_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for grid in grids() {
        let st = random_state(&grid, &mut rng);
        let jac = jacobian(&grid, &st);
        let s = sensitivities(&grid, &st).unwrap();
        let m = s.n();
        for r in 0..2 * m {
            for c in 0..2 * m {
                // Row r of the inverse times column c of the Jacobian.
                let inv = |k: usize| match (r < m, k < m) {
                    (true, true) => s.ddelta_dp[(r, k)],
                    (true, false) => s.ddelta_dq[(r, k - m)],
                    (false, true) => s.dv_dp[(r - m, k)],
                    (false, false) => s.dv_dq[(r - m, k - m)],
                };
                let x: f64 = (0..2 * m).map(|k| inv(k) * jac[(k, c)]).sum();
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((x - want).abs() < 1e-9, "({r}, {c}) = {x}");
            }
        }
    }
}

/// The linear prediction tracks the nonlinear power flow for small steps.
#[test]
fn prediction_tracks_power_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for grid in grids() {
        let slack_v = grid.buses[grid.slack()].v0;
        let opts = PowerFlowOptions {
            tolerance: 1e-12,
            max_iterations: 40,
        };
        let s0 = solve_power_flow(&grid, None, slack_v, &opts).unwrap();
        let sens = sensitivities(&grid, &s0).unwrap();
        let m = sens.n();
        let dp: Vec<f64> = (0..m).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let dq: Vec<f64> = (0..m).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let mut inj = Injections::zeros(grid.n_buses());
        for (k, &b) in sens.non_slack.iter().enumerate() {
            inj.dp[b] = dp[k];
            inj.dq[b] = dq[k];
        }
        let s1 = solve_power_flow(&grid, Some(&inj), slack_v, &opts).unwrap();
        let pred = sens.predict(&dp, &dq).unwrap();
        for (k, &b) in sens.non_slack.iter().enumerate() {
            let actual = s1.v[b] - s0.v[b];
            // Second-order remainder: O(|step|^2) ~ 1e-6 relative to the step.
            assert!((actual - pred.dv[k]).abs() < 1e-5 * (1.0 + actual.abs() * 1e3), "bus {b}: {actual} vs {}", pred.dv[k]);
        }
        for t in 0..pred.di.len() {
            let actual = s1.branch_i[t] - s0.branch_i[t];
            assert!((actual - pred.di[t]).abs() < 1e-5, "terminal {t}: {actual} vs {}", pred.di[t]);
        }
    }
}
