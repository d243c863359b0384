//! Newton-Raphson AC power flow in polar coordinates and the linear
//! sensitivities derived from its Jacobian.
//!
//! Every reduced vector and matrix is indexed by the non-slack buses in
//! bus order (see [`GridModel::non_slack`]). Branch-current quantities are
//! indexed by terminal: branch `k` owns rows `2k` and `2k + 1`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-8,
            max_iterations: 25,
        }
    }
}

/// Per-bus injection adjustments added on top of each bus's `p0`/`q0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Injections {
    pub dp: Vec<f64>,
    pub dq: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Injections {
            dp: vec![0.0; n],
            dq: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowState {
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
    /// Current magnitude at each branch terminal.
    pub branch_i: Vec<f64>,
    pub mismatch: f64,
    pub iterations: usize,
}

impl PowerFlowState {
    /// Loading of each branch: the larger terminal current over `i_max`.
    pub fn branch_ratios(&self, grid: &GridModel) -> Vec<f64> {
        grid.branches
            .iter()
            .enumerate()
            .map(|(k, br)| self.branch_i[2 * k].max(self.branch_i[2 * k + 1]) / br.i_max)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    pub non_slack: Vec<usize>,
    pub dv_dp: DMatrix<f64>,
    pub dv_dq: DMatrix<f64>,
    pub ddelta_dp: DMatrix<f64>,
    pub ddelta_dq: DMatrix<f64>,
    /// Terminal-by-bus current sensitivity to angles (slack column removed).
    pub di_ddelta: DMatrix<f64>,
    /// Terminal-by-bus current sensitivity to magnitudes (slack column removed).
    pub di_dv: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ddelta: DVector<f64>,
    pub dv: DVector<f64>,
    pub di: DVector<f64>,
}

fn voltages(v: &[f64], delta: &[f64]) -> Vec<Complex64> {
    v.iter().zip(delta).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
}

/// Network active/reactive injections `p_i`, `q_i` as functions of the bus
/// voltages, computed from the admittance matrix.
pub fn network_injections(y: &DMatrix<Complex64>, v: &[f64], delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let vc = voltages(v, delta);
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut current = Complex64::new(0.0, 0.0);
        for j in 0..n {
            current += y[(i, j)] * vc[j];
        }
        let s = vc[i] * current.conj();
        p[i] = s.re;
        q[i] = s.im;
    }
    (p, q)
}

/// Terminal current magnitudes for the given bus voltages.
pub fn terminal_currents(grid: &GridModel, v: &[f64], delta: &[f64]) -> Vec<f64> {
    let vc = voltages(v, delta);
    let mut out = Vec::with_capacity(2 * grid.n_branches());
    for br in &grid.branches {
        let diff = vc[br.from_bus] - vc[br.to_bus];
        let i = br.admittance() * diff;
        out.push(i.norm());
        out.push(i.norm());
    }
    out
}

fn specified(grid: &GridModel, overrides: Option<&Injections>) -> (Vec<f64>, Vec<f64>) {
    grid.buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (dp, dq) = overrides.map_or((0.0, 0.0), |o| (o.dp[i], o.dq[i]));
            (b.p0 + dp - b.shunt_p, b.q0 + dq - b.shunt_q)
        })
        .unzip()
}

/// Solves the AC power flow from a flat start.
pub fn solve_power_flow(
    grid: &GridModel,
    overrides: Option<&Injections>,
    slack_v: f64,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowState> {
    if !(slack_v > 0.5 && slack_v < 1.5) {
        return Err(Error::Model(format!("slack voltage {slack_v} outside (0.5, 1.5) pu")));
    }
    let n = grid.n_buses();
    if let Some(o) = overrides {
        if o.dp.len() != n || o.dq.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: o.dp.len().min(o.dq.len()),
            });
        }
    }
    let slack = grid.slack();
    let ns = grid.non_slack();
    let m = ns.len();
    let y = grid.admittance_matrix();
    let (p_spec, q_spec) = specified(grid, overrides);

    let slack_angle = grid.buses[slack].delta0;
    let mut v = vec![slack_v; n];
    let mut delta = vec![slack_angle; n];

    let mut iterations = 0;
    loop {
        let (p, q) = network_injections(&y, &v, &delta);
        let mut f = DVector::zeros(2 * m);
        for (k, &i) in ns.iter().enumerate() {
            f[k] = p_spec[i] - p[i];
            f[m + k] = q_spec[i] - q[i];
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(Error::NonConvergence { iterations, mismatch });
        }
        if mismatch <= opts.tolerance {
            let branch_i = terminal_currents(grid, &v, &delta);
            return Ok(PowerFlowState {
                v,
                delta,
                branch_i,
                mismatch,
                iterations,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { iterations, mismatch });
        }
        let jac = jacobian_at(&y, &ns, &v, &delta);
        let dx = jac.lu().solve(&f).ok_or(Error::SingularJacobian)?;
        for (k, &i) in ns.iter().enumerate() {
            delta[i] += dx[k];
            v[i] += dx[m + k];
        }
        if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::NonConvergence {
                iterations: iterations + 1,
                mismatch,
            });
        }
        iterations += 1;
    }
}

fn jacobian_at(y: &DMatrix<Complex64>, ns: &[usize], v: &[f64], delta: &[f64]) -> DMatrix<f64> {
    let m = ns.len();
    let (p, q) = network_injections(y, v, delta);
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for (r, &i) in ns.iter().enumerate() {
        for (c, &j) in ns.iter().enumerate() {
            let g = y[(i, j)].re;
            let b = y[(i, j)].im;
            if i == j {
                let vi = v[i];
                jac[(r, c)] = -q[i] - b * vi * vi;
                jac[(r, m + c)] = p[i] / vi + g * vi;
                jac[(m + r, c)] = p[i] - g * vi * vi;
                jac[(m + r, m + c)] = q[i] / vi - b * vi;
            } else {
                let d = delta[i] - delta[j];
                let (s, co) = d.sin_cos();
                let a = g * co + b * s;
                let e = g * s - b * co;
                jac[(r, c)] = v[i] * v[j] * e;
                jac[(r, m + c)] = v[i] * a;
                jac[(m + r, c)] = -v[i] * v[j] * a;
                jac[(m + r, m + c)] = v[i] * e;
            }
        }
    }
    jac
}

/// Power flow Jacobian `∂(p, q)/∂(δ, v)` over the non-slack buses.
pub fn jacobian(grid: &GridModel, state: &PowerFlowState) -> DMatrix<f64> {
    jacobian_at(&grid.admittance_matrix(), &grid.non_slack(), &state.v, &state.delta)
}

/// Terminal-to-terminal current sensitivities `(ID_TT, IU_TT)`.
///
/// Each branch contributes a 2×2 block: rows are its terminals, columns the
/// voltage angle (or magnitude) at each of its terminals.
pub fn terminal_sensitivities(grid: &GridModel, state: &PowerFlowState) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = 2 * grid.n_branches();
    let mut id = DMatrix::zeros(t, t);
    let mut iu = DMatrix::zeros(t, t);
    for (k, br) in grid.branches.iter().enumerate() {
        let (f, to) = (br.from_bus, br.to_bus);
        let (vf, vt) = (state.v[f], state.v[to]);
        let d = state.delta[f] - state.delta[to];
        let (s, c) = d.sin_cos();
        let mag = (vf * vf + vt * vt - 2.0 * vf * vt * c).max(0.0).sqrt();
        if mag < 1e-12 {
            // |I| is not differentiable at zero flow; leave the block empty.
            continue;
        }
        let y = br.y_mag;
        let d_ang = y * vf * vt * s / mag;
        let d_vf = y * (vf - vt * c) / mag;
        let d_vt = y * (vt - vf * c) / mag;
        for row in [2 * k, 2 * k + 1] {
            id[(row, 2 * k)] = d_ang;
            id[(row, 2 * k + 1)] = -d_ang;
            iu[(row, 2 * k)] = d_vf;
            iu[(row, 2 * k + 1)] = d_vt;
        }
    }
    (id, iu)
}

/// Inverse-Jacobian voltage sensitivities and bus-frame branch-current
/// sensitivities at a converged state.
pub fn sensitivities(grid: &GridModel, state: &PowerFlowState) -> Result<SensitivityBundle> {
    let ns = grid.non_slack();
    let m = ns.len();
    let jac = jacobian(grid, state);
    let inv = jac.try_inverse().ok_or(Error::SingularJacobian)?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularJacobian);
    }
    let (id_tt, iu_tt) = terminal_sensitivities(grid, state);
    let c = grid.incidence_matrix();
    let id_bus = &id_tt * &c;
    let iu_bus = &iu_tt * &c;
    let t = id_bus.nrows();
    let mut di_ddelta = DMatrix::zeros(t, m);
    let mut di_dv = DMatrix::zeros(t, m);
    for (col, &i) in ns.iter().enumerate() {
        di_ddelta.set_column(col, &id_bus.column(i));
        di_dv.set_column(col, &iu_bus.column(i));
    }
    Ok(SensitivityBundle {
        non_slack: ns,
        ddelta_dp: inv.view((0, 0), (m, m)).into_owned(),
        ddelta_dq: inv.view((0, m), (m, m)).into_owned(),
        dv_dp: inv.view((m, 0), (m, m)).into_owned(),
        dv_dq: inv.view((m, m), (m, m)).into_owned(),
        di_ddelta,
        di_dv,
    })
}

impl SensitivityBundle {
    pub fn n(&self) -> usize {
        self.non_slack.len()
    }

    pub fn n_terminals(&self) -> usize {
        self.di_dv.nrows()
    }

    /// Linear prediction of angle, magnitude and terminal-current changes.
    pub fn predict(&self, dp: &[f64], dq: &[f64]) -> Result<Prediction> {
        let m = self.n();
        for len in [dp.len(), dq.len()] {
            if len != m {
                return Err(Error::Dimension { expected: m, got: len });
            }
        }
        let dp = DVector::from_column_slice(dp);
        let dq = DVector::from_column_slice(dq);
        let ddelta = &self.ddelta_dp * &dp + &self.ddelta_dq * &dq;
        let dv = &self.dv_dp * &dp + &self.dv_dq * &dq;
        let di = &self.di_ddelta * &ddelta + &self.di_dv * &dv;
        Ok(Prediction { ddelta, dv, di })
    }
}
