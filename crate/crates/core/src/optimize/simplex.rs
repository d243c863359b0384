//! Bounded-variable revised primal simplex with a dense basis inverse.
//!
//! Every row `i` gets a logical column `r_i = a_i·x` whose bounds encode the
//! row sense, so the system is `A x − r = 0`. Rows that are infeasible at
//! the starting point receive an artificial column and are repaired by a
//! phase-one pass minimizing the artificial sum. Pricing is Dantzig's rule;
//! after a run of degenerate pivots it falls back to Bland's rule until
//! progress resumes, which rules out cycling.

use nalgebra::DMatrix;

use super::lp::{LpModel, Sense, Solution, Status};
use crate::error::{Error, Result};

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const PHASE1_TOL: f64 = 1e-8;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_RUN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Free nonbasic variable resting at zero.
    Zero,
}

struct Tableau {
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    /// Row-major inverse of the basis matrix.
    binv: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

/// Solves `model` with its declared variable bounds.
pub fn solve_lp(model: &LpModel) -> Result<Solution> {
    model.validate()?;
    let lo: Vec<f64> = model.variables.iter().map(|v| v.lo).collect();
    let hi: Vec<f64> = model.variables.iter().map(|v| v.hi).collect();
    solve_with_bounds(model, &lo, &hi)
}

/// Solves `model` with variable bounds replaced by `lo`/`hi`. The model is
/// assumed to be validated already.
pub(crate) fn solve_with_bounds(model: &LpModel, lo: &[f64], hi: &[f64]) -> Result<Solution> {
    let n = model.n_vars();
    let m = model.n_rows();
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Ok(Solution::infeasible(0));
    }

    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in model.constraints.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            if a == 0.0 {
                continue;
            }
            match cols[j].last_mut() {
                Some((r, v)) if *r == i => *v += a,
                _ => cols[j].push((i, a)),
            }
        }
    }

    let mut t = Tableau {
        m,
        cols,
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        x: vec![0.0; n],
        state: vec![VarState::AtLower; n],
        basis: vec![usize::MAX; m],
        binv: vec![0.0; m * m],
        iterations: 0,
        max_iterations: 50 * (n + 2 * m) + 1000,
    };
    for j in 0..n {
        let (x, s) = nonbasic_start(lo[j], hi[j]);
        t.x[j] = x;
        t.state[j] = s;
    }

    let mut activity = vec![0.0; m];
    for j in 0..n {
        if t.x[j] != 0.0 {
            for &(i, a) in &t.cols[j] {
                activity[i] += a * t.x[j];
            }
        }
    }

    let mut artificials = Vec::new();
    for (i, row) in model.constraints.iter().enumerate() {
        let (rl, rh) = match row.sense {
            Sense::Le => (f64::NEG_INFINITY, row.rhs),
            Sense::Ge => (row.rhs, f64::INFINITY),
            Sense::Eq => (row.rhs, row.rhs),
        };
        let col = t.cols.len();
        t.cols.push(vec![(i, -1.0)]);
        t.lo.push(rl);
        t.hi.push(rh);
        let act = activity[i];
        if act >= rl && act <= rh {
            t.x.push(act);
            t.state.push(VarState::Basic);
            t.basis[i] = col;
            t.binv[i * m + i] = -1.0;
        } else {
            let (bound, state) = if act < rl { (rl, VarState::AtLower) } else { (rh, VarState::AtUpper) };
            t.x.push(bound);
            t.state.push(state);
            artificials.push((i, act - bound));
        }
    }
    let n_struct_logical = t.cols.len();
    for &(i, res) in &artificials {
        let sigma = if res > 0.0 { -1.0 } else { 1.0 };
        let col = t.cols.len();
        t.cols.push(vec![(i, sigma)]);
        t.lo.push(0.0);
        t.hi.push(f64::INFINITY);
        t.x.push(res.abs());
        t.state.push(VarState::Basic);
        t.basis[i] = col;
        t.binv[i * m + i] = 1.0 / sigma;
    }

    if !artificials.is_empty() {
        let mut cost = vec![0.0; t.cols.len()];
        for c in cost.iter_mut().skip(n_struct_logical) {
            *c = 1.0;
        }
        match t.run(&cost)? {
            Outcome::Optimal => {}
            Outcome::IterationLimit => return Ok(t.finish(model, Status::IterationLimit)),
            Outcome::Unbounded => return Err(Error::Numerical("phase one reported unbounded".into())),
        }
        let infeas: f64 = (n_struct_logical..t.cols.len()).map(|j| t.x[j]).sum();
        if infeas > PHASE1_TOL {
            return Ok(Solution::infeasible(t.iterations));
        }
        for j in n_struct_logical..t.cols.len() {
            t.hi[j] = 0.0;
            if t.state[j] != VarState::Basic {
                t.x[j] = 0.0;
                t.state[j] = VarState::AtLower;
            }
        }
    }

    let mut cost = vec![0.0; t.cols.len()];
    cost[..n].copy_from_slice(&model.objective);
    let status = match t.run(&cost)? {
        Outcome::Optimal => Status::Optimal,
        Outcome::Unbounded => Status::Unbounded,
        Outcome::IterationLimit => Status::IterationLimit,
    };
    let sol = t.finish(model, status);
    if sol.status == Status::Optimal {
        let viol = bounded_violation(model, &sol.x, lo, hi);
        if viol > 1e-7 {
            return Err(Error::Numerical(format!(
                "final basis violates the model by {viol:.3e} after {} pivots",
                sol.iterations
            )));
        }
    }
    Ok(sol)
}

fn bounded_violation(model: &LpModel, x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let b = x
        .iter()
        .enumerate()
        .map(|(j, &v)| (lo[j] - v).max(v - hi[j]).max(0.0))
        .fold(0.0, f64::max);
    let r = model.constraints.iter().map(|c| c.violation(x)).fold(0.0, f64::max);
    b.max(r)
}

fn nonbasic_start(lo: f64, hi: f64) -> (f64, VarState) {
    if lo.is_finite() {
        (lo, VarState::AtLower)
    } else if hi.is_finite() {
        (hi, VarState::AtUpper)
    } else {
        (0.0, VarState::Zero)
    }
}

impl Tableau {
    fn run(&mut self, cost: &[f64]) -> Result<Outcome> {
        let m = self.m;
        let mut degenerate = 0usize;
        let mut since_refactor = 0usize;
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        loop {
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
            if self.iterations >= self.max_iterations {
                return Ok(Outcome::IterationLimit);
            }

            // Simplex multipliers y = c_B^T B^{-1}.
            y.iter_mut().for_each(|v| *v = 0.0);
            for (i, &b) in self.basis.iter().enumerate() {
                let cb = cost[b];
                if cb != 0.0 {
                    let row = &self.binv[i * m..(i + 1) * m];
                    for (yk, &bk) in y.iter_mut().zip(row) {
                        *yk += cb * bk;
                    }
                }
            }

            let bland = degenerate > DEGENERATE_RUN;
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.cols.len() {
                let st = self.state[j];
                if st == VarState::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let d = cost[j] - self.cols[j].iter().map(|&(i, a)| y[i] * a).sum::<f64>();
                let dir = match st {
                    VarState::AtLower if d < -DUAL_TOL => 1.0,
                    VarState::AtUpper if d > DUAL_TOL => -1.0,
                    VarState::Zero if d.abs() > DUAL_TOL => -d.signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir, d));
                    break;
                }
                if entering.is_none_or(|(_, _, best)| d.abs() > best.abs()) {
                    entering = Some((j, dir, d));
                }
            }
            let Some((q, dir, _)) = entering else {
                return Ok(Outcome::Optimal);
            };

            // Column alpha = B^{-1} a_q.
            alpha.iter_mut().for_each(|v| *v = 0.0);
            for &(k, a) in &self.cols[q] {
                for (i, al) in alpha.iter_mut().enumerate() {
                    *al += self.binv[i * m + k] * a;
                }
            }

            // Two-pass Harris ratio test.
            let mut theta_max = f64::INFINITY;
            for i in 0..m {
                let rate = -dir * alpha[i];
                if rate.abs() < PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let lim = if rate < 0.0 {
                    (self.x[b] - self.lo[b] + PRIMAL_TOL) / -rate
                } else {
                    (self.hi[b] - self.x[b] + PRIMAL_TOL) / rate
                };
                if lim < theta_max {
                    theta_max = lim;
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            if theta_max.is_finite() {
                let mut best_piv = 0.0;
                for i in 0..m {
                    let rate = -dir * alpha[i];
                    if rate.abs() < PIVOT_TOL {
                        continue;
                    }
                    let b = self.basis[i];
                    let lim = if rate < 0.0 {
                        (self.x[b] - self.lo[b]) / -rate
                    } else {
                        (self.hi[b] - self.x[b]) / rate
                    };
                    if lim > theta_max {
                        continue;
                    }
                    let better = if bland {
                        match leave {
                            None => true,
                            Some((r, l)) => lim < l - 1e-12 || (lim <= l + 1e-12 && b < self.basis[r]),
                        }
                    } else {
                        alpha[i].abs() > best_piv
                    };
                    if better {
                        best_piv = alpha[i].abs();
                        leave = Some((i, lim.max(0.0)));
                    }
                }
            }

            let flip = self.hi[q] - self.lo[q];
            let (theta, row) = match leave {
                Some((r, th)) if th < flip => (th, Some(r)),
                _ if flip.is_finite() => (flip, None),
                Some((r, th)) => (th, Some(r)),
                None => return Ok(Outcome::Unbounded),
            };

            self.x[q] += dir * theta;
            for i in 0..m {
                let b = self.basis[i];
                self.x[b] -= dir * theta * alpha[i];
            }
            self.iterations += 1;
            since_refactor += 1;
            if theta < 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            match row {
                None => {
                    self.state[q] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    let piv = alpha[r];
                    if piv.abs() < PIVOT_TOL {
                        return Err(Error::Numerical(format!(
                            "pivot {piv:.3e} on row {r} for column {q} at iteration {}",
                            self.iterations
                        )));
                    }
                    let l = self.basis[r];
                    let rate = -dir * piv;
                    if rate < 0.0 {
                        self.x[l] = self.lo[l];
                        self.state[l] = VarState::AtLower;
                    } else {
                        self.x[l] = self.hi[l];
                        self.state[l] = VarState::AtUpper;
                    }
                    self.basis[r] = q;
                    self.state[q] = VarState::Basic;

                    let (head, rest) = self.binv.split_at_mut(r * m);
                    let (pivot_row, tail) = rest.split_at_mut(m);
                    pivot_row.iter_mut().for_each(|v| *v /= piv);
                    for (i, chunk) in head.chunks_mut(m).chain(tail.chunks_mut(m)).enumerate() {
                        let idx = if i < r { i } else { i + 1 };
                        let f = alpha[idx];
                        if f != 0.0 {
                            for (c, &p) in chunk.iter_mut().zip(pivot_row.iter()) {
                                *c -= f * p;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Recomputes the basis inverse and the basic values from scratch.
    ///
    /// Basic columns with a single nonzero (logicals, artificials) are
    /// eliminated directly, so only the block of the remaining structural
    /// columns on their uncovered rows goes through a dense inverse.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Ok(());
        }
        let mut row_owner = vec![usize::MAX; m];
        let mut units = Vec::new();
        let mut structural = Vec::new();
        for (pos, &col) in self.basis.iter().enumerate() {
            match self.cols[col].as_slice() {
                &[(i, a)] if row_owner[i] == usize::MAX && a != 0.0 => {
                    row_owner[i] = pos;
                    units.push((pos, i, a));
                }
                _ => structural.push(pos),
            }
        }
        let free_rows: Vec<usize> = (0..m).filter(|&i| row_owner[i] == usize::MAX).collect();
        let k = structural.len();
        if free_rows.len() != k {
            return Err(Error::Numerical(format!("singular basis at iteration {}", self.iterations)));
        }
        let mut row_slot = vec![usize::MAX; m];
        for (t, &i) in free_rows.iter().enumerate() {
            row_slot[i] = t;
        }
        let mut block = DMatrix::zeros(k, k);
        for (t, &pos) in structural.iter().enumerate() {
            for &(i, a) in &self.cols[self.basis[pos]] {
                if row_slot[i] != usize::MAX {
                    block[(row_slot[i], t)] = a;
                }
            }
        }
        let block_inv = if k == 0 {
            block
        } else {
            block
                .try_inverse()
                .ok_or_else(|| Error::Numerical(format!("singular basis at iteration {}", self.iterations)))?
        };

        self.binv.iter_mut().for_each(|v| *v = 0.0);
        for (t, &pos) in structural.iter().enumerate() {
            let row = &mut self.binv[pos * m..(pos + 1) * m];
            for (u, &i) in free_rows.iter().enumerate() {
                row[i] = block_inv[(t, u)];
            }
        }
        // Unit row: x_u = (r_i − Σ_s B[i, s] x_s) / a.
        let mut coupling: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        for (t, &pos) in structural.iter().enumerate() {
            for &(i, a) in &self.cols[self.basis[pos]] {
                if row_slot[i] == usize::MAX {
                    coupling[i].push((t, a));
                }
            }
        }
        for &(pos, i, a) in &units {
            let row = &mut self.binv[pos * m..(pos + 1) * m];
            row[i] = 1.0 / a;
            for &(t, b) in &coupling[i] {
                for (u, &fr) in free_rows.iter().enumerate() {
                    row[fr] -= b * block_inv[(t, u)] / a;
                }
            }
        }

        let mut rhs = vec![0.0; m];
        for j in 0..self.cols.len() {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for &(i, a) in &self.cols[j] {
                    rhs[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[self.basis[i]] = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    fn finish(&mut self, model: &LpModel, status: Status) -> Solution {
        if status == Status::Optimal {
            // A failed refactorization leaves the incrementally updated values.
            let _ = self.refactor();
        }
        let n = model.n_vars();
        let x = self.x[..n].to_vec();
        Solution {
            status,
            objective: model.objective_value(&x),
            x,
            binaries: Vec::new(),
            iterations: self.iterations,
            nodes: 0,
            gap: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::lp::LpModel;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn single_lower_bound_row() {
        let mut lp = LpModel::new();
        let x = lp.add_var("x", -INF, INF, 1.0);
        lp.add_constraint("c", vec![(x, 1.0)], Sense::Ge, 3.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn edge_optimum() {
        let mut lp = LpModel::new();
        let x = lp.add_var("x", 0.0, INF, -1.0);
        let y = lp.add_var("y", 0.0, INF, -1.0);
        lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective + 1.0).abs() < 1e-12);
        assert!((s.x[0] + s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LpModel::new();
        let x = lp.add_var("x", 0.0, 1.0, 1.0);
        lp.add_constraint("c", vec![(x, 1.0)], Sense::Ge, 2.0);
        assert_eq!(solve_lp(&lp).unwrap().status, Status::Infeasible);

        let mut lp = LpModel::new();
        let x = lp.add_var("x", 0.0, INF, -1.0);
        let y = lp.add_var("y", 0.0, INF, 0.0);
        lp.add_constraint("c", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn equality_rows_and_free_variables() {
        // min |x - 2| style: x free, x + y = 5, y in [0, 1] -> x in [4, 5]
        let mut lp = LpModel::new();
        let x = lp.add_var("x", -INF, INF, 1.0);
        let y = lp.add_var("y", 0.0, 1.0, 0.0);
        lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 5.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.x[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn no_rows_goes_to_bounds() {
        let mut lp = LpModel::new();
        lp.add_var("a", -1.0, 2.0, 1.0);
        lp.add_var("b", -1.0, 2.0, -1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.x, vec![-1.0, 2.0]);
    }

    #[test]
    fn rejects_undeclared_variable() {
        let mut lp = LpModel::new();
        lp.add_var("a", 0.0, 1.0, 1.0);
        lp.add_constraint("c", vec![(3, 1.0)], Sense::Le, 1.0);
        assert!(solve_lp(&lp).is_err());
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's classic cycling LP.
        let mut lp = LpModel::new();
        let x: Vec<usize> = [-0.75, 150.0, -0.02, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| lp.add_var(format!("x{i}"), 0.0, INF, c))
            .collect();
        lp.add_constraint("r1", vec![(x[0], 0.25), (x[1], -60.0), (x[2], -0.04), (x[3], 9.0)], Sense::Le, 0.0);
        lp.add_constraint("r2", vec![(x[0], 0.5), (x[1], -90.0), (x[2], -0.02), (x[3], 3.0)], Sense::Le, 0.0);
        lp.add_constraint("r3", vec![(x[2], 1.0)], Sense::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective + 0.05).abs() < 1e-9);
    }
}
