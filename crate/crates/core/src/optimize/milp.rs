//! Best-first branch and bound over SOS1-structured binaries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use super::lp::{LpModel, Sense, Solution, Status};
use super::simplex::solve_with_bounds;
use crate::error::{Error, Result};

pub const DEFAULT_NODE_LIMIT: usize = 100_000;
pub const ABS_GAP: f64 = 1e-6;
const INT_TOL: f64 = 1e-6;

/// What a group of binaries selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Active-power segments `x_ki`.
    P,
    /// Voltage segments `x_li`.
    V,
}

/// Binaries of which exactly one is 1, backed by a `Σ = 1` equality row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sos1Group {
    pub bus: usize,
    pub axis: Axis,
    pub vars: Vec<usize>,
}

/// Per-bus registry of the segment variables (`x_s`), and the folded
/// constants (`x_c`) recorded for inspection.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SegmentRegistry {
    pub bus: usize,
    pub dp_seg: Vec<usize>,
    pub dv_seg: Vec<usize>,
    pub dq_seg: Vec<usize>,
    pub p_constants: Vec<f64>,
    pub v_constants: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MilpModel {
    pub base: LpModel,
    pub groups: Vec<Sos1Group>,
    pub registry: Vec<SegmentRegistry>,
}

#[derive(Debug, Clone, Copy)]
pub struct MilpOptions {
    pub node_limit: usize,
    pub abs_gap: f64,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            node_limit: DEFAULT_NODE_LIMIT,
            abs_gap: ABS_GAP,
        }
    }
}

impl MilpModel {
    pub fn binaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.groups.iter().flat_map(|g| g.vars.iter().copied()).collect();
        b.sort_unstable();
        b
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let mut seen = vec![false; self.base.n_vars()];
        for g in &self.groups {
            if g.vars.is_empty() {
                return Err(Error::Model(format!("empty SOS1 group on bus {}", g.bus)));
            }
            for &v in &g.vars {
                if v >= seen.len() || seen[v] {
                    return Err(Error::Model(format!("binary {v} invalid or in two groups")));
                }
                seen[v] = true;
                let var = &self.base.variables[v];
                if var.lo < 0.0 || var.hi > 1.0 {
                    return Err(Error::Model(format!("binary {} must lie in [0, 1]", var.name)));
                }
            }
            let mut members = g.vars.clone();
            members.sort_unstable();
            let has_row = self.base.constraints.iter().any(|c| {
                if c.sense != Sense::Eq || c.rhs != 1.0 || c.coeffs.len() != members.len() {
                    return false;
                }
                let mut idx: Vec<usize> = c.coeffs.iter().map(|&(j, _)| j).collect();
                idx.sort_unstable();
                idx == members && c.coeffs.iter().all(|&(_, a)| a == 1.0)
            });
            if !has_row {
                return Err(Error::Model(format!("SOS1 group on bus {} lacks its sum-to-one row", g.bus)));
            }
        }
        Ok(())
    }
}

struct Node {
    bound: f64,
    id: usize,
    /// Binaries fixed to zero on this branch.
    zeros: Vec<usize>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

pub fn solve_milp(model: &MilpModel) -> Result<Solution> {
    solve_milp_with(model, &MilpOptions::default())
}

pub fn solve_milp_with(model: &MilpModel, opts: &MilpOptions) -> Result<Solution> {
    model.validate()?;
    let lp = &model.base;
    let base_lo: Vec<f64> = lp.variables.iter().map(|v| v.lo).collect();
    let base_hi: Vec<f64> = lp.variables.iter().map(|v| v.hi).collect();
    let binaries = model.binaries();

    let mut incumbent: Option<Solution> = None;
    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut nodes = 0usize;
    let mut iterations = 0usize;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        id: next_id,
        zeros: Vec::new(),
    });
    next_id += 1;

    while let Some(node) = heap.pop() {
        let best = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
        if node.bound >= best - opts.abs_gap {
            continue;
        }
        if nodes >= opts.node_limit {
            heap.push(node);
            break;
        }
        nodes += 1;

        let mut hi = base_hi.clone();
        for &z in &node.zeros {
            hi[z] = 0.0;
        }
        let relax = solve_with_bounds(lp, &base_lo, &hi)?;
        iterations += relax.iterations;
        match relax.status {
            Status::Optimal => {}
            Status::Infeasible => continue,
            Status::Unbounded => {
                let mut s = relax;
                s.nodes = nodes;
                return Ok(s);
            }
            Status::IterationLimit | Status::NodeLimit => {
                return Err(Error::Numerical(format!("LP relaxation hit its iteration limit at node {nodes}")));
            }
        }
        if relax.objective >= best - opts.abs_gap {
            continue;
        }

        match most_fractional(model, &relax.x) {
            None => {
                let fixed = polish(model, &relax, &base_lo, &base_hi, &binaries)?;
                iterations += fixed.iterations;
                if fixed.objective < best - opts.abs_gap || incumbent.is_none() {
                    incumbent = Some(fixed);
                }
            }
            Some(g) => {
                let group = &model.groups[g].vars;
                let (left, right) = sos1_split(group, &relax.x);
                for side in [left, right] {
                    let mut zeros = node.zeros.clone();
                    zeros.extend(side);
                    heap.push(Node {
                        bound: relax.objective,
                        id: next_id,
                        zeros,
                    });
                    next_id += 1;
                }
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some(mut s) => {
            s.nodes = nodes;
            s.iterations = iterations;
            if heap.iter().any(|n| n.bound < s.objective - opts.abs_gap) {
                s.status = Status::NodeLimit;
                s.gap = s.objective - open_bound;
            } else {
                s.status = Status::Optimal;
                s.gap = 0.0;
            }
            Ok(s)
        }
        None => {
            let mut s = Solution::infeasible(iterations);
            s.nodes = nodes;
            if !heap.is_empty() {
                s.status = Status::NodeLimit;
            }
            Ok(s)
        }
    }
}

/// Group whose LP values are furthest from a single 1, if any is fractional.
fn most_fractional(model: &MilpModel, x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, group) in model.groups.iter().enumerate() {
        let fractional = group.vars.iter().any(|&v| {
            let f = x[v];
            f > INT_TOL && f < 1.0 - INT_TOL
        });
        if !fractional {
            continue;
        }
        let max = group.vars.iter().map(|&v| x[v]).fold(f64::NEG_INFINITY, f64::max);
        let frac = 1.0 - max;
        if best.is_none_or(|(_, b)| frac > b + 1e-12) {
            best = Some((g, frac));
        }
    }
    best.map(|(g, _)| g)
}

/// SOS1 dichotomy: split the ordered group around its weighted centre so
/// that each side holds part of the current fractional mass.
fn sos1_split(group: &[usize], x: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let nz: Vec<usize> = (0..group.len()).filter(|&k| x[group[k]] > INT_TOL).collect();
    let first = *nz.first().unwrap_or(&0);
    let last = *nz.last().unwrap_or(&(group.len() - 1));
    let mass: f64 = group.iter().map(|&v| x[v].max(0.0)).sum();
    let centre = if mass > 0.0 {
        group.iter().enumerate().map(|(k, &v)| k as f64 * x[v].max(0.0)).sum::<f64>() / mass
    } else {
        0.0
    };
    let upper = last.saturating_sub(1).max(first);
    let split = (centre.floor() as usize).clamp(first, upper);
    // Left child zeroes everything after `split`, right child everything up to it.
    let left = group[split + 1..].to_vec();
    let right = group[..=split].to_vec();
    (left, right)
}

/// Re-solves with every binary fixed to its rounded value so the reported
/// assignment is exactly integral.
fn polish(model: &MilpModel, relax: &Solution, lo: &[f64], hi: &[f64], binaries: &[usize]) -> Result<Solution> {
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    for &b in binaries {
        let r = relax.x[b].round();
        lo[b] = r;
        hi[b] = r;
    }
    let mut s = solve_with_bounds(&model.base, &lo, &hi)?;
    if s.status != Status::Optimal {
        s = relax.clone();
    }
    s.binaries = binaries.iter().map(|&b| (b, s.x[b].round() as u8)).collect();
    for &b in binaries {
        s.x[b] = s.x[b].round();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_group(costs: &[f64]) -> MilpModel {
        let mut lp = LpModel::new();
        let vars: Vec<usize> = costs
            .iter()
            .enumerate()
            .map(|(k, &c)| lp.add_var(format!("x{k}"), 0.0, 1.0, c))
            .collect();
        lp.add_constraint("sos", vars.iter().map(|&v| (v, 1.0)).collect(), Sense::Eq, 1.0);
        MilpModel {
            base: lp,
            groups: vec![Sos1Group {
                bus: 1,
                axis: Axis::P,
                vars,
            }],
            registry: Vec::new(),
        }
    }

    #[test]
    fn picks_cheapest_segment() {
        let s = solve_milp(&one_group(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(s.x, vec![0.0, 1.0, 0.0]);
        assert_eq!(s.nodes, 1);
    }

    #[test]
    fn branches_when_relaxation_is_fractional() {
        // y = 0.5*x0 + 1.5*x2 must reach 1 -> x2 selected; LP would mix.
        let mut m = one_group(&[0.0, 0.0, 1.0]);
        let y = m.base.add_var("y", 0.0, 10.0, 0.0);
        let v = m.groups[0].vars.clone();
        m.base
            .add_constraint("link", vec![(y, 1.0), (v[0], -0.5), (v[2], -1.5)], Sense::Eq, 0.0);
        m.base.add_constraint("need", vec![(y, 1.0)], Sense::Ge, 1.0);
        m.base.objective[v[0]] = 0.6;
        let s = solve_milp(&m).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert_eq!(&s.x[..3], &[0.0, 0.0, 1.0]);
        assert!(s.nodes > 1);
        assert!(s.binaries.iter().all(|&(_, b)| b <= 1));
    }

    #[test]
    fn missing_sum_row_is_rejected() {
        let mut m = one_group(&[1.0, 2.0]);
        m.base.constraints.clear();
        assert!(m.validate().is_err());
    }

    #[test]
    fn split_separates_mass() {
        let x = [0.3, 0.0, 0.7, 0.0];
        let (l, r) = sos1_split(&[0, 1, 2, 3], &x);
        assert!(l.contains(&2) && r.contains(&0));
    }
}
