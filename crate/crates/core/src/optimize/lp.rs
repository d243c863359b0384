//! Linear program container shared by the LP and MILP solvers.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variable {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

/// Minimize `objective · x` subject to the rows and variable bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LpModel {
    pub variables: Vec<Variable>,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64, cost: f64) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lo,
            hi,
        });
        self.objective.push(cost);
        self.variables.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn n_rows(&self) -> usize {
        self.constraints.len()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.variables.len() {
            return Err(Error::Model(format!(
                "objective has {} entries for {} variables",
                self.objective.len(),
                self.variables.len()
            )));
        }
        for v in &self.variables {
            if v.lo > v.hi || v.lo.is_nan() || v.hi.is_nan() || v.lo == f64::INFINITY || v.hi == f64::NEG_INFINITY {
                return Err(Error::Model(format!("variable {}: bounds [{}, {}]", v.name, v.lo, v.hi)));
            }
        }
        if let Some(c) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(Error::Model(format!("non-finite cost on {}", self.variables[c].name)));
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(Error::Model(format!("row {}: non-finite rhs", c.name)));
            }
            for &(j, a) in &c.coeffs {
                if j >= self.variables.len() {
                    return Err(Error::Model(format!("row {} references undeclared variable {j}", c.name)));
                }
                if !a.is_finite() {
                    return Err(Error::Model(format!("row {}: non-finite coefficient", c.name)));
                }
            }
        }
        Ok(())
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = self
            .variables
            .iter()
            .zip(x)
            .map(|(v, &xv)| (v.lo - xv).max(xv - v.hi).max(0.0));
        let rows = self.constraints.iter().map(|c| c.violation(x));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub status: Status,
    pub objective: f64,
    pub x: Vec<f64>,
    /// 0/1 assignment of every binary variable, by variable index (MILP only).
    pub binaries: Vec<(usize, u8)>,
    pub iterations: usize,
    /// Branch-and-bound nodes explored (MILP only).
    pub nodes: usize,
    /// Remaining absolute gap when the node limit stopped the search.
    pub gap: f64,
}

impl Solution {
    pub fn infeasible(iterations: usize) -> Self {
        Solution {
            status: Status::Infeasible,
            objective: f64::INFINITY,
            x: Vec::new(),
            binaries: Vec::new(),
            iterations,
            nodes: 0,
            gap: f64::INFINITY,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
