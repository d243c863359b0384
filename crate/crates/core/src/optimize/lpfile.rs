//! CPLEX-LP text export for cross-checking models with external solvers.

use std::fmt::Write;

use super::lp::{LpModel, Sense};
use super::milp::MilpModel;

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect()
}

fn term(out: &mut String, first: bool, coef: f64, name: &str) {
    if coef < 0.0 {
        out.push_str(" -");
    } else if !first {
        out.push_str(" +");
    }
    let _ = write!(out, " {} {}", coef.abs(), name);
}

pub fn write_lp(model: &LpModel) -> String {
    write_inner(model, &[])
}

pub fn write_milp(model: &MilpModel) -> String {
    write_inner(&model.base, &model.binaries())
}

fn write_inner(model: &LpModel, binaries: &[usize]) -> String {
    let names: Vec<String> = model.variables.iter().map(|v| sanitize(&v.name)).collect();
    let mut out = String::from("\\ flexgrid model export\nMinimize\n obj:");
    let mut first = true;
    for (j, &c) in model.objective.iter().enumerate() {
        if c != 0.0 {
            term(&mut out, first, c, &names[j]);
            first = false;
        }
    }
    if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (i, c) in model.constraints.iter().enumerate() {
        let _ = write!(out, " r{i}_{}:", sanitize(&c.name));
        let mut first = true;
        for &(j, a) in &c.coeffs {
            term(&mut out, first, a, &names[j]);
            first = false;
        }
        if first {
            out.push_str(" 0");
        }
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", c.rhs);
    }
    out.push_str("Bounds\n");
    for (j, v) in model.variables.iter().enumerate() {
        let bound = |x: f64| {
            if x == f64::INFINITY {
                "+inf".to_string()
            } else if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                x.to_string()
            }
        };
        if v.lo == f64::NEG_INFINITY && v.hi == f64::INFINITY {
            let _ = writeln!(out, " {} free", names[j]);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", bound(v.lo), names[j], bound(v.hi));
        }
    }
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for &b in binaries {
            let _ = writeln!(out, " {}", names[b]);
        }
    }
    out.push_str("End\n");
    out
}
