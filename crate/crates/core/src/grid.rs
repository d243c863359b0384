//! HV grid representation: buses, branches, admittance matrix and the
//! bus-to-branch-terminal incidence map.
//!
//! All quantities are per unit on `s_base` (MVA). Net injections follow
//! the generator sign convention: positive values inject into the grid.
//! Shunt elements are carried as constant absorbed power (`shunt_p`,
//! `shunt_q`) and never enter the admittance matrix.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_S_BASE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    /// Bus with an aggregated flexibility region attached.
    Flexible,
    Fixed,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BusKind::Slack => "slack",
            BusKind::Flexible => "flexible",
            BusKind::Fixed => "fixed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub v0: f64,
    pub delta0: f64,
    pub p0: f64,
    pub q0: f64,
    pub vmin: f64,
    pub vmax: f64,
    #[serde(default)]
    pub shunt_p: f64,
    #[serde(default)]
    pub shunt_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub y_mag: f64,
    pub theta: f64,
    pub i_max: f64,
}

impl Branch {
    /// Series admittance `y_mag∠theta`.
    pub fn admittance(&self) -> Complex64 {
        Complex64::from_polar(self.y_mag, self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    #[serde(default = "default_s_base")]
    pub s_base: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

fn default_s_base() -> f64 {
    DEFAULT_S_BASE
}

/// Which end of a branch a terminal sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminalEnd {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Terminal {
    pub branch: usize,
    pub end: TerminalEnd,
    pub bus: usize,
}

impl GridModel {
    /// Builds a grid and checks every structural invariant.
    pub fn new(s_base: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        let grid = GridModel {
            s_base,
            buses,
            branches,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated grid has a slack bus")
    }

    /// Indices of all non-slack buses in bus order. This is the ordering used
    /// by every sensitivity matrix and optimization model.
    pub fn non_slack(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&i| self.buses[i].kind != BusKind::Slack)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidGrid(msg));
        if !(self.s_base > 0.0) {
            return invalid(format!("s_base must be positive, got {}", self.s_base));
        }
        if self.buses.len() < 2 {
            return invalid(format!("grid needs at least 2 buses, got {}", self.buses.len()));
        }
        let mut seen = HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return invalid(format!("duplicate bus id {}", b.id));
            }
        }
        for (pos, b) in self.buses.iter().enumerate() {
            if b.id != pos {
                return invalid(format!(
                    "bus ids must be contiguous from 0 in file order: position {pos} holds id {}",
                    b.id
                ));
            }
            if !(b.vmin < b.vmax) {
                return invalid(format!("bus {}: vmin {} must be below vmax {}", b.id, b.vmin, b.vmax));
            }
            let finite = [b.v0, b.delta0, b.p0, b.q0, b.vmin, b.vmax, b.shunt_p, b.shunt_q];
            if finite.iter().any(|x| !x.is_finite()) {
                return invalid(format!("bus {}: non-finite field", b.id));
            }
        }
        let n_slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if n_slack != 1 {
            return invalid(format!("exactly one slack bus required, found {n_slack}"));
        }
        let mut branch_ids = HashSet::new();
        for br in &self.branches {
            if !branch_ids.insert(br.id) {
                return invalid(format!("duplicate branch id {}", br.id));
            }
            if br.from_bus >= self.buses.len() || br.to_bus >= self.buses.len() {
                return invalid(format!(
                    "branch {}: endpoint {}->{} does not resolve to a bus",
                    br.id, br.from_bus, br.to_bus
                ));
            }
            if br.from_bus == br.to_bus {
                return invalid(format!("branch {}: from_bus equals to_bus", br.id));
            }
            if !(br.y_mag > 0.0) || !br.theta.is_finite() {
                return invalid(format!("branch {}: y_mag must be positive", br.id));
            }
            if !(br.i_max > 0.0) {
                return invalid(format!("branch {}: i_max must be positive", br.id));
            }
        }
        if !self.is_connected() {
            return invalid("grid is not connected".to_string());
        }
        Ok(())
    }

    /// Breadth-first connectivity check over the undirected branch set.
    pub fn is_connected(&self) -> bool {
        let n = self.buses.len();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            if br.from_bus < n && br.to_bus < n {
                adj[br.from_bus].push(br.to_bus);
                adj[br.to_bus].push(br.from_bus);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == n
    }

    /// Bus admittance matrix built from branch series admittances only.
    pub fn admittance_matrix(&self) -> DMatrix<Complex64> {
        let n = self.buses.len();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for br in &self.branches {
            let ys = br.admittance();
            let (f, t) = (br.from_bus, br.to_bus);
            y[(f, f)] += ys;
            y[(t, t)] += ys;
            y[(f, t)] -= ys;
            y[(t, f)] -= ys;
        }
        y
    }

    /// Terminal list: branch `k` contributes rows `2k` (end A, from bus) and
    /// `2k + 1` (end B, to bus).
    pub fn incidence(&self) -> Vec<Terminal> {
        self.branches
            .iter()
            .enumerate()
            .flat_map(|(k, br)| {
                [
                    Terminal {
                        branch: k,
                        end: TerminalEnd::A,
                        bus: br.from_bus,
                    },
                    Terminal {
                        branch: k,
                        end: TerminalEnd::B,
                        bus: br.to_bus,
                    },
                ]
            })
            .collect()
    }

    /// Dense terminal-by-bus 0/1 incidence matrix.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let terms = self.incidence();
        let mut c = DMatrix::zeros(terms.len(), self.buses.len());
        for (row, t) in terms.iter().enumerate() {
            c[(row, t.bus)] = 1.0;
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_grid(text: &str, origin: &str) -> Result<GridModel> {
    let grid: GridModel = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    grid.validate()?;
    Ok(grid)
}

pub fn load_grid(path: &Path) -> Result<GridModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid(&text, &path.display().to_string())
}

/// Deterministic synthetic HV grid.
///
/// Bus 0 is the slack standing in for a common EHV connection. The HV buses
/// form a ring with chords; up to three transformer branches tie the ring to
/// the slack. Buses carry seeded loads, a subset carries wind-park
/// injections.
pub fn synth_grid(n_buses: usize, seed: u64) -> Result<GridModel> {
    if n_buses < 2 {
        return Err(Error::InvalidGrid(format!("synth_grid needs n_buses >= 2, got {n_buses}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hv = n_buses - 1;

    let mut buses = Vec::with_capacity(n_buses);
    buses.push(Bus {
        id: 0,
        kind: BusKind::Slack,
        v0: 1.03,
        delta0: 0.0,
        p0: 0.0,
        q0: 0.0,
        vmin: 0.9,
        vmax: 1.1,
        shunt_p: 0.0,
        shunt_q: 0.0,
    });
    for id in 1..n_buses {
        let load_p = rng.random_range(0.15..0.45);
        let load_q = load_p * rng.random_range(0.15..0.35);
        let wind = if id % 4 == 2 { rng.random_range(0.2..0.5) } else { 0.0 };
        buses.push(Bus {
            id,
            kind: BusKind::Fixed,
            v0: 1.0,
            delta0: 0.0,
            p0: round6(wind - load_p),
            q0: round6(-load_q),
            vmin: 0.9,
            vmax: 1.1,
            shunt_p: 0.0,
            shunt_q: 0.0,
        });
    }

    let mut branches: Vec<Branch> = Vec::new();
    let mut add = |from: usize, to: usize, r: f64, x: f64, i_max: f64| {
        let z = Complex64::new(r, x);
        let y = z.inv();
        let id = branches.len();
        branches.push(Branch {
            id,
            from_bus: from,
            to_bus: to,
            y_mag: round6(y.norm()),
            theta: round6(y.arg()),
            i_max,
        });
    };

    // Transformers from the EHV slack to evenly spaced ring buses.
    let n_tr = hv.min(3);
    for k in 0..n_tr {
        let to = 1 + k * hv / n_tr;
        add(0, to, 0.0005, 0.01, 8.0);
    }
    if hv >= 2 {
        // Ring; for two HV buses a single line.
        let ring_edges = if hv == 2 { 1 } else { hv };
        for k in 0..ring_edges {
            let from = 1 + k;
            let to = 1 + (k + 1) % hv;
            let x = round6(rng.random_range(0.012..0.035));
            add(from, to, round6(x * 0.25), x, 3.0);
        }
    }
    if hv >= 6 {
        // Chords across the ring.
        let n_chords = hv / 5;
        for c in 0..n_chords {
            let from = 1 + (c * 5 + 1) % hv;
            let to = 1 + (c * 5 + 1 + hv / 2) % hv;
            if from != to {
                let x = round6(rng.random_range(0.05..0.1));
                add(from, to, round6(x * 0.25), x, 3.0);
            }
        }
    }
    GridModel::new(DEFAULT_S_BASE, buses, branches)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_bus() -> GridModel {
        let bus = |id, kind, p0| Bus {
            id,
            kind,
            v0: 1.0,
            delta0: 0.0,
            p0,
            q0: 0.0,
            vmin: 0.9,
            vmax: 1.1,
            shunt_p: 0.0,
            shunt_q: 0.0,
        };
        GridModel::new(
            100.0,
            vec![bus(0, BusKind::Slack, 0.0), bus(1, BusKind::Fixed, -0.1)],
            vec![Branch {
                id: 0,
                from_bus: 0,
                to_bus: 1,
                y_mag: 10.0,
                theta: -FRAC_PI_2,
                i_max: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn single_branch_admittance() {
        let y = two_bus().admittance_matrix();
        let expected = Complex64::from_polar(10.0, -FRAC_PI_2);
        assert!((y[(0, 0)] - expected).norm() < 1e-12);
        assert!((y[(1, 1)] - expected).norm() < 1e-12);
        assert!((y[(0, 1)] + expected).norm() < 1e-12);
        assert!((y[(1, 0)] + expected).norm() < 1e-12);
    }

    #[test]
    fn triangle_rows_sum_to_zero() {
        let mut g = two_bus();
        g.buses.push(Bus { id: 2, ..g.buses[1].clone() });
        let br = g.branches[0].clone();
        g.branches.push(Branch { id: 1, from_bus: 1, to_bus: 2, ..br.clone() });
        g.branches.push(Branch { id: 2, from_bus: 2, to_bus: 0, ..br });
        g.validate().unwrap();
        let y = g.admittance_matrix();
        for i in 0..3 {
            let s: Complex64 = (0..3).map(|j| y[(i, j)]).sum();
            assert!(s.norm() < 1e-12);
        }
        assert_eq!(y, y.transpose());
    }

    #[test]
    fn incidence_counts_terminals() {
        let mut g = two_bus();
        let t = g.incidence();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].branch, t[0].end, t[0].bus), (0, TerminalEnd::A, 0));
        assert_eq!((t[1].branch, t[1].end, t[1].bus), (0, TerminalEnd::B, 1));
        let br = g.branches[0].clone();
        g.branches.push(Branch { id: 1, ..br });
        let t = g.incidence();
        assert_eq!(t.len(), 4);
        assert_eq!(t[2].branch, 1);
        assert_eq!(g.incidence_matrix().nrows(), 4);
    }

    #[test]
    fn rejects_duplicate_bus() {
        let mut g = two_bus();
        g.buses[1].id = 0;
        let err = g.validate().unwrap_err().to_string();
        assert!(err.contains("duplicate bus id"), "{err}");
    }

    #[test]
    fn rejects_disconnected_and_second_slack() {
        let mut g = two_bus();
        g.branches.clear();
        assert!(g.validate().unwrap_err().to_string().contains("not connected"));
        let mut g = two_bus();
        g.buses[1].kind = BusKind::Slack;
        assert!(g.validate().unwrap_err().to_string().contains("slack"));
    }

    #[test]
    fn parse_error_has_position() {
        let err = parse_grid("{\"s_base\": 100,\n \"buses\": [oops]}", "bad.json").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn synth_grid_small_round_trips() {
        let g = synth_grid(2, 1).unwrap();
        assert_eq!(g.n_buses(), 2);
        let back = parse_grid(&g.to_json(), "mem").unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn synth_grid_is_deterministic_and_connected() {
        for n in [2, 3, 5, 10, 30, 47] {
            for seed in 0..5 {
                let a = synth_grid(n, seed).unwrap();
                assert!(a.is_connected());
                assert_eq!(a, synth_grid(n, seed).unwrap());
                assert_eq!(a.buses.iter().filter(|b| b.kind == BusKind::Slack).count(), 1);
            }
        }
    }
}
