//! Feasible operating regions (FORs) as voltage-indexed stacks of PQ
//! polygons, their MILP segmentation, membership and volumes.
//!
//! Polygons are stored counter-clockwise in absolute `(P_vert, Q_vert)` pu
//! and must be P-monotone: every vertical line meets the polygon in a
//! single interval. Each slice therefore splits into a lower and an upper
//! boundary chain, both functions of P. Between two slices the region is
//! interpolated at matched normalized P positions, so for slices with a
//! common P extent the Q bounds vary linearly in voltage at fixed P.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{solve_lp, LpModel, Sense, Status};

/// Slack-voltage range the FOR slices are determined for.
pub const V_SLICE_MIN: f64 = 0.94;
pub const V_SLICE_MAX: f64 = 1.06;
const V_EPS: f64 = 1e-9;
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub p: f64,
    pub q: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub v_slack: f64,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqvFor {
    pub bus_id: usize,
    pub op0: OperatingPoint,
    pub slices: Vec<Slice>,
}

/// Piecewise-linear boundary of a P-monotone region: `lower` and `upper`
/// are vertex lists sorted by ascending P sharing the same P extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub lower: Vec<[f64; 2]>,
    pub upper: Vec<[f64; 2]>,
}

/// Shoelace signed area (positive for counter-clockwise order).
pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// True when every turn of the closed polygon has the same orientation.
pub fn is_convex(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut sign = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross.abs() < 1e-14 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

fn interp(chain: &[[f64; 2]], p: f64) -> f64 {
    let n = chain.len();
    if p <= chain[0][0] {
        return chain[0][1];
    }
    if p >= chain[n - 1][0] {
        return chain[n - 1][1];
    }
    let k = chain.partition_point(|v| v[0] <= p);
    let (a, b) = (chain[k - 1], chain[k]);
    if b[0] == a[0] {
        return a[1].max(b[1]);
    }
    a[1] + (b[1] - a[1]) * (p - a[0]) / (b[0] - a[0])
}

impl Section {
    /// Splits a counter-clockwise polygon into its lower and upper chains.
    /// With `strict`, the polygon must have positive area and a strictly
    /// positive Q opening away from its P extremes.
    pub fn from_polygon(poly: &[[f64; 2]], strict: bool) -> std::result::Result<Self, String> {
        let n = poly.len();
        if n < 2 || (strict && n < 3) {
            return Err(format!("polygon needs at least 3 vertices, got {n}"));
        }
        if poly.iter().flatten().any(|x| !x.is_finite()) {
            return Err("non-finite vertex".into());
        }
        let area = signed_area(poly);
        if strict && area <= 0.0 {
            return Err(format!("polygon must be counter-clockwise with positive area (signed area {area:.3e})"));
        }
        let pmin = poly.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let pmax = poly.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        if !(pmax > pmin) {
            return Err("polygon has zero P extent".into());
        }
        let pick = |target: f64, lowest: bool| {
            (0..n)
                .filter(|&i| poly[i][0] == target)
                .min_by(|&a, &b| {
                    let o = poly[a][1].total_cmp(&poly[b][1]);
                    if lowest { o } else { o.reverse() }
                })
                .unwrap()
        };
        let ll = pick(pmin, true);
        let lu = pick(pmin, false);
        let rl = pick(pmax, true);
        let ru = pick(pmax, false);
        let walk = |from: usize, to: usize| {
            let mut idx = vec![from];
            let mut i = from;
            while i != to {
                i = (i + 1) % n;
                idx.push(i);
            }
            idx
        };
        let lower_idx = walk(ll, rl);
        let right_idx = walk(rl, ru);
        let upper_idx = walk(ru, lu);
        let left_idx = walk(lu, ll);
        let covered = lower_idx.len() + upper_idx.len() + right_idx.len() + left_idx.len() - 4;
        if covered != n {
            return Err("polygon is not P-monotone (boundary revisits an extreme)".into());
        }
        if right_idx.iter().any(|&i| poly[i][0] != pmax) || left_idx.iter().any(|&i| poly[i][0] != pmin) {
            return Err("polygon is not P-monotone or not counter-clockwise".into());
        }
        let lower: Vec<[f64; 2]> = lower_idx.iter().map(|&i| poly[i]).collect();
        let mut upper: Vec<[f64; 2]> = upper_idx.iter().map(|&i| poly[i]).collect();
        upper.reverse();
        for chain in [&lower, &upper] {
            if chain.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return Err("polygon is not P-monotone (chain P not strictly increasing)".into());
            }
        }
        let s = Section { lower, upper };
        let tol = 1e-12 * (1.0 + pmax.abs().max(pmin.abs()));
        let xs: Vec<f64> = s.lower.iter().chain(&s.upper).map(|v| v[0]).collect();
        for p in xs {
            let gap = s.upper_at(p) - s.lower_at(p);
            let interior = p > pmin && p < pmax;
            if gap < -tol || (strict && interior && gap <= tol) {
                return Err(format!("polygon is not simple: boundary chains cross or touch at P = {p}"));
            }
        }
        Ok(s)
    }

    pub fn pmin(&self) -> f64 {
        self.lower[0][0]
    }

    pub fn pmax(&self) -> f64 {
        self.lower[self.lower.len() - 1][0]
    }

    pub fn upper_at(&self, p: f64) -> f64 {
        interp(&self.upper, p)
    }

    pub fn lower_at(&self, p: f64) -> f64 {
        interp(&self.lower, p)
    }

    pub fn contains(&self, p: f64, q: f64, tol: f64) -> bool {
        if p < self.pmin() - tol || p > self.pmax() + tol {
            return false;
        }
        let pc = p.clamp(self.pmin(), self.pmax());
        q >= self.lower_at(pc) - tol && q <= self.upper_at(pc) + tol
    }

    pub fn area(&self) -> f64 {
        let integral = |c: &[[f64; 2]]| c.windows(2).map(|w| (w[1][0] - w[0][0]) * (w[0][1] + w[1][1]) / 2.0).sum::<f64>();
        integral(&self.upper) - integral(&self.lower)
    }

    /// Smallest upper bound over `[a, b]`.
    pub fn min_upper(&self, a: f64, b: f64) -> f64 {
        extreme(&self.upper, a, b, f64::min, f64::INFINITY)
    }

    /// Largest lower bound over `[a, b]`.
    pub fn max_lower(&self, a: f64, b: f64) -> f64 {
        extreme(&self.lower, a, b, f64::max, f64::NEG_INFINITY)
    }

    fn normalized(&self, chain: &[[f64; 2]], s: f64) -> f64 {
        interp(chain, self.pmin() + s * (self.pmax() - self.pmin()))
    }

    fn breakpoints(&self, chain: &[[f64; 2]]) -> Vec<f64> {
        let w = self.pmax() - self.pmin();
        chain.iter().map(|v| (v[0] - self.pmin()) / w).collect()
    }

    /// Section interpolated between `self` (t = 0) and `other` (t = 1) at
    /// matched normalized P positions.
    pub fn blend(&self, other: &Section, t: f64) -> Section {
        if t <= 0.0 {
            return self.clone();
        }
        if t >= 1.0 {
            return other.clone();
        }
        let pmin = (1.0 - t) * self.pmin() + t * other.pmin();
        let pmax = (1.0 - t) * self.pmax() + t * other.pmax();
        let chain = |lower: bool| {
            let (ca, cb) = if lower { (&self.lower, &other.lower) } else { (&self.upper, &other.upper) };
            let mut s: Vec<f64> = self.breakpoints(ca).into_iter().chain(other.breakpoints(cb)).collect();
            s.sort_by(f64::total_cmp);
            s.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
            s.iter()
                .map(|&si| {
                    let q = (1.0 - t) * self.normalized(ca, si) + t * other.normalized(cb, si);
                    [pmin + si * (pmax - pmin), q]
                })
                .collect::<Vec<_>>()
        };
        Section {
            lower: chain(true),
            upper: chain(false),
        }
    }
}

fn extreme(chain: &[[f64; 2]], a: f64, b: f64, pick: fn(f64, f64) -> f64, init: f64) -> f64 {
    let ends = [interp(chain, a), interp(chain, b)];
    chain
        .iter()
        .filter(|v| v[0] > a && v[0] < b)
        .map(|v| v[1])
        .chain(ends)
        .fold(init, pick)
}

impl Slice {
    pub fn section(&self) -> std::result::Result<Section, String> {
        Section::from_polygon(&self.polygon, true)
    }
}

impl PqvFor {
    pub fn new(bus_id: usize, op0: OperatingPoint, slices: Vec<Slice>) -> Result<Self> {
        let f = PqvFor { bus_id, op0, slices };
        f.validate()?;
        Ok(f)
    }

    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidFor {
            bus: self.bus_id,
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slices.is_empty() {
            return Err(self.invalid("no slices"));
        }
        for (k, s) in self.slices.iter().enumerate() {
            if !(s.v_slack >= V_SLICE_MIN - V_EPS && s.v_slack <= V_SLICE_MAX + V_EPS) {
                return Err(self.invalid(format!(
                    "slice {k}: v_slack {} outside [{V_SLICE_MIN}, {V_SLICE_MAX}]",
                    s.v_slack
                )));
            }
            if k > 0 && !(s.v_slack > self.slices[k - 1].v_slack) {
                return Err(self.invalid(format!(
                    "slice {k}: v_slack {} not strictly above slice {} ({})",
                    s.v_slack,
                    k - 1,
                    self.slices[k - 1].v_slack
                )));
            }
            s.section().map_err(|m| self.invalid(format!("slice {k}: {m}")))?;
        }
        let op = self.op0;
        if ![op.p, op.q, op.v].iter().all(|x| x.is_finite()) {
            return Err(self.invalid("op0 not finite"));
        }
        let k = self.nominal_slice();
        let sec = self.slices[k].section().expect("validated above");
        if !sec.contains(op.p, op.q, MEMBERSHIP_TOL) {
            return Err(self.invalid(format!(
                "op0 ({}, {}) outside slice {k} (v_slack {})",
                op.p, op.q, self.slices[k].v_slack
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        if self.slices.len() == 1 { 2 } else { 3 }
    }

    /// Index of the slice whose voltage is nearest `op0.v`.
    pub fn nominal_slice(&self) -> usize {
        let v = self.op0.v;
        (0..self.slices.len())
            .min_by(|&a, &b| {
                (self.slices[a].v_slack - v)
                    .abs()
                    .total_cmp(&(self.slices[b].v_slack - v).abs())
            })
            .unwrap_or(0)
    }

    pub fn v_range(&self) -> (f64, f64) {
        (self.slices[0].v_slack, self.slices[self.slices.len() - 1].v_slack)
    }

    /// Largest `|Q|` over every slice vertex.
    pub fn max_abs_q(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.polygon.iter().map(|v| v[1].abs()))
            .fold(0.0, f64::max)
    }

    /// Interpolated PQ section at voltage `v`. A single-slice FOR is taken
    /// as valid across the whole slack-voltage range.
    pub fn section_at(&self, v: f64) -> Result<Section> {
        let sections: Vec<Section> = self
            .slices
            .iter()
            .map(|s| s.section().map_err(|m| self.invalid(m)))
            .collect::<Result<_>>()?;
        section_at(&self.slices, &sections, v)
    }

    pub fn contains(&self, p: f64, q: f64, v: f64) -> Result<bool> {
        self.contains_tol(p, q, v, MEMBERSHIP_TOL)
    }

    pub fn contains_tol(&self, p: f64, q: f64, v: f64, tol: f64) -> Result<bool> {
        Ok(self.section_at(v)?.contains(p, q, tol))
    }

    /// Volume of the interpolated solid in pu³.
    pub fn volume(&self) -> Result<f64> {
        stack_volume(&self.slices)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("FOR serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn section_at(slices: &[Slice], sections: &[Section], v: f64) -> Result<Section> {
    let (lo, hi) = if slices.len() == 1 {
        (V_SLICE_MIN, V_SLICE_MAX)
    } else {
        (slices[0].v_slack, slices[slices.len() - 1].v_slack)
    };
    if !(v >= lo - V_EPS && v <= hi + V_EPS) {
        return Err(Error::VoltageOutOfRange { v, lo, hi });
    }
    if slices.len() == 1 {
        return Ok(sections[0].clone());
    }
    let v = v.clamp(lo, hi);
    let k = slices.partition_point(|s| s.v_slack <= v).clamp(1, slices.len() - 1);
    let (va, vb) = (slices[k - 1].v_slack, slices[k].v_slack);
    let t = (v - va) / (vb - va);
    Ok(sections[k - 1].blend(&sections[k], t))
}

/// Volume of a slice stack by the prismatoid rule on every slab.
///
/// Slices may be degenerate (zero area) here, which makes wedge-like
/// solids expressible.
pub fn stack_volume(slices: &[Slice]) -> Result<f64> {
    if slices.len() < 2 {
        return Err(Error::Degenerate("volume needs at least two slices".into()));
    }
    let sections: Vec<Section> = slices
        .iter()
        .map(|s| Section::from_polygon(&s.polygon, false).map_err(Error::Degenerate))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for k in 1..slices.len() {
        let h = slices[k].v_slack - slices[k - 1].v_slack;
        if !(h > 0.0) {
            return Err(Error::Degenerate(format!("zero-height slab between slices {} and {k}", k - 1)));
        }
        let a0 = sections[k - 1].area();
        let a1 = sections[k].area();
        let am = sections[k - 1].blend(&sections[k], 0.5).area();
        total += h / 6.0 * (a0 + 4.0 * am + a1);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment2D {
    pub ki: usize,
    pub p_c_min: f64,
    pub dp_max: f64,
    pub m_up: f64,
    pub m_lo: f64,
    pub q_c_init_up: f64,
    pub q_c_init_lo: f64,
}

impl Segment2D {
    pub fn upper_at(&self, dp: f64) -> f64 {
        self.q_c_init_up + self.m_up * dp
    }

    pub fn lower_at(&self, dp: f64) -> f64 {
        self.q_c_init_lo + self.m_lo * dp
    }

    pub fn area(&self) -> f64 {
        let w0 = self.q_c_init_up - self.q_c_init_lo;
        let w1 = self.upper_at(self.dp_max) - self.lower_at(self.dp_max);
        self.dp_max * (w0 + w1) / 2.0
    }
}

/// Box segment: P extent `[p_c_min, p_c_min + dp_max]`, voltage extent
/// `[v_c_min, v_c_min + dv_max]`, Q between two planes linear in voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment3D {
    pub ki: usize,
    pub li: usize,
    pub p_c_min: f64,
    pub dp_max: f64,
    pub v_c_min: f64,
    pub dv_max: f64,
    pub m_up: f64,
    pub m_lo: f64,
    pub q_c_init_up: f64,
    pub q_c_init_lo: f64,
}

impl Segment3D {
    pub fn upper_at(&self, dv: f64) -> f64 {
        self.q_c_init_up + self.m_up * dv
    }

    pub fn lower_at(&self, dv: f64) -> f64 {
        self.q_c_init_lo + self.m_lo * dv
    }

    pub fn volume(&self) -> f64 {
        let w0 = self.q_c_init_up - self.q_c_init_lo;
        let w1 = self.upper_at(self.dv_max) - self.lower_at(self.dv_max);
        self.dp_max * self.dv_max * (w0 + w1) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dims", rename_all = "lowercase")]
pub enum Segments {
    #[serde(rename = "2")]
    Planar { slice: usize, v_slack: f64, segments: Vec<Segment2D> },
    /// Cells in row-major order: index `li * n_p + ki`.
    #[serde(rename = "3")]
    Volumetric { n_p: usize, n_v: usize, cells: Vec<Segment3D> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedFor {
    pub bus_id: usize,
    pub segments: Segments,
    pub c_max: f64,
}

impl SegmentedFor {
    pub fn dims(&self) -> usize {
        match self.segments {
            Segments::Planar { .. } => 2,
            Segments::Volumetric { .. } => 3,
        }
    }

    /// Sum of the convex segment volumes (areas for a planar segmentation).
    pub fn volume(&self) -> f64 {
        match &self.segments {
            Segments::Planar { segments, .. } => segments.iter().map(Segment2D::area).sum(),
            Segments::Volumetric { cells, .. } => cells.iter().map(Segment3D::volume).sum(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("segmentation serializes")
    }
}

/// Largest linear band `l ≤ u` inscribed between sampled bounds on `[a, b]`.
///
/// `points` holds `(x, upper, lower)` triples; both bounds are taken as
/// piecewise linear between consecutive samples, so constraining the band
/// at every sample keeps it inside on the whole interval. Returns
/// `(u_a, u_b, l_a, l_b)` maximizing the band area, or the smallest
/// crossing deficit when no band exists.
fn inscribe_band(points: &[(f64, f64, f64)], a: f64, b: f64) -> std::result::Result<[f64; 4], f64> {
    let inf = f64::INFINITY;
    let mut lp = LpModel::new();
    let ua = lp.add_var("ua", -inf, inf, -1.0);
    let ub = lp.add_var("ub", -inf, inf, -1.0);
    let la = lp.add_var("la", -inf, inf, 1.0);
    let lb = lp.add_var("lb", -inf, inf, 1.0);
    let w = b - a;
    for &(x, up, lo) in points {
        let lam = ((x - a) / w).clamp(0.0, 1.0);
        lp.add_constraint("up", vec![(ua, 1.0 - lam), (ub, lam)], Sense::Le, up);
        lp.add_constraint("lo", vec![(la, 1.0 - lam), (lb, lam)], Sense::Ge, lo);
    }
    lp.add_constraint("open_a", vec![(ua, 1.0), (la, -1.0)], Sense::Ge, 0.0);
    lp.add_constraint("open_b", vec![(ub, 1.0), (lb, -1.0)], Sense::Ge, 0.0);
    match solve_lp(&lp) {
        Ok(s) if s.status == Status::Optimal => Ok([s.x[ua], s.x[ub], s.x[la], s.x[lb]]),
        _ => {
            // Deficit of the chord construction: lowered upper chord vs raised lower chord.
            let (ya, yb) = (points[0], points[points.len() - 1]);
            let chord = |y0: f64, y1: f64, x: f64| y0 + (y1 - y0) * (x - a) / w;
            let du = points.iter().map(|p| chord(ya.1, yb.1, p.0) - p.1).fold(0.0, f64::max);
            let dl = points.iter().map(|p| p.2 - chord(ya.2, yb.2, p.0)).fold(0.0, f64::max);
            let d0 = (ya.2 + dl) - (ya.1 - du);
            let d1 = (yb.2 + dl) - (yb.1 - du);
            Err(d0.max(d1).max(f64::MIN_POSITIVE))
        }
    }
}

/// Breakpoints at slope sign changes of the chains, thinned or uniformly
/// refined (by halving the widest piece) to exactly `count` pieces.
fn p_breakpoints(chains: &[&[[f64; 2]]], pmin: f64, pmax: f64, count: usize) -> Vec<f64> {
    let w = pmax - pmin;
    let mut cand = Vec::new();
    for chain in chains {
        for k in 1..chain.len().saturating_sub(1) {
            let s0 = chain[k][1] - chain[k - 1][1];
            let s1 = chain[k + 1][1] - chain[k][1];
            if s0 * s1 < 0.0 {
                cand.push(chain[k][0]);
            }
        }
    }
    cand.retain(|&p| p > pmin + 1e-6 * w && p < pmax - 1e-6 * w);
    cand.sort_by(f64::total_cmp);
    cand.dedup_by(|a, b| (*a - *b).abs() < 1e-6 * w);
    let want = count - 1;
    if cand.len() > want {
        let len = cand.len();
        cand = (0..want).map(|i| cand[(i + 1) * len / (want + 1)]).collect();
        cand.dedup();
    }
    let mut cuts = vec![pmin];
    cuts.extend(cand);
    cuts.push(pmax);
    while cuts.len() < count + 1 {
        let (k, _) = cuts
            .windows(2)
            .enumerate()
            .map(|(k, p)| (k, p[1] - p[0]))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 + 1e-15 { cur } else { best });
        let mid = (cuts[k] + cuts[k + 1]) / 2.0;
        cuts.insert(k + 1, mid);
    }
    cuts
}

fn c_max_for(fr: &PqvFor) -> f64 {
    2.0 * fr.max_abs_q()
}

/// Segments one slice into `k_max` inscribed trapezoids tiling its P extent.
pub fn segment_2d(fr: &PqvFor, slice: usize, k_max: usize) -> Result<SegmentedFor> {
    if k_max == 0 {
        return Err(Error::Model("k_max must be at least 1".into()));
    }
    let sl = fr
        .slices
        .get(slice)
        .ok_or_else(|| Error::Model(format!("slice {slice} does not exist")))?;
    let sec = sl.section().map_err(|m| fr.invalid(m))?;
    let cuts = p_breakpoints(&[&sec.upper, &sec.lower], sec.pmin(), sec.pmax(), k_max);
    let mut segments = Vec::with_capacity(k_max);
    for (ki, w) in cuts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let mut xs: Vec<f64> = sec
            .upper
            .iter()
            .chain(&sec.lower)
            .map(|v| v[0])
            .filter(|&p| p > a && p < b)
            .collect();
        xs.push(a);
        xs.push(b);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let pts: Vec<(f64, f64, f64)> = xs.iter().map(|&p| (p, sec.upper_at(p), sec.lower_at(p))).collect();
        let [ua, ub, la, lb] = inscribe_band(&pts, a, b).map_err(|deficit| Error::InscribedDeficit {
            bus: fr.bus_id,
            segment: ki,
            deficit,
        })?;
        let dp = b - a;
        segments.push(Segment2D {
            ki,
            p_c_min: a,
            dp_max: dp,
            m_up: (ub - ua) / dp,
            m_lo: (lb - la) / dp,
            q_c_init_up: ua,
            q_c_init_lo: la,
        });
    }
    Ok(SegmentedFor {
        bus_id: fr.bus_id,
        segments: Segments::Planar {
            slice,
            v_slack: sl.v_slack,
            segments,
        },
        c_max: c_max_for(fr),
    })
}

/// Segments the slice nearest to `op0.v`.
pub fn segment_2d_nominal(fr: &PqvFor, k_max: usize) -> Result<SegmentedFor> {
    segment_2d(fr, fr.nominal_slice(), k_max)
}

/// Box segmentation of a PQ(V) region: `2·k_max` active-power pieces by
/// `l_max` uniform voltage pieces. Within a box the Q bounds ignore their
/// variation along P and vary linearly in voltage only.
pub fn segment_3d(fr: &PqvFor, k_max: usize, l_max: usize) -> Result<SegmentedFor> {
    if k_max == 0 || l_max == 0 {
        return Err(Error::Model("k_max and l_max must be at least 1".into()));
    }
    let sections: Vec<Section> = fr
        .slices
        .iter()
        .map(|s| s.section().map_err(|m| fr.invalid(m)))
        .collect::<Result<_>>()?;
    let (v_lo, v_hi) = if fr.slices.len() == 1 {
        (V_SLICE_MIN, V_SLICE_MAX)
    } else {
        fr.v_range()
    };
    let p_lo = sections.iter().map(Section::pmin).fold(f64::NEG_INFINITY, f64::max);
    let p_hi = sections.iter().map(Section::pmax).fold(f64::INFINITY, f64::min);
    if !(p_hi > p_lo) {
        return Err(fr.invalid("slices share no common P extent"));
    }
    let chains: Vec<&[[f64; 2]]> = sections.iter().flat_map(|s| [&s.upper[..], &s.lower[..]]).collect();
    let n_p = 2 * k_max;
    let p_cuts = p_breakpoints(&chains, p_lo, p_hi, n_p);
    let v_cuts: Vec<f64> = (0..=l_max)
        .map(|l| v_lo + (v_hi - v_lo) * l as f64 / l_max as f64)
        .collect();

    let mut cells = Vec::with_capacity(n_p * l_max);
    for li in 0..l_max {
        let (va, vb) = (v_cuts[li], v_cuts[li + 1]);
        let mut vs: Vec<f64> = fr
            .slices
            .iter()
            .map(|s| s.v_slack)
            .filter(|&v| v > va && v < vb)
            .collect();
        vs.push(va);
        vs.push(vb);
        vs.sort_by(f64::total_cmp);
        let secs: Vec<Section> = vs
            .iter()
            .map(|&v| section_at(&fr.slices, &sections, v))
            .collect::<Result<_>>()?;
        for ki in 0..n_p {
            let (a, b) = (p_cuts[ki], p_cuts[ki + 1]);
            let pts: Vec<(f64, f64, f64)> = vs
                .iter()
                .zip(&secs)
                .map(|(&v, s)| (v, s.min_upper(a, b), s.max_lower(a, b)))
                .collect();
            let [ua, ub, la, lb] = inscribe_band(&pts, va, vb).map_err(|deficit| Error::InscribedDeficit {
                bus: fr.bus_id,
                segment: li * n_p + ki,
                deficit,
            })?;
            let dv = vb - va;
            cells.push(Segment3D {
                ki,
                li,
                p_c_min: a,
                dp_max: b - a,
                v_c_min: va,
                dv_max: dv,
                m_up: (ub - ua) / dv,
                m_lo: (lb - la) / dv,
                q_c_init_up: ua,
                q_c_init_lo: la,
            });
        }
    }
    Ok(SegmentedFor {
        bus_id: fr.bus_id,
        segments: Segments::Volumetric {
            n_p,
            n_v: l_max,
            cells,
        },
        c_max: c_max_for(fr),
    })
}

pub fn parse_for(text: &str, origin: &str) -> Result<PqvFor> {
    let f: PqvFor = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    f.validate()?;
    Ok(f)
}

pub fn load_for(path: &Path) -> Result<PqvFor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_for(&text, &path.display().to_string())
}

/// Placement and size of a synthetic FOR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthForParams {
    /// Operating point; the polygons are laid out around it.
    pub op0: OperatingPoint,
    /// Full P extent in pu.
    pub p_width: f64,
    /// Capacitive (upper) reactive reach in pu.
    pub q_cap: f64,
    /// Inductive (lower) reactive reach in pu.
    pub q_ind: f64,
}

impl Default for SynthForParams {
    fn default() -> Self {
        SynthForParams {
            op0: OperatingPoint { p: 0.0, q: 0.0, v: 1.0 },
            p_width: 0.4,
            q_cap: 0.3,
            q_ind: 0.25,
        }
    }
}

pub fn synth_for(bus_id: usize, seed: u64, n_slices: usize) -> PqvFor {
    synth_for_with(bus_id, seed, n_slices, &SynthForParams::default())
}

/// Deterministic notched, non-convex polygon stack. The capacitive reach
/// shrinks as the slack voltage rises, most strongly at low P; the
/// inductive reach shrinks as the slack voltage falls. The P extent does
/// not depend on the voltage.
pub fn synth_for_with(bus_id: usize, seed: u64, n_slices: usize, params: &SynthForParams) -> PqvFor {
    let n_slices = n_slices.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (bus_id as u64).wrapping_mul(0x9e37_79b9));
    let notch_at = rng.random_range(0.28..0.42);
    let notch_depth = rng.random_range(0.22..0.32);
    let bump_at = rng.random_range(0.6..0.74);
    let bump_height = rng.random_range(0.25..0.35);
    let shrink = rng.random_range(0.45..0.6);
    let skew = rng.random_range(-0.1..0.1);

    let op = params.op0;
    let p0 = op.p - params.p_width * (0.5 + skew);
    let width = params.p_width;

    let tri = |s: f64, at: f64, half: f64| (1.0 - (s - at).abs() / half).max(0.0);
    let mut samples: Vec<f64> = (0..=16).map(|k| k as f64 / 16.0).collect();
    samples.extend([notch_at - 0.1, notch_at, notch_at + 0.1, bump_at - 0.09, bump_at, bump_at + 0.09]);
    samples.sort_by(f64::total_cmp);
    samples.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let vs: Vec<f64> = if n_slices == 1 {
        vec![1.0]
    } else {
        (0..n_slices)
            .map(|k| V_SLICE_MIN + (V_SLICE_MAX - V_SLICE_MIN) * k as f64 / (n_slices - 1) as f64)
            .map(|v| (v * 1e9).round() / 1e9)
            .collect()
    };
    let slices = vs
        .iter()
        .map(|&v| {
            let tau = (v - V_SLICE_MIN) / (V_SLICE_MAX - V_SLICE_MIN);
            let upper = |s: f64| {
                let base = 0.35 + 0.65 * (std::f64::consts::PI * (0.1 + 0.8 * s)).sin();
                let cap = 1.0 - shrink * tau * (1.0 - s);
                op.q + params.q_cap * (base * cap - notch_depth * tri(s, notch_at, 0.1))
            };
            let lower = |s: f64| {
                let base = 0.3 + 0.7 * (std::f64::consts::PI * (0.1 + 0.8 * s)).sin();
                let ind = 1.0 - 0.35 * (1.0 - tau);
                op.q - params.q_ind * (base * ind - bump_height * tri(s, bump_at, 0.09))
            };
            let mut polygon: Vec<[f64; 2]> = samples.iter().map(|&s| [p0 + width * s, lower(s)]).collect();
            polygon.extend(samples.iter().rev().map(|&s| [p0 + width * s, upper(s)]));
            for vtx in polygon.iter_mut() {
                vtx[0] = (vtx[0] * 1e9).round() / 1e9;
                vtx[1] = (vtx[1] * 1e9).round() / 1e9;
            }
            Slice { v_slack: v, polygon }
        })
        .collect();
    PqvFor {
        bus_id,
        op0: op,
        slices,
    }
}
