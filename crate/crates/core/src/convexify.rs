//! Convex over-approximation of a PQ(V) region: 3D hull, triangulated
//! facets and the equivalent half-space inequalities.

use std::collections::{BTreeMap, BTreeSet};

use robust::{orient2d, orient3d, Coord, Coord3D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PqvFor, V_SLICE_MAX, V_SLICE_MIN};

pub type Point3 = [f64; 3];

/// Tolerance for merging coplanar facet planes (on unit normals and offsets).
pub const DEDUP_TOL: f64 = 1e-9;

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangulatedHull {
    pub vertices: Vec<Point3>,
    /// Counter-clockwise seen from outside.
    pub facets: Vec<[usize; 3]>,
    pub volume: f64,
}

impl TriangulatedHull {
    pub fn centroid(&self) -> Point3 {
        let n = self.vertices.len() as f64;
        let s = self.vertices.iter().fold([0.0; 3], |acc, v| [acc[0] + v[0], acc[1] + v[1], acc[2] + v[2]]);
        scale(s, 1.0 / n)
    }

    pub fn n_edges(&self) -> usize {
        let mut edges = BTreeSet::new();
        for f in &self.facets {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// `V - E + F`, which is 2 for a closed convex polyhedron.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.n_edges() as i64 + self.facets.len() as i64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hull serializes")
    }
}

/// Rows `n · x ≤ d` over `x = (p, q, v)` in absolute pu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceSet {
    pub bus_id: usize,
    pub rows: Vec<[f64; 4]>,
}

impl HalfSpaceSet {
    /// Largest row excess `n · x − d` (negative strictly inside).
    pub fn max_excess(&self, x: Point3) -> f64 {
        self.rows
            .iter()
            .map(|r| r[0] * x[0] + r[1] * x[1] + r[2] * x[2] - r[3])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: Point3, tol: f64) -> bool {
        self.max_excess(x) <= tol
    }

    /// Scales the region about `center` by `s` (each offset moves towards
    /// the plane through `center`).
    pub fn scaled(&self, center: Point3, s: f64) -> HalfSpaceSet {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let nc = r[0] * center[0] + r[1] * center[1] + r[2] * center[2];
                [r[0], r[1], r[2], nc + s * (r[3] - nc)]
            })
            .collect();
        HalfSpaceSet { bus_id: self.bus_id, rows }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("half-spaces serialize")
    }
}

/// Builds the outward row of the triangle `a, b, c`: normal `AB × BC`,
/// offset through `a`, flipped if `interior` would violate it.
pub fn facet_half_space(a: Point3, b: Point3, c: Point3, interior: Point3) -> Result<[f64; 4]> {
    let n = cross(sub(b, a), sub(c, b));
    let len = norm(n);
    let span = norm(sub(b, a)).max(norm(sub(c, b))).max(norm(sub(c, a)));
    if !(len > 1e-14 * span * span) || span == 0.0 {
        return Err(Error::Degenerate(format!("zero-area facet {a:?} {b:?} {c:?}")));
    }
    let mut n = scale(n, 1.0 / len);
    let mut d = dot(n, a);
    if dot(n, interior) > d {
        n = scale(n, -1.0);
        d = -d;
    }
    Ok([n[0], n[1], n[2], d])
}

/// One row per facet plane. Triangles of the same face are merged by an
/// exact coplanarity test, the row taken from the largest of them.
pub fn half_spaces(hull: &TriangulatedHull, bus_id: usize) -> Result<HalfSpaceSet> {
    let c = hull.centroid();
    let tri = |f: &[usize; 3]| f.map(|i| hull.vertices[i]);
    let area = |f: &[usize; 3]| {
        let [a, b, cc] = tri(f);
        norm(cross(sub(b, a), sub(cc, a)))
    };
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for group in coplanar_groups(&hull.vertices, &hull.facets) {
        let best = group
            .iter()
            .max_by(|a, b| area(a).total_cmp(&area(b)))
            .expect("groups are non-empty");
        let [a, b, cc] = tri(best);
        let row = facet_half_space(a, b, cc, c)?;
        if !rows.iter().any(|r| (0..4).all(|k| (r[k] - row[k]).abs() <= DEDUP_TOL)) {
            rows.push(row);
        }
    }
    Ok(HalfSpaceSet { bus_id, rows })
}

fn c3(p: Point3) -> Coord3D<f64> {
    Coord3D { x: p[0], y: p[1], z: p[2] }
}

/// Exact sign of the side of `d` relative to the plane through `a, b, c`:
/// positive when `a, b, c` appear clockwise seen from `d`.
fn orient(a: Point3, b: Point3, c: Point3, d: Point3) -> f64 {
    orient3d(c3(a), c3(b), c3(c), c3(d))
}

fn coplanar(pts: &[Point3], f: &[usize; 3], g: &[usize; 3]) -> bool {
    let [a, b, c] = f.map(|i| pts[i]);
    g.iter().all(|&i| orient(a, b, c, pts[i]) == 0.0)
}

/// Groups facets lying in one plane.
fn coplanar_groups(pts: &[Point3], facets: &[[usize; 3]]) -> Vec<Vec<[usize; 3]>> {
    let mut groups: Vec<Vec<[usize; 3]>> = Vec::new();
    for f in facets {
        match groups.iter_mut().find(|g| coplanar(pts, &g[0], f)) {
            Some(g) => g.push(*f),
            None => groups.push(vec![*f]),
        }
    }
    groups
}

/// Andrew's monotone chain with exact turns; drops collinear points.
fn hull_2d(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let c2 = |p: [f64; 2]| Coord { x: p[0], y: p[1] };
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| orient2d(c2(o), c2(a), c2(b));
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = out.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while out.len() >= start + 2 && turn(out[out.len() - 2], out[out.len() - 1], p) <= 0.0 {
                out.pop();
            }
            out.push(p);
        }
        out.pop();
    }
    out
}

/// Hull input cloud of a FOR: every slice vertex at its slack voltage.
/// A single-slice FOR is extruded over the whole slack-voltage range.
pub fn for_point_cloud(fr: &PqvFor) -> Vec<Point3> {
    let mut out = Vec::new();
    let mut push = |poly: &[[f64; 2]], v: f64| out.extend(poly.iter().map(|x| [x[0], x[1], v]));
    if fr.slices.len() == 1 {
        push(&fr.slices[0].polygon, V_SLICE_MIN);
        push(&fr.slices[0].polygon, V_SLICE_MAX);
    } else {
        for s in &fr.slices {
            push(&s.polygon, s.v_slack);
        }
    }
    out
}

pub fn hull_of_for(fr: &PqvFor) -> Result<TriangulatedHull> {
    convex_hull(&for_point_cloud(fr))
}

/// Over-approximated volume of the hull relative to the slice stack, in percent.
pub fn over_approximation(fr: &PqvFor, hull: &TriangulatedHull) -> Result<f64> {
    if fr.slices.len() < 2 {
        return Err(Error::Degenerate("over-approximation needs a voltage-indexed stack".into()));
    }
    let v = fr.volume()?;
    if !(v > 0.0) {
        return Err(Error::Degenerate(format!("bus {}: FOR volume is zero", fr.bus_id)));
    }
    Ok(100.0 * (hull.volume - v) / v)
}

/// 3D convex hull of `points`.
///
/// Points sharing a voltage coordinate are first reduced to their planar
/// hull, then inserted incrementally in lexicographic order. Vertices
/// left in the interior of a face or edge are removed by a second pass,
/// so the vertex set is exactly the extreme points.
pub fn convex_hull(points: &[Point3]) -> Result<TriangulatedHull> {
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("non-finite hull input".into()));
    }
    let mut by_v: BTreeMap<u64, Vec<[f64; 2]>> = BTreeMap::new();
    for p in points {
        by_v.entry((p[2] + 0.0).to_bits()).or_default().push([p[0], p[1]]);
    }
    let mut pts: Vec<Point3> = by_v
        .into_iter()
        .flat_map(|(bits, pq)| {
            let v = f64::from_bits(bits);
            hull_2d(pq).into_iter().map(move |x| [x[0], x[1], v])
        })
        .collect();
    lex_sort(&mut pts);
    let first = incremental(&pts)?;
    let mut extreme: Vec<Point3> = (0..first.vertices.len())
        .filter(|&i| is_extreme(&first, i))
        .map(|i| first.vertices[i])
        .collect();
    if extreme.len() == first.vertices.len() {
        return Ok(first);
    }
    lex_sort(&mut extreme);
    incremental(&extreme)
}

fn lex_sort(pts: &mut Vec<Point3>) {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2])));
    pts.dedup();
}

/// A vertex is extreme when its incident facets lie in at least three
/// distinct planes; otherwise it sits inside a face or on an edge.
fn is_extreme(h: &TriangulatedHull, i: usize) -> bool {
    let incident: Vec<[usize; 3]> = h.facets.iter().filter(|f| f.contains(&i)).copied().collect();
    coplanar_groups(&h.vertices, &incident).len() >= 3
}

fn incremental(pts: &[Point3]) -> Result<TriangulatedHull> {
    let n = pts.len();
    if n < 4 {
        return Err(Error::Degenerate(format!("hull needs at least 4 distinct points, got {n}")));
    }
    // Initial simplex from the farthest-point construction; the rank
    // checks are exact.
    let i0 = 0;
    let i1 = (1..n).max_by(|&a, &b| norm(sub(pts[a], pts[i0])).total_cmp(&norm(sub(pts[b], pts[i0])))).unwrap();
    if pts[i1] == pts[i0] {
        return Err(Error::Degenerate("hull input has affine rank 0".into()));
    }
    let line = sub(pts[i1], pts[i0]);
    let i2 = (0..n)
        .max_by(|&a, &b| norm(cross(line, sub(pts[a], pts[i0]))).total_cmp(&norm(cross(line, sub(pts[b], pts[i0])))))
        .unwrap();
    let collinear = |p: Point3| {
        let c = |u: usize, w: usize| {
            let m = |x: Point3| Coord { x: x[u], y: x[w] };
            orient2d(m(pts[i0]), m(pts[i1]), m(p)) == 0.0
        };
        c(0, 1) && c(0, 2) && c(1, 2)
    };
    if collinear(pts[i2]) {
        return Err(Error::Degenerate("hull input is collinear (affine rank 1)".into()));
    }
    let pn = cross(line, sub(pts[i2], pts[i0]));
    let i3 = (0..n)
        .max_by(|&a, &b| dot(pn, sub(pts[a], pts[i0])).abs().total_cmp(&dot(pn, sub(pts[b], pts[i0])).abs()))
        .unwrap();
    let side = orient(pts[i0], pts[i1], pts[i2], pts[i3]);
    if side == 0.0 {
        return Err(Error::Degenerate("hull input is coplanar (affine rank 2)".into()));
    }
    // Faces are kept counter-clockwise seen from outside, so a point is
    // beyond a face exactly when `orient` is negative.
    let mut faces: Vec<[usize; 3]> = if side > 0.0 {
        vec![[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i0, i2, i3]]
    } else {
        vec![[i0, i2, i1], [i0, i1, i3], [i1, i2, i3], [i0, i3, i2]]
    };
    let simplex = [i0, i1, i2, i3];

    for (p, &x) in pts.iter().enumerate() {
        if simplex.contains(&p) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| orient(pts[f[0]], pts[f[1]], pts[f[2]], x) < 0.0)
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges = BTreeSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, &v)| v) {
            for k in 0..3 {
                edges.insert((f[k], f[(k + 1) % 3]));
            }
        }
        let horizon: Vec<(usize, usize)> = edges.iter().copied().filter(|&(a, b)| !edges.contains(&(b, a))).collect();
        faces = faces.into_iter().zip(visible).filter(|(_, v)| !v).map(|(f, _)| f).collect();
        faces.extend(horizon.into_iter().map(|(a, b)| [a, b, p]));
    }

    // Compact the vertex list to the referenced points, keeping input order.
    let used: BTreeSet<usize> = faces.iter().flatten().copied().collect();
    let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let vertices: Vec<Point3> = used.iter().map(|&i| pts[i]).collect();
    let mut facets: Vec<[usize; 3]> = faces
        .iter()
        .map(|f| {
            let v = f.map(|i| remap[&i]);
            // Rotate so the smallest index leads; orientation is kept.
            let k = (0..3).min_by_key(|&k| v[k]).unwrap();
            [v[k], v[(k + 1) % 3], v[(k + 2) % 3]]
        })
        .collect();
    facets.sort();
    let mut hull = TriangulatedHull {
        vertices,
        facets,
        volume: 0.0,
    };
    let c = hull.centroid();
    hull.volume = hull
        .facets
        .iter()
        .map(|f| {
            let [a, b, cc] = f.map(|i| sub(hull.vertices[i], c));
            dot(a, cross(b, cc)) / 6.0
        })
        .sum();
    Ok(hull)
}
