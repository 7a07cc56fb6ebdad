//! Bowyer–Watson Delaunay triangulation with a polygon filter.
//!
//! Triangles whose centroid falls outside the domain are dropped after
//! triangulation, which stands in for constrained edge insertion on the
//! near-convex domains used here. Co-circular ties are resolved so the
//! shared diagonal touches the lowest node index of the quadrilateral.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::polygon::{bounds, orient, Polygon};

/// Triangles (counter-clockwise index triples) and the deduplicated edge
/// list derived from them, smaller index first, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<[u32; 2]>,
}

/// Delaunay triangulation of `points` restricted to `boundary`.
pub fn delaunay_triangulate(points: &[[f64; 2]], boundary: &Polygon) -> Result<Triangulation> {
    if !boundary.is_simple() {
        return Err(Error::Geometry("boundary polygon is not simple".into()));
    }
    delaunay_filtered(points, |c| boundary.contains(c))
}

/// Delaunay triangulation keeping only triangles whose centroid
/// satisfies `keep`.
pub fn delaunay_filtered(points: &[[f64; 2]], keep: impl Fn([f64; 2]) -> bool) -> Result<Triangulation> {
    let all = delaunay_raw(points)?;
    let triangles: Vec<[usize; 3]> = all.into_iter().filter(|t| keep(centroid(points, t))).collect();
    let edges = edges_from_triangles(&triangles);
    Ok(Triangulation { triangles, edges })
}

pub fn centroid(points: &[[f64; 2]], t: &[usize; 3]) -> [f64; 2] {
    let [a, b, c] = t.map(|i| points[i]);
    [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
}

pub fn edges_from_triangles(triangles: &[[usize; 3]]) -> Vec<[u32; 2]> {
    let mut edges: Vec<[u32; 2]> = triangles
        .iter()
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])].map(|(a, b)| [a.min(b) as u32, a.max(b) as u32]))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `(a, b, c)`.
pub fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

#[derive(Clone, Copy)]
struct Tri {
    v: [usize; 3],
    alive: bool,
}

/// Unfiltered Delaunay triangulation of the convex hull of `points`.
pub fn delaunay_raw(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Geometry(format!("need at least 3 points, got {n}")));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::Geometry("non-finite point coordinate".into()));
    }
    let (lo, hi) = bounds(points);
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    if span <= 0.0 {
        return Err(Error::Geometry("all points coincide".into()));
    }
    let far = points
        .iter()
        .map(|&p| orient(points[0], points[1], p).abs())
        .fold(0.0, f64::max);
    let far = far.max(
        points
            .iter()
            .map(|&p| orient(points[0], points[n - 1], p).abs())
            .fold(0.0, f64::max),
    );
    if far <= 1e-14 * span * span {
        return Err(Error::Geometry("all points are collinear".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| points[i].partial_cmp(&points[j]).unwrap_or(std::cmp::Ordering::Equal));
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(Error::Geometry(format!("duplicate points {} and {}", w[0], w[1])));
        }
    }
    // insertion in index order keeps results independent of coordinates
    // sorting ties
    order.sort_unstable();

    let cx = 0.5 * (lo[0] + hi[0]);
    let cy = 0.5 * (lo[1] + hi[1]);
    let m = 20.0 * span;
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.push([cx - 2.0 * m, cy - m]);
    pts.push([cx + 2.0 * m, cy - m]);
    pts.push([cx, cy + 2.0 * m]);
    let sup = [n, n + 1, n + 2];

    let mut tris = vec![Tri { v: sup, alive: true }];
    let mut live = 1usize;
    let mut bad: Vec<usize> = Vec::new();
    let mut boundary: Vec<(usize, usize)> = Vec::new();
    let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();

    for &p in &order {
        let pp = pts[p];
        bad.clear();
        for (ti, t) in tris.iter().enumerate() {
            if t.alive && incircle(pts[t.v[0]], pts[t.v[1]], pts[t.v[2]], pp) > 0.0 {
                bad.push(ti);
            }
        }
        if bad.is_empty() {
            // numerically on a circle boundary everywhere; fall back to the
            // containing triangle
            if let Some(ti) = tris.iter().position(|t| t.alive && contains(&pts, &t.v, pp)) {
                bad.push(ti);
            } else {
                return Err(Error::Geometry(format!("could not locate point {p}")));
            }
        }
        edge_count.clear();
        for &ti in &bad {
            let v = tris[ti].v;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        boundary.clear();
        for &ti in &bad {
            let v = tris[ti].v;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                if edge_count[&(a.min(b), a.max(b))] == 1 {
                    boundary.push((a, b));
                }
            }
            tris[ti].alive = false;
            live -= 1;
        }
        for &(a, b) in &boundary {
            let mut v = [a, b, p];
            if orient(pts[v[0]], pts[v[1]], pts[v[2]]) < 0.0 {
                v.swap(0, 1);
            }
            tris.push(Tri { v, alive: true });
            live += 1;
        }
        if tris.len() > 4 * live + 64 {
            tris.retain(|t| t.alive);
        }
    }

    let mut out: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| t.alive && t.v.iter().all(|&i| i < n))
        .map(|t| t.v)
        .collect();
    // drop degenerate slivers formed by exactly collinear triples
    out.retain(|t| orient(points[t[0]], points[t[1]], points[t[2]]) > 0.0);
    resolve_cocircular(points, &mut out);
    for t in &mut out {
        // canonical rotation: smallest index first, orientation kept
        let k = (0..3).min_by_key(|&k| t[k]).unwrap_or(0);
        t.rotate_left(k);
    }
    out.sort_unstable();
    Ok(out)
}

fn contains(pts: &[[f64; 2]], v: &[usize; 3], p: [f64; 2]) -> bool {
    let [a, b, c] = v.map(|i| pts[i]);
    orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
}

fn cocircular(points: &[[f64; 2]], t: &[usize; 3], d: usize) -> bool {
    let [a, b, c] = t.map(|i| points[i]);
    let q = points[d];
    let scale = [a, b, c]
        .iter()
        .map(|p| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
        .fold(0.0, f64::max);
    incircle(a, b, c, q).abs() <= 1e-10 * scale.powi(4)
}

/// Flips co-circular diagonals so each touches the lowest index of its
/// quadrilateral.
fn resolve_cocircular(points: &[[f64; 2]], tris: &mut [[usize; 3]]) {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (ti, t) in tris.iter().enumerate() {
        for k in 0..3 {
            owners.entry(key(t[k], t[(k + 1) % 3])).or_default().push(ti);
        }
    }
    let budget = 4 * tris.len() + 16;
    let mut flips = 0;
    let mut changed = true;
    while changed && flips < budget {
        changed = false;
        let mut edges: Vec<(usize, usize)> = owners.iter().filter(|(_, o)| o.len() == 2).map(|(&e, _)| e).collect();
        edges.sort_unstable();
        for e in edges {
            let Some(o) = owners.get(&e) else { continue };
            if o.len() != 2 {
                continue;
            }
            let (t1, t2) = (o[0], o[1]);
            let opp = |t: &[usize; 3]| *t.iter().find(|&&v| v != e.0 && v != e.1).unwrap();
            let c = opp(&tris[t1]);
            let d = opp(&tris[t2]);
            let lowest = e.0.min(e.1).min(c).min(d);
            if lowest == e.0 || lowest == e.1 {
                continue;
            }
            if !cocircular(points, &tris[t1], d) {
                continue;
            }
            // the flip is only valid for a strictly convex quadrilateral
            let (a, b) = e;
            let side_a = orient(points[c], points[d], points[a]);
            let side_b = orient(points[c], points[d], points[b]);
            if !(side_a * side_b < 0.0) {
                continue;
            }
            let mut n1 = [c, d, a];
            let mut n2 = [d, c, b];
            for t in [&mut n1, &mut n2] {
                if orient(points[t[0]], points[t[1]], points[t[2]]) < 0.0 {
                    t.swap(0, 1);
                }
            }
            for (ti, tri) in [(t1, tris[t1]), (t2, tris[t2])] {
                for k in 0..3 {
                    if let Some(list) = owners.get_mut(&key(tri[k], tri[(k + 1) % 3])) {
                        list.retain(|&x| x != ti);
                    }
                }
            }
            owners.remove(&e);
            tris[t1] = n1;
            tris[t2] = n2;
            for (ti, tri) in [(t1, n1), (t2, n2)] {
                for k in 0..3 {
                    owners.entry(key(tri[k], tri[(k + 1) % 3])).or_default().push(ti);
                }
            }
            flips += 1;
            changed = true;
        }
    }
}
