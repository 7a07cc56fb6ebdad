//! Simple closed polygons with per-edge boundary labels.

use crate::error::{Error, Result};
use crate::mesh::NodeType;

/// A closed polygon. Edge `i` joins vertex `i` to vertex `i + 1`
/// (wrapping) and carries the node type given to boundary nodes placed
/// on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
    pub edge_types: Vec<NodeType>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>, edge_types: Vec<NodeType>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Geometry("polygon needs at least 3 vertices".into()));
        }
        if edge_types.len() != vertices.len() {
            return Err(Error::Geometry(format!(
                "{} edge labels for {} edges",
                edge_types.len(),
                vertices.len()
            )));
        }
        let poly = Polygon { vertices, edge_types };
        if !poly.is_simple() {
            return Err(Error::Geometry("polygon is not simple".into()));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle; edges labelled bottom, right, top, left.
    pub fn rectangle(min: [f64; 2], max: [f64; 2], labels: [NodeType; 4]) -> Result<Self> {
        Polygon::new(vec![min, [max[0], min[1]], max, [min[0], max[1]]], labels.to_vec())
    }

    pub fn unit_square() -> Self {
        Polygon::rectangle([0.0, 0.0], [1.0, 1.0], [NodeType::Wall; 4]).expect("valid square")
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.vertices[i], self.vertices[(i + 1) % self.len()])
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                dist(a, b)
            })
            .sum()
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        bounds(&self.vertices)
    }

    /// Even-odd point containment. Points exactly on an edge may go
    /// either way.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        point_in_polygon(&self.vertices, p)
    }

    /// Distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                segment_distance(p, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_simple(&self) -> bool {
        is_simple(&self.vertices)
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn bounds(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    (lo, hi)
}

pub fn signed_area(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

pub fn point_in_polygon(v: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// No two non-adjacent edges intersect, adjacent edges meet only at
/// their shared vertex, and the area is nonzero.
pub fn is_simple(v: &[[f64; 2]]) -> bool {
    let n = v.len();
    if n < 3 || signed_area(v).abs() <= 0.0 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            let (c, d) = (v[j], v[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // collinear overlap folds the boundary back on itself
                let shared = if j == i + 1 { b } else { a };
                let other_a = if j == i + 1 { a } else { b };
                let other_c = if j == i + 1 { d } else { c };
                if orient(other_a, shared, other_c) == 0.0 {
                    let u = [other_a[0] - shared[0], other_a[1] - shared[1]];
                    let w = [other_c[0] - shared[0], other_c[1] - shared[1]];
                    if u[0] * w[0] + u[1] * w[1] > 0.0 {
                        return false;
                    }
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}
