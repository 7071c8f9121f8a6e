//! Poisson sites, Delaunay triangulation and the typical Delaunay cell.
//!
//! The triangulation is built by incremental Bowyer-Watson insertion with
//! ghost triangles on the hull, so points outside the current hull need no
//! super-triangle. Orientation and in-circle tests are exact.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use robust::{incircle, orient2d, Coord};

use crate::error::GeometryError;
use crate::fields::{dist, Point};
use crate::quadrature::GaussLegendre;

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Window {
    /// [-1/2 - margin, 1/2 + margin]^2.
    pub fn centred(margin: f64) -> Self {
        let h = 0.5 + margin;
        Self {
            x0: -h,
            y0: -h,
            x1: h,
            y1: h,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Membership in the observation square (-1/2, 1/2]^2.
#[inline]
pub fn in_unit_cell(p: Point) -> bool {
    p[0] > -0.5 && p[0] <= 0.5 && p[1] > -0.5 && p[1] <= 0.5
}

/// Lexicographic order on coordinates.
#[inline]
pub fn lex_less(p: Point, q: Point) -> bool {
    p[0] < q[0] || (p[0] == q[0] && p[1] < q[1])
}

/// Boundary margin 3 log N / sqrt N.
pub fn default_margin(intensity: f64) -> f64 {
    3.0 * intensity.ln().max(0.0) / intensity.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    pub points: Vec<Point>,
    pub intensity: f64,
    pub window: Window,
}

/// Homogeneous Poisson pattern of the given intensity on [-1/2 - m, 1/2 + m]^2.
pub fn sample_poisson<R: Rng + ?Sized>(
    intensity: f64,
    margin: f64,
    rng: &mut R,
) -> Result<PointPattern, GeometryError> {
    if !(intensity > 0.0 && intensity.is_finite()) {
        return Err(GeometryError::InvalidIntensity(intensity));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(GeometryError::InvalidWindow);
    }
    let window = Window::centred(margin);
    let mean = intensity * window.area();
    let count = Poisson::new(mean)
        .map_err(|_| GeometryError::InvalidIntensity(intensity))?
        .sample(rng) as usize;
    let w = window.x1 - window.x0;
    let h = window.y1 - window.y0;
    let points = (0..count)
        .map(|_| {
            [
                window.x0 + w * rng.random::<f64>(),
                window.y0 + h * rng.random::<f64>(),
            ]
        })
        .collect();
    Ok(PointPattern {
        points,
        intensity,
        window,
    })
}

const GHOST: usize = usize::MAX;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Tri {
    /// Counter-clockwise; a ghost triangle stores GHOST in slot 2 and its
    /// hull edge v0 -> v1 has the exterior on its left.
    v: [usize; 3],
    /// Neighbour across the edge opposite v[i].
    nb: [usize; 3],
    alive: bool,
}

impl Tri {
    fn is_ghost(&self) -> bool {
        self.v[2] == GHOST
    }
}

#[inline]
fn c(p: Point) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

#[inline]
fn orient(a: Point, b: Point, p: Point) -> f64 {
    orient2d(c(a), c(b), c(p))
}

struct Builder<'a> {
    pts: &'a [Point],
    tris: Vec<Tri>,
    free: Vec<usize>,
    last: usize,
}

impl<'a> Builder<'a> {
    fn alloc(&mut self, t: Tri) -> usize {
        if let Some(i) = self.free.pop() {
            self.tris[i] = t;
            i
        } else {
            self.tris.push(t);
            self.tris.len() - 1
        }
    }

    /// Strictly inside the (generalised) circumdisk of triangle t.
    fn in_circumdisk(&self, t: usize, p: Point) -> bool {
        let tri = &self.tris[t];
        if tri.is_ghost() {
            let a = self.pts[tri.v[0]];
            let b = self.pts[tri.v[1]];
            let o = orient(a, b, p);
            if o > 0.0 {
                return true;
            }
            if o < 0.0 {
                return false;
            }
            // On the hull line: inside iff strictly between the endpoints.
            let t_ = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
            let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
            t_ > 0.0 && t_ < len2
        } else {
            let [a, b, cc] = tri.v.map(|i| self.pts[i]);
            incircle(c(a), c(b), c(cc), c(p)) > 0.0
        }
    }

    /// Visibility walk to a triangle whose circumdisk contains p.
    fn locate(&self, p: Point) -> usize {
        let mut t = self.last;
        if self.tris[t].is_ghost() {
            t = self.tris[t].nb[2];
        }
        let mut step = 0usize;
        'walk: loop {
            let tri = self.tris[t];
            if tri.is_ghost() {
                return t;
            }
            for j in 0..3 {
                let i = (j + step) % 3;
                let a = self.pts[tri.v[(i + 1) % 3]];
                let b = self.pts[tri.v[(i + 2) % 3]];
                if orient(a, b, p) < 0.0 {
                    t = tri.nb[i];
                    step += 1;
                    continue 'walk;
                }
            }
            return t;
        }
    }

    fn insert(&mut self, pi: usize) {
        let p = self.pts[pi];
        let seed = self.locate(p);
        let mut cavity = vec![seed];
        let mut visited = vec![seed];
        // (u, w, outside triangle) with the cavity on the left of u -> w
        let mut boundary: Vec<(usize, usize, usize)> = Vec::new();
        let mut head = 0;
        while head < cavity.len() {
            let t = cavity[head];
            head += 1;
            let tri = self.tris[t];
            for i in 0..3 {
                let n = tri.nb[i];
                if visited.contains(&n) {
                    continue;
                }
                if self.in_circumdisk(n, p) {
                    visited.push(n);
                    cavity.push(n);
                } else {
                    boundary.push((tri.v[(i + 1) % 3], tri.v[(i + 2) % 3], n));
                }
            }
        }
        for &t in &cavity {
            self.tris[t].alive = false;
            self.free.push(t);
        }
        // New triangles (u, w, p), rotated so any ghost vertex sits in slot 2.
        let mut created: Vec<usize> = Vec::with_capacity(boundary.len());
        for &(u, w, outside) in &boundary {
            let v = if w == GHOST {
                [pi, u, GHOST]
            } else if u == GHOST {
                [w, pi, GHOST]
            } else {
                [u, w, pi]
            };
            let t = self.alloc(Tri {
                v,
                nb: [NONE; 3],
                alive: true,
            });
            // link across the boundary edge
            let k = (0..3).find(|&k| v[k] == pi).expect("new vertex");
            self.tris[t].nb[k] = outside;
            let out = &mut self.tris[outside];
            for j in 0..3 {
                let a = out.v[(j + 1) % 3];
                let b = out.v[(j + 2) % 3];
                if a == w && b == u {
                    out.nb[j] = t;
                }
            }
            created.push(t);
        }
        // link new triangles to each other through edges incident to p
        for (x, &t) in created.iter().enumerate() {
            for i in 0..3 {
                if self.tris[t].nb[i] != NONE {
                    continue;
                }
                let v = self.tris[t].v;
                let a = v[(i + 1) % 3];
                let b = v[(i + 2) % 3];
                for &s in &created[x + 1..] {
                    let sv = self.tris[s].v;
                    for j in 0..3 {
                        if sv[(j + 1) % 3] == b && sv[(j + 2) % 3] == a {
                            self.tris[t].nb[i] = s;
                            self.tris[s].nb[j] = t;
                        }
                    }
                }
            }
        }
        self.last = *created
            .iter()
            .find(|&&t| !self.tris[t].is_ghost())
            .unwrap_or(&created[0]);
    }
}

/// Hilbert-curve index of (x, y) on a 2^16 grid.
fn hilbert_index(mut x: u32, mut y: u32) -> u64 {
    let n: u32 = 1 << 16;
    let mut d = 0u64;
    let mut s = n / 2;
    while s > 0 {
        let rx = u32::from(x & s > 0);
        let ry = u32::from(y & s > 0);
        d += u64::from(s) * u64::from(s) * u64::from((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = n - 1 - x;
                y = n - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

/// Delaunay triangulation of a planar point set.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub points: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    hull_edges: usize,
}

impl Triangulation {
    /// Unique undirected edges (smaller id first), sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Number of edges on the convex hull.
    pub fn hull_edges(&self) -> usize {
        self.hull_edges
    }

    pub fn circumcenter(&self, t: usize) -> Point {
        let [a, b, cc] = self.triangles[t].map(|i| self.points[i]);
        circumcenter(a, b, cc)
    }

    /// Brute-force check that no vertex lies inside any circumdisk,
    /// with tolerance `rel_tol` times the circumradius.
    pub fn violates_empty_circumdisk(&self, rel_tol: f64) -> Option<(usize, usize)> {
        for (t, tri) in self.triangles.iter().enumerate() {
            let cc = self.circumcenter(t);
            let r = dist(cc, self.points[tri[0]]);
            for (v, &p) in self.points.iter().enumerate() {
                if tri.contains(&v) {
                    continue;
                }
                if dist(cc, p) < r * (1.0 - rel_tol) {
                    return Some((t, v));
                }
            }
        }
        None
    }
}

pub fn circumcenter(a: Point, b: Point, cc: Point) -> Point {
    let bx = b[0] - a[0];
    let by = b[1] - a[1];
    let cx = cc[0] - a[0];
    let cy = cc[1] - a[1];
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    [
        a[0] + (cy * b2 - by * c2) / d,
        a[1] + (bx * c2 - cx * b2) / d,
    ]
}

/// Delaunay triangulation by incremental insertion in Hilbert order.
///
/// Cocircular configurations are resolved so that every diagonal of a
/// cocircular quadrilateral uses its lexicographically smallest vertex;
/// the output depends only on the point set and its order.
pub fn delaunay(points: &[Point]) -> Result<Triangulation, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::TooFewPoints(points.len()));
    }
    if let Some(i) = points
        .iter()
        .position(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(GeometryError::NonFinitePoint(i));
    }
    let mut sorted: Vec<usize> = (0..points.len()).collect();
    sorted.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).expect("finite"));
    if let Some(w) = sorted.windows(2).find(|w| points[w[0]] == points[w[1]]) {
        return Err(GeometryError::DuplicatePoint(w[0].max(w[1])));
    }

    let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in points {
        xmin = xmin.min(p[0]);
        ymin = ymin.min(p[1]);
        xmax = xmax.max(p[0]);
        ymax = ymax.max(p[1]);
    }
    let scale = (xmax - xmin).max(ymax - ymin).max(f64::MIN_POSITIVE);
    let q = |v: f64, lo: f64| (((v - lo) / scale) * 65535.0).round() as u32;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| hilbert_index(q(points[i][0], xmin), q(points[i][1], ymin)));

    // first non-degenerate triangle in insertion order
    let a = order[0];
    let b = order[1];
    let third = order[2..]
        .iter()
        .position(|&i| orient(points[a], points[b], points[i]) != 0.0);
    let Some(pos) = third else {
        return Err(GeometryError::Collinear);
    };
    let cidx = order[2 + pos];
    order.remove(2 + pos);
    let (a, b) = if orient(points[a], points[b], points[cidx]) > 0.0 {
        (a, b)
    } else {
        (b, a)
    };

    let mut builder = Builder {
        pts: points,
        tris: Vec::with_capacity(4 * points.len()),
        free: Vec::new(),
        last: 0,
    };
    // real triangle 0 = (a, b, c); ghosts 1..3 across each edge
    builder.tris.push(Tri {
        v: [a, b, cidx],
        nb: [2, 3, 1],
        alive: true,
    });
    builder.tris.push(Tri {
        v: [b, a, GHOST],
        nb: [3, 2, 0],
        alive: true,
    });
    builder.tris.push(Tri {
        v: [cidx, b, GHOST],
        nb: [1, 3, 0],
        alive: true,
    });
    builder.tris.push(Tri {
        v: [a, cidx, GHOST],
        nb: [2, 1, 0],
        alive: true,
    });
    for &i in order.iter().skip(2) {
        if i == a || i == b {
            continue;
        }
        builder.insert(i);
    }

    let mut triangles = Vec::with_capacity(2 * points.len());
    let mut hull_edges = 0;
    for t in builder.tris.iter().filter(|t| t.alive) {
        if t.is_ghost() {
            hull_edges += 1;
        } else {
            triangles.push(t.v);
        }
    }
    canonicalise_cocircular(points, &mut triangles);
    triangles.sort_unstable();
    Ok(Triangulation {
        points: points.to_vec(),
        triangles,
        hull_edges,
    })
}

/// Flips diagonals of exactly cocircular quadrilaterals toward their
/// lexicographically smallest vertex.
fn canonicalise_cocircular(points: &[Point], triangles: &mut [[usize; 3]]) {
    for _round in 0..64 {
        let mut owner: std::collections::HashMap<(usize, usize), (usize, usize)> =
            std::collections::HashMap::with_capacity(3 * triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                owner.insert((tri[(i + 1) % 3], tri[(i + 2) % 3]), (t, i));
            }
        }
        let mut flipped = false;
        let mut touched = vec![false; triangles.len()];
        for t in 0..triangles.len() {
            for i in 0..3 {
                if touched[t] {
                    break;
                }
                let tri = triangles[t];
                let (u, w, apex) = (tri[(i + 1) % 3], tri[(i + 2) % 3], tri[i]);
                let Some(&(s, j)) = owner.get(&(w, u)) else {
                    continue;
                };
                if touched[s] || s == t {
                    continue;
                }
                let other = triangles[s][j];
                let [pa, pb, pc] = [apex, u, w].map(|k| points[k]);
                if incircle(c(pa), c(pb), c(pc), c(points[other])) != 0.0 {
                    continue;
                }
                let quad = [apex, u, other, w];
                let min = *quad
                    .iter()
                    .min_by(|&&x, &&y| points[x].partial_cmp(&points[y]).expect("finite"))
                    .expect("four vertices");
                if min == u || min == w {
                    continue;
                }
                // (apex, u, w) + (other, w, u) -> (apex, u, other) + (apex, other, w)
                triangles[t] = [apex, u, other];
                triangles[s] = [apex, other, w];
                touched[t] = true;
                touched[s] = true;
                flipped = true;
            }
        }
        if !flipped {
            return;
        }
    }
}

/// Ordered Delaunay edges (x1, x2) with x1 in the unit cell and x1 before x2.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    /// Vertex ids into the triangulation's point list.
    pub pairs: Vec<(usize, usize)>,
    pub lengths: Vec<f64>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn edge_set(tri: &Triangulation) -> EdgeSet {
    let pts = &tri.points;
    let mut pairs: Vec<(usize, usize)> = tri
        .edges()
        .into_iter()
        .map(|(a, b)| {
            if lex_less(pts[a], pts[b]) {
                (a, b)
            } else {
                (b, a)
            }
        })
        .filter(|&(a, _)| in_unit_cell(pts[a]))
        .collect();
    pairs.sort_unstable();
    let lengths = pairs.iter().map(|&(a, b)| dist(pts[a], pts[b])).collect();
    EdgeSet { pairs, lengths }
}

/// Ordered Delaunay triangles (x1, x2, x3) with x1 in the unit cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleSet {
    pub triples: Vec<[usize; 3]>,
    /// Distances (d12, d13, d23) per triple.
    pub sides: Vec<[f64; 3]>,
    /// Triangles dropped by the minimum-angle filter.
    pub excluded: usize,
}

impl TriangleSet {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

pub const DEFAULT_MIN_ANGLE: f64 = 1e-6;

fn min_angle(a: Point, b: Point, cc: Point) -> f64 {
    let ang = |p: Point, q: Point, r: Point| {
        let u = [q[0] - p[0], q[1] - p[1]];
        let v = [r[0] - p[0], r[1] - p[1]];
        (u[0] * v[1] - u[1] * v[0])
            .abs()
            .atan2(u[0] * v[0] + u[1] * v[1])
    };
    ang(a, b, cc).min(ang(b, cc, a)).min(ang(cc, a, b))
}

pub fn triangle_set(tri: &Triangulation, min_angle_rad: f64) -> TriangleSet {
    let pts = &tri.points;
    let mut triples = Vec::new();
    let mut excluded = 0;
    for t in &tri.triangles {
        let mut v = *t;
        v.sort_by(|&x, &y| pts[x].partial_cmp(&pts[y]).expect("finite"));
        if !in_unit_cell(pts[v[0]]) {
            continue;
        }
        if min_angle(pts[v[0]], pts[v[1]], pts[v[2]]) < min_angle_rad {
            excluded += 1;
            continue;
        }
        triples.push(v);
    }
    triples.sort_unstable();
    let sides = triples
        .iter()
        .map(|v| {
            [
                dist(pts[v[0]], pts[v[1]]),
                dist(pts[v[0]], pts[v[2]]),
                dist(pts[v[1]], pts[v[2]]),
            ]
        })
        .collect();
    TriangleSet {
        triples,
        sides,
        excluded,
    }
}

/// Area of a triangle.
pub fn triangle_area(a: Point, b: Point, cc: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (cc[1] - a[1]) - (b[1] - a[1]) * (cc[0] - a[0])).abs()
}

/// A draw of the typical Delaunay cell: circumradius and unit directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypicalCell {
    pub radius: f64,
    pub angles: [f64; 3],
    /// Proposals used by the rejection step.
    pub trials: u32,
}

impl TypicalCell {
    pub fn vertices(&self) -> [Point; 3] {
        self.angles
            .map(|t| [self.radius * t.cos(), self.radius * t.sin()])
    }

    pub fn area(&self) -> f64 {
        let [a, b, cc] = self.vertices();
        triangle_area(a, b, cc)
    }

    /// Length of the edge between the first two vertices.
    pub fn edge_length(&self) -> f64 {
        let [a, b, _] = self.vertices();
        dist(a, b)
    }
}

const MAX_INSCRIBED_AREA: f64 = 1.299_038_105_676_658; // 3 sqrt(3) / 4

fn unit_triangle_area(t: [f64; 3]) -> f64 {
    let p = t.map(|a| [a.cos(), a.sin()]);
    triangle_area(p[0], p[1], p[2])
}

/// Samples the typical cell: pi R^2 ~ Gamma(2, 1), directions by rejection
/// with acceptance probability area / (3 sqrt 3 / 4).
pub fn sample_typical_cell<R: Rng + ?Sized>(rng: &mut R) -> TypicalCell {
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    let radius = ((e1 + e2) / PI).sqrt();
    let mut trials = 0;
    loop {
        trials += 1;
        let angles = [0, 1, 2].map(|_| 2.0 * PI * rng.random::<f64>());
        let accept = rng.random::<f64>() * MAX_INSCRIBED_AREA;
        if accept < unit_triangle_area(angles) {
            return TypicalCell {
                radius,
                angles,
                trials,
            };
        }
    }
}

/// Quadrature settings for the typical-edge integrals over two angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeQuadrature {
    pub nodes: usize,
    pub panels: usize,
}

impl Default for EdgeQuadrature {
    fn default() -> Self {
        Self {
            nodes: 32,
            panels: 8,
        }
    }
}

/// Integrates g(theta1, theta2) * area(e^{i t1}, e^{i t2}, 1) over [0, 2 pi]^2,
/// splitting at the kinks theta2 = theta1 so each piece is smooth.
fn angle_integral(q: EdgeQuadrature, g: impl Fn(f64, f64) -> f64) -> f64 {
    let rule = GaussLegendre::new(q.nodes);
    let tau = 2.0 * PI;
    rule.integrate_composite(0.0, tau, q.panels, |t1| {
        let f = |t2: f64| unit_triangle_area([t1, t2, 0.0]) * g(t1, t2);
        let panels_lo = ((q.panels as f64) * t1 / tau).ceil().max(1.0) as usize;
        let panels_hi = ((q.panels as f64) * (tau - t1) / tau).ceil().max(1.0) as usize;
        rule.integrate_composite(0.0, t1, panels_lo, f)
            + rule.integrate_composite(t1, tau, panels_hi, f)
    })
}

/// P[D <= l] for the typical edge length D.
///
/// The radial integral is done in closed form (a regularised incomplete
/// gamma of order 2); the two angular integrals by composite Gauss-Legendre.
pub fn typical_edge_cdf(length: f64, q: EdgeQuadrature) -> Result<f64, GeometryError> {
    if length.is_nan() || length < 0.0 {
        return Err(GeometryError::NegativeLength(length));
    }
    if length == 0.0 {
        return Ok(0.0);
    }
    if length.is_infinite() {
        return Ok(1.0);
    }
    let v = angle_integral(q, |t1, t2| {
        let chord = 2.0 * (0.5 * (t1 - t2)).sin().abs();
        if chord == 0.0 {
            return 1.0;
        }
        let x = PI * (length / chord).powi(2);
        -(-x).exp_m1() - x * (-x).exp()
    });
    Ok((v / (6.0 * PI)).clamp(0.0, 1.0))
}

/// E[D^p] for the typical edge length, p > -2.
pub fn typical_edge_moment(p: f64, q: EdgeQuadrature) -> f64 {
    // radial part: int r^{3+p} e^{-pi r^2} dr = Gamma(2 + p/2) / (2 pi^{2 + p/2})
    let radial = libm::tgamma(2.0 + 0.5 * p) / (2.0 * PI.powf(2.0 + 0.5 * p));
    let v = angle_integral(q, |t1, t2| (2.0 * (0.5 * (t1 - t2)).sin().abs()).powf(p));
    PI / 3.0 * radial * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn poisson_count_law() {
        let reps = 400;
        let counts: Vec<f64> = (0..reps)
            .map(|r| {
                sample_poisson(1000.0, 0.0, &mut stream(1, r, Purpose::Sites))
                    .unwrap()
                    .points
                    .len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / reps as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        assert!(
            (mean - 1000.0).abs() < 3.0 * (1000.0f64 / reps as f64).sqrt(),
            "mean {mean}"
        );
        // dispersion statistic (reps-1) var / mean ~ chi2(reps-1)
        let disp = (reps as f64 - 1.0) * var / 1000.0;
        let sd = (2.0 * (reps as f64 - 1.0)).sqrt();
        assert!(
            (disp - (reps as f64 - 1.0)).abs() < 3.0 * sd,
            "dispersion {disp}"
        );
    }

    #[test]
    fn poisson_rejects_zero_intensity_and_is_deterministic() {
        assert!(sample_poisson(0.0, 0.0, &mut stream(1, 0, Purpose::Sites)).is_err());
        let a = sample_poisson(50.0, 0.1, &mut stream(3, 0, Purpose::Sites)).unwrap();
        let b = sample_poisson(50.0, 0.1, &mut stream(3, 0, Purpose::Sites)).unwrap();
        assert_eq!(a, b);
        assert!(a.points.iter().all(|&p| a.window.contains(p)));
    }

    #[test]
    fn unit_square() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let t = delaunay(&pts).unwrap();
        assert_eq!(t.triangles.len(), 2);
        assert_eq!(t.edges().len(), 5);
        // the diagonal runs through the lexicographically smallest corner
        assert!(t.edges().contains(&(0, 3)));
        // same answer whatever the input order
        let perm = vec![[1.0, 1.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]];
        let t2 = delaunay(&perm).unwrap();
        assert!(t2.edges().contains(&(0, 3)));
    }

    #[test]
    fn unit_square_edge_and_triangle_sets() {
        // shifted so every corner lies in (-1/2, 1/2]^2
        let pts = vec![[-0.25, -0.25], [0.25, -0.25], [-0.25, 0.25], [0.25, 0.25]];
        let t = delaunay(&pts).unwrap();
        let e = edge_set(&t);
        let mut pairs = e.pairs.clone();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 3), (2, 3)]);
        let ts = triangle_set(&t, DEFAULT_MIN_ANGLE);
        assert_eq!(ts.triples, vec![[0, 1, 3], [0, 2, 3]]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            delaunay(&[[0.0, 0.0], [1.0, 0.0]]).unwrap_err(),
            GeometryError::TooFewPoints(2)
        );
        assert_eq!(
            delaunay(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap_err(),
            GeometryError::Collinear
        );
    }

    #[test]
    fn collinear_prefix_then_offline_point() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [1.5, 1.0]];
        let t = delaunay(&pts).unwrap();
        assert_eq!(t.triangles.len(), 3);
        assert!(t.violates_empty_circumdisk(1e-10).is_none());
    }

    #[test]
    fn random_pattern_is_delaunay() {
        let pat = sample_poisson(1000.0, 0.0, &mut stream(4, 0, Purpose::Sites)).unwrap();
        let t = delaunay(&pat.points).unwrap();
        assert!(t.violates_empty_circumdisk(1e-10).is_none());
        let v = t.points.len();
        let e = t.edges().len();
        let f = t.triangles.len();
        assert_eq!(v + f, e + 1, "Euler relation");
        assert_eq!(f, 2 * v - t.hull_edges() - 2);
        let mean_degree = 2.0 * e as f64 / v as f64;
        assert!((mean_degree - 6.0).abs() < 0.3, "{mean_degree}");
    }

    #[test]
    fn edge_and_triangle_counts_scale_with_n() {
        let n = 2000.0;
        let reps = 10;
        let (mut e, mut t) = (0.0, 0.0);
        for r in 0..reps {
            let pat =
                sample_poisson(n, default_margin(n), &mut stream(5, r, Purpose::Sites)).unwrap();
            let tri = delaunay(&pat.points).unwrap();
            e += edge_set(&tri).len() as f64;
            t += triangle_set(&tri, DEFAULT_MIN_ANGLE).len() as f64;
        }
        let e = e / (reps as f64 * n);
        let t = t / (reps as f64 * n);
        assert!((e / 3.0 - 1.0).abs() < 0.03, "edges/N = {e}");
        assert!((t / 2.0 - 1.0).abs() < 0.03, "triangles/N = {t}");
    }

    #[test]
    fn sets_respect_ordering_and_membership() {
        let pat = sample_poisson(
            500.0,
            default_margin(500.0),
            &mut stream(6, 0, Purpose::Sites),
        )
        .unwrap();
        let tri = delaunay(&pat.points).unwrap();
        let edges: std::collections::HashSet<(usize, usize)> = tri.edges().into_iter().collect();
        let es = edge_set(&tri);
        for &(a, b) in &es.pairs {
            assert!(in_unit_cell(tri.points[a]) && lex_less(tri.points[a], tri.points[b]));
            assert!(edges.contains(&(a.min(b), a.max(b))));
        }
        let mut dedup = es.pairs.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), es.len());
        let ts = triangle_set(&tri, DEFAULT_MIN_ANGLE);
        let tris: std::collections::HashSet<[usize; 3]> = tri
            .triangles
            .iter()
            .map(|t| {
                let mut s = *t;
                s.sort_unstable();
                s
            })
            .collect();
        for v in &ts.triples {
            let p = v.map(|i| tri.points[i]);
            assert!(in_unit_cell(p[0]) && lex_less(p[0], p[1]) && lex_less(p[1], p[2]));
            let mut s = *v;
            s.sort_unstable();
            assert!(tris.contains(&s));
        }
    }

    #[test]
    fn power_sum_of_edges_scales() {
        // sum over E_N of |x2 - x1|^alpha grows like N^{1 - alpha/2}
        let alpha = 0.5;
        let ns: Vec<f64> = (8..=13).map(|k| 2f64.powi(k)).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, &n) in ns.iter().enumerate() {
            let mut acc = 0.0;
            let reps = 4;
            for r in 0..reps {
                let pat = sample_poisson(
                    n,
                    default_margin(n),
                    &mut stream(7, (i * 10 + r) as u64, Purpose::Sites),
                )
                .unwrap();
                let es = edge_set(&delaunay(&pat.points).unwrap());
                acc += es.lengths.iter().map(|l| l.powf(alpha)).sum::<f64>();
            }
            xs.push(n.ln());
            ys.push((acc / reps as f64).ln());
        }
        let slope = crate::stats::ols(&xs, &ys).slope;
        assert!((slope - (1.0 - alpha / 2.0)).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn max_edge_length_shrinks_like_log_n_over_root_n() {
        let mut ratios = Vec::new();
        for (i, k) in (8..=13).enumerate() {
            let n = 2f64.powi(k);
            let pat = sample_poisson(
                n,
                default_margin(n),
                &mut stream(8, i as u64, Purpose::Sites),
            )
            .unwrap();
            let es = edge_set(&delaunay(&pat.points).unwrap());
            let max = es.lengths.iter().copied().fold(0.0, f64::max);
            ratios.push(max / (n.ln() / n.sqrt()));
        }
        // the normalised maximum stays bounded and does not trend upwards
        let xs: Vec<f64> = (8..=13).map(|k| k as f64).collect();
        let fit = crate::stats::ols(&xs, &ratios);
        assert!(ratios.iter().all(|&r| r > 0.1 && r < 3.0), "{ratios:?}");
        assert!(fit.slope < 0.15, "slope {}", fit.slope);
    }

    #[test]
    fn typical_cell_moments() {
        let mut rng = stream(9, 0, Purpose::TypicalCell);
        let n = 100_000;
        let cells: Vec<TypicalCell> = (0..n).map(|_| sample_typical_cell(&mut rng)).collect();
        let areas: Vec<f64> = cells.iter().map(|c| c.area()).collect();
        let mean = areas.iter().sum::<f64>() / n as f64;
        let sd = (areas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * sd / (n as f64).sqrt(),
            "mean area {mean}"
        );
        // pi R^2 ~ Gamma(2, 1)
        let s: Vec<f64> = cells.iter().map(|c| PI * c.radius * c.radius).collect();
        let ks = crate::stats::ks_one_sample(&s, |x| 1.0 - (1.0 + x) * (-x).exp());
        assert!(ks.p_value > 0.01, "KS p {}", ks.p_value);
        // acceptance rate = E[a] / max a with E[a] = 3 / (2 pi) for uniform directions
        let trials: f64 = cells.iter().map(|c| c.trials as f64).sum();
        let rate = n as f64 / trials;
        let expected = 3.0 / (2.0 * PI) / MAX_INSCRIBED_AREA;
        assert!((rate - expected).abs() < 0.01, "rate {rate} vs {expected}");
    }

    #[test]
    fn typical_edge_cdf_limits_and_mean() {
        let q = EdgeQuadrature::default();
        assert_eq!(typical_edge_cdf(0.0, q).unwrap(), 0.0);
        assert!((typical_edge_cdf(20.0, q).unwrap() - 1.0).abs() < 1e-6);
        assert!(typical_edge_cdf(-1.0, q).is_err());
        let mut prev = 0.0;
        for i in 1..40 {
            let v = typical_edge_cdf(0.1 * i as f64, q).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        // mean typical Delaunay edge length at unit intensity is 32 / (9 pi)
        let m = typical_edge_moment(1.0, q);
        assert!((m - 32.0 / (9.0 * PI)).abs() < 1e-8, "{m}");
        assert!((typical_edge_moment(0.0, q) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn delaunay_edges_follow_typical_edge_law() {
        // unit-intensity scaling: lengths in E_N times sqrt(N)
        let n = 2500.0;
        let mut lengths = Vec::new();
        for r in 0..4 {
            let pat =
                sample_poisson(n, default_margin(n), &mut stream(10, r, Purpose::Sites)).unwrap();
            let es = edge_set(&delaunay(&pat.points).unwrap());
            lengths.extend(es.lengths.iter().map(|l| l * n.sqrt()));
        }
        assert!(lengths.len() >= 10_000);
        let q = EdgeQuadrature::default();
        let ks = crate::stats::ks_one_sample(&lengths, |l| typical_edge_cdf(l, q).unwrap());
        assert!(ks.p_value > 0.01, "KS p {} D {}", ks.p_value, ks.statistic);
    }
}
