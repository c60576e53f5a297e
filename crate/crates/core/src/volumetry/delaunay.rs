//! Incremental Bowyer-Watson triangulation on exact orientation and
//! in-circle predicates.
//!
//! Hull edges are closed by ghost triangles sharing a symbolic vertex at
//! infinity, so the result always covers the convex hull. Points are
//! inserted in index order and a triangle is only destroyed when the new
//! point lies strictly inside its circumcircle, so for cocircular input the
//! earlier-inserted configuration wins.

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
/// The vertex at infinity closing every hull edge into a ghost triangle.
const GHOST: usize = usize::MAX - 1;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Triangulation {
    /// Counter-clockwise vertex index triples into the input slice.
    pub triangles: Vec<[usize; 3]>,
    /// Input indices skipped as exact duplicates of an earlier point.
    pub duplicates: Vec<usize>,
}

#[inline]
fn c(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

struct Mesh<'a> {
    pts: &'a [[f64; 2]],
    tri: Vec<[usize; 3]>,
    /// `nbr[t][i]` is the triangle across the edge opposite `tri[t][i]`.
    nbr: Vec<[usize; 3]>,
    alive: Vec<bool>,
    free: Vec<usize>,
    /// A live solid triangle to start point location from.
    last: usize,
    stamp: Vec<u32>,
    epoch: u32,
}

impl Mesh<'_> {
    fn orient(&self, a: usize, b: usize, p: [f64; 2]) -> f64 {
        orient2d(c(self.pts[a]), c(self.pts[b]), c(p))
    }

    fn is_ghost(&self, t: usize) -> bool {
        self.tri[t].contains(&GHOST)
    }

    /// Whether inserting `p` destroys triangle `t`.
    ///
    /// A ghost triangle over hull edge a→b (interior on the right) conflicts
    /// with points strictly outside the edge, or on the open edge itself.
    fn conflicts(&self, t: usize, p: [f64; 2]) -> bool {
        let [a, b, cc] = self.tri[t];
        let (ea, eb) = match (a == GHOST, b == GHOST, cc == GHOST) {
            (false, false, false) => {
                return incircle(c(self.pts[a]), c(self.pts[b]), c(self.pts[cc]), c(p)) > 0.0
            }
            (true, _, _) => (b, cc),
            (_, true, _) => (cc, a),
            _ => (a, b),
        };
        let o = self.orient(ea, eb, p);
        if o != 0.0 {
            return o > 0.0;
        }
        let (pa, pb) = (self.pts[ea], self.pts[eb]);
        let between = |k: usize| (pa[k] - p[k]) * (pb[k] - p[k]) < 0.0;
        between(0) || between(1)
    }

    /// Visibility walk; returns a solid triangle containing `p` or a ghost
    /// triangle whose hull edge sees it.
    fn locate(&self, p: [f64; 2]) -> usize {
        let mut t = self.last;
        let limit = 4 * self.tri.len() + 16;
        'walk: for step in 0..limit {
            if self.is_ghost(t) {
                return t;
            }
            let v = self.tri[t];
            for k in 0..3 {
                // rotate the starting edge so the walk cannot cycle
                let i = (k + step) % 3;
                if self.orient(v[(i + 1) % 3], v[(i + 2) % 3], p) < 0.0 {
                    t = self.nbr[t][i];
                    continue 'walk;
                }
            }
            return t;
        }
        (0..self.tri.len())
            .filter(|&t| self.alive[t])
            .find(|&t| {
                let v = self.tri[t];
                if self.is_ghost(t) {
                    self.conflicts(t, p)
                } else {
                    (0..3).all(|i| self.orient(v[(i + 1) % 3], v[(i + 2) % 3], p) >= 0.0)
                }
            })
            .expect("every point lies in a triangle or outside some hull edge")
    }

    fn alloc(&mut self, v: [usize; 3]) -> usize {
        if let Some(t) = self.free.pop() {
            self.tri[t] = v;
            self.nbr[t] = [NONE; 3];
            self.alive[t] = true;
            self.stamp[t] = 0;
            t
        } else {
            self.tri.push(v);
            self.nbr.push([NONE; 3]);
            self.alive.push(true);
            self.stamp.push(0);
            self.tri.len() - 1
        }
    }

    fn insert(&mut self, pi: usize) -> bool {
        let p = self.pts[pi];
        let start = self.locate(p);
        if self.tri[start].iter().any(|&v| v != GHOST && self.pts[v] == p) {
            return false;
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let mut bad = vec![start];
        self.stamp[start] = epoch;
        let mut i = 0;
        while i < bad.len() {
            let t = bad[i];
            i += 1;
            for k in 0..3 {
                let n = self.nbr[t][k];
                if self.stamp[n] != epoch && self.conflicts(n, p) {
                    self.stamp[n] = epoch;
                    bad.push(n);
                }
            }
        }
        // Cavity boundary edges a→b, oriented as in the destroyed triangle.
        let mut boundary = Vec::with_capacity(bad.len() + 2);
        for &t in &bad {
            for k in 0..3 {
                let n = self.nbr[t][k];
                if self.stamp[n] != epoch {
                    let v = self.tri[t];
                    boundary.push((v[(k + 1) % 3], v[(k + 2) % 3], n, t));
                }
            }
        }
        for &t in &bad {
            self.alive[t] = false;
        }
        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, outside, old) in &boundary {
            let t = self.alloc([a, b, pi]);
            self.nbr[t][2] = outside;
            for k in 0..3 {
                if self.nbr[outside][k] == old {
                    self.nbr[outside][k] = t;
                }
            }
            created.push((a, b, t));
        }
        for &(a, b, t) in &created {
            // opposite a is edge b–p, shared with the triangle starting at b
            if let Some(&(_, _, u)) = created.iter().find(|e| e.0 == b) {
                self.nbr[t][0] = u;
            }
            // opposite b is edge p–a, shared with the triangle ending at a
            if let Some(&(_, _, u)) = created.iter().find(|e| e.1 == a) {
                self.nbr[t][1] = u;
            }
            if a != GHOST && b != GHOST {
                self.last = t;
            }
        }
        // released only now so back-pointer repair above never sees a
        // recycled id
        self.free.extend_from_slice(&bad);
        true
    }
}

/// Delaunay triangulation of a planar point set, covering its convex hull.
///
/// Fails when fewer than three distinct points are given or all points
/// are collinear.
pub fn delaunay_triangulate(points: &[[f64; 2]]) -> Result<Triangulation> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "triangulation needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::Invalid("non-finite point in triangulation input".into()));
    }
    let p0 = points[0];
    let Some(i1) = points.iter().position(|p| *p != p0) else {
        return Err(Error::Degenerate("all points coincide".into()));
    };
    let Some(i2) = (i1 + 1..points.len())
        .find(|&k| orient2d(c(p0), c(points[i1]), c(points[k])) != 0.0)
    else {
        return Err(Error::Degenerate("all points are collinear".into()));
    };
    let (a, b) = if orient2d(c(p0), c(points[i1]), c(points[i2])) > 0.0 {
        (i1, i2)
    } else {
        (i2, i1)
    };
    // solid triangle 0 plus the ghosts across each of its edges
    let mut mesh = Mesh {
        pts: points,
        tri: vec![[0, a, b], [b, a, GHOST], [0, b, GHOST], [a, 0, GHOST]],
        nbr: vec![[1, 2, 3], [3, 2, 0], [1, 3, 0], [2, 1, 0]],
        alive: vec![true; 4],
        free: Vec::new(),
        last: 0,
        stamp: vec![0; 4],
        epoch: 0,
    };
    let mut duplicates = Vec::new();
    for i in 1..points.len() {
        if i == a || i == b {
            continue;
        }
        if !mesh.insert(i) {
            duplicates.push(i);
        }
    }
    let triangles = (0..mesh.tri.len())
        .filter(|&t| mesh.alive[t] && !mesh.is_ghost(t))
        .map(|t| mesh.tri[t])
        .collect();
    Ok(Triangulation {
        triangles,
        duplicates,
    })
}
