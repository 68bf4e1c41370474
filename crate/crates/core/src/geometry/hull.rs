use std::collections::HashMap;

use super::{Vec3, GEOM_EPS};

/// Triangulated 3D convex hull.
///
/// Facets index into `vertices` and are wound counter-clockwise seen from
/// outside, so `(v1 - v0) x (v2 - v0)` points away from the interior. A hull
/// built from affinely dependent input (fewer than four non-coplanar points)
/// is `degenerate`: it keeps the input points as vertices, has no facets and
/// zero volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    vertices: Vec<Vec3>,
    facets: Vec<[usize; 3]>,
    degenerate: bool,
}

impl ConvexHull {
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn facets(&self) -> &[[usize; 3]] {
        &self.facets
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Outward unit normal and plane offset (`n . x = d`) of a facet.
    pub fn facet_plane(&self, facet: usize) -> (Vec3, f64) {
        let [a, b, c] = self.facets[facet];
        plane(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    /// Largest signed distance from `p` to any facet plane: `<= 0` inside.
    /// Degenerate hulls report `+inf` since they enclose no volume.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        if self.degenerate {
            return f64::INFINITY;
        }
        (0..self.facets.len())
            .map(|f| {
                let (n, d) = self.facet_plane(f);
                n.dot(p) - d
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        self.signed_distance(p) <= tol
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }
}

fn plane(a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, f64) {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    let n = if len > 0.0 { n / len } else { n };
    (n, n.dot(a))
}

struct Face {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(v: [usize; 3], pts: &[Vec3]) -> Self {
        let (normal, offset) = plane(&pts[v[0]], &pts[v[1]], &pts[v[2]]);
        Face {
            v,
            normal,
            offset,
            outside: Vec::new(),
            alive: true,
        }
    }

    fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    fn edges(&self) -> [(usize, usize); 3] {
        let [a, b, c] = self.v;
        [(a, b), (b, c), (c, a)]
    }
}

fn degenerate(points: &[Vec3]) -> ConvexHull {
    ConvexHull {
        vertices: points.to_vec(),
        facets: Vec::new(),
        degenerate: true,
    }
}

/// Quickhull over `points`.
///
/// Points within the tolerance of a facet plane count as inside, so coplanar
/// input on a hull face is absorbed into the triangulation rather than
/// producing slivers. Affinely dependent input yields a degenerate hull.
pub fn convex_hull(points: &[Vec3]) -> ConvexHull {
    if points.len() < 4 {
        return degenerate(points);
    }
    let scale = points
        .iter()
        .flat_map(|p| p.iter().copied())
        .fold(1.0f64, |m, c| m.max(c.abs()));
    let tol = GEOM_EPS * scale;

    let Some(simplex) = initial_simplex(points, tol) else {
        return degenerate(points);
    };

    let interior = simplex.iter().map(|&i| points[i]).sum::<Vec3>() / 4.0;
    let [i0, i1, i2, i3] = simplex;
    let mut faces: Vec<Face> = Vec::new();
    for tri in [[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]] {
        let mut f = Face::new(tri, points);
        if f.distance(&interior) > 0.0 {
            f = Face::new([tri[0], tri[2], tri[1]], points);
        }
        faces.push(f);
    }

    let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (fid, f) in faces.iter().enumerate() {
        for e in f.edges() {
            edge_owner.insert(e, fid);
        }
    }

    for (i, p) in points.iter().enumerate() {
        if simplex.contains(&i) {
            continue;
        }
        if let Some(fid) = farthest_face(&faces, 0..4, p, tol) {
            faces[fid].outside.push(i);
        }
    }

    let mut pending: Vec<usize> = (0..4).collect();
    let mut state: Vec<u8> = Vec::new();
    while let Some(fid) = pending.pop() {
        if !faces[fid].alive || faces[fid].outside.is_empty() {
            continue;
        }
        let eye = *faces[fid]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                faces[fid]
                    .distance(&points[a])
                    .total_cmp(&faces[fid].distance(&points[b]))
            })
            .expect("non-empty outside set");
        let eye_p = points[eye];

        // 0 = unvisited, 1 = visible, 2 = hidden
        state.clear();
        state.resize(faces.len(), 0);
        state[fid] = 1;
        let mut visible = vec![fid];
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut cursor = 0;
        while cursor < visible.len() {
            let cur = visible[cursor];
            cursor += 1;
            for (a, b) in faces[cur].edges() {
                let nb = edge_owner[&(b, a)];
                if state[nb] == 0 {
                    state[nb] = if faces[nb].distance(&eye_p) > tol {
                        1
                    } else {
                        2
                    };
                    if state[nb] == 1 {
                        visible.push(nb);
                    }
                }
                if state[nb] == 2 {
                    horizon.push((a, b));
                }
            }
        }

        let mut orphans = Vec::new();
        for &v in &visible {
            let f = &mut faces[v];
            f.alive = false;
            orphans.append(&mut f.outside);
            for e in f.edges() {
                edge_owner.remove(&e);
            }
        }

        let first_new = faces.len();
        for (a, b) in horizon {
            let nf = Face::new([a, b, eye], points);
            let id = faces.len();
            for e in nf.edges() {
                edge_owner.insert(e, id);
            }
            faces.push(nf);
        }
        for o in orphans {
            if o == eye {
                continue;
            }
            if let Some(target) = farthest_face(&faces, first_new..faces.len(), &points[o], tol) {
                faces[target].outside.push(o);
            }
        }
        pending.extend(first_new..faces.len());
    }

    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut facets = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let tri = f.v.map(|i| {
            *remap.entry(i).or_insert_with(|| {
                vertices.push(points[i]);
                vertices.len() - 1
            })
        });
        facets.push(tri);
    }
    ConvexHull {
        vertices,
        facets,
        degenerate: false,
    }
}

fn farthest_face(
    faces: &[Face],
    range: std::ops::Range<usize>,
    p: &Vec3,
    tol: f64,
) -> Option<usize> {
    let mut best = None;
    let mut best_d = tol;
    for fid in range {
        let d = faces[fid].distance(p);
        if d > best_d {
            best_d = d;
            best = Some(fid);
        }
    }
    best
}

fn initial_simplex(points: &[Vec3], tol: f64) -> Option<[usize; 4]> {
    let mut extremes = Vec::with_capacity(6);
    for k in 0..3 {
        let (mut lo, mut hi) = (0, 0);
        for (i, p) in points.iter().enumerate() {
            if p[k] < points[lo][k] {
                lo = i;
            }
            if p[k] > points[hi][k] {
                hi = i;
            }
        }
        extremes.push(lo);
        extremes.push(hi);
    }
    let (mut i0, mut i1, mut best) = (0, 0, -1.0);
    for &a in &extremes {
        for &b in &extremes {
            let d = (points[a] - points[b]).norm_squared();
            if d > best {
                best = d;
                i0 = a;
                i1 = b;
            }
        }
    }
    if best.sqrt() <= tol {
        return None;
    }

    let dir = (points[i1] - points[i0]).normalize();
    let line_dist = |p: &Vec3| {
        let r = p - points[i0];
        (r - dir * r.dot(&dir)).norm()
    };
    let i2 = argmax(points, line_dist);
    if line_dist(&points[i2]) <= tol {
        return None;
    }

    let (n, d) = plane(&points[i0], &points[i1], &points[i2]);
    let plane_dist = |p: &Vec3| (n.dot(p) - d).abs();
    let i3 = argmax(points, plane_dist);
    if plane_dist(&points[i3]) <= tol {
        return None;
    }
    Some([i0, i1, i2, i3])
}

fn argmax(points: &[Vec3], f: impl Fn(&Vec3) -> f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let v = f(p);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Enclosed volume via a signed tetrahedron fan about the vertex centroid.
/// Degenerate hulls have zero volume.
pub fn hull_volume(hull: &ConvexHull) -> f64 {
    if hull.degenerate {
        return 0.0;
    }
    let c = hull.centroid();
    hull.facets
        .iter()
        .map(|&[a, b, d]| {
            let (pa, pb, pd) = (
                hull.vertices[a] - c,
                hull.vertices[b] - c,
                hull.vertices[d] - c,
            );
            pa.dot(&pb.cross(&pd))
        })
        .sum::<f64>()
        / 6.0
}
