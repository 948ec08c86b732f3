//! Conforming 2D triangulations with newest vertex bisection.
//!
//! Triangles store their vertices counterclockwise together with the local
//! index of the refinement edge (edge i is the edge opposite vertex i).
//! Bisection inserts the midpoint of the refinement edge; the two children
//! receive the remaining edges of the parent as their refinement edges, so
//! the recursive closure terminates for compatibly labelled initial meshes.

use crate::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;

pub type Point = [f64; 2];

#[derive(Debug, Clone)]
pub struct Triangle {
    /// Vertex indices, counterclockwise.
    pub v: [usize; 3],
    /// Local index of the refinement edge (opposite this vertex).
    pub ref_edge: usize,
    /// Bisection generation.
    pub generation: u32,
}

impl Triangle {
    /// Vertex pair of local edge i (the edge opposite vertex i).
    pub fn edge_vertices(&self, i: usize) -> (usize, usize) {
        (self.v[(i + 1) % 3], self.v[(i + 2) % 3])
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoints (z0, z1); the induced normal n = (-t_y, t_x) points from
    /// K_L into K_R, and out of the domain for boundary edges.
    pub z: [usize; 2],
    pub k_left: usize,
    pub k_right: Option<usize>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.k_right.is_none()
    }
}

/// A subset of the triangles of a fixed mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submesh {
    bits: Vec<bool>,
}

impl Submesh {
    pub fn empty(ntri: usize) -> Self {
        Self {
            bits: vec![false; ntri],
        }
    }

    pub fn full(ntri: usize) -> Self {
        Self {
            bits: vec![true; ntri],
        }
    }

    pub fn from_indices(ntri: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(ntri);
        for i in idx {
            s.bits[i] = true;
        }
        s
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn contains(&self, t: usize) -> bool {
        self.bits[t]
    }

    pub fn insert(&mut self, t: usize) {
        self.bits[t] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    pub vertices: Vec<Point>,
    pub triangles: Vec<Triangle>,
    pub edges: Vec<Edge>,
    /// Edge ids of each triangle; entry i is the edge opposite vertex i.
    pub tri_edges: Vec<[usize; 3]>,
    /// Triangles incident to each vertex.
    pub vertex_tris: Vec<Vec<usize>>,
    /// Vertices on the domain boundary.
    pub boundary_vertex: Vec<bool>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

fn sorted_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b { (a, b) } else { (b, a) }
}

impl Triangulation {
    /// Build from raw vertices and triangles; derives edges, orientation and
    /// adjacency. Panics if an edge has more than two adjacent triangles.
    pub fn from_raw(vertices: Vec<Point>, triangles: Vec<Triangle>) -> Self {
        let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            debug_assert!(signed_area(&vertices, tri.v) > 0.0, "triangle {t} not ccw");
            for i in 0..3 {
                let (a, b) = tri.edge_vertices(i);
                edge_tris.entry(sorted_pair(a, b)).or_default().push(t);
            }
        }
        // Deterministic edge ids: first occurrence while walking triangles.
        let mut edge_lookup = HashMap::new();
        let mut edges = Vec::new();
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = tri.edge_vertices(i);
                let key = sorted_pair(a, b);
                if edge_lookup.contains_key(&key) {
                    continue;
                }
                let adj = &edge_tris[&key];
                assert!(
                    adj.len() <= 2,
                    "edge {key:?} shared by {} triangles",
                    adj.len()
                );
                let id = edges.len();
                edge_lookup.insert(key, id);
                edges.push(make_edge(&vertices, &triangles, key, adj, t));
            }
        }
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let (a, b) = tri.edge_vertices(i);
                tri_edges[t][i] = edge_lookup[&sorted_pair(a, b)];
            }
        }
        let mut vertex_tris = vec![Vec::new(); vertices.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in &tri.v {
                vertex_tris[v].push(t);
            }
        }
        let mut boundary_vertex = vec![false; vertices.len()];
        for e in &edges {
            if e.is_boundary() {
                boundary_vertex[e.z[0]] = true;
                boundary_vertex[e.z[1]] = true;
            }
        }
        Self {
            vertices,
            triangles,
            edges,
            tri_edges,
            vertex_tris,
            boundary_vertex,
            edge_lookup,
        }
    }

    pub fn ntri(&self) -> usize {
        self.triangles.len()
    }

    pub fn nvert(&self) -> usize {
        self.vertices.len()
    }

    pub fn nedge(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&sorted_pair(a, b)).copied()
    }

    pub fn tri_coords(&self, t: usize) -> [Point; 3] {
        let v = self.triangles[t].v;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, self.triangles[t].v)
    }

    pub fn barycenter(&self, t: usize) -> Point {
        let c = self.tri_coords(t);
        [
            (c[0][0] + c[1][0] + c[2][0]) / 3.0,
            (c[0][1] + c[1][1] + c[2][1]) / 3.0,
        ]
    }

    /// Triangle diameter (longest edge).
    pub fn h_tri(&self, t: usize) -> f64 {
        let c = self.tri_coords(t);
        let mut h: f64 = 0.0;
        for i in 0..3 {
            h = h.max(dist(c[i], c[(i + 1) % 3]));
        }
        h
    }

    /// Diameter of the largest inscribed ball.
    pub fn rho_tri(&self, t: usize) -> f64 {
        let c = self.tri_coords(t);
        let a = dist(c[1], c[2]);
        let b = dist(c[2], c[0]);
        let cc = dist(c[0], c[1]);
        let s = 0.5 * (a + b + cc);
        2.0 * self.area(t) / s
    }

    pub fn shape_regularity(&self) -> f64 {
        (0..self.ntri())
            .map(|t| self.h_tri(t) / self.rho_tri(t))
            .fold(0.0, f64::max)
    }

    pub fn h_edge(&self, e: usize) -> f64 {
        let z = self.edges[e].z;
        dist(self.vertices[z[0]], self.vertices[z[1]])
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let z = self.edges[e].z;
        let (p, q) = (self.vertices[z[0]], self.vertices[z[1]]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }

    pub fn edge_tangent(&self, e: usize) -> [f64; 2] {
        let z = self.edges[e].z;
        let (p, q) = (self.vertices[z[0]], self.vertices[z[1]]);
        let h = dist(p, q);
        [(q[0] - p[0]) / h, (q[1] - p[1]) / h]
    }

    pub fn edge_normal(&self, e: usize) -> [f64; 2] {
        let t = self.edge_tangent(e);
        [-t[1], t[0]]
    }

    /// Point on edge e at parameter t in [0,1], measured from z0.
    pub fn edge_point(&self, e: usize, t: f64) -> Point {
        let z = self.edges[e].z;
        let (p, q) = (self.vertices[z[0]], self.vertices[z[1]]);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    }

    /// Gradients of the three barycentric coordinates of triangle t.
    pub fn grad_lambda(&self, t: usize) -> [[f64; 2]; 3] {
        let c = self.tri_coords(t);
        let a2 = 2.0 * self.area(t);
        let mut g = [[0.0; 2]; 3];
        for i in 0..3 {
            let e = [
                c[(i + 2) % 3][0] - c[(i + 1) % 3][0],
                c[(i + 2) % 3][1] - c[(i + 1) % 3][1],
            ];
            g[i] = [-e[1] / a2, e[0] / a2];
        }
        g
    }

    /// Barycentric coordinates of a physical point with respect to triangle t.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let c = self.tri_coords(t);
        let a2 = 2.0 * self.area(t);
        let cross = |a: Point, b: Point, q: Point| {
            (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
        };
        [
            cross(c[1], c[2], p) / a2,
            cross(c[2], c[0], p) / a2,
            cross(c[0], c[1], p) / a2,
        ]
    }

    /// Local vertex index of global vertex z within triangle t.
    pub fn local_vertex(&self, t: usize, z: usize) -> Option<usize> {
        self.triangles[t].v.iter().position(|&w| w == z)
    }

    /// Local edge index of global edge e within triangle t.
    pub fn local_edge(&self, t: usize, e: usize) -> Option<usize> {
        self.tri_edges[t].iter().position(|&f| f == e)
    }

    /// Simplex patch T_K: triangles intersecting K (including K).
    pub fn patch_tri(&self, t: usize) -> Submesh {
        let mut s = Submesh::empty(self.ntri());
        for &v in &self.triangles[t].v {
            for &t2 in &self.vertex_tris[v] {
                s.insert(t2);
            }
        }
        s
    }

    /// Edge patch T_E.
    pub fn patch_edge(&self, e: usize) -> Submesh {
        let mut s = Submesh::empty(self.ntri());
        s.insert(self.edges[e].k_left);
        if let Some(r) = self.edges[e].k_right {
            s.insert(r);
        }
        s
    }

    /// Vertex patch T_z.
    pub fn patch_vertex(&self, z: usize) -> Submesh {
        Submesh::from_indices(self.ntri(), self.vertex_tris[z].iter().copied())
    }

    /// Edge spider E_z(S): edges of S with endpoint z.
    pub fn edge_spider(&self, s: &Submesh, z: usize) -> Vec<usize> {
        let sel = self.submesh_edges(s);
        sel.into_iter()
            .filter(|&e| self.edges[e].z.contains(&z))
            .collect()
    }

    /// All edges of the triangles in S, ascending.
    pub fn submesh_edges(&self, s: &Submesh) -> Vec<usize> {
        let mut seen = vec![false; self.nedge()];
        for t in s.iter() {
            for &e in &self.tri_edges[t] {
                seen[e] = true;
            }
        }
        seen.iter()
            .enumerate()
            .filter_map(|(e, &b)| b.then_some(e))
            .collect()
    }

    /// Vertices of the triangles in S, ascending.
    pub fn submesh_vertices(&self, s: &Submesh) -> Vec<usize> {
        let mut seen = vec![false; self.nvert()];
        for t in s.iter() {
            for &v in &self.triangles[t].v {
                seen[v] = true;
            }
        }
        seen.iter()
            .enumerate()
            .filter_map(|(v, &b)| b.then_some(v))
            .collect()
    }

    /// S^(1/2): S together with all edge neighbours of S.
    pub fn layer_half(&self, s: &Submesh) -> Submesh {
        let mut out = s.clone();
        for t in s.iter() {
            for &e in &self.tri_edges[t] {
                let ed = &self.edges[e];
                out.insert(ed.k_left);
                if let Some(r) = ed.k_right {
                    out.insert(r);
                }
            }
        }
        out
    }

    /// S^1: S together with all vertex neighbours of S.
    pub fn layer_one(&self, s: &Submesh) -> Submesh {
        let mut out = s.clone();
        for t in s.iter() {
            for &v in &self.triangles[t].v {
                for &t2 in &self.vertex_tris[v] {
                    out.insert(t2);
                }
            }
        }
        out
    }

    /// Interface edges E(Gamma) = E(S) intersect E(T \ S).
    pub fn interface(&self, s: &Submesh) -> Vec<usize> {
        let in_s = self.submesh_edges(s);
        let comp = s.complement();
        let mut in_comp = vec![false; self.nedge()];
        for t in comp.iter() {
            for &e in &self.tri_edges[t] {
                in_comp[e] = true;
            }
        }
        in_s.into_iter().filter(|&e| in_comp[e]).collect()
    }

    /// Full conformity check: every edge has one or two triangles and no
    /// vertex lies in the open interior of another triangle's edge.
    pub fn check_conformity(&self) -> Result<()> {
        for (i, e) in self.edges.iter().enumerate() {
            let n = 1 + e.k_right.is_some() as usize;
            if n == 0 || n > 2 {
                return Err(Error::NotInMesh(format!("edge {i} has {n} triangles")));
            }
        }
        for e in &self.edges {
            let p = self.vertices[e.z[0]];
            let q = self.vertices[e.z[1]];
            let len = dist(p, q);
            for (vi, &v) in self.vertices.iter().enumerate() {
                if vi == e.z[0] || vi == e.z[1] {
                    continue;
                }
                let d0 = dist(p, v) + dist(v, q);
                if (d0 - len).abs() < 1e-12 * len {
                    return Err(Error::NotInMesh(format!(
                        "vertex {vi} lies inside edge ({}, {})",
                        e.z[0], e.z[1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialize to the text format: header "ntri nvert nedge", vertex lines
    /// "x y", triangle lines "v0 v1 v2 refedge".
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {}", self.ntri(), self.nvert(), self.nedge()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{:.16e} {:.16e}", v[0], v[1]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "{} {} {} {}", t.v[0], t.v[1], t.v[2], t.ref_edge).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty mesh file".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header {header}"))))
            .collect::<Result<_>>()?;
        if head.len() != 3 {
            return Err(Error::Parse("header must be 'ntri nvert nedge'".into()));
        }
        let (ntri, nvert, nedge) = (head[0], head[1], head[2]);
        let mut vertices = Vec::with_capacity(nvert);
        for _ in 0..nvert {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("missing vertex line".into()))?;
            let xy: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad vertex {line}"))))
                .collect::<Result<_>>()?;
            if xy.len() != 2 {
                return Err(Error::Parse(format!("bad vertex line: {line}")));
            }
            vertices.push([xy[0], xy[1]]);
        }
        let mut triangles = Vec::with_capacity(ntri);
        for _ in 0..ntri {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("missing triangle line".into()))?;
            let f: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad triangle {line}"))))
                .collect::<Result<_>>()?;
            if f.len() != 4 || f[3] > 2 {
                return Err(Error::Parse(format!("bad triangle line: {line}")));
            }
            triangles.push(Triangle {
                v: [f[0], f[1], f[2]],
                ref_edge: f[3],
                generation: 0,
            });
        }
        let mesh = Self::from_raw(vertices, triangles);
        if mesh.nedge() != nedge {
            return Err(Error::Parse(format!(
                "edge count mismatch: header {nedge}, derived {}",
                mesh.nedge()
            )));
        }
        Ok(mesh)
    }
}

fn make_edge(
    vertices: &[Point],
    triangles: &[Triangle],
    key: (usize, usize),
    adj: &[usize],
    _first_tri: usize,
) -> Edge {
    let side = |z0: usize, z1: usize, t: usize| -> f64 {
        let p = vertices[z0];
        let q = vertices[z1];
        let h = dist(p, q);
        let tv = [(q[0] - p[0]) / h, (q[1] - p[1]) / h];
        let n = [-tv[1], tv[0]];
        let bary = {
            let c = triangles[t].v;
            [
                (vertices[c[0]][0] + vertices[c[1]][0] + vertices[c[2]][0]) / 3.0,
                (vertices[c[0]][1] + vertices[c[1]][1] + vertices[c[2]][1]) / 3.0,
            ]
        };
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        n[0] * (bary[0] - mid[0]) + n[1] * (bary[1] - mid[1])
    };
    if adj.len() == 2 {
        // Interior: ascending endpoints, n points into K_R.
        let (z0, z1) = key;
        let s0 = side(z0, z1, adj[0]);
        let (kl, kr) = if s0 > 0.0 {
            (adj[1], adj[0])
        } else {
            (adj[0], adj[1])
        };
        Edge {
            z: [z0, z1],
            k_left: kl,
            k_right: Some(kr),
        }
    } else {
        // Boundary: orient so n points out of the domain.
        let t = adj[0];
        let (a, b) = key;
        let z = if side(a, b, t) < 0.0 { [a, b] } else { [b, a] };
        Edge {
            z,
            k_left: t,
            k_right: None,
        }
    }
}

fn signed_area(vertices: &[Point], v: [usize; 3]) -> f64 {
    let a = vertices[v[0]];
    let b = vertices[v[1]];
    let c = vertices[v[2]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Coarse-to-fine bookkeeping produced by one refinement call.
#[derive(Debug, Clone)]
pub struct RefinementRelation {
    /// Coarse ancestor of each fine triangle (identity for unrefined ones).
    pub parent_tri: Vec<usize>,
    /// Fine triangles contained in each coarse triangle.
    pub succ_tri: Vec<Vec<usize>>,
    /// Fine edges covering each coarse edge, ordered from z0 to z1.
    pub succ_edge: Vec<Vec<usize>>,
    /// Coarse parent edge of each fine edge, if it lies on one.
    pub parent_edge: Vec<Option<usize>>,
    /// R = T \ T_hat: coarse triangles that were bisected.
    pub refined: Submesh,
    /// R_hat = T_hat \ T: fine triangles created by bisection.
    pub refined_fine: Submesh,
}

struct WorkTri {
    v: [usize; 3],
    ref_edge: usize,
    generation: u32,
    coarse: usize,
    alive: bool,
}

impl WorkTri {
    fn ref_pair(&self) -> (usize, usize) {
        let i = self.ref_edge;
        sorted_pair(self.v[(i + 1) % 3], self.v[(i + 2) % 3])
    }
}

struct Work {
    verts: Vec<Point>,
    tris: Vec<WorkTri>,
    /// Alive triangles adjacent to each (sorted) vertex pair.
    edge_map: HashMap<(usize, usize), Vec<usize>>,
    /// Midpoint vertex of every split vertex pair.
    split: HashMap<(usize, usize), usize>,
}

impl Work {
    fn new(mesh: &Triangulation) -> Self {
        let tris: Vec<WorkTri> = mesh
            .triangles
            .iter()
            .enumerate()
            .map(|(i, t)| WorkTri {
                v: t.v,
                ref_edge: t.ref_edge,
                generation: t.generation,
                coarse: i,
                alive: true,
            })
            .collect();
        let mut edge_map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, t) in tris.iter().enumerate() {
            for k in 0..3 {
                let key = sorted_pair(t.v[(k + 1) % 3], t.v[(k + 2) % 3]);
                edge_map.entry(key).or_default().push(i);
            }
        }
        Self {
            verts: mesh.vertices.clone(),
            tris,
            edge_map,
            split: HashMap::new(),
        }
    }

    fn neighbor_across(&self, t: usize, key: (usize, usize)) -> Option<usize> {
        self.edge_map
            .get(&key)?
            .iter()
            .copied()
            .find(|&s| s != t && self.tris[s].alive)
    }

    fn midpoint(&mut self, key: (usize, usize)) -> usize {
        if let Some(&m) = self.split.get(&key) {
            return m;
        }
        let p = self.verts[key.0];
        let q = self.verts[key.1];
        let m = self.verts.len();
        self.verts.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
        self.split.insert(key, m);
        m
    }

    fn bisect(&mut self, t: usize) {
        debug_assert!(self.tris[t].alive);
        let (v, r, gen, coarse) = {
            let wt = &self.tris[t];
            (wt.v, wt.ref_edge, wt.generation, wt.coarse)
        };
        let a = v[r];
        let b = v[(r + 1) % 3];
        let c = v[(r + 2) % 3];
        let m = self.midpoint(sorted_pair(b, c));
        self.tris[t].alive = false;
        for k in 0..3 {
            let key = sorted_pair(v[(k + 1) % 3], v[(k + 2) % 3]);
            if let Some(list) = self.edge_map.get_mut(&key) {
                list.retain(|&s| s != t);
            }
        }
        // Children keep ccw orientation; their refinement edges are the two
        // parent edges not bisected, which end up opposite the new vertex.
        for child in [[m, a, b], [m, c, a]] {
            let id = self.tris.len();
            self.tris.push(WorkTri {
                v: child,
                ref_edge: 0,
                generation: gen + 1,
                coarse,
                alive: true,
            });
            for k in 0..3 {
                let key = sorted_pair(child[(k + 1) % 3], child[(k + 2) % 3]);
                self.edge_map.entry(key).or_default().push(id);
            }
        }
    }

    /// Bisect t, recursively bisecting incompatible neighbours first.
    fn refine(&mut self, t0: usize) {
        let mut stack = vec![t0];
        let mut guard = 0usize;
        while let Some(&t) = stack.last() {
            guard += 1;
            assert!(
                guard < 100 * self.tris.len().max(64),
                "NVB closure failed to terminate; initial labelling incompatible"
            );
            if !self.tris[t].alive {
                stack.pop();
                continue;
            }
            let key = self.tris[t].ref_pair();
            match self.neighbor_across(t, key) {
                None => {
                    self.bisect(t);
                    stack.pop();
                }
                Some(n) if self.tris[n].ref_pair() == key => {
                    self.bisect(t);
                    self.bisect(n);
                    stack.pop();
                }
                Some(n) => stack.push(n),
            }
        }
    }
}

/// Newest vertex bisection: every marked triangle is bisected at least once
/// and closure bisections restore conformity.
pub fn refine_nvb(mesh: &Triangulation, marked: &Submesh) -> (Triangulation, RefinementRelation) {
    assert_eq!(marked.len(), mesh.ntri());
    let mut work = Work::new(mesh);
    for t in marked.iter() {
        if work.tris[t].alive {
            work.refine(t);
        }
    }
    finish(mesh, work)
}

/// Uniform refinement: bisect every triangle (plus closure).
pub fn refine_uniform(mesh: &Triangulation) -> (Triangulation, RefinementRelation) {
    refine_nvb(mesh, &Submesh::full(mesh.ntri()))
}

fn finish(coarse: &Triangulation, work: Work) -> (Triangulation, RefinementRelation) {
    let mut fine_tris = Vec::new();
    let mut parent_tri = Vec::new();
    for wt in work.tris.iter().filter(|wt| wt.alive) {
        parent_tri.push(wt.coarse);
        fine_tris.push(Triangle {
            v: wt.v,
            ref_edge: wt.ref_edge,
            generation: wt.generation,
        });
    }
    let fine = Triangulation::from_raw(work.verts.clone(), fine_tris);

    let mut succ_tri = vec![Vec::new(); coarse.ntri()];
    for (f, &c) in parent_tri.iter().enumerate() {
        succ_tri[c].push(f);
    }
    let mut refined = Submesh::empty(coarse.ntri());
    let mut refined_fine = Submesh::empty(fine.ntri());
    for (c, succ) in succ_tri.iter().enumerate() {
        if succ.len() > 1 {
            refined.insert(c);
            for &f in succ {
                refined_fine.insert(f);
            }
        }
    }

    // Edge relation via the split map: walk each coarse edge's split tree.
    let mut succ_edge = vec![Vec::new(); coarse.nedge()];
    let mut parent_edge = vec![None; fine.nedge()];
    for (ce, edge) in coarse.edges.iter().enumerate() {
        let mut leaves = Vec::new();
        collect_edge_leaves(&work.split, edge.z[0], edge.z[1], &mut leaves);
        for (a, b) in leaves {
            let fe = fine
                .edge_between(a, b)
                .expect("split leaf must be a fine edge");
            parent_edge[fe] = Some(ce);
            succ_edge[ce].push(fe);
        }
    }

    (
        fine,
        RefinementRelation {
            parent_tri,
            succ_tri,
            succ_edge,
            parent_edge,
            refined,
            refined_fine,
        },
    )
}

fn collect_edge_leaves(
    split: &HashMap<(usize, usize), usize>,
    a: usize,
    b: usize,
    out: &mut Vec<(usize, usize)>,
) {
    if let Some(&m) = split.get(&sorted_pair(a, b)) {
        collect_edge_leaves(split, a, m, out);
        collect_edge_leaves(split, m, b, out);
    } else {
        out.push((a, b));
    }
}

/// Identity relation (no refinement): T_hat = T.
pub fn identity_relation(mesh: &Triangulation) -> RefinementRelation {
    RefinementRelation {
        parent_tri: (0..mesh.ntri()).collect(),
        succ_tri: (0..mesh.ntri()).map(|t| vec![t]).collect(),
        succ_edge: (0..mesh.nedge()).map(|e| vec![e]).collect(),
        parent_edge: (0..mesh.nedge()).map(Some).collect(),
        refined: Submesh::empty(mesh.ntri()),
        refined_fine: Submesh::empty(mesh.ntri()),
    }
}

/// Initial triangulation of the L-shaped domain ]-1,1[^2 \ [0,1[^2:
/// three unit squares, each split by the diagonal through the reentrant
/// corner; the refinement edge is that diagonal.
pub fn make_lshape_initial() -> Triangulation {
    let vertices = vec![
        [0.0, 0.0],
        [0.0, 1.0],
        [-1.0, 1.0],
        [-1.0, 0.0],
        [-1.0, -1.0],
        [0.0, -1.0],
        [1.0, -1.0],
        [1.0, 0.0],
    ];
    let tri = |v: [usize; 3], r: usize| Triangle {
        v,
        ref_edge: r,
        generation: 0,
    };
    let triangles = vec![
        tri([0, 2, 3], 2),
        tri([0, 1, 2], 1),
        tri([0, 3, 4], 1),
        tri([0, 4, 5], 2),
        tri([0, 5, 6], 1),
        tri([0, 6, 7], 2),
    ];
    Triangulation::from_raw(vertices, triangles)
}

/// Two-triangle unit square ]0,1[^2 with the diagonal as refinement edge.
pub fn make_unit_square_initial() -> Triangulation {
    let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let triangles = vec![
        Triangle {
            v: [0, 1, 2],
            ref_edge: 1,
            generation: 0,
        },
        Triangle {
            v: [0, 2, 3],
            ref_edge: 2,
            generation: 0,
        },
    ];
    Triangulation::from_raw(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lshape_counts() {
        let m = make_lshape_initial();
        assert_eq!(m.nvert(), 8);
        assert_eq!(m.ntri(), 6);
        assert_eq!(m.nedge(), 13);
        m.check_conformity().unwrap();
    }

    #[test]
    fn boundary_normals_point_outward() {
        let m = make_lshape_initial();
        for (e, edge) in m.edges.iter().enumerate() {
            if edge.is_boundary() {
                let n = m.edge_normal(e);
                let bary = m.barycenter(edge.k_left);
                let mid = m.edge_midpoint(e);
                let d = n[0] * (bary[0] - mid[0]) + n[1] * (bary[1] - mid[1]);
                assert!(d < 0.0, "edge {e} normal points inward");
            }
        }
    }

    #[test]
    fn interior_normal_points_into_k_right() {
        let m = make_lshape_initial();
        let (fine, _) = refine_uniform(&m);
        for (e, edge) in fine.edges.iter().enumerate() {
            if let Some(kr) = edge.k_right {
                let n = fine.edge_normal(e);
                let bary = fine.barycenter(kr);
                let mid = fine.edge_midpoint(e);
                let d = n[0] * (bary[0] - mid[0]) + n[1] * (bary[1] - mid[1]);
                assert!(d > 0.0, "edge {e}: n does not point into K_R");
            }
        }
    }

    #[test]
    fn refine_empty_is_identity() {
        let m = make_lshape_initial();
        let (fine, rel) = refine_nvb(&m, &Submesh::empty(m.ntri()));
        assert_eq!(fine.ntri(), m.ntri());
        assert!(rel.refined.is_empty());
        assert!(rel.refined_fine.is_empty());
    }

    /// Mark a single triangle of the 2-triangle square: the neighbour shares
    /// the refinement edge, so exactly both get bisected.
    #[test]
    fn single_mark_on_square() {
        let m = make_unit_square_initial();
        let marked = Submesh::from_indices(m.ntri(), [0]);
        let (fine, rel) = refine_nvb(&m, &marked);
        fine.check_conformity().unwrap();
        assert_eq!(fine.ntri(), 4);
        assert_eq!(rel.succ_tri[0].len(), 2);
        assert_eq!(rel.succ_tri[1].len(), 2);
        // Children have half the parent area.
        for c in 0..m.ntri() {
            for &f in &rel.succ_tri[c] {
                assert!((fine.area(f) - m.area(c) / 2.0).abs() < 1e-15);
            }
        }
    }

    /// Closure: marking a triangle whose neighbour is incompatible forces
    /// extra bisections but conformity holds.
    #[test]
    fn closure_keeps_conformity() {
        let mut mesh = make_lshape_initial();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..6 {
            let n = mesh.ntri();
            let marked =
                Submesh::from_indices(n, (0..n).filter(|_| rng.gen_bool(0.3)));
            let (fine, rel) = refine_nvb(&mesh, &marked);
            fine.check_conformity().unwrap();
            for t in marked.iter() {
                assert!(rel.succ_tri[t].len() >= 2, "marked triangle not bisected");
            }
            // omega_R = omega_Rhat and T cap That = T \ R
            let area_r: f64 = rel.refined.iter().map(|t| mesh.area(t)).sum();
            let area_rhat: f64 = rel.refined_fine.iter().map(|t| fine.area(t)).sum();
            assert!((area_r - area_rhat).abs() < 1e-12);
            for (c, succ) in rel.succ_tri.iter().enumerate() {
                if !rel.refined.contains(c) {
                    assert_eq!(succ.len(), 1);
                    assert_eq!(mesh.triangles[c].v, fine.triangles[succ[0]].v);
                }
            }
            // every coarse edge is exactly covered by its successors
            for (e, succ) in rel.succ_edge.iter().enumerate() {
                let total: f64 = succ.iter().map(|&f| fine.h_edge(f)).sum();
                assert!((total - mesh.h_edge(e)).abs() < 1e-12);
            }
            mesh = fine;
        }
    }

    #[test]
    fn shape_regularity_bounded() {
        let m0 = make_lshape_initial();
        let gamma0 = m0.shape_regularity();
        let mut mesh = m0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = mesh.ntri();
            let marked = Submesh::from_indices(n, (0..n).filter(|_| rng.gen_bool(0.4)));
            let (fine, _) = refine_nvb(&mesh, &marked);
            mesh = fine;
        }
        assert!(mesh.shape_regularity() <= 2.0 * gamma0 + 1e-12);
    }

    #[test]
    fn local_mesh_sizes_nested() {
        let m = make_lshape_initial();
        let (fine, _) = refine_uniform(&m);
        for (e, edge) in fine.edges.iter().enumerate() {
            let he = fine.h_edge(e);
            let mut tris = vec![edge.k_left];
            tris.extend(edge.k_right);
            let h_patch = tris.iter().map(|&t| fine.h_tri(t)).fold(0.0, f64::max);
            for &t in &tris {
                let hk = fine.h_tri(t);
                assert!(he <= hk + 1e-15 && hk <= h_patch + 1e-15);
            }
        }
    }

    #[test]
    fn layers_and_patches() {
        let m = make_lshape_initial();
        let empty = Submesh::empty(m.ntri());
        assert!(m.layer_half(&empty).is_empty());
        assert!(m.layer_one(&empty).is_empty());
        let full = Submesh::full(m.ntri());
        assert_eq!(m.layer_half(&full), full);
        assert_eq!(m.layer_one(&full), full);

        // Two adjacent triangles on a refined mesh: S^(1/2) = edge
        // neighbours, S^1 = vertex neighbours, S in both.
        let (fine, _) = refine_uniform(&refine_uniform(&m).0);
        let e = fine
            .edges
            .iter()
            .position(|e| e.k_right.is_some())
            .unwrap();
        let s = fine.patch_edge(e);
        let half = fine.layer_half(&s);
        let one = fine.layer_one(&s);
        for t in s.iter() {
            assert!(half.contains(t) && one.contains(t));
        }
        for t in half.iter() {
            assert!(one.contains(t));
            let shares_edge = fine.tri_edges[t].iter().any(|&te| {
                let ed = &fine.edges[te];
                s.contains(ed.k_left) || ed.k_right.map(|r| s.contains(r)).unwrap_or(false)
            });
            assert!(shares_edge || s.contains(t));
        }
        assert!(one.count() >= half.count());

        for (ei, edge) in fine.edges.iter().enumerate() {
            let p = fine.patch_edge(ei);
            assert_eq!(p.count(), 1 + edge.k_right.is_some() as usize);
        }
        // card T_z finite and small
        let nmax = (0..fine.nvert())
            .map(|z| fine.patch_vertex(z).count())
            .max()
            .unwrap();
        assert!(nmax <= 12);
    }

    #[test]
    fn interface_edges() {
        let m = make_lshape_initial();
        assert!(m.interface(&Submesh::empty(m.ntri())).is_empty());
        assert!(m.interface(&Submesh::full(m.ntri())).is_empty());
        // The two top-left triangles cover the square [-1,0]x[0,1]; their
        // only interface with the rest of the domain is the spoke from the
        // reentrant corner to (-1,0): the other candidate is on the domain
        // boundary and hence excluded.
        let s = Submesh::from_indices(m.ntri(), [0, 1]);
        let gamma = m.interface(&s);
        assert_eq!(gamma.len(), 1);
        for e in gamma {
            assert!(!m.edges[e].is_boundary());
        }
    }

    #[test]
    fn text_round_trip() {
        let (m, _) = refine_uniform(&make_lshape_initial());
        let text = m.to_text();
        let back = Triangulation::from_text(&text).unwrap();
        assert_eq!(back.ntri(), m.ntri());
        assert_eq!(back.nedge(), m.nedge());
        for (a, b) in m.vertices.iter().zip(&back.vertices) {
            assert_eq!(a, b, "coordinates must round-trip bit-exactly");
        }
        for (a, b) in m.triangles.iter().zip(&back.triangles) {
            assert_eq!(a.v, b.v);
            assert_eq!(a.ref_edge, b.ref_edge);
        }
        // comments are ignored
        let commented = format!("# mesh\n{text}");
        assert!(Triangulation::from_text(&commented).is_ok());
    }
}
