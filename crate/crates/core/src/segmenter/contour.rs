//! Region boundaries from a cell-centered label map at the 0.5 isovalue of each
//! region indicator.
//!
//! The indicator is sampled at cell centers and padded with one ring of zeros, so a
//! region touching the domain edge is closed along `∂Ω`. In 2D this is marching
//! squares; the two ambiguous cases connect the foreground diagonally. In 3D each cube
//! of eight samples is split into the six Kuhn tetrahedra and every tetrahedron is
//! contoured on its own, which is crack-free because the split agrees on shared faces.

use std::collections::HashMap;

use crate::error::Result;
use crate::grid::{kuhn_simplices, GridSpec};

/// Polylines (2D, `dim = 2` indices per element) or triangle meshes (3D).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGeometry {
    pub dim: usize,
    pub vertices: Vec<[f64; 3]>,
    /// Flat element list with `dim` vertex indices per element.
    pub elements: Vec<usize>,
    /// Region id each element bounds.
    pub element_regions: Vec<u32>,
}

impl BoundaryGeometry {
    pub fn element_count(&self) -> usize {
        self.elements.len() / self.dim
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e * self.dim..(e + 1) * self.dim]
    }

    /// Sub-geometry bounding one region, with vertices renumbered.
    pub fn region(&self, label: u32) -> BoundaryGeometry {
        let mut map = HashMap::new();
        let mut out = BoundaryGeometry {
            dim: self.dim,
            vertices: Vec::new(),
            elements: Vec::new(),
            element_regions: Vec::new(),
        };
        for e in 0..self.element_count() {
            if self.element_regions[e] != label {
                continue;
            }
            for &v in self.element(e) {
                let id = *map.entry(v).or_insert_with(|| {
                    out.vertices.push(self.vertices[v]);
                    out.vertices.len() - 1
                });
                out.elements.push(id);
            }
            out.element_regions.push(label);
        }
        out
    }

    /// Connected pieces, counted over shared vertices.
    pub fn component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.vertices.len());
        let mut used = vec![false; self.vertices.len()];
        for e in 0..self.element_count() {
            let el = self.element(e);
            for &v in el {
                used[v] = true;
                uf.union(el[0], v);
            }
        }
        (0..self.vertices.len())
            .filter(|&v| used[v] && uf.find(v) == v)
            .count()
    }

    /// Total length (2D) or area (3D).
    pub fn measure(&self) -> f64 {
        (0..self.element_count())
            .map(|e| {
                let el = self.element(e);
                let a = self.vertices[el[0]];
                let b = self.vertices[el[1]];
                let u = sub(b, a);
                if self.dim == 2 {
                    dot(u, u).sqrt()
                } else {
                    let w = sub(self.vertices[el[2]], a);
                    let c = cross(u, w);
                    0.5 * dot(c, c).sqrt()
                }
            })
            .sum()
    }

    /// `V - E + F` of a triangle mesh; for polylines `V - E`.
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertices.len() as i64;
        if self.dim == 2 {
            return v - self.element_count() as i64;
        }
        let mut edges = std::collections::HashSet::new();
        for e in 0..self.element_count() {
            let t = self.element(e);
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        v - edges.len() as i64 + self.element_count() as i64
    }

    /// Every edge (3D) or vertex (2D) is shared by exactly two elements.
    pub fn is_closed(&self) -> bool {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for e in 0..self.element_count() {
            let t = self.element(e);
            if self.dim == 2 {
                *count.entry((t[0], t[0])).or_default() += 1;
                *count.entry((t[1], t[1])).or_default() += 1;
            } else {
                for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                    *count.entry((a.min(b), a.max(b))).or_default() += 1;
                }
            }
        }
        count.values().all(|&c| c == 2)
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Zero-padded sample lattice: sample `(i, j, k)` sits at cell center `i - 1` etc.
struct Lattice {
    dim: usize,
    ext: [usize; 3],
    h: f64,
}

impl Lattice {
    fn new(grid: &GridSpec) -> Self {
        let n = grid.n() + 2;
        let ext = if grid.dim() == 3 { [n, n, n] } else { [n, n, 1] };
        Self {
            dim: grid.dim(),
            ext,
            h: grid.h(),
        }
    }

    fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.ext[0] * (p[1] + self.ext[1] * p[2])
    }

    fn position(&self, p: [usize; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..self.dim {
            out[a] = (p[a] as f64 - 0.5) * self.h;
        }
        out
    }

    fn inside(&self, grid: &GridSpec, labels: &[u32], label: u32, p: [usize; 3]) -> bool {
        if (0..self.dim).any(|a| p[a] == 0 || p[a] == self.ext[a] - 1) {
            return false;
        }
        labels[grid.cell_index(p[0] - 1, p[1] - 1, if self.dim == 3 { p[2] - 1 } else { 0 })] == label
    }
}

struct Builder<'a> {
    lattice: &'a Lattice,
    out: BoundaryGeometry,
    cache: HashMap<(usize, usize), usize>,
}

impl Builder<'_> {
    /// Vertex at the midpoint of the lattice edge `a`-`b`.
    fn vertex(&mut self, a: [usize; 3], b: [usize; 3]) -> usize {
        let (ia, ib) = (self.lattice.index(a), self.lattice.index(b));
        let key = (ia.min(ib), ia.max(ib));
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let (pa, pb) = (self.lattice.position(a), self.lattice.position(b));
        let mid = [
            0.5 * (pa[0] + pb[0]),
            0.5 * (pa[1] + pb[1]),
            0.5 * (pa[2] + pb[2]),
        ];
        self.out.vertices.push(mid);
        let id = self.out.vertices.len() - 1;
        self.cache.insert(key, id);
        id
    }

    /// Appends an element oriented so that `outward` points away from the region.
    fn push(&mut self, mut el: Vec<usize>, outward: [f64; 3], label: u32) {
        let v = &self.out.vertices;
        let normal = if self.out.dim == 2 {
            let d = sub(v[el[1]], v[el[0]]);
            [d[1], -d[0], 0.0]
        } else {
            cross(sub(v[el[1]], v[el[0]]), sub(v[el[2]], v[el[0]]))
        };
        if dot(normal, outward) < 0.0 {
            el.swap(0, 1);
        }
        self.out.elements.extend(el);
        self.out.element_regions.push(label);
    }
}

/// Boundary of every region, elements tagged with their region id.
pub fn extract_boundary(grid: &GridSpec, labels: &[u32]) -> Result<BoundaryGeometry> {
    grid.check_cells("labels", labels.len())?;
    let lattice = Lattice::new(grid);
    let mut b = Builder {
        lattice: &lattice,
        out: BoundaryGeometry {
            dim: grid.dim(),
            vertices: Vec::new(),
            elements: Vec::new(),
            element_regions: Vec::new(),
        },
        cache: HashMap::new(),
    };
    let max = labels.iter().copied().max().unwrap_or(0);
    for label in 1..=max {
        b.cache.clear();
        if grid.dim() == 2 {
            squares(grid, labels, label, &mut b);
        } else {
            tetrahedra(grid, labels, label, &mut b);
        }
    }
    Ok(b.out)
}

fn squares(grid: &GridSpec, labels: &[u32], label: u32, b: &mut Builder) {
    let lat = b.lattice;
    // Corners counter-clockwise: (0,0), (1,0), (1,1), (0,1).
    const CORNERS: [[usize; 2]; 4] = [[0, 0], [1, 0], [1, 1], [0, 1]];
    for j in 0..lat.ext[1] - 1 {
        for i in 0..lat.ext[0] - 1 {
            let pts: Vec<[usize; 3]> = CORNERS.iter().map(|c| [i + c[0], j + c[1], 0]).collect();
            let ins: Vec<bool> = pts.iter().map(|&p| lat.inside(grid, labels, label, p)).collect();
            let count = ins.iter().filter(|&&x| x).count();
            if count == 0 || count == 4 {
                continue;
            }
            // Crossed edges in counter-clockwise order; edge e joins corners e and e+1.
            let crossed: Vec<usize> = (0..4).filter(|&e| ins[e] != ins[(e + 1) % 4]).collect();
            let pairs: Vec<(usize, usize)> = if crossed.len() == 2 {
                vec![(crossed[0], crossed[1])]
            } else if ins[0] {
                // Diagonal 0-2 inside: cut off the outside corners 1 and 3.
                vec![(0, 1), (2, 3)]
            } else {
                vec![(3, 0), (1, 2)]
            };
            for (e0, e1) in pairs {
                let v0 = b.vertex(pts[e0], pts[(e0 + 1) % 4]);
                let v1 = b.vertex(pts[e1], pts[(e1 + 1) % 4]);
                // Outward: from the inside end of either crossed edge towards its outside end.
                let (a, o) = if ins[e0] { (e0, (e0 + 1) % 4) } else { ((e0 + 1) % 4, e0) };
                let outward = sub(lat.position(pts[o]), lat.position(pts[a]));
                b.push(vec![v0, v1], outward, label);
            }
        }
    }
}

fn tetrahedra(grid: &GridSpec, labels: &[u32], label: u32, b: &mut Builder) {
    let lat = b.lattice;
    let tets: Vec<[usize; 4]> = kuhn_simplices(3).iter().map(|s| s.path).collect();
    let mut pts = [[0usize; 3]; 8];
    let mut ins = [false; 8];
    for k in 0..lat.ext[2] - 1 {
        for j in 0..lat.ext[1] - 1 {
            for i in 0..lat.ext[0] - 1 {
                for c in 0..8 {
                    pts[c] = [i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1)];
                    ins[c] = lat.inside(grid, labels, label, pts[c]);
                }
                let count = ins.iter().filter(|&&x| x).count();
                if count == 0 || count == 8 {
                    continue;
                }
                for t in &tets {
                    let inner: Vec<usize> = t.iter().copied().filter(|&c| ins[c]).collect();
                    let outer: Vec<usize> = t.iter().copied().filter(|&c| !ins[c]).collect();
                    if inner.is_empty() || outer.is_empty() {
                        continue;
                    }
                    let centroid = |cs: &[usize]| {
                        let mut m = [0.0; 3];
                        for &c in cs {
                            let p = lat.position(pts[c]);
                            for a in 0..3 {
                                m[a] += p[a] / cs.len() as f64;
                            }
                        }
                        m
                    };
                    let outward = sub(centroid(&outer), centroid(&inner));
                    match (inner.len(), outer.len()) {
                        (1, 3) | (3, 1) => {
                            let (apex, base) = if inner.len() == 1 { (inner[0], &outer) } else { (outer[0], &inner) };
                            let vs: Vec<usize> = base.iter().map(|&c| b.vertex(pts[apex], pts[c])).collect();
                            b.push(vs, outward, label);
                        }
                        _ => {
                            // Quad through the four crossed edges, split into two triangles.
                            let (a0, a1, o0, o1) = (inner[0], inner[1], outer[0], outer[1]);
                            let q = [
                                b.vertex(pts[a0], pts[o0]),
                                b.vertex(pts[a0], pts[o1]),
                                b.vertex(pts[a1], pts[o1]),
                                b.vertex(pts[a1], pts[o0]),
                            ];
                            b.push(vec![q[0], q[1], q[2]], outward, label);
                            b.push(vec![q[0], q[2], q[3]], outward, label);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;

    fn g(dim: usize, n: usize) -> GridSpec {
        GridSpec::new(dim, n, BoundaryCondition::Natural).unwrap()
    }

    #[test]
    fn full_domain_is_frame() {
        let grid = g(2, 8);
        let geo = extract_boundary(&grid, &[1; 64]).unwrap();
        assert_eq!(geo.component_count(), 1);
        assert!(geo.is_closed());
        assert!(geo.vertices.iter().all(|v| {
            let on = |x: f64| x.abs() < 1e-15 || (x - 1.0).abs() < 1e-15;
            on(v[0]) || on(v[1])
        }));
        // Frame minus the four chamfered corners.
        let h = grid.h();
        let expect = 4.0 - 4.0 * h + 4.0 * (0.5f64).sqrt() * h;
        assert!((geo.measure() - expect).abs() < 1e-12);
    }

    #[test]
    fn centered_square_perimeter() {
        let grid = g(2, 32);
        let labels: Vec<u32> = (0..grid.cell_count())
            .map(|c| {
                let m = grid.cell_multi_index(c);
                if (8..24).contains(&m[0]) && (8..24).contains(&m[1]) { 2 } else { 1 }
            })
            .collect();
        let geo = extract_boundary(&grid, &labels).unwrap().region(2);
        assert_eq!(geo.component_count(), 1);
        assert!(geo.is_closed());
        assert!((geo.measure() - 2.0).abs() / 2.0 < 0.05);
    }

    #[test]
    fn saddle_keeps_diagonal_connected() {
        let grid = g(2, 4);
        let mut labels = vec![1u32; 16];
        labels[grid.cell_index(1, 1, 0)] = 2;
        labels[grid.cell_index(2, 2, 0)] = 2;
        let geo = extract_boundary(&grid, &labels).unwrap().region(2);
        assert_eq!(geo.component_count(), 1);
        assert!(geo.is_closed());
    }

    #[test]
    fn two_cuboids() {
        let grid = g(3, 12);
        let labels: Vec<u32> = (0..grid.cell_count())
            .map(|c| {
                let m = grid.cell_multi_index(c);
                let yz = (3..9).contains(&m[1]) && (3..9).contains(&m[2]);
                if yz && ((2..5).contains(&m[0]) || (7..10).contains(&m[0])) { 2 } else { 1 }
            })
            .collect();
        let geo = extract_boundary(&grid, &labels).unwrap();
        let cubes = geo.region(2);
        assert_eq!(cubes.component_count(), 2);
        assert!(cubes.is_closed());
        assert_eq!(cubes.euler_characteristic(), 4);
        // Background: outer box plus the two cavities.
        let bg = geo.region(1);
        assert_eq!(bg.component_count(), 3);
        assert_eq!(bg.euler_characteristic(), 6);
    }

    #[test]
    fn outward_orientation_3d() {
        let grid = g(3, 8);
        let labels: Vec<u32> = (0..grid.cell_count())
            .map(|c| {
                let m = grid.cell_multi_index(c);
                if m.iter().all(|&v| (2..6).contains(&v)) { 2 } else { 1 }
            })
            .collect();
        let geo = extract_boundary(&grid, &labels).unwrap().region(2);
        // Divergence theorem: signed volume of a closed outward mesh is positive.
        let mut vol = 0.0;
        for e in 0..geo.element_count() {
            let t = geo.element(e);
            let (a, b, c) = (geo.vertices[t[0]], geo.vertices[t[1]], geo.vertices[t[2]]);
            vol += dot(a, cross(b, c)) / 6.0;
        }
        assert!(vol > 0.0);
        assert!((vol - 0.125).abs() < 0.02);
    }
}
