//! Triangulated parameter domains: the round 2-sphere (two stereographic
//! grid charts joined by a seam strip), a flat disk, and a flat cylinder.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Half-width of each stereographic chart square.
pub const SPHERE_CHART_HALF_WIDTH: f64 = 1.25;

/// Chart id of the stereographic chart centered at the south pole, `z = (x, y) / (1 - x3)`.
pub const CHART_S: u8 = 0;
/// Chart id of the stereographic chart centered at the north pole, `w = (x, y) / (1 + x3)`.
pub const CHART_N: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainKind {
    Sphere { n: usize },
    Disk { radius: f64, n: usize },
    Cylinder { t0: f64, t1: f64, n_t: usize, n_theta: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub chart: u8,
    /// Coordinates in the owning chart (`(t, θ)` on the cylinder).
    pub coord: [f64; 2],
    /// Grid index in the owning chart; `usize::MAX` if none.
    pub grid: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tri {
    /// Vertices, ordered so the sphere triangles are outward oriented.
    pub v: [usize; 3],
    /// Chart in which the triangle is affinely parametrized.
    pub chart: u8,
    /// Vertex coordinates in that chart (unwrapped across the cylinder seam).
    pub p: [[f64; 2]; 3],
    /// Gradients of the three barycentric basis functions.
    pub gx: [f64; 3],
    pub gy: [f64; 3],
    /// Parameter area.
    pub area: f64,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub start: Vec<usize>,
    pub idx: Vec<usize>,
    pub w: Vec<f64>,
}

impl Csr {
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.start[i], self.start[i + 1]);
        (&self.idx[a..b], &self.w[a..b])
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ChartGrid {
    n: usize,
    lo: f64,
    h: f64,
    /// First of the two triangles of cell `(i, j)` at `i * (n - 1) + j`; `usize::MAX` if absent.
    cell_tri: Vec<usize>,
}

impl ChartGrid {
    fn locate_cell(&self, c: [f64; 2]) -> Option<(usize, f64, f64)> {
        let fi = (c[0] - self.lo) / self.h;
        let fj = (c[1] - self.lo) / self.h;
        if !(fi >= 0.0 && fj >= 0.0) {
            return None;
        }
        let i = fi.floor() as usize;
        let j = fj.floor() as usize;
        if i >= self.n - 1 || j >= self.n - 1 {
            return None;
        }
        let t = self.cell_tri[i * (self.n - 1) + j];
        if t == usize::MAX {
            None
        } else {
            Some((t, fi - i as f64, fj - j as f64))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SeamIndex {
    lo: f64,
    h: f64,
    m: usize,
    buckets: Vec<Vec<usize>>,
}

/// A triangulated domain with P1 operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub kind: DomainKind,
    pub nodes: Vec<Node>,
    pub tris: Vec<Tri>,
    /// Cotangent edge weights: `E(u) = ½ Σ_edges c_pq |u_p - u_q|²`.
    pub adj: Csr,
    /// Triangles incident to each node.
    pub node_tris: Csr,
    /// Nodes on the mesh boundary (disk rim, cylinder ends).
    pub boundary: Vec<bool>,
    /// Area weights per node (round metric on the sphere, flat otherwise).
    pub quad_weight: Vec<f64>,
    /// Embedding of each node in the unit sphere (sphere domains only).
    pub sphere_pts: Vec<[f64; 3]>,
    grids: Vec<ChartGrid>,
    seam: Option<SeamIndex>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub tri: usize,
    pub bary: [f64; 3],
}

pub fn chart_to_sphere(chart: u8, c: [f64; 2]) -> [f64; 3] {
    let r2 = c[0] * c[0] + c[1] * c[1];
    let d = 1.0 + r2;
    if chart == CHART_S {
        [2.0 * c[0] / d, 2.0 * c[1] / d, (r2 - 1.0) / d]
    } else {
        [2.0 * c[0] / d, 2.0 * c[1] / d, (1.0 - r2) / d]
    }
}

/// Chart coordinates of a sphere point; `None` at the pole the chart omits.
pub fn sphere_to_chart(chart: u8, x: [f64; 3]) -> Option<[f64; 2]> {
    let d = if chart == CHART_S { 1.0 - x[2] } else { 1.0 + x[2] };
    if d <= 1e-300 {
        return None;
    }
    // Use the better-conditioned formula (x, y) * (1 ± x3) / (x² + y²) when d is small.
    if d < 0.5 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let e = 2.0 - d;
        if r2 <= 1e-300 {
            return None;
        }
        return Some([x[0] * e / r2, x[1] * e / r2]);
    }
    Some([x[0] / d, x[1] / d])
}

/// Transition between the two sphere charts: `z = w / |w|²`.
pub fn chart_transition(c: [f64; 2]) -> Option<[f64; 2]> {
    let r2 = c[0] * c[0] + c[1] * c[1];
    if r2 == 0.0 {
        None
    } else {
        Some([c[0] / r2, c[1] / r2])
    }
}

fn tri_gradients(p: &[[f64; 2]; 3]) -> ([f64; 3], [f64; 3], f64) {
    let (x0, y0) = (p[0][0], p[0][1]);
    let (x1, y1) = (p[1][0], p[1][1]);
    let (x2, y2) = (p[2][0], p[2][1]);
    let det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    let gx = [(y1 - y2) / det, (y2 - y0) / det, (y0 - y1) / det];
    let gy = [(x2 - x1) / det, (x0 - x2) / det, (x1 - x0) / det];
    (gx, gy, 0.5 * det.abs())
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn geodesic_triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let triple = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0]);
    let d = 1.0 + dot3(a, b) + dot3(b, c) + dot3(c, a);
    2.0 * triple.abs().atan2(d)
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn make_tri(v: [usize; 3], chart: u8, p: [[f64; 2]; 3]) -> Tri {
    let (gx, gy, area) = tri_gradients(&p);
    let centroid = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
    Tri { v, chart, p, gx, gy, area, centroid }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid domain parameters: {0}")]
    InvalidParameters(String),
    #[error("mesh construction failed: {0}")]
    Construction(String),
}

/// Grid-chart triangulation shared by all domain kinds: owned nodes, included cells.
struct GridPatch {
    /// Global node id per grid node or `usize::MAX`.
    node_of: Vec<usize>,
    /// Included cells as `(i, j)`.
    cells: Vec<(usize, usize)>,
}

fn grid_patch(n: usize, owned: &dyn Fn(usize, usize) -> bool, next_id: &mut usize) -> GridPatch {
    let mut cells = Vec::new();
    let mut used = vec![false; n * n];
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            if owned(i, j) && owned(i + 1, j) && owned(i, j + 1) && owned(i + 1, j + 1) {
                cells.push((i, j));
                used[i * n + j] = true;
                used[(i + 1) * n + j] = true;
                used[i * n + j + 1] = true;
                used[(i + 1) * n + j + 1] = true;
            }
        }
    }
    let mut node_of = vec![usize::MAX; n * n];
    for k in 0..n * n {
        if used[k] {
            node_of[k] = *next_id;
            *next_id += 1;
        }
    }
    GridPatch { node_of, cells }
}

/// Boundary loop of a union of grid cells, counterclockwise in chart coordinates.
fn patch_boundary_loop(n: usize, patch: &GridPatch) -> Result<Vec<(usize, usize)>, MeshError> {
    // Directed boundary edges of the CCW-oriented cells, keyed by grid node index.
    let mut count: BTreeMap<(usize, usize), i32> = BTreeMap::new();
    let id = |i: usize, j: usize| i * n + j;
    for &(i, j) in &patch.cells {
        let c = [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)];
        for k in 0..4 {
            let (a, b) = (c[k], c[(k + 1) % 4]);
            if count.remove(&(b, a)).is_none() {
                *count.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(a, b), _) in &count {
        if next.insert(a, b).is_some() {
            return Err(MeshError::Construction("pinched boundary loop".into()));
        }
    }
    let start = *next.keys().next().ok_or_else(|| MeshError::Construction("empty patch".into()))?;
    let mut out = vec![start];
    let mut cur = next[&start];
    while cur != start {
        out.push(cur);
        cur = *next.get(&cur).ok_or_else(|| MeshError::Construction("open boundary".into()))?;
        if out.len() > next.len() {
            return Err(MeshError::Construction("boundary walk did not close".into()));
        }
    }
    if out.len() != next.len() {
        return Err(MeshError::Construction("patch boundary has several loops".into()));
    }
    Ok(out.into_iter().map(|k| (k / n, k % n)).collect())
}

impl Domain {
    pub fn new(kind: DomainKind) -> Result<Self, MeshError> {
        match kind {
            DomainKind::Sphere { n } => Self::sphere(n),
            DomainKind::Disk { radius, n } => Self::disk(radius, n),
            DomainKind::Cylinder { t0, t1, n_t, n_theta } => Self::cylinder(t0, t1, n_t, n_theta),
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, DomainKind::Sphere { .. })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Two stereographic charts, each an `n × n` grid over `[-L, L]²`, joined by
    /// a strip of seam triangles near the equator.
    pub fn sphere(n: usize) -> Result<Self, MeshError> {
        if n < 9 {
            return Err(MeshError::InvalidParameters(format!("sphere grid needs n >= 9, got {n}")));
        }
        let l = SPHERE_CHART_HALF_WIDTH;
        let h = 2.0 * l / (n as f64 - 1.0);
        let coord = |i: usize| -l + i as f64 * h;
        let r2 = |i: usize, j: usize| coord(i).powi(2) + coord(j).powi(2);
        let mut next_id = 0usize;
        let s_patch = grid_patch(n, &|i, j| r2(i, j) <= 1.0, &mut next_id);
        let n_patch = grid_patch(n, &|i, j| r2(i, j) < 1.0, &mut next_id);
        let total = next_id;
        let mut nodes = vec![Node { chart: 0, coord: [0.0; 2], grid: [0; 2] }; total];
        for (chart, patch) in [(CHART_S, &s_patch), (CHART_N, &n_patch)] {
            for i in 0..n {
                for j in 0..n {
                    let id = patch.node_of[i * n + j];
                    if id != usize::MAX {
                        nodes[id] = Node { chart, coord: [coord(i), coord(j)], grid: [i, j] };
                    }
                }
            }
        }
        let sphere_pts: Vec<[f64; 3]> = nodes.iter().map(|nd| chart_to_sphere(nd.chart, nd.coord)).collect();

        let mut tris = Vec::new();
        let mut grids = Vec::new();
        for (chart, patch) in [(CHART_S, &s_patch), (CHART_N, &n_patch)] {
            let mut cell_tri = vec![usize::MAX; (n - 1) * (n - 1)];
            for &(i, j) in &patch.cells {
                let a = patch.node_of[i * n + j];
                let b = patch.node_of[(i + 1) * n + j];
                let c = patch.node_of[(i + 1) * n + j + 1];
                let d = patch.node_of[i * n + j + 1];
                cell_tri[i * (n - 1) + j] = tris.len();
                for v in [[a, b, c], [a, c, d]] {
                    let p = [nodes[v[0]].coord, nodes[v[1]].coord, nodes[v[2]].coord];
                    tris.push(make_tri(v, chart, p));
                }
            }
            grids.push(ChartGrid { n, lo: -l, h, cell_tri });
        }

        // Seam strip between the two patch boundaries, built in chart S coordinates.
        let s_loop: Vec<usize> = patch_boundary_loop(n, &s_patch)?.into_iter().map(|(i, j)| s_patch.node_of[i * n + j]).collect();
        // Inversion keeps arguments, so this loop is also counterclockwise in z.
        let n_loop: Vec<usize> = patch_boundary_loop(n, &n_patch)?.into_iter().map(|(i, j)| n_patch.node_of[i * n + j]).collect();
        let zc = |id: usize| -> [f64; 2] {
            let nd = &nodes[id];
            if nd.chart == CHART_S {
                nd.coord
            } else {
                chart_transition(nd.coord).expect("seam nodes avoid the chart center")
            }
        };
        let seam_start = tris.len();
        let seam = zipper(&s_loop, &n_loop, &zc)?;
        for v in seam {
            let p = [zc(v[0]), zc(v[1]), zc(v[2])];
            tris.push(make_tri(v, CHART_S, p));
        }

        // Outward orientation on the sphere.
        for t in tris.iter_mut() {
            let [a, b, c] = [sphere_pts[t.v[0]], sphere_pts[t.v[1]], sphere_pts[t.v[2]]];
            let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let nrm = [e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]];
            let s = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
            if dot3(nrm, s) < 0.0 {
                t.v.swap(1, 2);
                t.p.swap(1, 2);
                t.gx.swap(1, 2);
                t.gy.swap(1, 2);
            }
        }

        let mut quad_weight = vec![0.0; total];
        for t in &tris {
            let a = geodesic_triangle_area(sphere_pts[t.v[0]], sphere_pts[t.v[1]], sphere_pts[t.v[2]]);
            for &v in &t.v {
                quad_weight[v] += a / 3.0;
            }
        }

        // Seam bucket index over the annulus in z.
        let seam_lo = -1.2;
        let seam_h = 2.0 * h;
        let m = ((2.4 / seam_h).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); m * m];
        for (k, t) in tris.iter().enumerate().skip(seam_start) {
            let xs = t.p.iter().map(|q| q[0]);
            let ys = t.p.iter().map(|q| q[1]);
            let (x0, x1) = minmax(xs);
            let (y0, y1) = minmax(ys);
            let bi = |v: f64| (((v - seam_lo) / seam_h).floor().max(0.0) as usize).min(m - 1);
            for i in bi(x0)..=bi(x1) {
                for j in bi(y0)..=bi(y1) {
                    buckets[i * m + j].push(k);
                }
            }
        }

        let boundary = vec![false; total];
        let mut dom = Domain {
            kind: DomainKind::Sphere { n },
            nodes,
            tris,
            adj: Csr { start: vec![], idx: vec![], w: vec![] },
            node_tris: Csr { start: vec![], idx: vec![], w: vec![] },
            boundary,
            quad_weight,
            sphere_pts,
            grids,
            seam: Some(SeamIndex { lo: seam_lo, h: seam_h, m, buckets }),
        };
        dom.finish()?;
        dom.validate_closed_surface()?;
        Ok(dom)
    }

    /// Square grid over `[-R, R]²` restricted to cells inside the closed disk.
    pub fn disk(radius: f64, n: usize) -> Result<Self, MeshError> {
        if !(radius > 0.0) || n < 5 {
            return Err(MeshError::InvalidParameters(format!("disk needs radius > 0 and n >= 5 (radius={radius}, n={n})")));
        }
        let h = 2.0 * radius / (n as f64 - 1.0);
        let coord = |i: usize| -radius + i as f64 * h;
        let lim = radius * radius * (1.0 + 1e-12);
        let mut next_id = 0usize;
        let patch = grid_patch(n, &|i, j| coord(i).powi(2) + coord(j).powi(2) <= lim, &mut next_id);
        let mut nodes = vec![Node { chart: 0, coord: [0.0; 2], grid: [0; 2] }; next_id];
        for i in 0..n {
            for j in 0..n {
                let id = patch.node_of[i * n + j];
                if id != usize::MAX {
                    nodes[id] = Node { chart: 0, coord: [coord(i), coord(j)], grid: [i, j] };
                }
            }
        }
        let mut tris = Vec::new();
        let mut cell_tri = vec![usize::MAX; (n - 1) * (n - 1)];
        for &(i, j) in &patch.cells {
            let a = patch.node_of[i * n + j];
            let b = patch.node_of[(i + 1) * n + j];
            let c = patch.node_of[(i + 1) * n + j + 1];
            let d = patch.node_of[i * n + j + 1];
            cell_tri[i * (n - 1) + j] = tris.len();
            for v in [[a, b, c], [a, c, d]] {
                let p = [nodes[v[0]].coord, nodes[v[1]].coord, nodes[v[2]].coord];
                tris.push(make_tri(v, 0, p));
            }
        }
        let mut dom = Domain {
            kind: DomainKind::Disk { radius, n },
            boundary: vec![false; nodes.len()],
            quad_weight: vec![0.0; nodes.len()],
            nodes,
            tris,
            adj: Csr { start: vec![], idx: vec![], w: vec![] },
            node_tris: Csr { start: vec![], idx: vec![], w: vec![] },
            sphere_pts: Vec::new(),
            grids: vec![ChartGrid { n, lo: -radius, h, cell_tri }],
            seam: None,
        };
        dom.finish()?;
        dom.mark_boundary_edges();
        dom.flat_weights();
        Ok(dom)
    }

    /// `[t0, t1] × S¹` with `n_t` levels and `n_theta` nodes per level, periodic in θ.
    pub fn cylinder(t0: f64, t1: f64, n_t: usize, n_theta: usize) -> Result<Self, MeshError> {
        if !(t1 > t0) || n_t < 3 || n_theta < 4 {
            return Err(MeshError::InvalidParameters(format!(
                "cylinder needs t1 > t0, n_t >= 3, n_theta >= 4 (t0={t0}, t1={t1}, n_t={n_t}, n_theta={n_theta})"
            )));
        }
        let ht = (t1 - t0) / (n_t as f64 - 1.0);
        let hth = 2.0 * PI / n_theta as f64;
        let id = |k: usize, j: usize| k * n_theta + (j % n_theta);
        let mut nodes = Vec::with_capacity(n_t * n_theta);
        for k in 0..n_t {
            for j in 0..n_theta {
                nodes.push(Node { chart: 0, coord: [t0 + k as f64 * ht, j as f64 * hth], grid: [k, j] });
            }
        }
        let mut tris = Vec::new();
        for k in 0..n_t - 1 {
            for j in 0..n_theta {
                let (ta, tb) = (t0 + k as f64 * ht, t0 + (k + 1) as f64 * ht);
                let (sa, sb) = (j as f64 * hth, (j + 1) as f64 * hth);
                let (a, b, c, d) = (id(k, j), id(k + 1, j), id(k + 1, j + 1), id(k, j + 1));
                tris.push(make_tri([a, b, c], 0, [[ta, sa], [tb, sa], [tb, sb]]));
                tris.push(make_tri([a, c, d], 0, [[ta, sa], [tb, sb], [ta, sb]]));
            }
        }
        let mut boundary = vec![false; nodes.len()];
        for j in 0..n_theta {
            boundary[id(0, j)] = true;
            boundary[id(n_t - 1, j)] = true;
        }
        let mut dom = Domain {
            kind: DomainKind::Cylinder { t0, t1, n_t, n_theta },
            quad_weight: vec![0.0; nodes.len()],
            nodes,
            tris,
            adj: Csr { start: vec![], idx: vec![], w: vec![] },
            node_tris: Csr { start: vec![], idx: vec![], w: vec![] },
            boundary,
            sphere_pts: Vec::new(),
            grids: Vec::new(),
            seam: None,
        };
        dom.finish()?;
        dom.flat_weights();
        Ok(dom)
    }

    fn flat_weights(&mut self) {
        let mut w = vec![0.0; self.nodes.len()];
        for t in &self.tris {
            for &v in &t.v {
                w[v] += t.area / 3.0;
            }
        }
        self.quad_weight = w;
    }

    fn mark_boundary_edges(&mut self) {
        let mut count: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for t in &self.tris {
            for k in 0..3 {
                let (a, b) = (t.v[k], t.v[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        for ((a, b), c) in count {
            if c == 1 {
                self.boundary[a] = true;
                self.boundary[b] = true;
            }
        }
    }

    /// Cotangent weights and incidence lists.
    fn finish(&mut self) -> Result<(), MeshError> {
        let nn = self.nodes.len();
        let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut inc: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for (ti, t) in self.tris.iter().enumerate() {
            if !(t.area > 0.0) || !t.area.is_finite() {
                return Err(MeshError::Construction(format!("degenerate triangle {ti}")));
            }
            for k in 0..3 {
                let (i, j) = (t.v[(k + 1) % 3], t.v[(k + 2) % 3]);
                // ½ cot of the angle at vertex k equals -area * <∇φ_i, ∇φ_j>.
                let c = -t.area * (t.gx[(k + 1) % 3] * t.gx[(k + 2) % 3] + t.gy[(k + 1) % 3] * t.gy[(k + 2) % 3]);
                *edges.entry((i.min(j), i.max(j))).or_insert(0.0) += c;
                inc[t.v[k]].push(ti);
            }
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nn];
        for (&(i, j), &c) in &edges {
            rows[i].push((j, c));
            rows[j].push((i, c));
        }
        let mut start = Vec::with_capacity(nn + 1);
        let mut idx = Vec::new();
        let mut w = Vec::new();
        start.push(0);
        for r in rows.iter_mut() {
            r.sort_by_key(|e| e.0);
            for &(j, c) in r.iter() {
                idx.push(j);
                w.push(c);
            }
            start.push(idx.len());
        }
        self.adj = Csr { start, idx, w };
        let mut s2 = vec![0];
        let mut i2 = Vec::new();
        for r in &inc {
            i2.extend_from_slice(r);
            s2.push(i2.len());
        }
        let wn = vec![0.0; i2.len()];
        self.node_tris = Csr { start: s2, idx: i2, w: wn };
        Ok(())
    }

    fn validate_closed_surface(&self) -> Result<(), MeshError> {
        let mut count: BTreeMap<(usize, usize), i32> = BTreeMap::new();
        for t in &self.tris {
            for k in 0..3 {
                let (a, b) = (t.v[k], t.v[(k + 1) % 3]);
                // +1 for a -> b with a < b, -1 for the reverse: consistent orientation sums to 0.
                let e = count.entry((a.min(b), a.max(b))).or_insert(0);
                *e += if a < b { 1 } else { -1 };
            }
        }
        let mut n_edges = 0;
        for (_, c) in &count {
            if *c != 0 {
                return Err(MeshError::Construction("edge not shared by two consistently oriented triangles".into()));
            }
            n_edges += 1;
        }
        let chi = self.nodes.len() as i64 - n_edges as i64 + self.tris.len() as i64;
        if chi != 2 {
            return Err(MeshError::Construction(format!("Euler characteristic {chi}, expected 2")));
        }
        // Every node must lie on some triangle.
        for i in 0..self.nodes.len() {
            if self.node_tris.start[i] == self.node_tris.start[i + 1] {
                return Err(MeshError::Construction(format!("orphan node {i}")));
            }
        }
        Ok(())
    }

    /// Largest parameter-space edge length, a resolution indicator.
    pub fn grid_spacing(&self) -> f64 {
        match self.kind {
            DomainKind::Sphere { n } => 2.0 * SPHERE_CHART_HALF_WIDTH / (n as f64 - 1.0),
            DomainKind::Disk { radius, n } => 2.0 * radius / (n as f64 - 1.0),
            DomainKind::Cylinder { t0, t1, n_t, .. } => (t1 - t0) / (n_t as f64 - 1.0),
        }
    }

    /// Coordinates of a node in the given chart, `None` if the chart misses it.
    pub fn node_coord_in(&self, node: usize, chart: u8) -> Option<[f64; 2]> {
        let nd = &self.nodes[node];
        if nd.chart == chart {
            Some(nd.coord)
        } else {
            chart_transition(nd.coord)
        }
    }

    /// Coordinates of a triangle centroid in the given chart.
    pub fn tri_centroid_in(&self, tri: usize, chart: u8) -> Option<[f64; 2]> {
        let t = &self.tris[tri];
        if t.chart == chart {
            Some(t.centroid)
        } else {
            chart_transition(t.centroid)
        }
    }

    /// Locates a point of the unit sphere in the mesh.
    pub fn locate_sphere(&self, q: [f64; 3]) -> Location {
        debug_assert!(self.is_sphere());
        if q[2] <= 0.3 {
            if let Some(z) = sphere_to_chart(CHART_S, q) {
                if let Some(l) = self.locate_in_grid(0, z) {
                    return l;
                }
            }
        }
        if q[2] >= -0.3 {
            if let Some(w) = sphere_to_chart(CHART_N, q) {
                if let Some(l) = self.locate_in_grid(1, w) {
                    return l;
                }
            }
        }
        let z = sphere_to_chart(CHART_S, q).unwrap_or([1e9, 0.0]);
        self.locate_seam(z)
    }

    /// Locates a point given in chart coordinates of a flat domain.
    pub fn locate_flat(&self, c: [f64; 2]) -> Option<Location> {
        match self.kind {
            DomainKind::Disk { .. } => self.locate_in_grid(0, c),
            DomainKind::Cylinder { t0, t1, n_t, n_theta } => {
                let ht = (t1 - t0) / (n_t as f64 - 1.0);
                let hth = 2.0 * PI / n_theta as f64;
                let th = c[1].rem_euclid(2.0 * PI);
                let fk = (c[0] - t0) / ht;
                if !(fk >= 0.0 && fk <= (n_t - 1) as f64) {
                    return None;
                }
                let k = (fk.floor() as usize).min(n_t - 2);
                let j = ((th / hth).floor() as usize).min(n_theta - 1);
                let base = 2 * (k * n_theta + j);
                let p = [c[0], th];
                for t in [base, base + 1] {
                    let b = self.bary(t, p);
                    if b.iter().all(|v| *v >= -1e-12) {
                        return Some(Location { tri: t, bary: b });
                    }
                }
                Some(Location { tri: base, bary: self.bary(base, p) })
            }
            DomainKind::Sphere { .. } => None,
        }
    }

    fn locate_in_grid(&self, g: usize, c: [f64; 2]) -> Option<Location> {
        let grid = self.grids.get(g)?;
        let (t, fx, fy) = grid.locate_cell(c)?;
        // Cell split along (i, j)-(i+1, j+1): lower triangle when fy <= fx.
        let tri = if fy <= fx { t } else { t + 1 };
        Some(Location { tri, bary: self.bary(tri, c) })
    }

    fn locate_seam(&self, z: [f64; 2]) -> Location {
        let seam = self.seam.as_ref().expect("sphere domain has a seam index");
        let bi = |v: f64| (((v - seam.lo) / seam.h).floor().max(0.0) as usize).min(seam.m - 1);
        let cands = &seam.buckets[bi(z[0]) * seam.m + bi(z[1])];
        let mut best: Option<(f64, Location)> = None;
        for &t in cands {
            let b = self.bary(t, z);
            let m = b[0].min(b[1]).min(b[2]);
            if m >= -1e-12 {
                return Location { tri: t, bary: b };
            }
            if best.map_or(true, |(bm, _)| m > bm) {
                best = Some((m, Location { tri: t, bary: b }));
            }
        }
        if let Some((_, mut l)) = best {
            clamp_bary(&mut l.bary);
            return l;
        }
        // Far outside any bucket: nearest node by brute force.
        let q = chart_to_sphere(CHART_S, z);
        let (mut bn, mut bd) = (0, f64::INFINITY);
        for (i, p) in self.sphere_pts.iter().enumerate() {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if d < bd {
                bd = d;
                bn = i;
            }
        }
        let t = self.node_tris.idx[self.node_tris.start[bn]];
        let k = self.tris[t].v.iter().position(|v| *v == bn).unwrap();
        let mut bary = [0.0; 3];
        bary[k] = 1.0;
        Location { tri: t, bary }
    }

    /// Barycentric coordinates of `c` (in the triangle's chart) in triangle `t`.
    pub fn bary(&self, t: usize, c: [f64; 2]) -> [f64; 3] {
        let tr = &self.tris[t];
        let p = tr.p;
        let a0 = signed_area(c, p[1], p[2]);
        let a1 = signed_area(p[0], c, p[2]);
        let a2 = signed_area(p[0], p[1], c);
        let s = a0 + a1 + a2;
        [a0 / s, a1 / s, a2 / s]
    }
}

fn clamp_bary(b: &mut [f64; 3]) {
    for v in b.iter_mut() {
        *v = v.max(0.0);
    }
    let s: f64 = b.iter().sum();
    for v in b.iter_mut() {
        *v /= s;
    }
}

fn minmax(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

/// Triangulates the strip between an inner and an outer closed loop, both
/// counterclockwise around the origin, by merging them in angle order.
fn zipper(inner: &[usize], outer: &[usize], zc: &dyn Fn(usize) -> [f64; 2]) -> Result<Vec<[usize; 3]>, MeshError> {
    let ang = |id: usize| {
        let c = zc(id);
        c[1].atan2(c[0])
    };
    let unwrap = |lp: &[usize]| -> Result<(Vec<usize>, Vec<f64>), MeshError> {
        let s = (0..lp.len()).min_by(|&a, &b| ang(lp[a]).partial_cmp(&ang(lp[b])).unwrap()).unwrap();
        let ids: Vec<usize> = (0..lp.len()).map(|k| lp[(s + k) % lp.len()]).collect();
        let mut angs = Vec::with_capacity(ids.len());
        let mut prev = ang(ids[0]);
        angs.push(prev);
        for &id in &ids[1..] {
            let mut a = ang(id);
            while a < prev - PI {
                a += 2.0 * PI;
            }
            if a <= prev {
                return Err(MeshError::Construction("seam loop is not angle monotone".into()));
            }
            angs.push(a);
            prev = a;
        }
        if prev - angs[0] >= 2.0 * PI {
            return Err(MeshError::Construction("seam loop winds more than once".into()));
        }
        Ok((ids, angs))
    };
    let (ii, ia) = unwrap(inner)?;
    let (oo, oa) = unwrap(outer)?;
    let (ni, no) = (ii.len(), oo.len());
    let ai = |k: usize| if k < ni { ia[k] } else { ia[k - ni] + 2.0 * PI };
    let ao = |k: usize| if k < no { oa[k] } else { oa[k - no] + 2.0 * PI };
    let (mut i, mut o) = (0usize, 0usize);
    let mut out = Vec::with_capacity(ni + no);
    while i < ni || o < no {
        let (pi, pin) = (ii[i % ni], ii[(i + 1) % ni]);
        let (po, pon) = (oo[o % no], oo[(o + 1) % no]);
        // Advancing along the inner loop keeps the outer vertex to the right.
        let inner_ok = i < ni && signed_area(zc(pi), zc(pin), zc(po)) < 0.0;
        let outer_ok = o < no && signed_area(zc(po), zc(pon), zc(pi)) > 0.0;
        let prefer_inner = if i >= ni {
            false
        } else if o >= no {
            true
        } else {
            ai(i + 1) <= ao(o + 1)
        };
        let take_inner = match (inner_ok, outer_ok) {
            (true, true) => prefer_inner,
            (true, false) => true,
            (false, true) => false,
            (false, false) => return Err(MeshError::Construction("seam zipper found no valid triangle".into())),
        };
        if take_inner {
            out.push([pi, pin, po]);
            i += 1;
        } else {
            out.push([po, pon, pi]);
            o += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_mesh_is_a_closed_oriented_surface() {
        for n in [17, 33, 65, 129] {
            let d = Domain::sphere(n).unwrap();
            let total: f64 = d.quad_weight.iter().sum();
            assert!((total - 4.0 * PI).abs() < 1e-9 * 4.0 * PI, "n={n} total={total}");
        }
    }

    #[test]
    fn chart_overlap_band_is_wide() {
        // Each chart square reaches |z| = L on its axes; the overlap band spans both sides of the equator.
        let l = SPHERE_CHART_HALF_WIDTH;
        let band = 2.0 * (2.0 * l.atan() - PI / 2.0);
        assert!(band.to_degrees() >= 20.0);
    }

    #[test]
    fn grid_cells_have_five_point_weights() {
        let d = Domain::sphere(33).unwrap();
        // A node at the chart S center has four unit neighbors and no diagonal weight.
        let c = d.nodes.iter().position(|nd| nd.chart == CHART_S && nd.grid == [16, 16]).unwrap();
        let (idx, w) = d.adj.row(c);
        let mut pos: Vec<f64> = w.iter().cloned().filter(|v| v.abs() > 1e-12).collect();
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pos.len(), 4, "{idx:?} {w:?}");
        for v in pos {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn charts_round_trip() {
        for c in [[0.3, -0.2], [1.1, 0.4], [-0.01, 0.0]] {
            for ch in [CHART_S, CHART_N] {
                let x = chart_to_sphere(ch, c);
                let back = sphere_to_chart(ch, x).unwrap();
                assert!((back[0] - c[0]).abs() < 1e-13 && (back[1] - c[1]).abs() < 1e-13);
            }
            let x = chart_to_sphere(CHART_N, c);
            let z = sphere_to_chart(CHART_S, x).unwrap();
            let t = chart_transition(c).unwrap();
            assert!((z[0] - t[0]).abs() < 1e-12 && (z[1] - t[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn locate_recovers_nodes_and_random_points() {
        let d = Domain::sphere(33).unwrap();
        for (i, p) in d.sphere_pts.iter().enumerate().step_by(7) {
            let l = d.locate_sphere(*p);
            let v = d.tris[l.tri].v;
            let k = v.iter().position(|x| *x == i);
            assert!(k.is_some() || l.bary.iter().any(|b| (*b - 1.0).abs() < 1e-9) || l.bary.iter().all(|b| *b >= -1e-9));
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if r < 0.1 {
                continue;
            }
            let q = [v[0] / r, v[1] / r, v[2] / r];
            let l = d.locate_sphere(q);
            assert!(l.bary.iter().all(|b| *b >= -1e-9), "{q:?} {:?}", l.bary);
            assert!((l.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_and_cylinder_weights() {
        let d = Domain::disk(1.0, 65).unwrap();
        let a: f64 = d.quad_weight.iter().sum();
        assert!(a < PI && a > 0.95 * PI);
        assert!(d.boundary.iter().any(|b| *b) && d.boundary.iter().any(|b| !*b));
        let c = Domain::cylinder(0.0, 2.0, 9, 16).unwrap();
        let a: f64 = c.quad_weight.iter().sum();
        assert!((a - 4.0 * PI).abs() < 1e-12);
        assert_eq!(c.boundary.iter().filter(|b| **b).count(), 32);
    }
}
