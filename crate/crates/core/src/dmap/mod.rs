//! Discrete maps from the sphere, a disk or a cylinder into a target manifold,
//! with the energy, area, Jacobian and conformality functionals.
//!
//! Maps are piecewise linear on each triangle in that triangle's chart
//! coordinates. Energy is the P1 Dirichlet energy (conformally invariant, so
//! no metric factor is needed), and the Jacobian, conformality defect and
//! energy density of a triangle all come from one constant gradient.

pub mod io;
mod mesh;
mod ops;

use std::sync::Arc;

pub use mesh::{
    chart_to_sphere, chart_transition, sphere_to_chart, Csr, Domain, DomainKind, Location, MeshError, Node, Tri, CHART_N, CHART_S, SPHERE_CHART_HALF_WIDTH,
};
pub use ops::{cap_of_ball, collar_interpolate, compose_with_sphere_map, conformal_dilation, mollify, CollarResult, ConformalDilation, Trace};

use crate::manifold::{EmbeddedManifold, ManifoldError};
use thiserror::Error;

/// Largest supported ambient dimension of a target.
pub const MAX_AMBIENT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmapError {
    #[error("maps live on different domains or targets")]
    DomainMismatch,
    #[error("averaged value left the projection tube: {0}")]
    TubeEscape(ManifoldError),
    #[error("boundary traces are too far apart: R·∫|f'-g'|² = {value} exceeds τ² = {limit}")]
    TraceTooFar { value: f64, limit: f64 },
    #[error("boundary traces share no sample value")]
    NoCommonPoint,
    #[error("operation needs a sphere domain")]
    NotSphere,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A closed disk in chart coordinates. On the cylinder the second coordinate is periodic.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Ball {
    pub chart: u8,
    pub center: [f64; 2],
    pub radius: f64,
}

impl Ball {
    pub fn new(chart: u8, center: [f64; 2], radius: f64) -> Self {
        Self { chart, center, radius }
    }

    /// `ρB`: same center, radius scaled by `rho`.
    pub fn scaled(&self, rho: f64) -> Self {
        Self { radius: self.radius * rho, ..*self }
    }

    /// Disk in the given sphere chart whose image is the cap of angular radius
    /// `alpha` about the unit vector `q`.
    pub fn from_cap(chart: u8, q: [f64; 3], alpha: f64) -> Option<Self> {
        let z = q[2];
        let rxy = (q[0] * q[0] + q[1] * q[1]).sqrt();
        let (ux, uy) = if rxy > 1e-14 { (q[0] / rxy, q[1] / rxy) } else { (1.0, 0.0) };
        let polar = z.clamp(-1.0, 1.0).acos();
        // The cap must miss the pole that the chart sends to infinity.
        let far_pole_polar = if chart == CHART_S { 0.0 } else { std::f64::consts::PI };
        if !(alpha > 0.0) || (polar - far_pole_polar).abs() <= alpha {
            return None;
        }
        let point = |p: f64| [p.sin() * ux, p.sin() * uy, p.cos()];
        let a = sphere_to_chart(chart, point(polar - alpha))?;
        let b = sphere_to_chart(chart, point(polar + alpha))?;
        // Both boundary points lie on the line through the chart origin along (ux, uy).
        let sa = a[0] * ux + a[1] * uy;
        let sb = b[0] * ux + b[1] * uy;
        if !(sa.is_finite() && sb.is_finite()) {
            return None;
        }
        let c = 0.5 * (sa + sb);
        Some(Self { chart, center: [c * ux, c * uy], radius: 0.5 * (sa - sb).abs() })
    }

    fn contains_coord(&self, dom: &Domain, c: [f64; 2]) -> bool {
        let dx = c[0] - self.center[0];
        let mut dy = c[1] - self.center[1];
        if let DomainKind::Cylinder { .. } = dom.kind {
            dy = (dy + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        }
        dx * dx + dy * dy < self.radius * self.radius
    }

    pub fn contains_node(&self, dom: &Domain, node: usize) -> bool {
        dom.node_coord_in(node, self.chart).map_or(false, |c| self.contains_coord(dom, c))
    }

    pub fn contains_tri(&self, dom: &Domain, tri: usize) -> bool {
        dom.tri_centroid_in(tri, self.chart).map_or(false, |c| self.contains_coord(dom, c))
    }
}

/// Finitely many balls with pairwise disjoint closures.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
}

impl BallFamily {
    pub fn new(balls: Vec<Ball>) -> Self {
        Self { balls }
    }

    pub fn single(b: Ball) -> Self {
        Self { balls: vec![b] }
    }

    pub fn scaled(&self, rho: f64) -> Self {
        Self { balls: self.balls.iter().map(|b| b.scaled(rho)).collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn contains_node(&self, dom: &Domain, node: usize) -> bool {
        self.balls.iter().any(|b| b.contains_node(dom, node))
    }

    pub fn contains_tri(&self, dom: &Domain, tri: usize) -> bool {
        self.balls.iter().any(|b| b.contains_tri(dom, tri))
    }

    /// Pairwise disjointness of closures. Sphere balls are compared as spherical caps.
    pub fn is_disjoint(&self, dom: &Domain) -> bool {
        for i in 0..self.balls.len() {
            for j in i + 1..self.balls.len() {
                if !balls_disjoint(dom, &self.balls[i], &self.balls[j]) {
                    return false;
                }
            }
        }
        true
    }
}

pub fn balls_disjoint(dom: &Domain, a: &Ball, b: &Ball) -> bool {
    if dom.is_sphere() {
        let (qa, ra) = cap_of_ball(a);
        let (qb, rb) = cap_of_ball(b);
        let c = (qa[0] * qb[0] + qa[1] * qb[1] + qa[2] * qb[2]).clamp(-1.0, 1.0);
        return c.acos() > ra + rb;
    }
    let dx = a.center[0] - b.center[0];
    let mut dy = a.center[1] - b.center[1];
    if let DomainKind::Cylinder { .. } = dom.kind {
        dy = (dy + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    }
    (dx * dx + dy * dy).sqrt() > a.radius + b.radius
}

/// Per-triangle first fundamental form data `P = |u_x|²`, `Q = |u_y|²`, `R = <u_x, u_y>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriForm {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub area: f64,
}

impl TriForm {
    pub fn energy(&self) -> f64 {
        0.5 * (self.p + self.q) * self.area
    }
    pub fn jacobian(&self) -> f64 {
        (self.p * self.q - self.r * self.r).max(0.0).sqrt()
    }
    pub fn defect(&self) -> f64 {
        (self.r * self.r + 0.25 * (self.p - self.q).powi(2)).sqrt()
    }
}

/// A map sampled at the nodes of a domain, with values on the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMap {
    pub domain: Arc<Domain>,
    pub target: Arc<EmbeddedManifold>,
    /// Node-major ambient coordinates, `dim` entries per node.
    pub values: Vec<f64>,
}

impl DiscreteMap {
    pub fn from_values(domain: Arc<Domain>, target: Arc<EmbeddedManifold>, values: Vec<f64>) -> Result<Self, DmapError> {
        let d = target.ambient_dim;
        if d > MAX_AMBIENT || values.len() != d * domain.num_nodes() {
            return Err(DmapError::InvalidArgument(format!("expected {} values for ambient dimension {d}, got {}", d * domain.num_nodes(), values.len())));
        }
        Ok(Self { domain, target, values })
    }

    /// Builds a map node by node, projecting every value onto the target.
    pub fn from_fn(domain: Arc<Domain>, target: Arc<EmbeddedManifold>, f: impl Fn(usize) -> Vec<f64>) -> Result<Self, DmapError> {
        let d = target.ambient_dim;
        let mut values = vec![0.0; d * domain.num_nodes()];
        for i in 0..domain.num_nodes() {
            let v = f(i);
            target.project_into(&v, &mut values[i * d..(i + 1) * d])?;
        }
        Self::from_values(domain, target, values)
    }

    pub fn constant(domain: Arc<Domain>, target: Arc<EmbeddedManifold>, point: &[f64]) -> Result<Self, DmapError> {
        let p = target.project(point)?.coords;
        let values = p.iter().cloned().cycle().take(p.len() * domain.num_nodes()).collect();
        Self::from_values(domain, target, values)
    }

    /// The identity of the unit 2-sphere.
    pub fn identity(domain: Arc<Domain>) -> Result<Self, DmapError> {
        if !domain.is_sphere() {
            return Err(DmapError::NotSphere);
        }
        let target = Arc::new(EmbeddedManifold::unit_sphere(2));
        let values = domain.sphere_pts.iter().flat_map(|p| p.iter().cloned()).collect();
        Self::from_values(domain, target, values)
    }

    pub fn dim(&self) -> usize {
        self.target.ambient_dim
    }

    pub fn value(&self, node: usize) -> &[f64] {
        let d = self.dim();
        &self.values[node * d..(node + 1) * d]
    }

    pub fn value_mut(&mut self, node: usize) -> &mut [f64] {
        let d = self.dim();
        &mut self.values[node * d..(node + 1) * d]
    }

    pub fn same_domain(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.domain, &other.domain) || self.domain == other.domain) && self.target == other.target
    }

    /// Constant gradient `(u_x, u_y)` of triangle `t` in its chart.
    pub fn tri_gradient(&self, t: usize) -> ([f64; MAX_AMBIENT], [f64; MAX_AMBIENT]) {
        let tr = &self.domain.tris[t];
        let d = self.dim();
        let mut ux = [0.0; MAX_AMBIENT];
        let mut uy = [0.0; MAX_AMBIENT];
        for k in 0..3 {
            let v = self.value(tr.v[k]);
            for c in 0..d {
                ux[c] += tr.gx[k] * v[c];
                uy[c] += tr.gy[k] * v[c];
            }
        }
        (ux, uy)
    }

    pub fn tri_form(&self, t: usize) -> TriForm {
        let (ux, uy) = self.tri_gradient(t);
        let d = self.dim();
        let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
        for c in 0..d {
            p += ux[c] * ux[c];
            q += uy[c] * uy[c];
            r += ux[c] * uy[c];
        }
        TriForm { p, q, r, area: self.domain.tris[t].area }
    }

    fn sum_tris(&self, region: Option<&BallFamily>, f: impl Fn(&TriForm) -> f64) -> f64 {
        let mut s = 0.0;
        for t in 0..self.domain.tris.len() {
            if let Some(reg) = region {
                if !reg.contains_tri(&self.domain, t) {
                    continue;
                }
            }
            s += f(&self.tri_form(t));
        }
        s
    }

    /// `½ ∫ |∇u|²`, optionally restricted to triangles with centroid in `region`.
    pub fn energy(&self, region: Option<&BallFamily>) -> f64 {
        self.sum_tris(region, |f| f.energy())
    }

    /// Energy over an explicit triangle list.
    pub fn energy_on(&self, tris: &[usize]) -> f64 {
        tris.iter().map(|&t| self.tri_form(t).energy()).sum()
    }

    /// Energy of each triangle.
    pub fn tri_energies(&self) -> Vec<f64> {
        (0..self.domain.tris.len()).map(|t| self.tri_form(t).energy()).collect()
    }

    /// `∫ J_u`.
    pub fn area(&self) -> f64 {
        self.sum_tris(None, |f| f.jacobian() * f.area)
    }

    pub fn area_in(&self, region: Option<&BallFamily>) -> f64 {
        self.sum_tris(region, |f| f.jacobian() * f.area)
    }

    /// L¹ norm of `(<u_x,u_y>² + (|u_x|² - |u_y|²)²/4)^{1/2}`.
    pub fn conformality_defect(&self) -> f64 {
        self.sum_tris(None, |f| f.defect() * f.area)
    }

    /// Per-node energy density with respect to the domain area weights.
    pub fn energy_density(&self) -> Vec<f64> {
        let e = self.tri_energies();
        let dom = &self.domain;
        let tri_w: Vec<f64> = (0..dom.tris.len())
            .map(|t| {
                if dom.is_sphere() {
                    let [a, b, c] = dom.tris[t].v.map(|v| dom.sphere_pts[v]);
                    sphere_tri_area(a, b, c)
                } else {
                    dom.tris[t].area
                }
            })
            .collect();
        (0..dom.num_nodes())
            .map(|i| {
                let (ts, _) = dom.node_tris.row(i);
                let (mut se, mut sw) = (0.0, 0.0);
                for &t in ts {
                    se += e[t];
                    sw += tri_w[t];
                }
                if sw > 0.0 {
                    se / sw
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Interpolated ambient value at a point of the unit sphere (sphere domains).
    pub fn sample_sphere(&self, q: [f64; 3], out: &mut [f64]) {
        let l = self.domain.locate_sphere(q);
        self.sample_at(&l, out);
    }

    pub fn sample_at(&self, l: &Location, out: &mut [f64]) {
        let d = self.dim();
        let v = self.domain.tris[l.tri].v;
        for c in 0..d {
            out[c] = l.bary[0] * self.values[v[0] * d + c] + l.bary[1] * self.values[v[1] * d + c] + l.bary[2] * self.values[v[2] * d + c];
        }
    }

    /// Largest nodewise distance to another map on the same domain.
    pub fn c0_distance(&self, other: &Self) -> Result<f64, DmapError> {
        if !self.same_domain(other) {
            return Err(DmapError::DomainMismatch);
        }
        let d = self.dim();
        let mut m: f64 = 0.0;
        for i in 0..self.domain.num_nodes() {
            let mut s = 0.0;
            for c in 0..d {
                s += (self.values[i * d + c] - other.values[i * d + c]).powi(2);
            }
            m = m.max(s.sqrt());
        }
        Ok(m)
    }

    /// `∫ |∇u - ∇v|²`, optionally restricted to a region.
    pub fn gradient_distance_sq(&self, other: &Self, region: Option<&BallFamily>) -> Result<f64, DmapError> {
        if !self.same_domain(other) {
            return Err(DmapError::DomainMismatch);
        }
        let d = self.dim();
        let mut s = 0.0;
        for t in 0..self.domain.tris.len() {
            if let Some(r) = region {
                if !r.contains_tri(&self.domain, t) {
                    continue;
                }
            }
            let (ax, ay) = self.tri_gradient(t);
            let (bx, by) = other.tri_gradient(t);
            let mut g = 0.0;
            for c in 0..d {
                g += (ax[c] - bx[c]).powi(2) + (ay[c] - by[c]).powi(2);
            }
            s += g * self.domain.tris[t].area;
        }
        Ok(s)
    }

    /// `∫ |J_u - J_v|`.
    pub fn jacobian_l1_distance(&self, other: &Self) -> Result<f64, DmapError> {
        if !self.same_domain(other) {
            return Err(DmapError::DomainMismatch);
        }
        Ok((0..self.domain.tris.len())
            .map(|t| {
                let a = self.tri_form(t);
                let b = other.tri_form(t);
                (a.jacobian() - b.jacobian()).abs() * a.area
            })
            .sum())
    }

    /// Per-triangle check of `|J_u - J_v| ≤ √2 |∇u-∇v|^{1/2} max(|∇u|,|∇v|)^{3/2}`;
    /// returns the smallest slack `rhs - lhs`.
    pub fn jacobian_bound_slack(&self, other: &Self) -> Result<f64, DmapError> {
        if !self.same_domain(other) {
            return Err(DmapError::DomainMismatch);
        }
        let d = self.dim();
        let mut worst = f64::INFINITY;
        for t in 0..self.domain.tris.len() {
            let a = self.tri_form(t);
            let b = other.tri_form(t);
            let (ax, ay) = self.tri_gradient(t);
            let (bx, by) = other.tri_gradient(t);
            let mut g = 0.0;
            for c in 0..d {
                g += (ax[c] - bx[c]).powi(2) + (ay[c] - by[c]).powi(2);
            }
            let na = (a.p + a.q).sqrt();
            let nb = (b.p + b.q).sqrt();
            let rhs = 2f64.sqrt() * g.sqrt().sqrt() * na.max(nb).powf(1.5);
            worst = worst.min(rhs - (a.jacobian() - b.jacobian()).abs());
        }
        Ok(worst)
    }

    /// Largest distance of a node value from the target.
    pub fn constraint_violation(&self) -> f64 {
        (0..self.domain.num_nodes()).map(|i| self.target.distance(self.value(i))).fold(0.0, f64::max)
    }
}

pub(crate) fn sphere_tri_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let triple = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0]);
    let d = 1.0 + a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + b[0] * c[0] + b[1] * c[1] + b[2] * c[2] + c[0] * a[0] + c[1] * a[1] + c[2] * a[2];
    2.0 * triple.abs().atan2(d)
}

/// `|det(SᵀS) - det(TᵀT)|` and `2|T-S| max(|S|³, |T|³)` for `N × 2` matrices given by columns.
pub fn gram_det_bound(s: (&[f64], &[f64]), t: (&[f64], &[f64])) -> (f64, f64) {
    let gram = |a: &[f64], b: &[f64]| {
        let p: f64 = a.iter().map(|x| x * x).sum();
        let q: f64 = b.iter().map(|x| x * x).sum();
        let r: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        (p * q - r * r, (p + q).sqrt())
    };
    let (ds, ns) = gram(s.0, s.1);
    let (dt, nt) = gram(t.0, t.1);
    let diff: f64 = s.0.iter().zip(t.0).chain(s.1.iter().zip(t.1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    ((ds - dt).abs(), 2.0 * diff * ns.max(nt).powi(3))
}
