//! Varifold measures of discrete maps and the weighted test-function distance.
//!
//! Each triangle with Jacobian above the cutoff contributes one sample: the
//! projected image of its centroid, the unoriented plane spanned by its
//! differential (pushed into the tangent space of the target) and the weight
//! `J · area`. Total weight is therefore exactly the discrete area.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dmap::{
    chart_to_sphere, compose_with_sphere_map, conformal_dilation, sphere_to_chart, Ball, DiscreteMap, DmapError, Domain, CHART_N, CHART_S, MAX_AMBIENT,
};
use crate::manifold::{EmbeddedManifold, ManifoldError, ManifoldKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarifoldError {
    #[error("measures live in different ambient spaces ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("Dirichlet integral {energy} on the ball does not exceed {eps3}")]
    NotConcentrated { energy: f64, eps3: f64 },
    #[error(transparent)]
    Dmap(#[from] DmapError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// Jacobian cutoff below which a triangle contributes no sample.
pub const DEFAULT_J_CUT: f64 = 1e-12;
pub const DEFAULT_TERMS: usize = 64;

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// A point of the Grassmann bundle: `p ∈ M` and a rank-2 orthogonal projector
/// onto a plane in `T_p M`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannPoint {
    pub p: Vec<f64>,
    pub plane: Vec<f64>,
}

impl GrassmannPoint {
    /// Plane spanned by the tangential parts of `a` and `b` at `p`; `None` when
    /// they are dependent.
    pub fn from_span(target: &EmbeddedManifold, p: &[f64], a: &[f64], b: &[f64]) -> Option<Self> {
        let d = p.len();
        let mut e1 = vec![0.0; d];
        let mut e2 = vec![0.0; d];
        target.tangential_part(p, a, &mut e1);
        target.tangential_part(p, b, &mut e2);
        let n1 = norm(&e1);
        if !(n1 > 1e-300) {
            return None;
        }
        e1.iter_mut().for_each(|x| *x /= n1);
        let c = dot(&e1, &e2);
        e2.iter_mut().zip(&e1).for_each(|(x, y)| *x -= c * y);
        let n2 = norm(&e2);
        if !(n2 > 1e-12 * n1.max(norm(b))) {
            return None;
        }
        e2.iter_mut().for_each(|x| *x /= n2);
        let mut plane = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                plane[i * d + j] = e1[i] * e1[j] + e2[i] * e2[j];
            }
        }
        Some(Self { p: p.to_vec(), plane })
    }

    /// For 3-dimensional targets, the unit normal of the plane inside `T_p M`
    /// (up to sign).
    pub fn normal_in(&self, target: &EmbeddedManifold) -> Option<Vec<f64>> {
        if target.intrinsic_dim() != 3 {
            return None;
        }
        let d = self.p.len();
        for t in target.tangent_basis(&self.p) {
            let mut n: Vec<f64> = t.clone();
            for i in 0..d {
                let pt: f64 = (0..d).map(|j| self.plane[i * d + j] * t[j]).sum();
                n[i] -= pt;
            }
            let nn = norm(&n);
            if nn > 1e-6 {
                return Some(n.into_iter().map(|x| x / nn).collect());
            }
        }
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Weighted samples `(p, P, w)` in flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct VarifoldMeasure {
    pub dim: usize,
    pub points: Vec<f64>,
    pub planes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl VarifoldMeasure {
    pub fn empty(dim: usize) -> Self {
        Self { dim, points: Vec::new(), planes: Vec::new(), weights: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn push(&mut self, g: &GrassmannPoint, w: f64) {
        self.points.extend_from_slice(&g.p);
        self.planes.extend_from_slice(&g.plane);
        self.weights.push(w);
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn plane(&self, i: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.planes[i * d2..(i + 1) * d2]
    }

    pub fn total_weight(&self) -> f64 {
        let mut s = Neumaier::default();
        self.weights.iter().for_each(|&w| s.add(w));
        s.value()
    }

    /// Sum of two measures.
    pub fn union(&self, other: &Self) -> Result<Self, VarifoldError> {
        if self.dim != other.dim {
            return Err(VarifoldError::DimensionMismatch(self.dim, other.dim));
        }
        let mut out = self.clone();
        out.points.extend_from_slice(&other.points);
        out.planes.extend_from_slice(&other.planes);
        out.weights.extend_from_slice(&other.weights);
        Ok(out)
    }

    /// Rows `p0..,P00..,weight`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let d = self.dim;
        let mut head: Vec<String> = (0..d).map(|i| format!("p{i}")).collect();
        for i in 0..d {
            for j in 0..d {
                head.push(format!("P{i}{j}"));
            }
        }
        head.push("weight".into());
        writeln!(w, "{}", head.join(","))?;
        for s in 0..self.len() {
            let mut row: Vec<String> = self.point(s).iter().map(|x| format!("{x:.12e}")).collect();
            row.extend(self.plane(s).iter().map(|x| format!("{x:.12e}")));
            row.push(format!("{:.12e}", self.weights[s]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Samples of the projected map `Π ∘ u` for triangles with PL Jacobian above
/// `j_cut`, using the default refinement.
pub fn varifold_of_map(u: &DiscreteMap, j_cut: f64) -> VarifoldMeasure {
    varifold_of_map_refined(u, j_cut, DEFAULT_REFINE)
}

/// Levels of midpoint subdivision applied to each image triangle on round
/// sphere targets.
pub const DEFAULT_REFINE: u32 = 1;

/// On round sphere targets each image triangle is split `refine` times at
/// projected edge midpoints; every piece contributes its geodesic area at the
/// projected centroid. Other targets get one sample `J · area` per triangle.
pub fn varifold_of_map_refined(u: &DiscreteMap, j_cut: f64, refine: u32) -> VarifoldMeasure {
    let d = u.dim();
    let dom = &u.domain;
    let mut out = VarifoldMeasure::empty(d);
    let radius = match u.target.kind {
        ManifoldKind::RoundSphere { radius, .. } => Some(radius),
        _ => None,
    };
    let mut avg = [0.0; MAX_AMBIENT];
    let mut p = [0.0; MAX_AMBIENT];
    for t in 0..dom.tris.len() {
        let f = u.tri_form(t);
        let j = f.jacobian();
        if !(j > j_cut) {
            continue;
        }
        let v = dom.tris[t].v;
        if let Some(r) = radius {
            let corners = [u.value(v[0]), u.value(v[1]), u.value(v[2])].map(unit);
            push_sphere_pieces(&mut out, &u.target, r, &corners, refine);
            continue;
        }
        avg.iter_mut().for_each(|x| *x = 0.0);
        for &k in &v {
            for (a, x) in avg.iter_mut().zip(u.value(k)) {
                *a += x / 3.0;
            }
        }
        if u.target.project_into(&avg[..d], &mut p[..d]).is_err() {
            p[..d].copy_from_slice(u.value(v[0]));
        }
        let (ux, uy) = u.tri_gradient(t);
        if let Some(g) = GrassmannPoint::from_span(&u.target, &p[..d], &ux[..d], &uy[..d]) {
            out.push(&g, j * f.area);
        }
    }
    out
}

fn unit(x: &[f64]) -> Vec<f64> {
    let n = norm(x);
    x.iter().map(|c| c / n).collect()
}

fn push_sphere_pieces(out: &mut VarifoldMeasure, target: &EmbeddedManifold, r: f64, c: &[Vec<f64>; 3], level: u32) {
    if level > 0 {
        let mid = |a: &Vec<f64>, b: &Vec<f64>| unit(&a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>());
        let (ab, bc, ca) = (mid(&c[0], &c[1]), mid(&c[1], &c[2]), mid(&c[2], &c[0]));
        for piece in [[c[0].clone(), ab.clone(), ca.clone()], [ab.clone(), c[1].clone(), bc.clone()], [ca.clone(), bc.clone(), c[2].clone()], [ab, bc, ca]] {
            push_sphere_pieces(out, target, r, &piece, level - 1);
        }
        return;
    }
    let w = r * r * geodesic_tri_area(&c[0], &c[1], &c[2]);
    if !(w > 0.0) {
        return;
    }
    let cen: Vec<f64> = (0..c[0].len()).map(|k| c[0][k] + c[1][k] + c[2][k]).collect();
    let p: Vec<f64> = unit(&cen).into_iter().map(|x| x * r).collect();
    let e1: Vec<f64> = c[1].iter().zip(&c[0]).map(|(x, y)| x - y).collect();
    let e2: Vec<f64> = c[2].iter().zip(&c[0]).map(|(x, y)| x - y).collect();
    if let Some(g) = GrassmannPoint::from_span(target, &p, &e1, &e2) {
        out.push(&g, w);
    }
}

/// Area of the geodesic triangle on the unit sphere with unit vertices `a, b, c`:
/// `tan(E/2) = √det G / (1 + a·b + b·c + c·a)` with `G` their Gram matrix.
pub fn geodesic_tri_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let (ab, bc, ca) = (dot(a, b), dot(b, c), dot(c, a));
    let (aa, bb, cc) = (dot(a, a), dot(b, b), dot(c, c));
    let det = aa * (bb * cc - bc * bc) - ab * (ab * cc - bc * ca) + ca * (ab * bc - bb * ca);
    2.0 * det.max(0.0).sqrt().atan2(1.0 + ab + bc + ca)
}

/// Exponent vectors of all monomials of degree ≤ `deg` in `n` variables, in
/// graded lexicographic order.
fn graded_monomials(n: usize, deg: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for total in 0..=deg {
        let mut cur = vec![0u8; n];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, i: usize, left: usize) {
    if i + 1 == cur.len() {
        cur[i] = left as u8;
        out.push(cur.clone());
        return;
    }
    for k in (0..=left).rev() {
        cur[i] = k as u8;
        fill(out, cur, i + 1, left - k);
    }
    cur[i] = 0;
}

/// Test functions `h_n(p, P) = m_a(p) · m_b(P) / s_n`: monomials of degree ≤ 3
/// in the point times monomials of degree ≤ 2 in the upper-triangular
/// projector entries, ordered by total degree, then point monomial, then plane
/// monomial. `s_n` is the sup of the product over a fixed dense sample of the
/// Grassmann bundle; evaluations are clamped to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct TestFunctionFamily {
    pub dim: usize,
    point_mono: Vec<Vec<u8>>,
    plane_mono: Vec<Vec<u8>>,
    /// `(point monomial, plane monomial)` per term.
    pub terms: Vec<(usize, usize)>,
    pub scale: Vec<f64>,
}

/// Number of Grassmann samples used to normalize the family.
const NORMALIZATION_SAMPLES: usize = 4000;

impl TestFunctionFamily {
    pub fn canonical(target: &EmbeddedManifold, n_terms: usize) -> Self {
        let d = target.ambient_dim;
        let point_mono = graded_monomials(d, 3);
        let plane_mono = graded_monomials(d * (d + 1) / 2, 2);
        let mut all: Vec<(usize, usize, usize)> = Vec::new();
        let deg = |m: &Vec<u8>| m.iter().map(|&e| e as usize).sum::<usize>();
        for (a, pm) in point_mono.iter().enumerate() {
            for (b, qm) in plane_mono.iter().enumerate() {
                all.push((deg(pm) + deg(qm), a, b));
            }
        }
        all.sort();
        let terms: Vec<(usize, usize)> = all.into_iter().take(n_terms).map(|(_, a, b)| (a, b)).collect();
        let mut fam = Self { dim: d, point_mono, plane_mono, terms, scale: Vec::new() };
        let samples = grassmann_samples(target, NORMALIZATION_SAMPLES);
        let mut sup = vec![0.0f64; fam.terms.len()];
        let mut pv = Vec::new();
        let mut qv = Vec::new();
        for g in &samples {
            fam.monomials(&g.p, &g.plane, &mut pv, &mut qv);
            for (k, &(a, b)) in fam.terms.iter().enumerate() {
                sup[k] = sup[k].max((pv[a] * qv[b]).abs());
            }
        }
        fam.scale = sup.into_iter().map(|s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
        fam
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn monomials(&self, p: &[f64], plane: &[f64], pv: &mut Vec<f64>, qv: &mut Vec<f64>) {
        let d = self.dim;
        pv.clear();
        for m in &self.point_mono {
            pv.push(m.iter().zip(p).map(|(&e, &x)| x.powi(e as i32)).product());
        }
        let mut entries = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in i..d {
                entries.push(plane[i * d + j]);
            }
        }
        qv.clear();
        for m in &self.plane_mono {
            qv.push(m.iter().zip(&entries).map(|(&e, &x)| x.powi(e as i32)).product());
        }
    }

    /// `h_n(p, P)` for every term.
    pub fn evaluate(&self, p: &[f64], plane: &[f64]) -> Vec<f64> {
        let mut pv = Vec::new();
        let mut qv = Vec::new();
        self.monomials(p, plane, &mut pv, &mut qv);
        self.terms.iter().zip(&self.scale).map(|(&(a, b), s)| (pv[a] * qv[b] * s).clamp(-1.0, 1.0)).collect()
    }

    /// `∫ h_n dV` for every term.
    pub fn moments(&self, v: &VarifoldMeasure) -> Result<Vec<f64>, VarifoldError> {
        if v.dim != self.dim {
            return Err(VarifoldError::DimensionMismatch(v.dim, self.dim));
        }
        let mut acc = vec![Neumaier::default(); self.len()];
        let mut pv = Vec::new();
        let mut qv = Vec::new();
        for s in 0..v.len() {
            self.monomials(v.point(s), v.plane(s), &mut pv, &mut qv);
            let w = v.weights[s];
            for (k, &(a, b)) in self.terms.iter().enumerate() {
                acc[k].add(w * (pv[a] * qv[b] * self.scale[k]).clamp(-1.0, 1.0));
            }
        }
        Ok(acc.iter().map(|a| a.value()).collect())
    }
}

/// Deterministic sample of the Grassmann bundle of the target.
fn grassmann_samples(target: &EmbeddedManifold, m: usize) -> Vec<GrassmannPoint> {
    let d = target.ambient_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_9a55);
    let mut out = Vec::with_capacity(m);
    let mut x = vec![0.0; d];
    while out.len() < m {
        let p = match &target.kind {
            ManifoldKind::AffineSubspace { dim, .. } => {
                let mut p = vec![0.0; d];
                for c in p.iter_mut().take(*dim) {
                    *c = rng.gen_range(-1.0..1.0);
                }
                p
            }
            _ => {
                for c in x.iter_mut() {
                    *c = gaussian(&mut rng);
                }
                let n = norm(&x);
                let scale = match &target.kind {
                    ManifoldKind::RoundSphere { radius, .. } => *radius,
                    ManifoldKind::Ellipsoid { semi_axes } => semi_axes.iter().cloned().fold(0.0, f64::max),
                    _ => 1.0,
                };
                let y: Vec<f64> = x.iter().map(|c| c * scale / n).collect();
                match target.project(&y) {
                    Ok(q) => q.coords,
                    Err(_) => continue,
                }
            }
        };
        let a: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        let b: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
        if let Some(g) = GrassmannPoint::from_span(target, &p, &a, &b) {
            out.push(g);
        }
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-300..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `Σ_{n ≤ N} 2^{-n} |∫h_n dV₀ - ∫h_n dV₁|`, with `n` counted from 1.
pub fn varifold_distance(v0: &VarifoldMeasure, v1: &VarifoldMeasure, fam: &TestFunctionFamily) -> Result<f64, VarifoldError> {
    let m0 = fam.moments(v0)?;
    let m1 = fam.moments(v1)?;
    Ok(distance_from_moments(&m0, &m1))
}

pub fn distance_from_moments(m0: &[f64], m1: &[f64]) -> f64 {
    let mut s = Neumaier::default();
    let mut w = 0.5;
    for (a, b) in m0.iter().zip(m1) {
        s.add(w * (a - b).abs());
        w *= 0.5;
    }
    s.value()
}

/// `∫ [Tr_M Q - Q(n, n)]` over the varifold of a map into a 3-manifold,
/// computed as `Σ w · Tr(P Q)`. `q` returns a row-major symmetric matrix.
pub fn quadratic_form_pairing(u: &DiscreteMap, q: impl Fn(&[f64]) -> Vec<f64>) -> Result<f64, VarifoldError> {
    if u.target.intrinsic_dim() != 3 {
        return Err(VarifoldError::Manifold(ManifoldError::DimensionMismatch { expected: 3, got: u.target.intrinsic_dim() }));
    }
    let v = varifold_of_map(u, DEFAULT_J_CUT);
    let d = v.dim;
    let mut s = Neumaier::default();
    for i in 0..v.len() {
        let qm = q(v.point(i));
        let pl = v.plane(i);
        let mut tr = 0.0;
        for a in 0..d {
            for b in 0..d {
                tr += pl[a * d + b] * qm[b * d + a];
            }
        }
        s.add(v.weights[i] * tr);
    }
    Ok(s.value())
}

/// Image under `Π⁻¹ ∘ g ∘ Π` of the node's sphere point, where `g` acts on the
/// south-pole chart coordinate and `None` stands for `∞`.
fn conjugate_by_chart(x: [f64; 3], g: impl Fn(Option<Complex64>) -> Option<Complex64>) -> [f64; 3] {
    let z = if x[2] <= 0.0 {
        sphere_to_chart(CHART_S, x).map(|c| Complex64::new(c[0], c[1]))
    } else {
        let c = sphere_to_chart(CHART_N, x).expect("northern points have finite north coordinates");
        let w = Complex64::new(c[0], c[1]);
        // z = 1 / conj(w).
        if w.norm_sqr() == 0.0 {
            None
        } else {
            Some(Complex64::new(1.0, 0.0) / w.conj())
        }
    };
    match g(z) {
        None => [0.0, 0.0, 1.0],
        Some(f) if f.norm_sqr() <= 1.0 => chart_to_sphere(CHART_S, [f.re, f.im]),
        Some(f) => {
            let w = Complex64::new(1.0, 0.0) / f.conj();
            chart_to_sphere(CHART_N, [w.re, w.im])
        }
    }
}

/// `v^j = Π⁻¹ ∘ (z + 1/(jz)) ∘ Π`, a degree-two rational map of the unit sphere.
pub fn bubble_example(domain: Arc<Domain>, j: u32) -> Result<DiscreteMap, VarifoldError> {
    if j == 0 {
        return Err(DmapError::InvalidArgument("bubble index must be positive".into()).into());
    }
    if !domain.is_sphere() {
        return Err(DmapError::NotSphere.into());
    }
    let jf = j as f64;
    let target = Arc::new(EmbeddedManifold::unit_sphere(2));
    let values = domain
        .sphere_pts
        .iter()
        .flat_map(|&x| {
            conjugate_by_chart(x, |z| match z {
                None => None,
                Some(z) if z.norm_sqr() == 0.0 => None,
                Some(z) => Some(z + Complex64::new(1.0, 0.0) / (jf * z)),
            })
        })
        .collect();
    Ok(DiscreteMap::from_values(domain, target, values)?)
}

/// `Π⁻¹ ∘ (1/z) ∘ Π`, the limit of the bubbles after renormalization.
pub fn inversion_map(domain: Arc<Domain>) -> Result<DiscreteMap, VarifoldError> {
    if !domain.is_sphere() {
        return Err(DmapError::NotSphere.into());
    }
    let target = Arc::new(EmbeddedManifold::unit_sphere(2));
    let values = domain
        .sphere_pts
        .iter()
        .flat_map(|&x| {
            conjugate_by_chart(x, |z| match z {
                None => Some(Complex64::new(0.0, 0.0)),
                Some(z) if z.norm_sqr() == 0.0 => None,
                Some(z) => Some(Complex64::new(1.0, 0.0) / z),
            })
        })
        .collect();
    Ok(DiscreteMap::from_values(domain, target, values)?)
}

fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    let s = ((a[1] * b[2] - a[2] * b[1]).powi(2) + (a[2] * b[0] - a[0] * b[2]).powi(2) + (a[0] * b[1] - a[1] * b[0]).powi(2)).sqrt();
    s.atan2(c)
}

/// Sphere point and Dirichlet integral `∫|∇u|²` of each triangle.
fn tri_dirichlet(u: &DiscreteMap) -> Vec<([f64; 3], f64)> {
    let dom = &u.domain;
    (0..dom.tris.len())
        .map(|t| {
            let tr = &dom.tris[t];
            (chart_to_sphere(tr.chart, tr.centroid), 2.0 * u.tri_form(t).energy())
        })
        .collect()
}

/// Renormalization of a concentrating map at `x`.
#[derive(Debug, Clone)]
pub struct Renormalization {
    /// Angular radius of the ball whose complement in `B_ρ(x)` carries `ε₃`.
    pub r: f64,
    pub y: [f64; 3],
    /// `u ∘ D⁻¹`, with `D` the conformal dilation sending `B_r(y)` to the southern hemisphere.
    pub map: DiscreteMap,
    /// `∫_{B_ρ(x) ∖ B_r(y)} |∇u|²` at the returned radius.
    pub annulus: f64,
}

/// Smallest `r` such that some lattice node `y ∈ B_{ρ-r}(x)` has
/// `∫_{B_ρ(x) ∖ B_r(y)} |∇u|² ≤ ε₃`, found by bisection; balls are geodesic
/// caps of the unit sphere.
pub fn renormalize_at(u: &DiscreteMap, x: [f64; 3], rho: f64, eps3: f64) -> Result<Renormalization, VarifoldError> {
    let dom = &u.domain;
    if !dom.is_sphere() {
        return Err(DmapError::NotSphere.into());
    }
    let tris: Vec<([f64; 3], f64)> = tri_dirichlet(u).into_iter().filter(|(c, _)| angle(*c, x) < rho).collect();
    let total: f64 = tris.iter().map(|t| t.1).sum();
    if total <= eps3 {
        return Err(VarifoldError::NotConcentrated { energy: total, eps3 });
    }
    // Candidate centers: the lattice nodes of B_ρ(x) carrying the most energy nearby.
    let dens = u.energy_density();
    let mut cand: Vec<usize> = (0..dom.num_nodes()).filter(|&i| angle(dom.sphere_pts[i], x) < rho).collect();
    cand.sort_by(|&a, &b| dens[b].partial_cmp(&dens[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    cand.truncate(256);
    let nearest = (0..dom.num_nodes()).min_by(|&a, &b| angle(dom.sphere_pts[a], x).partial_cmp(&angle(dom.sphere_pts[b], x)).unwrap()).unwrap();
    if !cand.contains(&nearest) {
        cand.push(nearest);
    }
    // Per center: tri distances sorted, with prefix sums of the integral.
    let prof: Vec<(usize, f64, Vec<f64>, Vec<f64>)> = cand
        .iter()
        .map(|&i| {
            let y = dom.sphere_pts[i];
            let mut dv: Vec<(f64, f64)> = tris.iter().map(|(c, e)| (angle(*c, y), *e)).collect();
            dv.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut pre = Vec::with_capacity(dv.len() + 1);
            pre.push(0.0);
            let mut acc = 0.0;
            for &(_, e) in &dv {
                acc += e;
                pre.push(acc);
            }
            (i, angle(y, x), dv.into_iter().map(|p| p.0).collect(), pre)
        })
        .collect();
    let best_at = |r: f64| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, dx, dists, pre) in &prof {
            if *dx > (rho - r).max(0.0) && *i != nearest {
                continue;
            }
            let k = dists.partition_point(|&d| d < r);
            let ann = total - pre[k];
            if best.map_or(true, |b| ann < b.1) {
                best = Some((*i, ann));
            }
        }
        best
    };
    let (mut lo, mut hi) = (0.0, rho + angle(dom.sphere_pts[nearest], x));
    let mut found = best_at(hi).filter(|b| b.1 <= eps3);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match best_at(mid) {
            Some(b) if b.1 <= eps3 => {
                hi = mid;
                found = Some(b);
            }
            _ => lo = mid,
        }
    }
    let (node, annulus) = found.ok_or(VarifoldError::NotConcentrated { energy: total, eps3 })?;
    let y = dom.sphere_pts[node];
    let chart = if y[2] <= 0.0 { CHART_S } else { CHART_N };
    let ball = Ball::from_cap(chart, y, hi).ok_or_else(|| DmapError::InvalidArgument("renormalization cap too large".into()))?;
    let dl = conformal_dilation(&ball);
    let map = compose_with_sphere_map(u, |p| dl.apply_inverse(p))?;
    Ok(Renormalization { r: hi, y, map, annulus })
}

/// Dirichlet integral of `u` on the geodesic cap `B_r(y)`.
pub fn cap_dirichlet(u: &DiscreteMap, y: [f64; 3], r: f64) -> f64 {
    tri_dirichlet(u).into_iter().filter(|(c, _)| angle(*c, y) < r).map(|t| t.1).sum()
}

/// Points where the last map of the sequence keeps at least `eps_su` of
/// Dirichlet integral in every cap of the radius grid. Qualifying nodes are
/// clustered; each cluster reports its node with the largest integral in the
/// smallest cap.
pub fn detect_concentration(seq: &[DiscreteMap], eps_su: f64, radii: &[f64]) -> Vec<[f64; 3]> {
    let Some(u) = seq.last() else { return Vec::new() };
    if !u.domain.is_sphere() || radii.is_empty() {
        return Vec::new();
    }
    let r_min = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let tris = tri_dirichlet(u);
    // Buckets of triangle centroids on a 3D grid with cells of chord size r_min.
    let cell = 2.0 * (0.5 * r_min).sin().max(1e-6);
    let key = |p: [f64; 3]| -> (i64, i64, i64) { ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64) };
    let mut buckets: std::collections::HashMap<(i64, i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (k, (c, _)) in tris.iter().enumerate() {
        buckets.entry(key(*c)).or_default().push(k);
    }
    let dom = &u.domain;
    let mut hits: Vec<(usize, f64)> = Vec::new();
    for i in 0..dom.num_nodes() {
        let y = dom.sphere_pts[i];
        let (a, b, c) = key(y);
        let mut e = 0.0;
        for da in -1..=1 {
            for db in -1..=1 {
                for dc in -1..=1 {
                    if let Some(list) = buckets.get(&(a + da, b + db, c + dc)) {
                        for &k in list {
                            if angle(tris[k].0, y) < r_min {
                                e += tris[k].1;
                            }
                        }
                    }
                }
            }
        }
        // Caps are nested, so the smallest radius attains the infimum.
        if e >= eps_su {
            hits.push((i, e));
        }
    }
    hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut points: Vec<[f64; 3]> = Vec::new();
    for (i, _) in hits {
        let y = dom.sphere_pts[i];
        if points.iter().all(|p| angle(*p, y) > 2.0 * r_min) {
            points.push(y);
        }
    }
    points
}

/// Symmetric matrix of pairwise distances as CSV with a header row of labels.
pub fn write_distance_matrix<W: Write>(w: &mut W, labels: &[String], m: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(w, "label,{}", labels.join(","))?;
    for (l, row) in labels.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.12e}")).collect();
        writeln!(w, "{l},{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    fn sphere(n: usize) -> Arc<Domain> {
        Arc::new(Domain::sphere(n).unwrap())
    }

    #[test]
    fn graded_monomials_are_complete_and_ordered() {
        let m = graded_monomials(3, 3);
        assert_eq!(m.len(), 20);
        assert_eq!(m[0], vec![0, 0, 0]);
        assert_eq!(m[1], vec![1, 0, 0]);
        assert_eq!(m[3], vec![0, 0, 1]);
        assert_eq!(m[4], vec![2, 0, 0]);
        assert_eq!(graded_monomials(6, 2).len(), 28);
    }

    #[test]
    fn constant_map_has_empty_measure() {
        let d = sphere(17);
        let u = DiscreteMap::constant(d, Arc::new(EmbeddedManifold::unit_sphere(2)), &[0.0, 0.0, 1.0]).unwrap();
        let v = varifold_of_map(&u, DEFAULT_J_CUT);
        assert!(v.is_empty());
        assert_eq!(v.total_weight(), 0.0);
    }

    #[test]
    fn identity_measure_has_sphere_area_and_tangent_planes() {
        let d = sphere(129);
        let u = DiscreteMap::identity(d).unwrap();
        let v = varifold_of_map(&u, DEFAULT_J_CUT);
        let w = v.total_weight();
        assert!((w - 4.0 * PI).abs() < 0.005 * 4.0 * PI, "{w}");
        // Projected pieces tile the sphere exactly.
        assert!((w - 4.0 * PI).abs() < 1e-8, "{w}");
        assert!((w - u.area()).abs() < 0.005 * w);
        for i in (0..v.len()).step_by(97) {
            let p = v.point(i);
            let pl = v.plane(i);
            // P p = 0 and trace 2.
            for a in 0..3 {
                let s: f64 = (0..3).map(|b| pl[a * 3 + b] * p[b]).sum();
                assert!(s.abs() < 1e-12);
            }
            assert!((pl[0] + pl[4] + pl[8] - 2.0).abs() < 1e-12);
        }
    }

    fn equatorial_s3(d: &Arc<Domain>) -> DiscreteMap {
        let t = Arc::new(EmbeddedManifold::unit_sphere(3));
        DiscreteMap::from_fn(d.clone(), t, |i| {
            let p = d.sphere_pts[i];
            vec![p[0], p[1], p[2], 0.0]
        })
        .unwrap()
    }

    #[test]
    fn equatorial_sphere_normals_point_along_the_fourth_axis() {
        let d = sphere(65);
        let u = equatorial_s3(&d);
        let v = varifold_of_map(&u, DEFAULT_J_CUT);
        assert!((v.total_weight() - 4.0 * PI).abs() < 0.005 * 4.0 * PI);
        for i in (0..v.len()).step_by(31) {
            let g = GrassmannPoint { p: v.point(i).to_vec(), plane: v.plane(i).to_vec() };
            let n = g.normal_in(&u.target).unwrap();
            assert!((n[3].abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn pairing_with_metric_and_ricci() {
        let d = sphere(65);
        let u = equatorial_s3(&d);
        let id4 = |_: &[f64]| {
            let mut m = vec![0.0; 16];
            for i in 0..4 {
                m[i * 5] = 1.0;
            }
            m
        };
        let g = quadratic_form_pairing(&u, id4).unwrap();
        assert!((g - 8.0 * PI).abs() < 0.01 * 8.0 * PI, "{g}");
        let ric = quadratic_form_pairing(&u, |p| id4(p).into_iter().map(|x| 2.0 * x).collect()).unwrap();
        assert!((ric - 16.0 * PI).abs() < 0.01 * 16.0 * PI, "{ric}");
        assert_eq!(quadratic_form_pairing(&u, |_| vec![0.0; 16]).unwrap(), 0.0);
        let flat = DiscreteMap::identity(d).unwrap();
        assert!(quadratic_form_pairing(&flat, id4).is_err());
    }

    #[test]
    fn family_is_bounded_and_orientation_blind() {
        let t = EmbeddedManifold::unit_sphere(3);
        let fam = TestFunctionFamily::canonical(&t, DEFAULT_TERMS);
        assert_eq!(fam.len(), DEFAULT_TERMS);
        assert_eq!(fam.terms[0], (0, 0));
        for g in grassmann_samples(&t, 200) {
            let h = fam.evaluate(&g.p, &g.plane);
            assert!(h.iter().all(|x| x.abs() <= 1.0));
        }
        // Swapping the spanning vectors (reversing orientation) gives the same projector.
        let p = [0.0, 0.0, 0.0, 1.0];
        let a = GrassmannPoint::from_span(&t, &p, &[1.0, 0.2, 0.0, 0.0], &[0.0, 1.0, 0.3, 0.0]).unwrap();
        let b = GrassmannPoint::from_span(&t, &p, &[0.0, 1.0, 0.3, 0.0], &[1.0, 0.2, 0.0, 0.0]).unwrap();
        let (ha, hb) = (fam.evaluate(&a.p, &a.plane), fam.evaluate(&b.p, &b.plane));
        for (x, y) in ha.iter().zip(&hb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_antipodal_map_are_close() {
        let d = sphere(65);
        let id = DiscreteMap::identity(d.clone()).unwrap();
        let anti = DiscreteMap::from_fn(d.clone(), id.target.clone(), |i| d.sphere_pts[i].iter().map(|x| -x).collect()).unwrap();
        let fam = TestFunctionFamily::canonical(&id.target, DEFAULT_TERMS);
        let a = varifold_of_map(&id, DEFAULT_J_CUT);
        let b = varifold_of_map(&anti, DEFAULT_J_CUT);
        assert_eq!(varifold_distance(&a, &a, &fam).unwrap(), 0.0);
        let dist = varifold_distance(&a, &b, &fam).unwrap();
        assert!(dist <= 1e-3, "{dist}");
    }

    fn random_measure(seed: u64) -> VarifoldMeasure {
        let t = EmbeddedManifold::unit_sphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = VarifoldMeasure::empty(3);
        for g in grassmann_samples(&t, 40).into_iter().skip(rng.gen_range(0..100)) {
            v.push(&g, rng.gen_range(0.0..1.0));
        }
        v
    }

    #[test]
    fn distance_is_a_pseudometric_on_random_triples() {
        let fam = TestFunctionFamily::canonical(&EmbeddedManifold::unit_sphere(2), DEFAULT_TERMS);
        let moments: Vec<Vec<f64>> = (0..30).map(|s| fam.moments(&random_measure(s)).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, b, c) = (rng.gen_range(0..30), rng.gen_range(0..30), rng.gen_range(0..30));
            let ab = distance_from_moments(&moments[a], &moments[b]);
            let ba = distance_from_moments(&moments[b], &moments[a]);
            let bc = distance_from_moments(&moments[b], &moments[c]);
            let ac = distance_from_moments(&moments[a], &moments[c]);
            assert_eq!(ab, ba);
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn bubble_energies_and_conformality() {
        let coarse = sphere(65);
        let fine = sphere(129);
        for j in [1, 4] {
            let vc = bubble_example(coarse.clone(), j).unwrap();
            let vf = bubble_example(fine.clone(), j).unwrap();
            let e = vf.energy(None);
            assert!((e - 8.0 * PI).abs() < 0.01 * 8.0 * PI, "j={j}: {e}");
            // The conformality defect is a first-order mesh effect.
            let (dc, df) = (vc.conformality_defect() / vc.energy(None), vf.conformality_defect() / e);
            assert!(df < 0.6 * dc, "j={j}: {dc} -> {df}");
        }
    }

    #[test]
    fn bubbles_converge_to_the_identity_away_from_the_south_pole() {
        let d = sphere(65);
        let id = DiscreteMap::identity(d.clone()).unwrap();
        let south = [0.0, 0.0, -1.0];
        let mut prev = f64::INFINITY;
        for j in [1, 2, 4, 8] {
            let v = bubble_example(d.clone(), j).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..d.num_nodes() {
                if angle(d.sphere_pts[i], south) > 0.3 {
                    let dv: f64 = (0..3).map(|k| (v.value(i)[k] - id.value(i)[k]).powi(2)).sum::<f64>().sqrt();
                    worst = worst.max(dv);
                }
            }
            assert!(worst < prev, "j={j}: {worst}");
            prev = worst;
        }
    }

    #[test]
    fn renormalization_radius_shrinks_with_j() {
        let d = sphere(65);
        let south = [0.0, 0.0, -1.0];
        let mut prev = f64::INFINITY;
        for j in [2, 4, 8] {
            let v = bubble_example(d.clone(), j).unwrap();
            let r = renormalize_at(&v, south, 1.2, 2.0 * PI).unwrap();
            assert!(r.r < prev, "j={j}: {}", r.r);
            prev = r.r;
        }
    }

    #[test]
    fn renormalized_bubble_keeps_its_energy() {
        let d = sphere(129);
        let v = bubble_example(d, 8).unwrap();
        let r = renormalize_at(&v, [0.0, 0.0, -1.0], 1.2, 2.0 * PI).unwrap();
        assert!((r.annulus - 2.0 * PI).abs() < 0.05);
        let hemi = crate::dmap::BallFamily::single(Ball::new(CHART_S, [0.0, 0.0], 1.0));
        let e_new = r.map.energy(Some(&hemi));
        let e_old = 0.5 * cap_dirichlet(&v, r.y, r.r);
        assert!((e_new - e_old).abs() < 0.01 * e_old, "{e_new} vs {e_old}");
    }

    #[test]
    fn identity_is_not_concentrated() {
        let d = sphere(33);
        let u = DiscreteMap::identity(d).unwrap();
        let r = renormalize_at(&u, [0.0, 0.0, -1.0], 0.5, 10.0);
        assert!(matches!(r, Err(VarifoldError::NotConcentrated { .. })));
    }

    #[test]
    fn concentration_is_found_only_for_bubbles() {
        let d = sphere(65);
        let id = DiscreteMap::identity(d.clone()).unwrap();
        let radii = [0.4, 0.2];
        assert!(detect_concentration(&[id.clone(), id.clone()], 4.0, &radii).is_empty());
        let c = DiscreteMap::constant(d.clone(), id.target.clone(), &[1.0, 0.0, 0.0]).unwrap();
        assert!(detect_concentration(&[c.clone(), c], 4.0, &radii).is_empty());
        let seq: Vec<DiscreteMap> = [1, 2, 4, 8].iter().map(|&j| bubble_example(d.clone(), j).unwrap()).collect();
        let pts = detect_concentration(&seq, 4.0, &radii);
        assert_eq!(pts.len(), 1, "{pts:?}");
        assert!(angle(pts[0], [0.0, 0.0, -1.0]) < 2.0 * d.grid_spacing());
    }

    proptest! {
        #[test]
        fn union_adds_moments(s0 in 0u64..50, s1 in 0u64..50) {
            let fam = TestFunctionFamily::canonical(&EmbeddedManifold::unit_sphere(2), 16);
            let a = random_measure(s0);
            let b = random_measure(s1);
            let ma = fam.moments(&a).unwrap();
            let mb = fam.moments(&b).unwrap();
            let mu = fam.moments(&a.union(&b).unwrap()).unwrap();
            for k in 0..ma.len() {
                prop_assert!((mu[k] - ma[k] - mb[k]).abs() < 1e-12);
            }
        }
    }
}
