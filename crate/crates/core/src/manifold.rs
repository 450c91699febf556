//! Analytic target manifolds embedded in Euclidean space.
//!
//! Each kind carries a closed-form nearest-point projection together with the
//! tube radii and curvature constants the replacement machinery relies on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("point at distance {distance} is outside the tube of radius {radius}")]
    OutsideTube { distance: f64, radius: f64 },
    #[error("invalid manifold parameters: {0}")]
    InvalidParameters(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Kind and shape parameters of a target manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldKind {
    /// `S^dim` of the given radius, centered at the origin of `R^(dim+1)`.
    RoundSphere { dim: usize, radius: f64 },
    /// `{ sum x_i^2 / a_i^2 = 1 }` in `R^n`.
    Ellipsoid { semi_axes: Vec<f64> },
    /// Span of the first `dim` coordinate axes of `R^ambient_dim`.
    AffineSubspace { dim: usize, ambient_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedManifold {
    pub kind: ManifoldKind,
    pub ambient_dim: usize,
    /// Radius of the tube on which the projection is single valued and smooth.
    pub tubular_radius: f64,
    /// Half of `tubular_radius`; `|dΠ|² ≤ 2` holds on this tube.
    pub safe_tubular_radius: f64,
    /// Upper bound for the norm of the second fundamental form.
    pub sff_bound: f64,
    /// `|dΠ_x(V)| ≤ (1 + C_Π dist(x, M)) |V|` on the tube.
    pub projection_lipschitz: f64,
    /// `|(x - y)^N| ≤ C |x - y|²` for `x, y` on the manifold.
    pub normal_part_constant: f64,
    /// Constraint tolerance for node values.
    pub tol: f64,
}

impl EmbeddedManifold {
    pub fn new(kind: ManifoldKind) -> Result<Self, ManifoldError> {
        match kind {
            ManifoldKind::RoundSphere { dim, radius } => Self::round_sphere(dim, radius),
            ManifoldKind::Ellipsoid { semi_axes } => Self::ellipsoid(semi_axes),
            ManifoldKind::AffineSubspace { dim, ambient_dim } => Self::affine(dim, ambient_dim),
        }
    }

    pub fn round_sphere(dim: usize, radius: f64) -> Result<Self, ManifoldError> {
        if dim == 0 || !(radius > 0.0) || !radius.is_finite() {
            return Err(ManifoldError::InvalidParameters(format!("sphere needs dim >= 1 and radius > 0 (dim={dim}, radius={radius})")));
        }
        let delta = radius / 2.0;
        Ok(Self {
            kind: ManifoldKind::RoundSphere { dim, radius },
            ambient_dim: dim + 1,
            tubular_radius: delta,
            safe_tubular_radius: delta / 2.0,
            sff_bound: (dim as f64).sqrt() / radius,
            projection_lipschitz: 2.0 / radius,
            normal_part_constant: 0.5 / radius,
            tol: 1e-10,
        })
    }

    pub fn unit_sphere(dim: usize) -> Self {
        Self::round_sphere(dim, 1.0).expect("unit sphere parameters are valid")
    }

    pub fn ellipsoid(semi_axes: Vec<f64>) -> Result<Self, ManifoldError> {
        if semi_axes.len() < 2 || semi_axes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(ManifoldError::InvalidParameters("ellipsoid needs at least two positive semi-axes".into()));
        }
        let amin = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        let amax = semi_axes.iter().cloned().fold(0.0, f64::max);
        let kappa_max = amax / (amin * amin);
        let dim = semi_axes.len() - 1;
        let delta = 0.5 / kappa_max;
        Ok(Self {
            ambient_dim: semi_axes.len(),
            kind: ManifoldKind::Ellipsoid { semi_axes },
            tubular_radius: delta,
            safe_tubular_radius: delta / 2.0,
            sff_bound: (dim as f64).sqrt() * kappa_max,
            projection_lipschitz: 2.0 * kappa_max,
            normal_part_constant: 0.5 * kappa_max,
            tol: 1e-10,
        })
    }

    pub fn affine(dim: usize, ambient_dim: usize) -> Result<Self, ManifoldError> {
        if dim == 0 || dim > ambient_dim {
            return Err(ManifoldError::InvalidParameters(format!("affine subspace needs 1 <= dim <= ambient_dim (dim={dim}, ambient={ambient_dim})")));
        }
        Ok(Self {
            kind: ManifoldKind::AffineSubspace { dim, ambient_dim },
            ambient_dim,
            tubular_radius: f64::INFINITY,
            safe_tubular_radius: f64::INFINITY,
            sff_bound: 0.0,
            projection_lipschitz: 0.0,
            normal_part_constant: 0.0,
            tol: 1e-10,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn intrinsic_dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::RoundSphere { dim, .. } => *dim,
            ManifoldKind::Ellipsoid { semi_axes } => semi_axes.len() - 1,
            ManifoldKind::AffineSubspace { dim, .. } => *dim,
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, ManifoldKind::RoundSphere { .. })
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ManifoldError> {
        if x.len() != self.ambient_dim {
            return Err(ManifoldError::DimensionMismatch { expected: self.ambient_dim, got: x.len() });
        }
        Ok(())
    }

    /// Euclidean distance from `x` to the manifold.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ManifoldKind::RoundSphere { radius, .. } => (norm(x) - radius).abs(),
            ManifoldKind::AffineSubspace { dim, .. } => norm(&x[*dim..]),
            ManifoldKind::Ellipsoid { semi_axes } => {
                let mut q = vec![0.0; x.len()];
                ellipsoid_closest(semi_axes, x, &mut q);
                dist(x, &q)
            }
        }
    }

    /// Nearest-point projection onto the manifold.
    pub fn project(&self, x: &[f64]) -> Result<ManifoldPoint, ManifoldError> {
        let mut out = vec![0.0; x.len()];
        self.project_into(x, &mut out)?;
        Ok(ManifoldPoint { coords: out })
    }

    /// Allocation-free variant of [`project`](Self::project).
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ManifoldError> {
        self.check_dim(x)?;
        match &self.kind {
            ManifoldKind::RoundSphere { radius, .. } => {
                // Radial projection is smooth on all of R^n minus the origin, so only
                // the inner side of the tube is enforced.
                let r = norm(x);
                let d = radius - r;
                if d >= self.tubular_radius {
                    return Err(ManifoldError::OutsideTube { distance: d, radius: self.tubular_radius });
                }
                let s = radius / r;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v * s;
                }
            }
            ManifoldKind::AffineSubspace { dim, .. } => {
                out[..*dim].copy_from_slice(&x[..*dim]);
                for o in &mut out[*dim..] {
                    *o = 0.0;
                }
            }
            ManifoldKind::Ellipsoid { semi_axes } => {
                ellipsoid_closest(semi_axes, x, out);
                let d = dist(x, out);
                if d >= self.tubular_radius {
                    return Err(ManifoldError::OutsideTube { distance: d, radius: self.tubular_radius });
                }
            }
        }
        Ok(())
    }

    /// Orthonormal basis of the normal space at a point of the manifold.
    pub fn normal_basis(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match &self.kind {
            ManifoldKind::RoundSphere { .. } => {
                let r = norm(x);
                vec![x.iter().map(|v| v / r).collect()]
            }
            ManifoldKind::Ellipsoid { semi_axes } => {
                let g: Vec<f64> = x.iter().zip(semi_axes).map(|(v, a)| v / (a * a)).collect();
                let n = norm(&g);
                vec![g.iter().map(|v| v / n).collect()]
            }
            ManifoldKind::AffineSubspace { dim, ambient_dim } => (*dim..*ambient_dim)
                .map(|i| {
                    let mut e = vec![0.0; *ambient_dim];
                    e[i] = 1.0;
                    e
                })
                .collect(),
        }
    }

    /// Orthonormal frame of the tangent space at `x`.
    pub fn tangent_basis(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let normals = self.normal_basis(x);
        let k = self.intrinsic_dim();
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
        // Gram-Schmidt on the coordinate axes, preferring axes least aligned with the normals.
        let mut axes: Vec<(f64, usize)> = (0..self.ambient_dim).map(|i| (normals.iter().map(|n| n[i] * n[i]).sum::<f64>(), i)).collect();
        axes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, i) in &axes {
            if frame.len() == k {
                break;
            }
            let mut v = vec![0.0; self.ambient_dim];
            v[i] = 1.0;
            for _ in 0..2 {
                for b in normals.iter().chain(frame.iter()) {
                    let c = dot(&v, b);
                    for (vi, bi) in v.iter_mut().zip(b) {
                        *vi -= c * bi;
                    }
                }
            }
            let n = norm(&v);
            if n > 1e-6 {
                frame.push(v.iter().map(|c| c / n).collect());
            }
        }
        frame
    }

    /// Component of `v` tangent to the manifold at `x`, written into `out`.
    pub fn tangential_part(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        match &self.kind {
            ManifoldKind::RoundSphere { .. } => {
                let c = dot(x, v) / dot(x, x);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o -= c * xi;
                }
            }
            ManifoldKind::AffineSubspace { dim, .. } => {
                for o in &mut out[*dim..] {
                    *o = 0.0;
                }
            }
            ManifoldKind::Ellipsoid { .. } => {
                for n in self.normal_basis(x) {
                    let c = dot(&n, v);
                    for (o, ni) in out.iter_mut().zip(&n) {
                        *o -= c * ni;
                    }
                }
            }
        }
    }

    /// Component of `x - y` normal to the tangent space at `x`.
    pub fn normal_part(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut out = vec![0.0; d.len()];
        for n in self.normal_basis(x) {
            let c = dot(&n, &d);
            for (o, ni) in out.iter_mut().zip(&n) {
                *o += c * ni;
            }
        }
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.ambient_dim && self.distance(x) <= self.tol.max(1e-12)
    }
}

/// Closest point on an ellipsoid via the Lagrange multiplier equation
/// `sum a_i² x_i² / (a_i² + t)² = 1`, solved by safeguarded Newton.
fn ellipsoid_closest(axes: &[f64], x: &[f64], out: &mut [f64]) {
    let a2: Vec<f64> = axes.iter().map(|a| a * a).collect();
    let f = |t: f64| -> (f64, f64) {
        let mut v = -1.0;
        let mut dv = 0.0;
        for (ai, xi) in a2.iter().zip(x) {
            let den = ai + t;
            let q = ai * xi * xi / (den * den);
            v += q;
            dv -= 2.0 * q / den;
        }
        (v, dv)
    };
    let amin2 = a2.iter().cloned().fold(f64::INFINITY, f64::min);
    let xn = norm(x);
    if xn == 0.0 {
        // Degenerate: every direction along the shortest axis is equally close.
        let i = a2.iter().position(|v| *v == amin2).unwrap_or(0);
        out.iter_mut().for_each(|o| *o = 0.0);
        out[i] = axes[i];
        return;
    }
    let mut lo = -amin2 + 1e-300;
    let amax = axes.iter().cloned().fold(0.0, f64::max);
    let mut hi = amax * xn;
    while f(hi).0 > 0.0 {
        hi *= 2.0;
    }
    // The root is bracketed in (lo, hi); f is decreasing there.
    let mut t = 0.0f64.clamp(lo, hi);
    for _ in 0..200 {
        let (v, dv) = f(t);
        if v.abs() < 1e-15 {
            break;
        }
        if v > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut tn = t - v / dv;
        if !(tn > lo && tn < hi) || !tn.is_finite() {
            tn = 0.5 * (lo + hi);
        }
        if (tn - t).abs() <= 1e-16 * (1.0 + t.abs()) {
            t = tn;
            break;
        }
        t = tn;
    }
    for i in 0..x.len() {
        out[i] = a2[i] * x[i] / (a2[i] + t);
    }
    // Final radial correction onto the quadric.
    let s: f64 = out.iter().zip(&a2).map(|(q, a)| q * q / a).sum();
    let c = s.sqrt();
    out.iter_mut().for_each(|q| *q /= c);
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
