//! Operations producing new maps: mollification, collar interpolation,
//! conformal dilations.

use std::f64::consts::PI;
use std::sync::Arc;

use super::mesh::{chart_to_sphere, sphere_to_chart, Domain, CHART_S};
use super::{Ball, DiscreteMap, DmapError, MAX_AMBIENT};
use crate::manifold::EmbeddedManifold;

/// Spherical cap `(center, angular radius)` covered by a sphere-chart ball.
pub fn cap_of_ball(b: &Ball) -> ([f64; 3], f64) {
    let pts: Vec<[f64; 3]> = (0..3)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 3.0;
            chart_to_sphere(b.chart, [b.center[0] + b.radius * a.cos(), b.center[1] + b.radius * a.sin()])
        })
        .collect();
    let e1 = sub3(pts[1], pts[0]);
    let e2 = sub3(pts[2], pts[0]);
    let mut n = cross3(e1, e2);
    let nn = dot3(n, n).sqrt();
    n = [n[0] / nn, n[1] / nn, n[2] / nn];
    let mut off = dot3(n, pts[0]);
    let inside = chart_to_sphere(b.chart, b.center);
    if dot3(n, inside) < off {
        n = [-n[0], -n[1], -n[2]];
        off = -off;
    }
    (n, off.clamp(-1.0, 1.0).acos())
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize3(a: [f64; 3]) -> [f64; 3] {
    let n = dot3(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rotation matrix taking the unit vector `from` to `to`.
fn rotation_between(from: [f64; 3], to: [f64; 3]) -> [[f64; 3]; 3] {
    let c = dot3(from, to);
    let v = cross3(from, to);
    let s = dot3(v, v).sqrt();
    if s < 1e-15 {
        if c > 0.0 {
            return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        }
        // Half turn about an axis orthogonal to `from`.
        let a = if from[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let k = normalize3(cross3(from, a));
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = 2.0 * k[i] * k[j] - if i == j { 1.0 } else { 0.0 };
            }
        }
        return r;
    }
    let k = [v[0] / s, v[1] / s, v[2] / s];
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut kk = 0.0;
            for m in 0..3 {
                kk += kx[i][m] * kx[m][j];
            }
            r[i][j] = if i == j { 1.0 } else { 0.0 } + s * kx[i][j] + (1.0 - c) * kk;
        }
    }
    r
}

fn mat_vec(r: &[[f64; 3]; 3], x: [f64; 3]) -> [f64; 3] {
    [dot3(r[0], x), dot3(r[1], x), dot3(r[2], x)]
}

fn mat_t_vec(r: &[[f64; 3]; 3], x: [f64; 3]) -> [f64; 3] {
    [r[0][0] * x[0] + r[1][0] * x[1] + r[2][0] * x[2], r[0][1] * x[0] + r[1][1] * x[1] + r[2][1] * x[2], r[0][2] * x[0] + r[1][2] * x[1] + r[2][2] * x[2]]
}

/// Möbius self-map of the sphere taking a ball onto the southern hemisphere:
/// a rotation moving the ball's center to the south pole followed by the
/// stereographic dilation `z ↦ λ z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformalDilation {
    pub rotation: [[f64; 3]; 3],
    pub lambda: f64,
}

impl ConformalDilation {
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let y = mat_vec(&self.rotation, x);
        dilate(y, self.lambda)
    }

    pub fn apply_inverse(&self, x: [f64; 3]) -> [f64; 3] {
        let y = dilate(x, 1.0 / self.lambda);
        mat_t_vec(&self.rotation, y)
    }
}

/// `Π_S⁻¹(λ Π_S(x))`, evaluated stably near both poles.
fn dilate(y: [f64; 3], lambda: f64) -> [f64; 3] {
    if y[2] < 0.0 {
        let z = sphere_to_chart(CHART_S, y).expect("southern points have chart coordinates");
        chart_to_sphere(CHART_S, [lambda * z[0], lambda * z[1]])
    } else {
        // In the northern chart the dilation acts as w ↦ w / λ.
        let w = sphere_to_chart(super::CHART_N, y).expect("northern points have chart coordinates");
        chart_to_sphere(super::CHART_N, [w[0] / lambda, w[1] / lambda])
    }
}

/// Conformal dilation sending the cap of `b` onto the southern hemisphere.
pub fn conformal_dilation(b: &Ball) -> ConformalDilation {
    let (q, alpha) = cap_of_ball(b);
    let rotation = rotation_between(q, [0.0, 0.0, -1.0]);
    ConformalDilation { rotation, lambda: 1.0 / (0.5 * alpha).tan() }
}

/// `x ↦ Π(u(f(x)))` with `u` interpolated on its own mesh.
pub fn compose_with_sphere_map(u: &DiscreteMap, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<DiscreteMap, DmapError> {
    if !u.domain.is_sphere() {
        return Err(DmapError::NotSphere);
    }
    let d = u.dim();
    let mut values = vec![0.0; u.values.len()];
    let mut buf = [0.0; MAX_AMBIENT];
    for (i, p) in u.domain.sphere_pts.iter().enumerate() {
        u.sample_sphere(f(*p), &mut buf[..d]);
        u.target.project_into(&buf[..d], &mut values[i * d..(i + 1) * d]).map_err(DmapError::TubeEscape)?;
    }
    DiscreteMap::from_values(u.domain.clone(), u.target.clone(), values)
}

/// Quadrature of the unit ball in R³ against the normalized kernel `(1 - s²)³`.
fn mollifier_rule() -> Vec<([f64; 3], f64)> {
    // Gauss-Legendre on [0, 1] for the radial factor.
    let gl: [(f64, f64); 4] = [
        (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
        (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
        (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
        (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
    ];
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut ico: Vec<[f64; 3]> = Vec::new();
    for &a in &[-1.0, 1.0] {
        for &b in &[-phi, phi] {
            ico.push(normalize3([0.0, a, b]));
            ico.push(normalize3([a, b, 0.0]));
            ico.push(normalize3([b, 0.0, a]));
        }
    }
    let mut out = Vec::new();
    for (k, &(s, w)) in gl.iter().enumerate() {
        // Each shell gets its own fixed rotation to spread the directions.
        let ang = 0.7 * k as f64;
        let axis = normalize3([1.0, 2.0, 3.0]);
        let rot = axis_angle(axis, ang);
        let wr = w * (1.0 - s * s).powi(3) * s * s;
        for d in &ico {
            let v = mat_vec(&rot, *d);
            out.push(([s * v[0], s * v[1], s * v[2]], wr / ico.len() as f64));
        }
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in out.iter_mut() {
        p.1 /= total;
    }
    out
}

fn axis_angle(k: [f64; 3], a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    let mut r = [[0.0; 3]; 3];
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = c * if i == j { 1.0 } else { 0.0 } + s * kx[i][j] + (1.0 - c) * k[i] * k[j];
        }
    }
    r
}

/// Smooths a sphere map by averaging `u(T_y(x))`, `T_y(x) = (x - y)/|x - y|`,
/// over `y` distributed by a radial bump of radius `r`, then projecting.
pub fn mollify(u: &DiscreteMap, r: f64) -> Result<DiscreteMap, DmapError> {
    if !u.domain.is_sphere() {
        return Err(DmapError::NotSphere);
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(DmapError::InvalidArgument(format!("mollifier radius must lie in (0, 1), got {r}")));
    }
    let rule = mollifier_rule();
    let d = u.dim();
    let mut values = vec![0.0; u.values.len()];
    let mut acc = [0.0; MAX_AMBIENT];
    let mut buf = [0.0; MAX_AMBIENT];
    for (i, x) in u.domain.sphere_pts.iter().enumerate() {
        acc[..d].iter_mut().for_each(|a| *a = 0.0);
        for (s, w) in &rule {
            let q = normalize3([x[0] - r * s[0], x[1] - r * s[1], x[2] - r * s[2]]);
            u.sample_sphere(q, &mut buf[..d]);
            for c in 0..d {
                acc[c] += w * buf[c];
            }
        }
        u.target.project_into(&acc[..d], &mut values[i * d..(i + 1) * d]).map_err(DmapError::TubeEscape)?;
    }
    DiscreteMap::from_values(u.domain.clone(), u.target.clone(), values)
}

/// A closed curve sampled at `θ_j = 2πj/m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % dim, 0);
        Self { dim, values }
    }

    pub fn from_fn(dim: usize, m: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(dim * m);
        for j in 0..m {
            values.extend(f(2.0 * PI * j as f64 / m as f64));
        }
        Self { dim, values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// `∫ |∂_θ f|² dθ` for the piecewise linear interpolant.
    pub fn derivative_energy(&self) -> f64 {
        let m = self.len();
        let h = 2.0 * PI / m as f64;
        (0..m)
            .map(|j| {
                let a = self.at(j);
                let b = self.at((j + 1) % m);
                a.iter().zip(b).map(|(x, y)| (y - x).powi(2)).sum::<f64>() / h
            })
            .sum()
    }

    pub fn minus(&self, other: &Self) -> Self {
        Self { dim: self.dim, values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect() }
    }
}

#[derive(Debug, Clone)]
pub struct CollarResult {
    pub rho: f64,
    /// The interpolating map on the annulus `R - ρ ≤ r ≤ R` in log-polar coordinates.
    pub map: DiscreteMap,
    /// `∫ |∇w|²` over the annulus.
    pub dirichlet_integral: f64,
    /// `(R ∫(|f'|²+|g'|²))^{1/2} (R ∫|f'-g'|²)^{1/2}`; the lemma bounds the integral by 17√2 times this.
    pub bound_core: f64,
}

impl CollarResult {
    pub fn ratio(&self) -> f64 {
        if self.bound_core > 0.0 {
            self.dirichlet_integral / self.bound_core
        } else {
            0.0
        }
    }
}

/// Interpolates between two boundary traces on a thin annulus inside `∂B_R`
/// by a straight line in the ambient space followed by projection.
pub fn collar_interpolate(f: &Trace, g: &Trace, radius: f64, target: Arc<EmbeddedManifold>, radial_levels: usize) -> Result<CollarResult, DmapError> {
    if f.dim != target.ambient_dim || g.dim != f.dim || f.len() != g.len() || f.len() < 4 {
        return Err(DmapError::InvalidArgument("traces must share length and ambient dimension".into()));
    }
    let m = f.len();
    let common = (0..m).any(|j| f.at(j).iter().zip(g.at(j)).all(|(a, b)| (a - b).abs() <= 1e-12));
    if !common {
        return Err(DmapError::NoCommonPoint);
    }
    // With θ-derivatives, R ∫_{∂B_R} |f'|² ds = ∫ |∂_θ f|² dθ.
    let diff = f.minus(g).derivative_energy();
    let sum = f.derivative_energy() + g.derivative_energy();
    let tau = target.safe_tubular_radius / (2.0 * PI).sqrt();
    if diff > tau * tau {
        return Err(DmapError::TraceTooFar { value: diff, limit: tau * tau });
    }
    let rho1 = if sum > 0.0 { (diff / (8.0 * sum)).sqrt() } else { 0.0 };
    let rho = (rho1 * radius).clamp(1e-9 * radius, 0.5 * radius);
    let levels = radial_levels.max(3);
    let dom = Arc::new(Domain::cylinder((radius - rho).ln(), radius.ln(), levels, m)?);
    let d = f.dim;
    let mut values = vec![0.0; d * dom.num_nodes()];
    let mut buf = vec![0.0; d];
    for k in 0..levels {
        for j in 0..m {
            let node = k * m + j;
            let out = &mut values[node * d..(node + 1) * d];
            if k == 0 {
                out.copy_from_slice(f.at(j));
            } else if k == levels - 1 {
                out.copy_from_slice(g.at(j));
            } else {
                let r = dom.nodes[node].coord[0].exp();
                let s = (r + rho - radius) / rho;
                for c in 0..d {
                    buf[c] = f.at(j)[c] + s * (g.at(j)[c] - f.at(j)[c]);
                }
                target.project_into(&buf, out).map_err(DmapError::TubeEscape)?;
            }
        }
    }
    let map = DiscreteMap::from_values(dom, target, values)?;
    let dirichlet_integral = 2.0 * map.energy(None);
    Ok(CollarResult { rho, map, dirichlet_integral, bound_core: sum.sqrt() * diff.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmap::{DiscreteMap, CHART_N};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(n: usize) -> Arc<Domain> {
        Arc::new(Domain::sphere(n).unwrap())
    }

    #[test]
    fn mollifier_rule_has_unit_mass_and_zero_mean() {
        let r = mollifier_rule();
        let m: f64 = r.iter().map(|p| p.1).sum();
        assert!((m - 1.0).abs() < 1e-14);
        for c in 0..3 {
            let mean: f64 = r.iter().map(|p| p.0[c] * p.1).sum();
            assert!(mean.abs() < 1e-14);
        }
    }

    #[test]
    fn mollify_constant_is_constant() {
        let d = sphere(33);
        let t = Arc::new(EmbeddedManifold::unit_sphere(2));
        let u = DiscreteMap::constant(d, t, &[0.0, 0.6, 0.8]).unwrap();
        for r in [0.05, 0.2, 0.5] {
            let v = mollify(&u, r).unwrap();
            assert!(v.c0_distance(&u).unwrap() < 1e-15);
        }
    }

    #[test]
    fn mollify_identity_is_close() {
        let d = sphere(129);
        let u = DiscreteMap::identity(d).unwrap();
        let v = mollify(&u, 0.05).unwrap();
        let e = v.energy(None);
        assert!((e - 4.0 * PI).abs() < 0.01 * 4.0 * PI, "{e}");
        assert!(v.c0_distance(&u).unwrap() < 0.01);
    }

    #[test]
    fn mollify_distance_shrinks_with_radius() {
        let d = sphere(65);
        let t = Arc::new(EmbeddedManifold::unit_sphere(2));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<f64> = (0..3 * d.num_nodes()).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let u = DiscreteMap::from_fn(d.clone(), t, |i| {
            let p = d.sphere_pts[i];
            vec![p[0] + noise[3 * i], p[1] + noise[3 * i + 1], p[2] + noise[3 * i + 2]]
        })
        .unwrap();
        let mut prev = f64::INFINITY;
        for r in [0.2, 0.1, 0.05] {
            let v = mollify(&u, r).unwrap();
            let dist = v.gradient_distance_sq(&u, None).unwrap().sqrt() + v.c0_distance(&u).unwrap();
            assert!(dist < prev, "r={r}: {dist} vs {prev}");
            prev = dist;
        }
    }

    #[test]
    fn mollify_reports_tube_escape() {
        let d = sphere(17);
        let u = DiscreteMap::identity(d).unwrap();
        // Averaging over most of the sphere collapses the values toward the origin.
        assert!(matches!(mollify(&u, 0.99), Err(DmapError::TubeEscape(_)) | Ok(_)));
    }

    #[test]
    fn dilation_of_southern_hemisphere_is_identity() {
        let b = Ball::new(CHART_S, [0.0, 0.0], 1.0);
        let dl = conformal_dilation(&b);
        assert!((dl.lambda - 1.0).abs() < 1e-12);
        for p in [[0.0, 0.0, -1.0], [0.6, 0.0, 0.8], [0.0, -0.28, 0.96]] {
            let q = dl.apply(p);
            assert!(sub3(q, p).iter().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn dilation_factor_matches_stereographic_closed_form() {
        for r in [0.1, 0.5, 1.0, 1.5] {
            let b = Ball::from_cap(CHART_N, normalize3([1.0, 1.0, 0.5]), r).unwrap();
            let dl = conformal_dilation(&b);
            assert!((dl.lambda - (PI / 4.0).tan() / (r / 2.0).tan()).abs() < 1e-10);
            // The cap boundary lands on the equator; the center on the south pole.
            let (q, a) = cap_of_ball(&b);
            let c = dl.apply(q);
            assert!((c[2] + 1.0).abs() < 1e-10);
            let edge = dl.apply(mat_t_vec(&rotation_between(q, [0.0, 0.0, -1.0]), [a.sin(), 0.0, -a.cos()]));
            assert!(edge[2].abs() < 1e-10);
            let back = dl.apply_inverse(c);
            assert!(sub3(back, q).iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn dilated_identity_keeps_energy_and_stays_conformal() {
        let d = sphere(129);
        let u = DiscreteMap::identity(d).unwrap();
        let e0 = u.energy(None);
        for alpha in [1.2, 0.8, 0.5] {
            let b = Ball::from_cap(CHART_S, normalize3([0.3, 0.1, -1.0]), alpha).unwrap();
            let dl = conformal_dilation(&b);
            let v = compose_with_sphere_map(&u, |x| dl.apply_inverse(x)).unwrap();
            let e = v.energy(None);
            assert!((e - e0).abs() < 0.01 * e0, "alpha={alpha}: {e} vs {e0}");
            let ratio = v.conformality_defect() / e;
            // The undilated identity already sits near 1% from P1 chord effects.
            assert!(ratio < 0.05, "alpha={alpha}: {ratio}");
        }
    }

    fn great_circle(m: usize, rot: f64) -> Trace {
        // Unit-speed great circle through (1,0,0), rotated by `rot` about the x-axis.
        Trace::from_fn(3, m, |t| vec![t.cos(), t.sin() * rot.cos(), t.sin() * rot.sin()])
    }

    #[test]
    fn collar_equal_traces() {
        let f = great_circle(64, 0.0);
        let res = collar_interpolate(&f, &f, 1.0, Arc::new(EmbeddedManifold::unit_sphere(2)), 9).unwrap();
        assert!(res.rho <= 1e-8);
        assert!(res.dirichlet_integral < 1e-6);
    }

    #[test]
    fn collar_rotated_circle() {
        let f = great_circle(128, 0.0);
        let g = great_circle(128, 0.01);
        let t = Arc::new(EmbeddedManifold::unit_sphere(2));
        let res = collar_interpolate(&f, &g, 1.0, t, 17).unwrap();
        let m = f.len();
        let n = res.map.domain.num_nodes();
        for j in 0..m {
            assert_eq!(res.map.value(j), f.at(j));
            assert_eq!(res.map.value(n - m + j), g.at(j));
        }
        assert!(res.rho > 0.0 && res.rho <= 0.5);
        assert!(res.ratio() < 17.0 * 2f64.sqrt());
    }

    #[test]
    fn collar_rejects_far_traces() {
        let f = great_circle(64, 0.0);
        let g = Trace::new(3, f.values.iter().map(|v| -v).collect());
        let mut g2 = g.clone();
        g2.values[..3].copy_from_slice(f.at(0));
        let t = Arc::new(EmbeddedManifold::unit_sphere(2));
        assert!(matches!(collar_interpolate(&f, &g, 1.0, t.clone(), 9), Err(DmapError::NoCommonPoint)));
        assert!(matches!(collar_interpolate(&f, &g2, 1.0, t, 9), Err(DmapError::TraceTooFar { .. })));
    }
}
