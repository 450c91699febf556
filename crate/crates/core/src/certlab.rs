//! Numerical certificates for the analytic inequalities behind the
//! tightening argument: Wente/Hardy on the disk, the ODE comparison lemma,
//! θ-energy growth and decay on cylinders, Hopf constancy and Wirtinger.
//!
//! Every suite is deterministic in its seed. Instance `i` draws from the
//! ChaCha stream `i`, so reports do not depend on the worker count.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{self, DirichletError, SolverSettings};
use crate::dmap::{collar_interpolate, DiscreteMap, DmapError, Domain, DomainKind, MeshError, Trace};
use crate::manifold::EmbeddedManifold;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("precondition failed: {0}")]
    PreconditionFail(String),
    #[error("trace vanishes nowhere")]
    NoZero,
    #[error("map is not defined on a cylinder")]
    NotCylinder,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Dmap(#[from] DmapError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Small-energy gate for the θ-energy decay check.
pub const DEFAULT_EPS2: f64 = 0.5;

/// Outcome of one certificate suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub seed: u64,
    pub instances: usize,
    /// Instances dropped because their hypotheses failed.
    pub skipped: usize,
    /// Smallest normalized `LHS - RHS` over all instances.
    pub worst_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Suite-specific measurements.
    #[serde(default)]
    pub notes: BTreeMap<String, f64>,
}

impl CertificateReport {
    fn new(name: &str, seed: u64, instances: usize, skipped: usize, worst_margin: f64, tolerance: f64) -> Self {
        let pass = instances > 0 && worst_margin >= -tolerance;
        Self { name: name.into(), seed, instances, skipped, worst_margin, tolerance, pass, notes: BTreeMap::new() }
    }

    fn note(mut self, key: &str, v: f64) -> Self {
        self.notes.insert(key.into(), v);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs `f` on `0..n` with up to `jobs` threads; results come back in index order.
pub fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(&f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(jobs);
    std::thread::scope(|sc| {
        for (c, slot) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            sc.spawn(move || {
                for (k, s) in slot.iter_mut().enumerate() {
                    *s = Some(f(c * chunk + k));
                }
            });
        }
    });
    out.into_iter().map(|x| x.expect("filled")).collect()
}

fn instance_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64);
    r
}

// ---------------------------------------------------------------------------
// Wente/Hardy on the unit disk

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre01(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

/// `h = (1 - r²) (c₀ + Σ_m r^m (a_m cos mθ + b_m sin mθ))`, vanishing on the unit circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskField {
    pub c0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl DiskField {
    /// `(h, h_r, h_θ / r)`.
    fn eval(&self, r: f64, th: f64) -> (f64, f64, f64) {
        let (mut p, mut pr, mut pt) = (self.c0, 0.0, 0.0);
        for (k, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let m = (k + 1) as f64;
            let (c, s) = ((m * th).cos(), (m * th).sin());
            let tr = a * c + b * s;
            let rm1 = r.powi(k as i32);
            p += r * rm1 * tr;
            pr += m * rm1 * tr;
            pt += rm1 * m * (b * c - a * s);
        }
        let w = 1.0 - r * r;
        (w * p, -2.0 * r * p + w * pr, w * pt)
    }
}

/// `8 (∫|∇h|²)(∫|ζ|²)` and `∫ h²|ζ|²` over the unit disk for `ζ = Σ a_k z^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WenteMargin {
    pub lhs: f64,
    pub rhs: f64,
    pub grad_h: f64,
    pub zeta_l2: f64,
}

impl WenteMargin {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
    pub fn normalized(&self) -> f64 {
        if self.rhs > 0.0 {
            self.margin() / self.rhs
        } else {
            0.0
        }
    }
}

/// Polar tensor quadrature, exact for the polynomial degrees used by the suite.
pub fn wente_hardy_check(zeta: &[Complex64], h: &DiskField) -> WenteMargin {
    let deg = zeta.len() + h.cos.len().max(h.sin.len()) + 4;
    let gl = gauss_legendre01(deg + 4);
    let n_th = 4 * deg + 8;
    let (mut lhs, mut gh, mut zl) = (0.0, 0.0, 0.0);
    for &(r, wr) in &gl {
        for j in 0..n_th {
            let th = 2.0 * PI * j as f64 / n_th as f64;
            let w = wr * r * 2.0 * PI / n_th as f64;
            let z = Complex64::from_polar(r, th);
            let mut zk = Complex64::new(1.0, 0.0);
            let mut zv = Complex64::new(0.0, 0.0);
            for a in zeta {
                zv += a * zk;
                zk *= z;
            }
            let (hv, hr, ht) = h.eval(r, th);
            let z2 = zv.norm_sqr();
            lhs += w * hv * hv * z2;
            gh += w * (hr * hr + ht * ht);
            zl += w * z2;
        }
    }
    WenteMargin { lhs, rhs: 8.0 * gh * zl, grad_h: gh, zeta_l2: zl }
}

pub fn wente_suite(seed: u64, n: usize, jobs: usize) -> CertificateReport {
    let ms = par_map(n, jobs, |i| {
        let mut rng = instance_rng(seed, i);
        let k = rng.gen_range(0..=6);
        let zeta: Vec<Complex64> = (0..=k).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let m = rng.gen_range(0..=4);
        let h = DiskField {
            c0: rng.gen_range(-1.0..1.0),
            cos: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            sin: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        wente_hardy_check(&zeta, &h)
    });
    let worst = ms.iter().map(|m| m.normalized()).fold(f64::INFINITY, f64::min);
    let max_ratio = ms.iter().map(|m| if m.rhs > 0.0 { 8.0 * m.lhs / m.rhs } else { 0.0 }).fold(0.0, f64::max);
    let closed = wente_hardy_check(&[Complex64::new(1.0, 0.0)], &DiskField { c0: 1.0, cos: vec![], sin: vec![] });
    CertificateReport::new("wente", seed, n, 0, worst, 1e-8)
        .note("closed_form_ratio", closed.lhs / (closed.grad_h * closed.zeta_l2))
        .note("max_ratio", max_ratio)
}

// ---------------------------------------------------------------------------
// ODE comparison

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeMargin {
    pub integral: f64,
    pub bound: f64,
}

impl OdeMargin {
    pub fn margin(&self) -> f64 {
        self.integral - self.bound
    }
}

/// `f` sampled at `N` (odd) equispaced points of `[-2ℓ, 2ℓ]`. Checks
/// `f'' ≥ f - a` by centered differences (tolerance `h² max|f|`) and
/// `max_{[-ℓ,ℓ]} f ≥ 2a`, then compares `∫f` with `2√2 a sinh(ℓ/√2)`.
pub fn ode_comparison_check(f: &[f64], a: f64, ell: f64) -> Result<OdeMargin, CertError> {
    let n = f.len();
    if n < 5 || n % 2 == 0 || !(ell > 0.0) {
        return Err(CertError::InvalidArgument("need an odd number (>= 5) of samples and ell > 0".into()));
    }
    let h = 4.0 * ell / (n - 1) as f64;
    let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = h * h * fmax.max(1.0);
    for i in 1..n - 1 {
        let d2 = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (h * h);
        if d2 < f[i] - a - tol {
            return Err(CertError::PreconditionFail(format!("f'' < f - a at sample {i} ({d2} vs {})", f[i] - a)));
        }
    }
    let inner = f.iter().enumerate().filter(|(i, _)| (-2.0 * ell + *i as f64 * h).abs() <= ell + 1e-12).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    if inner < 2.0 * a {
        return Err(CertError::PreconditionFail(format!("max over [-l, l] is {inner} < 2a = {}", 2.0 * a)));
    }
    let mut s = f[0] + f[n - 1];
    for (i, v) in f.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    Ok(OdeMargin { integral: s * h / 3.0, bound: 2.0 * SQRT_2 * a * (ell / SQRT_2).sinh() })
}

/// Samples `g` at `n` points of `[-2ℓ, 2ℓ]`.
pub fn sample_interval(ell: f64, n: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let h = 4.0 * ell / (n - 1) as f64;
    (0..n).map(|i| g(-2.0 * ell + i as f64 * h)).collect()
}

/// Draws `f = a + c cosh(t - t₀) + d cosh(k (t - t₁))` with `k ≥ 1`, which
/// satisfies `f'' ≥ f - a`; draws failing the max condition are skipped.
pub fn ode_suite(seed: u64, n: usize, jobs: usize) -> CertificateReport {
    let res = par_map(n, jobs, |i| {
        let mut rng = instance_rng(seed, i);
        let a = rng.gen_range(0.0..2.0);
        let ell = rng.gen_range(0.5..3.0);
        let t0 = rng.gen_range(-ell..ell);
        let c = rng.gen_range(0.5 * a..a + 3.0);
        let d = rng.gen_range(0.0..1.0);
        let k = rng.gen_range(1.0..2.0);
        let t1 = rng.gen_range(-2.0 * ell..2.0 * ell);
        let f = sample_interval(ell, 4001, |t| a + c * (t - t0).cosh() + d * (k * (t - t1)).cosh());
        ode_comparison_check(&f, a, ell)
    });
    let mut worst = f64::INFINITY;
    let (mut ok, mut skipped) = (0, 0);
    for r in &res {
        match r {
            Ok(m) => {
                worst = worst.min(m.margin());
                ok += 1;
            }
            Err(_) => skipped += 1,
        }
    }
    let f = sample_interval(1.0, 4001, |t| 1.0 + t.cosh());
    let closed = ode_comparison_check(&f, 1.0, 1.0).expect("closed-form instance satisfies the hypotheses");
    CertificateReport::new("ode", seed, ok, skipped, worst, 1e-6).note("closed_form_integral", closed.integral).note("closed_form_bound", closed.bound)
}

// ---------------------------------------------------------------------------
// Cylinder maps

fn cylinder_dims(u: &DiscreteMap) -> Result<(f64, f64, usize, usize), CertError> {
    match u.domain.kind {
        DomainKind::Cylinder { t0, t1, n_t, n_theta } => Ok((t0, t1, n_t, n_theta)),
        _ => Err(CertError::NotCylinder),
    }
}

/// Harmonic map on `[t0, t1] × S¹` with the given end traces: ambient linear
/// interpolation projected to the target, then an interior solve.
#[allow(clippy::too_many_arguments)]
pub fn cylinder_harmonic(
    t0: f64,
    t1: f64,
    n_t: usize,
    n_theta: usize,
    target: Arc<EmbeddedManifold>,
    left: impl Fn(f64) -> Vec<f64>,
    right: impl Fn(f64) -> Vec<f64>,
    s: &SolverSettings,
) -> Result<DiscreteMap, CertError> {
    let dom = Arc::new(Domain::cylinder(t0, t1, n_t, n_theta)?);
    let d = target.ambient_dim;
    let mut values = vec![0.0; d * dom.num_nodes()];
    let mut buf = vec![0.0; d];
    for k in 0..n_t {
        let s_t = k as f64 / (n_t - 1) as f64;
        for j in 0..n_theta {
            let th = dom.nodes[k * n_theta + j].coord[1];
            let (l, r) = (left(th), right(th));
            for c in 0..d {
                buf[c] = (1.0 - s_t) * l[c] + s_t * r[c];
            }
            target.project_into(&buf, &mut values[(k * n_theta + j) * d..(k * n_theta + j + 1) * d]).map_err(DmapError::TubeEscape)?;
        }
    }
    let u = DiscreteMap::from_values(dom, target, values)?;
    let sol = dirichlet::solve_interior(u, s)?.require_converged()?;
    Ok(sol.map)
}

fn sqnorm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `∫_t |u_θ|² dθ` at each node level, exact for the piecewise linear trace.
fn theta_energy_levels(u: &DiscreteMap, n_t: usize, n_theta: usize) -> Vec<f64> {
    let hth = 2.0 * PI / n_theta as f64;
    (0..n_t).map(|k| (0..n_theta).map(|j| sqnorm(u.value(k * n_theta + (j + 1) % n_theta), u.value(k * n_theta + j)) / hth).sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfReport {
    /// Half levels `t_{k+½}`.
    pub t: Vec<f64>,
    pub c: Vec<f64>,
    pub mean: f64,
    pub max_deviation: f64,
    /// Largest `∫_t (|u_t|² + |u_θ|²)`.
    pub scale: f64,
    /// `max |∂̄φ| / max |φ|` over interior cells.
    pub dbar_residual: f64,
}

/// `c(t) = ∫_t (|u_t|² - |u_θ|²)` on every strip between node levels and the
/// cell values of the Hopf field `φ = |u_t|² - |u_θ|² - 2i<u_t, u_θ>`.
///
/// The strip value pairs the θ-differences of the two bounding levels,
/// `|D_t u|² - <D_θ u_k, D_θ u_{k+1}>`: the discrete Noether charge of the
/// five-point energy, exactly conserved for discrete harmonic functions.
pub fn hopf_constancy(u: &DiscreteMap) -> Result<HopfReport, CertError> {
    let (t0, t1, n_t, n_theta) = cylinder_dims(u)?;
    let ht = (t1 - t0) / (n_t - 1) as f64;
    let hth = 2.0 * PI / n_theta as f64;
    let d = u.dim();
    let mut phi = vec![Complex64::new(0.0, 0.0); (n_t - 1) * n_theta];
    let (mut t, mut c, mut scale_v) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..n_t - 1 {
        let (mut ck, mut sk) = (0.0, 0.0);
        for j in 0..n_theta {
            let mut cell = Complex64::new(0.0, 0.0);
            for tri in [2 * (k * n_theta + j), 2 * (k * n_theta + j) + 1] {
                let (ut, uth) = u.tri_gradient(tri);
                let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
                for i in 0..d {
                    p += ut[i] * ut[i];
                    q += uth[i] * uth[i];
                    r += ut[i] * uth[i];
                }
                cell += 0.5 * Complex64::new(p - q, -2.0 * r);
                sk += 0.5 * (p + q) * hth;
            }
            phi[k * n_theta + j] = cell;
            let (a, b) = (u.value(k * n_theta + j), u.value((k + 1) * n_theta + j));
            let (a1, b1) = (u.value(k * n_theta + (j + 1) % n_theta), u.value((k + 1) * n_theta + (j + 1) % n_theta));
            let mut cross = 0.0;
            for i in 0..d {
                cross += (a1[i] - a[i]) * (b1[i] - b[i]);
            }
            ck += (sqnorm(b, a) / (ht * ht) - cross / (hth * hth)) * hth;
        }
        t.push(t0 + (k as f64 + 0.5) * ht);
        c.push(ck);
        scale_v.push(sk);
    }
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    let max_deviation = c.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    let scale = scale_v.iter().fold(0.0f64, |m, v| m.max(*v));
    let phimax = phi.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let mut dbar: f64 = 0.0;
    for k in 1..n_t.saturating_sub(2) {
        for j in 0..n_theta {
            let at = |kk: usize, jj: usize| phi[kk * n_theta + jj % n_theta];
            let dt = (at(k + 1, j) - at(k - 1, j)) / (2.0 * ht);
            let dth = (at(k, j + 1) - at(k, j + n_theta - 1)) / (2.0 * hth);
            dbar = dbar.max((0.5 * (dt + Complex64::i() * dth)).norm());
        }
    }
    let dbar_residual = if phimax > 0.0 { dbar / phimax } else { 0.0 };
    Ok(HopfReport { t, c, mean, max_deviation, scale, dbar_residual })
}

/// Small-energy harmonic map into the unit sphere on `[0, π/2] × S¹` with
/// `n_theta / 4 + 1` levels (square cells).
pub fn hopf_fixture(n_theta: usize, s: &SolverSettings) -> Result<DiscreteMap, CertError> {
    let target = Arc::new(EmbeddedManifold::unit_sphere(2));
    cylinder_harmonic(
        0.0,
        PI / 2.0,
        n_theta / 4 + 1,
        n_theta,
        target,
        |th| vec![0.15 * th.cos(), 0.15 * th.sin(), 1.0],
        |th| vec![0.4 + 0.1 * th.cos(), 0.1 * th.sin() + 0.05 * (2.0 * th).sin(), 1.0],
        s,
    )
}

fn exact_settings() -> SolverSettings {
    SolverSettings { residual_tol: 1e-11, max_sweeps: 200_000, eps1: f64::MAX, ..SolverSettings::default() }
}

/// Hopf constancy on the fixture at `n_theta ∈ {32, 64, 128}`; passes when
/// the finest deviation is at most `1e-4` of the scale and the observed
/// order between successive grids is at least 1.5.
pub fn hopf_suite(seed: u64, jobs: usize) -> Result<CertificateReport, CertError> {
    let ns = [32usize, 64, 128];
    let s = exact_settings();
    let reps = par_map(ns.len(), jobs, |i| hopf_fixture(ns[i], &s).and_then(|u| hopf_constancy(&u)));
    let reps: Vec<HopfReport> = reps.into_iter().collect::<Result<_, _>>()?;
    let rel: Vec<f64> = reps.iter().map(|r| r.max_deviation / r.scale).collect();
    let orders: Vec<f64> = rel.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut rep = CertificateReport::new("hopf", seed, ns.len(), 0, -rel[2], 1e-4);
    rep.pass &= min_order >= 1.5;
    for (n, (r, h)) in ns.iter().zip(rel.iter().zip(&reps)) {
        rep = rep.note(&format!("deviation_n{n}"), *r).note(&format!("dbar_n{n}"), h.dbar_residual);
    }
    Ok(rep.note("min_order", min_order).note("mean_c", reps[2].mean))
}

// ---------------------------------------------------------------------------
// θ-energy profile and decay

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileLevel {
    pub t: f64,
    pub f: f64,
    pub f_tt: f64,
    /// `(3/2) f - 2 sup|A|² ∫_t |∇u|⁴`.
    pub rhs: f64,
}

impl ProfileLevel {
    pub fn margin(&self) -> f64 {
        self.f_tt - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaProfile {
    pub levels: Vec<ProfileLevel>,
    /// `max_k (|f_tt| + |rhs|)`, the normalization of [`Self::worst_normalized`].
    pub scale: f64,
}

impl ThetaProfile {
    pub fn worst_normalized(&self) -> f64 {
        let w = self.levels.iter().map(|l| l.margin()).fold(f64::INFINITY, f64::min);
        if self.scale > 0.0 {
            w / self.scale
        } else {
            w.min(0.0)
        }
    }
}

/// `f(t) = ∫_t |u_θ|²` at interior node levels with centered `∂_t² f` and the
/// right side of the differential inequality; `|∇u|²` at a node uses centered
/// differences in both directions.
pub fn theta_energy_profile(u: &DiscreteMap) -> Result<ThetaProfile, CertError> {
    let (t0, t1, n_t, n_theta) = cylinder_dims(u)?;
    if n_t < 3 {
        return Err(CertError::InvalidArgument("need at least three levels".into()));
    }
    let ht = (t1 - t0) / (n_t - 1) as f64;
    let hth = 2.0 * PI / n_theta as f64;
    let a2 = u.target.sff_bound.powi(2);
    let f = theta_energy_levels(u, n_t, n_theta);
    let id = |k: usize, j: usize| k * n_theta + j % n_theta;
    let mut levels = Vec::new();
    let mut scale: f64 = 0.0;
    for k in 1..n_t - 1 {
        let mut g4 = 0.0;
        for j in 0..n_theta {
            let g = sqnorm(u.value(id(k + 1, j)), u.value(id(k - 1, j))) / (4.0 * ht * ht)
                + sqnorm(u.value(id(k, j + 1)), u.value(id(k, j + n_theta - 1))) / (4.0 * hth * hth);
            g4 += g * g * hth;
        }
        let f_tt = (f[k + 1] - 2.0 * f[k] + f[k - 1]) / (ht * ht);
        let rhs = 1.5 * f[k] - 2.0 * a2 * g4;
        scale = scale.max(f_tt.abs() + rhs.abs());
        levels.push(ProfileLevel { t: t0 + k as f64 * ht, f: f[k], f_tt, rhs });
    }
    Ok(ThetaProfile { levels, scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayResult {
    pub ell: f64,
    pub energy: f64,
    /// `∫_{[-ℓ,ℓ]} |u_θ|² / ∫_{[-2ℓ,2ℓ]} |∇u|²`; `None` when excluded.
    pub ratio: Option<f64>,
    /// `E(u) > ε₂`: the instance is outside the hypothesis.
    pub excluded: bool,
    pub pass: bool,
}

/// Compares the two integrals over strips whose triangles have centroids in
/// the respective bands. The map must live on a cylinder covering `[-2ℓ, 2ℓ]`.
pub fn theta_energy_decay_check(u: &DiscreteMap, ell: f64, delta: f64, eps2: f64) -> Result<DecayResult, CertError> {
    let (t0, t1, _, _) = cylinder_dims(u)?;
    if !(ell > 0.0) || t0 > -2.0 * ell + 1e-12 || t1 < 2.0 * ell - 1e-12 {
        return Err(CertError::InvalidArgument(format!("cylinder [{t0}, {t1}] does not cover [-2l, 2l] for l = {ell}")));
    }
    let energy = u.energy(None);
    if energy > eps2 {
        return Ok(DecayResult { ell, energy, ratio: None, excluded: true, pass: false });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (ti, tr) in u.domain.tris.iter().enumerate() {
        let tc = tr.centroid[0];
        let form = u.tri_form(ti);
        if tc.abs() < ell {
            num += form.q * form.area;
        }
        if tc.abs() < 2.0 * ell {
            den += (form.p + form.q) * form.area;
        }
    }
    let ratio = if den > 0.0 { num / den } else { 0.0 };
    Ok(DecayResult { ell, energy, ratio: Some(ratio), excluded: false, pass: ratio < delta })
}

/// Harmonic map on `[-3ℓ, 3ℓ] × S¹` into the unit sphere with end traces
/// `Π(±amp cos θ, amp sin θ, 1)`, about ten levels per unit length.
pub fn decay_fixture(ell: f64, amp: f64, n_theta: usize, s: &SolverSettings) -> Result<DiscreteMap, CertError> {
    let target = Arc::new(EmbeddedManifold::unit_sphere(2));
    let n_t = (60.0 * ell).round() as usize + 1;
    cylinder_harmonic(
        -3.0 * ell,
        3.0 * ell,
        n_t,
        n_theta,
        target,
        |th| vec![amp * th.cos(), amp * th.sin(), 1.0],
        |th| vec![-amp * th.cos(), amp * th.sin(), 1.0],
        s,
    )
}

/// One row of the `(ε₂, ℓ)` scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayScanRow {
    pub eps2: f64,
    /// Smallest tested `ℓ` at which every admitted instance passes.
    pub ell: Option<f64>,
    pub admitted: usize,
}

/// Scans dyadic `ε₂` against the tested `ℓ` values; amplitudes sweep the
/// energy range. Constants are measured, not certified.
pub fn decay_scan(ells: &[f64], amps: &[f64], eps2s: &[f64], delta: f64, jobs: usize) -> Result<(Vec<DecayResult>, Vec<DecayScanRow>), CertError> {
    let s = SolverSettings { residual_tol: 1e-10, max_sweeps: 200_000, eps1: f64::MAX, ..SolverSettings::default() };
    let cases: Vec<(f64, f64)> = ells.iter().flat_map(|&l| amps.iter().map(move |&a| (l, a))).collect();
    let res = par_map(cases.len(), jobs, |i| {
        let (l, a) = cases[i];
        decay_fixture(l, a, 32, &s).and_then(|u| theta_energy_decay_check(&u, l, delta, f64::INFINITY))
    });
    let res: Vec<DecayResult> = res.into_iter().collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for &e2 in eps2s {
        let admitted: Vec<&DecayResult> = res.iter().filter(|r| r.energy <= e2).collect();
        let ell = ells.iter().cloned().find(|&l| admitted.iter().filter(|r| r.ell == l).all(|r| r.pass));
        rows.push(DecayScanRow { eps2: e2, ell: if admitted.is_empty() { None } else { ell }, admitted: admitted.len() });
    }
    Ok((res, rows))
}

/// θ-energy suite: for each amplitude the decay ratio must drop when `ℓ`
/// doubles, and the differential inequality must hold on a solved sphere map.
/// The `ε₂` scan is recorded in the notes.
pub fn theta_suite(seed: u64, jobs: usize) -> Result<CertificateReport, CertError> {
    let ells = [1.0, 2.0];
    let amps = [0.05, 0.2, 0.4];
    let (res, rows) = decay_scan(&ells, &amps, &[0.0625, 0.125, 0.25, 0.5], 0.05, jobs)?;
    let ratio = |li: usize, ai: usize| res[li * amps.len() + ai].ratio.unwrap_or(f64::NAN);
    // Normalized margin of the decay part: relative drop of the ratio.
    let decay_worst = (0..amps.len()).map(|ai| (ratio(0, ai) - ratio(1, ai)) / ratio(0, ai)).fold(f64::INFINITY, f64::min);
    let prof = theta_energy_profile(&hopf_fixture(64, &exact_settings())?)?;
    let worst = if decay_worst > 0.0 { prof.worst_normalized() } else { decay_worst.min(prof.worst_normalized()) };
    let mut rep = CertificateReport::new("theta", seed, res.len() + 1, 0, worst, 1e-4).note("decay_worst", decay_worst);
    for (li, l) in ells.iter().enumerate() {
        for (ai, a) in amps.iter().enumerate() {
            rep = rep.note(&format!("ratio_l{l}_a{a}"), ratio(li, ai));
        }
    }
    for row in rows {
        rep = rep.note(&format!("eps2_{}_ell", row.eps2), row.ell.unwrap_or(f64::NAN));
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Wirtinger

/// `4∫|f'|² - ∫|f|²` with both integrals from the discrete Fourier
/// coefficients (exact for trigonometric polynomials below the Nyquist degree).
pub fn wirtinger_check(f: &Trace) -> Result<f64, CertError> {
    let m = f.len();
    if m < 3 {
        return Err(CertError::InvalidArgument("trace needs at least three samples".into()));
    }
    let fmax = f.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let zero_tol = 1e-12 * fmax.max(1.0);
    if !(0..m).any(|j| f.at(j).iter().map(|v| v * v).sum::<f64>().sqrt() <= zero_tol) {
        return Err(CertError::NoZero);
    }
    let (mut l2, mut d2) = (0.0, 0.0);
    for c in 0..f.dim {
        for k in 0..m {
            let kk = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
            let mut z = Complex64::new(0.0, 0.0);
            for j in 0..m {
                z += f.at(j)[c] * Complex64::from_polar(1.0, -2.0 * PI * (k * j % m) as f64 / m as f64);
            }
            let p = z.norm_sqr() / (m * m) as f64 * 2.0 * PI;
            l2 += p;
            d2 += kk * kk * p;
        }
    }
    Ok(4.0 * d2 - l2)
}

/// Random trigonometric polynomials of degree at most 6 in up to three
/// components, shifted to vanish at a random sample.
pub fn wirtinger_suite(seed: u64, n: usize, jobs: usize) -> CertificateReport {
    let m = 64;
    let res = par_map(n, jobs, |i| {
        let mut rng = instance_rng(seed, i);
        let dim = rng.gen_range(1..=3);
        let deg = rng.gen_range(1..=6);
        let coef: Vec<(f64, f64)> = (0..dim * deg).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let eval = |th: f64| -> Vec<f64> {
            (0..dim)
                .map(|c| {
                    (0..deg)
                        .map(|k| {
                            let (a, b) = coef[c * deg + k];
                            a * ((k + 1) as f64 * th).cos() + b * ((k + 1) as f64 * th).sin()
                        })
                        .sum()
                })
                .collect()
        };
        let j0 = rng.gen_range(0..m);
        let base = eval(2.0 * PI * j0 as f64 / m as f64);
        let mut tr = Trace::from_fn(dim, m, |th| eval(th).iter().zip(&base).map(|(x, y)| x - y).collect());
        // Exact zero at the chosen sample, free of rounding.
        for v in &mut tr.values[j0 * dim..(j0 + 1) * dim] {
            *v = 0.0;
        }
        let scale = tr.values.iter().map(|v| v * v).sum::<f64>() * 2.0 * PI / m as f64;
        wirtinger_check(&tr).map(|mg| mg / scale.max(1e-300))
    });
    let worst = res.iter().filter_map(|r| r.as_ref().ok()).cloned().fold(f64::INFINITY, f64::min);
    let skipped = res.iter().filter(|r| r.is_err()).count();
    let sin = wirtinger_check(&Trace::from_fn(1, m, |th| vec![th.sin()])).unwrap_or(f64::NAN);
    CertificateReport::new("wirtinger", seed, n - skipped, skipped, worst, 1e-10).note("sin_margin", sin)
}

// ---------------------------------------------------------------------------
// Convexity and collar suites

/// 100 randomized small-energy replacement instances (uniqueness and
/// convexity) on the sphere at resolution `n`.
pub fn convexity_suite(seed: u64, n: usize) -> Result<CertificateReport, CertError> {
    let dom = Arc::new(Domain::sphere(n)?);
    let cal = dirichlet::calibrate_eps1(dom, &[0.1, 0.2, 0.3, 0.4, 0.5], 5, 2, 1.0, seed)?;
    let instances: usize = cal.rows.iter().map(|r| r.instances).sum();
    let worst = cal.rows.iter().map(|r| r.worst_gap).fold(f64::INFINITY, f64::min);
    let uniq = cal.rows.iter().map(|r| r.worst_uniqueness).fold(0.0, f64::max);
    let rep = CertificateReport::new("convexity", seed, instances, 0, worst, 1e-6);
    Ok(rep.note("worst_uniqueness", uniq))
}

/// Random pairs of closed curves on the unit sphere that agree at `θ = 0`;
/// checks exact end traces and the `17√2` energy ratio.
pub fn collar_suite(seed: u64, n: usize, jobs: usize) -> CertificateReport {
    let m = 64;
    let res = par_map(n, jobs, |i| -> Result<(f64, bool), CertError> {
        let mut rng = instance_rng(seed, i);
        let target = Arc::new(EmbeddedManifold::unit_sphere(2));
        let amp = rng.gen_range(0.05..0.5);
        let (p1, p2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
        let k = rng.gen_range(1..=3) as f64;
        let eps = rng.gen_range(0.001..0.02);
        let q = rng.gen_range(1..=3) as f64;
        let base = move |th: f64| [amp * (th + p1).cos(), amp * (k * th + p2).sin(), 1.0];
        let proj = |x: [f64; 3]| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            vec![x[0] / r, x[1] / r, x[2] / r]
        };
        let f = Trace::from_fn(3, m, |th| proj(base(th)));
        let g = Trace::from_fn(3, m, |th| {
            let b = base(th);
            let w = eps * (q * th / 2.0).sin().powi(2);
            proj([b[0] + w, b[1] - w, b[2]])
        });
        let r = collar_interpolate(&f, &g, 1.0, target, 16)?;
        let (n_t, n_theta) = match r.map.domain.kind {
            DomainKind::Cylinder { n_t, n_theta, .. } => (n_t, n_theta),
            _ => return Err(CertError::NotCylinder),
        };
        let exact = (0..n_theta).all(|j| r.map.value(j) == f.at(j) && r.map.value((n_t - 1) * n_theta + j) == g.at(j));
        Ok((r.ratio(), exact))
    });
    let bound = 17.0 * SQRT_2;
    let mut worst = f64::INFINITY;
    let (mut ok, mut skipped, mut max_ratio) = (0, 0, 0.0f64);
    let mut all_exact = true;
    for r in &res {
        match r {
            Ok((ratio, exact)) => {
                ok += 1;
                all_exact &= *exact;
                max_ratio = max_ratio.max(*ratio);
                worst = worst.min((bound - ratio) / bound);
            }
            Err(_) => skipped += 1,
        }
    }
    let mut rep = CertificateReport::new("collar", seed, ok, skipped, worst, 0.0).note("max_ratio", max_ratio);
    rep.pass &= all_exact;
    rep.note("boundary_exact", if all_exact { 1.0 } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Composite cylinder diagnostic

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCylinder {
    pub k: usize,
    pub energy: f64,
    /// `∫ |u_θ|²` over the unit cylinder.
    pub theta_energy: f64,
    /// Energy drop of the harmonic replacement on the unit cylinder, relative
    /// to its energy; small for almost harmonic pieces.
    pub replacement_gap: f64,
    pub good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeReport {
    pub units: Vec<UnitCylinder>,
    pub theta_good: f64,
    pub energy_good: f64,
    pub energy_bad: f64,
    /// `Σ_good ∫|u_θ|² / Σ ∫|∇u|²`, the measured constant of the aggregated bound.
    pub measured_constant: f64,
}

/// Splits a cylinder map into unit subcylinders `[t0 + k, t0 + k + 1]`; a
/// piece is good when its energy is at most `eps2` and its replacement gap
/// at most `nu`.
pub fn composite_cylinder_diagnostic(u: &DiscreteMap, eps2: f64, nu: f64, s: &SolverSettings) -> Result<CompositeReport, CertError> {
    let (t0, t1, n_t, n_theta) = cylinder_dims(u)?;
    let ht = (t1 - t0) / (n_t - 1) as f64;
    let units_n = ((t1 - t0) + 1e-9).floor() as usize;
    let mut units = Vec::new();
    for k in 0..units_n {
        let (a, b) = (t0 + k as f64, t0 + k as f64 + 1.0);
        let tris: Vec<usize> = (0..u.domain.tris.len()).filter(|&t| (a..b).contains(&u.domain.tris[t].centroid[0])).collect();
        let energy = u.energy_on(&tris);
        let theta_energy: f64 = tris
            .iter()
            .map(|&t| {
                let f = u.tri_form(t);
                f.q * f.area
            })
            .sum();
        let free: Vec<usize> = (0..n_t)
            .filter(|&l| {
                let t = t0 + l as f64 * ht;
                t > a + 1e-9 && t < b - 1e-9 && l > 0 && l < n_t - 1
            })
            .flat_map(|l| (0..n_theta).map(move |j| l * n_theta + j))
            .collect();
        let sol = dirichlet::solve_free(u.clone(), &free, s)?;
        let drop = (sol.energy_before - sol.energy_after).max(0.0);
        let gap = if energy > 0.0 { drop / energy } else { 0.0 };
        units.push(UnitCylinder { k, energy, theta_energy, replacement_gap: gap, good: energy <= eps2 && gap <= nu });
    }
    let theta_good = units.iter().filter(|x| x.good).map(|x| x.theta_energy).sum();
    let energy_good = units.iter().filter(|x| x.good).map(|x| x.energy).sum();
    let energy_bad: f64 = units.iter().filter(|x| !x.good).map(|x| x.energy).sum();
    let total = 2.0 * (energy_good + energy_bad);
    let measured_constant = if total > 0.0 { theta_good / total } else { 0.0 };
    Ok(CompositeReport { units, theta_good, energy_good, energy_bad, measured_constant })
}

// ---------------------------------------------------------------------------
// Hardy-type bound for small-energy harmonic maps of the disk

/// `∫ h²|∇v|² / (∫|∇h|² ∫|∇v|²)` for one harmonic disk map `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicHardy {
    pub weighted: f64,
    pub grad_h: f64,
    pub dirichlet: f64,
}

impl HarmonicHardy {
    pub fn ratio(&self) -> f64 {
        if self.grad_h * self.dirichlet > 0.0 {
            self.weighted / (self.grad_h * self.dirichlet)
        } else {
            0.0
        }
    }
}

/// `h` is integrated exactly against the piecewise constant `|∇v|²` by the
/// edge-midpoint rule per triangle (exact for quadratics, accurate enough for
/// the low degrees used here); `∫|∇h|²` uses the polar quadrature.
pub fn harmonic_hardy_ratio(v: &DiscreteMap, h: &DiskField) -> Result<HarmonicHardy, CertError> {
    if !matches!(v.domain.kind, DomainKind::Disk { radius, .. } if radius == 1.0) {
        return Err(CertError::InvalidArgument("needs a map on the unit disk".into()));
    }
    let d = v.dim();
    let mut weighted = 0.0;
    for (t, tr) in v.domain.tris.iter().enumerate() {
        let (ux, uy) = v.tri_gradient(t);
        let g2: f64 = (0..d).map(|c| ux[c] * ux[c] + uy[c] * uy[c]).sum();
        let mut hh = 0.0;
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let x = 0.5 * (tr.p[a][0] + tr.p[b][0]);
            let y = 0.5 * (tr.p[a][1] + tr.p[b][1]);
            let hv = h.eval(x.hypot(y).min(1.0), y.atan2(x)).0;
            hh += hv * hv / 3.0;
        }
        weighted += tr.area * g2 * hh;
    }
    let grad_h = wente_hardy_check(&[Complex64::new(1.0, 0.0)], h).grad_h;
    Ok(HarmonicHardy { weighted, grad_h, dirichlet: 2.0 * v.energy(None) })
}

/// Harmonic map of the unit disk into `S²` with boundary values
/// `Π(amp·p(x, y), 1)` for a random affine-plus-quadratic `p`, solved to the
/// exact-solve tolerance. The interior starts from the same formula.
pub fn harmonic_disk_map(n: usize, amp: f64, rng: &mut ChaCha8Rng, s: &SolverSettings) -> Result<DiscreteMap, CertError> {
    let dom = Arc::new(Domain::disk(1.0, n)?);
    let target = Arc::new(EmbeddedManifold::unit_sphere(2));
    let k: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut values = vec![0.0; 3 * dom.num_nodes()];
    for (i, nd) in dom.nodes.iter().enumerate() {
        let [x, y] = nd.coord;
        let q = [x, y, x * x - y * y, x * y, 1.0];
        let px: f64 = (0..5).map(|m| k[m] * q[m]).sum();
        let py: f64 = (0..5).map(|m| k[5 + m] * q[m]).sum();
        target.project_into(&[amp * px, amp * py, 1.0], &mut values[3 * i..3 * i + 3]).map_err(DmapError::TubeEscape)?;
    }
    let u = DiscreteMap::from_values(dom, target, values)?;
    Ok(dirichlet::solve_interior(u, s)?.require_converged()?.map)
}

/// Measures the ratio distribution of the Hardy-type bound for harmonic maps
/// of energy at most `ε₁`. The constant in that bound is not specified, so
/// the suite asserts nothing: `pass` only records that instances ran, and the
/// quantiles in `notes` are the archived result.
pub fn harmonic_hardy_suite(seed: u64, n: usize, jobs: usize) -> Result<CertificateReport, CertError> {
    let s = exact_settings();
    let res = par_map(n, jobs, |i| -> Result<Option<f64>, CertError> {
        let mut rng = instance_rng(seed, i);
        let amp = rng.gen_range(0.05..0.4);
        let v = harmonic_disk_map(33, amp, &mut rng, &s)?;
        if v.energy(None) > dirichlet::DEFAULT_EPS1 {
            return Ok(None);
        }
        let m = rng.gen_range(0..=3);
        let h = DiskField {
            c0: rng.gen_range(-1.0..1.0),
            cos: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            sin: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        Ok(Some(harmonic_hardy_ratio(&v, &h)?.ratio()))
    });
    let res: Vec<Option<f64>> = res.into_iter().collect::<Result<_, _>>()?;
    let mut ratios: Vec<f64> = res.iter().flatten().copied().collect();
    ratios.sort_by(f64::total_cmp);
    let q = |p: f64| ratios.get(((ratios.len() as f64 - 1.0) * p).round() as usize).copied().unwrap_or(f64::NAN);
    Ok(CertificateReport::new("harmonic_hardy", seed, ratios.len(), n - ratios.len(), 0.0, 0.0)
        .note("ratio_median", q(0.5))
        .note("ratio_p90", q(0.9))
        .note("ratio_max", q(1.0)))
}

/// Every suite by name, in the order `verify all` runs them.
pub const SUITES: [&str; 8] = ["wente", "ode", "wirtinger", "hopf", "theta", "convexity", "collar", "harmonic_hardy"];

/// Runs one named suite with its default instance count.
pub fn run_suite(name: &str, seed: u64, jobs: usize) -> Result<CertificateReport, CertError> {
    match name {
        "wente" => Ok(wente_suite(seed, 1000, jobs)),
        "ode" => Ok(ode_suite(seed, 1000, jobs)),
        "wirtinger" => Ok(wirtinger_suite(seed, 1000, jobs)),
        "hopf" => hopf_suite(seed, jobs),
        "theta" => theta_suite(seed, jobs),
        "convexity" => convexity_suite(seed, 65),
        "collar" => Ok(collar_suite(seed, 200, jobs)),
        "harmonic_hardy" => harmonic_hardy_suite(seed, 100, jobs),
        other => Err(CertError::InvalidArgument(format!("unknown suite {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let g = gauss_legendre01(8);
        let w: f64 = g.iter().map(|p| p.1).sum();
        assert_relative_eq!(w, 1.0, epsilon = 1e-14);
        let i15: f64 = g.iter().map(|p| p.0.powi(15) * p.1).sum();
        assert_relative_eq!(i15, 1.0 / 16.0, epsilon = 1e-14);
    }

    #[test]
    fn wente_closed_form() {
        let m = wente_hardy_check(&[Complex64::new(1.0, 0.0)], &DiskField { c0: 1.0, cos: vec![], sin: vec![] });
        assert_relative_eq!(m.lhs, PI / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.grad_h, 2.0 * PI, epsilon = 1e-12);
        assert_relative_eq!(m.zeta_l2, PI, epsilon = 1e-12);
        assert!((m.lhs / (m.grad_h * m.zeta_l2) - 1.0 / (6.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn wente_zero_field() {
        let m = wente_hardy_check(&[Complex64::new(0.3, 1.0)], &DiskField { c0: 0.0, cos: vec![], sin: vec![] });
        assert_eq!(m.lhs, 0.0);
    }

    #[test]
    fn wente_monomial_oracle() {
        // ζ = z, h = 1 - r²: ∫h²r² = 2π∫(1-r²)²r³ = π/12, ∫|ζ|² = π/2.
        let m = wente_hardy_check(&[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)], &DiskField { c0: 1.0, cos: vec![], sin: vec![] });
        assert_relative_eq!(m.lhs, PI / 12.0, epsilon = 1e-12);
        assert_relative_eq!(m.zeta_l2, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn wente_suite_passes_and_is_deterministic() {
        let a = wente_suite(7, 100, 1);
        let b = wente_suite(7, 100, 3);
        assert!(a.pass, "{a:?}");
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn ode_closed_form() {
        let f = sample_interval(1.0, 4001, |t| 1.0 + t.cosh());
        let m = ode_comparison_check(&f, 1.0, 1.0).unwrap();
        assert!((m.integral - (4.0 + 2.0 * 2f64.sinh())).abs() < 1e-6);
        assert!((m.bound - 2.0 * SQRT_2 * (1.0 / SQRT_2).sinh()).abs() < 1e-12);
        assert!((m.bound - 2.171).abs() < 1e-3);
    }

    #[test]
    fn ode_trivial_and_failing_preconditions() {
        let f = sample_interval(1.0, 401, |t| t.cosh());
        assert!(ode_comparison_check(&f, 0.0, 1.0).unwrap().margin() >= 0.0);
        // Constant a: f'' = f - a holds but the max condition fails.
        let f = sample_interval(1.0, 401, |_| 1.0);
        assert!(matches!(ode_comparison_check(&f, 1.0, 1.0), Err(CertError::PreconditionFail(_))));
        // Concave f violates f'' >= f - a.
        let f = sample_interval(1.0, 401, |t| 3.0 - t * t);
        assert!(matches!(ode_comparison_check(&f, 0.0, 1.0), Err(CertError::PreconditionFail(_))));
    }

    #[test]
    fn ode_suite_small() {
        let r = ode_suite(3, 50, 2);
        assert!(r.pass, "{r:?}");
        assert!(r.instances > 10);
    }

    #[test]
    fn wirtinger_sin_and_zero() {
        let m = wirtinger_check(&Trace::from_fn(1, 64, |th| vec![th.sin()])).unwrap();
        assert_relative_eq!(m, 3.0 * PI, epsilon = 1e-12);
        assert_eq!(wirtinger_check(&Trace::from_fn(2, 16, |_| vec![0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(wirtinger_check(&Trace::from_fn(1, 16, |th| vec![2.0 + th.cos()])), Err(CertError::NoZero));
    }

    #[test]
    fn wirtinger_suite_small() {
        let r = wirtinger_suite(11, 200, 1);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn hopf_affine_mode_is_constant() {
        // u = a t + b cos θ eᵗ is harmonic; c(t) = 2π a² exactly in the continuum.
        let dom = Arc::new(Domain::cylinder(0.0, 1.0, 65, 256).unwrap());
        let target = Arc::new(EmbeddedManifold::affine(1, 1).unwrap());
        let (a, b) = (0.7, 0.3);
        let u = DiscreteMap::from_fn(dom.clone(), target, |i| {
            let [t, th] = dom.nodes[i].coord;
            vec![a * t + b * th.cos() * t.exp()]
        })
        .unwrap();
        let h = hopf_constancy(&u).unwrap();
        assert!((h.mean - 2.0 * PI * a * a).abs() < 1e-3, "{}", h.mean);
        assert!(h.max_deviation < 2e-3 * h.scale, "{h:?}");
    }

    #[test]
    fn hopf_radial_unit_speed() {
        let dom = Arc::new(Domain::cylinder(0.0, 2.0, 9, 16).unwrap());
        let target = Arc::new(EmbeddedManifold::affine(3, 3).unwrap());
        let u = DiscreteMap::from_fn(dom.clone(), target, |i| vec![dom.nodes[i].coord[0], 0.0, 0.0]).unwrap();
        let h = hopf_constancy(&u).unwrap();
        for c in &h.c {
            assert_relative_eq!(*c, 2.0 * PI, epsilon = 1e-12);
        }
        let k = DiscreteMap::from_fn(dom.clone(), Arc::new(EmbeddedManifold::unit_sphere(2)), |_| vec![0.0, 0.0, 1.0]).unwrap();
        assert!(hopf_constancy(&k).unwrap().c.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn hopf_needs_cylinder() {
        let d = Arc::new(Domain::disk(1.0, 9).unwrap());
        let u = DiscreteMap::from_fn(d, Arc::new(EmbeddedManifold::affine(1, 1).unwrap()), |_| vec![0.0]).unwrap();
        assert_eq!(hopf_constancy(&u), Err(CertError::NotCylinder));
    }

    #[test]
    fn hopf_solver_map_converges() {
        let s = exact_settings();
        let r32 = hopf_constancy(&hopf_fixture(32, &s).unwrap()).unwrap();
        let r64 = hopf_constancy(&hopf_fixture(64, &s).unwrap()).unwrap();
        let (a, b) = (r32.max_deviation / r32.scale, r64.max_deviation / r64.scale);
        assert!(b < a / 3.0, "{a} {b}");
        assert!(r64.mean > 0.0);
    }

    #[test]
    fn profile_affine_separable_mode() {
        // u = b cos θ eᵗ: f = π b² e^{2t}, f'' = 4 f, margin 2.5 f with |A| = 0.
        let dom = Arc::new(Domain::cylinder(0.0, 1.0, 101, 128).unwrap());
        let target = Arc::new(EmbeddedManifold::affine(1, 1).unwrap());
        let b = 0.4;
        let u = DiscreteMap::from_fn(dom.clone(), target, |i| {
            let [t, th] = dom.nodes[i].coord;
            vec![b * th.cos() * t.exp()]
        })
        .unwrap();
        let p = theta_energy_profile(&u).unwrap();
        for l in &p.levels {
            let f = PI * b * b * (2.0 * l.t).exp();
            assert!((l.f - f).abs() < 1e-3 * f);
            assert!((l.margin() - 2.5 * f).abs() < 1e-2 * f, "{l:?}");
        }
    }

    #[test]
    fn profile_radial_is_trivial() {
        let dom = Arc::new(Domain::cylinder(0.0, 1.0, 11, 16).unwrap());
        let u = DiscreteMap::from_fn(dom.clone(), Arc::new(EmbeddedManifold::unit_sphere(2)), |i| {
            let t = dom.nodes[i].coord[0];
            vec![t.sin(), 0.0, t.cos()]
        })
        .unwrap();
        let p = theta_energy_profile(&u).unwrap();
        assert!(p.levels.iter().all(|l| l.f == 0.0 && l.f_tt == 0.0));
    }

    #[test]
    fn profile_sphere_map_holds() {
        let u = hopf_fixture(32, &exact_settings()).unwrap();
        let p = theta_energy_profile(&u).unwrap();
        assert!(p.worst_normalized() >= -1e-4, "{:?}", p.worst_normalized());
    }

    #[test]
    fn decay_radial_and_gate() {
        let dom = Arc::new(Domain::cylinder(-3.0, 3.0, 31, 16).unwrap());
        let u = DiscreteMap::from_fn(dom.clone(), Arc::new(EmbeddedManifold::unit_sphere(2)), |i| {
            let t = 0.1 * dom.nodes[i].coord[0];
            vec![t.sin(), 0.0, t.cos()]
        })
        .unwrap();
        let r = theta_energy_decay_check(&u, 1.0, 0.1, 1.0).unwrap();
        assert_eq!(r.ratio, Some(0.0));
        assert!(r.pass);
        let r = theta_energy_decay_check(&u, 1.0, 0.1, 1e-6).unwrap();
        assert!(r.excluded && r.ratio.is_none());
        assert!(theta_energy_decay_check(&u, 2.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn decay_ratio_drops_when_ell_doubles() {
        let s = SolverSettings { residual_tol: 1e-10, max_sweeps: 200_000, eps1: f64::MAX, ..SolverSettings::default() };
        let r1 = theta_energy_decay_check(&decay_fixture(1.0, 0.05, 16, &s).unwrap(), 1.0, 1.0, DEFAULT_EPS2).unwrap();
        let r2 = theta_energy_decay_check(&decay_fixture(2.0, 0.05, 16, &s).unwrap(), 2.0, 1.0, DEFAULT_EPS2).unwrap();
        assert!(r2.ratio.unwrap() < 0.5 * r1.ratio.unwrap(), "{r1:?} {r2:?}");
    }

    #[test]
    fn composite_diagnostic_classifies_units() {
        let s = SolverSettings { residual_tol: 1e-10, max_sweeps: 100_000, eps1: f64::MAX, ..SolverSettings::default() };
        let u = decay_fixture(1.0, 0.05, 16, &s).unwrap();
        let r = composite_cylinder_diagnostic(&u, DEFAULT_EPS2, 1e-3, &s).unwrap();
        assert_eq!(r.units.len(), 6);
        assert!(r.units.iter().all(|x| x.good), "{r:?}");
        assert!(r.measured_constant > 0.0 && r.measured_constant < 1.0);
    }

    #[test]
    fn collar_suite_small() {
        let r = collar_suite(5, 20, 1);
        assert!(r.pass, "{r:?}");
        assert_eq!(r.notes["boundary_exact"], 1.0);
    }

    #[test]
    fn report_json_round_trip() {
        let r = wente_suite(1, 5, 1);
        let back: CertificateReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn par_map_keeps_order() {
        assert_eq!(par_map(10, 4, |i| i * i), (0..10).map(|i| i * i).collect::<Vec<_>>());
        assert!(par_map(0, 4, |i| i).is_empty());
    }

    proptest! {
        #[test]
        fn wente_never_violated(re in proptest::collection::vec(-2.0f64..2.0, 1..7), c0 in -1.0f64..1.0, a1 in -1.0f64..1.0, b2 in -1.0f64..1.0) {
            let zeta: Vec<Complex64> = re.iter().enumerate().map(|(i, x)| Complex64::new(*x, 0.3 * i as f64)).collect();
            let m = wente_hardy_check(&zeta, &DiskField { c0, cos: vec![a1, 0.0], sin: vec![0.0, b2] });
            prop_assert!(m.normalized() >= -1e-8);
        }

        #[test]
        fn wirtinger_shifted_cosines(k in 1usize..8, ph in 0.0f64..std::f64::consts::TAU) {
            let f = Trace::from_fn(1, 64, |th| vec![(k as f64 * th + ph).cos() - ph.cos()]);
            prop_assert!(wirtinger_check(&f).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn harmonic_hardy_linear_map_closed_form() {
        // v = (x, y) into the plane, h = 1 - r²: ∫h²|∇v|² = 2∫(1-r²)² = 2π/3.
        let dom = Arc::new(Domain::disk(1.0, 129).unwrap());
        let plane = Arc::new(EmbeddedManifold::new(crate::manifold::ManifoldKind::AffineSubspace { dim: 2, ambient_dim: 2 }).unwrap());
        let v = DiscreteMap::from_fn(dom.clone(), plane, |i| dom.nodes[i].coord.to_vec()).unwrap();
        let r = harmonic_hardy_ratio(&v, &DiskField { c0: 1.0, cos: vec![], sin: vec![] }).unwrap();
        assert_relative_eq!(r.weighted, 2.0 * PI / 3.0, max_relative = 1e-3);
        assert_relative_eq!(r.grad_h, 2.0 * PI, max_relative = 1e-12);
        let zero = harmonic_hardy_ratio(&v, &DiskField { c0: 0.0, cos: vec![], sin: vec![] }).unwrap();
        assert_eq!(zero.weighted, 0.0);
        assert_eq!(zero.ratio(), 0.0);
    }

    #[test]
    fn harmonic_hardy_suite_archives_ratios() {
        let a = harmonic_hardy_suite(5, 6, 2).unwrap();
        let b = harmonic_hardy_suite(5, 6, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.instances > 0 && a.pass);
        let (med, max) = (a.notes["ratio_median"], a.notes["ratio_max"]);
        assert!(med > 0.0 && med <= max && max.is_finite());
    }
}
