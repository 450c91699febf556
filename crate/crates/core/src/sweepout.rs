//! Sweepouts by maps of the 2-sphere, width estimates, ball schedules and the
//! tightening built from scheduled harmonic replacements.
//!
//! A sweepout is `T + 1` slices at `t_i = i / T` whose end slices are constant.
//! One tightening pass chooses, for every slice on the high-energy set, a ball
//! family on which replacement lowers the energy, extends each choice to an
//! interval of slices, prunes the intervals so that every closed interval
//! meets at most two others, and then replaces family by family with
//! trapezoid envelopes `r_j(t)` scaling the balls.

use std::f64::consts::PI;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{energy_improvement, improvement_candidates, replace_within, DirichletError, SolverSettings};
use crate::dmap::io::{read_map, write_map, IoError};
use crate::dmap::{mollify, BallFamily, DiscreteMap, DmapError, Domain, CHART_S};
use crate::manifold::EmbeddedManifold;
use crate::varifold::{varifold_distance, varifold_of_map, TestFunctionFamily, VarifoldMeasure, DEFAULT_J_CUT};

pub const DEFAULT_SLICES: usize = 64;
pub const SWEEPOUT_FORMAT: &str = "widthlab-sweepout";
pub const SWEEPOUT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SweepoutError {
    #[error("unknown sweepout kind `{0}`")]
    KindUnknown(String),
    #[error("end slice {0} is not a constant map")]
    EndpointNotConstant(usize),
    #[error("slices {slice} and {next} are {distance} apart, above the continuity bound {limit}")]
    Discontinuous { slice: usize, next: usize, distance: f64, limit: f64 },
    #[error("no improving ball family on the high-energy set")]
    ScheduleEmpty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dmap(#[from] DmapError),
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("i/o: {0}")]
    File(#[from] std::io::Error),
}

/// A one-parameter family of maps `S² → M` with constant end slices.
#[derive(Debug, Clone)]
pub struct Sweepout {
    pub label: String,
    pub slices: Vec<DiscreteMap>,
    pub target: Arc<EmbeddedManifold>,
    /// Degree of the induced map `S³ → S³` (0 for other targets).
    pub degree: i64,
}

fn is_constant(u: &DiscreteMap) -> bool {
    let d = u.dim();
    let first = &u.values[..d];
    u.values.chunks_exact(d).all(|v| v.iter().zip(first).all(|(a, b)| (a - b).abs() <= 1e-12))
}

impl Sweepout {
    pub fn new(label: impl Into<String>, slices: Vec<DiscreteMap>, degree: i64) -> Result<Self, SweepoutError> {
        if slices.len() < 2 {
            return Err(SweepoutError::InvalidArgument("a sweepout needs at least two slices".into()));
        }
        for s in &slices[1..] {
            if !s.same_domain(&slices[0]) {
                return Err(DmapError::DomainMismatch.into());
            }
        }
        let last = slices.len() - 1;
        for i in [0, last] {
            if !is_constant(&slices[i]) {
                return Err(SweepoutError::EndpointNotConstant(i));
            }
        }
        let target = slices[0].target.clone();
        Ok(Self { label: label.into(), slices, target, degree })
    }

    /// Number of parameter intervals `T`.
    pub fn intervals(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 / self.intervals() as f64
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.slices[0].domain
    }

    /// Largest `C⁰` plus `W^{1,2}` seminorm distance between consecutive slices.
    pub fn continuity(&self) -> Result<(f64, usize), SweepoutError> {
        let mut worst = (0.0, 0);
        for i in 0..self.intervals() {
            let (a, b) = (&self.slices[i], &self.slices[i + 1]);
            let d = a.c0_distance(b)? + a.gradient_distance_sq(b, None)?.sqrt();
            if d > worst.0 {
                worst = (d, i);
            }
        }
        Ok(worst)
    }

    pub fn check_continuity(&self, limit: f64) -> Result<(), SweepoutError> {
        let (distance, slice) = self.continuity()?;
        if distance > limit {
            return Err(SweepoutError::Discontinuous { slice, next: slice + 1, distance, limit });
        }
        Ok(())
    }
}

/// A localized twist of the sphere: points at angular distance `d < width`
/// from `center` rotate about it by `amplitude · (1 - (d/width)²)²` radians,
/// with the amplitude modulated in `t` by `(1 - ((t - t_center)/t_width)²)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwistBump {
    pub center: [f64; 3],
    pub width: f64,
    pub amplitude: f64,
    pub t_center: f64,
    pub t_width: f64,
}

impl TwistBump {
    pub fn angle(&self, x: [f64; 3], t: f64) -> f64 {
        let s = (t - self.t_center) / self.t_width;
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let c = (x[0] * self.center[0] + x[1] * self.center[1] + x[2] * self.center[2]).clamp(-1.0, 1.0);
        let r = c.acos() / self.width;
        if r >= 1.0 {
            return 0.0;
        }
        self.amplitude * (1.0 - s * s).powi(2) * (1.0 - r * r).powi(2)
    }

    pub fn apply(&self, x: [f64; 3], t: f64) -> [f64; 3] {
        let a = self.angle(x, t);
        if a == 0.0 {
            return x;
        }
        rotate_about(self.center, a, x)
    }
}

fn rotate_about(k: [f64; 3], a: f64, x: [f64; 3]) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    let kx = [k[1] * x[2] - k[2] * x[1], k[2] * x[0] - k[0] * x[2], k[0] * x[1] - k[1] * x[0]];
    let kd = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
    [0, 1, 2].map(|i| x[i] * c + kx[i] * s + k[i] * kd * (1.0 - c))
}

/// Default perturbation: twelve disjoint twists centered at the vertices of
/// an icosahedron, each small enough to fit a ball of energy `ε₁/4` at the
/// default `ε₁`, active on staggered windows around `t = 1/2`.
pub fn default_twist_bumps() -> Vec<TwistBump> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut dirs = Vec::new();
    for a in [-1.0, 1.0] {
        for b in [-phi, phi] {
            dirs.push([0.0, a, b]);
            dirs.push([a, b, 0.0]);
            dirs.push([b, 0.0, a]);
        }
    }
    dirs.iter()
        .enumerate()
        .map(|(k, d)| {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            TwistBump {
                center: [d[0] / n, d[1] / n, d[2] / n],
                width: 0.12,
                amplitude: 2.2 + 0.1 * (k % 3) as f64,
                t_center: 0.5 + 0.015 * (k as f64 - 5.5),
                t_width: 0.3,
            }
        })
        .collect()
}

fn latitude_point(x: [f64; 3], t: f64) -> Vec<f64> {
    let (s, c) = (PI * t).sin_cos();
    vec![s * x[0], s * x[1], s * x[2], c]
}

fn s3() -> Arc<EmbeddedManifold> {
    Arc::new(EmbeddedManifold::unit_sphere(3))
}

/// Latitude slices `x ↦ (sin(πt) φ_t(x), cos(πt))` for a family of
/// diffeomorphisms `φ_t` given by disjoint twists.
pub fn twisted_latitude(domain: Arc<Domain>, slices: usize, bumps: &[TwistBump]) -> Result<Sweepout, SweepoutError> {
    if !domain.is_sphere() {
        return Err(DmapError::NotSphere.into());
    }
    if slices < 2 {
        return Err(SweepoutError::InvalidArgument("need at least two parameter intervals".into()));
    }
    let target = s3();
    let mut out = Vec::with_capacity(slices + 1);
    for i in 0..=slices {
        let t = i as f64 / slices as f64;
        let u = DiscreteMap::from_fn(domain.clone(), target.clone(), |n| {
            let mut x = domain.sphere_pts[n];
            for b in bumps {
                x = b.apply(x, t);
            }
            latitude_point(x, t)
        })?;
        out.push(u);
    }
    let label = if bumps.is_empty() { "latitude-S3" } else { "perturbed-latitude-S3" };
    Sweepout::new(label, out, 1)
}

/// Fixture sweepouts. Kinds (case-insensitive): `latitude-S3`,
/// `perturbed-latitude-S3`, `constant-S3`. Curve kinds live in
/// [`standard_curve_sweepout`].
pub fn standard_sweepout(kind: &str, domain: Arc<Domain>, slices: usize) -> Result<Sweepout, SweepoutError> {
    match kind.to_ascii_lowercase().as_str() {
        "latitude-s3" => twisted_latitude(domain, slices, &[]),
        "perturbed-latitude-s3" => twisted_latitude(domain, slices, &default_twist_bumps()),
        "constant-s3" => {
            if slices < 2 {
                return Err(SweepoutError::InvalidArgument("need at least two parameter intervals".into()));
            }
            let u = DiscreteMap::constant(domain, s3(), &[0.0, 0.0, 0.0, 1.0])?;
            Sweepout::new("constant-S3", vec![u; slices + 1], 0)
        }
        _ => Err(SweepoutError::KindUnknown(kind.to_string())),
    }
}

fn det4(m: [[f64; 4]; 4]) -> f64 {
    let mut det = 0.0;
    for c in 0..4 {
        let mut minor = [[0.0; 3]; 3];
        for r in 1..4 {
            let mut k = 0;
            for cc in 0..4 {
                if cc != c {
                    minor[r - 1][k] = m[r][cc];
                    k += 1;
                }
            }
        }
        let d3 = minor[0][0] * (minor[1][1] * minor[2][2] - minor[1][2] * minor[2][1]) - minor[0][1] * (minor[1][0] * minor[2][2] - minor[1][2] * minor[2][0])
            + minor[0][2] * (minor[1][0] * minor[2][1] - minor[1][1] * minor[2][0]);
        det += if c % 2 == 0 { m[0][c] * d3 } else { -m[0][c] * d3 };
    }
    det
}

/// Pullback of the volume form of `S³` integrated over `S² × [0, 1]`,
/// divided by `2π²`. Each triangle and parameter interval contributes
/// `det[F, F_x, F_y, F_t]` at the midpoint; the orientation of `S³` is fixed so
/// the latitude sweepout has degree `+1`.
pub fn numerical_degree(s: &Sweepout) -> Result<f64, SweepoutError> {
    if s.target.ambient_dim != 4 || !s.target.is_sphere() || !s.domain().is_sphere() {
        return Err(SweepoutError::InvalidArgument("degree needs sphere slices into S³".into()));
    }
    let dom = s.domain().clone();
    let nt = s.intervals() as f64;
    let mut total = 0.0;
    for i in 0..s.intervals() {
        let (a, b) = (&s.slices[i], &s.slices[i + 1]);
        for tr in dom.tris.iter() {
            let mut g = [[0.0; 4]; 3];
            let mut ft = [0.0; 4];
            for k in 0..3 {
                let (va, vb) = (a.value(tr.v[k]), b.value(tr.v[k]));
                for c in 0..4 {
                    g[k][c] = 0.5 * (va[c] + vb[c]);
                    ft[c] += (vb[c] - va[c]) * nt / 3.0;
                }
            }
            let mut x = [0.0; 4];
            let mut gx = [0.0; 4];
            let mut gy = [0.0; 4];
            for k in 0..3 {
                for c in 0..4 {
                    x[c] += g[k][c] / 3.0;
                    gx[c] += tr.gx[k] * g[k][c];
                    gy[c] += tr.gy[k] * g[k][c];
                }
            }
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            x.iter_mut().for_each(|v| *v /= n);
            // Chart S coordinates are negatively oriented on the sphere.
            let sign = if tr.chart == CHART_S { -1.0 } else { 1.0 };
            total += sign * det4([x, gx, gy, ft]) * tr.area / nt;
        }
    }
    Ok(-total / (2.0 * PI * PI))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    pub w_e: f64,
    pub w_a: f64,
    /// Slice index of the largest energy.
    pub argmax_t: usize,
    pub energies: Vec<f64>,
    pub areas: Vec<f64>,
}

pub fn width_estimate(s: &Sweepout) -> WidthEstimate {
    let energies: Vec<f64> = s.slices.iter().map(|u| u.energy(None)).collect();
    let areas: Vec<f64> = s.slices.iter().map(|u| u.area()).collect();
    let mut argmax_t = 0;
    for (i, e) in energies.iter().enumerate() {
        if *e > energies[argmax_t] {
            argmax_t = i;
        }
    }
    let w_e = energies[argmax_t];
    let w_a = areas.iter().cloned().fold(0.0, f64::max);
    WidthEstimate { w_e, w_a, argmax_t, energies, areas }
}

/// Knobs of the tightening loop and of schedule construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TightenSettings {
    pub max_iters: usize,
    /// Stop once `W_E` moved by less than `plateau_tol · W_E` in each of the
    /// last `plateau_window` iterations.
    pub plateau_tol: f64,
    pub plateau_window: usize,
    pub sampler_budget: usize,
    /// A slice whose sampled improvement is at most this is treated as
    /// harmonic and left out of the schedule.
    pub harmonic_tol: f64,
    /// Largest interval half-width, in half slice steps.
    pub max_half_width: usize,
    /// Mollifier radius applied before scheduling; `0` disables it.
    pub mollify_radius: f64,
    /// Bound on the consecutive-slice distance of a valid sweepout.
    pub cont_tol: f64,
}

impl Default for TightenSettings {
    fn default() -> Self {
        Self {
            max_iters: 30,
            plateau_tol: 1e-4,
            plateau_window: 3,
            sampler_budget: 48,
            harmonic_tol: 1e-6,
            max_half_width: 8,
            mollify_radius: 0.0,
            cont_tol: 2.0,
        }
    }
}

impl TightenSettings {
    pub fn validate(&self) -> Result<(), SweepoutError> {
        let bad = |m: &str| Err(SweepoutError::InvalidArgument(m.into()));
        if self.max_iters == 0 || self.plateau_window == 0 || self.sampler_budget == 0 || self.max_half_width == 0 {
            return bad("max_iters, plateau_window, sampler_budget and max_half_width must be positive");
        }
        if !(self.plateau_tol >= 0.0) || !(self.harmonic_tol >= 0.0) || !(self.cont_tol > 0.0) {
            return bad("tolerances must be non-negative");
        }
        if !(self.mollify_radius >= 0.0 && self.mollify_radius < 1.0) {
            return bad("mollify_radius must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Continuous piecewise-linear envelope: 1 on `[a, b]`, linear down to 0 at
/// `lo` and `hi`, 0 outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lo: f64,
    pub a: f64,
    pub b: f64,
    pub hi: f64,
}

impl Envelope {
    pub fn eval(&self, t: f64) -> f64 {
        if t >= self.a && t <= self.b {
            1.0
        } else if t > self.lo && t < self.a {
            (t - self.lo) / (self.a - self.lo)
        } else if t > self.b && t < self.hi {
            (self.hi - t) / (self.hi - self.b)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BallSchedule {
    pub families: Vec<BallFamily>,
    /// Closed intervals `[a, b]` in `t`, one per family.
    pub intervals: Vec<[f64; 2]>,
    pub envelopes: Vec<Envelope>,
    /// Slice that proposed each family and its sampled improvement.
    pub sources: Vec<usize>,
    pub improvements: Vec<f64>,
    /// Largest sampled improvement over the high-energy set.
    pub max_improvement: f64,
}

impl BallSchedule {
    pub fn empty() -> Self {
        Self { families: vec![], intervals: vec![], envelopes: vec![], sources: vec![], improvements: vec![], max_improvement: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    /// `(j, r_j(t))` for every positive envelope.
    pub fn active(&self, t: f64) -> Vec<(usize, f64)> {
        self.envelopes
            .iter()
            .enumerate()
            .filter_map(|(j, e)| {
                let r = e.eval(t);
                (r > 0.0).then_some((j, r))
            })
            .collect()
    }

    /// Largest number of simultaneously positive envelopes over `samples + 1`
    /// equally spaced parameters.
    pub fn max_active(&self, samples: usize) -> usize {
        (0..=samples).map(|k| self.active(k as f64 / samples as f64).len()).max().unwrap_or(0)
    }
}

fn contains(outer: [f64; 2], t: f64) -> bool {
    outer[0] <= t && t <= outer[1]
}

fn meets(x: [f64; 2], y: [f64; 2]) -> bool {
    x[0] <= y[1] && y[0] <= x[1]
}

/// The covering recipe on closed intervals, processed in the given order:
/// an interval inside the union of two others is dropped; otherwise, of the
/// intervals whose left endpoint lies in it only the one reaching furthest
/// right is kept (equal right endpoints: smaller left endpoint wins), and of
/// those whose right endpoint lies in it only the one reaching furthest left.
/// Returns the surviving indices in increasing order.
pub fn prune_intervals(iv: &[[f64; 2]]) -> Vec<usize> {
    let m = iv.len();
    let mut alive = vec![true; m];
    for j in 0..m {
        if !alive[j] {
            continue;
        }
        let cur = iv[j];
        let others: Vec<usize> = (0..m).filter(|&k| k != j && alive[k]).collect();
        let covered = others.iter().any(|&p| {
            others.iter().any(|&q| {
                let (x, y) = (iv[p], iv[q]);
                (x[0] <= cur[0] && x[1] >= cur[1]) || (x[0] <= cur[0] && y[1] >= cur[1] && y[0] <= x[1])
            })
        });
        if covered {
            alive[j] = false;
            continue;
        }
        let left: Vec<usize> = others.iter().cloned().filter(|&k| contains(cur, iv[k][0])).collect();
        if let Some(&keep) = left.iter().max_by(|&&p, &&q| iv[p][1].total_cmp(&iv[q][1]).then(iv[q][0].total_cmp(&iv[p][0])).then(q.cmp(&p))) {
            for &k in &left {
                if k != keep {
                    alive[k] = false;
                }
            }
        }
        let right: Vec<usize> = (0..m).filter(|&k| k != j && alive[k] && contains(cur, iv[k][1])).collect();
        if let Some(&keep) = right.iter().min_by(|&&p, &&q| iv[p][0].total_cmp(&iv[q][0]).then(iv[q][1].total_cmp(&iv[p][1])).then(p.cmp(&q))) {
            for &k in &right {
                if k != keep {
                    alive[k] = false;
                }
            }
        }
    }
    (0..m).filter(|&k| alive[k]).collect()
}

/// Whether every closed interval meets at most two others and those do not
/// meet each other.
pub fn is_thin_cover(iv: &[[f64; 2]]) -> bool {
    (0..iv.len()).all(|j| {
        let nb: Vec<usize> = (0..iv.len()).filter(|&k| k != j && meets(iv[j], iv[k])).collect();
        nb.len() <= 2 && (nb.len() < 2 || !meets(iv[nb[0]], iv[nb[1]]))
    })
}

/// Trapezoid envelopes for a thin cover. Each ramp stays inside the doubled
/// interval and stops halfway to any interval disjoint from its own, so at
/// most two envelopes are positive at any parameter.
pub fn envelopes_for(iv: &[[f64; 2]]) -> Vec<Envelope> {
    iv.iter()
        .enumerate()
        .map(|(j, &[a, b])| {
            let half = 0.5 * (b - a);
            let mut margin = half;
            for (k, &other) in iv.iter().enumerate() {
                if k == j || meets(iv[j], other) {
                    continue;
                }
                let gap = if other[1] < a { a - other[1] } else { other[0] - b };
                margin = margin.min(0.5 * gap);
            }
            Envelope { lo: a - margin, a, b, hi: b + margin }
        })
        .collect()
}

struct SliceCache<'a> {
    s: &'a Sweepout,
    solver: &'a SolverSettings,
    budget: usize,
    eighth: Vec<Option<f64>>,
}

impl SliceCache<'_> {
    fn e_eighth(&mut self, i: usize) -> Result<f64, SweepoutError> {
        if let Some(v) = self.eighth[i] {
            return Ok(v);
        }
        let v = energy_improvement(&self.s.slices[i], self.solver.eps1 / 8.0, self.budget, self.solver)?.value;
        self.eighth[i] = Some(v);
        Ok(v)
    }
}

/// Ball schedule for one tightening pass.
///
/// For every interior slice with energy at least `W_E/2` the sampler picks the
/// family `𝓑^t` with the largest improvement `e_t` among families of energy at
/// most `ε₁/4`; slices with `e_t ≤ harmonic_tol` are exempt. The interval
/// around `t` grows in half slice steps while, for every slice `s` in the
/// doubled interval, the energy on `𝓑^t` stays below `ε₁/3`, the `ε₁/8`
/// improvement at `s` is at most `2 e_t`, and the drop from replacing on
/// `½𝓑^t` at `s` is within `e_t/4` of the drop at `t`.
pub fn select_ball_schedule(s: &Sweepout, solver: &SolverSettings, ts: &TightenSettings) -> Result<BallSchedule, SweepoutError> {
    ts.validate()?;
    solver.validate()?;
    let nt = s.intervals();
    let w = width_estimate(s);
    let eps1 = solver.eps1;
    let mut cache = SliceCache { s, solver, budget: ts.sampler_budget, eighth: vec![None; nt + 1] };
    let mut iv = Vec::new();
    let mut fams = Vec::new();
    let mut sources = Vec::new();
    let mut imps = Vec::new();
    let mut max_improvement: f64 = 0.0;
    for i in 1..nt {
        if w.energies[i] < 0.5 * w.w_e || w.w_e <= 0.0 {
            continue;
        }
        let imp = energy_improvement(&s.slices[i], eps1 / 4.0, ts.sampler_budget, solver)?;
        max_improvement = max_improvement.max(imp.value);
        let Some(fam) = imp.best else { continue };
        let e_t = imp.value;
        if e_t <= ts.harmonic_tol {
            continue;
        }
        let half = fam.scaled(0.5);
        let mut drops: Vec<Option<f64>> = vec![None; nt + 1];
        drops[i] = Some(e_t);
        let mut k_ok = 1;
        'grow: for k in 1..=ts.max_half_width {
            // Slices with |s - i| < k lie in the doubled interval of half-width k/2.
            for sidx in i.saturating_sub(k - 1)..=(i + k - 1).min(nt) {
                if sidx == i {
                    continue;
                }
                let u = &s.slices[sidx];
                if u.energy(Some(&fam)) >= eps1 / 3.0 {
                    break 'grow;
                }
                if cache.e_eighth(sidx)? > 2.0 * e_t {
                    break 'grow;
                }
                let d = match drops[sidx] {
                    Some(d) => d,
                    None => {
                        let d = replace_within(u, &half, solver)?.energy_drop;
                        drops[sidx] = Some(d);
                        d
                    }
                };
                if (d - e_t).abs() > 0.25 * e_t {
                    break 'grow;
                }
            }
            k_ok = k;
        }
        let hw = 0.5 * k_ok as f64 / nt as f64;
        let t = s.t(i);
        iv.push([t - hw, t + hw]);
        fams.push(fam);
        sources.push(i);
        imps.push(e_t);
    }
    if iv.is_empty() {
        return Err(SweepoutError::ScheduleEmpty);
    }
    let keep = prune_intervals(&iv);
    let intervals: Vec<[f64; 2]> = keep.iter().map(|&k| iv[k]).collect();
    let envelopes = envelopes_for(&intervals);
    Ok(BallSchedule {
        families: keep.iter().map(|&k| fams[k].clone()).collect(),
        intervals,
        envelopes,
        sources: keep.iter().map(|&k| sources[k]).collect(),
        improvements: keep.iter().map(|&k| imps[k]).collect(),
        max_improvement,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    /// Energy drop of every slice over all stages.
    pub slice_drops: Vec<f64>,
    pub total_drop: f64,
    /// Slices where a replacement failed and was skipped.
    pub skipped: Vec<usize>,
    /// Largest `ε₁/3`-normalized family energy met while replacing.
    pub max_family_energy: f64,
}

/// Applies the stages `γ^k(·,t) = H(γ^{k-1}(·,t), r_k(t) 𝓑_k)` in order.
/// Slices with every envelope zero, in particular the end slices, are left
/// untouched. A replacement that errors is skipped and recorded.
pub fn tighten_once(s: &Sweepout, sched: &BallSchedule, solver: &SolverSettings) -> (Sweepout, StageReport) {
    let mut out = s.clone();
    let nt = s.intervals();
    let mut rep = StageReport { slice_drops: vec![0.0; nt + 1], total_drop: 0.0, skipped: vec![], max_family_energy: 0.0 };
    for (fam, env) in sched.families.iter().zip(&sched.envelopes) {
        for i in 1..nt {
            let r = env.eval(s.t(i));
            if r <= 0.0 {
                continue;
            }
            let scaled = fam.scaled(r);
            let u = &out.slices[i];
            rep.max_family_energy = rep.max_family_energy.max(u.energy(Some(&scaled)));
            match replace_within(u, &scaled, solver) {
                Ok(res) => {
                    // A round-off rise keeps the slice as it was.
                    if res.energy_drop > 0.0 {
                        rep.slice_drops[i] += res.energy_drop;
                        out.slices[i] = res.map;
                    }
                }
                Err(_) => {
                    if !rep.skipped.contains(&i) {
                        rep.skipped.push(i);
                    }
                }
            }
        }
    }
    rep.total_drop = rep.slice_drops.iter().sum();
    (out, rep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlmostHarmonic {
    /// Largest `∫_{⅛𝓑} |∇u - ∇v|²` over sampled families.
    pub max_residual_gap: f64,
    pub witness: Option<BallFamily>,
    /// `E(u) - Area(u)`.
    pub energy_minus_area: f64,
    pub evaluated: usize,
}

/// Compares `u` with its replacement on `⅛` of each sampled family of energy
/// below `eps0`.
pub fn almost_harmonic_check(u: &DiscreteMap, eps0: f64, budget: usize, solver: &SolverSettings) -> Result<AlmostHarmonic, SweepoutError> {
    let mut out = AlmostHarmonic { max_residual_gap: 0.0, witness: None, energy_minus_area: u.energy(None) - u.area(), evaluated: 0 };
    for fam in improvement_candidates(u, budget) {
        if u.energy(Some(&fam)) >= eps0 {
            continue;
        }
        let small = fam.scaled(0.125);
        let v = replace_within(u, &small, solver)?.map;
        let gap = u.gradient_distance_sq(&v, Some(&small))?;
        out.evaluated += 1;
        if gap > out.max_residual_gap {
            out.max_residual_gap = gap;
            out.witness = Some(fam);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub width: WidthEstimate,
    pub total_drop: f64,
    pub families: usize,
    /// Largest sampled improvement over the high-energy set.
    pub max_improvement: f64,
    pub degree: Option<f64>,
    /// Varifold distance from the argmax slice to the reference, if given.
    pub varifold_distance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TighteningReport {
    pub initial: WidthEstimate,
    pub iterations: Vec<IterationRecord>,
    pub plateau: bool,
    pub schedule_empty: bool,
    /// Checks on slices with energy within 1% of the final `W_E`.
    pub near_maximal: Vec<(usize, AlmostHarmonic)>,
    pub skipped_slices: usize,
}

impl TighteningReport {
    pub fn final_width(&self) -> &WidthEstimate {
        self.iterations.last().map(|r| &r.width).unwrap_or(&self.initial)
    }

    /// Whether `W_E` never rose by more than `slack` between iterations.
    pub fn monotone(&self, slack: f64) -> bool {
        let mut prev = self.initial.w_e;
        for r in &self.iterations {
            if r.width.w_e > prev + slack {
                return false;
            }
            prev = r.width.w_e;
        }
        true
    }

    pub const CSV_HEADER: &'static str = "iter,W_E,W_A,argmax_t,total_drop";

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let i = &self.initial;
        writeln!(w, "0,{:.12e},{:.12e},{},{:.12e}", i.w_e, i.w_a, i.argmax_t, 0.0)?;
        for r in &self.iterations {
            writeln!(w, "{},{:.12e},{:.12e},{},{:.12e}", r.iter, r.width.w_e, r.width.w_a, r.width.argmax_t, r.total_drop)?;
        }
        Ok(())
    }
}

/// Reference measure for the argmax-slice diagnostic.
pub struct VarifoldReference<'a> {
    pub measure: &'a VarifoldMeasure,
    pub family: &'a TestFunctionFamily,
}

/// Mollify (optional, energy-guarded), schedule, replace; repeated until the
/// schedule is empty, `W_E` plateaus, or `max_iters` passes ran.
pub fn tighten(
    s: &Sweepout,
    ts: &TightenSettings,
    solver: &SolverSettings,
    reference: Option<VarifoldReference<'_>>,
) -> Result<(Sweepout, TighteningReport), SweepoutError> {
    ts.validate()?;
    let initial = width_estimate(s);
    let track_degree = s.target.ambient_dim == 4 && s.target.is_sphere() && s.domain().is_sphere();
    let mut cur = s.clone();
    let mut rep = TighteningReport { initial, iterations: vec![], plateau: false, schedule_empty: false, near_maximal: vec![], skipped_slices: 0 };
    let mut prev_w = rep.initial.w_e;
    let mut flat_run = 0;
    for iter in 1..=ts.max_iters {
        if ts.mollify_radius > 0.0 && cur.domain().is_sphere() {
            for i in 1..cur.intervals() {
                let m = mollify(&cur.slices[i], ts.mollify_radius)?;
                if m.energy(None) <= cur.slices[i].energy(None) {
                    cur.slices[i] = m;
                }
            }
        }
        let sched = match select_ball_schedule(&cur, solver, ts) {
            Ok(sc) => sc,
            Err(SweepoutError::ScheduleEmpty) => {
                rep.schedule_empty = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let (next, step) = tighten_once(&cur, &sched, solver);
        cur = next;
        rep.skipped_slices += step.skipped.len();
        let width = width_estimate(&cur);
        let varifold_distance = match &reference {
            Some(r) => {
                let v = varifold_of_map(&cur.slices[width.argmax_t], DEFAULT_J_CUT);
                Some(varifold_distance(&v, r.measure, r.family).map_err(|e| SweepoutError::InvalidArgument(e.to_string()))?)
            }
            None => None,
        };
        let degree = if track_degree { Some(numerical_degree(&cur)?) } else { None };
        let w_now = width.w_e;
        rep.iterations.push(IterationRecord {
            iter,
            width,
            total_drop: step.total_drop,
            families: sched.len(),
            max_improvement: sched.max_improvement,
            degree,
            varifold_distance,
        });
        if (prev_w - w_now).abs() < ts.plateau_tol * w_now.max(f64::MIN_POSITIVE) {
            flat_run += 1;
        } else {
            flat_run = 0;
        }
        prev_w = w_now;
        if flat_run >= ts.plateau_window {
            rep.plateau = true;
            break;
        }
    }
    let w = width_estimate(&cur);
    for i in 1..cur.intervals() {
        if w.energies[i] >= 0.99 * w.w_e && w.w_e > 0.0 {
            let chk = almost_harmonic_check(&cur.slices[i], solver.eps1 / 4.0, ts.sampler_budget, solver)?;
            rep.near_maximal.push((i, chk));
        }
    }
    Ok((cur, rep))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    label: String,
    slices: usize,
    degree: i64,
}

/// Writes `manifest.json` and `slices.bin` (concatenated map records) into `dir`.
pub fn write_sweepout(s: &Sweepout, dir: &Path) -> Result<(), SweepoutError> {
    std::fs::create_dir_all(dir)?;
    let m = Manifest { format: SWEEPOUT_FORMAT.into(), version: SWEEPOUT_VERSION, label: s.label.clone(), slices: s.slices.len(), degree: s.degree };
    let json = serde_json::to_string_pretty(&m).map_err(|e| SweepoutError::InvalidArgument(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    let mut w = BufWriter::new(std::fs::File::create(dir.join("slices.bin"))?);
    for u in &s.slices {
        write_map(u, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweepout(dir: &Path) -> Result<Sweepout, SweepoutError> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| SweepoutError::InvalidArgument(e.to_string()))?;
    if m.format != SWEEPOUT_FORMAT || m.version != SWEEPOUT_VERSION {
        return Err(SweepoutError::InvalidArgument(format!("unsupported container {} v{}", m.format, m.version)));
    }
    let mut r = BufReader::new(std::fs::File::open(dir.join("slices.bin"))?);
    let mut slices: Vec<DiscreteMap> = Vec::with_capacity(m.slices);
    for _ in 0..m.slices {
        let reuse = slices.first().map(|u| u.domain.clone());
        slices.push(read_map(&mut r, reuse.as_ref())?);
    }
    Sweepout::new(m.label, slices, m.degree)
}

/// A sweepout of the round 2-sphere by closed polygons with `m` vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSweepout {
    pub slices: Vec<Vec<[f64; 3]>>,
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    // atan2 form stays accurate for nearly equal points.
    let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    s.atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
}

fn slerp(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    let th = angle(a, b);
    if th < 1e-15 {
        return a;
    }
    let (wa, wb) = (((1.0 - s) * th).sin() / th.sin(), (s * th).sin() / th.sin());
    normalize([wa * a[0] + wb * b[0], wa * a[1] + wb * b[1], wa * a[2] + wb * b[2]])
}

/// Geodesic length of a closed polygon on the unit sphere.
pub fn curve_length(c: &[[f64; 3]]) -> f64 {
    (0..c.len()).map(|i| angle(c[i], c[(i + 1) % c.len()])).sum()
}

/// Curve fixtures with `m` vertices and `slices + 1` parameters:
/// `curve-latitude-S2` (circles of latitude from pole to pole) and
/// `curve-perturbed-latitude-S2` (latitudes with a three-fold height wiggle).
pub fn standard_curve_sweepout(kind: &str, m: usize, slices: usize) -> Result<CurveSweepout, SweepoutError> {
    let amp = match kind.to_ascii_lowercase().as_str() {
        "curve-latitude-s2" => 0.0,
        "curve-perturbed-latitude-s2" => 0.25,
        "curve-constant-s2" => {
            return Ok(CurveSweepout { slices: vec![vec![[0.0, 0.0, -1.0]; m]; slices + 1] });
        }
        _ => return Err(SweepoutError::KindUnknown(kind.to_string())),
    };
    if m < 4 || slices < 2 {
        return Err(SweepoutError::InvalidArgument("need at least 4 vertices and 2 intervals".into()));
    }
    let out = (0..=slices)
        .map(|i| {
            let t = i as f64 / slices as f64;
            (0..m)
                .map(|j| {
                    let th = 2.0 * PI * j as f64 / m as f64;
                    let polar = PI * t + amp * (PI * t).sin() * (3.0 * th).sin();
                    [polar.sin() * th.cos(), polar.sin() * th.sin(), -polar.cos()]
                })
                .collect()
        })
        .collect();
    Ok(CurveSweepout { slices: out })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BirkhoffReport {
    /// Largest slice length before the first and after every iteration.
    pub max_lengths: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Replaces the polygon between breakpoints `b, b+2` by the geodesic through
/// its ends for every breakpoint of one parity (`arcs` breakpoints, evenly
/// spaced by vertex index). Pieces whose ends are nearly antipodal are kept.
fn birkhoff_half_step(c: &mut [[f64; 3]], arcs: usize, parity: usize) {
    let m = c.len();
    let step = m / arcs;
    let mut b = parity;
    while b < arcs {
        let i0 = b * step;
        let i1 = i0 + 2 * step;
        let (p, q) = (c[i0 % m], c[i1 % m]);
        if angle(p, q) < PI - 1e-3 {
            for k in 1..2 * step {
                c[(i0 + k) % m] = slerp(p, q, k as f64 / (2 * step) as f64);
            }
        }
        b += 2;
    }
}

/// Birkhoff curve shortening applied to every slice: each iteration replaces
/// the even arc family and then the odd one by minimizing geodesics. Stops when
/// the largest length moves by less than `tol` relative, or after `max_iters`.
pub fn birkhoff_tighten(c: &CurveSweepout, arcs: usize, max_iters: usize, tol: f64) -> Result<(CurveSweepout, BirkhoffReport), SweepoutError> {
    let m = c.slices.first().map_or(0, |s| s.len());
    if arcs < 4 || arcs % 2 != 0 || m % arcs != 0 {
        return Err(SweepoutError::InvalidArgument(format!("{arcs} arcs must be even, at least 4, and divide {m} vertices")));
    }
    let max_len = |s: &CurveSweepout| s.slices.iter().map(|p| curve_length(p)).fold(0.0, f64::max);
    let mut cur = c.clone();
    let mut lens = vec![max_len(&cur)];
    let mut converged = false;
    let mut iters = 0;
    let last = cur.slices.len() - 1;
    for _ in 0..max_iters {
        iters += 1;
        for s in cur.slices[1..last].iter_mut() {
            birkhoff_half_step(s, arcs, 0);
            birkhoff_half_step(s, arcs, 1);
        }
        let l = max_len(&cur);
        let prev = *lens.last().unwrap();
        lens.push(l);
        if (prev - l).abs() <= tol * prev.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok((cur, BirkhoffReport { max_lengths: lens, iterations: iters, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn sphere(n: usize) -> Arc<Domain> {
        Arc::new(Domain::sphere(n).unwrap())
    }

    #[test]
    fn latitude_energies_follow_sin_squared() {
        let s = standard_sweepout("latitude-S3", sphere(33), 16).unwrap();
        let w = width_estimate(&s);
        assert_eq!(w.argmax_t, 8);
        assert!(w.energies[0] < 1e-25 && w.energies[16] < 1e-25);
        let id = w.energies[8];
        for (i, e) in w.energies.iter().enumerate() {
            let exact = id * (PI * s.t(i)).sin().powi(2);
            assert!((e - exact).abs() < 1e-9 * id, "slice {i}: {e} vs {exact}");
        }
        assert!((w.w_e - 4.0 * PI).abs() < 0.02 * 4.0 * PI);
        assert!(w.w_a <= w.w_e + 1e-9);
    }

    #[test]
    fn latitude_end_slices_sit_at_the_poles() {
        let s = standard_sweepout("latitude-s3", sphere(9), 4).unwrap();
        assert_eq!(s.slices[0].value(0), &[0.0, 0.0, 0.0, 1.0]);
        let v = s.slices[4].value(5);
        assert!(v[..3].iter().all(|x| x.abs() < 1e-15) && (v[3] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn latitude_has_degree_one() {
        let s = standard_sweepout("latitude-S3", sphere(33), 32).unwrap();
        assert_eq!(s.degree, 1);
        let d = numerical_degree(&s).unwrap();
        assert!((d - 1.0).abs() < 0.01, "{d}");
    }

    #[test]
    fn reversed_latitude_has_degree_minus_one() {
        let mut s = standard_sweepout("latitude-S3", sphere(33), 32).unwrap();
        s.slices.reverse();
        let d = numerical_degree(&s).unwrap();
        assert!((d + 1.0).abs() < 0.01, "{d}");
    }

    #[test]
    fn perturbation_keeps_degree_and_adds_energy() {
        let d = sphere(65);
        let s = standard_sweepout("perturbed-latitude-S3", d.clone(), 32).unwrap();
        let plain = standard_sweepout("latitude-S3", d, 32).unwrap();
        assert!(width_estimate(&s).w_e > width_estimate(&plain).w_e);
        let deg = numerical_degree(&s).unwrap();
        assert!((deg - 1.0).abs() < 0.01, "{deg}");
    }

    #[test]
    fn constant_sweepout_has_zero_width() {
        let s = standard_sweepout("constant-S3", sphere(9), 4).unwrap();
        let w = width_estimate(&s);
        assert!(w.w_e < 1e-25 && w.w_a.abs() < 1e-25);
        let (t, rep) = tighten(&s, &TightenSettings::default(), &SolverSettings::default(), None).unwrap();
        assert!(rep.schedule_empty);
        assert!(rep.final_width().w_e < 1e-25);
        assert_eq!(t.slices[2].values, s.slices[2].values);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!(matches!(standard_sweepout("torus", sphere(9), 4), Err(SweepoutError::KindUnknown(_))));
        assert!(matches!(standard_curve_sweepout("torus", 16, 4), Err(SweepoutError::KindUnknown(_))));
    }

    #[test]
    fn non_constant_end_slice_is_rejected() {
        let d = sphere(9);
        let id = DiscreteMap::identity(d.clone()).unwrap();
        let c = DiscreteMap::constant(d, id.target.clone(), &[0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(Sweepout::new("x", vec![c, id], 0), Err(SweepoutError::EndpointNotConstant(1))));
    }

    #[test]
    fn continuity_bound_is_checked() {
        let s = standard_sweepout("latitude-S3", sphere(17), 2).unwrap();
        assert!(matches!(s.check_continuity(0.5), Err(SweepoutError::Discontinuous { .. })));
        let fine = standard_sweepout("latitude-S3", sphere(17), 64).unwrap();
        fine.check_continuity(TightenSettings::default().cont_tol).unwrap();
    }

    #[test]
    fn pruning_drops_an_interval_covered_by_two() {
        let iv = [[0.4, 0.6], [0.3, 0.5], [0.5, 0.7]];
        let keep = prune_intervals(&iv);
        assert_eq!(keep, vec![1, 2]);
    }

    #[test]
    fn pruning_keeps_the_furthest_reaching_overlapper() {
        // Intervals 1..3 start inside interval 0; only the one reaching furthest survives.
        let iv = [[0.0, 0.2], [0.1, 0.3], [0.15, 0.4], [0.18, 0.25]];
        let keep = prune_intervals(&iv);
        assert_eq!(keep, vec![0, 2]);
    }

    #[test]
    fn pruning_ties_prefer_the_smaller_left_endpoint() {
        let iv = [[0.0, 0.2], [0.1, 0.5], [0.15, 0.5]];
        assert_eq!(prune_intervals(&iv), vec![0, 1]);
    }

    fn union_covers(iv: &[[f64; 2]], keep: &[usize], t: f64) -> bool {
        keep.iter().any(|&k| contains(iv[k], t))
    }

    proptest! {
        #[test]
        fn pruned_cover_is_thin_and_still_covers(
            raw in proptest::collection::vec((0.0f64..1.0, 0.01f64..0.2), 1..24)
        ) {
            let iv: Vec<[f64; 2]> = raw.iter().map(|&(c, h)| [c - h, c + h]).collect();
            let keep = prune_intervals(&iv);
            let kept: Vec<[f64; 2]> = keep.iter().map(|&k| iv[k]).collect();
            prop_assert!(is_thin_cover(&kept));
            for k in 0..=400 {
                let t = -0.2 + 1.4 * k as f64 / 400.0;
                prop_assert!(union_covers(&iv, &(0..iv.len()).collect::<Vec<_>>(), t) == union_covers(&iv, &keep, t));
            }
            let env = envelopes_for(&kept);
            for k in 0..=1000 {
                let t = -0.2 + 1.4 * k as f64 / 1000.0;
                let n = env.iter().filter(|e| e.eval(t) > 0.0).count();
                prop_assert!(n <= 2);
                for (e, i) in env.iter().zip(&kept) {
                    if contains(*i, t) {
                        prop_assert!(e.eval(t) == 1.0);
                    }
                    let h = 0.5 * (i[1] - i[0]);
                    if t <= i[0] - h || t >= i[1] + h {
                        prop_assert!(e.eval(t) == 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn envelope_is_continuous_trapezoid() {
        let e = Envelope { lo: 0.1, a: 0.2, b: 0.3, hi: 0.5 };
        assert_eq!(e.eval(0.05), 0.0);
        assert!((e.eval(0.15) - 0.5).abs() < 1e-12);
        assert_eq!(e.eval(0.25), 1.0);
        assert!((e.eval(0.4) - 0.5).abs() < 1e-12);
        assert_eq!(e.eval(0.5), 0.0);
    }

    #[test]
    fn empty_schedule_is_identity() {
        let s = standard_sweepout("latitude-S3", sphere(9), 4).unwrap();
        let (t, rep) = tighten_once(&s, &BallSchedule::empty(), &SolverSettings::default());
        assert_eq!(rep.total_drop, 0.0);
        for (a, b) in s.slices.iter().zip(&t.slices) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn single_bump_gives_one_family_around_the_middle() {
        let d = sphere(33);
        let bump = TwistBump { center: [0.0, 0.0, -1.0], width: 0.35, amplitude: 2.0, t_center: 0.5, t_width: 0.1 };
        let s = twisted_latitude(d, 16, &[bump]).unwrap();
        // Roomy threshold so a ball holding the whole twist qualifies on this coarse grid;
        // the tolerance exempts the small shrinking gains of the plain latitudes.
        let solver = SolverSettings { eps1: 4.0, ..SolverSettings::default() };
        let ts = TightenSettings { harmonic_tol: 5e-3, ..TightenSettings::default() };
        let sched = select_ball_schedule(&s, &solver, &ts).unwrap();
        let holding: Vec<usize> = (0..sched.len()).filter(|&j| contains(sched.intervals[j], 0.5)).collect();
        assert_eq!(holding.len(), 1, "{:?}", sched.intervals);
        assert_eq!(sched.sources[holding[0]], 8);
        // Every family comes from a slice where the twist is active.
        assert!(sched.sources.iter().all(|&i| (7..=9).contains(&i)), "{:?}", sched.sources);
        assert!(sched.max_active(160) <= 2);
    }

    #[test]
    fn one_pass_lowers_every_touched_slice_and_keeps_the_ends() {
        let d = sphere(33);
        let bump = TwistBump { center: [0.0, 0.0, -1.0], width: 0.35, amplitude: 2.0, t_center: 0.5, t_width: 0.3 };
        let s = twisted_latitude(d, 16, &[bump]).unwrap();
        let solver = SolverSettings { eps1: 2.0, ..SolverSettings::default() };
        let ts = TightenSettings::default();
        let sched = select_ball_schedule(&s, &solver, &ts).unwrap();
        let before = width_estimate(&s);
        let (t, rep) = tighten_once(&s, &sched, &solver);
        let after = width_estimate(&t);
        assert!(after.w_e < before.w_e);
        for i in 0..=16 {
            assert!(after.energies[i] <= before.energies[i] + 1e-12);
            if rep.slice_drops[i] == 0.0 {
                assert_eq!(t.slices[i].values, s.slices[i].values);
            }
        }
        assert_eq!(t.slices[0].values, s.slices[0].values);
        assert_eq!(t.slices[16].values, s.slices[16].values);
        assert!(rep.max_family_energy < solver.eps1 / 3.0);
    }

    #[test]
    fn identity_is_almost_harmonic() {
        // The discrete identity is harmonic only up to O(h²): the gap shrinks
        // about fourfold per refinement and E - A is a chord effect of the same order.
        let gap = |n| {
            let u = DiscreteMap::identity(sphere(n)).unwrap();
            almost_harmonic_check(&u, 0.5, 16, &SolverSettings::default()).unwrap()
        };
        let (c, f) = (gap(33), gap(65));
        assert!(c.evaluated > 0);
        assert!(f.max_residual_gap < 0.35 * c.max_residual_gap, "{} {}", c.max_residual_gap, f.max_residual_gap);
        assert!(f.max_residual_gap < 1e-5);
        assert!(f.energy_minus_area.abs() < 0.3 * c.energy_minus_area.abs());
    }

    #[test]
    fn constant_map_is_almost_harmonic_exactly() {
        let d = sphere(17);
        let id = DiscreteMap::identity(d.clone()).unwrap();
        let u = DiscreteMap::constant(d, id.target.clone(), &[1.0, 0.0, 0.0]).unwrap();
        let chk = almost_harmonic_check(&u, 0.5, 16, &SolverSettings::default()).unwrap();
        assert!(chk.max_residual_gap < 1e-25);
        assert!(chk.energy_minus_area.abs() < 1e-25);
    }

    #[test]
    fn container_round_trip() {
        let s = standard_sweepout("latitude-S3", sphere(9), 4).unwrap();
        let dir = std::env::temp_dir().join(format!("widthlab-sweepout-{}", std::process::id()));
        write_sweepout(&s, &dir).unwrap();
        let r = read_sweepout(&dir).unwrap();
        assert_eq!(r.label, s.label);
        assert_eq!(r.degree, 1);
        for (a, b) in s.slices.iter().zip(&r.slices) {
            assert_eq!(a.values, b.values);
        }
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn iteration_csv_has_header_and_rows() {
        let s = standard_sweepout("constant-S3", sphere(9), 4).unwrap();
        let (_, rep) = tighten(&s, &TightenSettings::default(), &SolverSettings::default(), None).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,W_E,W_A,argmax_t,total_drop\n0,"));
    }

    #[test]
    fn birkhoff_keeps_the_great_circle() {
        let c = standard_curve_sweepout("curve-latitude-S2", 128, 32).unwrap();
        let (out, rep) = birkhoff_tighten(&c, 16, 50, 1e-9).unwrap();
        let l = *rep.max_lengths.last().unwrap();
        assert!((l - 2.0 * PI).abs() < 0.01 * 2.0 * PI, "{l}");
        assert!(curve_length(&out.slices[8]) < curve_length(&c.slices[8]));
    }

    #[test]
    fn birkhoff_on_point_curves_is_zero() {
        let c = standard_curve_sweepout("curve-constant-S2", 32, 8).unwrap();
        let (_, rep) = birkhoff_tighten(&c, 8, 5, 1e-9).unwrap();
        assert_eq!(*rep.max_lengths.last().unwrap(), 0.0);
    }

    #[test]
    fn birkhoff_max_length_decreases_on_perturbed_latitudes() {
        let c = standard_curve_sweepout("curve-perturbed-latitude-S2", 128, 32).unwrap();
        let (_, rep) = birkhoff_tighten(&c, 16, 40, 1e-10).unwrap();
        assert!(rep.max_lengths[0] > 2.0 * PI * 1.02);
        for w in rep.max_lengths.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!((rep.max_lengths.last().unwrap() - 2.0 * PI).abs() < 0.01 * 2.0 * PI);
    }

    #[test]
    fn birkhoff_rejects_odd_arc_counts() {
        let c = standard_curve_sweepout("curve-latitude-S2", 30, 4).unwrap();
        assert!(birkhoff_tighten(&c, 5, 5, 1e-9).is_err());
    }
}
