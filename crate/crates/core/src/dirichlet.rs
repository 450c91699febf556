//! Harmonic replacement: manifold-constrained Dirichlet solves on balls.
//!
//! The discrete energy is `½ Σ_e c_e |u_i - u_j|²` over mesh edges with
//! cotangent weights `c_e`. Fixing every node but `p`, the energy is
//! `½ S |u_p|² - <u_p, b> + const` with `S = Σ c_pq` and `b = Σ c_pq u_q`, so the
//! nodewise minimizer on a round sphere is `r b / |b|` and on an affine target
//! the projection of `b / S`. The solver sweeps these updates in node order with
//! optional over-relaxation that is only accepted when it lowers the local energy.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmap::{Ball, BallFamily, DiscreteMap, DmapError, Domain, DomainKind, CHART_N, CHART_S, MAX_AMBIENT};
use crate::manifold::ManifoldKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirichletError {
    #[error("no convergence after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("region energy {energy} exceeds the small-energy limit {limit}")]
    EnergyTooLarge { energy: f64, limit: f64 },
    #[error("balls of the family are not pairwise disjoint")]
    OverlapViolation,
    #[error("maps differ outside the region (largest difference {0:e})")]
    BoundaryMismatch(f64),
    #[error(transparent)]
    Dmap(#[from] DmapError),
}

/// Settings shared by every Dirichlet solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// A solve stops once one sweep changes the region energy by at most this
    /// fraction and the largest tangential force is at most this value.
    pub residual_tol: f64,
    pub max_sweeps: usize,
    /// Relative overlap of the ball pairs built by [`pair_cover`].
    pub schwarz_overlap: f64,
    /// Small-energy threshold below which solves are unique.
    pub eps1: f64,
    /// Over-relaxation factor; `None` picks one from the ball size.
    pub omega: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { residual_tol: 1e-8, max_sweeps: 10_000, schwarz_overlap: 0.25, eps1: DEFAULT_EPS1, omega: None }
    }
}

/// Calibrated small-energy threshold for the unit-sphere target at the default grid.
pub const DEFAULT_EPS1: f64 = 0.5;

impl SolverSettings {
    pub fn validate(&self) -> Result<(), DirichletError> {
        let bad = |m: &str| Err(DirichletError::Dmap(DmapError::InvalidArgument(m.into())));
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol must be positive");
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive");
        }
        if !(self.schwarz_overlap > 0.0 && self.schwarz_overlap < 1.0) {
            return bad("schwarz_overlap must lie in (0, 1)");
        }
        if !(self.eps1 > 0.0) {
            return bad("eps1 must be positive");
        }
        if let Some(w) = self.omega {
            if !(w > 0.0 && w < 2.0) {
                return bad("omega must lie in (0, 2)");
            }
        }
        Ok(())
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.residual_tol = tol;
        self
    }
}

/// A Dirichlet problem on a union of balls. `map` carries the trace outside
/// the region and the initial guess inside it.
#[derive(Debug, Clone)]
pub struct DirichletProblem {
    pub region: BallFamily,
    pub map: DiscreteMap,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub map: DiscreteMap,
    pub sweeps: usize,
    /// Largest tangential part of the discrete Laplacian over free nodes.
    pub residual: f64,
    pub converged: bool,
    /// Energy of the triangles touching free nodes, before and after.
    pub energy_before: f64,
    pub energy_after: f64,
}

impl Solution {
    /// Turns an unconverged solve into an error.
    pub fn require_converged(self) -> Result<Self, DirichletError> {
        if self.converged {
            Ok(self)
        } else {
            Err(DirichletError::NoConvergence { sweeps: self.sweeps, residual: self.residual })
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplacementResult {
    pub map: DiscreteMap,
    pub energy_drop: f64,
    pub residual: f64,
    pub sweeps_used: usize,
    pub converged: bool,
}

/// Interior nodes of the domain lying in the region, in increasing order.
pub fn free_nodes(dom: &Domain, region: &BallFamily) -> Vec<usize> {
    (0..dom.num_nodes()).filter(|&i| !dom.boundary[i] && region.contains_node(dom, i)).collect()
}

fn default_omega(dom: &Domain, region: &BallFamily) -> f64 {
    let h = match dom.kind {
        DomainKind::Sphere { n } => 2.0 * crate::dmap::SPHERE_CHART_HALF_WIDTH / (n as f64 - 1.0),
        _ => dom.grid_spacing(),
    };
    let r = region.balls.iter().map(|b| b.radius).fold(0.0, f64::max);
    let m = (2.0 * r / h).max(1.0);
    2.0 / (1.0 + (PI / (m + 1.0)).sin())
}

struct SweepStats {
    sweeps: usize,
    residual: f64,
    converged: bool,
}

/// Local energy `½ S |x|² - <x, b>` up to a node-independent constant.
#[inline]
/// `½ S |x|² - <x, b>` up to the constant `|b|²/(2S)`, written as
/// `½ S |x - b/S|²` so that gains near the minimizer are not lost to rounding.
fn local_energy(s: f64, x: &[f64], b: &[f64]) -> f64 {
    let mut q = 0.0;
    for k in 0..x.len() {
        let d = x[k] - b[k] / s;
        q += d * d;
    }
    0.5 * s * q
}

/// Weighted neighbor sum `b` and total weight `S` of node `p`.
#[inline]
fn neighbor_sum(u: &DiscreteMap, p: usize, b: &mut [f64]) -> f64 {
    let d = b.len();
    let (nb, w) = u.domain.adj.row(p);
    b.iter_mut().for_each(|x| *x = 0.0);
    let mut s = 0.0;
    for (&q, &c) in nb.iter().zip(w) {
        s += c;
        let uq = &u.values[q * d..(q + 1) * d];
        for k in 0..d {
            b[k] += c * uq[k];
        }
    }
    s
}

/// Nodewise energy minimizer on the target, if one is available in closed form
/// or by projection.
#[inline]
fn nodewise_minimizer(u: &DiscreteMap, s: f64, b: &[f64], out: &mut [f64]) -> bool {
    match &u.target.kind {
        ManifoldKind::RoundSphere { radius, .. } => {
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(nb > 1e-300) {
                return false;
            }
            for k in 0..b.len() {
                out[k] = radius * b[k] / nb;
            }
            true
        }
        _ => {
            if !(s > 0.0) {
                return false;
            }
            let mut avg = [0.0; MAX_AMBIENT];
            for k in 0..b.len() {
                avg[k] = b[k] / s;
            }
            u.target.project_into(&avg[..b.len()], out).is_ok()
        }
    }
}

/// Largest tangential force `|P_T(b - S u_p)|` over the given nodes.
pub fn tangential_residual(u: &DiscreteMap, nodes: &[usize]) -> f64 {
    let d = u.dim();
    let mut b = [0.0; MAX_AMBIENT];
    let mut t = [0.0; MAX_AMBIENT];
    let mut worst: f64 = 0.0;
    for &p in nodes {
        let s = neighbor_sum(u, p, &mut b[..d]);
        let up = u.value(p);
        for k in 0..d {
            b[k] -= s * up[k];
        }
        u.target.tangential_part(up, &b[..d], &mut t[..d]);
        worst = worst.max(t[..d].iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    worst
}

/// Energy of the triangles touching any of `nodes`: the part of the total
/// energy a solve on those nodes can change.
fn star_energy(u: &DiscreteMap, nodes: &[usize]) -> f64 {
    let dom = &u.domain;
    let mut seen = vec![false; dom.tris.len()];
    let mut tris = Vec::new();
    for &p in nodes {
        for &t in dom.node_tris.row(p).0 {
            if !seen[t] {
                seen[t] = true;
                tris.push(t);
            }
        }
    }
    u.energy_on(&tris)
}

fn sweep(u: &mut DiscreteMap, free: &[usize], s: &SolverSettings, omega: f64, energy0: f64) -> SweepStats {
    let d = u.dim();
    let mut b = [0.0; MAX_AMBIENT];
    let mut gs = [0.0; MAX_AMBIENT];
    let mut sor = [0.0; MAX_AMBIENT];
    let mut old = [0.0; MAX_AMBIENT];
    let mut energy = energy0;
    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    let exact = !matches!(u.target.kind, ManifoldKind::Ellipsoid { .. });
    while sweeps < s.max_sweeps {
        sweeps += 1;
        let mut change = 0.0;
        for &p in free {
            let sw = neighbor_sum(u, p, &mut b[..d]);
            old[..d].copy_from_slice(u.value(p));
            if !nodewise_minimizer(u, sw, &b[..d], &mut gs[..d]) {
                continue;
            }
            let l_old = local_energy(sw, &old[..d], &b[..d]);
            // The closed-form minimizers are exact; their local energy test
            // would only reject gains below rounding.
            let mut l_new = local_energy(sw, &gs[..d], &b[..d]).min(if exact { l_old } else { f64::INFINITY });
            if l_new > l_old {
                continue;
            }
            let mut pick = &gs;
            if omega != 1.0 {
                for k in 0..d {
                    sor[k] = old[k] + omega * (gs[k] - old[k]);
                }
                let mut proj = [0.0; MAX_AMBIENT];
                if u.target.project_into(&sor[..d], &mut proj[..d]).is_ok() {
                    let l_sor = local_energy(sw, &proj[..d], &b[..d]);
                    if l_sor <= l_old {
                        sor = proj;
                        l_new = l_sor;
                        pick = &sor;
                    }
                }
            }
            u.value_mut(p).copy_from_slice(&pick[..d]);
            change += l_old - l_new;
        }
        energy -= change;
        if change <= s.residual_tol * energy.max(0.0) || change <= 1e-300 {
            residual = tangential_residual(u, free);
            if residual <= s.residual_tol {
                return SweepStats { sweeps, residual, converged: true };
            }
        }
    }
    if residual.is_infinite() {
        residual = tangential_residual(u, free);
    }
    SweepStats { sweeps, residual, converged: residual <= s.residual_tol }
}

/// Solves on an explicit node set without energy checks.
fn solve_nodes(u: &mut DiscreteMap, free: &[usize], s: &SolverSettings, omega: f64) -> SweepStats {
    if free.is_empty() {
        return SweepStats { sweeps: 0, residual: 0.0, converged: true };
    }
    let e0 = star_energy(u, free);
    sweep(u, free, s, omega, e0)
}

/// Projected nonlinear Gauss-Seidel on the region's interior nodes. An
/// unconverged solve returns its last (lowest-energy) iterate with
/// `converged = false`.
pub fn solve_dirichlet(p: DirichletProblem, s: &SolverSettings) -> Result<Solution, DirichletError> {
    s.validate()?;
    let DirichletProblem { region, mut map } = p;
    let e = map.energy(Some(&region));
    if e > s.eps1 {
        return Err(DirichletError::EnergyTooLarge { energy: e, limit: s.eps1 });
    }
    let free = free_nodes(&map.domain, &region);
    let omega = s.omega.unwrap_or_else(|| default_omega(&map.domain, &region));
    let energy_before = star_energy(&map, &free);
    let st = solve_nodes(&mut map, &free, s, omega);
    let energy_after = star_energy(&map, &free);
    Ok(Solution { map, sweeps: st.sweeps, residual: st.residual, converged: st.converged, energy_before, energy_after })
}

/// Solves on every interior node of the domain (cylinder and disk maps with
/// prescribed boundary values). No small-energy check: the caller keeps the
/// data in the regime where the solve is unique.
pub fn solve_interior(map: DiscreteMap, s: &SolverSettings) -> Result<Solution, DirichletError> {
    let free: Vec<usize> = (0..map.domain.num_nodes()).filter(|&i| !map.domain.boundary[i]).collect();
    solve_free(map, &free, s)
}

/// Solves on an explicit set of free nodes, all others held fixed. Same
/// caveat as [`solve_interior`].
pub fn solve_free(mut map: DiscreteMap, free: &[usize], s: &SolverSettings) -> Result<Solution, DirichletError> {
    s.validate()?;
    let dom = map.domain.clone();
    let omega = s.omega.unwrap_or_else(|| interior_omega(&dom));
    let energy_before = star_energy(&map, free);
    let st = solve_nodes(&mut map, free, s, omega);
    let energy_after = star_energy(&map, free);
    Ok(Solution { map, sweeps: st.sweeps, residual: st.residual, converged: st.converged, energy_before, energy_after })
}

fn interior_omega(dom: &Domain) -> f64 {
    let m = match dom.kind {
        DomainKind::Cylinder { n_t, n_theta, .. } => (n_t.min(n_theta / 2)) as f64,
        DomainKind::Disk { n, .. } => n as f64,
        DomainKind::Sphere { n } => n as f64,
    };
    2.0 / (1.0 + (PI / (m + 1.0)).sin())
}

/// Componentwise harmonic extension of the trace into the region, projected
/// back onto the target. A starting guess independent of the current interior.
pub fn boundary_harmonic_extension(u: &DiscreteMap, region: &BallFamily, s: &SolverSettings) -> Result<DiscreteMap, DirichletError> {
    let flat = Arc::new(crate::manifold::EmbeddedManifold::affine(u.dim(), u.dim()).map_err(DmapError::from)?);
    let mut lin = DiscreteMap::from_values(u.domain.clone(), flat, u.values.clone())?;
    let free = free_nodes(&u.domain, region);
    let omega = s.omega.unwrap_or_else(|| default_omega(&u.domain, region));
    solve_nodes(&mut lin, &free, s, omega);
    let mut out = u.clone();
    let d = u.dim();
    for &p in &free {
        u.target.project_into(lin.value(p), &mut out.values[p * d..(p + 1) * d]).map_err(DmapError::TubeEscape)?;
    }
    Ok(out)
}

/// `H(u, ρ·fam)`: `u` outside the shrunken balls, the energy minimizer with the
/// same trace inside them. The family energy must be at most `ε₁/3`.
pub fn harmonic_replace(u: &DiscreteMap, fam: &BallFamily, rho: f64, s: &SolverSettings) -> Result<ReplacementResult, DirichletError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(DmapError::InvalidArgument(format!("shrink factor {rho} outside (0, 1]")).into());
    }
    let fam = fam.scaled(rho);
    if !fam.is_disjoint(&u.domain) {
        return Err(DirichletError::OverlapViolation);
    }
    let e = u.energy(Some(&fam));
    if e > s.eps1 / 3.0 {
        return Err(DirichletError::EnergyTooLarge { energy: e, limit: s.eps1 / 3.0 });
    }
    replace_within(u, &fam, s)
}

/// Replacement without the family-energy hypothesis; each ball must still
/// carry at most `ε₁`.
pub(crate) fn replace_within(u: &DiscreteMap, fam: &BallFamily, s: &SolverSettings) -> Result<ReplacementResult, DirichletError> {
    s.validate()?;
    for b in &fam.balls {
        let e = u.energy(Some(&BallFamily::single(*b)));
        if e > s.eps1 {
            return Err(DirichletError::EnergyTooLarge { energy: e, limit: s.eps1 });
        }
    }
    let free = free_nodes(&u.domain, fam);
    let mut map = u.clone();
    let before = star_energy(u, &free);
    let omega = s.omega.unwrap_or_else(|| default_omega(&u.domain, fam));
    let st = solve_nodes(&mut map, &free, s, omega);
    let after = star_energy(&map, &free);
    Ok(ReplacementResult { map, energy_drop: before - after, residual: st.residual, sweeps_used: st.sweeps, converged: st.converged })
}

/// `∫|∇u|² - ∫|∇v|² - ½∫|∇u - ∇v|²` for maps agreeing outside the region.
pub fn convexity_gap(u: &DiscreteMap, v: &DiscreteMap, region: &BallFamily) -> Result<f64, DirichletError> {
    if !u.same_domain(v) {
        return Err(DmapError::DomainMismatch.into());
    }
    let free = free_nodes(&u.domain, region);
    let mut inside = vec![false; u.domain.num_nodes()];
    for &p in &free {
        inside[p] = true;
    }
    let d = u.dim();
    let mut worst: f64 = 0.0;
    for i in 0..u.domain.num_nodes() {
        if !inside[i] {
            for k in 0..d {
                worst = worst.max((u.values[i * d + k] - v.values[i * d + k]).abs());
            }
        }
    }
    if worst > 0.0 {
        return Err(DirichletError::BoundaryMismatch(worst));
    }
    let eu = star_energy(u, &free);
    let ev = star_energy(v, &free);
    let g = u.gradient_distance_sq(v, None)?;
    Ok(2.0 * (eu - ev) - 0.5 * g)
}

/// Both sides of the patching inequalities for one map and two families.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    /// `E(u) - E(H(u, f1, f2))`.
    pub lhs: f64,
    /// `(E(u) - E(H(u, ½ f2)))²`.
    pub rhs_core: f64,
    /// `lhs / rhs_core`, absent when both vanish.
    pub kappa_hat: Option<f64>,
    pub lhs_nonnegative: bool,
    pub second: Vec<SecondGap>,
}

/// One `μ` instance of the second patching inequality:
/// `√a / κ + b ≥ c` with `a = E(u) - E(H(u,f1))`, `b = E(u) - E(H(u, 2μ f2))`
/// and `c = E(H(u,f1)) - E(H(u, f1, μ f2))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecondGap {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Largest `κ` for which the inequality holds; infinite when `c ≤ b`.
    pub kappa_max: f64,
}

pub fn replacement_gap_report(u: &DiscreteMap, f1: &BallFamily, f2: &BallFamily, s: &SolverSettings) -> Result<GapReport, DirichletError> {
    let e = u.energy(None);
    let h1 = harmonic_replace(u, f1, 1.0, s)?;
    let e1 = h1.map.energy(None);
    let h12 = harmonic_replace(&h1.map, f2, 1.0, s)?;
    let lhs = e - h12.map.energy(None);
    let h_half = harmonic_replace(u, f2, 0.5, s)?;
    let core = e - h_half.map.energy(None);
    let rhs_core = core * core;
    let kappa_hat = if rhs_core > 0.0 { Some(lhs / rhs_core) } else { None };
    let mut second = Vec::new();
    for mu in [0.125, 0.25, 0.5] {
        let a = e - e1;
        let b = e - harmonic_replace(u, f2, 2.0 * mu, s)?.map.energy(None);
        let c = e1 - harmonic_replace(&h1.map, f2, mu, s)?.map.energy(None);
        let kappa_max = if c > b { a.max(0.0).sqrt() / (c - b) } else { f64::INFINITY };
        second.push(SecondGap { mu, a, b, c, kappa_max });
    }
    Ok(GapReport { lhs, rhs_core, kappa_hat, lhs_nonnegative: lhs >= -s.residual_tol, second })
}

/// Two balls covering `b`, offset along the first coordinate, whose lens of
/// overlap has relative width `overlap`.
pub fn pair_cover(b: &Ball, overlap: f64) -> [Ball; 2] {
    let off = 0.5 * b.radius * (1.0 - overlap);
    let rad = (b.radius * b.radius + off * off).sqrt();
    [Ball::new(b.chart, [b.center[0] - off, b.center[1]], rad), Ball::new(b.chart, [b.center[0] + off, b.center[1]], rad)]
}

#[derive(Debug, Clone)]
pub struct SchwarzReport {
    pub map: DiscreteMap,
    pub cycles: usize,
    /// Residual over the union after each cycle.
    pub residuals: Vec<f64>,
    /// Geometric mean of successive residual ratios.
    pub rate: f64,
    pub converged: bool,
}

/// Cyclic solves over overlapping balls until the residual on their union
/// falls below the tolerance.
pub fn schwarz_alternating(u: &DiscreteMap, cover: &[Ball], s: &SolverSettings) -> Result<SchwarzReport, DirichletError> {
    s.validate()?;
    let union = BallFamily::new(cover.to_vec());
    let all = free_nodes(&u.domain, &union);
    let parts: Vec<(Vec<usize>, f64)> = cover
        .iter()
        .map(|b| {
            let f = BallFamily::single(*b);
            (free_nodes(&u.domain, &f), s.omega.unwrap_or_else(|| default_omega(&u.domain, &f)))
        })
        .collect();
    for b in cover {
        let e = u.energy(Some(&BallFamily::single(*b)));
        if e > s.eps1 {
            return Err(DirichletError::EnergyTooLarge { energy: e, limit: s.eps1 });
        }
    }
    // Subsolves run a little tighter than the outer tolerance.
    let inner = SolverSettings { residual_tol: 0.1 * s.residual_tol, ..s.clone() };
    let mut map = u.clone();
    let mut residuals = Vec::new();
    let max_cycles = s.max_sweeps.min(1000);
    let mut converged = false;
    while residuals.len() < max_cycles {
        for (free, omega) in &parts {
            solve_nodes(&mut map, free, &inner, *omega);
        }
        let r = tangential_residual(&map, &all);
        residuals.push(r);
        if r <= s.residual_tol {
            converged = true;
            break;
        }
    }
    let rate = geometric_rate(&residuals);
    Ok(SchwarzReport { map, cycles: residuals.len(), residuals, rate, converged })
}

fn geometric_rate(r: &[f64]) -> f64 {
    let pairs: Vec<f64> = r.windows(2).filter(|w| w[0] > 0.0 && w[1] > 0.0).map(|w| (w[1] / w[0]).ln()).collect();
    if pairs.is_empty() {
        0.0
    } else {
        (pairs.iter().sum::<f64>() / pairs.len() as f64).exp()
    }
}

/// Result of the energy-improvement sampler.
#[derive(Debug, Clone)]
pub struct Improvement {
    pub value: f64,
    pub best: Option<BallFamily>,
    pub evaluated: usize,
}

/// Dyadic radii used by the sampler, largest first.
fn sampler_radii(dom: &Domain) -> Vec<f64> {
    let top = match dom.kind {
        DomainKind::Sphere { .. } => 0.5,
        DomainKind::Disk { radius, .. } => 0.5 * radius,
        DomainKind::Cylinder { t0, t1, .. } => 0.5 * (t1 - t0).min(PI),
    };
    (0..4).map(|k| top / f64::powi(2.0, k)).collect()
}

/// Candidate families in a fixed order: density-guided proposals first, then
/// a lattice of single balls (chart 0 before chart 1, lexicographic centers,
/// decreasing radii). Does not depend on `ε`, so the sampled sup is monotone
/// in `ε` and in the budget.
pub fn improvement_candidates(u: &DiscreteMap, budget: usize) -> Vec<BallFamily> {
    let dom = &u.domain;
    let radii = sampler_radii(dom);
    let mut out: Vec<BallFamily> = Vec::new();

    // Up to four well-separated peaks of the density smoothed over a few
    // rings, so that ring-shaped concentrations are centered.
    let dens = smoothed_density(u, 3);
    let mut order: Vec<usize> = (0..dom.num_nodes()).collect();
    order.sort_by(|&a, &b| dens[b].partial_cmp(&dens[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut peaks: Vec<Ball> = Vec::new();
    for &i in &order {
        if peaks.len() == 4 || dens[i] <= 0.0 {
            break;
        }
        let nd = &dom.nodes[i];
        let probe = Ball::new(nd.chart, nd.coord, radii[0]);
        if peaks.iter().all(|p| crate::dmap::balls_disjoint(dom, p, &probe)) {
            peaks.push(probe);
        }
    }
    let fine: Vec<f64> = (0..7).map(|k| radii[0] * f64::powf(2.0, -0.5 * k as f64)).collect();
    for &r in &fine {
        for p in &peaks {
            out.push(BallFamily::single(Ball::new(p.chart, p.center, r)));
        }
        let fam = BallFamily::new(peaks.iter().map(|p| Ball::new(p.chart, p.center, r)).collect());
        if fam.balls.len() > 1 && fam.is_disjoint(dom) {
            out.push(fam);
        }
    }

    let lattice: Vec<(u8, [f64; 2])> = match dom.kind {
        DomainKind::Sphere { .. } => {
            let mut v = Vec::new();
            for chart in [CHART_S, CHART_N] {
                for i in 0..5 {
                    for j in 0..5 {
                        let c = [-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64];
                        if c[0] * c[0] + c[1] * c[1] <= 1.0 {
                            v.push((chart, c));
                        }
                    }
                }
            }
            v
        }
        DomainKind::Disk { radius, .. } => {
            let mut v = Vec::new();
            for i in 0..5 {
                for j in 0..5 {
                    let c = [radius * (-1.0 + 0.5 * i as f64), radius * (-1.0 + 0.5 * j as f64)];
                    if c[0] * c[0] + c[1] * c[1] < radius * radius {
                        v.push((0, c));
                    }
                }
            }
            v
        }
        DomainKind::Cylinder { t0, t1, .. } => {
            let mut v = Vec::new();
            for i in 1..4 {
                for j in 0..8 {
                    v.push((0, [t0 + (t1 - t0) * i as f64 / 4.0, 2.0 * PI * j as f64 / 8.0]));
                }
            }
            v
        }
    };
    for (chart, c) in lattice {
        for &r in &radii {
            out.push(BallFamily::single(Ball::new(chart, c, r)));
        }
    }
    out.truncate(budget);
    out
}

fn smoothed_density(u: &DiscreteMap, passes: usize) -> Vec<f64> {
    let mut d = u.energy_density();
    let dom = &u.domain;
    for _ in 0..passes {
        d = (0..dom.num_nodes())
            .map(|i| {
                let (idx, _) = dom.adj.row(i);
                let s: f64 = idx.iter().map(|&j| d[j]).sum();
                (d[i] + s) / (1 + idx.len()) as f64
            })
            .collect();
    }
    d
}

/// Sampled `sup E(u) - E(H(u, ½ fam))` over candidate families with
/// `E(u; fam) ≤ ε`.
pub fn energy_improvement(u: &DiscreteMap, eps: f64, budget: usize, s: &SolverSettings) -> Result<Improvement, DirichletError> {
    if eps > s.eps1 {
        return Err(DirichletError::EnergyTooLarge { energy: eps, limit: s.eps1 });
    }
    let mut best = Improvement { value: 0.0, best: None, evaluated: 0 };
    for fam in improvement_candidates(u, budget) {
        best.evaluated += 1;
        if u.energy(Some(&fam)) > eps {
            continue;
        }
        let r = replace_within(u, &fam.scaled(0.5), s)?;
        if r.energy_drop > best.value {
            best.value = r.energy_drop;
            best.best = Some(fam);
        }
    }
    Ok(best)
}

/// Appends one row `label,sweeps,residual,energy_drop,converged` to a solve log.
pub fn write_solve_log_row<W: Write>(w: &mut W, label: &str, r: &ReplacementResult) -> std::io::Result<()> {
    writeln!(w, "{label},{},{:.6e},{:.12e},{}", r.sweeps_used, r.residual, r.energy_drop, r.converged)
}

pub const SOLVE_LOG_HEADER: &str = "label,sweeps,residual,energy_drop,converged";

/// Worst outcomes of the uniqueness and convexity suites at one test energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub energy: f64,
    pub instances: usize,
    /// Smallest `convexity_gap` seen.
    pub worst_gap: f64,
    /// Largest `W^{1,2}` distance between solves from different guesses.
    pub worst_uniqueness: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Eps1Calibration {
    pub rows: Vec<CalibrationRow>,
    pub margin: f64,
    /// Largest power of two `p` such that every tested energy up to
    /// `margin * p` passes and some tested energy reaches `margin * p`.
    pub eps1: Option<f64>,
}

/// Empirical calibration of `ε₁` on a sphere domain. For each test energy,
/// random conformal images of the identity are restricted to balls carrying
/// 95% of that energy; the replacement `v` is computed from two starting
/// guesses, and `v` is perturbed by tangential bumps of height 0.01 and 0.05.
/// An energy passes when every gap is at least `-1e-6` and the two solves agree
/// within `1e-6` in `W^{1,2}`.
pub fn calibrate_eps1(domain: Arc<Domain>, energies: &[f64], bases: usize, bumps: usize, margin: f64, seed: u64) -> Result<Eps1Calibration, DirichletError> {
    use rand::{Rng, SeedableRng};
    if !domain.is_sphere() {
        return Err(DmapError::InvalidArgument("calibration runs on a sphere domain".into()).into());
    }
    let tol = 1e-6;
    let id = DiscreteMap::identity(domain.clone())?;
    let target = id.target.clone();
    let mut rows = Vec::new();
    for &eps in energies {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = SolverSettings { eps1: eps, residual_tol: 1e-12, max_sweeps: 50_000, ..SolverSettings::default() };
        let mut row = CalibrationRow { energy: eps, instances: 0, worst_gap: f64::INFINITY, worst_uniqueness: 0.0, passes: true };
        for _ in 0..bases {
            let pre = Ball::new(CHART_S, [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)], rng.gen_range(0.6..1.0));
            let cd = crate::dmap::conformal_dilation(&pre);
            let base = crate::dmap::compose_with_sphere_map(&id, |x| cd.apply(x))?;
            let center = [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)];
            let Some(region) = ball_with_energy(&base, center, 0.95 * eps) else { continue };
            let sol = solve_dirichlet(DirichletProblem { region: region.clone(), map: base.clone() }, &s)?;
            // The extension can leave the tube when the trace winds around the
            // target; the constant-interior guess is used then.
            let guess = match boundary_harmonic_extension(&base, &region, &s) {
                Ok(g) => g,
                Err(DirichletError::Dmap(DmapError::TubeEscape(_))) => flattened_interior(&base, &region),
                Err(e) => return Err(e),
            };
            let mut other = guess;
            let free = free_nodes(&domain, &region);
            let omega = default_omega(&domain, &region);
            solve_nodes(&mut other, &free, &s, omega);
            let v = sol.map;
            row.worst_uniqueness = row.worst_uniqueness.max(v.gradient_distance_sq(&other, None)?.sqrt());
            if free.is_empty() {
                continue;
            }
            for _ in 0..bumps {
                let c = free[rng.gen_range(0..free.len())];
                let width = rng.gen_range(0.3..1.0) * region.balls[0].radius;
                let dir = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                for h in [0.01, 0.05] {
                    let mut u = v.clone();
                    let cc = domain.node_coord_in(c, CHART_S).unwrap_or(domain.nodes[c].coord);
                    for &p in &free {
                        let Some(z) = domain.node_coord_in(p, CHART_S) else { continue };
                        let r2 = ((z[0] - cc[0]).powi(2) + (z[1] - cc[1]).powi(2)) / (width * width);
                        if r2 >= 1.0 {
                            continue;
                        }
                        let phi = h * (1.0 - r2).powi(2);
                        let x: Vec<f64> = (0..3).map(|k| v.value(p)[k] + phi * dir[k]).collect();
                        target.project_into(&x, u.value_mut(p)).map_err(DmapError::TubeEscape)?;
                    }
                    row.worst_gap = row.worst_gap.min(convexity_gap(&u, &v, &region)?);
                    row.instances += 1;
                }
            }
        }
        row.passes = row.instances > 0 && row.worst_gap >= -tol && row.worst_uniqueness <= tol;
        rows.push(row);
    }
    let mut eps1 = None;
    for k in -8..=4 {
        let p = f64::powi(2.0, k);
        let top = margin * p;
        let tested = rows.iter().any(|r| r.energy >= top);
        if tested && rows.iter().filter(|r| r.energy <= top).all(|r| r.passes) {
            eps1 = Some(p);
        }
    }
    Ok(Eps1Calibration { rows, margin, eps1 })
}

/// `u` with every free node of the region moved to the value at the first one.
fn flattened_interior(u: &DiscreteMap, region: &BallFamily) -> DiscreteMap {
    let free = free_nodes(&u.domain, region);
    let mut out = u.clone();
    if let Some(&f) = free.first() {
        let v = u.value(f).to_vec();
        for &p in &free {
            out.value_mut(p).copy_from_slice(&v);
        }
    }
    out
}

/// Chart-S ball at `center` whose energy is `target` (bisection on the radius).
fn ball_with_energy(u: &DiscreteMap, center: [f64; 2], target: f64) -> Option<BallFamily> {
    let e = |r: f64| u.energy(Some(&BallFamily::single(Ball::new(CHART_S, center, r))));
    let (mut lo, mut hi) = (0.0, 1.2 - (center[0].powi(2) + center[1].powi(2)).sqrt());
    if e(hi) < target {
        return None;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if e(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(BallFamily::single(Ball::new(CHART_S, center, lo)))
}
