//! Width decay under Ricci flow on model flows: the scalar-curvature lower
//! bound, the area rate of minimal spheres, and the width differential
//! inequality `dW/dt ≤ -4π + 3W / (4(t + C))` with its integrated form.
//!
//! Model flows are homothetic, `g(t) = s(t) g₁` with `g₁` the unit round
//! metric, so every quantity is available in closed form.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmap::DiscreteMap;
use crate::varifold::{quadratic_form_pairing, VarifoldError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RicciError {
    #[error("the constant C must be positive (got {0})")]
    NonPositiveC(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time {t} outside the flow's interval [0, {t_max})")]
    OutOfRange { t: f64, t_max: f64 },
    #[error(transparent)]
    Varifold(#[from] VarifoldError),
}

/// Lower bound on `min R(t)`. For negative `minR0` this is
/// `1 / (1/minR0 - 2t/3) = -3 / (2(t + C))` with `C = -3/(2 minR0)`;
/// otherwise the minimum is non-decreasing and `minR0` itself is returned.
pub fn scalar_min_bound(min_r0: f64, t: f64) -> f64 {
    if min_r0 < 0.0 {
        1.0 / (1.0 / min_r0 - 2.0 * t / 3.0)
    } else {
        min_r0
    }
}

/// `C = -3 / (2 minR0)` for negative curvature, `None` when any `C > 0` works.
pub fn constant_from_min_r(min_r0: f64) -> Option<f64> {
    (min_r0 < 0.0).then(|| -1.5 / min_r0)
}

/// Upper bound `-4π - (A/2) min R` on the area rate of a minimal sphere
/// (branch points only lower it further and are dropped).
pub fn minimal_sphere_rate(area: f64, min_r: f64) -> f64 {
    -4.0 * PI - 0.5 * area * min_r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFlow {
    /// `s(t) = r₀² - 4t`, `R = 6 / s`.
    RoundS3 { r0: f64 },
    /// Tabulated scale and scalar curvature, linear in `t` between samples.
    /// Ricci is taken isotropic, `Ric = (R/3) g`.
    Tabulated { t: Vec<f64>, scale: Vec<f64>, min_r: Vec<f64> },
}

impl ModelFlow {
    pub fn validate(&self) -> Result<(), RicciError> {
        match self {
            Self::RoundS3 { r0 } if !(*r0 > 0.0) => Err(RicciError::InvalidArgument(format!("r0 must be positive (got {r0})"))),
            Self::Tabulated { t, scale, min_r } => {
                if t.len() < 2 || scale.len() != t.len() || min_r.len() != t.len() {
                    return Err(RicciError::InvalidArgument("tabulated flow needs matching columns of length >= 2".into()));
                }
                if t[0] != 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(RicciError::InvalidArgument("tabulated times must start at 0 and increase".into()));
                }
                if scale.iter().any(|s| !(*s > 0.0)) {
                    return Err(RicciError::InvalidArgument("tabulated scale must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// End of the interval of definition.
    pub fn t_max(&self) -> f64 {
        match self {
            Self::RoundS3 { r0 } => r0 * r0 / 4.0,
            Self::Tabulated { t, .. } => *t.last().expect("validated"),
        }
    }

    fn check(&self, t: f64) -> Result<(), RicciError> {
        let t_max = self.t_max();
        let inside = match self {
            Self::RoundS3 { .. } => t >= 0.0 && t < t_max,
            Self::Tabulated { .. } => t >= 0.0 && t <= t_max,
        };
        if inside {
            Ok(())
        } else {
            Err(RicciError::OutOfRange { t, t_max })
        }
    }

    fn interp(ts: &[f64], ys: &[f64], t: f64) -> f64 {
        let k = ts.partition_point(|&x| x <= t).clamp(1, ts.len() - 1);
        let w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
        ys[k - 1] + w * (ys[k] - ys[k - 1])
    }

    /// Metric scale `s(t)` with `g(t) = s(t) g₁`.
    pub fn scale(&self, t: f64) -> Result<f64, RicciError> {
        self.check(t)?;
        Ok(match self {
            Self::RoundS3 { r0 } => r0 * r0 - 4.0 * t,
            Self::Tabulated { t: ts, scale, .. } => Self::interp(ts, scale, t),
        })
    }

    pub fn min_r(&self, t: f64) -> Result<f64, RicciError> {
        self.check(t)?;
        Ok(match self {
            Self::RoundS3 { r0 } => 6.0 / (r0 * r0 - 4.0 * t),
            Self::Tabulated { t: ts, min_r, .. } => Self::interp(ts, min_r, t),
        })
    }

    /// Coefficient `c` with `Ric = c g₁` (scale invariant for homothetic flows).
    pub fn ricci_unit(&self, t: f64) -> Result<f64, RicciError> {
        Ok(self.min_r(t)? * self.scale(t)? / 3.0)
    }
}

/// `dA/dt = -∫ [R - Ric(n, n)] = -∫ Tr_Σ Ric` for a map into the unit `S³`
/// standing for the model at time `t`. The `s(t)` factors of the area element
/// and of the `g(t)`-trace cancel, leaving `-c ∫ Tr(P (I - xxᵀ))`.
pub fn area_rate(u: &DiscreteMap, flow: &ModelFlow, t: f64) -> Result<f64, RicciError> {
    flow.validate()?;
    let c = flow.ricci_unit(t)?;
    let pairing = quadratic_form_pairing(u, |x| {
        let d = x.len();
        let n2: f64 = x.iter().map(|v| v * v).sum();
        let mut q = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                q[a * d + b] = c * (if a == b { 1.0 } else { 0.0 } - x[a] * x[b] / n2);
            }
        }
        q
    })?;
    Ok(-pairing)
}

/// `|∫ Tr(P Q)|` difference between two maps against `‖Q‖ · Area` for the
/// isotropic Ricci form of the flow at `t`, the closeness-transfer shape.
pub fn pairing_transfer(u: &DiscreteMap, v: &DiscreteMap, flow: &ModelFlow, t: f64) -> Result<(f64, f64), RicciError> {
    let a = area_rate(u, flow, t)?;
    let b = area_rate(v, flow, t)?;
    let norm = flow.ricci_unit(t)?.abs();
    Ok(((a - b).abs(), norm * v.area()))
}

/// Closed-form upper bound `W(T) ≤ (T+C)^{3/4} [C^{-3/4} W₀ - 16π((T+C)^{1/4} - C^{1/4})]`.
pub fn closed_bound(w0: f64, c: f64, t: f64) -> f64 {
    (t + c).powf(0.75) * (c.powf(-0.75) * w0 - 16.0 * PI * ((t + c).powf(0.25) - c.powf(0.25)))
}

/// Root of the closed-form bound: `(C^{1/4} + C^{-3/4} W₀ / (16π))⁴ - C`.
pub fn closed_extinction(w0: f64, c: f64) -> f64 {
    (c.powf(0.25) + c.powf(-0.75) * w0 / (16.0 * PI)).powi(4) - c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthTrajectory {
    pub w0: f64,
    pub c: f64,
    pub dt: f64,
    pub t: Vec<f64>,
    pub w_euler: Vec<f64>,
    pub w_closed: Vec<f64>,
    pub t_star_closed: f64,
    /// Linear interpolation of the Euler trajectory's zero crossing.
    pub t_star_euler: f64,
    /// Largest `Δ[W (t+C)^{-3/4}]/dt + 4π (t+C)^{-3/4}` along the Euler steps.
    pub factor_defect: f64,
}

/// Forward Euler on `dW/dt = -4π + 3W / (4(t + C))` next to the closed form.
pub fn width_bound_integrate(w0: f64, c: f64, dt: f64) -> Result<WidthTrajectory, RicciError> {
    if !(c > 0.0) {
        return Err(RicciError::NonPositiveC(c));
    }
    if !(w0 >= 0.0) || !(dt > 0.0) {
        return Err(RicciError::InvalidArgument(format!("need W0 >= 0 and dt > 0 (W0={w0}, dt={dt})")));
    }
    let t_star_closed = closed_extinction(w0, c);
    let mut tr =
        WidthTrajectory { w0, c, dt, t: vec![0.0], w_euler: vec![w0], w_closed: vec![w0], t_star_closed, t_star_euler: 0.0, factor_defect: f64::NEG_INFINITY };
    if w0 == 0.0 {
        tr.factor_defect = 0.0;
        return Ok(tr);
    }
    let mut k = 0u64;
    let mut w = w0;
    loop {
        let t = k as f64 * dt;
        let wn = w + dt * (-4.0 * PI + 0.75 * w / (t + c));
        let tn = (k + 1) as f64 * dt;
        let g = |t: f64, w: f64| w * (t + c).powf(-0.75);
        let defect = (g(tn, wn) - g(t, w)) / dt + 4.0 * PI * (t + c).powf(-0.75);
        tr.factor_defect = tr.factor_defect.max(defect);
        tr.t.push(tn);
        tr.w_euler.push(wn.max(0.0));
        tr.w_closed.push(closed_bound(w0, c, tn).max(0.0));
        if wn <= 0.0 {
            tr.t_star_euler = t + dt * w / (w - wn);
            break;
        }
        w = wn;
        k += 1;
    }
    Ok(tr)
}

/// `T*` for each `C`, the sensitivity sweep over the free constant.
pub fn c_sensitivity(w0: f64, cs: &[f64]) -> Result<Vec<(f64, f64)>, RicciError> {
    cs.iter().map(|&c| if c > 0.0 { Ok((c, closed_extinction(w0, c))) } else { Err(RicciError::NonPositiveC(c)) }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicciRow {
    pub t: f64,
    pub w_true: f64,
    pub w_bound: f64,
    pub rate_true: f64,
    pub rate_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub r0: f64,
    pub c: f64,
    pub dt: f64,
    pub rows: Vec<RicciRow>,
    pub extinction_true: f64,
    /// Largest `|rate_true - rate_bound|` over the rows.
    pub max_rate_residual: f64,
    pub t_star_closed: f64,
    pub t_star_euler: f64,
}

pub const RICCI_CSV_HEADER: &str = "t,W_true,W_bound,rate_true,rate_bound";

/// Summary fields written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicciSummary {
    pub r0: f64,
    pub c: f64,
    pub dt: f64,
    #[serde(rename = "T*_closed")]
    pub t_star_closed: f64,
    #[serde(rename = "T*_euler")]
    pub t_star_euler: f64,
    pub extinction_true: f64,
    pub max_rate_residual: f64,
}

impl RoundReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{RICCI_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.t, r.w_true, r.w_bound, r.rate_true, r.rate_bound)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> RicciSummary {
        RicciSummary {
            r0: self.r0,
            c: self.c,
            dt: self.dt,
            t_star_closed: self.t_star_closed,
            t_star_euler: self.t_star_euler,
            extinction_true: self.extinction_true,
            max_rate_residual: self.max_rate_residual,
        }
    }
}

/// Round `S³` of radius `r₀` under the flow: the equator's width `4π r²(t)`
/// against the minimal-sphere rate bound (sharp here), and the integrated
/// bound with the explicit constant `C`.
pub fn round_extinction_demo(r0: f64, dt: f64, c: f64) -> Result<RoundReport, RicciError> {
    let flow = ModelFlow::RoundS3 { r0 };
    flow.validate()?;
    let w0 = 4.0 * PI * r0 * r0;
    let traj = width_bound_integrate(w0, c, dt)?;
    let t_max = flow.t_max();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        if t >= t_max {
            break;
        }
        let s = flow.scale(t)?;
        let w_true = 4.0 * PI * s;
        let rate_true = -16.0 * PI;
        let rate_bound = minimal_sphere_rate(w_true, flow.min_r(t)?);
        worst = worst.max((rate_true - rate_bound).abs());
        rows.push(RicciRow { t, w_true, w_bound: closed_bound(w0, c, t).max(0.0), rate_true, rate_bound });
        k += 1;
    }
    Ok(RoundReport { r0, c, dt, rows, extinction_true: t_max, max_rate_residual: worst, t_star_closed: traj.t_star_closed, t_star_euler: traj.t_star_euler })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmap::Domain;
    use crate::manifold::EmbeddedManifold;
    use crate::sweepout::standard_sweepout;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn scalar_bound_cases() {
        assert_eq!(scalar_min_bound(-6.0, 0.0), -6.0);
        assert_eq!(constant_from_min_r(-6.0), Some(0.25));
        assert_eq!(constant_from_min_r(6.0), None);
        for t in [0.0, 1.0, 100.0] {
            assert_eq!(scalar_min_bound(6.0, t), 6.0);
        }
        let far = scalar_min_bound(-6.0, 1e9);
        assert!(far < 0.0 && far > -1e-8);
        // Same as -3/(2(t + C)).
        assert!((scalar_min_bound(-6.0, 2.0) + 1.5 / 2.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn scalar_bound_monotone(r in -50.0f64..-1e-3, t in 0.0f64..10.0, dt in 0.0f64..5.0) {
            prop_assert!(scalar_min_bound(r, t + dt) >= scalar_min_bound(r, t));
        }

        #[test]
        fn closed_extinction_is_root(w0 in 0.0f64..100.0, c in 0.05f64..10.0) {
            let t = closed_extinction(w0, c);
            prop_assert!(t >= 0.0 && t.is_finite());
            prop_assert!(closed_bound(w0, c, t).abs() < 1e-9 * (1.0 + w0) * (t + c).powf(0.75));
        }
    }

    #[test]
    fn rate_bound_cases() {
        assert!((minimal_sphere_rate(4.0 * PI, 6.0) + 16.0 * PI).abs() < 1e-12);
        assert_eq!(minimal_sphere_rate(0.0, 5.0), -4.0 * PI);
        assert_eq!(minimal_sphere_rate(3.0, 0.0), -4.0 * PI);
    }

    #[test]
    fn closed_form_extinction() {
        assert!((closed_extinction(4.0 * PI, 1.0) - 1.44140625).abs() < 1e-12);
        assert_eq!(closed_extinction(0.0, 1.0), 0.0);
    }

    #[test]
    fn euler_agrees_with_closed_form() {
        let tr = width_bound_integrate(4.0 * PI, 1.0, 1e-4).unwrap();
        assert!((tr.t_star_euler - 1.44140625).abs() < 1e-3 * 1.44140625, "{}", tr.t_star_euler);
        assert!(tr.factor_defect < 1e-2, "{}", tr.factor_defect);
        let z = width_bound_integrate(0.0, 1.0, 1e-4).unwrap();
        assert_eq!(z.t_star_euler, 0.0);
        assert_eq!(z.t_star_closed, 0.0);
        assert_eq!(width_bound_integrate(1.0, 0.0, 1e-3), Err(RicciError::NonPositiveC(0.0)));
    }

    #[test]
    fn euler_error_is_first_order() {
        let a = width_bound_integrate(4.0 * PI, 1.0, 1e-2).unwrap();
        let b = width_bound_integrate(4.0 * PI, 1.0, 5e-3).unwrap();
        let (ea, eb) = ((a.t_star_euler - a.t_star_closed).abs(), (b.t_star_euler - b.t_star_closed).abs());
        assert!(eb < 0.7 * ea && eb > 0.3 * ea, "{ea} {eb}");
    }

    #[test]
    fn round_demo() {
        for (r0, ext, w) in [(1.0, 0.25, 4.0 * PI), (2.0, 1.0, 16.0 * PI)] {
            let r = round_extinction_demo(r0, 1e-4, 1.0).unwrap();
            assert_eq!(r.extinction_true, ext);
            assert_eq!(r.rows[0].w_true, w);
            assert!(r.max_rate_residual <= 1e-10);
            assert!(r.t_star_closed >= r.extinction_true);
        }
        let mut buf = Vec::new();
        round_extinction_demo(1.0, 0.05, 1.0).unwrap().write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with(RICCI_CSV_HEADER));
        assert_eq!(s.lines().count(), 6);
    }

    #[test]
    fn summary_json_keys() {
        let r = round_extinction_demo(1.0, 1e-3, 1.0).unwrap();
        let j = serde_json::to_value(r.summary()).unwrap();
        assert_eq!(j["extinction_true"], 0.25);
        assert!(j.get("T*_closed").is_some() && j.get("T*_euler").is_some());
    }

    fn equator(n: usize) -> DiscreteMap {
        let d = Arc::new(Domain::sphere(n).unwrap());
        let s = standard_sweepout("latitude-s3", d, 2).unwrap();
        s.slices[1].clone()
    }

    #[test]
    fn area_rate_round_equator() {
        let u = equator(65);
        for (r0, t) in [(1.0, 0.0), (1.0, 0.2), (3.0, 1.0)] {
            let rate = area_rate(&u, &ModelFlow::RoundS3 { r0 }, t).unwrap();
            assert!((rate + 16.0 * PI).abs() < 0.01 * 16.0 * PI, "{rate}");
        }
        let flat = ModelFlow::Tabulated { t: vec![0.0, 1.0], scale: vec![1.0, 1.0], min_r: vec![0.0, 0.0] };
        assert_eq!(area_rate(&u, &flat, 0.5).unwrap(), 0.0);
        assert!(matches!(area_rate(&u, &ModelFlow::RoundS3 { r0: 1.0 }, 0.25), Err(RicciError::OutOfRange { .. })));
    }

    #[test]
    fn area_rate_needs_three_manifold() {
        let d = Arc::new(Domain::sphere(17).unwrap());
        let u = DiscreteMap::identity(d).unwrap();
        assert!(matches!(area_rate(&u, &ModelFlow::RoundS3 { r0: 1.0 }, 0.0), Err(RicciError::Varifold(_))));
        let _ = EmbeddedManifold::unit_sphere(3);
    }

    #[test]
    fn tabulated_flow_interpolates() {
        let f = ModelFlow::Tabulated { t: vec![0.0, 1.0, 2.0], scale: vec![1.0, 0.5, 0.25], min_r: vec![6.0, 12.0, 24.0] };
        f.validate().unwrap();
        assert_eq!(f.scale(0.5).unwrap(), 0.75);
        assert_eq!(f.min_r(1.5).unwrap(), 18.0);
        assert_eq!(f.ricci_unit(1.0).unwrap(), 2.0);
        let bad = ModelFlow::Tabulated { t: vec![0.0, 0.0], scale: vec![1.0, 1.0], min_r: vec![0.0, 0.0] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sensitivity_is_increasing_in_w0() {
        let a = c_sensitivity(4.0 * PI, &[0.5, 1.0, 2.0]).unwrap();
        let b = c_sensitivity(8.0 * PI, &[0.5, 1.0, 2.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(y.1 > x.1);
        }
        assert!(c_sensitivity(1.0, &[-1.0]).is_err());
    }
}
