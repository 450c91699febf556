//! Subcommand drivers. Each returns the check outcome; files go through
//! [`Outputs`] so the manifest lists them with their hashes.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use widthlab_core::certlab::{self, par_map, CertError, CertificateReport, SUITES};
use widthlab_core::dirichlet::{self, DirichletError};
use widthlab_core::dmap::{DiscreteMap, Domain};
use widthlab_core::ricci;
use widthlab_core::sweepout::{self, SweepoutError, VarifoldReference};
use widthlab_core::varifold::{self, TestFunctionFamily, VarifoldError, DEFAULT_J_CUT, DEFAULT_TERMS};

use crate::config::Config;
use crate::manifest::Outputs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("{0}")]
    Compute(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::MissingInput(_) => 3,
            Self::NoConvergence(_) => 4,
            Self::Compute(_) | Self::Io(_) => 1,
        }
    }
}

fn from_dirichlet(e: DirichletError) -> CliError {
    match e {
        DirichletError::NoConvergence { .. } => CliError::NoConvergence(e.to_string()),
        other => CliError::Compute(other.to_string()),
    }
}

impl From<CertError> for CliError {
    fn from(e: CertError) -> Self {
        match e {
            CertError::Dirichlet(d) => from_dirichlet(d),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<SweepoutError> for CliError {
    fn from(e: SweepoutError) -> Self {
        match e {
            SweepoutError::Dirichlet(d) => from_dirichlet(d),
            SweepoutError::KindUnknown(k) => CliError::Config(format!("unknown fixture {k:?}")),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<VarifoldError> for CliError {
    fn from(e: VarifoldError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<ricci::RicciError> for CliError {
    fn from(e: ricci::RicciError) -> Self {
        CliError::Compute(e.to_string())
    }
}

/// Result of the checks a subcommand is tagged with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub passed: bool,
    /// A required solve was flagged as not converged.
    pub nonconverged: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.nonconverged {
            4
        } else if !self.passed {
            2
        } else {
            0
        }
    }
}

/// Version of the JSON report layouts written by the subcommands.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Pretty JSON with `schema_version` added to the top-level object.
fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(v).expect("serializable");
    if let Some(m) = v.as_object_mut() {
        m.insert("schema_version".into(), json!(REPORT_SCHEMA_VERSION));
    }
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Prints a report line; a closed stdout (e.g. piped into `head`) is not an error
/// because the files already hold the results.
fn emit(s: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{s}");
}

fn sphere(n: usize) -> Result<Arc<Domain>, CliError> {
    Domain::sphere(n).map(Arc::new).map_err(|e| CliError::Config(e.to_string()))
}

pub fn verify(c: &Config, suite: &str, jobs: usize, out: &mut Outputs) -> Result<Outcome, CliError> {
    let names: Vec<String> = if suite == "all" {
        c.verify.suites.clone()
    } else if SUITES.contains(&suite) {
        vec![suite.to_string()]
    } else {
        return Err(CliError::Config(format!("unknown suite {suite:?} (known: all, {})", SUITES.join(", "))));
    };
    let mut passed = true;
    let mut reports: Vec<CertificateReport> = Vec::new();
    for name in &names {
        let r = certlab::run_suite(name, c.seed, jobs)?;
        passed &= r.pass;
        out.write(&format!("verify_{name}.json"), &json_bytes(&r))?;
        reports.push(r);
    }
    for r in &reports {
        emit(&r.to_json());
    }
    Ok(Outcome { passed, nonconverged: false })
}

#[derive(Debug, Serialize)]
struct WidthSummary {
    fixture: String,
    n: usize,
    slices: usize,
    initial_w_e: f64,
    w_e: f64,
    w_a: f64,
    argmax_t: f64,
    relative_error: f64,
    iterations: usize,
    monotone: bool,
    plateau: bool,
    schedule_empty: bool,
    skipped_slices: usize,
    degree: Option<f64>,
    varifold_distance: Option<f64>,
    /// `None` when the fixture has no reference width.
    pass: Option<bool>,
}

pub fn width(c: &Config, out: &mut Outputs) -> Result<Outcome, CliError> {
    let fixture = c.width.fixture.to_ascii_lowercase();
    if fixture.starts_with("curve-") {
        return width_curve(c, &fixture, out);
    }
    c.require_unit_s3().map_err(CliError::Config)?;
    let d = sphere(c.grid.n)?;
    let s = sweepout::standard_sweepout(&fixture, d.clone(), c.grid.slices)?;
    let eq = sweepout::standard_sweepout("latitude-s3", d, 2)?.slices[1].clone();
    let measure = varifold::varifold_of_map(&eq, DEFAULT_J_CUT);
    let family = TestFunctionFamily::canonical(&eq.target, DEFAULT_TERMS);
    let (_, rep) = sweepout::tighten(&s, &c.tighten, &c.solver, Some(VarifoldReference { measure: &measure, family: &family }))?;
    let mut csv = Vec::new();
    rep.write_csv(&mut csv)?;
    out.write("width.csv", &csv)?;
    let fin = rep.final_width();
    let four_pi = 4.0 * PI;
    let rel = (fin.w_e - four_pi) / four_pi;
    let monotone = rep.monotone(1e-9 * rep.initial.w_e);
    let last = rep.iterations.last();
    let tol = match fixture.as_str() {
        "latitude-s3" => Some(0.005),
        "perturbed-latitude-s3" => Some(0.02),
        _ => None,
    };
    let pass = tol.map(|t| rel.abs() <= t && monotone && rep.iterations.len() <= c.tighten.max_iters);
    let summary = WidthSummary {
        fixture: fixture.clone(),
        n: c.grid.n,
        slices: c.grid.slices,
        initial_w_e: rep.initial.w_e,
        w_e: fin.w_e,
        w_a: fin.w_a,
        argmax_t: fin.argmax_t as f64 / c.grid.slices as f64,
        relative_error: rel,
        iterations: rep.iterations.len(),
        monotone,
        plateau: rep.plateau,
        schedule_empty: rep.schedule_empty,
        skipped_slices: rep.skipped_slices,
        degree: last.and_then(|r| r.degree),
        varifold_distance: last.and_then(|r| r.varifold_distance),
        pass,
    };
    out.write("width_summary.json", &json_bytes(&summary))?;
    emit(String::from_utf8_lossy(&json_bytes(&summary)).trim_end());
    Ok(Outcome { passed: pass.unwrap_or(true), nonconverged: rep.skipped_slices > 0 })
}

fn width_curve(c: &Config, fixture: &str, out: &mut Outputs) -> Result<Outcome, CliError> {
    let cs = sweepout::standard_curve_sweepout(fixture, c.grid.curve_points, c.grid.slices)?;
    let (_, rep) = sweepout::birkhoff_tighten(&cs, c.width.arcs, 500, 1e-12)?;
    let mut csv = String::from("iter,max_length\n");
    for (i, l) in rep.max_lengths.iter().enumerate() {
        csv.push_str(&format!("{i},{l:.12e}\n"));
    }
    out.write("width.csv", csv.as_bytes())?;
    let fin = *rep.max_lengths.last().unwrap_or(&f64::NAN);
    let rel = (fin - 2.0 * PI) / (2.0 * PI);
    let pass = matches!(fixture, "curve-latitude-s2" | "curve-perturbed-latitude-s2").then(|| rel.abs() <= 0.01);
    let summary = json!({
        "fixture": fixture,
        "max_length": fin,
        "relative_error": rel,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "pass": pass,
    });
    out.write("width_summary.json", &json_bytes(&summary))?;
    emit(String::from_utf8_lossy(&json_bytes(&summary)).trim_end());
    Ok(Outcome { passed: pass.unwrap_or(true), nonconverged: !rep.converged })
}

#[derive(Debug, Serialize)]
struct BubbleRow {
    j: u32,
    energy: f64,
    area: f64,
    d_v: f64,
}

pub fn bubble(c: &Config, jobs: usize, out: &mut Outputs) -> Result<Outcome, CliError> {
    let d = sphere(c.grid.n)?;
    let id = DiscreteMap::identity(d.clone()).map_err(|e| CliError::Compute(e.to_string()))?;
    let inv = varifold::inversion_map(d.clone())?;
    let family = TestFunctionFamily::canonical(&id.target, DEFAULT_TERMS);
    let mu_id = varifold::varifold_of_map(&id, DEFAULT_J_CUT);
    let limit = mu_id.union(&varifold::varifold_of_map(&inv, DEFAULT_J_CUT))?;
    let m_limit = family.moments(&limit)?;
    let rows = par_map(c.bubble.js.len(), jobs, |i| -> Result<BubbleRow, CliError> {
        let j = c.bubble.js[i];
        let v = varifold::bubble_example(d.clone(), j)?;
        let m = family.moments(&varifold::varifold_of_map(&v, DEFAULT_J_CUT))?;
        Ok(BubbleRow { j, energy: v.energy(None), area: v.area(), d_v: varifold::distance_from_moments(&m, &m_limit) })
    });
    let rows: Vec<BubbleRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let anti =
        DiscreteMap::from_fn(d.clone(), id.target.clone(), |i| d.sphere_pts[i].iter().map(|x| -x).collect()).map_err(|e| CliError::Compute(e.to_string()))?;
    let d_anti = varifold::varifold_distance(&mu_id, &varifold::varifold_of_map(&anti, DEFAULT_J_CUT), &family)?;
    let mut csv = String::from("j,energy,area,d_V\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.12e},{:.12e},{:.12e}\n", r.j, r.energy, r.area, r.d_v));
    }
    out.write("bubble.csv", csv.as_bytes())?;
    let eight_pi = 8.0 * PI;
    let energies_ok = rows.iter().all(|r| (r.energy - eight_pi).abs() <= 0.01 * eight_pi && (r.area - eight_pi).abs() <= 0.01 * eight_pi);
    let non_increasing = rows.windows(2).all(|w| w[1].d_v <= w[0].d_v);
    let last_ok = rows.last().is_some_and(|r| r.d_v <= 0.05);
    let summary = json!({
        "n": c.grid.n,
        "rows": rows,
        "identity_vs_antipodal": d_anti,
        "energies_within_1pct": energies_ok,
        "d_V_non_increasing": non_increasing,
        "d_V_last_below_0.05": last_ok,
        "pass": energies_ok && non_increasing && last_ok && d_anti <= 1e-3,
    });
    out.write("bubble_summary.json", &json_bytes(&summary))?;
    emit(String::from_utf8_lossy(&json_bytes(&summary)).trim_end());
    Ok(Outcome { passed: summary["pass"].as_bool().unwrap_or(false), nonconverged: false })
}

pub fn ricci(c: &Config, out: &mut Outputs) -> Result<Outcome, CliError> {
    let r = &c.ricci;
    let rep = ricci::round_extinction_demo(r.r0, r.dt, r.c)?;
    let mut csv = Vec::new();
    rep.write_csv(&mut csv)?;
    out.write("ricci.csv", &csv)?;
    let summary = rep.summary();
    out.write("ricci_summary.json", &json_bytes(&summary))?;
    emit(String::from_utf8_lossy(&json_bytes(&summary)).trim_end());
    Ok(Outcome { passed: rep.max_rate_residual <= 1e-10 && rep.t_star_closed >= rep.extinction_true, nonconverged: false })
}

pub fn calibrate(c: &Config, jobs: usize, out: &mut Outputs) -> Result<Outcome, CliError> {
    let k = &c.calibrate;
    let d = sphere(k.n)?;
    let eps1 = dirichlet::calibrate_eps1(d.clone(), &k.energies, k.bases, k.bumps, k.margin, c.seed).map_err(from_dirichlet)?;
    let (decay, eps2) = certlab::decay_scan(&k.ells, &k.amplitudes, &k.eps2, k.delta, jobs)?;
    // ε_SU: thresholds at which the bubble sequence shows exactly its one
    // concentration point.
    let seq: Vec<DiscreteMap> = c.bubble.js.iter().map(|&j| varifold::bubble_example(d.clone(), j)).collect::<Result<_, _>>()?;
    let radii = [0.4, 0.2];
    let eps_su: Vec<serde_json::Value> =
        [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&e| json!({ "eps": e, "points": varifold::detect_concentration(&seq, e, &radii).len() })).collect();
    let summary = json!({ "eps1": eps1, "eps2_scan": eps2, "decay": decay, "eps_su_scan": eps_su });
    out.write("calibrate.json", &json_bytes(&summary))?;
    emit(String::from_utf8_lossy(&json_bytes(&summary)).trim_end());
    Ok(Outcome { passed: true, nonconverged: false })
}

/// Input tables recognized by `plots`, with the columns kept in the `.dat` file.
const PLOT_INPUTS: [(&str, &str, &str); 3] = [
    ("width.csv", "width", "set xlabel 'iteration'\nset ylabel 'W_E'\nplot 'width.dat' using 1:2 with linespoints title 'W_E'\n"),
    ("ricci.csv", "ricci", "set xlabel 't'\nset ylabel 'W'\nplot 'ricci.dat' using 1:2 with lines title 'W true', '' using 1:3 with lines title 'W bound'\n"),
    ("bubble.csv", "bubble", "set xlabel 'j'\nset ylabel 'd_V'\nset logscale x 2\nplot 'bubble.dat' using 1:4 with linespoints title 'd_V'\n"),
];

/// Converts every CSV found in `input` into a whitespace-separated `.dat`
/// file with a commented header, plus a gnuplot script stub.
pub fn plots(input: &Path, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mut found = 0;
    for (csv_name, stem, script) in PLOT_INPUTS {
        let p = input.join(csv_name);
        let Ok(text) = std::fs::read_to_string(&p) else { continue };
        found += 1;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CliError::MissingInput(format!("{} is empty", p.display())))?;
        let mut dat = format!("# {}\n", header.replace(',', " "));
        for l in lines {
            dat.push_str(&l.replace(',', " "));
            dat.push('\n');
        }
        out.write(&format!("{stem}.dat"), dat.as_bytes())?;
        out.write(&format!("{stem}.gp"), format!("set terminal pngcairo\nset output '{stem}.png'\n{script}").as_bytes())?;
    }
    if found == 0 {
        return Err(CliError::MissingInput(format!("no width.csv, ricci.csv or bubble.csv in {}", input.display())));
    }
    Ok(Outcome { passed: true, nonconverged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Outcome { passed: true, nonconverged: false }.exit_code(), 0);
        assert_eq!(Outcome { passed: false, nonconverged: false }.exit_code(), 2);
        assert_eq!(Outcome { passed: false, nonconverged: true }.exit_code(), 4);
        assert_eq!(CliError::Config("x".into()).exit_code(), 3);
        assert_eq!(from_dirichlet(DirichletError::NoConvergence { sweeps: 1, residual: 1.0 }).exit_code(), 4);
    }
}
