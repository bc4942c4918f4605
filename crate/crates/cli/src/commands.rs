use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use qstrat_core::dir_min::{minimize, InitStrategy, SolveOptions};
use qstrat_core::frequency::{lambda0, r_min, radial_profile, Domain, Lambda0};
use qstrat_core::homogeneous::{d_k, SearchOptions};
use qstrat_core::minkowski::{tubular_volume, TubularEstimate};
use qstrat_core::strat::{
    bad_scales, calibrate_empirical, countability_audit, derive_parameters, iterative_cover,
    strata_membership, tau_proof, verify_hypotheses, Calibration, Eta2Rule, Hypotheses, Mode,
    ParamInputs,
};
use qstrat_core::{
    default_zero_tol, g_distance, load_field, make_branch_field, max_multiplicity_nodes,
    minkowski_fit, save_field, BallSpec, Error, GridSpec, QField, QFieldInstance, Window,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::output::*;

fn coeff(s: &str) -> CliResult<Complex64> {
    match parse_coords(s)?.as_slice() {
        [re, im] => Ok(Complex64::new(*re, *im)),
        _ => Err(CliError::Usage(format!(
            "coefficient must be \"re,im\", got {s:?}"
        ))),
    }
}

fn center_for(field: &QField, s: &str) -> CliResult<Vec<f64>> {
    let c = parse_coords(s)?;
    if c.len() != field.n() {
        return Err(Error::DimensionMismatch(format!(
            "center has {} coordinates, the field lives in R^{}",
            c.len(),
            field.n()
        ))
        .into());
    }
    Ok(c)
}

fn search_options(a: &SearchArgs, lambda0: Option<f64>) -> SearchOptions {
    SearchOptions {
        samples: a.samples,
        alpha_cap: a.alpha_cap,
        restarts: a.restarts,
        seed: a.seed,
        lambda0,
        ..Default::default()
    }
}

fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.json");
    PathBuf::from(s)
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn print_json(v: &impl Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn metric(a: &MetricArgs) -> CliResult<()> {
    let d = g_distance(&parse_qpoint(&a.a)?, &parse_qpoint(&a.b)?)?;
    println!("{d:.*}", a.digits);
    Ok(())
}

pub fn make_field(a: &MakeFieldArgs, config: &impl Serialize) -> CliResult<()> {
    let grid = GridSpec::cube(2, a.grid.lo, a.grid.hi, a.grid.nodes)?;
    let mut f = make_branch_field(a.q, a.p, coeff(&a.coeff)?, grid)?;
    if let Some(r) = a.ball {
        f = f.with_ball_domain(&BallSpec::at_origin(2, r))?;
    }
    ensure_parent(&a.out)?;
    save_field(&f, &a.out)?;
    write_manifest(config, &[a.out.clone(), sidecar(&a.out)])?;
    print_json(&json!({ "out": a.out, "nodes": f.node_count(), "q": f.q(), "m": f.m() }))
}

pub fn minimize_cmd(a: &MinimizeArgs, config: &impl Serialize) -> CliResult<()> {
    let boundary = load_field(&a.boundary)?;
    let opts = SolveOptions {
        max_iters: a.max_iters,
        energy_tol: a.tol,
        rematch_every: a.rematch_every,
        seed: a.seed,
        relaxation: a.relaxation,
        init: match a.init {
            InitArg::Sheets => InitStrategy::Sheets,
            InitArg::Cone => InitStrategy::Cone,
            InitArg::Best => InitStrategy::Best,
        },
    };
    let sol = minimize(&boundary, &opts)?;
    ensure_parent(&a.out)?;
    save_field(&sol.field, &a.out)?;
    let log = a.log.clone().unwrap_or_else(|| log_path(&a.out));
    write_json(&log, &sol.log)?;
    write_manifest(config, &[a.out.clone(), sidecar(&a.out), log.clone()])?;
    print_json(&json!({
        "energy": sol.energy,
        "iterations": sol.iters,
        "converged": sol.converged,
        "log": log,
    }))
}

pub fn frequency_cmd(a: &FrequencyArgs, config: &impl Serialize) -> CliResult<()> {
    let field = load_field(&a.field)?;
    let center = center_for(&field, &a.center)?;
    let radii = parse_radii(&a.radii)?;
    let prof = radial_profile(&field, &center, &radii)?;
    let mut csv = String::from("radius,D,H,I\n");
    for i in 0..prof.radii.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            prof.radii[i], prof.d_vals[i], prof.h_vals[i], prof.i_vals[i]
        );
    }
    let mut outputs = Vec::new();
    match &a.out {
        Some(p) => {
            write_text(p, &csv)?;
            outputs.push(p.clone());
        }
        None => print!("{csv}"),
    }
    if let Some(p) = &a.plot {
        let pts = prof
            .radii
            .iter()
            .copied()
            .zip(prof.i_vals.iter().copied())
            .collect();
        write_text(
            p,
            &svg_plot(
                "Frequency profile",
                "radius",
                "I",
                &[Series {
                    label: "I(x, r)",
                    points: pts,
                }],
                true,
                false,
            ),
        )?;
        outputs.push(p.clone());
    }
    write_manifest(config, &outputs)
}

pub fn dk_cmd(a: &DkArgs, config: &impl Serialize) -> CliResult<()> {
    let field = load_field(&a.field)?;
    let center = center_for(&field, &a.center)?;
    let r = d_k(
        &field,
        &center,
        a.radius,
        a.k,
        &search_options(&a.search, None),
    )?;
    let out = json!({ "value": r.value, "trace_norm": r.trace_norm, "competitor": r.competitor });
    if let Some(p) = &a.out {
        write_json(p, &out)?;
        write_manifest(config, std::slice::from_ref(p))?;
    }
    print_json(&out)
}

#[derive(Serialize)]
struct Audit {
    name: String,
    passed: bool,
    detail: String,
}

fn audit(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Audit {
    Audit {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Maximal-multiplicity nodes at distance at least `margin` from the grid boundary.
fn inner_singular_nodes(field: &QField, tol: f64, margin: f64) -> Vec<Vec<f64>> {
    let g = field.grid();
    let hi = g.upper_corner();
    max_multiplicity_nodes(field, tol)
        .into_iter()
        .filter(|x| {
            x.iter()
                .zip(g.origin.iter().zip(&hi))
                .all(|(v, (lo, up))| v - lo >= margin && up - v >= margin)
        })
        .collect()
}

/// Up to 32 centers at scales `r0`, `r0/2`, `r0/4`, keeping scales whose
/// pinch `lambda1 s` is resolved by the grid and whose `4s` ball fits.
fn sweep_pairs(field: &QField, points: &[Vec<f64>], r0: f64, lambda1: f64) -> Vec<(Vec<f64>, f64)> {
    let s_min = r_min(field) / lambda1;
    points
        .iter()
        .take(32)
        .flat_map(|x| [r0, r0 / 2.0, r0 / 4.0].map(|s| (x.clone(), s)))
        .filter(|(x, s)| {
            *s >= s_min
                && field
                    .grid()
                    .contains_ball(&BallSpec::new(x.clone(), 4.0 * s))
        })
        .collect()
}

fn field_lambda0(field: &QField, r0: f64) -> CliResult<Lambda0> {
    Ok(lambda0(&field.recentered(), &Domain::Grid, r0)?)
}

pub fn stratify(a: &StratifyArgs, config: &impl Serialize) -> CliResult<()> {
    let field = load_field(&a.field)?;
    let n = field.n();
    let l0 = field_lambda0(&field, a.r0)?;
    let tol = a.zero_tol.unwrap_or(default_zero_tol(&field));
    let inst = QFieldInstance::new(&field, l0.value)
        .with_zero_tol(tol)
        .with_search(search_options(&a.search, Some(l0.value)));
    let candidates = inner_singular_nodes(&field, tol, 2.0 * a.r0);
    let mode = match a.mode {
        ModeArg::Practical => Mode::Practical { tau: a.tau },
        ModeArg::Proof => Mode::ProofFaithful,
    };
    let sweep_tau = match mode {
        Mode::Practical { tau } => tau,
        Mode::ProofFaithful => tau_proof(n, a.kappa0),
    };
    let calibration = match a.calibration {
        CalibrationArg::Fallback => None,
        CalibrationArg::User => match (a.eta1, a.lambda1, a.eta2) {
            (Some(e1), Some(l1), Some(e2)) => {
                Some(Calibration::user(e1, l1, Eta2Rule::Proportional(e2)))
            }
            _ => {
                return Err(CliError::Usage(
                    "user calibration needs --eta1, --lambda1 and --eta2".into(),
                ))
            }
        },
        CalibrationArg::Empirical => {
            let lambda1 = a.lambda1.unwrap_or(0.5);
            let pairs = sweep_pairs(&field, &candidates, a.r0, lambda1);
            let (_, c) =
                calibrate_empirical(&inst, &pairs, &candidates, 0.1, a.delta, sweep_tau, lambda1)?;
            Some(c)
        }
    };
    let inputs = ParamInputs {
        n,
        k: a.k,
        kappa0: a.kappa0,
        delta: a.delta,
        r0: a.r0,
        lambda0: l0.value,
    };
    let mut params = derive_parameters(&inputs, mode, calibration)?;
    if let Some(p) = a.depth {
        params = params.with_depth(p)?;
    }
    let r = a.r.unwrap_or(r_min(&field));
    let mut strata_points = Vec::new();
    for x in &candidates {
        if strata_membership(&inst, x, a.k, r, a.r0, a.delta, a.scale_ratio)?.member {
            strata_points.push(x.clone());
        }
    }
    let mut audits = Vec::new();
    let mut bad = BTreeSet::new();
    let mut per_point = Vec::new();
    for x in &strata_points {
        match bad_scales(&inst, x, &params) {
            Ok(b) => {
                bad.extend(b.iter().copied());
                per_point.push(json!({ "point": x, "bad_scales": b }));
            }
            Err(e @ Error::AxiomViolation(_)) => {
                audits.push(audit("bad-scales", false, e.to_string()));
                per_point.push(json!({ "point": x, "error": e.to_string() }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let cover = iterative_cover(&inst, &strata_points, &params, &bad)?;
    for level in &cover.levels {
        let detail = match level.allowed_children {
            Some(allowed) => format!(
                "{:?} level, {} balls, at most {} children per parent (allowed {allowed:.3e}), {} capture failures",
                level.case,
                level.centers.len(),
                level.max_children,
                level.capture_failures
            ),
            None => format!("initial level, {} balls", level.centers.len()),
        };
        audits.push(audit(
            format!("cover-level-{}", level.j),
            level.passed,
            detail,
        ));
    }
    for &(rad, bound) in &cover.tubular_bounds {
        if strata_points.is_empty() {
            break;
        }
        let win = Window::around(&strata_points, 1.1 * rad)?;
        let vol = tubular_volume(&strata_points, rad, &win, rad / 16.0)?;
        audits.push(audit(
            format!("tubular-bound-r={rad:e}"),
            vol.volume <= bound,
            format!("measured {:e} against bound {bound:e}", vol.volume),
        ));
    }
    let count = countability_audit(&inst, &strata_points, &params)?;
    audits.push(audit(
        "countability",
        count.passed,
        format!("{} classes", count.classes.len()),
    ));
    let passed = audits.iter().all(|a| a.passed);
    let report = json!({
        "params": params,
        "lambda0": l0,
        "zero_tol": tol,
        "membership_radius": r,
        "candidates": candidates.len(),
        "strata_points": strata_points,
        "bad_scales": per_point,
        "cover_levels": cover.levels,
        "audits": audits,
        "tubular_bounds": cover.tubular_bounds,
        "final_bound": cover.final_bound,
        "passed": passed,
    });
    write_json(&a.out, &report)?;
    write_manifest(config, std::slice::from_ref(&a.out))?;
    print_json(&json!({
        "strata_points": strata_points.len(),
        "levels": cover.levels.len(),
        "final_bound": cover.final_bound,
        "audits_passed": passed,
        "out": a.out,
    }))
}

pub fn minkowski_cmd(a: &MinkowskiArgs, config: &impl Serialize) -> CliResult<()> {
    let points = read_points_csv(&a.points)?;
    if points.is_empty() {
        return Err(CliError::Usage(format!(
            "{} holds no points",
            a.points.display()
        )));
    }
    let bbox = Window::around(&points, 0.0).ok();
    let span = bbox
        .as_ref()
        .map(|w| {
            w.lo.iter()
                .zip(&w.hi)
                .map(|(l, h)| h - l)
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0)
        .max(1.0);
    let (radii, cell) = match &a.radii {
        Some(spec) => {
            let radii = parse_radii(spec)?;
            let smallest = radii.iter().copied().fold(f64::INFINITY, f64::min);
            (radii, a.cell.unwrap_or(smallest / 8.0))
        }
        None => {
            let cell = a.cell.unwrap_or(span / 1024.0);
            let mut radii = Vec::new();
            let mut r = span / 8.0;
            while r >= 8.0 * cell * (1.0 - 1e-12) {
                radii.push(r);
                r *= 0.5;
            }
            (radii, cell)
        }
    };
    let largest = radii.iter().copied().fold(0.0, f64::max);
    let window = Window::around(&points, 1.01 * largest)?;
    let est: TubularEstimate = minkowski_fit(&points, Some(&radii), &window, cell)?;
    let report = json!({ "points": points.len(), "window": window, "estimate": est });
    write_json(&a.out, &report)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.plot {
        let pts = est
            .radii
            .iter()
            .copied()
            .zip(est.volumes.iter().copied())
            .collect();
        write_text(
            p,
            &svg_plot(
                "Tubular volume",
                "r",
                "|T_r(E)|",
                &[Series {
                    label: "measured",
                    points: pts,
                }],
                true,
                true,
            ),
        )?;
        outputs.push(p.clone());
    }
    write_manifest(config, &outputs)?;
    print_json(
        &json!({ "fitted_slope": est.fitted_slope, "dim_estimate": est.dim_estimate, "out": a.out }),
    )
}

pub fn verify(a: &VerifyArgs, config: &impl Serialize) -> CliResult<()> {
    let field = load_field(&a.field)?;
    let l0 = field_lambda0(&field, a.r0)?;
    let tol = a.zero_tol.unwrap_or(default_zero_tol(&field));
    let inst = QFieldInstance::new(&field, l0.value)
        .with_zero_tol(tol)
        .with_search(search_options(&a.search, Some(l0.value)));
    let candidates = inner_singular_nodes(&field, tol, 2.0 * a.r0);
    let pairs = sweep_pairs(&field, &candidates, a.r0, a.lambda1);
    let (constants, source) = match (a.eta1, a.eta2) {
        (Some(eta1), Some(eta2)) => (
            Hypotheses {
                lambda1: a.lambda1,
                eta1,
                eps1: a.eps1,
                eta2,
                eps2: a.eps2,
                tau: a.tau,
            },
            Value::String("user".into()),
        ),
        (None, None) => {
            let (h, c) =
                calibrate_empirical(&inst, &pairs, &candidates, a.eps1, a.eps2, a.tau, a.lambda1)?;
            (h, serde_json::to_value(c.source)?)
        }
        _ => {
            return Err(CliError::Usage(
                "give both --eta1 and --eta2, or neither".into(),
            ))
        }
    };
    let report = verify_hypotheses(&inst, &pairs, &candidates, &constants)?;
    let out = json!({ "lambda0": l0, "calibration": source, "report": report });
    if let Some(p) = &a.out {
        write_json(p, &out)?;
        write_manifest(config, std::slice::from_ref(p))?;
    }
    print_json(&json!({
        "pairs_checked": report.pairs_checked,
        "counterexamples": report.counterexamples.len(),
        "constants": report.constants,
    }))
}

pub fn theorem_a(a: &TheoremAArgs, config: &impl Serialize) -> CliResult<()> {
    let field = match (&a.field, a.preset) {
        (Some(path), _) => load_field(path)?,
        (None, preset) => {
            let (q, p) = match preset.unwrap_or(Preset::Branch2) {
                Preset::Branch2 => (2, 1),
                Preset::Branch3 => (3, 2),
            };
            let grid = GridSpec::cube(2, -1.0, 1.0, a.nodes)?;
            let exact = make_branch_field(q, p, Complex64::new(1.0, 0.0), grid)?;
            if a.minimize {
                let boundary = exact.with_ball_domain(&BallSpec::at_origin(2, 1.0))?;
                minimize(&boundary, &SolveOptions::default())?.field
            } else {
                exact
            }
        }
    };
    if !(a.kappa0 > 0.0 && a.kappa0 < 1.0) {
        return Err(
            Error::InvalidArgument(format!("kappa0 must lie in (0, 1), got {}", a.kappa0)).into(),
        );
    }
    let n = field.n();
    let tol = a.tol.unwrap_or(default_zero_tol(&field));
    let sing = max_multiplicity_nodes(&field, tol);
    if sing.is_empty() {
        return Err(Error::NumericFailure {
            iteration: 0,
            message: format!("no node has |recentered u| < {tol}"),
        }
        .into());
    }
    let g = field.grid();
    let side = g
        .upper_corner()
        .iter()
        .zip(&g.origin)
        .map(|(h, l)| h - l)
        .fold(f64::INFINITY, f64::min);
    let cell = a.cell.unwrap_or(side / 1024.0);
    let mut radii = Vec::new();
    let mut r = side / 8.0;
    while r >= 8.0 * cell * (1.0 - 1e-12) {
        radii.push(r);
        r *= 0.5;
    }
    let window = Window::around(&sing, 1.01 * side / 8.0)?;
    let fit = minkowski_fit(&sing, Some(&radii), &window, cell)?;
    let threshold = n as f64 - (n as f64 - 2.0) - a.kappa0 - 0.1;
    let passed = fit.fitted_slope >= threshold;
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!(
        "{verdict} slope={:.4} threshold={threshold:.4} dim_estimate={:.4} nodes={}",
        fit.fitted_slope,
        fit.dim_estimate,
        sing.len()
    );
    if let Some(dir) = &a.out {
        let report = json!({
            "verdict": verdict,
            "kappa0": a.kappa0,
            "tol": tol,
            "slope_threshold": threshold,
            "singular_nodes": sing,
            "fit": fit,
        });
        let rep = dir.join("report.json");
        let plot = dir.join("fit.svg");
        write_json(&rep, &report)?;
        let pts = fit
            .radii
            .iter()
            .copied()
            .zip(fit.volumes.iter().copied())
            .collect();
        write_text(
            &plot,
            &svg_plot(
                "Tubular volume of the maximal-multiplicity set",
                "r",
                "|T_r|",
                &[Series {
                    label: "measured",
                    points: pts,
                }],
                true,
                true,
            ),
        )?;
        write_manifest(config, &[rep, plot])?;
    }
    Ok(())
}
