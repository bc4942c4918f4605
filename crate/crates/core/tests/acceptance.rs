//! End-to-end acceptance checks. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qstrat_core::aq_space::{g_distance, g_distance_exhaustive, g_distance_hungarian};
use qstrat_core::dir_min::{minimize, SolveOptions};
use qstrat_core::frequency::{
    geometric_radii, homogeneity_exponents, lambda0, r_min, radial_profile, Domain,
};
use qstrat_core::grid::unit_ball_volume;
use qstrat_core::minkowski::{tubular_volume, vitali_bound, Window};
use qstrat_core::strat::{
    bad_scales, calibrate_empirical, derive_parameters, iterative_cover, stability_check,
    stability_delta0, verify_hypotheses, Calibration, Eta2Rule, Hypotheses, Mode, ParamInputs,
};
use qstrat_core::{
    default_zero_tol, dirichlet_energy, make_branch_field, max_multiplicity_nodes, minkowski_fit,
    vitali_cover, BallSpec, FnInstance, GridSpec, QField, QFieldInstance, QPoint,
};

type Outcome = Result<String, String>;

fn random_qpoint(rng: &mut ChaCha8Rng, q: usize, m: usize) -> QPoint {
    let pts = (0..q)
        .map(|_| (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    QPoint::new(pts).unwrap()
}

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(limit: Duration, started: Instant, msg: String) -> Outcome {
    let t = started.elapsed();
    check(
        t < limit,
        format!("{msg}; {:.1}s of {}s", t.as_secs_f64(), limit.as_secs()),
    )
}

fn metric_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_triangle = 0.0f64;
    for _ in 0..10_000 {
        let q = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=3);
        let a = random_qpoint(&mut rng, q, m);
        let b = random_qpoint(&mut rng, q, m);
        let c = random_qpoint(&mut rng, q, m);
        let ab = g_distance(&a, &b).unwrap();
        let ba = g_distance(&b, &a).unwrap();
        let bc = g_distance(&b, &c).unwrap();
        let ac = g_distance(&a, &c).unwrap();
        let mut perm: Vec<usize> = (0..q).collect();
        perm.reverse();
        if g_distance(&a, &a.permuted(&perm)).unwrap() != 0.0 || !(ab > 0.0) {
            return Err("identity of indiscernibles fails".into());
        }
        if (ab - ba).abs() > 1e-12 * ab.max(1.0) {
            return Err(format!("asymmetric: {ab} vs {ba}"));
        }
        worst_triangle = worst_triangle.max(ac - ab - bc);
    }
    if worst_triangle > 1e-12 {
        return Err(format!(
            "triangle inequality violated by {worst_triangle:e}"
        ));
    }
    for _ in 0..2_000 {
        let q = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=3);
        let a = random_qpoint(&mut rng, q, m);
        let b = random_qpoint(&mut rng, q, m);
        let e = g_distance_exhaustive(&a, &b).unwrap();
        let h = g_distance_hungarian(&a, &b).unwrap();
        if (e - h).abs() > 1e-12 * e.max(1.0) {
            return Err(format!(
                "assignment {h} differs from exhaustive {e} at Q = {q}"
            ));
        }
    }
    within(
        Duration::from_secs(10),
        started,
        format!("10^4 triples, worst triangle slack {worst_triangle:e}"),
    )
}

fn branch_boundary(q: usize, p: i64, nodes: usize) -> QField {
    let g = GridSpec::cube(2, -1.0, 1.0, nodes).unwrap();
    make_branch_field(q, p, Complex64::new(1.0, 0.0), g)
        .unwrap()
        .with_ball_domain(&BallSpec::at_origin(2, 1.0))
        .unwrap()
}

fn closed_form_minimizer() -> Outcome {
    let started = Instant::now();
    let sol = minimize(&branch_boundary(2, 1, 129), &SolveOptions::default())
        .map_err(|e| e.to_string())?;
    let energy = dirichlet_energy(&sol.field, &BallSpec::at_origin(2, 1.0)).unwrap();
    let rel = (energy - 2.0 * PI).abs() / (2.0 * PI);
    let radii = geometric_radii(0.1, 0.4, 7).unwrap();
    let prof = radial_profile(&sol.field, &[0.0, 0.0], &radii).map_err(|e| e.to_string())?;
    let lo = prof.i_vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = prof
        .i_vals
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if rel > 0.05 || lo < 0.45 || hi > 0.55 {
        return Err(format!(
            "energy {energy:.4} ({:.2}% off), I in [{lo:.4}, {hi:.4}]",
            100.0 * rel
        ));
    }
    within(
        Duration::from_secs(120),
        started,
        format!(
            "energy {energy:.4} vs 2pi ({:.2}% off), I(0, s) in [{lo:.4}, {hi:.4}]",
            100.0 * rel
        ),
    )
}

fn monotonicity() -> Outcome {
    let started = Instant::now();
    let data = [(1usize, 1i64), (1, 2), (2, 1), (2, 3), (3, 2)];
    let centers = [[0.0, 0.0], [0.2, 0.1], [-0.15, 0.25]];
    let mut profiles = 0;
    let mut worst = 0.0f64;
    for (q, p) in data {
        let sol = minimize(&branch_boundary(q, p, 129), &SolveOptions::default())
            .map_err(|e| e.to_string())?;
        let h = sol.field.spacing();
        let radii = geometric_radii(r_min(&sol.field), 0.6, 16).unwrap();
        for c in centers {
            let prof = radial_profile(&sol.field, &c, &radii).map_err(|e| e.to_string())?;
            let audit = prof.audit(h);
            if !audit.passed() {
                return Err(format!(
                    "Q = {q}, p = {p}, center {c:?}: drops {:?} beyond tol {}",
                    audit.violations, audit.tol
                ));
            }
            worst = worst.max(audit.max_drop);
            profiles += 1;
        }
    }
    within(
        Duration::from_secs(300),
        started,
        format!("{profiles} profiles nondecreasing, largest drop {worst:.4}"),
    )
}

fn homogeneity() -> Outcome {
    let g = GridSpec::cube(2, -1.0, 1.0, 257).unwrap();
    let radii = geometric_radii(0.1, 0.8, 8).unwrap();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (q, p, alpha) in [(2usize, 1i64, 0.5), (1, 1, 1.0), (2, 3, 1.5)] {
        let f = make_branch_field(q, p, Complex64::new(0.8, -0.6), g.clone()).unwrap();
        let (he, de) = homogeneity_exponents(&f, &[0.0, 0.0], &radii).map_err(|e| e.to_string())?;
        let err = (he - (2.0 * alpha + 1.0))
            .abs()
            .max((de - 2.0 * alpha).abs());
        worst = worst.max(err);
        parts.push(format!("alpha {alpha}: H {he:.3}, D {de:.3}"));
    }
    check(
        worst <= 0.05,
        format!("{}; worst error {worst:.4}", parts.join(", ")),
    )
}

fn branch_setup() -> (QField, f64) {
    let g = GridSpec::cube(2, -1.0, 1.0, 129).unwrap();
    let f = make_branch_field(2, 1, Complex64::new(1.0, 0.0), g).unwrap();
    let l0 = lambda0(&f, &Domain::Grid, 0.2).unwrap().value;
    (f, l0)
}

fn covering(field: &QField, l0: f64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let n = rng.gen_range(2..=3);
        let count = rng.gen_range(1..=150);
        let pts: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let rho = rng.gen_range(0.1..0.6);
        let cover = vitali_cover(&pts, rho).unwrap();
        let r = rho / 5.0;
        let w = Window::around(&pts, 1.1 * r).unwrap();
        let cell = r / if n == 2 { 32.0 } else { 12.0 };
        let tube = tubular_volume(&pts, r, &w, cell).unwrap();
        let bound = vitali_bound(n, rho, tube.volume + tube.error_bound);
        if cover.centers.len() as f64 > bound {
            return Err(format!(
                "trial {trial}: {} centers exceed the bound {bound:.2}",
                cover.centers.len()
            ));
        }
    }

    let inst = QFieldInstance::new(field, l0);
    let inputs = ParamInputs {
        n: 2,
        k: 0,
        kappa0: 0.5,
        delta: 0.5,
        r0: 0.2,
        lambda0: l0,
    };
    let cal = Calibration::user(0.1, 0.1, Eta2Rule::Proportional(0.5));
    let params =
        derive_parameters(&inputs, Mode::Practical { tau: 0.1 }, Some(cal.clone())).unwrap();
    let sing = max_multiplicity_nodes(field, default_zero_tol(field));
    let mut bad = BTreeSet::new();
    for x in &sing {
        bad.extend(bad_scales(&inst, x, &params).map_err(|e| e.to_string())?);
    }
    let report = iterative_cover(&inst, &sing, &params, &bad).map_err(|e| e.to_string())?;
    if !report.passed {
        return Err(format!(
            "branch-field cover audit failed: {:?}",
            report.levels.iter().find(|l| !l.passed)
        ));
    }

    let mut planes = 0;
    for (n, k) in [(2usize, 1usize), (3, 1), (3, 2)] {
        let basis: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let b2 = basis.clone();
        let inst = FnInstance::new(
            n,
            1.0,
            |_, _| 1.0,
            move |_, _, j| if j > k { 1.0 } else { 0.0 },
        )
        .with_subspace(move |_, _| b2.clone());
        let pts: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let mut p = vec![0.0; n];
                for e in &basis {
                    let t = rng.gen_range(-0.5..0.5);
                    p.iter_mut().zip(e).for_each(|(a, b)| *a += t * b);
                }
                p
            })
            .collect();
        let inputs = ParamInputs {
            n,
            k,
            kappa0: 0.5,
            delta: 0.5,
            r0: 0.5,
            lambda0: 1.0,
        };
        let params = derive_parameters(&inputs, Mode::Practical { tau: 0.1 }, Some(cal.clone()))
            .unwrap()
            .with_depth(4)
            .unwrap();
        let report =
            iterative_cover(&inst, &pts, &params, &BTreeSet::new()).map_err(|e| e.to_string())?;
        if !report.passed {
            return Err(format!(
                "{k}-plane in R^{n}: audit failed: {:?}",
                report.levels.iter().find(|l| !l.passed)
            ));
        }
        planes += 1;
    }
    Ok(format!(
        "100 Vitali bounds hold; branch cover with {} levels and {planes} plane covers pass their audits",
        report.levels.len()
    ))
}

fn theorem_a(field: &QField, l0: f64) -> Outcome {
    let started = Instant::now();
    let sing = max_multiplicity_nodes(field, default_zero_tol(field));
    let w = Window::cube(2, -1.0, 1.0).unwrap();
    let fit = minkowski_fit(&sing, None, &w, 1.0 / 1024.0).map_err(|e| e.to_string())?;
    if fit.dim_estimate > 0.1 || fit.fitted_slope < 1.5 {
        return Err(format!(
            "dim estimate {:.4}, slope {:.4}",
            fit.dim_estimate, fit.fitted_slope
        ));
    }
    let inst = QFieldInstance::new(field, l0);
    let inputs = ParamInputs {
        n: 2,
        k: 0,
        kappa0: 0.5,
        delta: 0.5,
        r0: 0.2,
        lambda0: l0,
    };
    let params = derive_parameters(
        &inputs,
        Mode::Practical { tau: 0.1 },
        Some(Calibration::user(0.1, 0.1, Eta2Rule::Proportional(0.5))),
    )
    .unwrap();
    let report =
        iterative_cover(&inst, &sing, &params, &BTreeSet::new()).map_err(|e| e.to_string())?;
    let mut tested = 0;
    for &(r, bound) in &report.tubular_bounds {
        let win = Window::around(&sing, 1.1 * r).unwrap();
        let vol = tubular_volume(&sing, r, &win, r / 16.0).map_err(|e| e.to_string())?;
        if vol.volume > bound {
            return Err(format!(
                "measured |T_{r:e}| = {:e} exceeds the bound {bound:e}",
                vol.volume
            ));
        }
        tested += 1;
    }
    within(
        Duration::from_secs(120),
        started,
        format!(
            "{} singular node(s), slope {:.4}, dim estimate {:.4}; bound dominates at {tested} radii",
            sing.len(),
            fit.fitted_slope,
            fit.dim_estimate
        ),
    )
}

fn hypotheses(field: &QField, l0: f64) -> Outcome {
    let inst = QFieldInstance::new(field, l0);
    let pairs: Vec<(Vec<f64>, f64)> = [0.05, 0.1, 0.15, 0.2]
        .iter()
        .map(|&s| (vec![0.0, 0.0], s))
        .collect();
    let g = field.grid();
    let probes: Vec<Vec<f64>> = (0..field.node_count())
        .map(|i| g.node_position(i))
        .filter(|x| x.iter().map(|v| v * v).sum::<f64>() < 0.04)
        .collect();
    let (h, _) = calibrate_empirical(&inst, &pairs, &probes, 0.1, 0.5, 0.1, 0.5)
        .map_err(|e| e.to_string())?;
    let good = verify_hypotheses(&inst, &pairs, &probes, &h).map_err(|e| e.to_string())?;
    if !good.counterexamples.is_empty() || good.pairs_checked == 0 {
        return Err(format!(
            "branch instance: {} counterexamples",
            good.counterexamples.len()
        ));
    }
    let broken = FnInstance::new(2, 1.0, |_, _| 1.0, |_, _, _| 1.0);
    let probes: Vec<Vec<f64>> = (0..10).map(|i| vec![0.02 * i as f64, 0.0]).collect();
    let pairs: Vec<(Vec<f64>, f64)> = probes.iter().map(|x| (x.clone(), 0.1)).collect();
    let hc = Hypotheses {
        lambda1: 0.5,
        eta1: 0.1,
        eps1: 0.1,
        eta2: 0.1,
        eps2: 0.5,
        tau: 0.1,
    };
    let bad = verify_hypotheses(&broken, &pairs, &probes, &hc).map_err(|e| e.to_string())?;
    check(
        !bad.counterexamples.is_empty(),
        format!(
            "branch instance clean over {} pairs (eta1 {:.3}, eta2 {:.3}); broken instance yields {} counterexamples",
            good.pairs_checked,
            h.eta1,
            h.eta2,
            bad.counterexamples.len()
        ),
    )
}

fn stability(field: &QField, l0: f64) -> Outcome {
    let d0 = stability_delta0(l0);
    if (d0 - 1.0 / (l0 + 1.0).sqrt()).abs() > 1e-12 {
        return Err(format!("delta0 {d0} disagrees with the closed form"));
    }
    let inst = QFieldInstance::new(field, l0);
    let g = field.grid();
    let points: Vec<Vec<f64>> = (0..field.node_count())
        .map(|i| g.node_position(i))
        .filter(|x| x.iter().map(|v| v * v).sum::<f64>() < 0.01)
        .collect();
    let deltas = [d0 / 4.0, d0 / 2.0, 0.9 * d0];
    let report =
        stability_check(&inst, &points, &deltas, 0.02, 0.2, 2.0).map_err(|e| e.to_string())?;
    check(
        report.coincide && !report.members[0].is_empty(),
        format!(
            "Lambda0 {l0:.4}, delta0 {d0:.4}; {} member(s) of {} points for every delta",
            report.members[0].len(),
            points.len()
        ),
    )
}

fn parameters() -> Outcome {
    let inputs = ParamInputs {
        n: 2,
        k: 0,
        kappa0: 0.5,
        delta: 0.5,
        r0: 1.0,
        lambda0: 1.0,
    };
    let cal = Calibration::user(0.1, 0.1, Eta2Rule::Proportional(0.5));
    let tau = derive_parameters(&inputs, Mode::ProofFaithful, Some(cal))
        .unwrap()
        .tau;
    let expected = (1.0 / (400.0 * PI)).powi(4);
    let rel = (tau - expected).abs() / expected;
    if rel > 1e-12 {
        return Err(format!("tau {tau:e} vs {expected:e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let a: u64 = rng.gen_range(1..=100);
        let b: u64 = rng.gen_range(1..=100);
        let c: u64 = rng.gen_range(1..=90);
        let d: u64 = rng.gen_range(5..=50);
        // tau = d/100, lambda1 = c/100: q is the least q with d^q <= c 100^(q-1).
        let mut q = 1u32;
        while (d as u128).pow(q) > c as u128 * 100u128.pow(q - 1) {
            q += 1;
        }
        let expected_m = 10 * q as u64 * b / a;
        let inputs = ParamInputs {
            lambda0: b as f64 / 10.0,
            ..inputs.clone()
        };
        let cal = Calibration::user(
            a as f64 / 100.0,
            c as f64 / 100.0,
            Eta2Rule::Proportional(0.5),
        );
        let p = derive_parameters(
            &inputs,
            Mode::Practical {
                tau: d as f64 / 100.0,
            },
            Some(cal),
        )
        .unwrap();
        if p.q != q as usize || p.big_m as u64 != expected_m || p.p0 != p.q + p.big_m + 1 {
            return Err(format!(
                "a={a} b={b} c={c} d={d}: got q={} M={}, expected q={q} M={expected_m}",
                p.q, p.big_m
            ));
        }
    }
    Ok(format!(
        "tau relative error {rel:e}; q and M exact on 20 random inputs"
    ))
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let omega_check = (unit_ball_volume(2) - PI).abs() < 1e-15;
    assert!(omega_check);
    let (field, l0) = branch_setup();
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("metric suite", Box::new(metric_suite)),
        ("closed-form minimizer", Box::new(closed_form_minimizer)),
        ("frequency monotonicity", Box::new(monotonicity)),
        ("homogeneity exponents", Box::new(homogeneity)),
        ("covering bounds", Box::new(|| covering(&field, l0))),
        ("singular set dimension", Box::new(|| theorem_a(&field, l0))),
        ("structural hypotheses", Box::new(|| hypotheses(&field, l0))),
        ("stability threshold", Box::new(|| stability(&field, l0))),
        ("parameter arithmetic", Box::new(parameters)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(msg) => println!("[PASS] {} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {} {name}: {msg}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
