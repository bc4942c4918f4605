//! Covering, strata and tubular-volume properties on synthetic sets.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qstrat_core::frequency::loglog_slope;
use qstrat_core::minkowski::{tubular_volume, Window};
use qstrat_core::strat::{
    derive_parameters, iterative_cover, membership_scales, strata_membership, Calibration,
    CoverCase, Eta2Rule, Mode, ParamInputs,
};
use qstrat_core::{minkowski_fit, vitali_cover, FnInstance};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cloud(seed: u64, n: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vitali_balls_cover_the_fifth_neighborhood(seed in 0u64..1000, count in 1usize..80, rho in 0.05f64..0.8) {
        let pts = cloud(seed, 2, count);
        let cover = vitali_cover(&pts, rho).unwrap();
        let centers: Vec<&Vec<f64>> = cover.centers.iter().map(|&i| &pts[i]).collect();
        for (a, c) in centers.iter().enumerate() {
            for d in &centers[a + 1..] {
                prop_assert!(dist(c, d) >= 0.4 * rho);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for p in &pts {
            for _ in 0..20 {
                let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r: f64 = rng.gen_range(0.0..rho / 5.0);
                let y = [p[0] + r * t.cos(), p[1] + r * t.sin()];
                prop_assert!(centers.iter().any(|c| dist(c, &y) < rho));
            }
        }
    }

    #[test]
    fn tubular_volume_is_monotone_and_subadditive(seed in 0u64..1000, count in 1usize..30) {
        let e = cloud(seed, 2, count);
        let f = cloud(seed + 7, 2, count);
        let w = Window::cube(2, -1.3, 1.3).unwrap();
        let cell = 0.004;
        let mut prev = 0.0;
        for r in [0.02, 0.05, 0.1, 0.2] {
            let v = tubular_volume(&e, r, &w, cell).unwrap();
            prop_assert!(v.volume >= prev);
            prev = v.volume;
        }
        let r = 0.1;
        let both: Vec<Vec<f64>> = e.iter().chain(&f).cloned().collect();
        let ve = tubular_volume(&e, r, &w, cell).unwrap();
        let vf = tubular_volume(&f, r, &w, cell).unwrap();
        let vu = tubular_volume(&both, r, &w, cell).unwrap();
        let slack = 2.0 * (ve.error_bound + vf.error_bound + vu.error_bound);
        prop_assert!(vu.volume <= ve.volume + vf.volume + slack);
    }

    #[test]
    fn strata_are_nested(
        profile in proptest::collection::vec(0.0f64..1.0, 3),
        bump in 0.0f64..0.5,
        delta in 0.05f64..0.9,
        shrink in 0.0f64..1.0,
        i in 0usize..6,
        j in 0usize..6,
    ) {
        // d_k(x, s) nondecreasing in k, varying with x and s.
        let inst = FnInstance::new(2, 1.0, |_, _| 1.0, move |x, s, k| {
            let base: f64 = profile[..=k].iter().sum();
            base + bump * (x[0] + s).sin().abs()
        });
        let r0 = 0.5;
        let lattice = |t: usize| r0 / 2f64.powi(t as i32 + 1);
        let (r, r2) = (lattice(i.max(j)), lattice(i.min(j)));
        let delta2 = delta * shrink;
        for x in [[0.1, 0.0], [0.7, 0.2], [-0.4, 0.9]] {
            for k in 0..2 {
                let inner = strata_membership(&inst, &x, k, r, r0, delta, 2.0).unwrap();
                if !inner.member {
                    continue;
                }
                for k2 in k..2 {
                    let outer = strata_membership(&inst, &x, k2, r2, r0, delta2, 2.0).unwrap();
                    prop_assert!(outer.member, "k {k} -> {k2}, r {r} -> {r2}, delta {delta} -> {delta2}");
                }
            }
        }
    }
}

#[test]
fn membership_scales_are_a_geometric_lattice() {
    let s = membership_scales(0.5 / 64.0, 0.5, 2.0).unwrap();
    assert_eq!(s.len(), 7);
    let t = membership_scales(0.5 / 8.0, 0.5, 2.0).unwrap();
    assert!(t.iter().all(|v| s.contains(v)));
}

fn line_instance(n: usize, k: usize) -> FnInstance {
    let basis: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    FnInstance::new(
        n,
        1.0,
        |_, _| 1.0,
        move |_, _, j| if j > k { 1.0 } else { 0.0 },
    )
    .with_subspace(move |_, _| basis.clone())
}

fn params(n: usize, k: usize, depth: usize) -> qstrat_core::StratParams {
    let inputs = ParamInputs {
        n,
        k,
        kappa0: 0.5,
        delta: 0.5,
        r0: 0.5,
        lambda0: 1.0,
    };
    derive_parameters(
        &inputs,
        Mode::Practical { tau: 0.2 },
        Some(Calibration::user(0.1, 0.2, Eta2Rule::Proportional(0.5))),
    )
    .unwrap()
    .with_depth(depth)
    .unwrap()
}

#[test]
fn cover_bounds_dominate_measured_volumes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seg: Vec<Vec<f64>> = (0..400)
        .map(|_| vec![rng.gen_range(-0.5..0.5), 0.0])
        .collect();
    let p = params(2, 1, 4);
    let report = iterative_cover(&line_instance(2, 1), &seg, &p, &BTreeSet::new()).unwrap();
    assert!(report.passed);
    for &(r, bound) in &report.tubular_bounds {
        let w = Window::around(&seg, 1.1 * r).unwrap();
        let v = tubular_volume(&seg, r, &w, r / 16.0).unwrap();
        assert!(v.volume <= bound, "r = {r}: {} > {bound}", v.volume);
    }
    let (rs, bs): (Vec<f64>, Vec<f64>) = report.tubular_bounds.iter().copied().unzip();
    let slope = loglog_slope(&rs, &bs).unwrap();
    assert!(slope >= 2.0 - 1.0 - 0.5 - 0.1, "{slope}");
}

#[test]
fn bad_levels_use_the_volume_factor() {
    let pts = cloud(5, 2, 300);
    let p = params(2, 0, 3);
    let bad: BTreeSet<usize> = (0..10).collect();
    let report = iterative_cover(&line_instance(2, 0), &pts, &p, &bad).unwrap();
    assert!(report.passed);
    assert!(report.levels[1..].iter().all(|l| l.case == CoverCase::Bad));
    let allowed = 20f64.powi(2) * 0.2f64.powi(-2);
    assert!(report.levels[1..]
        .iter()
        .all(|l| l.allowed_children == Some(allowed)));
}

#[test]
fn capture_failures_are_reported() {
    // Claims a horizontal spine while the points spread vertically.
    let pts: Vec<Vec<f64>> = (0..200)
        .map(|i| vec![0.0, i as f64 / 200.0 - 0.5])
        .collect();
    let report = iterative_cover(
        &line_instance(2, 1),
        &pts,
        &params(2, 1, 3),
        &BTreeSet::new(),
    )
    .unwrap();
    assert!(!report.passed);
    assert!(report.levels.iter().any(|l| l.capture_failures > 0));
}

#[test]
fn fit_recovers_plane_dimensions() {
    let w2 = Window::cube(2, -1.0, 1.0).unwrap();
    let line: Vec<Vec<f64>> = (0..=4000)
        .map(|i| vec![2.0 * i as f64 / 4000.0 - 1.0, 0.1])
        .collect();
    let w = Window::new(vec![-1.2, -0.3], vec![1.2, 0.5]).unwrap();
    let est = minkowski_fit(&line, Some(&[0.005, 0.01, 0.02, 0.04, 0.08]), &w, 0.001).unwrap();
    assert!(
        (est.dim_estimate - 1.0).abs() <= 0.1,
        "{}",
        est.dim_estimate
    );
    let point = minkowski_fit(&[vec![0.2, -0.3]], None, &w2, 1.0 / 512.0).unwrap();
    assert!(point.dim_estimate.abs() <= 0.1, "{}", point.dim_estimate);
    let line3: Vec<Vec<f64>> = (0..=800)
        .map(|i| vec![2.0 * i as f64 / 800.0 - 1.0, 0.0, 0.0])
        .collect();
    let w3 = Window::new(vec![-1.1, -0.11, -0.11], vec![1.1, 0.11, 0.11]).unwrap();
    let est3 = minkowski_fit(&line3, Some(&[0.01, 0.02, 0.04, 0.07, 0.1]), &w3, 0.0025).unwrap();
    assert!(
        (est3.dim_estimate - 1.0).abs() <= 0.1,
        "{}",
        est3.dim_estimate
    );
}

proptest! {
    #[test]
    fn derived_parameters_are_consistent(
        n in 1usize..5,
        kappa0 in 0.05f64..0.95,
        delta in 0.05f64..0.95,
        tau in 0.02f64..0.6,
        eta1 in 0.01f64..0.5,
        lambda1 in 0.05f64..0.95,
        lambda0 in 0.1f64..5.0,
    ) {
        let k = n - 1;
        let inputs = ParamInputs { n, k, kappa0, delta, r0: 1.0, lambda0 };
        let cal = Calibration::user(eta1, lambda1, Eta2Rule::Proportional(0.5));
        let p = derive_parameters(&inputs, Mode::Practical { tau }, Some(cal)).unwrap();
        let q = p.q as i32;
        prop_assert!(p.tau.powi(q) <= lambda1 * (1.0 + 1e-12));
        prop_assert!(q == 1 || p.tau.powi(q - 1) > lambda1);
        prop_assert_eq!(p.p0, p.q + p.big_m + 1);
        prop_assert_eq!(p.gamma.len(), k + 1);
        prop_assert!(p.gamma.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*p.gamma.last().unwrap(), delta);
    }
}
