//! Frequency analytics: `D`, `H`, `I = s D / H`, monotonicity audits,
//! pinching, blowups and the scale bound `Lambda0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aq_space;
use crate::error::{Error, Result};
use crate::grid::{BallSpec, GridSpec};
use crate::qfield::{boundary_h, default_samples, dirichlet_energy, QField};

/// `H` below this is treated as `u = Q[[0]]` on the sphere.
pub const H_FLOOR: f64 = 1e-14;

/// Smallest radius at which frequencies are trusted: four grid cells.
pub fn r_min(f: &QField) -> f64 {
    4.0 * f.spacing()
}

/// Allowed decrease of `I` between consecutive radii.
pub fn tol_mono(h: f64, min_radius: f64) -> f64 {
    0.02 + 5.0 * h / min_radius
}

fn ball(x: &[f64], s: f64) -> BallSpec {
    BallSpec::new(x.to_vec(), s)
}

/// `(D, H)` at `(x, s)`.
pub fn d_and_h(f: &QField, x: &[f64], s: f64) -> Result<(f64, f64)> {
    let b = ball(x, s);
    let d = dirichlet_energy(f, &b)?;
    let h = boundary_h(f, &b, default_samples(f, s))?;
    Ok((d, h))
}

pub fn frequency(f: &QField, x: &[f64], s: f64) -> Result<f64> {
    let (d, h) = d_and_h(f, x, s)?;
    if h < H_FLOOR {
        return Err(Error::DegenerateFrequency { h, radius: s });
    }
    Ok(s * d / h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub d_vals: Vec<f64>,
    pub h_vals: Vec<f64>,
    pub i_vals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityAudit {
    pub tol: f64,
    /// `(j, I[j] - I[j+1])` for every drop larger than `tol`.
    pub violations: Vec<(usize, f64)>,
    pub max_drop: f64,
}

impl MonotonicityAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl RadialProfile {
    /// Checks that `i_vals` is nondecreasing up to [`tol_mono`] for spacing `h`.
    pub fn audit(&self, h: f64) -> MonotonicityAudit {
        let min_r = self.radii.first().copied().unwrap_or(f64::INFINITY);
        let tol = tol_mono(h, min_r);
        let mut violations = Vec::new();
        let mut max_drop = 0.0f64;
        for (j, w) in self.i_vals.windows(2).enumerate() {
            let drop = w[0] - w[1];
            max_drop = max_drop.max(drop);
            if drop > tol {
                violations.push((j, drop));
            }
        }
        MonotonicityAudit {
            tol,
            violations,
            max_drop,
        }
    }
}

pub fn radial_profile(f: &QField, x: &[f64], radii: &[f64]) -> Result<RadialProfile> {
    if radii.is_empty() {
        return Err(Error::InvalidArgument(
            "radial profile needs at least one radius".into(),
        ));
    }
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    let rows: Vec<(f64, f64)> = radii
        .par_iter()
        .map(|&s| d_and_h(f, x, s))
        .collect::<Result<_>>()?;
    let mut i_vals = Vec::with_capacity(radii.len());
    for (&s, &(d, h)) in radii.iter().zip(&rows) {
        if h < H_FLOOR {
            return Err(Error::DegenerateFrequency { h, radius: s });
        }
        i_vals.push(s * d / h);
    }
    Ok(RadialProfile {
        center: x.to_vec(),
        radii: radii.to_vec(),
        d_vals: rows.iter().map(|r| r.0).collect(),
        h_vals: rows.iter().map(|r| r.1).collect(),
        i_vals,
    })
}

/// Geometric radii from `lo` to `hi` (inclusive), `count >= 2` values.
pub fn geometric_radii(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return Err(Error::InvalidArgument(format!(
            "bad radius range {lo}..{hi} with {count} values"
        )));
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    Ok((0..count)
        .map(|j| {
            if j + 1 == count {
                hi
            } else {
                lo * ratio.powi(j as i32)
            }
        })
        .collect())
}

/// `I(x, s) - I(x, lambda s)`.
pub fn pinch(f: &QField, x: &[f64], s: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pinch ratio must lie in (0, 1], got {lambda}"
        )));
    }
    if lambda == 1.0 {
        frequency(f, x, s)?;
        return Ok(0.0);
    }
    Ok(frequency(f, x, s)? - frequency(f, x, lambda * s)?)
}

/// Rescaled field `s^((n-2)/2) u(y + s x) / sqrt(D(y, s))` sampled on `out_grid`.
///
/// Requires `|u(y)| <= zero_tol`; the result has unit energy on the unit ball.
pub fn blowup(f: &QField, y: &[f64], s: f64, out_grid: &GridSpec, zero_tol: f64) -> Result<QField> {
    if out_grid.n() != f.n() {
        return Err(Error::DimensionMismatch(
            "blowup grid has the wrong dimension".into(),
        ));
    }
    let at_y = f.interpolate(y)?;
    if aq_space::norm(&at_y) > zero_tol {
        return Err(Error::Precondition(format!(
            "blowup center must carry Q[[0]], found |u(y)| = {:.3e}",
            aq_space::norm(&at_y)
        )));
    }
    let d = dirichlet_energy(f, &ball(y, s))?;
    if !(d > H_FLOOR) {
        return Err(Error::DegenerateBlowup(format!("D(y, {s}) = {d:e}")));
    }
    let factor = s.powf((f.n() as f64 - 2.0) / 2.0) / d.sqrt();
    let values: Vec<Vec<f64>> = (0..out_grid.node_count())
        .into_par_iter()
        .map(|i| {
            let p: Vec<f64> = out_grid
                .node_position(i)
                .iter()
                .zip(y)
                .map(|(xi, yi)| yi + s * xi)
                .collect();
            f.interpolate(&p).map(|v| v.scaled(factor).into_flat())
        })
        .collect::<Result<_>>()?;
    QField::from_values(out_grid.clone(), f.q(), f.m(), values.concat())
}

/// Integration domain for [`lambda0`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// The whole grid box.
    Grid,
    Ball(BallSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lambda0 {
    pub value: f64,
    pub r0: f64,
    pub energy: f64,
    pub min_h: f64,
    pub argmin: Vec<f64>,
    /// Grid nodes of the inner domain at distance >= 2 r0 from the boundary.
    pub inner_nodes: usize,
}

/// Dual-cell weight of a node inside the grid box (halved on each outer face).
fn box_weight(g: &GridSpec, idx: usize) -> f64 {
    g.multi_index(idx)
        .iter()
        .zip(&g.dims)
        .map(|(&i, &d)| if i == 0 || i + 1 == d { 0.5 } else { 1.0 })
        .product()
}

/// Nodes of `domain` at distance at least `margin` from its boundary.
pub fn inner_nodes(f: &QField, domain: &Domain, margin: f64) -> Vec<usize> {
    let g = f.grid();
    let hi = g.upper_corner();
    let tol = 1e-9 * g.spacing;
    (0..f.node_count())
        .filter(|&i| {
            let x = g.node_position(i);
            match domain {
                Domain::Grid => x
                    .iter()
                    .zip(g.origin.iter().zip(&hi))
                    .all(|(v, (lo, up))| v - lo >= margin - tol && up - v >= margin - tol),
                Domain::Ball(b) => {
                    let r = x
                        .iter()
                        .zip(&b.center)
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum::<f64>()
                        .sqrt();
                    b.radius - r >= margin - tol
                }
            }
        })
        .collect()
}

/// `r0 * int_Omega |Du|^2 / min_{x in Omega^r0} H(x, r0)` with
/// `Omega^r0 = {x : dist(x, boundary) >= 2 r0}` sampled at grid nodes.
pub fn lambda0(f: &QField, domain: &Domain, r0: f64) -> Result<Lambda0> {
    if !(r0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "r0 must be positive, got {r0}"
        )));
    }
    let energy = match domain {
        Domain::Ball(b) => dirichlet_energy(f, b)?,
        Domain::Grid => {
            let cell = f.spacing().powi(f.n() as i32);
            (0..f.node_count())
                .map(|i| box_weight(f.grid(), i) * f.energy_density(i))
                .sum::<f64>()
                * cell
        }
    };
    let nodes = inner_nodes(f, domain, 2.0 * r0);
    if nodes.is_empty() {
        return Err(Error::DomainTooSmall(format!(
            "no grid node lies at distance >= {} from the boundary",
            2.0 * r0
        )));
    }
    let samples = default_samples(f, r0);
    let hs: Vec<f64> = nodes
        .par_iter()
        .map(|&i| boundary_h(f, &ball(&f.grid().node_position(i), r0), samples))
        .collect::<Result<_>>()?;
    let (k, &min_h) = hs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty node set");
    if min_h < H_FLOOR {
        return Err(Error::DegenerateFrequency {
            h: min_h,
            radius: r0,
        });
    }
    Ok(Lambda0 {
        value: r0 * energy / min_h,
        r0,
        energy,
        min_h,
        argmin: f.grid().node_position(nodes[k]),
        inner_nodes: nodes.len(),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "slope fit needs at least two paired values".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(
            "log-log fit needs positive values".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "slope fit needs distinct abscissae".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Exponents of `H` and `D` against `r` at `x`, fitted on `radii`.
pub fn homogeneity_exponents(f: &QField, x: &[f64], radii: &[f64]) -> Result<(f64, f64)> {
    let p = radial_profile(f, x, radii)?;
    Ok((
        loglog_slope(radii, &p.h_vals)?,
        loglog_slope(radii, &p.d_vals)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aq_space::QPoint;
    use crate::qfield::make_branch_field;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn grid(nodes: usize) -> GridSpec {
        GridSpec::cube(2, -1.0, 1.0, nodes).unwrap()
    }

    fn x1(nodes: usize) -> QField {
        QField::from_fn(grid(nodes), 1, 1, |x| {
            QPoint::from_flat(1, 1, vec![x[0]]).unwrap()
        })
        .unwrap()
    }

    #[test]
    fn frequency_examples() {
        let f = x1(129);
        for s in [0.1, 0.3, 0.6] {
            assert_relative_eq!(
                frequency(&f, &[0.0, 0.0], s).unwrap(),
                1.0,
                max_relative = 0.02
            );
        }
        let b = make_branch_field(2, 1, Complex64::new(1.0, 0.0), grid(257)).unwrap();
        for s in [0.2, 0.4, 0.8] {
            assert_relative_eq!(
                frequency(&b, &[0.0, 0.0], s).unwrap(),
                0.5,
                max_relative = 0.02
            );
        }
        let z = QField::constant(grid(17), &QPoint::zero(2, 2)).unwrap();
        assert!(matches!(
            frequency(&z, &[0.0, 0.0], 0.5),
            Err(Error::DegenerateFrequency { .. })
        ));
    }

    #[test]
    fn pinch_examples() {
        let f = x1(65);
        assert!(pinch(&f, &[0.0, 0.0], 0.5, 0.5).unwrap().abs() < 0.01);
        assert_eq!(pinch(&f, &[0.0, 0.0], 0.5, 1.0).unwrap(), 0.0);
        assert!(pinch(&f, &[0.0, 0.0], 0.5, 0.0).is_err());
    }

    #[test]
    fn energy_spike_breaks_monotonicity_audit() {
        let g = grid(129);
        let f = QField::from_fn(g, 1, 1, |x| {
            let bump =
                0.3 * (30.0 * x[1]).sin() * (-(x[0] * x[0] + x[1] * x[1]) / 0.15f64.powi(2)).exp();
            QPoint::from_flat(1, 1, vec![x[0] + bump]).unwrap()
        })
        .unwrap();
        let radii = geometric_radii(0.1, 0.8, 8).unwrap();
        let audit = radial_profile(&f, &[0.0, 0.0], &radii)
            .unwrap()
            .audit(f.spacing());
        assert!(!audit.passed(), "{audit:?}");

        let clean = x1(129);
        assert!(radial_profile(&clean, &[0.0, 0.0], &radii)
            .unwrap()
            .audit(clean.spacing())
            .passed());
    }

    #[test]
    fn blowup_of_branch_field_is_self_similar() {
        let b = make_branch_field(2, 1, Complex64::new(1.0, 0.0), grid(257)).unwrap();
        let out = GridSpec::cube(2, -1.0, 1.0, 129).unwrap();
        let s = 0.4;
        let u = blowup(&b, &[0.0, 0.0], s, &out, 1e-12).unwrap();
        let e = dirichlet_energy(&u, &BallSpec::at_origin(2, 1.0)).unwrap();
        assert!((e - 1.0).abs() <= 0.02, "{e}");
        let reference = make_branch_field(2, 1, Complex64::new(1.0, 0.0), out).unwrap();
        let scale = (s.sqrt())
            / dirichlet_energy(&b, &BallSpec::at_origin(2, s))
                .unwrap()
                .sqrt();
        for i in (0..u.node_count()).step_by(97) {
            let expect = reference.value(i).scaled(scale);
            assert!(aq_space::g_distance(&u.value(i), &expect).unwrap() < 1e-3);
        }
        assert!(matches!(
            blowup(
                &b,
                &[0.5, 0.0],
                0.2,
                &GridSpec::cube(2, -1.0, 1.0, 9).unwrap(),
                1e-6
            ),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn lambda0_examples() {
        let f = x1(129);
        let l = lambda0(&f, &Domain::Ball(BallSpec::at_origin(2, 1.0)), 0.25).unwrap();
        assert_relative_eq!(l.value, 16.0, max_relative = 0.05);
        assert!(l.argmin[0].abs() < 0.02);

        let z = QField::constant(grid(33), &QPoint::zero(2, 2)).unwrap();
        assert!(lambda0(&z, &Domain::Grid, 0.25).is_err());
        assert!(matches!(
            lambda0(&f, &Domain::Grid, 0.6),
            Err(Error::DomainTooSmall(_))
        ));
    }

    #[test]
    fn slope_fit_recovers_power() {
        let xs = [0.1, 0.2, 0.4, 0.8];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert_relative_eq!(loglog_slope(&xs, &ys).unwrap(), 1.7, epsilon = 1e-12);
    }
}
