//! Vitali covers, tubular-neighborhood volumes and Minkowski-dimension fits.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aq_space::sq_dist;
use crate::error::{Error, Result};
use crate::frequency::loglog_slope;
use crate::grid::unit_ball_volume;

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidArgument(format!(
                "bad window {lo:?} .. {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// Bounding box of `points` grown by `margin`.
    pub fn around(points: &[Vec<f64>], margin: f64) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("no points".into()))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            for a in 0..lo.len() {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Self::new(
            lo.iter().map(|v| v - margin).collect(),
            hi.iter().map(|v| v + margin).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.lo.len()
    }

    pub fn min_side(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn contains_tube(&self, points: &[Vec<f64>], r: f64) -> bool {
        points.iter().all(|p| {
            p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (lo, hi))| x - r >= *lo && x + r <= *hi)
        })
    }
}

fn check_points(points: &[Vec<f64>], n: usize) -> Result<()> {
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "every point must lie in R^{n}"
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("points must be finite".into()));
    }
    Ok(())
}

/// Balls `B_rho(x_i)` with centers taken from the input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitaliCover {
    pub rho: f64,
    /// Indices of the selected centers, in selection order.
    pub centers: Vec<usize>,
}

/// Greedy farthest-point selection: start at the first point, then keep
/// adding the point farthest from the chosen centers (lowest index on ties)
/// while that distance is at least `2 rho / 5`.
///
/// Centers are pairwise at least `2 rho / 5` apart, and every point is
/// closer than `2 rho / 5` to a center, so the balls cover `T_{rho/5}(E)`.
pub fn vitali_cover(points: &[Vec<f64>], rho: f64) -> Result<VitaliCover> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cover radius must be positive, got {rho}"
        )));
    }
    if points.is_empty() {
        return Ok(VitaliCover {
            rho,
            centers: Vec::new(),
        });
    }
    check_points(points, points[0].len())?;
    let sep2 = (0.4 * rho).powi(2);
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut centers = Vec::new();
    let mut next = 0usize;
    loop {
        centers.push(next);
        let c = &points[next];
        nearest
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, c)));
        let (far, dist) =
            nearest
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &d)| {
                    if d > acc.1 {
                        (i, d)
                    } else {
                        acc
                    }
                });
        if dist < sep2 {
            break;
        }
        next = far;
    }
    Ok(VitaliCover { rho, centers })
}

/// `5^n |T_{rho/5}(E)| / (omega_n rho^n)`.
pub fn vitali_bound(n: usize, rho: f64, tube_volume: f64) -> f64 {
    5f64.powi(n as i32) * tube_volume / (unit_ball_volume(n) * rho.powi(n as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeMethod {
    Grid,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubularVolume {
    pub volume: f64,
    /// Volume of marked cells touching an unmarked one (grid) or three
    /// standard errors (Monte Carlo).
    pub error_bound: f64,
    pub method: VolumeMethod,
    /// Cell size (grid) or sample count (Monte Carlo).
    pub resolution: f64,
}

const MAX_CELLS: usize = 1 << 31;

/// Groups points whose distance is at most `link` (single linkage), in order
/// of first appearance.
fn clusters(points: &[Vec<f64>], link: f64) -> Vec<Vec<usize>> {
    let key = |p: &[f64]| -> Vec<i64> { p.iter().map(|x| (x / link).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let n = points.first().map_or(0, Vec::len);
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(n as u32))
        .map(|mut c| {
            (0..n)
                .map(|_| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let link2 = link * link;
    let mut label = vec![usize::MAX; points.len()];
    let mut out = Vec::new();
    for seed in 0..points.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        label[seed] = out.len();
        let mut members = vec![seed];
        let mut next = 0;
        while next < members.len() {
            let i = members[next];
            next += 1;
            let k = key(&points[i]);
            for off in &offsets {
                let nb: Vec<i64> = k.iter().zip(off).map(|(a, b)| a + b).collect();
                for &j in buckets.get(&nb).map_or(&[][..], Vec::as_slice) {
                    if label[j] == usize::MAX && sq_dist(&points[i], &points[j]) <= link2 {
                        label[j] = out.len();
                        members.push(j);
                    }
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Counts window cells whose center lies within `r` of some point.
///
/// Cells live on one lattice anchored at `window.lo`, but only the blocks
/// around clusters of points closer than `2r` are allocated, so sparse sets
/// at small radii stay cheap. Cells counted by two blocks would need points
/// of different clusters within `2r`, so the block counts add up.
pub fn tubular_volume(
    points: &[Vec<f64>],
    r: f64,
    window: &Window,
    cell: f64,
) -> Result<TubularVolume> {
    if !(r > 0.0) || !(cell > 0.0) {
        return Err(Error::InvalidArgument(
            "radius and cell size must be positive".into(),
        ));
    }
    if r / cell < 4.0 {
        return Err(Error::Resolution(format!(
            "radius {r} spans fewer than 4 cells of size {cell}"
        )));
    }
    let n = window.n();
    check_points(points, n)?;
    if points.is_empty() {
        return Ok(TubularVolume {
            volume: 0.0,
            error_bound: 0.0,
            method: VolumeMethod::Grid,
            resolution: cell,
        });
    }
    if !window.contains_tube(points, r) {
        return Err(Error::InvalidArgument(format!(
            "window does not contain the {r}-neighborhood of the points"
        )));
    }
    let dims: Vec<usize> = (0..n)
        .map(|a| ((window.hi[a] - window.lo[a]) / cell).ceil().max(1.0) as usize)
        .collect();
    let groups = clusters(points, 2.0 * r);
    let blocks: Vec<(Vec<usize>, Vec<usize>)> = groups
        .iter()
        .map(|g| {
            (0..n)
                .map(|a| {
                    let (mn, mx) = g
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), &i| {
                            (mn.min(points[i][a]), mx.max(points[i][a]))
                        });
                    let lo =
                        (((mn - r - window.lo[a]) / cell - 0.5).floor() - 1.0).max(0.0) as usize;
                    let hi = ((((mx + r - window.lo[a]) / cell - 0.5).ceil() + 1.0) as usize)
                        .min(dims[a] - 1);
                    (lo, hi - lo + 1)
                })
                .unzip()
        })
        .collect();
    let total = blocks
        .iter()
        .try_fold(0usize, |acc, (_, d)| {
            d.iter()
                .try_fold(1usize, |t, &x| t.checked_mul(x))
                .and_then(|t| acc.checked_add(t))
        })
        .filter(|&t| t <= MAX_CELLS);
    if total.is_none() {
        return Err(Error::InvalidArgument(format!(
            "tube needs more than {MAX_CELLS} cells"
        )));
    }
    let (count, boundary) = groups
        .iter()
        .zip(&blocks)
        .map(|(g, (origin, bdims))| count_block(points, g, r, window, cell, origin, bdims))
        .fold((0, 0), |(c, b), (c2, b2)| (c + c2, b + b2));
    let cell_vol = cell.powi(n as i32);
    Ok(TubularVolume {
        volume: count as f64 * cell_vol,
        error_bound: boundary as f64 * cell_vol,
        method: VolumeMethod::Grid,
        resolution: cell,
    })
}

/// Marked and boundary cell counts for one block of the lattice.
fn count_block(
    points: &[Vec<f64>],
    members: &[usize],
    r: f64,
    window: &Window,
    cell: f64,
    origin: &[usize],
    dims: &[usize],
) -> (usize, usize) {
    let n = dims.len();
    let total: usize = dims.iter().product();
    let mut strides = vec![1usize; n];
    for a in (0..n - 1).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let mut marked = vec![0u64; total.div_ceil(64)];
    let r2 = r * r;
    let mut idx = vec![0usize; n];
    for p in members.iter().map(|&i| &points[i]) {
        let lo: Vec<usize> = (0..n)
            .map(|a| {
                ((((p[a] - r - window.lo[a]) / cell - 0.5).floor().max(0.0)) as usize)
                    .max(origin[a])
                    - origin[a]
            })
            .collect();
        let hi: Vec<usize> = (0..n)
            .map(|a| {
                ((((p[a] + r - window.lo[a]) / cell - 0.5).ceil()) as usize)
                    .min(origin[a] + dims[a] - 1)
                    - origin[a]
            })
            .collect();
        idx.copy_from_slice(&lo);
        'cells: loop {
            let mut d2 = 0.0;
            for a in 0..n {
                let c = window.lo[a] + ((origin[a] + idx[a]) as f64 + 0.5) * cell - p[a];
                d2 += c * c;
            }
            if d2 < r2 {
                let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
                marked[flat / 64] |= 1 << (flat % 64);
            }
            let mut a = n;
            loop {
                if a == 0 {
                    break 'cells;
                }
                a -= 1;
                if idx[a] < hi[a] {
                    idx[a] += 1;
                    idx[a + 1..n].copy_from_slice(&lo[a + 1..n]);
                    break;
                }
            }
        }
    }
    let is_set = |flat: usize| marked[flat / 64] >> (flat % 64) & 1 == 1;
    let mut count = 0usize;
    let mut boundary = 0usize;
    for flat in 0..total {
        if !is_set(flat) {
            continue;
        }
        count += 1;
        let mut rem = flat;
        for a in 0..n {
            let i = rem / strides[a];
            rem %= strides[a];
            if (i > 0 && !is_set(flat - strides[a]))
                || (i + 1 < dims[a] && !is_set(flat + strides[a]))
            {
                boundary += 1;
                break;
            }
        }
    }
    (count, boundary)
}

/// Monte Carlo estimate of `|T_r(E)|` from uniform samples in the window.
pub fn tubular_volume_mc(
    points: &[Vec<f64>],
    r: f64,
    window: &Window,
    samples: usize,
    seed: u64,
) -> Result<TubularVolume> {
    if !(r > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(
            "radius and sample count must be positive".into(),
        ));
    }
    let n = window.n();
    check_points(points, n)?;
    if !points.is_empty() && !window.contains_tube(points, r) {
        return Err(Error::InvalidArgument(format!(
            "window does not contain the {r}-neighborhood of the points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            (0..n)
                .map(|a| rng.gen_range(window.lo[a]..window.hi[a]))
                .collect()
        })
        .collect();
    let r2 = r * r;
    let hits = draws
        .par_iter()
        .filter(|x| points.iter().any(|p| sq_dist(p, x) < r2))
        .count();
    let frac = hits as f64 / samples as f64;
    let vol = window.volume();
    Ok(TubularVolume {
        volume: frac * vol,
        error_bound: 3.0 * vol * (frac * (1.0 - frac) / samples as f64).sqrt(),
        method: VolumeMethod::MonteCarlo,
        resolution: samples as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubularEstimate {
    /// Decreasing radii.
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    pub fitted_slope: f64,
    pub dim_estimate: f64,
    pub method: VolumeMethod,
    pub resolution: f64,
}

/// Geometric radii with ratio 1/2 from `min_side / 8` down to 8 cells.
pub fn default_fit_radii(window: &Window, cell: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = window.min_side() / 8.0;
    while r >= 8.0 * cell * (1.0 - 1e-12) {
        out.push(r);
        r *= 0.5;
    }
    out
}

/// Slope of `log |T_r(E)|` against `log r`; `dim_estimate = n - slope`.
pub fn minkowski_fit(
    points: &[Vec<f64>],
    radii: Option<&[f64]>,
    window: &Window,
    cell: f64,
) -> Result<TubularEstimate> {
    let mut radii: Vec<f64> = match radii {
        Some(r) => r.to_vec(),
        None => default_fit_radii(window, cell),
    };
    radii.sort_by(|a, b| b.total_cmp(a));
    radii.dedup();
    if radii.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "a fit needs at least 4 radii, got {}",
            radii.len()
        )));
    }
    if radii[0] < 10.0 * radii[radii.len() - 1] * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(
            "fit radii must span at least a decade".into(),
        ));
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit the dimension of an empty set".into(),
        ));
    }
    let volumes: Vec<f64> = radii
        .par_iter()
        .map(|&r| tubular_volume(points, r, window, cell).map(|t| t.volume))
        .collect::<Result<_>>()?;
    let slope = loglog_slope(&radii, &volumes)?;
    Ok(TubularEstimate {
        radii,
        volumes,
        fitted_slope: slope,
        dim_estimate: window.n() as f64 - slope,
        method: VolumeMethod::Grid,
        resolution: cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn vitali_examples() {
        let one = vitali_cover(&[vec![0.0, 0.0]], 1.0).unwrap();
        assert_eq!(one.centers, vec![0]);
        let tube = PI / 25.0;
        assert_relative_eq!(vitali_bound(2, 1.0, tube), 1.0, epsilon = 1e-12);
        let two = vitali_cover(&[vec![0.0, 0.0], vec![10.0, 0.0]], 1.0).unwrap();
        assert_eq!(two.centers.len(), 2);
        assert!(vitali_cover(&[], 1.0).unwrap().centers.is_empty());
        assert!(vitali_cover(&[vec![0.0]], 0.0).is_err());
    }

    #[test]
    fn vitali_cover_is_separated_and_covering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let rho = 0.2;
        let cover = vitali_cover(&pts, rho).unwrap();
        for (a, &i) in cover.centers.iter().enumerate() {
            for &j in &cover.centers[a + 1..] {
                assert!(sq_dist(&pts[i], &pts[j]).sqrt() >= 0.4 * rho);
            }
        }
        for p in &pts {
            assert!(cover
                .centers
                .iter()
                .any(|&c| sq_dist(p, &pts[c]).sqrt() < 0.4 * rho));
        }
    }

    #[test]
    fn tubular_examples() {
        let w = Window::cube(2, -2.0, 2.0).unwrap();
        let disk = tubular_volume(&[vec![0.0, 0.0]], 1.0, &w, 0.01).unwrap();
        assert_relative_eq!(disk.volume, PI, max_relative = 0.02);
        let seg: Vec<Vec<f64>> = (0..=1000)
            .map(|i| vec![i as f64 / 1000.0 - 0.5, 0.0])
            .collect();
        let stadium =
            tubular_volume(&seg, 0.1, &Window::cube(2, -1.0, 1.0).unwrap(), 0.002).unwrap();
        assert_relative_eq!(stadium.volume, 0.2 + PI * 0.01, max_relative = 0.03);
        assert!(matches!(
            tubular_volume(&[vec![0.0, 0.0]], 0.03, &w, 0.01),
            Err(Error::Resolution(_))
        ));
        let mc = tubular_volume_mc(&[vec![0.0, 0.0]], 1.0, &w, 200_000, 1).unwrap();
        assert!((mc.volume - PI).abs() <= mc.error_bound);

        let far = [vec![-1.5, -1.5], vec![1.5, 1.5], vec![1.5, 1.5 + 1e-6]];
        let tiny = tubular_volume(&far, 1e-6, &w, 1e-7).unwrap();
        // One disk plus two disks whose centers are one radius apart.
        let lens = 2.0 * PI / 3.0 - 3f64.sqrt() / 2.0;
        assert_relative_eq!(tiny.volume, (3.0 * PI - lens) * 1e-12, max_relative = 0.02);
    }

    #[test]
    fn clusters_link_within_the_threshold() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![5.0, 0.0],
            vec![0.9, 0.0],
            vec![1.8, 0.1],
            vec![5.0, 1.5],
        ];
        assert_eq!(clusters(&pts, 1.0), vec![vec![0, 2, 3], vec![1], vec![4]]);
        assert_eq!(clusters(&pts, 2.0).len(), 2);
    }

    #[test]
    fn fit_examples() {
        let w = Window::cube(2, -1.0, 1.0).unwrap();
        let cell = 1.0 / 512.0;
        let point = minkowski_fit(&[vec![0.0, 0.0]], None, &w, cell).unwrap();
        assert!((point.fitted_slope - 2.0).abs() < 0.05, "{point:?}");
        assert!(point.volumes.windows(2).all(|v| v[1] <= v[0]));
        let seg: Vec<Vec<f64>> = (0..=2000)
            .map(|i| vec![i as f64 / 2000.0 - 0.5, 0.0])
            .collect();
        let line = minkowski_fit(
            &seg,
            Some(&[0.005, 0.01, 0.02, 0.04, 0.08]),
            &w,
            1.0 / 1024.0,
        )
        .unwrap();
        assert!((line.dim_estimate - 1.0).abs() < 0.1, "{line:?}");
        assert!(minkowski_fit(&seg, Some(&[0.01, 0.02, 0.04]), &w, cell).is_err());
    }
}
