//! Rectangular node grids, balls, and sphere sample layouts.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform node grid: node `i` along axis `a` sits at `origin[a] + i * spacing`.
///
/// Nodes are stored row-major over `(axis 0, axis 1, ...)`, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub dims: Vec<usize>,
}

impl GridSpec {
    pub fn new(origin: Vec<f64>, spacing: f64, dims: Vec<usize>) -> Result<Self> {
        let g = Self {
            origin,
            spacing,
            dims,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square (cube) grid on `[lo, hi]^n` with `nodes` nodes per axis.
    pub fn cube(n: usize, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if nodes < 2 || !(hi > lo) {
            return Err(Error::Validation(format!(
                "bad cube grid [{lo}, {hi}] with {nodes} nodes"
            )));
        }
        Self::new(vec![lo; n], (hi - lo) / (nodes - 1) as f64, vec![nodes; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() != self.origin.len() {
            return Err(Error::Validation(
                "origin and dims must have the domain dimension".into(),
            ));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return Err(Error::Validation(format!(
                "spacing must be positive, got {}",
                self.spacing
            )));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::Validation(format!(
                "every grid extent must be >= 2, got {:?}",
                self.dims
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Validation("origin must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dims.len()
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Index stride of each axis.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.n();
        let mut s = vec![1usize; n];
        for a in (0..n.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.dims[a + 1];
        }
        s
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.n()];
        for a in (0..self.n()).rev() {
            out[a] = idx % self.dims[a];
            idx /= self.dims[a];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn node_position(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .zip(&self.origin)
            .map(|(&i, o)| o + i as f64 * self.spacing)
            .collect()
    }

    pub fn upper_corner(&self) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.dims)
            .map(|(o, &d)| o + (d - 1) as f64 * self.spacing)
            .collect()
    }

    /// Whether a node lies on the outer faces of the grid box.
    pub fn is_outer(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .zip(&self.dims)
            .any(|(&i, &d)| i == 0 || i + 1 == d)
    }

    fn slack(&self) -> f64 {
        1e-9 * self.spacing
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        let hi = self.upper_corner();
        p.iter()
            .zip(self.origin.iter().zip(&hi))
            .all(|(x, (lo, up))| *x >= lo - self.slack() && *x <= up + self.slack())
    }

    pub fn contains_ball(&self, ball: &BallSpec) -> bool {
        if ball.center.len() != self.n() {
            return false;
        }
        let hi = self.upper_corner();
        ball.center
            .iter()
            .zip(self.origin.iter().zip(&hi))
            .all(|(c, (lo, up))| {
                c - ball.radius >= lo - self.slack() && c + ball.radius <= up + self.slack()
            })
    }

    /// Inclusive per-axis node index ranges of the box `[lo, hi]`, clamped to the grid.
    pub fn index_box(&self, lo: &[f64], hi: &[f64]) -> Vec<(usize, usize)> {
        (0..self.n())
            .map(|a| {
                let h = self.spacing;
                let max = (self.dims[a] - 1) as f64;
                let l = ((lo[a] - self.origin[a]) / h - 1e-9).ceil().clamp(0.0, max) as usize;
                let u = ((hi[a] - self.origin[a]) / h + 1e-9)
                    .floor()
                    .clamp(0.0, max) as usize;
                (l, u.max(l))
            })
            .collect()
    }

    /// Flat indices of every node inside the per-axis inclusive ranges.
    pub fn nodes_in_ranges(&self, ranges: &[(usize, usize)]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        if ranges.iter().any(|r| r.0 > r.1) {
            return out;
        }
        loop {
            out.push(self.flat_index(&cur));
            let mut a = ranges.len();
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if cur[a] < ranges[a].1 {
                    cur[a] += 1;
                    for b in (a + 1)..ranges.len() {
                        cur[b] = ranges[b].0;
                    }
                    break;
                }
            }
        }
    }
}

/// The closed ball `B_radius(center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallSpec {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn at_origin(n: usize, radius: f64) -> Self {
        Self {
            center: vec![0.0; n],
            radius,
        }
    }
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// Surface measure of the unit sphere in `R^n`.
pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Deterministic quadrature nodes on the unit sphere `S^{n-1}` with weights
/// summing to its measure: equispaced angles from 0 for `n = 2`, a Fibonacci
/// lattice with equal weights for `n = 3`.
pub fn unit_sphere_samples(n: usize, samples: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if samples == 0 {
        return Err(Error::InvalidArgument(
            "sphere sampling needs at least one sample".into(),
        ));
    }
    let w = unit_sphere_area(n) / samples as f64;
    let dirs = match n {
        2 => (0..samples)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / samples as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..samples)
                .map(|j| {
                    let z = 1.0 - (2.0 * j as f64 + 1.0) / samples as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * j as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            return Err(Error::UnsupportedDimension(format!(
                "sphere sampling in R^{n}"
            )))
        }
    };
    Ok((dirs, vec![w; samples]))
}

/// Fraction of the dual cell `[x - h/2, x + h/2]^n` of a node at `x`
/// covered by `ball`; cells cut by the sphere are sub-sampled.
pub fn cell_ball_fraction(x: &[f64], h: f64, ball: &BallSpec) -> f64 {
    const SUB: usize = 16;
    let r2 = ball.radius * ball.radius;
    let half = 0.5 * h;
    let mut near = 0.0;
    let mut far = 0.0;
    for (xi, ci) in x.iter().zip(&ball.center) {
        let d = (xi - ci).abs();
        let dn = (d - half).max(0.0);
        let df = d + half;
        near += dn * dn;
        far += df * df;
    }
    if far <= r2 {
        return 1.0;
    }
    if near >= r2 {
        return 0.0;
    }
    let n = x.len();
    let total = SUB.pow(n as u32);
    let mut inside = 0usize;
    let mut digits = vec![0usize; n];
    for _ in 0..total {
        let mut d2 = 0.0;
        for a in 0..n {
            let off = ((digits[a] as f64 + 0.5) / SUB as f64 - 0.5) * h;
            let dx = x[a] + off - ball.center[a];
            d2 += dx * dx;
        }
        if d2 <= r2 {
            inside += 1;
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < SUB {
                break;
            }
            *d = 0;
        }
    }
    inside as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn index_round_trip() {
        let g = GridSpec::new(vec![0.0, 0.0, 0.0], 0.5, vec![3, 4, 5]).unwrap();
        for idx in 0..g.node_count() {
            assert_eq!(g.flat_index(&g.multi_index(idx)), idx);
        }
        assert_eq!(g.strides(), vec![20, 5, 1]);
    }

    #[test]
    fn validation() {
        assert!(GridSpec::new(vec![0.0, 0.0], 0.0, vec![3, 3]).is_err());
        assert!(GridSpec::new(vec![0.0, 0.0], 0.1, vec![1, 3]).is_err());
        assert!(GridSpec::new(vec![0.0], 0.1, vec![3, 3]).is_err());
    }

    #[test]
    fn sphere_weights_sum_to_area() {
        let (_, w) = unit_sphere_samples(2, 37).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0 * PI, epsilon = 1e-12);
        let (d, w) = unit_sphere_samples(3, 100).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 4.0 * PI, epsilon = 1e-12);
        assert!(d
            .iter()
            .all(|p| (p.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(unit_sphere_samples(2, 0).is_err());
    }

    #[test]
    fn ball_volumes() {
        assert_relative_eq!(unit_ball_volume(2), PI);
        assert_relative_eq!(unit_ball_volume(3), 4.0 * PI / 3.0);
        assert_relative_eq!(unit_sphere_area(3), 4.0 * PI);
    }

    #[test]
    fn coverage_weights_integrate_disk_area() {
        let g = GridSpec::cube(2, -1.0, 1.0, 81).unwrap();
        let ball = BallSpec::at_origin(2, 0.63);
        let area: f64 = (0..g.node_count())
            .map(|i| cell_ball_fraction(&g.node_position(i), g.spacing, &ball))
            .sum::<f64>()
            * g.spacing
            * g.spacing;
        assert_relative_eq!(area, PI * 0.63 * 0.63, max_relative = 2e-3);
    }
}
