//! Q-valued fields sampled on rectangular grids.
//!
//! The discrete gradient is selection-free: along every grid edge the
//! squared difference is the squared `G`-distance between the two nodal
//! Q-points. A node's `|Du|^2` is, per axis, the average of the squared
//! edge differences over its incident edges, divided by `h^2`, summed over
//! axes. Ball integrals weight each node by the fraction of its dual cell
//! inside the ball; sphere integrals use the deterministic layouts of
//! [`unit_sphere_samples`] with values interpolated cell-wise after
//! matching every cell corner to the corner nearest the sample.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::aq_space::{self, QPoint};
use crate::error::{Error, Result};
use crate::grid::{cell_ball_fraction, unit_sphere_samples, BallSpec, GridSpec};

/// Q-valued field `u: grid -> A_Q(R^m)` with a mask of fixed (Dirichlet) nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QField {
    grid: GridSpec,
    q: usize,
    m: usize,
    values: Vec<f64>,
    fixed: Vec<bool>,
}

/// Outcome of [`decompose_local`].
#[derive(Debug, Clone)]
pub enum Decomposition {
    /// Fields on the sub-grid covering the ball; their nodewise union is `f`.
    Separable(Vec<QField>),
    Inseparable,
}

impl QField {
    /// Builds a field from flat values (`node_count * q * m`, node-major,
    /// sheets in stored order). Fixed nodes default to the grid's outer faces.
    pub fn from_values(grid: GridSpec, q: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if q == 0 || m == 0 {
            return Err(Error::Validation("Q and m must be positive".into()));
        }
        let expected = grid.node_count() * q * m;
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} field values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("field values must be finite".into()));
        }
        let fixed = (0..grid.node_count()).map(|i| grid.is_outer(i)).collect();
        Ok(Self {
            grid,
            q,
            m,
            values,
            fixed,
        })
    }

    pub fn from_fn(
        grid: GridSpec,
        q: usize,
        m: usize,
        f: impl Fn(&[f64]) -> QPoint,
    ) -> Result<Self> {
        grid.validate()?;
        let mut values = Vec::with_capacity(grid.node_count() * q * m);
        for i in 0..grid.node_count() {
            let v = f(&grid.node_position(i));
            if v.q() != q || v.m() != m {
                return Err(Error::DimensionMismatch(format!(
                    "node value in A_{}(R^{}) for a field in A_{q}(R^{m})",
                    v.q(),
                    v.m()
                )));
            }
            values.extend_from_slice(v.as_flat());
        }
        Self::from_values(grid, q, m, values)
    }

    /// Constant field.
    pub fn constant(grid: GridSpec, value: &QPoint) -> Result<Self> {
        Self::from_fn(grid, value.q(), value.m(), |_| value.clone())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    pub fn is_fixed(&self, idx: usize) -> bool {
        self.fixed[idx]
    }

    pub fn with_fixed_mask(mut self, fixed: Vec<bool>) -> Result<Self> {
        if fixed.len() != self.node_count() {
            return Err(Error::DimensionMismatch(
                "fixed mask length differs from node count".into(),
            ));
        }
        self.fixed = fixed;
        Ok(self)
    }

    /// Frees exactly the nodes strictly inside `ball`; all others are fixed.
    pub fn with_ball_domain(self, ball: &BallSpec) -> Result<Self> {
        let fixed = (0..self.node_count())
            .map(|i| {
                let x = self.grid.node_position(i);
                let d2: f64 = x
                    .iter()
                    .zip(&ball.center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                self.grid.is_outer(i) || d2.sqrt() >= ball.radius - 1e-12
            })
            .collect();
        self.with_fixed_mask(fixed)
    }

    #[inline]
    pub fn node_slice(&self, idx: usize) -> &[f64] {
        let w = self.q * self.m;
        &self.values[idx * w..(idx + 1) * w]
    }

    pub fn value(&self, idx: usize) -> QPoint {
        QPoint::from_flat(self.q, self.m, self.node_slice(idx).to_vec()).expect("consistent field")
    }

    pub fn set_value(&mut self, idx: usize, v: &QPoint) -> Result<()> {
        if v.q() != self.q || v.m() != self.m {
            return Err(Error::DimensionMismatch(
                "node value has the wrong Q or m".into(),
            ));
        }
        let w = self.q * self.m;
        self.values[idx * w..(idx + 1) * w].copy_from_slice(v.as_flat());
        Ok(())
    }

    /// Applies `f` to every nodal value (the fixed mask is kept).
    pub fn map_values(&self, f: impl Fn(&QPoint) -> QPoint) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.node_count() {
            let v = f(&self.value(i));
            out.set_value(i, &v)?;
        }
        Ok(out)
    }

    /// `sum_i [[u_i - eta(u)]]` at every node.
    pub fn recentered(&self) -> Self {
        self.map_values(aq_space::recenter)
            .expect("recentering keeps Q and m")
    }

    /// `G(u(a), u(b))^2` for two nodes.
    pub fn edge_cost(&self, a: usize, b: usize) -> f64 {
        edge_cost_raw(self.q, self.m, self.node_slice(a), self.node_slice(b))
    }

    /// Discrete `|Du|^2` at node `idx`.
    pub fn energy_density(&self, idx: usize) -> f64 {
        let strides = self.grid.strides();
        let multi = self.grid.multi_index(idx);
        let h2 = self.spacing() * self.spacing();
        let mut total = 0.0;
        for a in 0..self.n() {
            let mut sum = 0.0;
            let mut count = 0usize;
            if multi[a] > 0 {
                sum += self.edge_cost(idx, idx - strides[a]);
                count += 1;
            }
            if multi[a] + 1 < self.grid.dims[a] {
                sum += self.edge_cost(idx, idx + strides[a]);
                count += 1;
            }
            if count > 0 {
                total += sum / count as f64;
            }
        }
        total / h2
    }

    /// Node-indicator integral of `|Du|^2` over the nodes selected by `keep`.
    pub fn dirichlet_energy_where(&self, keep: impl Fn(&[f64]) -> bool) -> f64 {
        let cell = self.spacing().powi(self.n() as i32);
        (0..self.node_count())
            .filter(|&i| keep(&self.grid.node_position(i)))
            .map(|i| self.energy_density(i))
            .sum::<f64>()
            * cell
    }

    /// Interpolated value at an arbitrary point of the grid box.
    ///
    /// Every corner of the enclosing cell is matched to the corner nearest
    /// `p`, then sheets are combined multilinearly.
    pub fn interpolate(&self, p: &[f64]) -> Result<QPoint> {
        let n = self.n();
        if p.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "point in R^{} for a field on R^{n}",
                p.len()
            )));
        }
        if !self.grid.contains_point(p) {
            return Err(Error::OutOfDomain {
                center: p.to_vec(),
                radius: 0.0,
            });
        }
        let h = self.spacing();
        let mut base = vec![0usize; n];
        let mut t = vec![0.0; n];
        for a in 0..n {
            let s = (p[a] - self.grid.origin[a]) / h;
            let max_cell = (self.grid.dims[a] - 2) as f64;
            let i = s.floor().clamp(0.0, max_cell);
            base[a] = i as usize;
            t[a] = (s - i).clamp(0.0, 1.0);
        }
        let nearest_bits: usize = (0..n).fold(0, |acc, a| acc | (usize::from(t[a] >= 0.5) << a));
        let corner = |bits: usize| -> usize {
            let multi: Vec<usize> = (0..n).map(|a| base[a] + ((bits >> a) & 1)).collect();
            self.grid.flat_index(&multi)
        };
        let reference = self.value(corner(nearest_bits));
        let mut out = vec![0.0; self.q * self.m];
        for bits in 0..(1usize << n) {
            let w: f64 = (0..n)
                .map(|a| {
                    if (bits >> a) & 1 == 1 {
                        t[a]
                    } else {
                        1.0 - t[a]
                    }
                })
                .product();
            if w == 0.0 {
                continue;
            }
            let v = self.value(corner(bits));
            let aligned = if self.q == 1 || bits == nearest_bits {
                v
            } else {
                let perm = aq_space::optimal_matching(&reference, &v)?.perm;
                v.permuted(&perm)
            };
            for (o, c) in out.iter_mut().zip(aligned.as_flat()) {
                *o += w * c;
            }
        }
        QPoint::from_flat(self.q, self.m, out)
    }

    fn check_ball(&self, ball: &BallSpec) -> Result<()> {
        if ball.center.len() != self.n() {
            return Err(Error::DimensionMismatch(
                "ball center has the wrong dimension".into(),
            ));
        }
        if !(ball.radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be positive, got {}",
                ball.radius
            )));
        }
        if !self.grid.contains_ball(ball) {
            return Err(Error::OutOfDomain {
                center: ball.center.clone(),
                radius: ball.radius,
            });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn edge_cost_raw(q: usize, m: usize, a: &[f64], b: &[f64]) -> f64 {
    if q == 1 {
        return aq_space::sq_dist(a, b);
    }
    if q == 2 {
        let d =
            |i: usize, j: usize| aq_space::sq_dist(&a[i * m..(i + 1) * m], &b[j * m..(j + 1) * m]);
        let straight = d(0, 0) + d(1, 1);
        let crossed = d(0, 1) + d(1, 0);
        return straight.min(crossed);
    }
    let qa = QPoint::from_flat(q, m, a.to_vec()).expect("consistent field");
    let qb = QPoint::from_flat(q, m, b.to_vec()).expect("consistent field");
    aq_space::g_distance_sq(&qa, &qb).expect("consistent field")
}

/// Q-valued branch map: at `z` the Q values `{coeff * zeta : zeta^Q = z^p}`.
///
/// A negative `p` gives the conjugate orientation `{coeff * conj(zeta) : zeta^Q = z^|p|}`.
pub fn branch_value(q: usize, p: i64, coeff: Complex64, z: Complex64) -> Vec<Complex64> {
    let r = z.norm();
    if r == 0.0 {
        return vec![Complex64::new(0.0, 0.0); q];
    }
    let alpha = p.unsigned_abs() as f64 / q as f64;
    let theta = z.arg();
    (0..q)
        .map(|l| {
            let phase = (p.unsigned_abs() as f64 * theta + 2.0 * std::f64::consts::PI * l as f64)
                / q as f64;
            let zeta = Complex64::from_polar(r.powf(alpha), phase);
            coeff * if p < 0 { zeta.conj() } else { zeta }
        })
        .collect()
}

pub(crate) fn complex_qpoint(values: &[Complex64], m: usize) -> QPoint {
    let mut coords = Vec::with_capacity(values.len() * m);
    for v in values {
        coords.push(v.re);
        if m >= 2 {
            coords.push(v.im);
        }
        coords.extend(std::iter::repeat_n(0.0, m.saturating_sub(2)));
    }
    QPoint::from_flat(values.len(), m, coords).expect("consistent complex point")
}

/// Branch field `coeff * z^(p/q)` on a planar grid with values in `R^2`.
pub fn make_branch_field(q: usize, p: i64, coeff: Complex64, grid: GridSpec) -> Result<QField> {
    if grid.n() != 2 {
        return Err(Error::UnsupportedDimension(format!(
            "branch fields need n = 2, got n = {}",
            grid.n()
        )));
    }
    if q == 0 || p == 0 {
        return Err(Error::InvalidArgument(
            "branch fields need q >= 1 and p != 0".into(),
        ));
    }
    QField::from_fn(grid, q, 2, |x| {
        complex_qpoint(&branch_value(q, p, coeff, Complex64::new(x[0], x[1])), 2)
    })
}

/// Integral of `|Du|^2` over `ball`.
pub fn dirichlet_energy(f: &QField, ball: &BallSpec) -> Result<f64> {
    f.check_ball(ball)?;
    let h = f.spacing();
    let lo: Vec<f64> = ball.center.iter().map(|c| c - ball.radius - h).collect();
    let hi: Vec<f64> = ball.center.iter().map(|c| c + ball.radius + h).collect();
    let nodes = f.grid.nodes_in_ranges(&f.grid.index_box(&lo, &hi));
    let cell = h.powi(f.n() as i32);
    let mut total = 0.0;
    for i in nodes {
        let w = cell_ball_fraction(&f.grid.node_position(i), h, ball);
        if w > 0.0 {
            total += w * f.energy_density(i);
        }
    }
    Ok(total * cell)
}

/// Values of `f` at the sphere samples of `partial B_radius(center)`.
pub fn sphere_trace(f: &QField, ball: &BallSpec, samples: usize) -> Result<Vec<QPoint>> {
    f.check_ball(ball)?;
    let (dirs, _) = unit_sphere_samples(f.n(), samples)?;
    dirs.iter()
        .map(|d| {
            let p: Vec<f64> = ball
                .center
                .iter()
                .zip(d)
                .map(|(c, e)| c + ball.radius * e)
                .collect();
            f.interpolate(&p)
        })
        .collect()
}

/// Minimum sample count accepted by [`boundary_h`].
pub const MIN_H_SAMPLES: usize = 16;

/// Integral of `|u|^2` over `partial B_radius(center)`.
pub fn boundary_h(f: &QField, ball: &BallSpec, samples: usize) -> Result<f64> {
    if samples < MIN_H_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "boundary_h needs >= {MIN_H_SAMPLES} samples, got {samples}"
        )));
    }
    let trace = sphere_trace(f, ball, samples)?;
    let (_, weights) = unit_sphere_samples(f.n(), samples)?;
    let scale = ball.radius.powi(f.n() as i32 - 1);
    Ok(trace
        .iter()
        .zip(&weights)
        .map(|(v, w)| w * aq_space::norm(v).powi(2))
        .sum::<f64>()
        * scale)
}

/// Default sphere sample count for radius `s`: about four samples per grid
/// cell along a circle, or four per cell face on a 2-sphere.
pub fn default_samples(f: &QField, s: f64) -> usize {
    let ratio = s / f.spacing();
    if f.n() == 3 {
        ((16.0 * std::f64::consts::PI * ratio * ratio).ceil() as usize).clamp(256, 16384)
    } else {
        ((8.0 * std::f64::consts::PI * ratio).ceil() as usize).clamp(64, 4096)
    }
}

/// Default tolerance for treating a node as a point of multiplicity Q.
///
/// Near a branch point the field grows like the square root of the
/// distance, and the discrete minimizer leaves about `1.5 sqrt(h)` at the
/// node closest to it.
pub fn default_zero_tol(f: &QField) -> f64 {
    2.0 * f.spacing().sqrt()
}

/// Grid representatives of the set where all sheets coincide: nodes whose
/// recentered value has norm below `tol` and is no larger than at any node
/// of the surrounding `3^n` block.
///
/// The local-minimum condition keeps one node per isolated branch point
/// instead of the whole `tol`-sublevel blob around it. Plateaus (for
/// instance a region where `u` is identically `Q[[0]]`) are kept entirely.
pub fn max_multiplicity_nodes(f: &QField, tol: f64) -> Vec<Vec<f64>> {
    let g = f.grid();
    let norms: Vec<f64> = (0..f.node_count())
        .into_par_iter()
        .map(|i| aq_space::norm(&aq_space::recenter(&f.value(i))))
        .collect();
    (0..f.node_count())
        .filter(|&i| {
            norms[i] < tol && {
                let ranges: Vec<(usize, usize)> = g
                    .multi_index(i)
                    .iter()
                    .zip(&g.dims)
                    .map(|(&m, &d)| (m.saturating_sub(1), (m + 1).min(d - 1)))
                    .collect();
                g.nodes_in_ranges(&ranges)
                    .into_iter()
                    .all(|j| norms[j] >= norms[i])
            }
        })
        .map(|i| g.node_position(i))
        .collect()
}

/// Splits `f` near the ball center into lower-multiplicity fields when the
/// center value has at least two clusters (at tolerance `tol`) that stay
/// separated across the ball.
///
/// The split is accepted when the minimal distance between cluster
/// representatives exceeds twice the oscillation `max G(u(y), u(center))`
/// over the sub-grid covering the ball, so every sheet is unambiguously
/// closest to one cluster.
pub fn decompose_local(f: &QField, ball: &BallSpec, tol: f64) -> Result<Decomposition> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(
            "decomposition tolerance must be positive".into(),
        ));
    }
    f.check_ball(ball)?;
    let center = f.interpolate(&ball.center)?;
    let clusters = aq_space::support_multiplicities(&center, tol);
    if clusters.len() < 2 {
        return Ok(Decomposition::Inseparable);
    }
    let lo: Vec<f64> = ball.center.iter().map(|c| c - ball.radius).collect();
    let hi: Vec<f64> = ball.center.iter().map(|c| c + ball.radius).collect();
    let ranges = f.grid.index_box(&lo, &hi);
    if ranges.iter().any(|(l, u)| u <= l) {
        return Ok(Decomposition::Inseparable);
    }
    let nodes = f.grid.nodes_in_ranges(&ranges);

    let mut oscillation = 0.0f64;
    for &i in &nodes {
        oscillation = oscillation.max(aq_space::g_distance(&f.value(i), &center)?);
    }
    let mut separation = f64::INFINITY;
    for a in 0..clusters.len() {
        for b in (a + 1)..clusters.len() {
            separation = separation.min(aq_space::sq_dist(&clusters[a].0, &clusters[b].0).sqrt());
        }
    }
    if separation <= 2.0 * oscillation {
        return Ok(Decomposition::Inseparable);
    }

    let mut pieces: Vec<Vec<f64>> = vec![Vec::with_capacity(nodes.len() * f.m * 2); clusters.len()];
    for &i in &nodes {
        let v = f.value(i);
        let mut counts = vec![0usize; clusters.len()];
        for p in v.points() {
            let (best, _) = clusters
                .iter()
                .enumerate()
                .map(|(k, (rep, _))| (k, aq_space::sq_dist(p, rep)))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("at least two clusters");
            pieces[best].extend_from_slice(p);
            counts[best] += 1;
        }
        if counts.iter().zip(&clusters).any(|(c, (_, k))| c != k) {
            return Ok(Decomposition::Inseparable);
        }
    }

    let sub_grid = GridSpec::new(
        ranges
            .iter()
            .enumerate()
            .map(|(a, r)| f.grid.origin[a] + r.0 as f64 * f.spacing())
            .collect(),
        f.spacing(),
        ranges.iter().map(|r| r.1 - r.0 + 1).collect(),
    )?;
    clusters
        .iter()
        .zip(pieces)
        .map(|((_, k), vals)| QField::from_values(sub_grid.clone(), *k, f.m, vals))
        .collect::<Result<Vec<_>>>()
        .map(Decomposition::Separable)
}
