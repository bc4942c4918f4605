//! The metric space `A_Q(R^m)` of unordered Q-tuples of points.
//!
//! A [`QPoint`] stores its Q points in an ordered buffer, but every
//! comparison quotients through permutations: two values that differ by a
//! relabelling of their points are equal, and the distance [`g_distance`]
//! is the minimal pairing cost over all permutations.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment::{self, CostMatrix};
use crate::error::{Error, Result};

/// Unordered Q-tuple of points in `R^m`; storage order is not meaningful.
#[derive(Clone, Serialize, Deserialize)]
pub struct QPoint {
    q: usize,
    m: usize,
    coords: Vec<f64>,
}

impl QPoint {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let q = points.len();
        if q == 0 {
            return Err(Error::InvalidArgument(
                "a Q-point needs Q >= 1 points".into(),
            ));
        }
        let m = points[0].len();
        if m == 0 {
            return Err(Error::InvalidArgument(
                "target dimension must be >= 1".into(),
            ));
        }
        if points.iter().any(|p| p.len() != m) {
            return Err(Error::DimensionMismatch(
                "all points of a Q-point must share the target dimension".into(),
            ));
        }
        Ok(Self {
            q,
            m,
            coords: points.into_iter().flatten().collect(),
        })
    }

    pub fn from_flat(q: usize, m: usize, coords: Vec<f64>) -> Result<Self> {
        if q == 0 || m == 0 {
            return Err(Error::InvalidArgument("Q and m must be positive".into()));
        }
        if coords.len() != q * m {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coordinates for Q={q}, m={m}, got {}",
                q * m,
                coords.len()
            )));
        }
        Ok(Self { q, m, coords })
    }

    /// `Q[[0]]`, the Q-fold origin.
    pub fn zero(q: usize, m: usize) -> Self {
        Self {
            q,
            m,
            coords: vec![0.0; q * m],
        }
    }

    /// `Q[[p]]`.
    pub fn repeated(q: usize, p: &[f64]) -> Self {
        let m = p.len();
        let mut coords = Vec::with_capacity(q * m);
        for _ in 0..q {
            coords.extend_from_slice(p);
        }
        Self { q, m, coords }
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        let m = self.m;
        &mut self.coords[i * m..(i + 1) * m]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.m)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    /// Same multiset with points stored in the order given by `perm`
    /// (`result.point(i) == self.point(perm[i])`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        debug_assert_eq!(perm.len(), self.q);
        let mut coords = Vec::with_capacity(self.coords.len());
        for &j in perm {
            coords.extend_from_slice(self.point(j));
        }
        Self {
            q: self.q,
            m: self.m,
            coords,
        }
    }

    /// Multiplies every point by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            q: self.q,
            m: self.m,
            coords: self.coords.iter().map(|c| c * factor).collect(),
        }
    }

    /// Canonical storage order: points sorted lexicographically.
    pub fn sorted(&self) -> Self {
        let mut pts: Vec<&[f64]> = self.points().collect();
        pts.sort_by(|a, b| lex_cmp(a, b));
        Self {
            q: self.q,
            m: self.m,
            coords: pts.concat(),
        }
    }

    /// Union as measures: `self + other` has `Q = self.q + other.q`.
    pub fn union(&self, other: &QPoint) -> Result<Self> {
        if self.m != other.m {
            return Err(Error::DimensionMismatch(
                "union of Q-points in different R^m".into(),
            ));
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Self {
            q: self.q + other.q,
            m: self.m,
            coords,
        })
    }
}

impl PartialEq for QPoint {
    /// Exact multiset equality.
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q && self.m == other.m && self.sorted().coords == other.sorted().coords
    }
}

impl fmt::Debug for QPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pts: Vec<&[f64]> = self.points().collect();
        write!(f, "QPoint{pts:?}")
    }
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_compatible(a: &QPoint, b: &QPoint) -> Result<()> {
    if a.q != b.q || a.m != b.m {
        return Err(Error::DimensionMismatch(format!(
            "Q-points in A_{}(R^{}) and A_{}(R^{})",
            a.q, a.m, b.q, b.m
        )));
    }
    Ok(())
}

/// Squared pairing costs `|a_i - b_j|^2`.
pub fn cost_matrix(a: &QPoint, b: &QPoint) -> CostMatrix {
    CostMatrix::from_fn(a.q, |i, j| sq_dist(a.point(i), b.point(j)))
}

/// Optimal pairing of `a` with `b`: `a.point(i)` is paired with
/// `b.point(perm[i])`; `cost` is the squared distance `G(a, b)^2`.
pub fn optimal_matching(a: &QPoint, b: &QPoint) -> Result<assignment::Assignment> {
    check_compatible(a, b)?;
    Ok(assignment::solve(&cost_matrix(a, b)))
}

/// `G(a, b)^2`.
pub fn g_distance_sq(a: &QPoint, b: &QPoint) -> Result<f64> {
    Ok(optimal_matching(a, b)?.cost)
}

/// The metric `G(a, b) = min_sigma (sum_i |a_i - b_sigma(i)|^2)^(1/2)`.
pub fn g_distance(a: &QPoint, b: &QPoint) -> Result<f64> {
    Ok(g_distance_sq(a, b)?.sqrt())
}

/// `G` computed by enumerating every permutation, regardless of Q.
pub fn g_distance_exhaustive(a: &QPoint, b: &QPoint) -> Result<f64> {
    check_compatible(a, b)?;
    Ok(assignment::solve_exhaustive(&cost_matrix(a, b)).cost.sqrt())
}

/// `G` computed by the Hungarian method, regardless of Q.
pub fn g_distance_hungarian(a: &QPoint, b: &QPoint) -> Result<f64> {
    check_compatible(a, b)?;
    Ok(assignment::solve_hungarian(&cost_matrix(a, b)).cost.sqrt())
}

/// Barycenter `eta(a) = (1/Q) sum_i a_i`.
pub fn eta_mean(a: &QPoint) -> Vec<f64> {
    let mut mean = vec![0.0; a.m];
    for p in a.points() {
        for (acc, c) in mean.iter_mut().zip(p) {
            *acc += c;
        }
    }
    let inv = 1.0 / a.q as f64;
    mean.iter_mut().for_each(|c| *c *= inv);
    mean
}

/// `sum_i [[a_i - eta(a)]]`.
pub fn recenter(a: &QPoint) -> QPoint {
    let mean = eta_mean(a);
    let mut out = a.clone();
    for i in 0..out.q {
        for (c, mu) in out.point_mut(i).iter_mut().zip(&mean) {
            *c -= mu;
        }
    }
    out
}

/// `|a| = G(a, Q[[0]])`.
pub fn norm(a: &QPoint) -> f64 {
    a.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Single-linkage clusters of the points of `a` at mutual distance `<= tol`.
///
/// Each cluster is reported by the mean of its members together with its
/// multiplicity; clusters are sorted lexicographically by representative,
/// so the result does not depend on storage order.
pub fn support_multiplicities(a: &QPoint, tol: f64) -> Vec<(Vec<f64>, usize)> {
    let q = a.q;
    let mut parent: Vec<usize> = (0..q).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let tol_sq = tol * tol;
    for i in 0..q {
        for j in (i + 1)..q {
            if sq_dist(a.point(i), a.point(j)) <= tol_sq {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut sums: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut root_slot = vec![usize::MAX; q];
    for i in 0..q {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = sums.len();
            sums.push((vec![0.0; a.m], 0));
        }
        let slot = &mut sums[root_slot[r]];
        for (acc, c) in slot.0.iter_mut().zip(a.point(i)) {
            *acc += c;
        }
        slot.1 += 1;
    }
    for (rep, k) in sums.iter_mut() {
        let inv = 1.0 / *k as f64;
        rep.iter_mut().for_each(|c| *c *= inv);
    }
    sums.sort_by(|x, y| lex_cmp(&x.0, &y.0));
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn qp(pts: &[&[f64]]) -> QPoint {
        QPoint::new(pts.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = qp(&[&[0.3, -1.0], &[2.0, 5.0]]);
        assert_eq!(g_distance(&a, &a).unwrap(), 0.0);

        let a = QPoint::zero(2, 2);
        let b = qp(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert_relative_eq!(g_distance(&a, &b).unwrap(), 2f64.sqrt(), epsilon = 1e-15);

        // Both pairings cost 1 + 2 = 3 and 1 + 2 = 3.
        let a = qp(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let b = qp(&[&[1.0, 0.0], &[1.0, 1.0]]);
        assert_relative_eq!(g_distance(&a, &b).unwrap(), 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn mismatched_dimensions_error() {
        let a = QPoint::zero(2, 2);
        let b = QPoint::zero(3, 2);
        assert!(matches!(
            g_distance(&a, &b),
            Err(Error::DimensionMismatch(_))
        ));
        let c = QPoint::zero(2, 3);
        assert!(matches!(
            g_distance(&a, &c),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn mean_recenter_norm() {
        assert_eq!(eta_mean(&QPoint::repeated(2, &[1.0, 1.0])), vec![1.0, 1.0]);
        assert_eq!(eta_mean(&qp(&[&[1.0, 0.0], &[-1.0, 0.0]])), vec![0.0, 0.0]);
        assert_eq!(eta_mean(&qp(&[&[0.0, 0.0], &[2.0, 4.0]])), vec![1.0, 2.0]);

        assert_eq!(
            recenter(&qp(&[&[1.0, 0.0], &[3.0, 0.0]])),
            qp(&[&[-1.0, 0.0], &[1.0, 0.0]])
        );
        let centered = qp(&[&[-1.0, 2.0], &[1.0, -2.0]]);
        assert_eq!(recenter(&centered), centered);
        assert_eq!(
            recenter(&QPoint::repeated(3, &[2.0, 2.0])),
            QPoint::zero(3, 2)
        );

        assert_eq!(norm(&QPoint::zero(4, 3)), 0.0);
        assert_relative_eq!(norm(&qp(&[&[1.0, 0.0], &[0.0, 1.0]])), 2f64.sqrt());
        assert_relative_eq!(norm(&qp(&[&[3.0, 0.0], &[0.0, 4.0]])), 5.0);
    }

    #[test]
    fn multiplicities() {
        let c = support_multiplicities(&QPoint::zero(2, 2), 0.0);
        assert_eq!(c, vec![(vec![0.0, 0.0], 2)]);

        let c = support_multiplicities(&qp(&[&[1.0, 0.0], &[-1.0, 0.0]]), 0.5);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|(_, k)| *k == 1));

        let a = qp(&[&[1.0, 0.0], &[0.0, 0.0], &[1e-9, 0.0]]);
        let c = support_multiplicities(&a, 1e-6);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].1, 2);
        assert!(c[0].0[0].abs() < 1e-8 && c[0].0[1] == 0.0);
        assert_eq!(c[1], (vec![1.0, 0.0], 1));
        // Storage order does not matter.
        assert_eq!(support_multiplicities(&a.permuted(&[2, 0, 1]), 1e-6), c);
    }

    #[test]
    fn equality_is_multiset_equality() {
        let a = qp(&[&[1.0, 2.0], &[3.0, 4.0], &[1.0, 2.0]]);
        assert_eq!(a, a.permuted(&[1, 2, 0]));
        assert_ne!(a, qp(&[&[1.0, 2.0], &[3.0, 4.0], &[3.0, 4.0]]));
    }

    fn arb_pair(max_q: usize, max_m: usize) -> impl Strategy<Value = (QPoint, QPoint, QPoint)> {
        (1..=max_q, 1..=max_m).prop_flat_map(|(q, m)| {
            let v = || prop::collection::vec(-5.0f64..5.0, q * m);
            (v(), v(), v()).prop_map(move |(a, b, c)| {
                (
                    QPoint::from_flat(q, m, a).unwrap(),
                    QPoint::from_flat(q, m, b).unwrap(),
                    QPoint::from_flat(q, m, c).unwrap(),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn metric_axioms((a, b, c) in arb_pair(5, 3)) {
            let ab = g_distance(&a, &b).unwrap();
            let ba = g_distance(&b, &a).unwrap();
            let ac = g_distance(&a, &c).unwrap();
            let cb = g_distance(&c, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert_eq!(g_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn rigid_motion_invariance((a, b, _c) in arb_pair(4, 2), theta in 0.0f64..6.3, tx in -3.0f64..3.0, ty in -3.0f64..3.0) {
            if a.m() == 2 {
                let (s, co) = theta.sin_cos();
                let mv = |p: &QPoint| {
                    let pts = p.points().map(|x| vec![co * x[0] - s * x[1] + tx, s * x[0] + co * x[1] + ty]).collect();
                    QPoint::new(pts).unwrap()
                };
                let d0 = g_distance(&a, &b).unwrap();
                let d1 = g_distance(&mv(&a), &mv(&b)).unwrap();
                prop_assert!((d0 - d1).abs() <= 1e-9 * (1.0 + d0));
            }
        }

        #[test]
        fn centering_reduces_norm((a, _b, _c) in arb_pair(5, 3)) {
            prop_assert!(norm(&recenter(&a)) <= norm(&a) + 1e-12);
            prop_assert!(eta_mean(&recenter(&a)).iter().all(|c| c.abs() < 1e-12));
        }

        #[test]
        fn hungarian_equals_exhaustive((a, b, _c) in arb_pair(6, 3)) {
            prop_assert_eq!(g_distance_hungarian(&a, &b).unwrap(), g_distance_exhaustive(&a, &b).unwrap());
        }

        #[test]
        fn norm_is_distance_to_origin((a, _b, _c) in arb_pair(5, 3)) {
            let z = QPoint::zero(a.q(), a.m());
            prop_assert!((norm(&a) - g_distance(&a, &z).unwrap()).abs() < 1e-12);
        }
    }
}
