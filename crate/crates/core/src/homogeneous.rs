//! Homogeneous competitors and the distances `d_k`.
//!
//! A competitor is a superposition of branch blocks `{c_j zeta : zeta^q_j = z^p_j}`
//! sharing the exponent `alpha = |p_j| / q_j`, where `z` is the planar
//! coordinate of the domain point (for `n = 3`, its projection onto the plane
//! orthogonal to the spine line). Negative `p_j` means the conjugate
//! orientation. Values live in the first two target coordinates.
//!
//! `d_k(x, s)` is the smallest `L^2(dB_1)` matching distance between the
//! blowup trace at `(x, s)` and a catalog competitor whose spine has
//! dimension at least `k`; the zero competitor belongs to every class.
//! Block coefficients are fitted by alternating an optimal sheet assignment
//! with a closed-form complex least-squares step. A rotation of the domain
//! plane multiplies each block by a phase, so it is carried by the fitted
//! coefficients instead of a separate angle search.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aq_space::{self, QPoint};
use crate::assignment::{self, CostMatrix};
use crate::error::{Error, Result};
use crate::grid::{unit_sphere_samples, BallSpec, GridSpec};
use crate::qfield::{branch_value, complex_qpoint, dirichlet_energy, QField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub q: usize,
    pub p: i64,
    #[serde(with = "complex_serde")]
    pub coeff: Complex64,
}

mod complex_serde {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [c.re, c.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Competitor {
    pub n: usize,
    pub q: usize,
    pub m: usize,
    pub blocks: Vec<Block>,
    pub alpha: f64,
    /// Orthonormal rows; the first two span the plane the branches live on.
    pub frame: Vec<Vec<f64>>,
    pub invariance_dim: usize,
    /// Orthonormal basis of the invariance subspace.
    pub v: Vec<Vec<f64>>,
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Orthonormal frame whose last row is `normal`.
fn frame_with_normal(normal: &[f64]) -> Vec<Vec<f64>> {
    let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e3: Vec<f64> = normal.iter().map(|v| v / len).collect();
    let pick = if e3[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let dot: f64 = pick.iter().zip(&e3).map(|(a, b)| a * b).sum();
    let mut e1: Vec<f64> = pick.iter().zip(&e3).map(|(a, b)| a - dot * b).collect();
    let l1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    e1.iter_mut().for_each(|v| *v /= l1);
    let e2 = vec![
        e3[1] * e1[2] - e3[2] * e1[1],
        e3[2] * e1[0] - e3[0] * e1[2],
        e3[0] * e1[1] - e3[1] * e1[0],
    ];
    vec![e1, e2, e3]
}

impl Competitor {
    pub fn zero(n: usize, q: usize, m: usize) -> Self {
        Self {
            n,
            q,
            m,
            blocks: Vec::new(),
            alpha: 0.0,
            frame: identity(n),
            invariance_dim: n,
            v: identity(n),
        }
    }

    /// Planar competitor (`n = 2`, spine `{0}`).
    pub fn planar(m: usize, blocks: Vec<Block>) -> Result<Self> {
        Self::build(2, m, blocks, identity(2))
    }

    /// Competitor in `R^3` invariant along `normal`.
    pub fn cylindrical(m: usize, blocks: Vec<Block>, normal: &[f64]) -> Result<Self> {
        if normal.len() != 3 || !(normal.iter().map(|v| v * v).sum::<f64>() > 0.0) {
            return Err(Error::Validation(
                "cylindrical competitors need a nonzero normal in R^3".into(),
            ));
        }
        Self::build(3, m, blocks, frame_with_normal(normal))
    }

    fn build(n: usize, m: usize, blocks: Vec<Block>, frame: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Validation(
                "use Competitor::zero for the zero competitor".into(),
            ));
        }
        if m < 2 {
            return Err(Error::UnsupportedDimension(
                "branch competitors need m >= 2".into(),
            ));
        }
        let alpha = blocks[0].p.unsigned_abs() as f64 / blocks[0].q.max(1) as f64;
        let c = Self {
            n,
            q: blocks.iter().map(|b| b.q).sum(),
            m,
            alpha,
            v: if n == 3 {
                vec![frame[2].clone()]
            } else {
                Vec::new()
            },
            invariance_dim: n - 2,
            blocks,
            frame,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        for b in &self.blocks {
            if b.q == 0 || b.p == 0 {
                return Err(Error::Validation(format!(
                    "block (q={}, p={}) needs q >= 1 and p != 0",
                    b.q, b.p
                )));
            }
            if (b.p.unsigned_abs() as f64 / b.q as f64 - self.alpha).abs() > 1e-12 {
                return Err(Error::Validation(
                    "all blocks must share the homogeneity exponent".into(),
                ));
            }
            if !b.coeff.re.is_finite() || !b.coeff.im.is_finite() {
                return Err(Error::Validation(
                    "block coefficients must be finite".into(),
                ));
            }
        }
        if self.blocks.iter().map(|b| b.q).sum::<usize>() != self.q {
            return Err(Error::Validation("block sizes must add up to Q".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Validation("alpha must be positive".into()));
        }
        Ok(())
    }

    fn plane_coord(&self, x: &[f64]) -> Complex64 {
        let d = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        Complex64::new(d(&self.frame[0]), d(&self.frame[1]))
    }

    fn complex_values(&self, x: &[f64]) -> Vec<Complex64> {
        let z = self.plane_coord(x);
        self.blocks
            .iter()
            .flat_map(|b| branch_value(b.q, b.p, b.coeff, z))
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> QPoint {
        if self.is_zero() {
            return QPoint::zero(self.q, self.m);
        }
        complex_qpoint(&self.complex_values(x), self.m)
    }

    pub fn to_field(&self, grid: GridSpec) -> Result<QField> {
        if grid.n() != self.n {
            return Err(Error::DimensionMismatch(
                "grid dimension differs from the competitor's".into(),
            ));
        }
        QField::from_fn(grid, self.q, self.m, |x| self.eval(x))
    }
}

/// Sphere samples with one value each.
#[derive(Debug, Clone)]
pub struct TraceSamples {
    pub dirs: Vec<Vec<f64>>,
    pub values: Vec<QPoint>,
    pub weights: Vec<f64>,
}

impl TraceSamples {
    /// `(sum_k w_k |v_k|^2)^(1/2)`.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * aq_space::norm(v).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `L^2` matching distance to another trace on the same samples.
    pub fn distance(&self, other: &TraceSamples) -> Result<f64> {
        let mut t = 0.0;
        for ((a, b), w) in self.values.iter().zip(&other.values).zip(&self.weights) {
            t += w * aq_space::g_distance_sq(a, b)?;
        }
        Ok(t.sqrt())
    }
}

pub fn competitor_trace(c: &Competitor, samples: usize) -> Result<TraceSamples> {
    c.validate()?;
    let (dirs, weights) = unit_sphere_samples(c.n, samples)?;
    let values = dirs.iter().map(|d| c.eval(d)).collect();
    Ok(TraceSamples {
        dirs,
        values,
        weights,
    })
}

/// Dimension of the stored invariance subspace.
pub fn spine_dim(c: &Competitor) -> usize {
    c.invariance_dim
}

/// Numerical spine check: translations along `V` leave sampled values fixed
/// (to 1e-10) and every frame direction outside `V` moves some value.
pub fn verify_spine(c: &Competitor) -> bool {
    let probes: Vec<Vec<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..24)
            .map(|_| (0..c.n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let shifted = |x: &[f64], dir: &[f64], t: f64| -> Vec<f64> {
        x.iter().zip(dir).map(|(a, b)| a + t * b).collect()
    };
    let moved = |dir: &[f64]| {
        probes.iter().any(|x| {
            [0.37, -0.81].iter().any(|&t| {
                aq_space::g_distance(&c.eval(&shifted(x, dir, t)), &c.eval(x)).expect("same Q")
                    > 1e-10
            })
        })
    };
    let invariant = c.v.iter().all(|dir| !moved(dir));
    if c.invariance_dim >= c.n {
        return invariant;
    }
    let transverse: Vec<&Vec<f64>> = c
        .frame
        .iter()
        .filter(|e| {
            c.v.iter().all(|v| {
                v.iter()
                    .zip(e.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs()
                    < 1e-12
            })
        })
        .collect();
    invariant && transverse.iter().all(|e| moved(e))
}

/// Closure shadow on a catalog sequence: the limit's spine dimension is at
/// least the smallest one over the second half of the sequence.
pub fn catalog_closure_check(seq: &[Competitor], limit: &Competitor) -> bool {
    if seq.is_empty() {
        return true;
    }
    let tail = &seq[seq.len() / 2..];
    let min_tail = tail.iter().map(spine_dim).min().expect("nonempty tail");
    spine_dim(limit) >= min_tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Sphere samples for traces.
    pub samples: usize,
    /// Largest homogeneity exponent searched (also capped by `lambda0`).
    pub alpha_cap: f64,
    pub lambda0: Option<f64>,
    pub max_rounds: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Spine directions tried for `n = 3`.
    pub normals: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            samples: 256,
            alpha_cap: 3.0,
            lambda0: None,
            max_rounds: 50,
            restarts: 4,
            seed: 0,
            normals: 24,
        }
    }
}

impl SearchOptions {
    fn alpha_max(&self) -> f64 {
        self.lambda0
            .map_or(self.alpha_cap, |l| l.min(self.alpha_cap))
    }
}

/// Block layout of a catalog family: part sizes and signed windings.
#[derive(Debug, Clone, PartialEq)]
struct Shape {
    parts: Vec<usize>,
    ps: Vec<i64>,
    normal: Option<Vec<f64>>,
}

fn partitions_min2(q: usize, max_part: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if q == 0 {
        out.push(prefix.clone());
        return;
    }
    for part in (2..=max_part.min(q)).rev() {
        prefix.push(part);
        partitions_min2(q - part, part, prefix, out);
        prefix.pop();
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn planar_shapes(q: usize, alpha_max: f64) -> Vec<Shape> {
    let mut parts_list = Vec::new();
    partitions_min2(q, q, &mut Vec::new(), &mut parts_list);
    let mut out = Vec::new();
    for parts in parts_list {
        let g = parts.iter().fold(0, |a, &b| gcd(a, b));
        let max_a = (alpha_max * g as f64 + 1e-9).floor() as usize;
        for a in 1..=max_a {
            let base: Vec<i64> = parts.iter().map(|&qj| (a * qj / g) as i64).collect();
            for signs in 0..(1usize << parts.len()) {
                let ps = base
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| if (signs >> j) & 1 == 1 { -p } else { p })
                    .collect();
                out.push(Shape {
                    parts: parts.clone(),
                    ps,
                    normal: None,
                });
            }
        }
    }
    out
}

/// Fibonacci points on the upper hemisphere.
fn hemisphere_normals(count: usize) -> Vec<Vec<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|j| {
            let z = 1.0 - (j as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * j as f64;
            vec![r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Fitting targets: complex first-two-coordinate values plus the squared
/// norm of the remaining coordinates, per sample.
struct Target<'a> {
    trace: &'a TraceSamples,
    values: Vec<Vec<Complex64>>,
    rest: Vec<f64>,
}

impl<'a> Target<'a> {
    fn new(trace: &'a TraceSamples) -> Self {
        let values = trace
            .values
            .iter()
            .map(|v| {
                v.points()
                    .map(|p| Complex64::new(p[0], if p.len() > 1 { p[1] } else { 0.0 }))
                    .collect()
            })
            .collect();
        let rest = trace
            .values
            .iter()
            .map(|v| {
                v.points()
                    .map(|p| p.iter().skip(2).map(|c| c * c).sum::<f64>())
                    .sum()
            })
            .collect();
        Self {
            trace,
            values,
            rest,
        }
    }

    fn zero_cost(&self) -> f64 {
        self.trace.l2_norm().powi(2)
    }
}

struct Fit {
    cost: f64,
    coeffs: Vec<Complex64>,
}

/// Alternating assignment / least-squares fit of the block coefficients.
fn fit_shape(shape: &Shape, target: &Target, opts: &SearchOptions, frame: &[Vec<f64>]) -> Fit {
    let q: usize = shape.parts.iter().sum();
    // Unit-coefficient branch values per sample, block-major.
    let basis: Vec<Vec<Complex64>> = target
        .trace
        .dirs
        .iter()
        .map(|d| {
            let dot = |row: &[f64]| row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
            let z = Complex64::new(dot(&frame[0]), dot(&frame[1]));
            shape
                .parts
                .iter()
                .zip(&shape.ps)
                .flat_map(|(&qj, &pj)| branch_value(qj, pj, Complex64::new(1.0, 0.0), z))
                .collect()
        })
        .collect();
    let block_of: Vec<usize> = shape
        .parts
        .iter()
        .enumerate()
        .flat_map(|(j, &qj)| std::iter::repeat_n(j, qj))
        .collect();
    let weights = &target.trace.weights;

    // q-th power estimate for each block's coefficient.
    let power_init: Vec<Complex64> = shape
        .parts
        .iter()
        .enumerate()
        .map(|(j, &qj)| {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for (k, ys) in target.values.iter().enumerate() {
                let start: usize = shape.parts[..j].iter().sum();
                // beta^q_j is the same for every branch of block j.
                let bq = basis[k][start].powu(qj as u32);
                for y in ys {
                    num += weights[k] * y.powu(qj as u32) * bq.conj();
                    den += weights[k] * bq.norm_sqr();
                }
            }
            if den > 0.0 {
                (num / den).powf(1.0 / qj as f64)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(
        opts.seed
            ^ (shape.parts.len() as u64) << 32
            ^ shape.ps.iter().map(|p| p.unsigned_abs()).sum::<u64>(),
    );
    let mut best = Fit {
        cost: f64::INFINITY,
        coeffs: power_init.clone(),
    };
    let mut perm = vec![0usize; q];
    for restart in 0..opts.restarts.max(1) {
        let mut coeffs: Vec<Complex64> = if restart == 0 {
            power_init.clone()
        } else {
            power_init
                .iter()
                .map(|c| {
                    Complex64::from_polar(
                        c.norm().max(1e-3),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        };
        let mut prev_perms: Vec<Vec<usize>> = Vec::new();
        let mut cost = f64::INFINITY;
        for _round in 0..opts.max_rounds.max(1) {
            let mut perms = Vec::with_capacity(basis.len());
            let mut num = vec![Complex64::new(0.0, 0.0); shape.parts.len()];
            let mut den = vec![0.0; shape.parts.len()];
            cost = 0.0;
            for (k, ys) in target.values.iter().enumerate() {
                let model: Vec<Complex64> = basis[k]
                    .iter()
                    .zip(&block_of)
                    .map(|(b, &j)| coeffs[j] * b)
                    .collect();
                let cm = CostMatrix::from_fn(q, |i, t| (model[i] - ys[t]).norm_sqr());
                let a = assignment::solve(&cm);
                perm.copy_from_slice(&a.perm);
                cost += weights[k] * (a.cost + target.rest[k]);
                for i in 0..q {
                    let j = block_of[i];
                    num[j] += weights[k] * basis[k][i].conj() * ys[perm[i]];
                    den[j] += weights[k] * basis[k][i].norm_sqr();
                }
                perms.push(perm.clone());
            }
            if perms == prev_perms {
                break;
            }
            prev_perms = perms;
            for j in 0..coeffs.len() {
                if den[j] > 0.0 {
                    coeffs[j] = num[j] / den[j];
                }
            }
        }
        // `cost` belongs to the coefficients used in the final assignment pass.
        if cost < best.cost {
            best = Fit {
                cost,
                coeffs: coeffs.clone(),
            };
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DkResult {
    pub value: f64,
    pub competitor: Competitor,
    pub trace_norm: f64,
}

/// Blowup trace `s^((n-2)/2) u(x + s theta) / sqrt(D(x, s))` on the sphere
/// samples. `None` when the field vanishes on the sphere and has no energy.
pub fn blowup_trace(f: &QField, x: &[f64], s: f64, samples: usize) -> Result<Option<TraceSamples>> {
    let ball = BallSpec::new(x.to_vec(), s);
    let d = dirichlet_energy(f, &ball)?;
    let (dirs, weights) = unit_sphere_samples(f.n(), samples)?;
    let raw: Vec<QPoint> = dirs
        .iter()
        .map(|e| {
            let p: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + s * b).collect();
            f.interpolate(&p)
        })
        .collect::<Result<_>>()?;
    if !(d > 1e-14) {
        if raw.iter().all(|v| aq_space::norm(v) < 1e-12) {
            return Ok(None);
        }
        return Err(Error::DegenerateBlowup(format!(
            "D(x, {s}) = {d:e} with a nonzero trace"
        )));
    }
    let factor = s.powf((f.n() as f64 - 2.0) / 2.0) / d.sqrt();
    Ok(Some(TraceSamples {
        dirs,
        values: raw.iter().map(|v| v.scaled(factor)).collect(),
        weights,
    }))
}

/// Catalog of shapes whose spine dimension is at least `k`.
fn catalog_for(n: usize, q: usize, m: usize, k: usize, opts: &SearchOptions) -> Vec<Shape> {
    if m < 2 || k > n.saturating_sub(2) {
        return Vec::new();
    }
    let planar = planar_shapes(q, opts.alpha_max());
    match n {
        2 => planar,
        3 => hemisphere_normals(opts.normals)
            .into_iter()
            .flat_map(|nrm| {
                planar.iter().map(move |s| Shape {
                    normal: Some(nrm.clone()),
                    ..s.clone()
                })
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Best catalog fit of `trace` within the class of spine dimension `>= k`.
pub fn nearest_competitor(
    trace: &TraceSamples,
    n: usize,
    q: usize,
    m: usize,
    k: usize,
    opts: &SearchOptions,
) -> Result<DkResult> {
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the domain dimension {n}"
        )));
    }
    let target = Target::new(trace);
    let zero_cost = target.zero_cost();
    let shapes = catalog_for(n, q, m, k, opts);
    let fits: Vec<(f64, Option<Competitor>)> = shapes
        .par_iter()
        .map(|shape| {
            let frame = match &shape.normal {
                Some(nrm) => frame_with_normal(nrm),
                None => identity(n),
            };
            let fit = fit_shape(shape, &target, opts, &frame);
            let blocks: Vec<Block> = shape
                .parts
                .iter()
                .zip(&shape.ps)
                .zip(&fit.coeffs)
                .map(|((&q, &p), &coeff)| Block { q, p, coeff })
                .collect();
            let comp = match &shape.normal {
                Some(nrm) => Competitor::cylindrical(m, blocks, nrm),
                None => Competitor::planar(m, blocks),
            };
            (fit.cost, comp.ok())
        })
        .collect();
    let mut best = DkResult {
        value: zero_cost.sqrt(),
        competitor: Competitor::zero(n, q, m),
        trace_norm: zero_cost.sqrt(),
    };
    let mut best_cost = zero_cost;
    for (cost, comp) in fits {
        if let Some(c) = comp {
            if cost < best_cost {
                best_cost = cost;
                best.competitor = c;
            }
        }
    }
    best.value = best_cost.max(0.0).sqrt();
    Ok(best)
}

/// `d_k(x, s)` with the argmin competitor.
pub fn d_k(f: &QField, x: &[f64], s: f64, k: usize, opts: &SearchOptions) -> Result<DkResult> {
    if k > f.n() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the domain dimension {}",
            f.n()
        )));
    }
    match blowup_trace(f, x, s, opts.samples)? {
        None => Ok(DkResult {
            value: 0.0,
            competitor: Competitor::zero(f.n(), f.q(), f.m()),
            trace_norm: 0.0,
        }),
        Some(trace) => nearest_competitor(&trace, f.n(), f.q(), f.m(), k, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DProfile {
    /// `d_0, ..., d_n`, made nondecreasing in `k`.
    pub values: Vec<f64>,
    /// Argmin competitor of `d_0`.
    pub best: Competitor,
}

/// All of `d_0, ..., d_n` from one trace.
pub fn d_all(f: &QField, x: &[f64], s: f64, opts: &SearchOptions) -> Result<DProfile> {
    let n = f.n();
    let Some(trace) = blowup_trace(f, x, s, opts.samples)? else {
        return Ok(DProfile {
            values: vec![0.0; n + 1],
            best: Competitor::zero(n, f.q(), f.m()),
        });
    };
    let mut values = Vec::with_capacity(n + 1);
    let mut best = None;
    let mut prev = 0.0f64;
    for k in 0..=n {
        let r = nearest_competitor(&trace, n, f.q(), f.m(), k, opts)?;
        let v = r.value.max(prev);
        if k == 0 {
            best = Some(r.competitor);
        }
        values.push(v);
        prev = v;
    }
    Ok(DProfile {
        values,
        best: best.expect("k = 0 is always evaluated"),
    })
}
