//! Minimization of the discrete Dirichlet energy with fixed boundary data.
//!
//! The discrete energy is `h^(n-2) * sum over grid edges of G(u(a), u(b))^2`.
//! Each sweep visits free nodes in index order; a node's sheets are matched
//! to every neighbor, and the node moves toward the mean of the matched
//! neighbor sheets (over-relaxed by `omega`). For fixed matchings the local
//! energy is `deg * |u - mean|^2 + const`, so any `omega` in `(0, 2)` cannot
//! raise it, and re-matching can only lower the true `G` energy further.
//! Sweeps that reuse cached matchings are checked afterwards and redone with
//! fresh matchings if the energy went up.
//!
//! Two starts are available. The sheet start labels the boundary sheets by
//! nearest-neighbor propagation around the frontier and extends each sheet
//! harmonically; where the labeling fails to close up (any boundary datum
//! with monodromy) the branch point sits at the seam on the boundary, a
//! local minimum the descent cannot leave. The cone start scales every
//! boundary value linearly toward the frontier mean along rays from the
//! centroid of the free nodes, which places the collision point inside.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aq_space::sq_dist;
use crate::assignment::{self, CostMatrix, TIE_TOL};
use crate::error::{Error, Result};
use crate::qfield::QField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Harmonic extension of propagated boundary sheet labels.
    Sheets,
    /// Radial cone from the centroid of the free nodes.
    Cone,
    /// Both starts; the lower final energy wins (ties go to `Sheets`).
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once a sweep lowers the energy by less than this fraction.
    pub energy_tol: f64,
    /// Sweeps between refreshes of the edge matchings.
    pub rematch_every: usize,
    pub seed: u64,
    /// Over-relaxation factor in `(0, 2)`; `None` picks the optimal SOR
    /// factor of the grid Laplacian.
    pub relaxation: Option<f64>,
    pub init: InitStrategy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            energy_tol: 1e-9,
            rematch_every: 5,
            seed: 0,
            relaxation: None,
            init: InitStrategy::Best,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be >= 1".into()));
        }
        if !(self.energy_tol > 0.0) {
            return Err(Error::Validation("energy_tol must be positive".into()));
        }
        if self.rematch_every == 0 {
            return Err(Error::Validation("rematch_every must be >= 1".into()));
        }
        if let Some(w) = self.relaxation {
            if !(w > 0.0 && w < 2.0) {
                return Err(Error::Validation(format!(
                    "relaxation must lie in (0, 2), got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: QField,
    pub energy: f64,
    pub iters: usize,
    pub converged: bool,
    /// Energy after initialization (iteration 0) and after every sweep.
    pub log: Vec<LogEntry>,
}

/// Optimal sheet matching between two nodal slices written into `perm`
/// (`a` sheet `l` pairs with `b` sheet `perm[l]`).
fn match_into(q: usize, m: usize, a: &[f64], b: &[f64], perm: &mut [usize]) {
    match q {
        1 => perm[0] = 0,
        2 => {
            let d = |i: usize, j: usize| sq_dist(&a[i * m..(i + 1) * m], &b[j * m..(j + 1) * m]);
            let straight = d(0, 0) + d(1, 1);
            let crossed = d(0, 1) + d(1, 0);
            if crossed < straight - TIE_TOL {
                perm[0] = 1;
                perm[1] = 0;
            } else {
                perm[0] = 0;
                perm[1] = 1;
            }
        }
        _ => {
            let cost = CostMatrix::from_fn(q, |i, j| {
                sq_dist(&a[i * m..(i + 1) * m], &b[j * m..(j + 1) * m])
            });
            perm.copy_from_slice(&assignment::solve(&cost).perm);
        }
    }
}

/// Discrete energy `h^(n-2) * sum_edges G^2` of the whole grid.
pub fn discrete_energy(f: &QField) -> f64 {
    let g = f.grid();
    let strides = g.strides();
    let mut total = 0.0;
    for i in 0..f.node_count() {
        let multi = g.multi_index(i);
        for a in 0..g.n() {
            if multi[a] + 1 < g.dims[a] {
                total += f.edge_cost(i, i + strides[a]);
            }
        }
    }
    total * f.spacing().powi(g.n() as i32 - 2)
}

/// Neighbor table: for node `i`, slot `2a` is the lower and `2a+1` the
/// upper neighbor along axis `a` (`usize::MAX` when absent).
fn neighbor_table(f: &QField) -> Vec<usize> {
    let g = f.grid();
    let n = g.n();
    let strides = g.strides();
    let mut out = vec![usize::MAX; f.node_count() * 2 * n];
    for i in 0..f.node_count() {
        let multi = g.multi_index(i);
        for a in 0..n {
            if multi[a] > 0 {
                out[i * 2 * n + 2 * a] = i - strides[a];
            }
            if multi[a] + 1 < g.dims[a] {
                out[i * 2 * n + 2 * a + 1] = i + strides[a];
            }
        }
    }
    out
}

fn optimal_omega(f: &QField) -> f64 {
    let side = *f.grid().dims.iter().max().expect("nonempty grid") as f64;
    2.0 / (1.0 + (std::f64::consts::PI / side).sin())
}

struct Sweeper {
    q: usize,
    m: usize,
    deg_slots: usize,
    neighbors: Vec<usize>,
    /// Cached matchings per (node, slot), `q` entries each.
    cache: Vec<usize>,
    free: Vec<usize>,
}

impl Sweeper {
    fn new(f: &QField) -> Self {
        let deg_slots = 2 * f.n();
        let mut cache = vec![0usize; f.node_count() * deg_slots * f.q()];
        for chunk in cache.chunks_mut(f.q()) {
            for (l, c) in chunk.iter_mut().enumerate() {
                *c = l;
            }
        }
        Self {
            q: f.q(),
            m: f.m(),
            deg_slots,
            neighbors: neighbor_table(f),
            cache,
            free: (0..f.node_count()).filter(|&i| !f.is_fixed(i)).collect(),
        }
    }

    fn sweep(&mut self, values: &mut [f64], omega: f64, rematch: bool) {
        let (q, m) = (self.q, self.m);
        let w = q * m;
        let mut sum = vec![0.0; w];
        for &i in &self.free {
            sum.iter_mut().for_each(|s| *s = 0.0);
            let mut deg = 0usize;
            for slot in 0..self.deg_slots {
                let j = self.neighbors[i * self.deg_slots + slot];
                if j == usize::MAX {
                    continue;
                }
                deg += 1;
                let c = (i * self.deg_slots + slot) * q;
                let perm = &mut self.cache[c..c + q];
                if rematch {
                    match_into(
                        q,
                        m,
                        &values[i * w..(i + 1) * w],
                        &values[j * w..(j + 1) * w],
                        perm,
                    );
                }
                for l in 0..q {
                    let src = j * w + perm[l] * m;
                    for k in 0..m {
                        sum[l * m + k] += values[src + k];
                    }
                }
            }
            if deg == 0 {
                continue;
            }
            let inv = 1.0 / deg as f64;
            for (k, s) in sum.iter().enumerate() {
                let v = &mut values[i * w + k];
                *v += omega * (s * inv - *v);
            }
        }
    }
}

/// One Gauss-Seidel sweep with fresh matchings: every free node is replaced
/// by the mean of its matched neighbor sheets.
pub fn iterate_once(f: &QField) -> Result<(QField, f64)> {
    let mut out = f.clone();
    let mut sw = Sweeper::new(f);
    sw.sweep(out.values_mut(), 1.0, true);
    if out.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure {
            iteration: 1,
            message: "non-finite value after sweep".into(),
        });
    }
    let e = discrete_energy(&out);
    Ok((out, e))
}

/// Frontier = fixed nodes with at least one free neighbor.
fn frontier(f: &QField, neighbors: &[usize]) -> Vec<usize> {
    let slots = 2 * f.n();
    (0..f.node_count())
        .filter(|&i| {
            f.is_fixed(i)
                && neighbors[i * slots..(i + 1) * slots]
                    .iter()
                    .any(|&j| j != usize::MAX && !f.is_fixed(j))
        })
        .collect()
}

/// Greedy nearest-neighbor tour through the frontier; equal-distance
/// candidates are chosen by the seeded generator.
fn frontier_tour(f: &QField, nodes: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let g = f.grid();
    let pos: Vec<Vec<f64>> = nodes.iter().map(|&i| g.node_position(i)).collect();
    let mut visited = vec![false; nodes.len()];
    let mut tour = Vec::with_capacity(nodes.len());
    let mut cur = 0usize;
    let tie = 1e-9 * g.spacing * g.spacing;
    for _ in 0..nodes.len() {
        visited[cur] = true;
        tour.push(nodes[cur]);
        let mut best = f64::INFINITY;
        let mut cands: Vec<usize> = Vec::new();
        for (k, p) in pos.iter().enumerate() {
            if visited[k] {
                continue;
            }
            let d = sq_dist(p, &pos[cur]);
            if d < best - tie {
                best = d;
                cands.clear();
                cands.push(k);
            } else if d <= best + tie {
                cands.push(k);
            }
        }
        match cands.choose(rng) {
            Some(&k) => cur = k,
            None => break,
        }
    }
    tour
}

/// Per-node sheet labels for frontier nodes, obtained by matching each tour
/// node to its relabeled predecessor.
fn frontier_labels(f: &QField, tour: &[usize]) -> Vec<Option<Vec<usize>>> {
    let (q, m) = (f.q(), f.m());
    let mut labels: Vec<Option<Vec<usize>>> = vec![None; f.node_count()];
    let mut prev: Option<Vec<f64>> = None;
    for &i in tour {
        let raw = f.node_slice(i);
        let mut perm: Vec<usize> = (0..q).collect();
        if let Some(p) = &prev {
            match_into(q, m, p, raw, &mut perm);
        }
        let relabeled: Vec<f64> = perm
            .iter()
            .flat_map(|&l| raw[l * m..(l + 1) * m].iter().copied())
            .collect();
        prev = Some(relabeled);
        labels[i] = Some(perm);
    }
    labels
}

/// Harmonic extension of the labeled frontier sheets into the free nodes.
fn initialize_sheets(f: &mut QField, opts: &SolveOptions, omega: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let neighbors = neighbor_table(f);
    let front = frontier(f, &neighbors);
    if front.is_empty() {
        return;
    }
    let tour = frontier_tour(f, &front, &mut rng);
    let labels = frontier_labels(f, &tour);
    let (q, m) = (f.q(), f.m());
    let w = q * m;

    let mut mean = vec![0.0; w];
    for &i in &front {
        let perm = labels[i].as_ref().expect("frontier node on tour");
        let raw = f.node_slice(i);
        for l in 0..q {
            for k in 0..m {
                mean[l * m + k] += raw[perm[l] * m + k];
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= front.len() as f64);

    let free: Vec<usize> = (0..f.node_count()).filter(|&i| !f.is_fixed(i)).collect();
    let values = f.values_mut();
    for &i in &free {
        values[i * w..(i + 1) * w].copy_from_slice(&mean);
    }
    let slots = 2 * f.n();
    let scale = mean.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let max_sweeps = 10 * f.grid().dims.iter().max().copied().unwrap_or(2);
    let mut sum = vec![0.0; w];
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        let values = f.values_mut();
        for &i in &free {
            sum.iter_mut().for_each(|s| *s = 0.0);
            let mut deg = 0usize;
            for slot in 0..slots {
                let j = neighbors[i * slots + slot];
                if j == usize::MAX {
                    continue;
                }
                deg += 1;
                for l in 0..q {
                    let src = match &labels[j] {
                        Some(perm) => perm[l],
                        None => l,
                    };
                    for k in 0..m {
                        sum[l * m + k] += values[j * w + src * m + k];
                    }
                }
            }
            if deg == 0 {
                continue;
            }
            for (k, s) in sum.iter().enumerate() {
                let v = &mut values[i * w + k];
                let step = omega * (s / deg as f64 - *v);
                change = change.max(step.abs());
                *v += step;
            }
        }
        if change <= 1e-10 * scale {
            break;
        }
    }
}

/// Cone extension: a free node at `c + t * (y - c)`, with `y` the frontier
/// node best aligned with it seen from the centroid `c`, gets
/// `eta + t * (u(y) - eta)` sheetwise, `eta` being the mean frontier center.
fn initialize_cone(f: &mut QField) {
    let neighbors = neighbor_table(f);
    let front = frontier(f, &neighbors);
    let free: Vec<usize> = (0..f.node_count()).filter(|&i| !f.is_fixed(i)).collect();
    if front.is_empty() || free.is_empty() {
        return;
    }
    let g = f.grid().clone();
    let n = g.n();
    let (q, m) = (f.q(), f.m());
    let mut centroid = vec![0.0; n];
    for &i in &free {
        for (c, x) in centroid.iter_mut().zip(g.node_position(i)) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= free.len() as f64);
    let mut eta = vec![0.0; m];
    for &j in &front {
        for (e, v) in eta.iter_mut().zip(crate::aq_space::eta_mean(&f.value(j))) {
            *e += v / front.len() as f64;
        }
    }
    let rays: Vec<(Vec<f64>, f64)> = front
        .iter()
        .map(|&j| {
            let d: Vec<f64> = g
                .node_position(j)
                .iter()
                .zip(&centroid)
                .map(|(a, b)| a - b)
                .collect();
            let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            (d, len)
        })
        .collect();
    for &i in &free {
        let d: Vec<f64> = g
            .node_position(i)
            .iter()
            .zip(&centroid)
            .map(|(a, b)| a - b)
            .collect();
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut value = vec![0.0; q * m];
        if r <= 1e-12 * g.spacing {
            for l in 0..q {
                value[l * m..(l + 1) * m].copy_from_slice(&eta);
            }
        } else {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (k, (e, len)) in rays.iter().enumerate() {
                if *len == 0.0 {
                    continue;
                }
                let cos = e.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / (len * r);
                if cos > best.0 {
                    best = (cos, k);
                }
            }
            let t = (r / rays[best.1].1).min(1.0);
            let src = f.node_slice(front[best.1]);
            for l in 0..q {
                for k in 0..m {
                    value[l * m + k] = eta[k] + t * (src[l * m + k] - eta[k]);
                }
            }
        }
        let w = q * m;
        f.values_mut()[i * w..(i + 1) * w].copy_from_slice(&value);
    }
}

/// Minimizes the discrete energy over the free nodes of `boundary`.
///
/// The values stored at free nodes are ignored; only fixed nodes carry data.
pub fn minimize(boundary: &QField, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    let omega = opts.relaxation.unwrap_or_else(|| optimal_omega(boundary));
    let run = |strategy: InitStrategy| {
        let mut field = boundary.clone();
        match strategy {
            InitStrategy::Cone => initialize_cone(&mut field),
            _ => initialize_sheets(&mut field, opts, omega),
        }
        solve_from(field, opts, omega)
    };
    match opts.init {
        InitStrategy::Best => {
            let sheets = run(InitStrategy::Sheets)?;
            let cone = run(InitStrategy::Cone)?;
            Ok(if cone.energy < sheets.energy {
                cone
            } else {
                sheets
            })
        }
        s => run(s),
    }
}

/// Runs the descent from the supplied free-node values.
pub fn minimize_from(start: &QField, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    let omega = opts.relaxation.unwrap_or_else(|| optimal_omega(start));
    solve_from(start.clone(), opts, omega)
}

fn solve_from(mut field: QField, opts: &SolveOptions, omega: f64) -> Result<Solution> {
    let mut sw = Sweeper::new(&field);
    let mut energy = discrete_energy(&field);
    let mut log = vec![LogEntry {
        iteration: 0,
        energy,
    }];
    let mut converged = sw.free.is_empty() || energy == 0.0;
    let mut iters = 0usize;
    let mut backup = Vec::new();

    while !converged && iters < opts.max_iters {
        iters += 1;
        let rematch = (iters - 1).is_multiple_of(opts.rematch_every);
        if !rematch {
            backup.clear();
            backup.extend_from_slice(field.values());
        }
        sw.sweep(field.values_mut(), omega, rematch);
        let mut next = discrete_energy(&field);
        if !rematch && !(next <= energy) {
            field.values_mut().copy_from_slice(&backup);
            sw.sweep(field.values_mut(), omega, true);
            next = discrete_energy(&field);
        }
        if !next.is_finite() || field.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                iteration: iters,
                message: "non-finite energy or value".into(),
            });
        }
        log.push(LogEntry {
            iteration: iters,
            energy: next,
        });
        let decrease = energy - next;
        converged = next == 0.0 || decrease <= opts.energy_tol * energy.abs();
        energy = next;
    }
    Ok(Solution {
        field,
        energy,
        iters,
        converged,
        log,
    })
}
