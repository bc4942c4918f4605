//! Quantitative stratification: parameter derivation, bad scales, strata
//! membership, the capture step, the iterative covering with its audits,
//! and empirical checks of the two structural hypotheses.
//!
//! Everything is phrased against [`Instance`], which supplies a monotone
//! scale quantity `theta(x, s)` and the distances `d_k(x, s)` to the
//! homogeneous classes. [`QFieldInstance`] backs an instance by a sampled
//! Q-valued field; [`FnInstance`] wraps closures for synthetic tests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aq_space::{self, sq_dist};
use crate::error::{Error, Result};
use crate::frequency::{self, r_min, tol_mono};
use crate::grid::unit_ball_volume;
use crate::homogeneous::{self, SearchOptions};
use crate::minkowski::vitali_cover;
use crate::qfield::{self, QField};

pub trait Instance: Sync {
    fn dim(&self) -> usize;
    fn lambda0(&self) -> f64;
    fn theta(&self, x: &[f64], s: f64) -> Result<f64>;
    fn d(&self, x: &[f64], s: f64, k: usize) -> Result<f64>;
    /// Whether `x` belongs to the set where the stratification lives.
    fn admissible(&self, x: &[f64]) -> bool;
    /// Invariance subspace of the best homogeneous approximation at `(x, s)`.
    fn subspace(&self, x: &[f64], s: f64) -> Result<Vec<Vec<f64>>>;
    /// Tolerated increase of `theta` when the scale shrinks.
    fn theta_slack(&self, _s: f64) -> f64 {
        0.0
    }
    /// Smallest scale the instance resolves; smaller scales are evaluated
    /// there instead.
    fn min_scale(&self) -> f64 {
        0.0
    }
}

type ThetaFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
type DFn = dyn Fn(&[f64], f64, usize) -> f64 + Send + Sync;
type AdmissibleFn = dyn Fn(&[f64]) -> bool + Send + Sync;
type SubspaceFn = dyn Fn(&[f64], f64) -> Vec<Vec<f64>> + Send + Sync;

/// Instance assembled from closures.
pub struct FnInstance {
    n: usize,
    lambda0: f64,
    theta: Box<ThetaFn>,
    d: Box<DFn>,
    admissible: Box<AdmissibleFn>,
    subspace: Box<SubspaceFn>,
}

impl FnInstance {
    /// Every point admissible, trivial subspace.
    pub fn new(
        n: usize,
        lambda0: f64,
        theta: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        d: impl Fn(&[f64], f64, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            lambda0,
            theta: Box::new(theta),
            d: Box::new(d),
            admissible: Box::new(|_| true),
            subspace: Box::new(|_, _| Vec::new()),
        }
    }

    pub fn with_admissible(mut self, f: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.admissible = Box::new(f);
        self
    }

    pub fn with_subspace(
        mut self,
        f: impl Fn(&[f64], f64) -> Vec<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.subspace = Box::new(f);
        self
    }
}

impl Instance for FnInstance {
    fn dim(&self) -> usize {
        self.n
    }
    fn lambda0(&self) -> f64 {
        self.lambda0
    }
    fn theta(&self, x: &[f64], s: f64) -> Result<f64> {
        Ok((self.theta)(x, s))
    }
    fn d(&self, x: &[f64], s: f64, k: usize) -> Result<f64> {
        Ok((self.d)(x, s, k))
    }
    fn admissible(&self, x: &[f64]) -> bool {
        (self.admissible)(x)
    }
    fn subspace(&self, x: &[f64], s: f64) -> Result<Vec<Vec<f64>>> {
        Ok((self.subspace)(x, s))
    }
}

type Key = (Vec<u64>, u64);

fn key(x: &[f64], s: f64) -> Key {
    (x.iter().map(|v| v.to_bits()).collect(), s.to_bits())
}

/// Instance backed by a sampled field, recentered so that the maximal
/// multiplicity set is where the field vanishes.
///
/// `theta` is the frequency and `d_k` the catalog distance of the blowup
/// trace; radii below four grid cells are raised to four grid cells.
pub struct QFieldInstance {
    field: QField,
    lambda0: f64,
    zero_tol: f64,
    search: SearchOptions,
    thetas: Mutex<HashMap<Key, f64>>,
    profiles: Mutex<HashMap<Key, homogeneous::DProfile>>,
}

impl QFieldInstance {
    /// Admissibility threshold defaults to `sqrt(h)`.
    pub fn new(field: &QField, lambda0: f64) -> Self {
        let search = SearchOptions {
            lambda0: Some(lambda0),
            ..Default::default()
        };
        Self {
            zero_tol: qfield::default_zero_tol(field),
            field: field.recentered(),
            lambda0,
            search,
            thetas: Mutex::new(HashMap::new()),
            profiles: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_zero_tol(mut self, tol: f64) -> Self {
        self.zero_tol = tol;
        self
    }

    pub fn with_search(mut self, search: SearchOptions) -> Self {
        self.search = search;
        self
    }

    pub fn field(&self) -> &QField {
        &self.field
    }

    fn radius(&self, s: f64) -> f64 {
        s.max(r_min(&self.field))
    }

    fn profile(&self, x: &[f64], s: f64) -> Result<homogeneous::DProfile> {
        let s = self.radius(s);
        let k = key(x, s);
        if let Some(p) = self.profiles.lock().expect("cache lock").get(&k) {
            return Ok(p.clone());
        }
        let p = homogeneous::d_all(&self.field, x, s, &self.search)?;
        self.profiles
            .lock()
            .expect("cache lock")
            .insert(k, p.clone());
        Ok(p)
    }
}

impl Instance for QFieldInstance {
    fn dim(&self) -> usize {
        self.field.n()
    }
    fn lambda0(&self) -> f64 {
        self.lambda0
    }
    fn theta(&self, x: &[f64], s: f64) -> Result<f64> {
        let s = self.radius(s);
        let k = key(x, s);
        if let Some(&t) = self.thetas.lock().expect("cache lock").get(&k) {
            return Ok(t);
        }
        let t = frequency::frequency(&self.field, x, s)?;
        self.thetas.lock().expect("cache lock").insert(k, t);
        Ok(t)
    }
    fn d(&self, x: &[f64], s: f64, k: usize) -> Result<f64> {
        let p = self.profile(x, s)?;
        p.values.get(k).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "k = {k} exceeds the domain dimension {}",
                self.dim()
            ))
        })
    }
    fn admissible(&self, x: &[f64]) -> bool {
        self.field.grid().contains_point(x)
            && self
                .field
                .interpolate(x)
                .map(|v| aq_space::norm(&v) < self.zero_tol)
                .unwrap_or(false)
    }
    fn subspace(&self, x: &[f64], s: f64) -> Result<Vec<Vec<f64>>> {
        Ok(self.profile(x, s)?.best.v)
    }
    fn min_scale(&self) -> f64 {
        r_min(&self.field)
    }
    fn theta_slack(&self, s: f64) -> f64 {
        let h = self.field.spacing();
        tol_mono(h, self.radius(s))
    }
}

/// Rule producing `gamma_{i-1}` from `gamma_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum Eta2Rule {
    Constant(f64),
    Proportional(f64),
}

impl Eta2Rule {
    pub fn apply(&self, gamma: f64) -> f64 {
        match *self {
            Eta2Rule::Constant(c) => c.min(gamma),
            Eta2Rule::Proportional(f) => f * gamma,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Eta2Rule::Constant(c) => c > 0.0 && c.is_finite(),
            Eta2Rule::Proportional(f) => f > 0.0 && f <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid eta2 rule {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationSource {
    User,
    Empirical { pairs: usize, probes: usize },
    Default,
}

/// Constants of the two structural hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub eta1: f64,
    pub lambda1: f64,
    pub eta2: Eta2Rule,
    pub source: CalibrationSource,
}

impl Calibration {
    pub fn user(eta1: f64, lambda1: f64, eta2: Eta2Rule) -> Self {
        Self {
            eta1,
            lambda1,
            eta2,
            source: CalibrationSource::User,
        }
    }

    /// Stand-in constants for practical runs without a calibration.
    pub fn fallback() -> Self {
        Self {
            eta1: 0.05,
            lambda1: 0.5,
            eta2: Eta2Rule::Proportional(0.5),
            source: CalibrationSource::Default,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta1.is_finite())
            || !(self.lambda1 > 0.0 && self.lambda1 < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "need eta1 > 0 and lambda1 in (0, 1), got {} and {}",
                self.eta1, self.lambda1
            )));
        }
        self.eta2.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Mode {
    /// `tau` is the largest value with `omega_n tau^(kappa0/2) <= 20^-n`.
    ProofFaithful,
    Practical {
        tau: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInputs {
    pub n: usize,
    pub k: usize,
    pub kappa0: f64,
    pub delta: f64,
    pub r0: f64,
    pub lambda0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratParams {
    pub inputs: ParamInputs,
    pub mode: Mode,
    pub tau: f64,
    pub tau_proof: f64,
    /// `omega_n tau^(kappa0/2) <= 20^-n` for the `tau` in use.
    pub tau_condition_holds: bool,
    pub calibration: Calibration,
    /// `gamma_0 <= ... <= gamma_k = delta`.
    pub gamma: Vec<f64>,
    /// Smallest `q >= 1` with `tau^q <= lambda1`.
    pub q: usize,
    /// `floor(q Lambda0 / eta1)`.
    pub big_m: usize,
    /// `q + M + 1`.
    pub p0: usize,
    /// Depth of the covering, `p >= q`.
    pub p: usize,
}

impl StratParams {
    pub fn with_depth(mut self, p: usize) -> Result<Self> {
        if p < self.q {
            return Err(Error::InvalidArgument(format!(
                "depth {p} is below q = {}",
                self.q
            )));
        }
        self.p = p;
        Ok(self)
    }

    /// `tau^j r0`.
    pub fn scale(&self, j: usize) -> f64 {
        self.tau.powi(j as i32) * self.inputs.r0
    }
}

pub fn tau_proof(n: usize, kappa0: f64) -> f64 {
    (20f64.powi(-(n as i32)) / unit_ball_volume(n)).powf(2.0 / kappa0)
}

fn floor_ratio(num: f64, den: f64) -> usize {
    let x = num / den;
    let r = x.round();
    if (x - r).abs() <= 8.0 * f64::EPSILON * x.abs().max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

fn smallest_power_below(tau: f64, lambda1: f64) -> usize {
    let mut q = ((lambda1.ln() / tau.ln()).ceil() as i64).max(1) as usize;
    while tau.powi(q as i32) > lambda1 {
        q += 1;
    }
    while q > 1 && tau.powi(q as i32 - 1) <= lambda1 {
        q -= 1;
    }
    q
}

/// Derives `tau, q, M, p0` and the `gamma` chain.
///
/// Proof-faithful mode needs an explicit calibration; practical mode falls
/// back to [`Calibration::fallback`].
pub fn derive_parameters(
    inputs: &ParamInputs,
    mode: Mode,
    calibration: Option<Calibration>,
) -> Result<StratParams> {
    let ParamInputs {
        n,
        k,
        kappa0,
        delta,
        r0,
        lambda0,
    } = *inputs;
    if n == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= k < n, got k = {k}, n = {n}"
        )));
    }
    if !(kappa0 > 0.0 && kappa0 < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "kappa0 and delta must lie in (0, 1), got {kappa0} and {delta}"
        )));
    }
    if !(r0 > 0.0 && r0.is_finite()) || !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "r0 and Lambda0 must be positive, got {r0} and {lambda0}"
        )));
    }
    let calibration = match (mode, calibration) {
        (_, Some(c)) => c,
        (Mode::ProofFaithful, None) => {
            return Err(Error::Configuration(
                "proof-faithful parameters need eta1, lambda1 and eta2 from a user or empirical calibration".into(),
            ))
        }
        (Mode::Practical { .. }, None) => Calibration::fallback(),
    };
    calibration.validate()?;
    let tp = tau_proof(n, kappa0);
    let tau = match mode {
        Mode::ProofFaithful => tp,
        Mode::Practical { tau } => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "tau must lie in (0, 1), got {tau}"
                )));
            }
            tau
        }
    };
    let lhs = unit_ball_volume(n) * tau.powf(kappa0 / 2.0);
    let tau_condition_holds = lhs <= 20f64.powi(-(n as i32)) * (1.0 + 1e-12);
    let q = smallest_power_below(tau, calibration.lambda1);
    let big_m = floor_ratio(q as f64 * lambda0, calibration.eta1);
    let p0 = q + big_m + 1;
    let mut gamma = vec![delta; k + 1];
    for i in (0..k).rev() {
        gamma[i] = calibration.eta2.apply(gamma[i + 1]).min(gamma[i + 1]);
    }
    Ok(StratParams {
        inputs: inputs.clone(),
        mode,
        tau,
        tau_proof: tp,
        tau_condition_holds,
        calibration,
        gamma,
        q,
        big_m,
        p0,
        p: p0,
    })
}

fn require_admissible(inst: &dyn Instance, x: &[f64]) -> Result<()> {
    if x.len() != inst.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} coordinates, expected {}",
            x.len(),
            inst.dim()
        )));
    }
    if !inst.admissible(x) {
        return Err(Error::Precondition(format!(
            "{x:?} is not an admissible point"
        )));
    }
    Ok(())
}

/// Indices `l` in `q..=p` with `theta(x, 4 tau^l r0) - theta(x, 4 tau^(l+q) r0) > eta1`.
///
/// An increase of `theta` toward smaller scales beyond the instance slack,
/// or more than `M` bad indices, is reported as an axiom violation.
pub fn bad_scales(inst: &dyn Instance, x: &[f64], params: &StratParams) -> Result<Vec<usize>> {
    require_admissible(inst, x)?;
    let q = params.q;
    let top = params.p + q;
    let thetas: Vec<f64> = (q..=top)
        .map(|l| inst.theta(x, 4.0 * params.scale(l)))
        .collect::<Result<_>>()?;
    for (i, w) in thetas.windows(2).enumerate() {
        let s = 4.0 * params.scale(q + i + 1);
        if w[1] > w[0] + inst.theta_slack(s) {
            return Err(Error::AxiomViolation(format!(
                "theta increases from {} to {} as the scale drops to {s:e} at {x:?}",
                w[0], w[1]
            )));
        }
    }
    let bad: Vec<usize> = (q..=params.p)
        .filter(|&l| thetas[l - q] - thetas[l] > params.calibration.eta1)
        .collect();
    if bad.len() > params.big_m {
        return Err(Error::AxiomViolation(format!(
            "{} bad scales at {x:?} exceed M = {}",
            bad.len(),
            params.big_m
        )));
    }
    Ok(bad)
}

/// Scales `r0 / ratio^i` down to `r`, with `r` appended when it is not on that lattice.
pub fn membership_scales(r: f64, r0: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(ratio > 1.0 && ratio <= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "scale ratio must lie in (1, 2], got {ratio}"
        )));
    }
    if !(r > 0.0 && r <= r0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < r <= r0, got r = {r}, r0 = {r0}"
        )));
    }
    let mut out = Vec::new();
    let mut s = r0;
    while s >= r * (1.0 - 1e-12) {
        out.push(s);
        s /= ratio;
    }
    if out.last().is_some_and(|&last| last > r * (1.0 + 1e-12)) {
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub scales: Vec<f64>,
    /// Smallest `d_{k+1}` over the scales, absent for inadmissible points.
    pub min_d: Option<f64>,
}

/// Whether `x` lies in `S^k_{r, delta}`: admissible with `d_{k+1}(x, s) >= delta`
/// for every scale in [`membership_scales`].
pub fn strata_membership(
    inst: &dyn Instance,
    x: &[f64],
    k: usize,
    r: f64,
    r0: f64,
    delta: f64,
    ratio: f64,
) -> Result<Membership> {
    if k >= inst.dim() {
        return Err(Error::InvalidArgument(format!(
            "stratum index {k} must be below n = {}",
            inst.dim()
        )));
    }
    let scales = membership_scales(r, r0, ratio)?;
    if !inst.admissible(x) {
        return Ok(Membership {
            member: false,
            scales,
            min_d: None,
        });
    }
    let ds: Vec<f64> = scales
        .par_iter()
        .map(|&s| inst.d(x, s, k + 1))
        .collect::<Result<_>>()?;
    let min_d = ds.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Membership {
        member: min_d >= delta,
        scales,
        min_d: Some(min_d),
    })
}

fn orthonormalize(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut w = v.clone();
        for e in &out {
            let dot: f64 = w.iter().zip(e).map(|(a, b)| a * b).sum();
            w.iter_mut().zip(e).for_each(|(a, b)| *a -= dot * b);
        }
        let len = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if len > 1e-10 {
            out.push(w.into_iter().map(|a| a / len).collect());
        }
    }
    out
}

/// Distance from `y` to the affine subspace `x + span(basis)` (orthonormal basis).
pub fn affine_distance(y: &[f64], x: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut w: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    for e in basis {
        let dot: f64 = w.iter().zip(e).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(e).for_each(|(a, b)| *a -= dot * b);
    }
    w.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureAudit {
    /// Admissible probes in `B_s(x)` with `d_0(y, 4s) <= gamma0`.
    pub checked: usize,
    pub outside: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum Capture {
    NotApplicable {
        reason: String,
    },
    Captured {
        v: Vec<Vec<f64>>,
        audit: CaptureAudit,
    },
}

/// If `d_0(x, 4s) <= gamma0` and `d_{k+1}(x, 4s) >= eps`, returns the
/// subspace `V` of the best approximation at `(x, 4s)` and audits that
/// admissible probes `y` in `B_s(x)` with `d_0(y, 4s) <= gamma0` lie in
/// `T_{tau s}(x + V)`.
#[allow(clippy::too_many_arguments)]
pub fn capture(
    inst: &dyn Instance,
    x: &[f64],
    s: f64,
    k: usize,
    eps: f64,
    tau: f64,
    gamma0: f64,
    probes: &[Vec<f64>],
) -> Result<Capture> {
    let n = inst.dim();
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "capture index {k} must be below n = {n}"
        )));
    }
    if !(s > 0.0) || !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need s > 0 and tau in (0, 1), got {s} and {tau}"
        )));
    }
    if !inst.admissible(x) {
        return Ok(Capture::NotApplicable {
            reason: "center is not admissible".into(),
        });
    }
    let d0 = inst.d(x, 4.0 * s, 0)?;
    if d0 > gamma0 {
        return Ok(Capture::NotApplicable {
            reason: format!("d_0 = {d0} exceeds gamma0 = {gamma0}"),
        });
    }
    let dk1 = inst.d(x, 4.0 * s, k + 1)?;
    if dk1 < eps {
        return Ok(Capture::NotApplicable {
            reason: format!("d_{} = {dk1} is below eps = {eps}", k + 1),
        });
    }
    let v = orthonormalize(&inst.subspace(x, 4.0 * s)?);
    if v.len() > k {
        return Ok(Capture::NotApplicable {
            reason: format!("best approximation has a {}-dimensional spine", v.len()),
        });
    }
    let s2 = s * s;
    let checks: Vec<Option<Vec<f64>>> = probes
        .par_iter()
        .filter(|y| sq_dist(y, x) < s2 && inst.admissible(y))
        .map(|y| -> Result<Option<Vec<f64>>> {
            if inst.d(y, 4.0 * s, 0)? > gamma0 {
                return Ok(None);
            }
            Ok(Some(y.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let close: Vec<Vec<f64>> = checks.into_iter().flatten().collect();
    let outside = close
        .iter()
        .filter(|y| affine_distance(y, x, &v) >= tau * s)
        .cloned()
        .collect();
    Ok(Capture::Captured {
        v,
        audit: CaptureAudit {
            checked: close.len(),
            outside,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverCase {
    /// First level: a Vitali cover of every point.
    Initial,
    /// Parent scale is bad.
    Bad,
    /// Parent scale is good; children follow the captured subspace.
    Good,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverLevel {
    pub j: usize,
    pub radius: f64,
    pub case: CoverCase,
    pub centers: Vec<Vec<f64>>,
    /// Largest number of children of one parent.
    pub max_children: usize,
    /// `20^n tau^-n` for bad parents, `10^n omega_n tau^-k` for good ones.
    pub allowed_children: Option<f64>,
    pub capture_failures: usize,
    pub capture_skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub levels: Vec<CoverLevel>,
    /// `(r, bound)` with `|T_r(points)| <= bound` at `r = tau^j r0 / 5`.
    pub tubular_bounds: Vec<(f64, f64)>,
    /// `|I_p| omega_n (tau^p r0)^n`.
    pub final_bound: f64,
    pub passed: bool,
}

fn nearest(centers: &[Vec<f64>], y: &[f64]) -> usize {
    centers
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |acc, (i, c)| {
            let d = sq_dist(c, y);
            if d < acc.1 {
                (i, d)
            } else {
                acc
            }
        })
        .0
}

fn select(points: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| points[i].clone()).collect()
}

/// Index used for the capture step at a good parent: the smallest `i <= k`
/// with `d_{i+1}(x, 4s) >= gamma_i`, falling back to `k`.
fn capture_index(inst: &dyn Instance, x: &[f64], s: f64, params: &StratParams) -> Result<usize> {
    for i in 0..params.inputs.k {
        if inst.d(x, 4.0 * s, i + 1)? >= params.gamma[i] {
            return Ok(i);
        }
    }
    Ok(params.inputs.k)
}

/// Builds covers `I_q, ..., I_p` of `points` by balls of radius `tau^j r0`,
/// each level refining the previous one parent by parent.
///
/// `bad` holds the indices `j - 1` treated as bad scales. Each level is
/// audited against its child-count factor and, for good parents, against the
/// captured tube.
pub fn iterative_cover(
    inst: &dyn Instance,
    points: &[Vec<f64>],
    params: &StratParams,
    bad: &BTreeSet<usize>,
) -> Result<CoverReport> {
    let n = inst.dim();
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "every point must lie in R^{n}"
        )));
    }
    let omega = unit_ball_volume(n);
    let k = params.inputs.k;
    let tau = params.tau;
    let bound_of = |count: usize, j: usize| count as f64 * omega * params.scale(j).powi(n as i32);
    if points.is_empty() {
        return Ok(CoverReport {
            levels: Vec::new(),
            tubular_bounds: Vec::new(),
            final_bound: 0.0,
            passed: true,
        });
    }
    let first = vitali_cover(points, params.scale(params.q))?;
    let mut levels = vec![CoverLevel {
        j: params.q,
        radius: params.scale(params.q),
        case: CoverCase::Initial,
        centers: select(points, &first.centers),
        max_children: first.centers.len(),
        allowed_children: None,
        capture_failures: 0,
        capture_skipped: 0,
        passed: true,
    }];
    for j in params.q + 1..=params.p {
        let parents = &levels.last().expect("initial level").centers;
        let parent_radius = params.scale(j - 1);
        let radius = params.scale(j);
        let mut owned: Vec<Vec<usize>> = vec![Vec::new(); parents.len()];
        for (i, y) in points.iter().enumerate() {
            owned[nearest(parents, y)].push(i);
        }
        let case = if bad.contains(&(j - 1)) {
            CoverCase::Bad
        } else {
            CoverCase::Good
        };
        let allowed = match case {
            CoverCase::Bad => 20f64.powi(n as i32) * tau.powi(-(n as i32)),
            _ => 10f64.powi(n as i32) * omega * tau.powi(-(k as i32)),
        };
        let children: Vec<(Vec<Vec<f64>>, usize, bool)> = parents
            .par_iter()
            .zip(owned.par_iter())
            .map(|(x, idx)| -> Result<(Vec<Vec<f64>>, usize, bool)> {
                let pts = select(points, idx);
                let mut failures = 0;
                let mut skipped = false;
                if case == CoverCase::Good {
                    let i = capture_index(inst, x, parent_radius, params)?;
                    match capture(
                        inst,
                        x,
                        parent_radius,
                        i,
                        params.gamma[i],
                        tau,
                        params.gamma[0],
                        &pts,
                    )? {
                        Capture::Captured { v, .. } => {
                            failures = pts
                                .iter()
                                .filter(|y| affine_distance(y, x, &v) >= radius)
                                .count();
                        }
                        Capture::NotApplicable { .. } => skipped = true,
                    }
                }
                let cover = vitali_cover(&pts, radius)?;
                Ok((select(&pts, &cover.centers), failures, skipped))
            })
            .collect::<Result<_>>()?;
        let max_children = children.iter().map(|c| c.0.len()).max().unwrap_or(0);
        let capture_failures = children.iter().map(|c| c.1).sum();
        let capture_skipped = children.iter().filter(|c| c.2).count();
        levels.push(CoverLevel {
            j,
            radius,
            case,
            centers: children.into_iter().flat_map(|c| c.0).collect(),
            max_children,
            allowed_children: Some(allowed),
            capture_failures,
            capture_skipped,
            passed: max_children as f64 <= allowed && capture_failures == 0,
        });
    }
    let tubular_bounds = levels
        .iter()
        .map(|l| (l.radius / 5.0, bound_of(l.centers.len(), l.j)))
        .collect();
    let last = levels.last().expect("initial level");
    Ok(CoverReport {
        final_bound: bound_of(last.centers.len(), last.j),
        passed: levels.iter().all(|l| l.passed),
        tubular_bounds,
        levels,
    })
}

/// Constants checked by [`verify_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypotheses {
    pub lambda1: f64,
    pub eta1: f64,
    pub eps1: f64,
    pub eta2: f64,
    pub eps2: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    /// Small pinching forces closeness to the homogeneous class.
    Pinching,
    /// Approximate symmetry confines the approximately homogeneous points.
    Confinement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub hypothesis: Hypothesis,
    pub x: Vec<f64>,
    pub s: f64,
    pub k: Option<usize>,
    pub y: Option<Vec<f64>>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub constants: Hypotheses,
    pub pairs_checked: usize,
    /// Pairs at inadmissible centers or with `lambda1 s` below the instance's
    /// smallest resolved scale.
    pub pairs_skipped: usize,
    pub counterexamples: Vec<Counterexample>,
}

/// Evaluations shared by the hypothesis check and the calibration.
struct PairData {
    x: Vec<f64>,
    s: f64,
    pinch: f64,
    d0: f64,
    /// `d_k(x, 4s)` for `k = 0..=n`.
    d4: Vec<f64>,
    v: Vec<Vec<f64>>,
    /// Admissible probes in `B_s(x)` with `d_0(y, 4s)`.
    probes: Vec<(Vec<f64>, f64)>,
}

fn gather(
    inst: &dyn Instance,
    pairs: &[(Vec<f64>, f64)],
    probes: &[Vec<f64>],
    lambda1: f64,
) -> Result<(Vec<PairData>, usize)> {
    let n = inst.dim();
    let admissible_probes: Vec<&Vec<f64>> = probes.iter().filter(|y| inst.admissible(y)).collect();
    let data: Vec<Option<PairData>> = pairs
        .par_iter()
        .map(|(x, s)| -> Result<Option<PairData>> {
            if !inst.admissible(x) || lambda1 * s < inst.min_scale() {
                return Ok(None);
            }
            let pinch = inst.theta(x, *s)? - inst.theta(x, lambda1 * s)?;
            let d0 = inst.d(x, *s, 0)?;
            let d4 = (0..=n)
                .map(|k| inst.d(x, 4.0 * s, k))
                .collect::<Result<Vec<_>>>()?;
            let v = orthonormalize(&inst.subspace(x, 4.0 * s)?);
            let probes = admissible_probes
                .iter()
                .filter(|y| sq_dist(y, x) < s * s)
                .map(|y| Ok(((*y).clone(), inst.d(y, 4.0 * s, 0)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(PairData {
                x: x.clone(),
                s: *s,
                pinch,
                d0,
                d4,
                v,
                probes,
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = data.iter().filter(|d| d.is_none()).count();
    Ok((data.into_iter().flatten().collect(), skipped))
}

fn counterexamples(data: &[PairData], h: &Hypotheses, n: usize) -> Vec<Counterexample> {
    let mut out = Vec::new();
    for p in data {
        if p.pinch <= h.eta1 && p.d0 > h.eps1 {
            out.push(Counterexample {
                hypothesis: Hypothesis::Pinching,
                x: p.x.clone(),
                s: p.s,
                k: None,
                y: None,
                detail: format!("pinch {} <= eta1 but d_0 = {} > eps1", p.pinch, p.d0),
            });
        }
        for k in 0..n {
            if !(p.d4[k] <= h.eta2 && p.d4[k + 1] >= h.eps2) {
                continue;
            }
            for (y, d0y) in &p.probes {
                if affine_distance(y, &p.x, &p.v) >= h.tau * p.s && *d0y <= h.eta2 {
                    out.push(Counterexample {
                        hypothesis: Hypothesis::Confinement,
                        x: p.x.clone(),
                        s: p.s,
                        k: Some(k),
                        y: Some(y.clone()),
                        detail: format!("probe outside the tube has d_0 = {d0y} <= eta2"),
                    });
                }
            }
        }
    }
    out
}

/// Searches the sampled `(x, s)` pairs and probes for violations of the
/// pinching and confinement hypotheses.
pub fn verify_hypotheses(
    inst: &dyn Instance,
    pairs: &[(Vec<f64>, f64)],
    probes: &[Vec<f64>],
    h: &Hypotheses,
) -> Result<HypothesisReport> {
    if !(h.lambda1 > 0.0 && h.lambda1 < 1.0) || !(h.tau > 0.0 && h.tau < 1.0) {
        return Err(Error::InvalidArgument(
            "lambda1 and tau must lie in (0, 1)".into(),
        ));
    }
    let (data, skipped) = gather(inst, pairs, probes, h.lambda1)?;
    Ok(HypothesisReport {
        constants: h.clone(),
        pairs_checked: data.len(),
        pairs_skipped: skipped,
        counterexamples: counterexamples(&data, h, inst.dim()),
    })
}

/// Largest `eta1`, `eta2` free of counterexamples on the sweep, halved.
/// Without any constraint `eta1` is `Lambda0` and `eta2` is `eps2`.
pub fn calibrate_empirical(
    inst: &dyn Instance,
    pairs: &[(Vec<f64>, f64)],
    probes: &[Vec<f64>],
    eps1: f64,
    eps2: f64,
    tau: f64,
    lambda1: f64,
) -> Result<(Hypotheses, Calibration)> {
    if !(lambda1 > 0.0 && lambda1 < 1.0) || !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(
            "lambda1 and tau must lie in (0, 1)".into(),
        ));
    }
    let n = inst.dim();
    let (data, _) = gather(inst, pairs, probes, lambda1)?;
    let eta1_limit = data
        .iter()
        .filter(|p| p.d0 > eps1)
        .map(|p| p.pinch)
        .fold(f64::INFINITY, f64::min);
    let mut eta2_limit = f64::INFINITY;
    for p in &data {
        for k in 0..n {
            if p.d4[k + 1] < eps2 {
                continue;
            }
            for (y, d0y) in &p.probes {
                if affine_distance(y, &p.x, &p.v) >= tau * p.s {
                    eta2_limit = eta2_limit.min(p.d4[k].max(*d0y));
                }
            }
        }
    }
    let eta1 = if eta1_limit.is_finite() {
        0.5 * eta1_limit
    } else {
        inst.lambda0()
    };
    let eta2 = if eta2_limit.is_finite() {
        0.5 * eta2_limit
    } else {
        eps2
    };
    if !(eta1 > 0.0) || !(eta2 > 0.0) {
        return Err(Error::Configuration(format!(
            "the sweep leaves no positive constants: eta1 limit {eta1_limit}, eta2 limit {eta2_limit}"
        )));
    }
    let h = Hypotheses {
        lambda1,
        eta1,
        eps1,
        eta2,
        eps2,
        tau,
    };
    let c = Calibration {
        eta1,
        lambda1,
        eta2: Eta2Rule::Constant(eta2),
        source: CalibrationSource::Empirical {
            pairs: data.len(),
            probes: probes.len(),
        },
    };
    Ok((h, c))
}

/// `(Lambda0 + 1)^(-1/2)`.
pub fn stability_delta0(lambda0: f64) -> f64 {
    (lambda0 + 1.0).powf(-0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub delta0: f64,
    pub deltas: Vec<f64>,
    /// Indices of the points in `S^(n-2)_{r, delta}` for each delta.
    pub members: Vec<Vec<usize>>,
    pub coincide: bool,
}

/// Compares `S^(n-2)_{r, delta}` across `deltas`, all below `delta0`.
pub fn stability_check(
    inst: &dyn Instance,
    points: &[Vec<f64>],
    deltas: &[f64],
    r: f64,
    r0: f64,
    ratio: f64,
) -> Result<StabilityReport> {
    let n = inst.dim();
    if n < 2 {
        return Err(Error::UnsupportedDimension("stability needs n >= 2".into()));
    }
    let delta0 = stability_delta0(inst.lambda0());
    if let Some(d) = deltas.iter().find(|&&d| !(d > 0.0 && d < delta0)) {
        return Err(Error::InvalidArgument(format!(
            "delta {d} must lie in (0, {delta0})"
        )));
    }
    let members: Vec<Vec<usize>> = deltas
        .iter()
        .map(|&delta| -> Result<Vec<usize>> {
            let flags = points
                .par_iter()
                .map(|x| strata_membership(inst, x, n - 2, r, r0, delta, ratio).map(|m| m.member))
                .collect::<Result<Vec<_>>>()?;
            Ok(flags
                .iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(i, _)| i)
                .collect())
        })
        .collect::<Result<_>>()?;
    let coincide = members.windows(2).all(|w| w[0] == w[1]);
    Ok(StabilityReport {
        delta0,
        deltas: deltas.to_vec(),
        members,
        coincide,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountabilityReport {
    /// Class index (first index from which every scale is good) to member count.
    pub classes: BTreeMap<usize, usize>,
    /// Smallest pairwise distance within each class with two or more members.
    pub min_separation: BTreeMap<usize, f64>,
    pub passed: bool,
}

/// Groups admissible points by the first index after their last bad scale and
/// checks that every class is a discrete set.
pub fn countability_audit(
    inst: &dyn Instance,
    points: &[Vec<f64>],
    params: &StratParams,
) -> Result<CountabilityReport> {
    let admissible: Vec<&Vec<f64>> = points.iter().filter(|x| inst.admissible(x)).collect();
    let class_of: Vec<usize> = admissible
        .par_iter()
        .map(|x| bad_scales(inst, x, params).map(|b| b.last().map_or(params.q, |&l| l + 1)))
        .collect::<Result<_>>()?;
    let mut groups: BTreeMap<usize, Vec<&Vec<f64>>> = BTreeMap::new();
    for (x, c) in admissible.into_iter().zip(class_of) {
        groups.entry(c).or_default().push(x);
    }
    let mut min_separation = BTreeMap::new();
    for (&c, members) in &groups {
        let mut best = f64::INFINITY;
        for (a, x) in members.iter().enumerate() {
            for y in &members[a + 1..] {
                best = best.min(sq_dist(x, y).sqrt());
            }
        }
        if members.len() > 1 {
            min_separation.insert(c, best);
        }
    }
    Ok(CountabilityReport {
        classes: groups.iter().map(|(&c, m)| (c, m.len())).collect(),
        passed: min_separation.values().all(|&d| d > 0.0),
        min_separation,
    })
}
