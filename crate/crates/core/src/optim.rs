//! Riemannian gradient descent with Armijo backtracking and a Riemannian
//! trust-region method with truncated CG.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::geometry::{
    hess_fd, metric, proj_cart_horizontal, proj_orth_horizontal_with_stats, proj_tangent, TtnTangent, DEFAULT_CG_TOL,
};
use crate::learning::Objective;
use crate::retraction::{cartesian_retract, RetractionKind};
use crate::scalar::Scalar;
use crate::ttn::TtnParam;

/// Which projector turns the Euclidean gradient into a search direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectorChoice {
    /// Raw Euclidean gradient (baseline; RGD only).
    None,
    Tangent,
    CartesianHorizontal,
    OrthogonalHorizontal,
}

impl ProjectorChoice {
    pub fn name(self) -> &'static str {
        match self {
            ProjectorChoice::None => "none",
            ProjectorChoice::Tangent => "tangent",
            ProjectorChoice::CartesianHorizontal => "cartesian",
            ProjectorChoice::OrthogonalHorizontal => "orthogonal",
        }
    }
}

impl fmt::Display for ProjectorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProjectorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "euclidean" => Ok(ProjectorChoice::None),
            "tangent" => Ok(ProjectorChoice::Tangent),
            "cartesian" | "cartesian-horizontal" => Ok(ProjectorChoice::CartesianHorizontal),
            "orthogonal" | "orthogonal-horizontal" => Ok(ProjectorChoice::OrthogonalHorizontal),
            other => domain_err(format!("unknown projector {other:?} (expected none, tangent, cartesian or orthogonal)")),
        }
    }
}

/// Trust-region model Hessian, each paired with its gradient projector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianChoice {
    /// `Proj^≡ ∘ H^≡`, finite differences of the Cartesian horizontal gradient.
    CartH,
    /// `Proj^× ∘ Hess f`.
    OrthHess,
    /// `Hess f` on the total space.
    TotalHess,
}

impl HessianChoice {
    pub const ALL: [HessianChoice; 3] = [HessianChoice::CartH, HessianChoice::OrthHess, HessianChoice::TotalHess];

    pub fn gradient_projector(self) -> ProjectorChoice {
        match self {
            HessianChoice::CartH => ProjectorChoice::CartesianHorizontal,
            HessianChoice::OrthHess | HessianChoice::TotalHess => ProjectorChoice::Tangent,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HessianChoice::CartH => "cart-h",
            HessianChoice::OrthHess => "orth-hess",
            HessianChoice::TotalHess => "total-hess",
        }
    }
}

impl fmt::Display for HessianChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HessianChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cart-h" | "carth" | "cartesian" => Ok(HessianChoice::CartH),
            "orth-hess" | "orthhess" | "orthogonal" => Ok(HessianChoice::OrthHess),
            "total-hess" | "totalhess" | "total" => Ok(HessianChoice::TotalHess),
            other => domain_err(format!("unknown Hessian {other:?} (expected cart-h, orth-hess or total-hess)")),
        }
    }
}

/// One line of the metrics stream. Record `k` describes iterate `x_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    /// Accepted Armijo step (RGD, 0 at the start) or trust-region radius after the update (RTR).
    pub step_or_radius: f64,
    pub elapsed_s: f64,
}

/// Extra per-iteration information from the trust-region method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrStep {
    pub iter: usize,
    pub rho: f64,
    pub accepted: bool,
    pub inner_iterations: usize,
    pub status: TcgStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
    /// The trust region collapsed after repeated rejections.
    ModelFailure,
    /// An evaluation failed mid-run; the report keeps the last good iterate.
    Error(String),
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::GradientTolerance => f.write_str("gradient_tolerance"),
            Termination::MaxIterations => f.write_str("max_iterations"),
            Termination::LineSearchFailure => f.write_str("line_search_failure"),
            Termination::ModelFailure => f.write_str("model_failure"),
            Termination::Error(msg) => write!(f, "error: {msg}"),
        }
    }
}

/// Evaluation counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerStats {
    pub value_evals: usize,
    pub gradient_evals: usize,
    pub hessian_applications: usize,
    /// Inner CG iterations spent in the orthogonal horizontal projection.
    pub projection_cg_iterations: usize,
    /// `g(Hξ, η) - g(ξ, Hη)` measured once at the start point (trust region only).
    pub hessian_symmetry_defect: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OptimizerReport<T> {
    pub records: Vec<IterationRecord>,
    pub tr_steps: Vec<TrStep>,
    pub x: TtnParam<T>,
    pub termination: Termination,
    pub stats: OptimizerStats,
}

impl<T> OptimizerReport<T> {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    /// Mean wall time per completed iteration.
    pub fn seconds_per_iteration(&self) -> f64 {
        match self.records.last() {
            Some(r) if r.iter > 0 => r.elapsed_s / r.iter as f64,
            _ => 0.0,
        }
    }
}

/// Wall-clock stamps, or all zeros when disabled (for reproducible streams).
#[derive(Clone, Copy, Debug)]
pub struct Clock {
    start: Option<Instant>,
}

impl Clock {
    pub fn new(enabled: bool) -> Self {
        Self { start: enabled.then(Instant::now) }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.map_or(0.0, |s| s.elapsed().as_secs_f64())
    }
}

/// Settings of the inner CG solve behind the orthogonal horizontal projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionSettings {
    pub cg_tol: f64,
    /// `None` means the dimension of the horizontal space.
    pub cg_max_iter: Option<usize>,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self { cg_tol: DEFAULT_CG_TOL, cg_max_iter: None }
    }
}

/// Applies a projector choice to an ambient vector; returns the inner CG count.
pub fn project<T: Scalar>(
    choice: ProjectorChoice,
    x: &TtnParam<T>,
    v: &TtnTangent<T>,
    settings: &ProjectionSettings,
) -> Result<(TtnTangent<T>, usize)> {
    match choice {
        ProjectorChoice::None => Ok((v.clone(), 0)),
        ProjectorChoice::Tangent => Ok((proj_tangent(x, v)?, 0)),
        ProjectorChoice::CartesianHorizontal => Ok((proj_cart_horizontal(x, v)?, 0)),
        ProjectorChoice::OrthogonalHorizontal => {
            let t = proj_tangent(x, v)?;
            let max_iter = settings.cg_max_iter.unwrap_or_else(|| x.tree().horizontal_dim().max(1));
            let (out, stats) = proj_orth_horizontal_with_stats(x, &t, T::of(settings.cg_tol), max_iter)?;
            Ok((out, stats.iterations))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmijoParams {
    pub initial_step: f64,
    pub backtrack: f64,
    /// Sufficient decrease constant `r` in `(0, 1)`.
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self { initial_step: 1.0, backtrack: 0.5, sufficient_decrease: 1e-4, max_backtracks: 50 }
    }
}

/// Accepted Armijo step.
#[derive(Clone, Debug)]
pub struct ArmijoStep<T> {
    pub alpha: f64,
    pub x: TtnParam<T>,
    pub value: T,
    pub backtracks: usize,
}

/// Backtracking on `α = α₀ βʲ` until `f(x) - f(R_x(-α d)) >= r α g_sq`.
///
/// `Ok(None)` signals that no admissible step was found. Retraction failures
/// at trial points count as rejections.
pub fn armijo_search<T: Scalar>(
    obj: &dyn Objective<T>,
    retraction: RetractionKind,
    x: &TtnParam<T>,
    fx: T,
    direction: &TtnTangent<T>,
    g_sq: T,
    params: &ArmijoParams,
) -> Result<Option<ArmijoStep<T>>> {
    if direction.norm() == T::zero() {
        return domain_err("line search along a zero direction");
    }
    let r = params.sufficient_decrease;
    if !(r > 0.0 && r < 1.0) || !(params.backtrack > 0.0 && params.backtrack < 1.0) || !(params.initial_step > 0.0) {
        return domain_err("Armijo parameters out of range");
    }
    let mut alpha = params.initial_step;
    for j in 0..=params.max_backtracks {
        if let Ok(trial) = cartesian_retract(retraction, x, &direction.scale(T::of(-alpha))) {
            let value = obj.value(&trial)?;
            if (fx - value).as_f64() >= r * alpha * g_sq.as_f64() {
                return Ok(Some(ArmijoStep { alpha, x: trial, value, backtracks: j }));
            }
        }
        alpha *= params.backtrack;
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgdOptions {
    pub projector: ProjectorChoice,
    pub retraction: RetractionKind,
    /// Stop once the squared norm of the search direction falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub armijo: ArmijoParams,
    pub projection: ProjectionSettings,
    pub timing: bool,
}

impl Default for RgdOptions {
    fn default() -> Self {
        Self {
            projector: ProjectorChoice::CartesianHorizontal,
            retraction: RetractionKind::Qr,
            tol: 1e-10,
            max_iter: 2000,
            armijo: ArmijoParams::default(),
            projection: ProjectionSettings::default(),
            timing: true,
        }
    }
}

fn require_start<T: Scalar>(x0: &TtnParam<T>) -> Result<()> {
    if !x0.is_orthogonal(T::of(1e-10).max(T::of(10.0) * T::epsilon().sqrt())) {
        return domain_err("optimizers must start from an orthogonal parameter");
    }
    Ok(())
}

/// Riemannian gradient descent `x_{k+1} = R_{x_k}(-α_k P_{x_k}(∇f))`.
pub fn rgd<T: Scalar>(
    obj: &dyn Objective<T>,
    x0: &TtnParam<T>,
    opts: &RgdOptions,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<OptimizerReport<T>> {
    require_start(x0)?;
    let clock = Clock::new(opts.timing);
    let mut stats = OptimizerStats::default();
    let mut x = x0.clone();
    let (mut fx, g) = obj.value_and_gradient(&x)?;
    stats.gradient_evals += 1;
    let (mut s, cg) = project(opts.projector, &x, &g, &opts.projection)?;
    stats.projection_cg_iterations += cg;
    let mut g_sq = s.norm_sq();
    let mut records = Vec::with_capacity(opts.max_iter + 1);
    let first = IterationRecord { iter: 0, loss: fx.as_f64(), grad_norm_sq: g_sq.as_f64(), step_or_radius: 0.0, elapsed_s: clock.elapsed() };
    observer(&first);
    records.push(first);
    let mut termination = Termination::MaxIterations;
    for k in 1..=opts.max_iter {
        if g_sq.as_f64() < opts.tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let step = match armijo_search(obj, opts.retraction, &x, fx, &s, g_sq, &opts.armijo) {
            Ok(Some(step)) => step,
            Ok(None) => {
                stats.value_evals += opts.armijo.max_backtracks + 1;
                termination = Termination::LineSearchFailure;
                break;
            }
            Err(e) => {
                termination = Termination::Error(e.to_string());
                break;
            }
        };
        stats.value_evals += step.backtracks + 1;
        let next = obj.value_and_gradient(&step.x).and_then(|(f, g)| {
            let (s, cg) = project(opts.projector, &step.x, &g, &opts.projection)?;
            Ok((f, s, cg))
        });
        let (f_new, s_new, cg) = match next {
            Ok(v) => v,
            Err(e) => {
                termination = Termination::Error(e.to_string());
                break;
            }
        };
        stats.gradient_evals += 1;
        stats.projection_cg_iterations += cg;
        x = step.x;
        fx = f_new;
        s = s_new;
        g_sq = s.norm_sq();
        let rec = IterationRecord { iter: k, loss: fx.as_f64(), grad_norm_sq: g_sq.as_f64(), step_or_radius: step.alpha, elapsed_s: clock.elapsed() };
        observer(&rec);
        records.push(rec);
    }
    if termination == Termination::MaxIterations && g_sq.as_f64() < opts.tol {
        termination = Termination::GradientTolerance;
    }
    Ok(OptimizerReport { records, tr_steps: Vec::new(), x, termination, stats })
}

/// Exit condition of the truncated CG solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcgStatus {
    /// Residual criterion met inside the region.
    Converged,
    NegativeCurvature,
    ExceededRadius,
    /// The model stopped decreasing or produced non-finite values; previous iterate returned.
    Breakdown,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct TcgResult<T> {
    pub step: TtnTangent<T>,
    /// `H(step)`, accumulated along the way.
    pub hess_step: TtnTangent<T>,
    pub status: TcgStatus,
    pub iterations: usize,
}

impl<T> TcgResult<T> {
    pub fn hit_boundary(&self) -> bool {
        matches!(self.status, TcgStatus::NegativeCurvature | TcgStatus::ExceededRadius)
    }
}

fn boundary_tau<T: Scalar>(s: &TtnTangent<T>, d: &TtnTangent<T>, radius: T) -> Result<T> {
    let sd = s.dot(d)?;
    let dd = d.norm_sq();
    let ss = s.norm_sq();
    let disc = (sd * sd + dd * (radius * radius - ss)).max(T::zero());
    Ok((-sd + disc.sqrt()) / dd)
}

/// Steihaug–Toint truncated CG for `min <g, s> + ½ <s, H s>` with `||s|| <= radius`.
pub fn steihaug_cg<T: Scalar>(
    hess_op: &mut dyn FnMut(&TtnTangent<T>) -> Result<TtnTangent<T>>,
    grad: &TtnTangent<T>,
    radius: T,
    inner_tol: T,
    max_inner: usize,
) -> Result<TcgResult<T>> {
    if !(radius > T::zero()) {
        return domain_err("trust-region radius must be positive");
    }
    let zero = grad.scale(T::zero());
    let mut s = zero.clone();
    let mut hs = zero.clone();
    let mut r = grad.clone();
    let mut rr = r.norm_sq();
    if rr.sqrt() <= inner_tol || rr == T::zero() {
        return Ok(TcgResult { step: s, hess_step: hs, status: TcgStatus::Converged, iterations: 0 });
    }
    let mut d = r.scale(-T::one());
    let mut model = T::zero();
    for j in 1..=max_inner {
        let hd = hess_op(&d)?;
        let kappa = d.dot(&hd)?;
        if !kappa.is_finite() {
            return Ok(TcgResult { step: s, hess_step: hs, status: TcgStatus::Breakdown, iterations: j });
        }
        let alpha = rr / kappa;
        let mut s_next = s.clone();
        s_next.axpy(alpha, &d)?;
        if kappa <= T::zero() || s_next.norm() >= radius {
            let tau = boundary_tau(&s, &d, radius)?;
            let mut sb = s.clone();
            sb.axpy(tau, &d)?;
            let mut hsb = hs.clone();
            hsb.axpy(tau, &hd)?;
            let status = if kappa <= T::zero() { TcgStatus::NegativeCurvature } else { TcgStatus::ExceededRadius };
            let model_b = grad.dot(&sb)? + T::of(0.5) * sb.dot(&hsb)?;
            if model_b.is_finite() && model_b <= model {
                return Ok(TcgResult { step: sb, hess_step: hsb, status, iterations: j });
            }
            return Ok(TcgResult { step: s, hess_step: hs, status: TcgStatus::Breakdown, iterations: j });
        }
        let mut hs_next = hs.clone();
        hs_next.axpy(alpha, &hd)?;
        let model_next = grad.dot(&s_next)? + T::of(0.5) * s_next.dot(&hs_next)?;
        // A non-symmetric operator can break the monotone model decrease of CG.
        if !(model_next <= model) {
            return Ok(TcgResult { step: s, hess_step: hs, status: TcgStatus::Breakdown, iterations: j });
        }
        s = s_next;
        hs = hs_next;
        model = model_next;
        r.axpy(alpha, &hd)?;
        let rr_new = r.norm_sq();
        if rr_new.sqrt() <= inner_tol {
            return Ok(TcgResult { step: s, hess_step: hs, status: TcgStatus::Converged, iterations: j });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        let mut d_next = r.scale(-T::one());
        d_next.axpy(beta, &d)?;
        d = d_next;
    }
    Ok(TcgResult { step: s, hess_step: hs, status: TcgStatus::MaxIterations, iterations: max_inner })
}

/// CG on `H d = -grad`, projecting every residual with `proj`. On
/// non-positive curvature the last iterate is returned.
pub fn newton_solve<T: Scalar>(
    hess_op: &mut dyn FnMut(&TtnTangent<T>) -> Result<TtnTangent<T>>,
    proj: &dyn Fn(&TtnTangent<T>) -> Result<TtnTangent<T>>,
    grad: &TtnTangent<T>,
    tol: T,
    max_iter: usize,
) -> Result<TtnTangent<T>> {
    let mut s = grad.scale(T::zero());
    let mut r = proj(&grad.scale(-T::one()))?;
    let r0 = r.norm();
    if r0 == T::zero() {
        return Ok(s);
    }
    let mut d = r.clone();
    let mut rr = r.norm_sq();
    for _ in 0..max_iter {
        let hd = proj(&hess_op(&d)?)?;
        let kappa = d.dot(&hd)?;
        if !(kappa > T::zero()) || !kappa.is_finite() {
            return Ok(s);
        }
        let alpha = rr / kappa;
        s.axpy(alpha, &d)?;
        r.axpy(-alpha, &hd)?;
        let rr_new = r.norm_sq();
        if rr_new.sqrt() <= tol * r0 {
            break;
        }
        let mut d_next = r.clone();
        d_next.axpy(rr_new / rr, &d)?;
        d = d_next;
        rr = rr_new;
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrustRegionParams {
    /// `None` selects `0.1 √dim` with `dim` the quotient dimension.
    pub initial_radius: Option<f64>,
    /// `None` selects ten times the initial radius.
    pub max_radius: Option<f64>,
    pub accept_ratio: f64,
    pub shrink_below: f64,
    pub expand_above: f64,
    pub shrink_factor: f64,
    pub expand_factor: f64,
    /// Cap on inner CG iterations; `None` means the quotient dimension.
    pub max_inner: Option<usize>,
    /// Finite-difference step for Hessian products; `None` is the `√ε` rule.
    pub fd_step: Option<f64>,
}

impl Default for TrustRegionParams {
    fn default() -> Self {
        Self {
            initial_radius: None,
            max_radius: None,
            accept_ratio: 0.1,
            shrink_below: 0.25,
            expand_above: 0.75,
            shrink_factor: 0.25,
            expand_factor: 2.0,
            max_inner: None,
            fd_step: None,
        }
    }
}

/// Radius update and acceptance decision for a given `ρ`.
pub fn update_radius(params: &TrustRegionParams, radius: f64, max_radius: f64, rho: f64, hit_boundary: bool) -> (f64, bool) {
    let new_radius = if !(rho >= params.shrink_below) {
        params.shrink_factor * radius
    } else if rho > params.expand_above && hit_boundary {
        (params.expand_factor * radius).min(max_radius)
    } else {
        radius
    };
    (new_radius, rho > params.accept_ratio)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RtrOptions {
    pub hessian: HessianChoice,
    pub retraction: RetractionKind,
    pub tol: f64,
    pub max_iter: usize,
    pub trust_region: TrustRegionParams,
    pub projection: ProjectionSettings,
    pub timing: bool,
}

impl Default for RtrOptions {
    fn default() -> Self {
        Self {
            hessian: HessianChoice::CartH,
            retraction: RetractionKind::Qr,
            tol: 1e-10,
            max_iter: 200,
            trust_region: TrustRegionParams::default(),
            projection: ProjectionSettings::default(),
            timing: true,
        }
    }
}

struct RtrState<'a, T> {
    obj: &'a dyn Objective<T>,
    opts: &'a RtrOptions,
    stats: OptimizerStats,
}

impl<T: Scalar> RtrState<'_, T> {
    /// Value, raw gradient and projected gradient field at `x`.
    fn evaluate(&mut self, x: &TtnParam<T>) -> Result<(T, TtnTangent<T>)> {
        let (f, g) = self.obj.value_and_gradient(x)?;
        self.stats.gradient_evals += 1;
        let (s, cg) = project(self.opts.hessian.gradient_projector(), x, &g, &self.opts.projection)?;
        self.stats.projection_cg_iterations += cg;
        Ok((f, s))
    }

    fn outer_projection(&mut self, x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<TtnTangent<T>> {
        let choice = match self.opts.hessian {
            HessianChoice::CartH => ProjectorChoice::CartesianHorizontal,
            HessianChoice::OrthHess => ProjectorChoice::OrthogonalHorizontal,
            HessianChoice::TotalHess => ProjectorChoice::Tangent,
        };
        let (out, cg) = project(choice, x, v, &self.opts.projection)?;
        self.stats.projection_cg_iterations += cg;
        Ok(out)
    }

    fn hess(&mut self, x: &TtnParam<T>, grad_x: &TtnTangent<T>, xi: &TtnTangent<T>) -> Result<TtnTangent<T>> {
        self.stats.hessian_applications += 1;
        if xi.norm() == T::zero() {
            return Ok(xi.clone());
        }
        let kind = self.opts.retraction;
        let mut field_evals = 0;
        let diff = {
            let obj = self.obj;
            let projection = self.opts.projection;
            let choice = self.opts.hessian.gradient_projector();
            hess_fd(
                |y: &TtnParam<T>| {
                    field_evals += 1;
                    let (_, g) = obj.value_and_gradient(y)?;
                    Ok(project(choice, y, &g, &projection)?.0)
                },
                |p: &TtnParam<T>, v: &TtnTangent<T>| cartesian_retract(kind, p, v),
                |v: &TtnTangent<T>| Ok(v.clone()),
                x,
                grad_x,
                xi,
                self.opts.trust_region.fd_step.map(T::of),
            )?
        };
        self.stats.gradient_evals += field_evals;
        self.outer_projection(x, &diff)
    }
}

/// Riemannian trust-region method with finite-difference Hessian products.
pub fn rtr<T: Scalar>(
    obj: &dyn Objective<T>,
    x0: &TtnParam<T>,
    opts: &RtrOptions,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<OptimizerReport<T>> {
    require_start(x0)?;
    let clock = Clock::new(opts.timing);
    let tree = x0.tree().clone();
    let dim = tree.horizontal_dim().max(1);
    let tr = &opts.trust_region;
    let mut radius = tr.initial_radius.unwrap_or(0.1 * (dim as f64).sqrt());
    let max_radius = tr.max_radius.unwrap_or(10.0 * radius);
    let min_radius = radius * 1e-10;
    let max_inner = tr.max_inner.unwrap_or(dim);
    let mut st = RtrState { obj, opts, stats: OptimizerStats::default() };

    let mut x = x0.clone();
    let (mut fx, mut g) = st.evaluate(&x)?;
    if opts.hessian == HessianChoice::CartH && g.norm() > T::zero() {
        st.stats.hessian_symmetry_defect = symmetry_probe(&mut st, &x, &g).ok();
    }
    let mut records = Vec::with_capacity(opts.max_iter + 1);
    let mut tr_steps = Vec::with_capacity(opts.max_iter);
    let first = IterationRecord { iter: 0, loss: fx.as_f64(), grad_norm_sq: g.norm_sq().as_f64(), step_or_radius: radius, elapsed_s: clock.elapsed() };
    observer(&first);
    records.push(first);
    let mut termination = Termination::MaxIterations;
    for k in 1..=opts.max_iter {
        let g_norm = g.norm();
        if (g_norm * g_norm).as_f64() < opts.tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let inner_tol = g_norm * g_norm.sqrt().min(T::of(0.5));
        let step = {
            let (xr, gr) = (&x, &g);
            let mut op = |v: &TtnTangent<T>| st.hess(xr, gr, v);
            steihaug_cg(&mut op, &g, T::of(radius), inner_tol, max_inner)
        };
        let step = match step {
            Ok(s) => s,
            Err(e) => {
                termination = Termination::Error(e.to_string());
                break;
            }
        };
        let model_decrease = -(g.dot(&step.step)? + T::of(0.5) * step.step.dot(&step.hess_step)?);
        let candidate = cartesian_retract(opts.retraction, &x, &step.step).and_then(|y| {
            let (f, s) = st.evaluate(&y)?;
            Ok((y, f, s))
        });
        // Guards against round-off when both decreases are tiny.
        let reg = T::of(1e3) * T::epsilon() * fx.abs().max(T::one());
        let (rho, cand) = match candidate {
            Ok((y, fy, gy)) => {
                let rho = ((fx - fy + reg) / (model_decrease + reg)).as_f64();
                (if rho.is_nan() { f64::NEG_INFINITY } else { rho }, Some((y, fy, gy)))
            }
            Err(_) => (f64::NEG_INFINITY, None),
        };
        let rho = if model_decrease < T::zero() { f64::NEG_INFINITY } else { rho };
        let (new_radius, accepted) = update_radius(tr, radius, max_radius, rho, step.hit_boundary());
        radius = new_radius;
        if accepted {
            if let Some((y, fy, gy)) = cand {
                x = y;
                fx = fy;
                g = gy;
            }
        }
        tr_steps.push(TrStep { iter: k, rho, accepted, inner_iterations: step.iterations, status: step.status });
        let rec = IterationRecord { iter: k, loss: fx.as_f64(), grad_norm_sq: g.norm_sq().as_f64(), step_or_radius: radius, elapsed_s: clock.elapsed() };
        observer(&rec);
        records.push(rec);
        if radius < min_radius {
            termination = Termination::ModelFailure;
            break;
        }
    }
    if termination == Termination::MaxIterations && g.norm_sq().as_f64() < opts.tol {
        termination = Termination::GradientTolerance;
    }
    let stats = st.stats;
    Ok(OptimizerReport { records, tr_steps, x, termination, stats })
}

/// `g(Hξ, η) - g(ξ, Hη)` for `ξ` the gradient and `η` its first Hessian image.
fn symmetry_probe<T: Scalar>(st: &mut RtrState<'_, T>, x: &TtnParam<T>, g: &TtnTangent<T>) -> Result<f64> {
    let xi = g.scale(T::one() / g.norm());
    let h_xi = st.hess(x, g, &xi)?;
    let eta = if h_xi.norm() > T::zero() { h_xi.scale(T::one() / h_xi.norm()) } else { return Ok(0.0) };
    let h_eta = st.hess(x, g, &eta)?;
    Ok((metric(&h_xi, &eta)? - metric(&xi, &h_eta)?).as_f64())
}
