//! Outer inverse problem: clustered Young's moduli under box bounds, the
//! rest shape under a no-inversion step limit, and the alternating driver.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elasticity::{ElasticityError, MaterialModel};
use crate::forward::{ForwardError, Simulator, SolverConfig};
use crate::mesh::{signed_volume, TetMesh, Vec3};
use crate::pose::PoseObservation;
use crate::sensitivity::{Gradients, Objective, ObjectiveReport, Regularizer, SensitivityError};
use crate::step_limit::max_noninversion_step;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseConfig {
    /// Regularization weight. `None` picks
    /// `alpha_factor * D0 / W(X0, observed_neutral, P0)` with `D0` the data
    /// term at the initial guess.
    pub alpha: Option<f64>,
    pub alpha_factor: f64,
    pub young_lower: f64,
    pub young_upper: f64,
    pub young_init: f64,
    /// Homogeneous modulus of the regularizer's reference material.
    pub young_reference: f64,
    pub wolfe_gamma: f64,
    pub material_max_iters: usize,
    pub restshape_max_iters: usize,
    pub bcd_max_outer: usize,
    pub bcd_rel_tol: f64,
    /// Material phase stops when the projected gradient (per decade of
    /// modulus, infinity norm) drops below this fraction of the objective
    /// scale.
    pub grad_tol_material: f64,
    /// Rest-shape phase stops when `|grad| * diameter` drops below this
    /// fraction of the objective scale.
    pub grad_tol_rest: f64,
    /// Upper bound handed to the no-inversion step rule.
    pub rest_step_init: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        InverseConfig {
            alpha: None,
            alpha_factor: 1e-6,
            young_lower: 1e3,
            young_upper: 1e6,
            young_init: 1e6,
            young_reference: 1e6,
            wolfe_gamma: 1e-4,
            material_max_iters: 50,
            restshape_max_iters: 30,
            bcd_max_outer: 10,
            bcd_rel_tol: 1e-4,
            grad_tol_material: 1e-7,
            grad_tol_rest: 1e-7,
            rest_step_init: 1.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
}

impl InverseConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.young_lower > 0.0 && self.young_lower < self.young_upper) {
            return bad("need 0 < young_lower < young_upper");
        }
        if !(self.young_lower <= self.young_init && self.young_init <= self.young_upper) {
            return bad("young_init must lie within [young_lower, young_upper]");
        }
        if !(self.wolfe_gamma > 0.0 && self.wolfe_gamma < 1.0) {
            return bad("wolfe_gamma must lie in (0, 1)");
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return bad("alpha must be a finite non-negative number");
            }
        }
        if !(self.alpha_factor >= 0.0 && self.young_reference > 0.0 && self.rest_step_init > 0.0) {
            return bad("alpha_factor, young_reference and rest_step_init must be positive");
        }
        if !(self.bcd_rel_tol >= 0.0 && self.grad_tol_material >= 0.0 && self.grad_tol_rest >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Material fit on the first pose only.
    Warmstart,
    Material,
    RestShape,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmstart => "warmstart",
            Phase::Material => "material",
            Phase::RestShape => "rest",
        })
    }
}

/// One row of the optimization log. Iteration 0 of a phase is its starting
/// point; later rows are accepted steps. `grad_norm` is the Euclidean norm of
/// the (projected) gradient in the phase's variables at that iterate, so a
/// rest-shape row `k` satisfies
/// `objective_k <= objective_{k-1} - gamma * step_k * grad_norm_{k-1}^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub phase: Phase,
    pub outer: usize,
    pub iter: usize,
    pub objective: f64,
    pub data_term: f64,
    pub reg_term: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub cluster_young: Vec<f64>,
    /// Smallest element volume of the rest shape at this iterate.
    pub min_rest_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    IterationLimit,
    LineSearchStalled,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::IterationLimit => "iteration limit",
            StopReason::LineSearchStalled => "stalled",
        })
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub rest_shape: Vec<Vec3>,
    pub cluster_young: Vec<f64>,
    pub history: Vec<HistoryRecord>,
    pub converged: bool,
    pub reason: String,
    pub alpha: f64,
    pub objective: f64,
    pub initial_rest: Vec<Vec3>,
}

#[derive(Debug, Error)]
pub enum InverseError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Elasticity(#[from] ElasticityError),
    #[error("initial rest-shape guess failed: {0}")]
    InitialGuess(ForwardError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error("inversion aborted: {source}")]
    Aborted {
        source: SensitivityError,
        partial: Box<InversionResult>,
    },
}

fn min_volume(mesh: &TetMesh, x: &[Vec3]) -> f64 {
    mesh.tets
        .iter()
        .map(|t| signed_volume(x, t))
        .fold(f64::INFINITY, f64::min)
}

fn record(
    phase: Phase,
    outer: usize,
    iter: usize,
    r: &ObjectiveReport,
    grad_norm: f64,
    step: f64,
    material: &MaterialModel,
    mesh: &TetMesh,
    rest: &[Vec3],
) -> HistoryRecord {
    HistoryRecord {
        phase,
        outer,
        iter,
        objective: r.value,
        data_term: r.data_term,
        reg_term: r.reg_term,
        grad_norm,
        step,
        cluster_young: material.cluster_young().to_vec(),
        min_rest_volume: min_volume(mesh, rest),
    }
}

/// Rest-shape guess by loading the observed shape with reversed gravity.
pub fn initial_rest_guess(
    sim: &Simulator,
    observed_neutral: &[Vec3],
    material0: &MaterialModel,
    neutral_gravity: &Vec3,
    density: f64,
    solver: &SolverConfig,
) -> Result<Vec<Vec3>, ForwardError> {
    let eq = sim.solve(observed_neutral, material0, &(-neutral_gravity), density, observed_neutral, solver)?;
    Ok(eq.positions)
}

/// Result of one optimization phase.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub rest: Vec<Vec3>,
    pub material: MaterialModel,
    pub report: ObjectiveReport,
    pub iterations: usize,
    pub reason: StopReason,
    pub history: Vec<HistoryRecord>,
}

impl PhaseOutcome {
    /// True when the phase accepted no step.
    pub fn stalled(&self) -> bool {
        self.iterations == 0
    }
}

const LN10: f64 = std::f64::consts::LN_10;

fn log_gradient(material: &MaterialModel, grad: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        grad.len(),
        grad.iter().zip(material.cluster_young()).map(|(g, e)| g * e * LN10),
    )
}

/// Gradient with components removed where a bound is active and the
/// gradient points outward.
fn projected(y: &DVector<f64>, g: &DVector<f64>, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_iterator(
        y.len(),
        y.iter().zip(g.iter()).map(|(&yi, &gi)| {
            if (yi <= lo && gi > 0.0) || (yi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        }),
    )
}

fn young_from_log(y: &DVector<f64>, lower: f64, upper: f64) -> Vec<f64> {
    // Clamp in Pa as well so the bounds hold exactly despite 10^log10 rounding.
    y.iter().map(|&v| 10f64.powf(v).clamp(lower, upper)).collect()
}

struct Trial {
    t: f64,
    value: f64,
    slope: f64,
    y: DVector<f64>,
    material: MaterialModel,
    report: ObjectiveReport,
    grad: DVector<f64>,
}

/// Line search for a step in `(0, t_max]` satisfying sufficient decrease
/// with `c1` and the strong curvature condition with 0.9, by bracketing and
/// safeguarded interpolation. A step at `t_max` only needs sufficient
/// decrease. Trials returning `None` (failed solves) count as too long.
/// Returns the best sufficient-decrease point found, if any.
fn wolfe_search<F>(f0: f64, slope0: f64, t_init: f64, t_max: f64, c1: f64, mut eval: F) -> Result<Option<Trial>, SensitivityError>
where
    F: FnMut(f64) -> Result<Option<Trial>, SensitivityError>,
{
    const C2: f64 = 0.9;
    const MAX_EVALS: usize = 30;
    if !(slope0 < 0.0) || !(t_max > 0.0) {
        return Ok(None);
    }
    let armijo = |tr: &Trial| tr.value <= f0 + c1 * tr.t * slope0;
    let curvature = |tr: &Trial| tr.slope.abs() <= -C2 * slope0;

    // `lo` always satisfies sufficient decrease (t = 0 included).
    let mut lo: (f64, f64, f64) = (0.0, f0, slope0);
    let mut best: Option<Trial> = None;
    let mut hi: Option<(f64, f64, Option<f64>)> = None;
    let mut t = t_init;
    for _ in 0..MAX_EVALS {
        let tr = eval(t)?;
        match tr {
            Some(tr) if armijo(&tr) && tr.value < lo.1 => {
                if curvature(&tr) || (hi.is_none() && t >= t_max) {
                    return Ok(Some(tr));
                }
                let sl = tr.slope;
                let val = tr.value;
                if sl * (hi.map_or(f64::INFINITY, |h| h.0) - t) >= 0.0 || hi.is_none() {
                    if sl >= 0.0 {
                        hi = Some((lo.0, lo.1, Some(lo.2)));
                    }
                }
                lo = (t, val, sl);
                best = Some(tr);
                if hi.is_none() {
                    // Still descending: extrapolate.
                    t = (2.0 * t).min(t_max);
                    continue;
                }
            }
            Some(tr) => hi = Some((t, tr.value, Some(tr.slope))),
            None => hi = Some((t, f64::INFINITY, None)),
        }
        let (th, fh, sh) = hi.expect("bracket set");
        let width = th - lo.0;
        if width.abs() <= 1e-14 * th.abs().max(lo.0.abs()) {
            break;
        }
        let mut cand = match (fh.is_finite(), sh) {
            (true, Some(sh)) => cubic_min(lo.0, lo.1, lo.2, th, fh, sh),
            (true, None) => quadratic_min(lo.0, lo.1, lo.2, th, fh),
            _ => None,
        }
        .unwrap_or(lo.0 + 0.5 * width);
        let (a, b) = if lo.0 < th { (lo.0, th) } else { (th, lo.0) };
        let margin = 0.1 * (b - a);
        if !(cand > a + margin && cand < b - margin) {
            cand = 0.5 * (a + b);
        }
        t = cand;
    }
    Ok(best)
}

fn quadratic_min(t0: f64, f0: f64, s0: f64, t1: f64, f1: f64) -> Option<f64> {
    let dt = t1 - t0;
    let c = (f1 - f0 - s0 * dt) / (dt * dt);
    (c > 0.0).then(|| t0 - s0 / (2.0 * c))
}

fn cubic_min(t0: f64, f0: f64, s0: f64, t1: f64, f1: f64, s1: f64) -> Option<f64> {
    let d1 = s0 + s1 - 3.0 * (f0 - f1) / (t0 - t1);
    let disc = d1 * d1 - s0 * s1;
    if disc < 0.0 {
        return None;
    }
    let d2 = (t1 - t0).signum() * disc.sqrt();
    let t = t1 - (t1 - t0) * (s1 + d2 - d1) / (s1 - s0 + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Bound-constrained quasi-Newton fit of the cluster moduli with the rest
/// shape held fixed. Works in `log10 E`; the active set is the bounds where
/// the gradient pushes outward, and the BFGS inverse Hessian is applied on
/// the free variables only. Every trial point is projected onto the box.
#[allow(clippy::too_many_arguments)]
pub fn optimize_materials(
    objective: &Objective,
    rest: &[Vec3],
    material_init: &MaterialModel,
    config: &InverseConfig,
    phase: Phase,
    outer: usize,
    scale: f64,
    start: Option<ObjectiveReport>,
) -> Result<PhaseOutcome, SensitivityError> {
    let mesh = objective.sim.mesh();
    let lo = config.young_lower.log10();
    let hi = config.young_upper.log10();
    let mut material = material_init.with_cluster_young(
        material_init
            .cluster_young()
            .iter()
            .map(|e| e.clamp(config.young_lower, config.young_upper))
            .collect(),
    )?;
    let mut y = DVector::from_iterator(
        material.num_clusters(),
        material.cluster_young().iter().map(|e| e.log10().clamp(lo, hi)),
    );
    let mut report = match start {
        Some(r) if !r.grad_clusters.is_empty() => r,
        _ => objective.evaluate(rest, &material, Gradients::CLUSTERS)?,
    };
    let mut g = log_gradient(&material, &report.grad_clusters);
    let mut pg = projected(&y, &g, lo, hi);
    let mut history = vec![record(phase, outer, 0, &report, pg.norm(), 0.0, &material, mesh, rest)];
    let n = y.len();
    let mut h_inv: Option<DMatrix<f64>> = None;
    let mut reason = StopReason::IterationLimit;
    let mut iterations = 0;

    for it in 1..=config.material_max_iters {
        if pg.amax() <= config.grad_tol_material * scale {
            reason = StopReason::Converged;
            break;
        }
        let free: Vec<bool> = (0..n).map(|i| pg[i] != 0.0).collect();
        let mut d = DVector::zeros(n);
        if let Some(h) = &h_inv {
            for i in (0..n).filter(|&i| free[i]) {
                d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[(i, j)] * g[j]).sum::<f64>();
            }
            // A free variable sitting on a bound may not be pushed outward.
            for i in 0..n {
                if (y[i] <= lo && d[i] < 0.0) || (y[i] >= hi && d[i] > 0.0) {
                    d[i] = 0.0;
                }
            }
            if d.dot(&pg) >= 0.0 {
                h_inv = None;
            }
        }
        if h_inv.is_none() {
            // Without curvature information the step is a full decade along
            // the steepest descent direction.
            d = -&pg / pg.amax();
        }
        // At most one decade per iteration.
        let dmax = d.amax();
        if dmax > 1.0 {
            d /= dmax;
        }
        // Largest step that stays inside the box.
        let t_max = (0..n)
            .filter_map(|i| match d[i] {
                v if v < 0.0 => Some((lo - y[i]) / v),
                v if v > 0.0 => Some((hi - y[i]) / v),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min);

        let trial = |t: f64| -> Result<Option<Trial>, SensitivityError> {
            let mut y_t = &y + t * &d;
            for i in 0..n {
                // Land exactly on a bound reached by this step.
                if t == t_max && d[i] != 0.0 && ((lo - y[i]) / d[i] == t_max || (hi - y[i]) / d[i] == t_max) {
                    y_t[i] = if d[i] < 0.0 { lo } else { hi };
                }
                y_t[i] = y_t[i].clamp(lo, hi);
            }
            let m_t = material.with_cluster_young(young_from_log(&y_t, config.young_lower, config.young_upper))?;
            match objective.evaluate(rest, &m_t, Gradients::CLUSTERS) {
                Ok(r) => {
                    let g_t = log_gradient(&m_t, &r.grad_clusters);
                    Ok(Some(Trial {
                        slope: g_t.dot(&d),
                        value: r.value,
                        y: y_t,
                        material: m_t,
                        report: r,
                        grad: g_t,
                        t,
                    }))
                }
                Err(SensitivityError::Forward { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        let accepted = wolfe_search(report.value, g.dot(&d), t_max.min(1.0), t_max, config.wolfe_gamma, trial)?;
        let Some(acc) = accepted else {
            reason = StopReason::LineSearchStalled;
            break;
        };
        let s = &acc.y - &y;
        let yv = &acc.grad - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let h = h_inv.take().unwrap_or_else(|| DMatrix::identity(n, n) * (sy / yv.dot(&yv)));
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - rho * &s * yv.transpose();
            let b = &i - rho * &yv * s.transpose();
            h_inv = Some(&a * h * &b + rho * &s * s.transpose());
        }
        y = acc.y;
        material = acc.material;
        report = acc.report;
        g = acc.grad;
        pg = projected(&y, &g, lo, hi);
        iterations = it;
        history.push(record(phase, outer, it, &report, pg.norm(), acc.t, &material, mesh, rest));
    }
    if iterations == config.material_max_iters && pg.amax() <= config.grad_tol_material * scale {
        reason = StopReason::Converged;
    }
    Ok(PhaseOutcome {
        rest: rest.to_vec(),
        material,
        report,
        iterations,
        reason,
        history,
    })
}

/// Gradient descent on the rest shape. Each step starts at the no-inversion
/// limit and halves until the sufficient-decrease condition holds. A failed
/// forward solve at a trial point counts as a rejected step.
#[allow(clippy::too_many_arguments)]
pub fn optimize_rest_shape(
    objective: &Objective,
    material: &MaterialModel,
    rest_init: &[Vec3],
    config: &InverseConfig,
    outer: usize,
    scale: f64,
    start: Option<ObjectiveReport>,
) -> Result<PhaseOutcome, SensitivityError> {
    let mesh = objective.sim.mesh();
    let diameter = mesh.diameter();
    let mut rest = rest_init.to_vec();
    let mut report = match start {
        Some(r) if !r.grad_rest.is_empty() => r,
        _ => objective.evaluate(&rest, material, Gradients::REST)?,
    };
    let mut history = vec![record(
        Phase::RestShape,
        outer,
        0,
        &report,
        report.grad_rest_norm(),
        0.0,
        material,
        mesh,
        &rest,
    )];
    let mut reason = StopReason::IterationLimit;
    let mut iterations = 0;

    for it in 1..=config.restshape_max_iters {
        let gnorm = report.grad_rest_norm();
        if gnorm * diameter <= config.grad_tol_rest * scale {
            reason = StopReason::Converged;
            break;
        }
        let dir = &report.grad_rest;
        let mut beta = max_noninversion_step(&rest, dir, mesh, config.rest_step_init);
        let mut accepted = None;
        while beta >= 1e-12 {
            let trial: Vec<Vec3> = rest.iter().zip(dir).map(|(x, d)| x - beta * d).collect();
            match objective.evaluate(&trial, material, Gradients::REST) {
                Ok(r) if r.value <= report.value - config.wolfe_gamma * beta * gnorm * gnorm => {
                    accepted = Some((trial, r));
                    break;
                }
                Ok(_) | Err(SensitivityError::Forward { .. }) | Err(SensitivityError::Elasticity(_)) => beta *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, r)) = accepted else {
            reason = StopReason::LineSearchStalled;
            break;
        };
        rest = trial;
        report = r;
        iterations = it;
        history.push(record(
            Phase::RestShape,
            outer,
            it,
            &report,
            report.grad_rest_norm(),
            beta,
            material,
            mesh,
            &rest,
        ));
    }
    if iterations == config.restshape_max_iters && report.grad_rest_norm() * diameter <= config.grad_tol_rest * scale {
        reason = StopReason::Converged;
    }
    Ok(PhaseOutcome {
        rest,
        material: material.clone(),
        report,
        iterations,
        reason,
        history,
    })
}

/// Inputs of the alternating driver that are not optimization settings.
pub struct InversionProblem<'a> {
    pub sim: &'a Simulator<'a>,
    pub poses: &'a [PoseObservation],
    /// Full observed vertex set for the neutral pose.
    pub observed_neutral: &'a [Vec3],
    pub neutral_gravity: Vec3,
    /// Clusters (and Poisson ratio) of the unknown material; the moduli are
    /// ignored.
    pub material_template: &'a MaterialModel,
    pub density: f64,
    pub solver: SolverConfig,
}

/// Regularizer weight from the configuration or the automatic rule.
pub fn choose_alpha(
    config: &InverseConfig,
    mesh: &TetMesh,
    reference: &[Vec3],
    reference_material: &MaterialModel,
    observed_neutral: &[Vec3],
    initial_data_term: f64,
    threshold: f64,
) -> Result<f64, ElasticityError> {
    if let Some(a) = config.alpha {
        return Ok(a);
    }
    let reg = Regularizer::new(reference.to_vec(), reference_material.clone(), 1.0);
    let w_scale = reg.value(mesh, observed_neutral, threshold)?;
    Ok(if w_scale > 0.0 {
        config.alpha_factor * initial_data_term / w_scale
    } else {
        0.0
    })
}

/// Alternates material and rest-shape phases from the reversed-gravity
/// guess, after a material warm start on the first pose. Returns the best
/// iterate seen.
pub fn block_coordinate_descent(problem: &InversionProblem, config: &InverseConfig) -> Result<InversionResult, InverseError> {
    config.validate()?;
    let mesh = problem.sim.mesh();
    let thr = problem.solver.inversion_threshold;
    let material0 = problem.material_template.uniform_like(config.young_init)?;
    let x0 = initial_rest_guess(
        problem.sim,
        problem.observed_neutral,
        &material0,
        &problem.neutral_gravity,
        problem.density,
        &problem.solver,
    )
    .map_err(InverseError::InitialGuess)?;

    let reference_material = problem.material_template.uniform_like(config.young_reference)?;
    let unregularized = Objective::new(problem.sim, problem.poses, problem.density, problem.solver, None)?;
    let start = unregularized.evaluate(&x0, &material0, Gradients::NONE)?;
    let alpha = choose_alpha(
        config,
        mesh,
        &x0,
        &reference_material,
        problem.observed_neutral,
        start.data_term,
        thr,
    )?;
    let regularizer = Regularizer::new(x0.clone(), reference_material, alpha);
    let objective = Objective::new(problem.sim, problem.poses, problem.density, problem.solver, Some(&regularizer))?;
    let scale = start.data_term.max(f64::MIN_POSITIVE);

    let mut result = InversionResult {
        rest_shape: x0.clone(),
        cluster_young: material0.cluster_young().to_vec(),
        history: Vec::new(),
        converged: false,
        reason: String::new(),
        alpha,
        objective: f64::INFINITY,
        initial_rest: x0.clone(),
    };
    let abort = |source: SensitivityError, mut partial: InversionResult| {
        partial.reason = format!("aborted: {source}");
        InverseError::Aborted {
            source,
            partial: Box::new(partial),
        }
    };

    let warm = match optimize_materials(
        &objective.with_poses(&problem.poses[..1]),
        &x0,
        &material0,
        config,
        Phase::Warmstart,
        0,
        scale,
        None,
    ) {
        Ok(w) => w,
        Err(e) => return Err(abort(e, result)),
    };
    result.history.extend(warm.history.iter().cloned());
    let mut rest = x0;
    let mut material = warm.material;
    let mut best_value = f64::INFINITY;
    let mut previous = None::<f64>;
    let mut converged = false;
    let mut reason = "outer iteration limit".to_string();

    for outer in 1..=config.bcd_max_outer {
        let mat = match optimize_materials(&objective, &rest, &material, config, Phase::Material, outer, scale, None) {
            Ok(m) => m,
            Err(e) => return Err(abort(e, result)),
        };
        result.history.extend(mat.history.iter().cloned());
        material = mat.material.clone();
        if mat.report.value < best_value {
            best_value = mat.report.value;
            result.rest_shape = rest.clone();
            result.cluster_young = material.cluster_young().to_vec();
        }
        let start_value = previous.unwrap_or(mat.history[0].objective);

        let shape = match optimize_rest_shape(&objective, &material, &rest, config, outer, scale, None) {
            Ok(s) => s,
            Err(e) => {
                result.objective = best_value;
                return Err(abort(e, result));
            }
        };
        result.history.extend(shape.history.iter().cloned());
        rest = shape.rest.clone();
        if shape.report.value < best_value {
            best_value = shape.report.value;
            result.rest_shape = rest.clone();
            result.cluster_young = material.cluster_young().to_vec();
        }
        let end_value = shape.report.value;
        previous = Some(end_value);

        if mat.stalled() && shape.stalled() {
            converged = true;
            reason = "stalled".to_string();
            break;
        }
        if start_value > 0.0 && (start_value - end_value) / start_value < config.bcd_rel_tol {
            converged = true;
            reason = "relative decrease below tolerance".to_string();
            break;
        }
        if end_value <= 0.0 {
            converged = true;
            reason = "objective reached zero".to_string();
            break;
        }
    }
    result.objective = best_value;
    result.converged = converged;
    result.reason = reason;
    Ok(result)
}
