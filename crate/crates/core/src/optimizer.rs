//! Projected gradient ascent on the per-element design field.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{FemError, FemModel, FemState, NewtonOptions};
use crate::interp::MaterialTree;
use crate::linalg::norm2;
use crate::materials::MaterialKind;
use crate::sensitivity::{design_gradient, ObjectiveSpec, SignConvention};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("gradient vanishes everywhere")]
    ZeroGradient,
    #[error("solver failure at iteration {iteration}: {source}")]
    SolverFailure {
        iteration: usize,
        #[source]
        source: FemError,
    },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

/// Linear hat-kernel filter `rho_e = sum_f w_ef rho_f`, `w_ef ~ max(0, 1 - d/r) area_f`.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    radius: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl DensityFilter {
    pub fn new(centroids: &[[f64; 2]], areas: &[f64], radius: f64) -> Self {
        let n = centroids.len();
        if radius <= 0.0 {
            return Self {
                radius: 0.0,
                rows: (0..n).map(|k| vec![(k, 1.0)]).collect(),
            };
        }
        let rows = (0..n)
            .into_par_iter()
            .map(|e| {
                let ce = centroids[e];
                let mut row: Vec<(usize, f64)> = (0..n)
                    .filter_map(|f| {
                        let d = (centroids[f][0] - ce[0]).hypot(centroids[f][1] - ce[1]);
                        let w = (1.0 - d / radius).max(0.0) * areas[f];
                        (w > 0.0).then_some((f, w))
                    })
                    .collect();
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                for (_, w) in &mut row {
                    *w /= total;
                }
                row
            })
            .collect();
        Self { radius, rows }
    }

    /// Filter over the design elements of `model`.
    pub fn for_model(model: &FemModel, radius: f64) -> Self {
        let mesh = model.mesh();
        let design = model.design_elements();
        let centroids: Vec<[f64; 2]> = design.iter().map(|&e| mesh.centroid(e)).collect();
        let areas: Vec<f64> = design.iter().map(|&e| mesh.area(e)).collect();
        Self::new(&centroids, &areas, radius)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Applies the filter to a flat field with `stride` coordinates per element.
    pub fn apply(&self, x: &[f64], stride: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        out.par_chunks_mut(stride.max(1))
            .zip(self.rows.par_iter())
            .for_each(|(dst, row)| {
                for &(f, w) in row {
                    for c in 0..stride {
                        dst[c] += w * x[f * stride + c];
                    }
                }
            });
        out
    }

    /// Exact transpose of [`DensityFilter::apply`].
    pub fn transpose(&self, y: &[f64], stride: usize) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        for (e, row) in self.rows.iter().enumerate() {
            for &(f, w) in row {
                for c in 0..stride {
                    out[f * stride + c] += w * y[e * stride + c];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    /// Every subdomain at its centroid.
    #[default]
    Centroid,
    /// Seeded random interior points.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub stagnation_tol: f64,
    pub move_limit: f64,
    pub step_rule: StepRule,
    /// Meters; `None` means twice the mean element edge.
    pub filter_radius: Option<f64>,
    pub gamma: f64,
    pub convention: SignConvention,
    pub init: InitMode,
    pub newton: NewtonOptions,
    /// Calls the observer with a checkpoint flag every this many iterations.
    pub checkpoint_every: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            stagnation_tol: 1e-4,
            move_limit: 0.05,
            step_rule: StepRule::Feasible,
            filter_radius: None,
            gamma: 1.0,
            convention: SignConvention::Corrected,
            init: InitMode::Centroid,
            newton: NewtonOptions::default(),
            checkpoint_every: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.into()));
        if !(self.move_limit > 0.0) {
            return bad("move_limit must be positive");
        }
        if !(self.stagnation_tol > 0.0) {
            return bad("stagnation_tol must be positive");
        }
        if !(self.gamma.abs() <= 1.0) {
            return bad("gamma must lie in [-1, 1]");
        }
        if matches!(self.filter_radius, Some(r) if !(r >= 0.0)) {
            return bad("filter_radius must be non-negative");
        }
        if !(self.newton.tol > 0.0) {
            return bad("newton.tol must be positive");
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveSpec {
        ObjectiveSpec {
            gamma: self.gamma,
            convention: self.convention,
        }
    }

    pub fn resolved_radius(&self, model: &FemModel) -> f64 {
        self.filter_radius
            .unwrap_or_else(|| 2.0 * model.mesh().mean_edge_length())
    }
}

/// Raw and filtered design coordinates, one design point per design element.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignField {
    pub design_len: usize,
    pub raw: Vec<f64>,
    pub filtered: Vec<f64>,
    pub filter_radius: f64,
}

impl DesignField {
    pub fn new(raw: Vec<f64>, design_len: usize, filter: &DensityFilter) -> Self {
        let filtered = filter.apply(&raw, design_len);
        Self {
            design_len,
            raw,
            filtered,
            filter_radius: filter.radius(),
        }
    }

    pub fn initial(tree: &MaterialTree, elements: usize, init: InitMode, filter: &DensityFilter) -> Self {
        let n = tree.design_len();
        let mut raw = Vec::with_capacity(n * elements);
        match init {
            InitMode::Centroid => {
                let c = tree.tree.centroid_design();
                for _ in 0..elements {
                    raw.extend_from_slice(&c.0);
                }
            }
            InitMode::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..elements {
                    raw.extend(tree.tree.sample_design(&mut rng).0);
                }
            }
        }
        Self::new(raw, n, filter)
    }

    pub fn elements(&self) -> usize {
        self.raw.len() / self.design_len.max(1)
    }

    pub fn filtered_element(&self, k: usize) -> &[f64] {
        &self.filtered[k * self.design_len..(k + 1) * self.design_len]
    }

    pub fn is_feasible(&self, tree: &MaterialTree, tol: f64) -> bool {
        let n = self.design_len;
        self.raw
            .chunks(n)
            .chain(self.filtered.chunks(n))
            .all(|p| tree.tree.is_feasible(p, tol))
    }
}

/// How the step length along the gradient is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `t = move_limit / |g|_inf`.
    Gradient,
    /// The larger of the gradient rule and the smallest `t` for which some
    /// projected node moves by `move_limit`, so coordinates pinned on the
    /// boundary do not throttle the rest of the field.
    #[default]
    Feasible,
}

fn project_field(tree: &MaterialTree, raw: &[f64], gradient: &[f64], t: f64, n: usize) -> Vec<f64> {
    let mut out: Vec<f64> = raw.iter().zip(gradient).map(|(r, g)| r + t * g).collect();
    out.par_chunks_mut(n).for_each(|p| tree.tree.project_in_place(p));
    out
}

/// Largest Euclidean displacement of any subdomain point.
fn max_node_displacement(tree: &MaterialTree, a: &[f64], b: &[f64], n: usize) -> f64 {
    let slots = tree.tree.internal_count();
    a.par_chunks(n)
        .zip(b.par_chunks(n))
        .map(|(pa, pb)| {
            (0..slots)
                .map(|s| {
                    let off = tree.tree.slot_offset(s);
                    let dim = tree.tree.slot_dim(s);
                    norm2(&(off..off + dim).map(|i| pb[i] - pa[i]).collect::<Vec<_>>())
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Projected ascent step `raw <- P(raw + t g)` with `t` chosen by `rule`.
pub fn step(
    tree: &MaterialTree,
    filter: &DensityFilter,
    field: &DesignField,
    gradient: &[f64],
    move_limit: f64,
    rule: StepRule,
) -> Result<DesignField, OptimizerError> {
    let g_inf = gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if g_inf == 0.0 || !g_inf.is_finite() {
        return Err(OptimizerError::ZeroGradient);
    }
    let n = field.design_len;
    let t0 = move_limit / g_inf;
    let trial = project_field(tree, &field.raw, gradient, t0, n);
    if rule == StepRule::Gradient {
        return Ok(DesignField::new(trial, n, filter));
    }
    let displacement = |t: f64| {
        let p = project_field(tree, &field.raw, gradient, t, n);
        let d = max_node_displacement(tree, &field.raw, &p, n);
        (p, d)
    };
    let d0 = max_node_displacement(tree, &field.raw, &trial, n);
    if d0 >= move_limit {
        return Ok(DesignField::new(trial, n, filter));
    }
    // the displacement grows monotonically with t: bracket, then bisect
    let (mut lo, mut hi) = (t0, t0);
    let mut best = (trial, d0);
    loop {
        hi *= 2.0;
        let (p, d) = displacement(hi);
        if d >= move_limit {
            break;
        }
        lo = hi;
        best = (p, d);
        if hi > t0 * 1e12 {
            break;
        }
    }
    if best.1 < move_limit && hi <= t0 * 1e12 {
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            let (p, d) = displacement(mid);
            if d >= move_limit {
                hi = mid;
            } else {
                lo = mid;
                best = (p, d);
            }
        }
        let (p, d) = displacement(hi);
        if d <= move_limit * (1.0 + 1e-6) {
            best = (p, d);
        }
    }
    if best.1 == 0.0 {
        return Err(OptimizerError::ZeroGradient);
    }
    Ok(DesignField::new(best.0, n, filter))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub phi_plus: f64,
    pub phi_minus: f64,
    /// `|rho_k - rho_{k-1}| / |rho_{k-1}|` over all raw coordinates.
    pub step_norm: f64,
    pub newton_plus: usize,
    pub newton_minus: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIter,
    Stagnation,
    SolverFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::MaxIter => "max_iter",
            Termination::Stagnation => "stagnation",
            Termination::SolverFailure => "solver_failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "max_iter" => Some(Termination::MaxIter),
            "stagnation" => Some(Termination::Stagnation),
            "solver_failure" => Some(Termination::SolverFailure),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub field: DesignField,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    /// Diagnostics for a solver failure.
    pub failure: Option<String>,
    /// Fluxes and states of the final design (absent after a solver failure).
    pub phi_plus: f64,
    pub phi_minus: f64,
    pub objective: f64,
    pub final_states: Option<(FemState, FemState)>,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.trace.iter().map(|r| r.objective).reduce(f64::max)
    }
}

/// Relative Frobenius change between consecutive raw fields.
pub fn relative_change(prev: &[f64], next: &[f64]) -> f64 {
    let diff: f64 = prev
        .iter()
        .zip(next)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let base = norm2(prev);
    if diff == 0.0 {
        0.0
    } else if base == 0.0 {
        f64::INFINITY
    } else {
        diff / base
    }
}

/// What the observer sees after each accepted iteration.
pub struct Progress<'a> {
    pub record: &'a IterationRecord,
    pub field: &'a DesignField,
    pub checkpoint: bool,
}

pub fn run(model: &FemModel, tree: &MaterialTree, config: &OptimizerConfig) -> Result<RunResult, OptimizerError> {
    run_with(model, tree, config, |_| {})
}

/// Optimization loop: filter, both solves, adjoints, filter transpose, step.
pub fn run_with(
    model: &FemModel,
    tree: &MaterialTree,
    config: &OptimizerConfig,
    mut observer: impl FnMut(Progress<'_>),
) -> Result<RunResult, OptimizerError> {
    config.validate()?;
    let n = tree.design_len();
    let filter = DensityFilter::for_model(model, config.resolved_radius(model));
    let mut field = DesignField::initial(tree, model.design_elements().len(), config.init, &filter);
    let spec = config.objective();
    let mut trace = Vec::new();
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut termination = Termination::MaxIter;
    let mut failure = None;

    for iteration in 0..config.max_iterations {
        let both = match model.solve_both_cases(
            tree,
            &field.filtered,
            config.newton,
            warm.as_ref().map(|(p, m)| (p.as_slice(), m.as_slice())),
        ) {
            Ok(b) => b,
            Err(e) => {
                termination = Termination::SolverFailure;
                failure = Some(OptimizerError::SolverFailure { iteration, source: e }.to_string());
                break;
            }
        };
        let objective = spec.value(both.phi_plus, both.phi_minus);
        let grad = match design_gradient(model, tree, &field.filtered, &both.plus, &both.minus, spec) {
            Ok(g) => g,
            Err(e) => {
                termination = Termination::SolverFailure;
                failure = Some(OptimizerError::SolverFailure { iteration, source: e }.to_string());
                break;
            }
        };
        let raw_grad = filter.transpose(&grad.values, n);
        let mut record = IterationRecord {
            iteration,
            objective,
            phi_plus: both.phi_plus,
            phi_minus: both.phi_minus,
            step_norm: 0.0,
            newton_plus: both.plus.newton_iterations,
            newton_minus: both.minus.newton_iterations,
        };
        let next = match step(tree, &filter, &field, &raw_grad, config.move_limit, config.step_rule) {
            Ok(f) => f,
            Err(OptimizerError::ZeroGradient) => {
                trace.push(record);
                termination = Termination::Stagnation;
                break;
            }
            Err(e) => return Err(e),
        };
        debug_assert!(next.is_feasible(tree, 1e-9));
        record.step_norm = relative_change(&field.raw, &next.raw);
        field = next;
        warm = Some((both.plus.u, both.minus.u));
        trace.push(record);
        let checkpoint = config
            .checkpoint_every
            .is_some_and(|k| k > 0 && (iteration + 1) % k == 0);
        observer(Progress {
            record: &record,
            field: &field,
            checkpoint,
        });
        if record.step_norm < config.stagnation_tol {
            termination = Termination::Stagnation;
            break;
        }
    }

    let mut result = RunResult {
        field,
        trace,
        termination,
        failure,
        phi_plus: f64::NAN,
        phi_minus: f64::NAN,
        objective: f64::NAN,
        final_states: None,
    };
    if result.termination != Termination::SolverFailure {
        match model.solve_both_cases(
            tree,
            &result.field.filtered,
            config.newton,
            warm.as_ref().map(|(p, m)| (p.as_slice(), m.as_slice())),
        ) {
            Ok(b) => {
                result.phi_plus = b.phi_plus;
                result.phi_minus = b.phi_minus;
                result.objective = spec.value(b.phi_plus, b.phi_minus);
                result.final_states = Some((b.plus, b.minus));
            }
            Err(e) => {
                result.termination = Termination::SolverFailure;
                result.failure = Some(
                    OptimizerError::SolverFailure {
                        iteration: result.trace.len(),
                        source: e,
                    }
                    .to_string(),
                );
            }
        }
    } else if let Some(last) = result.trace.last() {
        result.phi_plus = last.phi_plus;
        result.phi_minus = last.phi_minus;
        result.objective = last.objective;
    }
    Ok(result)
}

/// Area-weighted share of the design region carried by leaves of `kind`.
pub fn kind_area_fraction(
    model: &FemModel,
    tree: &MaterialTree,
    field: &DesignField,
    kind: MaterialKind,
) -> Result<f64, crate::interp::TreeError> {
    let mesh = model.mesh();
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (k, &e) in model.design_elements().iter().enumerate() {
        let a = mesh.area(e);
        weighted += a * tree.kind_fraction(field.filtered_element(k), kind)?;
        total += a;
    }
    Ok(if total > 0.0 { weighted / total } else { 0.0 })
}

pub const TRACE_HEADER: &str = "iteration,objective,phi_plus,phi_minus,step_norm,newton_plus,newton_minus";

pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{},{}",
            r.iteration, r.objective, r.phi_plus, r.phi_minus, r.step_norm, r.newton_plus, r.newton_minus
        );
    }
    s
}
