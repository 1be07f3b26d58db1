//! Batch protocol: gamma sweeps over several interpolation domains, the
//! hybridization indicator and per-run artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::export::{self, ExportError};
use crate::fem::{FemModel, SideCondition};
use crate::interp::{build_tree, MaterialTree, TreeError, TreeSpec};
use crate::materials::{MaterialCatalogue, MaterialError, MaterialKind, MaterialsConfig};
use crate::mesh::{generate_sector_mesh, MeshError, SectorGeometry, SectorMesh};
use crate::optimizer::{self, kind_area_fraction, trace_csv, DesignField, OptimizerConfig, OptimizerError, RunResult, Termination};

pub const THREADS_ENV: &str = "MMTOPO_THREADS";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("sd0 normalization must be positive, got {0}")]
    InvalidNormalization(f64),
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown domain '{0}'")]
    UnknownDomain(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Normalized distance of `(phi+, phi-)` to the nearer diagonal `|phi+| = |phi-|`.
pub fn sd0(phi_plus: f64, phi_minus: f64, phi_max: f64) -> Result<f64, StudyError> {
    if !(phi_max > 0.0) {
        return Err(StudyError::InvalidNormalization(phi_max));
    }
    Ok((phi_plus - phi_minus).abs().min((phi_plus + phi_minus).abs()) / phi_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub target_elements: usize,
    pub side: SideCondition,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            target_elements: 2000,
            side: SideCondition::AntiPeriodic,
        }
    }
}

/// A built-in domain by name, or a custom tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Named(String),
    Custom { name: String, tree: TreeSpec },
}

impl DomainSpec {
    pub fn name(&self) -> &str {
        match self {
            DomainSpec::Named(n) => n,
            DomainSpec::Custom { name, .. } => name,
        }
    }

    pub fn tree_spec(&self, catalogue: &MaterialCatalogue) -> Result<TreeSpec, StudyError> {
        match self {
            DomainSpec::Named(n) => named_tree(n, catalogue),
            DomainSpec::Custom { tree, .. } => Ok(tree.clone()),
        }
    }
}

pub fn named_tree(name: &str, catalogue: &MaterialCatalogue) -> Result<TreeSpec, StudyError> {
    match name {
        "hexadecagon" => Ok(TreeSpec::hexadecagon(catalogue)),
        "diamond" => Ok(TreeSpec::diamond(catalogue)),
        "recursive" => Ok(TreeSpec::recursive_rotor()),
        other => Err(StudyError::UnknownDomain(other.to_string())),
    }
}

/// The three domains of the comparison, in that order.
pub fn flat_domain_trees(catalogue: &MaterialCatalogue) -> Result<Vec<(String, MaterialTree)>, StudyError> {
    ["hexadecagon", "diamond", "recursive"]
        .into_iter()
        .map(|n| Ok((n.to_string(), build_tree(&named_tree(n, catalogue)?, catalogue)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_step: f64,
    /// sd0 normalization; `None` uses the largest `|phi|` seen in the sweep.
    pub phi_max: Option<f64>,
    /// Worker cap; the environment variable takes precedence.
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gamma_min: -1.0,
            gamma_max: 1.0,
            gamma_step: 0.1,
            phi_max: None,
            workers: None,
        }
    }
}

impl SweepConfig {
    /// `gamma_min, gamma_min + step, ...` up to `gamma_max`, rounded to 1e-9.
    pub fn gammas(&self) -> Vec<f64> {
        if self.gamma_min > self.gamma_max {
            return Vec::new();
        }
        let count = ((self.gamma_max - self.gamma_min) / self.gamma_step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| ((self.gamma_min + k as f64 * self.gamma_step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub write_vtk: bool,
    pub write_traces: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            write_vtk: true,
            write_traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub geometry: SectorGeometry,
    pub mesh: MeshConfig,
    pub materials: MaterialsConfig,
    pub domains: Vec<DomainSpec>,
    pub optimizer: OptimizerConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            geometry: SectorGeometry::default(),
            mesh: MeshConfig::default(),
            materials: MaterialsConfig::default(),
            domains: ["recursive", "hexadecagon", "diamond"]
                .map(|n| DomainSpec::Named(n.into()))
                .to_vec(),
            optimizer: OptimizerConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self, StudyError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        self.geometry.validate()?;
        let s = &self.sweep;
        if !(s.gamma_step > 0.0) {
            return Err(StudyError::InvalidConfig("sweep.gamma_step must be positive".into()));
        }
        if !(s.gamma_min >= -1.0 && s.gamma_max <= 1.0) {
            return Err(StudyError::InvalidConfig("sweep gamma range must lie in [-1, 1]".into()));
        }
        if matches!(s.phi_max, Some(p) if !(p > 0.0)) {
            return Err(StudyError::InvalidNormalization(s.phi_max.unwrap_or(0.0)));
        }
        if self.mesh.target_elements == 0 {
            return Err(StudyError::InvalidConfig("mesh.target_elements must be positive".into()));
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.domains {
            if !names.insert(d.name()) {
                return Err(StudyError::InvalidConfig(format!("duplicate domain '{}'", d.name())));
            }
        }
        let mut opt = self.optimizer.clone();
        opt.gamma = 0.0;
        opt.validate()?;
        Ok(())
    }

    pub fn catalogue(&self) -> Result<MaterialCatalogue, StudyError> {
        Ok(MaterialCatalogue::from_config(&self.materials)?)
    }

    pub fn build_mesh(&self) -> Result<SectorMesh, StudyError> {
        Ok(generate_sector_mesh(self.geometry, self.mesh.target_elements)?)
    }

    pub fn build_model(&self) -> Result<FemModel, StudyError> {
        Ok(FemModel::new(self.build_mesh()?, self.mesh.side))
    }

    pub fn domain(&self, name: &str) -> Result<&DomainSpec, StudyError> {
        self.domains
            .iter()
            .find(|d| d.name() == name)
            .ok_or_else(|| StudyError::UnknownDomain(name.to_string()))
    }

    pub fn build_tree(&self, name: &str) -> Result<MaterialTree, StudyError> {
        let cat = self.catalogue()?;
        let spec = match self.domain(name) {
            Ok(d) => d.tree_spec(&cat)?,
            Err(_) => named_tree(name, &cat)?,
        };
        Ok(build_tree(&spec, &cat)?)
    }
}

/// One optimizer run of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRecord {
    pub gamma: f64,
    pub domain: String,
    pub phi_plus: f64,
    pub phi_minus: f64,
    pub sd0: f64,
    pub iterations: usize,
    pub termination: Termination,
    #[serde(default)]
    pub design_path: Option<PathBuf>,
    #[serde(default)]
    pub best: bool,
    #[serde(default)]
    pub failure: Option<String>,
}

/// Persisted outcome of one run; its presence marks the run as done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub gamma: f64,
    pub domain: String,
    #[serde(with = "nan_as_null")]
    pub phi_plus: f64,
    #[serde(with = "nan_as_null")]
    pub phi_minus: f64,
    #[serde(with = "nan_as_null")]
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub failure: Option<String>,
    #[serde(with = "nan_as_null")]
    pub magnet_fraction: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Saved design, enough to re-evaluate or export a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedDesign {
    pub domain: String,
    pub gamma: f64,
    pub design_len: usize,
    pub filter_radius: f64,
    pub raw: Vec<f64>,
    pub filtered: Vec<f64>,
}

impl SavedDesign {
    pub fn field(&self) -> DesignField {
        DesignField {
            design_len: self.design_len,
            raw: self.raw.clone(),
            filtered: self.filtered.clone(),
            filter_radius: self.filter_radius,
        }
    }
}

pub fn run_stem(domain: &str, gamma: f64) -> String {
    format!("{domain}_g{gamma:+.3}")
}

/// Everything produced by one optimizer run.
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub result: RunResult,
}

/// Runs the optimizer for one `(gamma, domain)` pair. Checkpoints, when
/// enabled, are written as design-only VTK files into `checkpoint_dir`.
pub fn optimize_one(
    config: &StudyConfig,
    model: &FemModel,
    tree: &MaterialTree,
    domain: &str,
    gamma: f64,
    checkpoint_dir: Option<&Path>,
) -> Result<RunArtifacts, StudyError> {
    let mut opt = config.optimizer.clone();
    opt.gamma = gamma;
    let stem = run_stem(domain, gamma);
    let mut checkpoint_error = None;
    let result = optimizer::run_with(model, tree, &opt, |p| {
        let Some(dir) = checkpoint_dir.filter(|_| p.checkpoint) else {
            return;
        };
        let path = dir.join(format!("{stem}_iter{:04}.vtk", p.record.iteration + 1));
        if let Err(e) = export::export_vtk(&path, model.mesh(), tree, &p.field.filtered, None) {
            checkpoint_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = checkpoint_error {
        return Err(e.into());
    }
    let magnet_fraction = kind_area_fraction(model, tree, &result.field, MaterialKind::Magnet)?;
    Ok(RunArtifacts {
        summary: RunSummary {
            gamma,
            domain: domain.to_string(),
            phi_plus: result.phi_plus,
            phi_minus: result.phi_minus,
            objective: result.objective,
            iterations: result.iterations(),
            termination: result.termination.clone(),
            failure: result.failure.clone(),
            magnet_fraction,
        },
        result,
    })
}

/// Writes the summary, trace, design and VTK of a run under `dir`.
pub fn write_run(
    dir: &Path,
    config: &StudyConfig,
    model: &FemModel,
    tree: &MaterialTree,
    run: &RunArtifacts,
) -> Result<PathBuf, StudyError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stem = run_stem(&run.summary.domain, run.summary.gamma);
    let design = SavedDesign {
        domain: run.summary.domain.clone(),
        gamma: run.summary.gamma,
        design_len: run.result.field.design_len,
        filter_radius: run.result.field.filter_radius,
        raw: run.result.field.raw.clone(),
        filtered: run.result.field.filtered.clone(),
    };
    let design_path = dir.join(format!("{stem}_design.json"));
    write_file(&design_path, &serde_json::to_string(&design)?)?;
    if config.output.write_traces {
        write_file(&dir.join(format!("{stem}_trace.csv")), &trace_csv(&run.result.trace))?;
    }
    if config.output.write_vtk {
        let state = run.result.final_states.as_ref().map(|(p, _)| p);
        export::export_vtk(
            &dir.join(format!("{stem}.vtk")),
            model.mesh(),
            tree,
            &run.result.field.filtered,
            state,
        )?;
    }
    // the summary goes last: it marks the run as complete
    write_file(
        &dir.join(format!("{stem}.json")),
        &serde_json::to_string_pretty(&run.summary)?,
    )?;
    Ok(design_path)
}

fn write_file(path: &Path, content: &str) -> Result<(), StudyError> {
    fs::write(path, content).map_err(io_err(path))
}

/// Worker count: `MMTOPO_THREADS`, then the config, then all cores.
pub fn worker_count(config: &SweepConfig) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(config.workers.filter(|&n| n > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// One optimizer run per `(gamma, domain)`; completed runs found in the
/// output directory are reused. Returns records sorted by gamma.
pub fn gamma_sweep(config: &StudyConfig) -> Result<Vec<ParetoRecord>, StudyError> {
    config.validate()?;
    let gammas = config.sweep.gammas();
    if gammas.is_empty() {
        return Ok(Vec::new());
    }
    let model = config.build_model()?;
    let mut trees = BTreeMap::new();
    for d in &config.domains {
        trees.insert(d.name().to_string(), config.build_tree(d.name())?);
    }
    let runs_dir = config.output.directory.join("runs");
    fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;

    let jobs: Vec<(f64, String)> = gammas
        .iter()
        .flat_map(|&g| config.domains.iter().map(move |d| (g, d.name().to_string())))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(&config.sweep))
        .build()
        .map_err(|e| StudyError::InvalidConfig(e.to_string()))?;
    let summaries: Vec<RunSummary> = pool.install(|| {
        jobs.par_iter()
            .with_max_len(1)
            .map(|(gamma, domain)| {
                let stem = run_stem(domain, *gamma);
                let summary_path = runs_dir.join(format!("{stem}.json"));
                if let Ok(text) = fs::read_to_string(&summary_path) {
                    if let Ok(s) = serde_json::from_str::<RunSummary>(&text) {
                        return Ok(s);
                    }
                }
                let tree = &trees[domain];
                let run = optimize_one(config, &model, tree, domain, *gamma, Some(&runs_dir))?;
                write_run(&runs_dir, config, &model, tree, &run)?;
                Ok(run.summary)
            })
            .collect::<Result<_, StudyError>>()
    })?;

    let mut records = assemble_records(&summaries, config.sweep.phi_max, &runs_dir)?;
    let order: BTreeMap<&str, usize> = config
        .domains
        .iter()
        .enumerate()
        .map(|(i, d)| (d.name(), i))
        .collect();
    records.sort_by(|a, b| {
        a.gamma
            .total_cmp(&b.gamma)
            .then(order[a.domain.as_str()].cmp(&order[b.domain.as_str()]))
    });
    export::export_csv(&config.output.directory.join("pareto.csv"), &records)?;
    write_file(
        &config.output.directory.join("summary.json"),
        &serde_json::to_string_pretty(&StudySummary::new(&records))?,
    )?;
    Ok(records)
}

/// Turns run summaries into records: computes sd0 and flags the best run per domain.
pub fn assemble_records(
    summaries: &[RunSummary],
    phi_max: Option<f64>,
    runs_dir: &Path,
) -> Result<Vec<ParetoRecord>, StudyError> {
    let observed = summaries
        .iter()
        .flat_map(|s| [s.phi_plus.abs(), s.phi_minus.abs()])
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let norm = phi_max.unwrap_or(observed);
    let mut records: Vec<ParetoRecord> = summaries
        .iter()
        .map(|s| {
            let value = if s.phi_plus.is_finite() && s.phi_minus.is_finite() && norm > 0.0 {
                sd0(s.phi_plus, s.phi_minus, norm)?
            } else {
                f64::NAN
            };
            Ok(ParetoRecord {
                gamma: s.gamma,
                domain: s.domain.clone(),
                phi_plus: s.phi_plus,
                phi_minus: s.phi_minus,
                sd0: value,
                iterations: s.iterations,
                termination: s.termination.clone(),
                design_path: Some(runs_dir.join(format!("{}_design.json", run_stem(&s.domain, s.gamma)))),
                best: false,
                failure: s.failure.clone(),
            })
        })
        .collect::<Result<_, StudyError>>()?;
    let mut best: BTreeMap<String, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if !r.sd0.is_finite() {
            continue;
        }
        let e = best.entry(r.domain.clone()).or_insert(i);
        if r.sd0 > records[*e].sd0 {
            *e = i;
        }
    }
    for &i in best.values() {
        records[i].best = true;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub best: Vec<ParetoRecord>,
    pub runs: usize,
    pub failures: usize,
}

impl StudySummary {
    pub fn new(records: &[ParetoRecord]) -> Self {
        Self {
            best: records.iter().filter(|r| r.best).cloned().collect(),
            runs: records.len(),
            failures: records
                .iter()
                .filter(|r| r.termination == Termination::SolverFailure)
                .count(),
        }
    }

    pub fn best_sd0(&self, domain: &str) -> Option<f64> {
        self.best.iter().find(|r| r.domain == domain).map(|r| r.sd0)
    }
}

/// Best sd0 per domain from a record list.
pub fn best_by_domain(records: &[ParetoRecord]) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.sd0.is_finite()) {
        let e = out.entry(r.domain.clone()).or_insert(f64::NEG_INFINITY);
        *e = e.max(r.sd0);
    }
    out
}
