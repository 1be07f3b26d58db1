use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmtopo::export::export_vtk;
use mmtopo::optimizer::Termination;
use mmtopo::sensitivity::check_gradients;
use mmtopo::study::{self, SavedDesign, StudyConfig, StudyError};

const SCHEMA_HELP: &str = "\
Config file: JSON object, every section optional (defaults in brackets).
  geometry   { r_shaft [0.03], r_rotor [0.08], r_outer [0.085], pole_angle [pi/6] }  meters, radians
  mesh       { target_elements [2000], side [\"anti_periodic\" | \"periodic\"] }
  materials  { remanence [1.0], current_density [1e7], steel_js [1.9], steel_a [0.999], linear_steel [false] }
  domains    [ \"recursive\", \"hexadecagon\", \"diamond\" ]  or { \"name\": .., \"tree\": { \"nodes\": [..] } }
  optimizer  { max_iterations [500], stagnation_tol [1e-4], move_limit [0.05],
               step_rule [\"feasible\" | \"gradient\"], filter_radius [null = 2x mean edge],
               convention [\"corrected\" | \"as_printed\"], init [{\"mode\": \"centroid\"}],
               newton { tol [1e-8], max_iter [50] }, checkpoint_every [null] }
  sweep      { gamma_min [-1], gamma_max [1], gamma_step [0.1], phi_max [null], workers [null] }
  output     { directory [\"out\"], write_vtk [true], write_traces [true] }
Environment: MMTOPO_THREADS caps sweep workers.";

/// Multi-material topology optimization of a rotor pole.
#[derive(Debug, Parser)]
#[command(name = "mmtopo", version, after_help = SCHEMA_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one optimization and write its trace, design and VTK.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        gamma: f64,
        #[arg(long)]
        domain: String,
        /// Output directory (defaults to the config's).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Gamma sweep over all configured domains.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare adjoint gradients with central finite differences.
    CheckGradients {
        #[arg(long, default_value_t = 50)]
        elements: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use linear steel instead of the saturating law.
        #[arg(long)]
        linear: bool,
        #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
        gamma: f64,
    },
    /// Re-solve a saved design and write it as VTK.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write the design only, without solving for the field.
        #[arg(long)]
        no_solve: bool,
        /// Supply sign of the exported field.
        #[arg(long, default_value = "plus", value_parser = ["plus", "minus"])]
        case: String,
    },
    /// Print mesh statistics; optionally write the mesh as text.
    MeshInfo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Parse(_)
            | StudyError::InvalidConfig(_)
            | StudyError::InvalidNormalization(_)
            | StudyError::UnknownDomain(_)
            | StudyError::Mesh(mmtopo::mesh::MeshError::InvalidGeometry(_)) => Failure::Usage(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn load_config(path: &std::path::Path) -> Result<StudyConfig, Failure> {
    StudyConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn solver<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Solver(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("\n{SCHEMA_HELP}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\n{SCHEMA_HELP}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Optimize {
            config,
            gamma,
            domain,
            output,
        } => {
            let mut cfg = load_config(&config)?;
            if !(-1.0..=1.0).contains(&gamma) {
                return Err(Failure::Usage(format!("gamma must lie in [-1, 1], got {gamma}")));
            }
            if let Some(dir) = output {
                cfg.output.directory = dir;
            }
            let model = cfg.build_model()?;
            let tree = cfg.build_tree(&domain)?;
            let run = study::optimize_one(&cfg, &model, &tree, &domain, gamma, Some(&cfg.output.directory))?;
            study::write_run(&cfg.output.directory, &cfg, &model, &tree, &run)?;
            let s = &run.summary;
            println!(
                "domain={} gamma={} phi_plus={:e} phi_minus={:e} objective={:e} iterations={} termination={} magnet_fraction={:.4}",
                s.domain,
                s.gamma,
                s.phi_plus,
                s.phi_minus,
                s.objective,
                s.iterations,
                s.termination.as_str(),
                s.magnet_fraction
            );
            if s.termination == Termination::SolverFailure {
                return Err(Failure::Solver(s.failure.clone().unwrap_or_default()));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            let records = study::gamma_sweep(&cfg)?;
            for r in records.iter().filter(|r| r.best) {
                println!(
                    "best domain={} gamma={} sd0={:.4} phi_plus={:e} phi_minus={:e}",
                    r.domain, r.gamma, r.sd0, r.phi_plus, r.phi_minus
                );
            }
            let failures = records
                .iter()
                .filter(|r| r.termination == Termination::SolverFailure)
                .count();
            println!(
                "runs={} failures={} csv={}",
                records.len(),
                failures,
                cfg.output.directory.join("pareto.csv").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckGradients {
            elements,
            seed,
            linear,
            gamma,
        } => {
            if elements == 0 || !(-1.0..=1.0).contains(&gamma) {
                return Err(Failure::Usage("elements must be positive and gamma in [-1, 1]".into()));
            }
            let r = check_gradients(elements, seed, !linear, gamma).map_err(solver)?;
            println!(
                "elements={} components={} nonlinear={} max_relative_error={:e}",
                r.elements, r.components, r.nonlinear, r.max_relative_error
            );
            Ok(if r.max_relative_error <= 1e-3 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Export {
            config,
            design,
            output,
            no_solve,
            case,
        } => {
            let cfg = load_config(&config)?;
            let text = std::fs::read_to_string(&design)
                .map_err(|e| Failure::Usage(format!("{}: {e}", design.display())))?;
            let saved: SavedDesign =
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", design.display())))?;
            let model = cfg.build_model()?;
            let tree = cfg.build_tree(&saved.domain)?;
            let state = if no_solve {
                None
            } else {
                let both = model
                    .solve_both_cases(&tree, &saved.filtered, cfg.optimizer.newton, None)
                    .map_err(solver)?;
                println!("phi_plus={:e} phi_minus={:e}", both.phi_plus, both.phi_minus);
                Some(if case == "plus" { both.plus } else { both.minus })
            };
            export_vtk(&output, model.mesh(), &tree, &saved.filtered, state.as_ref()).map_err(solver)?;
            println!("wrote {}", output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::MeshInfo { config, write } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => StudyConfig::default(),
            };
            let model = cfg.build_model()?;
            let mesh = model.mesh();
            println!(
                "nodes={} elements={} design_elements={} airgap_elements={} dofs={} mean_edge={:e}",
                mesh.node_count(),
                mesh.element_count(),
                model.design_elements().len(),
                mesh.element_count() - model.design_elements().len(),
                model.n_dofs(),
                mesh.mean_edge_length()
            );
            if let Some(path) = write {
                mesh.write_text(&path).map_err(solver)?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
