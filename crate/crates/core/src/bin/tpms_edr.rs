//! Command-line front-end: fit splines to nodal TPMS fields, analyze their
//! effective threshold/density ranges, optimize coefficients to extend the
//! ranges, and export meshes and density sweeps.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;
use tpms_edr::etr::{analyze_field, density_at};
use tpms_edr::manifest::RunManifest;
use tpms_edr::mesh::{export_stl, marching_tetrahedra};
use tpms_edr::nodal::{NodalField, SolidType, TpmsKind};
use tpms_edr::optimizer::{optimize, OptimizerConfig};
use tpms_edr::persistence::build_filtration;
use tpms_edr::spline::{fit_complete, fit_partial, ExtendedField};
use tpms_edr::{Box3, Error, ScalarField};

#[derive(Parser)]
#[command(name = "tpms-edr", version, about = "Effective threshold/density range tools for TPMS porous structures")]
struct Cli {
    /// Cap the data-parallel thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with optimizer configuration; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed for similarity-error sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a trivariate B-spline to a nodal TPMS field.
    Fit(FitArgs),
    /// Compute the ETR/EDR report of a field.
    Analyze(AnalyzeArgs),
    /// Extend the ETR by optimizing spline coefficients.
    Optimize(OptimizeArgs),
    /// Export the marching-tetrahedra mesh of a solid at a threshold.
    Mesh(MeshArgs),
    /// Tabulate relative density over a threshold sweep.
    DensitySweep(SweepArgs),
}

#[derive(Args)]
struct FieldInput {
    /// Nodal TPMS type: P, D, G, IWP, FRD.
    #[arg(long)]
    tpms: Option<String>,
    /// Solid type: rod, pore, sheet.
    #[arg(long, default_value = "rod")]
    solid: String,
    /// Fitted spline JSON produced by `fit` or `optimize`.
    #[arg(long)]
    spline: Option<PathBuf>,
}

/// A field resolved from CLI input, in its own normalized coordinates.
enum Field {
    Nodal(NodalField, SolidType),
    Spline(ExtendedField),
}

impl Field {
    /// Box spanning two periods per axis, and the field to evaluate on it.
    fn period_box(&self) -> Box3 {
        match self {
            Field::Nodal(f, _) => {
                let hp = f.half_period();
                Box3::new([0.0; 3], [4.0 * hp[0], 4.0 * hp[1], 4.0 * hp[2]])
            }
            Field::Spline(f) => Box3::cube(0.0, 2.0 * f.period()),
        }
    }
}

impl ScalarField for Field {
    fn value(&self, p: [f64; 3]) -> f64 {
        match self {
            Field::Nodal(f, solid) => f.rod_form(*solid).value(p),
            Field::Spline(f) => f.value(p),
        }
    }
}

impl FieldInput {
    fn resolve(&self) -> Result<Field, Error> {
        match (&self.tpms, &self.spline) {
            (Some(_), Some(_)) => {
                Err(Error::Domain("give either --tpms or --spline, not both".into()))
            }
            (None, None) => Err(Error::Domain("one of --tpms or --spline is required".into())),
            (Some(kind), None) => {
                let kind: TpmsKind = kind.parse().map_err(Error::Domain)?;
                let solid: SolidType = self.solid.parse().map_err(Error::Domain)?;
                Ok(Field::Nodal(NodalField::new(kind), solid))
            }
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    context: format!("reading spline {}", path.display()),
                    source,
                })?;
                Ok(Field::Spline(serde_json::from_str(&text)?))
            }
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Nodal TPMS type: P, D, G, IWP, FRD.
    #[arg(long)]
    tpms: String,
    #[arg(long, default_value = "rod")]
    solid: String,
    /// partial (half unit, reflective) or complete (full unit, periodic).
    #[arg(long, default_value = "partial")]
    method: String,
    /// Control coefficients per axis.
    #[arg(long, default_value_t = 10)]
    dims: usize,
    /// Sample points per axis.
    #[arg(long, default_value_t = 60)]
    samples: usize,
    #[arg(long, default_value = "spline.json")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: FieldInput,
    /// Persistence grid vertices per axis.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Marching-tetrahedra resolution for the density endpoints.
    #[arg(long, default_value_t = 96)]
    mesh_res: usize,
    /// Repetition filter radius.
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Repetition filter count threshold.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Optional persistence diagram CSV.
    #[arg(long)]
    diagram: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    tpms: String,
    #[arg(long, default_value = "rod")]
    solid: String,
    /// Expansion ratio.
    #[arg(long)]
    mu: Option<f64>,
    /// Similarity weight in [0,1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Control coefficients per axis of the fitted spline.
    #[arg(long, default_value_t = 10)]
    dims: usize,
    #[arg(long, default_value_t = 60)]
    samples: usize,
    /// Persistence grid vertices per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Output prefix; writes <prefix>.spline.json, <prefix>.trace.csv,
    /// <prefix>.before.json, <prefix>.after.json.
    #[arg(long, default_value = "optimized")]
    out: PathBuf,
}

#[derive(Args)]
struct MeshArgs {
    #[command(flatten)]
    input: FieldInput,
    /// Threshold c of the solid {field <= c}.
    #[arg(long)]
    c: f64,
    #[arg(long, default_value_t = 96)]
    resolution: usize,
    #[arg(long, default_value = "out.stl")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: FieldInput,
    #[arg(long)]
    c_lo: f64,
    #[arg(long)]
    c_hi: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 48)]
    resolution: usize,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure when a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let code = match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Domain(_) => 2,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}

fn load_config(cli: &Cli) -> Result<OptimizerConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                context: format!("reading config {}", path.display()),
                source,
            })?;
            serde_json::from_str(&text)?
        }
        None => OptimizerConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn finish_manifest(
    mut manifest: RunManifest,
    out: &Path,
    started: Instant,
) -> Result<(), Error> {
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    manifest.write(&manifest_path(out))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let started = Instant::now();
    match &cli.command {
        Command::Fit(args) => {
            let kind: TpmsKind = args.tpms.parse().map_err(Error::Domain)?;
            let solid: SolidType = args.solid.parse().map_err(Error::Domain)?;
            let field = NodalField::new(kind);
            let dims = [args.dims; 3];
            let fitted = match args.method.as_str() {
                "partial" => fit_partial(&field, solid, dims, args.samples)?,
                "complete" => fit_complete(&field, solid, dims, args.samples)?,
                other => {
                    return Err(Error::Domain(format!(
                        "unknown method {other:?}, expected partial or complete"
                    )))
                }
            };
            write_json(&args.out, &fitted.field)?;
            #[derive(Serialize)]
            struct FitReport<'a> {
                mse: f64,
                iterations: usize,
                converged: bool,
                method: &'a str,
            }
            let report = FitReport {
                mse: fitted.mse,
                iterations: fitted.iterations,
                converged: fitted.converged,
                method: &args.method,
            };
            let report_path = args.out.with_extension("report.json");
            write_json(&report_path, &report)?;
            println!("mse = {:.3e} after {} iterations", fitted.mse, fitted.iterations);
            let mut manifest = RunManifest::new(format!(
                "fit --tpms {} --solid {} --method {} --dims {} --samples {}",
                args.tpms, args.solid, args.method, args.dims, args.samples
            ));
            manifest.outputs = vec![
                args.out.display().to_string(),
                report_path.display().to_string(),
            ];
            finish_manifest(manifest, &args.out, started)
        }
        Command::Analyze(args) => {
            let field = args.input.resolve()?;
            let bounds = field.period_box();
            let dims = [args.grid; 3];
            let (report, diagram) =
                analyze_field(&field, bounds, dims, args.mesh_res, args.eps, args.count)?;
            if report.degenerate {
                eprintln!("warning: degenerate threshold range (no determining pair)");
            }
            write_json(&args.out, &report)?;
            let mut outputs = vec![args.out.display().to_string()];
            if let Some(pd_path) = &args.diagram {
                let grid = build_filtration(&field, bounds, dims)?;
                let mut buf = Vec::new();
                tpms_edr::persistence::export_csv(&diagram, &grid, &mut buf).map_err(
                    |source| Error::Io {
                        context: format!("writing diagram {}", pd_path.display()),
                        source,
                    },
                )?;
                write_text(pd_path, &String::from_utf8_lossy(&buf))?;
                outputs.push(pd_path.display().to_string());
            }
            println!(
                "ETR = [{:.4}, {:.4}), EDR = [{:.4}, {:.4}], {} filtered pairs",
                report.etr[0], report.etr[1], report.edr[0], report.edr[1],
                report.filtered_count
            );
            let mut manifest = RunManifest::new(format!(
                "analyze --grid {} --mesh-res {} --eps {} --count {}",
                args.grid, args.mesh_res, args.eps, args.count
            ));
            manifest.outputs = outputs;
            finish_manifest(manifest, &args.out, started)
        }
        Command::Optimize(args) => {
            let kind: TpmsKind = args.tpms.parse().map_err(Error::Domain)?;
            let solid: SolidType = args.solid.parse().map_err(Error::Domain)?;
            let field = NodalField::new(kind);
            let mut config = load_config(cli)?;
            if let Some(mu) = args.mu {
                config.mu = mu;
            }
            if let Some(alpha) = args.alpha {
                config.alpha = alpha;
            }
            if let Some(eta) = args.eta {
                config.learning_rate = eta;
            }
            if let Some(n) = args.max_iters {
                config.max_iters = n;
            }
            if let Some(grid) = args.grid {
                config.persistence_resolution = grid;
            }
            config.validate()?;

            let fitted = fit_partial(&field, solid, [args.dims; 3], args.samples)?;
            let bounds = Box3::cube(0.0, 2.0 * fitted.field.period());
            let n = config.persistence_resolution;
            let (before, _) = analyze_field(
                &fitted.field,
                bounds,
                [n, n, n],
                config.mesh_resolution,
                config.filter_eps,
                config.filter_count,
            )?;
            let etr0 = (before.etr[0], before.etr[1]);
            let (optimized, trace) = optimize(&fitted.field, &field, solid, etr0, &config)?;

            let stem = args.out.display().to_string();
            let spline_path = PathBuf::from(format!("{stem}.spline.json"));
            let trace_path = PathBuf::from(format!("{stem}.trace.csv"));
            let before_path = PathBuf::from(format!("{stem}.before.json"));
            let after_path = PathBuf::from(format!("{stem}.after.json"));
            write_json(&spline_path, &optimized)?;
            write_text(&trace_path, &trace.to_csv())?;
            write_json(&before_path, &before)?;
            write_json(&after_path, &trace.final_etr)?;
            println!(
                "ETR [{:.4}, {:.4}) -> [{:.4}, {:.4}) in {} iterations (E_sim = {:.2e})",
                before.etr[0], before.etr[1],
                trace.final_etr.etr[0], trace.final_etr.etr[1],
                trace.records.len(), trace.final_esim
            );
            if trace.diverged {
                eprintln!("warning: run aborted after the loss diverged");
            }
            let mut manifest = RunManifest::new(format!(
                "optimize --tpms {} --solid {} --mu {} --alpha {} --eta {}",
                args.tpms, args.solid, config.mu, config.alpha, config.learning_rate
            ));
            manifest.config = Some(config.clone());
            manifest.seed = Some(config.seed);
            manifest.outputs = vec![
                spline_path.display().to_string(),
                trace_path.display().to_string(),
                before_path.display().to_string(),
                after_path.display().to_string(),
            ];
            finish_manifest(manifest, &spline_path, started)
        }
        Command::Mesh(args) => {
            let field = args.input.resolve()?;
            let bounds = field.period_box();
            let mesh = marching_tetrahedra(&field, bounds, args.c, args.resolution)?;
            export_stl(&mesh, &args.out)?;
            let density = density_at(&field, bounds, args.c, args.resolution)?;
            let areas = mesh.component_areas();
            let total: f64 = areas.iter().sum();
            let principal = areas.iter().filter(|&&a| a > 0.01 * total).count();
            #[derive(Serialize)]
            struct MeshReport {
                threshold: f64,
                density: f64,
                triangles: usize,
                components: usize,
                principal_components: usize,
            }
            let report = MeshReport {
                threshold: args.c,
                density,
                triangles: mesh.triangles.len(),
                components: areas.len(),
                principal_components: principal,
            };
            let report_path = args.out.with_extension("report.json");
            write_json(&report_path, &report)?;
            println!(
                "density = {:.4}, {} triangles, {} components ({} principal)",
                density, report.triangles, report.components, report.principal_components
            );
            let mut manifest = RunManifest::new(format!(
                "mesh --c {} --resolution {}",
                args.c, args.resolution
            ));
            manifest.outputs = vec![
                args.out.display().to_string(),
                report_path.display().to_string(),
            ];
            finish_manifest(manifest, &args.out, started)
        }
        Command::DensitySweep(args) => {
            if args.steps == 0 {
                return Err(Error::Domain("steps must be >= 1".into()));
            }
            let field = args.input.resolve()?;
            let bounds = field.period_box();
            let mut csv = String::from("c,density\n");
            for i in 0..args.steps {
                let c = if args.steps == 1 {
                    args.c_lo
                } else {
                    args.c_lo + (args.c_hi - args.c_lo) * i as f64 / (args.steps - 1) as f64
                };
                let rho = density_at(&field, bounds, c, args.resolution)?;
                csv.push_str(&format!("{c},{rho}\n"));
            }
            write_text(&args.out, &csv)?;
            println!("wrote {} rows to {}", args.steps, args.out.display());
            let mut manifest = RunManifest::new(format!(
                "density-sweep --c-lo {} --c-hi {} --steps {} --resolution {}",
                args.c_lo, args.c_hi, args.steps, args.resolution
            ));
            manifest.outputs = vec![args.out.display().to_string()];
            finish_manifest(manifest, &args.out, started)
        }
    }
}
