//! `fkb` - command-line front end for the federated KAN benchmark
//! simulator: single runs, benchmark sweeps, gradient self-checks,
//! partition diagnostics, dataset export, and report merging.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime/data error,
//! 4 self-check failure.

mod overrides;
mod report;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use fkb_core::datakit::{partition_stats, save_fkb, synthetic_blobs, PartitionPlan};
use fkb_core::engine::{run_federated, FederationConfig};
use fkb_core::models::{gradient_check, preset_spec, GradCheckReport, GRADCHECK_TOL, PRESET_NAMES};
use fkb_core::seeding::{stream_rng, Stream};
use fkb_core::Error as CoreError;

use overrides::apply_overrides;

/// Batch geometry for the gradient self-check.
const GRADCHECK_INPUT_DIM: usize = 4;
const GRADCHECK_OUTPUT_DIM: usize = 3;
const GRADCHECK_BATCHES: usize = 3;
const GRADCHECK_BATCH_SIZE: usize = 3;
/// Coordinate budget per model; larger models are spot-checked on a seeded
/// random subset so the full preset grid stays inside its time budget.
const GRADCHECK_MAX_COORDS: usize = 800;

#[derive(Parser)]
#[command(name = "fkb", version, about = "Federated KAN benchmark simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one federated simulation from a JSON config file
    Run {
        /// Path to the config (a single JSON document)
        config: PathBuf,
        /// Directory for report.json and report.csv
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Dotted-path overrides, e.g. --local.epochs=10 --alpha=0.01
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run a benchmark sweep from a spec file or a named preset
    Sweep {
        /// Built-in grid: fig1 (12 points), fig2 (72), ablation (5)
        #[arg(long)]
        preset: Option<String>,
        /// Output directory (required with --preset, overrides the spec's)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sweep spec JSON path and/or dotted-path overrides applied to
        /// the base config, e.g. grids.json --rounds=10
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
    /// Compare analytic gradients against finite differences
    Gradcheck {
        /// Model preset to check
        #[arg(long, default_value = "kan-1")]
        preset: String,
        /// KAN grid size (ignored for MLP presets)
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check every preset in the benchmark grid (KAN at g=3,5,10)
        #[arg(long)]
        all: bool,
        /// Corrupt the analytic gradient first (negative control; exits 4)
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Partition a dataset and report per-client class histograms
    PartitionStats {
        /// FKB dataset to partition (defaults to synthetic blobs)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 625)]
        per_class: usize,
        #[arg(long, default_value_t = 0.5)]
        spread: f64,
        /// Number of clients (N)
        #[arg(long, default_value_t = 100)]
        clients: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        min_samples: usize,
        /// Histogram CSV path (default: histogram.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic blobs and write them as an FKB file
    Export {
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 625)]
        per_class: usize,
        #[arg(long, default_value_t = 0.5)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination .fkb path
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate and merge emitted CSVs (per-round or summary schema)
    Report {
        files: Vec<PathBuf>,
        /// Merged CSV destination (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        Self { code: 2, message }
    }

    pub fn runtime(message: String) -> Self {
        Self { code: 3, message }
    }

    pub fn selfcheck(message: String) -> Self {
        Self { code: 4, message }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Config(_) | CoreError::Spec(_) => 2,
            _ => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() {
    init_thread_pool();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}

/// Honors `FKB_THREADS` as a cap on the worker pool.
fn init_thread_pool() {
    if let Ok(raw) = std::env::var("FKB_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid FKB_THREADS={raw}"),
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            out,
            overrides,
        } => cmd_run(&config, &out, &overrides),
        Command::Sweep { preset, out, args } => cmd_sweep(preset.as_deref(), out.as_deref(), &args),
        Command::Gradcheck {
            preset,
            grid,
            seed,
            all,
            corrupt,
        } => cmd_gradcheck(&preset, grid, seed, all, corrupt),
        Command::PartitionStats {
            data,
            classes,
            dim,
            per_class,
            spread,
            clients,
            alpha,
            seed,
            min_samples,
            out,
        } => cmd_partition_stats(
            data.as_deref(),
            classes,
            dim,
            per_class,
            spread,
            clients,
            alpha,
            seed,
            min_samples,
            out.as_deref(),
        ),
        Command::Export {
            classes,
            dim,
            per_class,
            spread,
            seed,
            out,
        } => cmd_export(classes, dim, per_class, spread, seed, &out),
        Command::Report { files, out } => report::merge_reports(&files, out.as_deref()),
    }
}

/// Parses a config file and applies dotted-path overrides; unknown keys
/// are hard errors.
fn load_config(path: &Path, overrides: &[String]) -> Result<FederationConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    apply_overrides(&mut doc, overrides).map_err(CliError::config)?;
    let config: FederationConfig = serde_json::from_value(doc)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn cmd_run(config_path: &Path, out_dir: &Path, overrides: &[String]) -> Result<(), CliError> {
    let config = load_config(config_path, overrides)?;
    let report = run_federated(&config)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::runtime(e.to_string()))?;
    let json_path = out_dir.join("report.json");
    let csv_path = out_dir.join("report.csv");
    fs::write(&json_path, report.to_json()).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(&csv_path, report.to_csv()).map_err(|e| CliError::runtime(e.to_string()))?;
    println!(
        "final accuracy {:.4} +- {:.4} over {} seeds ({} failed); reports in {}",
        report.final_accuracy_mean.unwrap_or(f64::NAN),
        report.final_accuracy_std.unwrap_or(f64::NAN),
        report.config.seeds.len(),
        report.failed_seeds.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(preset: Option<&str>, out: Option<&Path>, args: &[String]) -> Result<(), CliError> {
    // the trailing arguments hold an optional spec path plus overrides
    let mut spec_path: Option<PathBuf> = None;
    let mut overrides: Vec<String> = Vec::new();
    for arg in args {
        if arg.starts_with("--") {
            overrides.push(arg.clone());
        } else if spec_path.is_none() {
            spec_path = Some(PathBuf::from(arg));
        } else {
            return Err(CliError::config(format!(
                "unexpected extra argument `{arg}` (one spec file at most)"
            )));
        }
    }

    let mut spec = match (&spec_path, preset) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read sweep spec {}: {e}", path.display())))?;
            serde_json::from_str::<sweep::SweepSpec>(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => {
            let out = out.ok_or_else(|| {
                CliError::config("--preset sweeps need --out <dir>".into())
            })?;
            sweep::preset_sweep(name, &out.to_string_lossy())?
        }
        _ => {
            return Err(CliError::config(
                "sweep needs either a spec file or --preset <name>".into(),
            ))
        }
    };
    if let Some(out) = out {
        spec.output_dir = out.to_string_lossy().into_owned();
    }
    if !overrides.is_empty() {
        let mut doc = serde_json::to_value(&spec.base)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        apply_overrides(&mut doc, &overrides).map_err(CliError::config)?;
        spec.base = serde_json::from_value(doc)
            .map_err(|e| CliError::config(format!("base override: {e}")))?;
    }
    sweep::run_sweep(&spec)
}

fn cmd_gradcheck(
    preset: &str,
    grid: usize,
    seed: u64,
    all: bool,
    corrupt: bool,
) -> Result<(), CliError> {
    let inject = corrupt.then_some(0.05);
    let mut checks: Vec<(String, usize)> = Vec::new();
    if all {
        for name in PRESET_NAMES {
            if name.starts_with("kan") {
                for g in [3, 5, 10] {
                    checks.push((name.to_string(), g));
                }
            } else {
                checks.push((name.to_string(), grid));
            }
        }
    } else {
        checks.push((preset.to_string(), grid));
    }

    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for (name, g) in &checks {
        let spec = preset_spec(name, GRADCHECK_INPUT_DIM, GRADCHECK_OUTPUT_DIM, *g)?;
        let report = gradient_check(
            &spec,
            seed,
            GRADCHECK_BATCHES,
            GRADCHECK_BATCH_SIZE,
            GRADCHECK_MAX_COORDS,
            inject,
        )?;
        print_gradcheck_line(&report, *g);
        worst = worst.max(report.max_rel_error);
        if !report.passed() {
            print_layer_table(&report);
            failed.push(format!("{name} (g={g})"));
        }
    }
    println!("max relative error across checks: {worst:.3e} (tolerance {GRADCHECK_TOL:.0e})");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::selfcheck(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}

fn print_gradcheck_line(report: &GradCheckReport, grid: usize) {
    println!(
        "{:10} g={:<2} checked {:>6}/{:<7} coords over {} batches  max rel err {:.3e}  {}",
        report.spec_label,
        grid,
        report.checked_coords,
        report.total_coords,
        report.batches,
        report.max_rel_error,
        if report.passed() { "ok" } else { "FAIL" }
    );
}

fn print_layer_table(report: &GradCheckReport) {
    println!("  {:24} {:>8}  rel error", "layer", "checked");
    for layer in &report.per_layer {
        println!(
            "  {:24} {:>8}  {:.3e}",
            layer.name, layer.checked, layer.rel_error
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_partition_stats(
    data: Option<&Path>,
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    clients: usize,
    alpha: f64,
    seed: u64,
    min_samples: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let dataset = match data {
        Some(path) => fkb_core::datakit::load_dataset(path)?,
        None => synthetic_blobs(
            classes,
            dim,
            per_class,
            spread,
            &mut stream_rng(seed, 0, 0, Stream::SyntheticData),
        )?,
    };
    let plan = PartitionPlan::build(&dataset.labels, clients, alpha, min_samples, seed)?;
    plan.check(dataset.len(), min_samples)?;
    let stats = partition_stats(&plan.assignments, &dataset.labels, dataset.num_classes);

    let mut csv = String::from("client");
    for c in 0..dataset.num_classes {
        csv.push_str(&format!(",class_{c}"));
    }
    csv.push('\n');
    for (k, row) in stats.counts.iter().enumerate() {
        csv.push_str(&k.to_string());
        for &count in row {
            csv.push_str(&format!(",{count}"));
        }
        csv.push('\n');
    }
    let out_path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("histogram.csv"));
    fs::write(&out_path, csv).map_err(|e| CliError::runtime(e.to_string()))?;

    println!("heterogeneity score: {}", stats.heterogeneity);
    println!("histogram written to {}", out_path.display());
    Ok(())
}

fn cmd_export(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let dataset = synthetic_blobs(
        classes,
        dim,
        per_class,
        spread,
        &mut stream_rng(seed, 0, 0, Stream::SyntheticData),
    )?;
    save_fkb(&dataset, out)?;
    println!(
        "wrote {} samples x {} features, {} classes to {}",
        dataset.len(),
        dataset.dim(),
        dataset.num_classes,
        out.display()
    );
    Ok(())
}
