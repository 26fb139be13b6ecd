//! Benchmark sweeps: cartesian grids over algorithm, model preset, alpha,
//! and grid size, with the three in-tree presets mirroring the benchmark's
//! figures (`fig1`, `fig2`) and depth/width ablation (`ablation`).

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use fkb_core::engine::{
    run_federated, DatasetSource, FederationConfig, ModelConfig, RunReport, CSV_HEADER,
};
use fkb_core::fedopt::{Algorithm, LocalTrainConfig, ALGORITHMS};

use crate::CliError;

/// Header of `summary.csv` (one row per grid point).
pub const SUMMARY_HEADER: &str =
    "algorithm,model,alpha,grid,status,final_accuracy_mean,final_accuracy_std,mean_convergence_round,failed_seeds";

/// Sweep description: a base config plus axis values. Empty axes inherit
/// the base config's value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub output_dir: String,
    pub base: FederationConfig,
    #[serde(default)]
    pub axes: SweepAxes,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub algorithm: Vec<String>,
    /// Model preset names.
    pub model: Vec<String>,
    pub alpha: Vec<f64>,
    pub grid_size: Vec<usize>,
}

/// One expanded grid point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub model: String,
    pub alpha: f64,
    pub grid: usize,
    pub dir_name: String,
    pub config: FederationConfig,
}

/// The desk-scale base configuration the presets run on.
pub fn desk_base() -> FederationConfig {
    FederationConfig {
        clients: 100,
        participation: 0.1,
        rounds: 50,
        alpha: 1.0,
        seeds: vec![0, 1, 2, 3, 4],
        dataset: DatasetSource::Synthetic {
            classes: 8,
            dim: 64,
            per_class: 625,
            spread: 0.5,
        },
        model: ModelConfig::from_preset("kan-1", 5),
        local: LocalTrainConfig::default(),
    }
}

/// Builds a named preset sweep (`fig1`, `fig2`, `ablation`).
pub fn preset_sweep(name: &str, output_dir: &str) -> Result<SweepSpec, CliError> {
    let all: Vec<String> = ALGORITHMS.iter().map(|a| a.name().to_string()).collect();
    let axes = match name {
        "fig1" => SweepAxes {
            algorithm: all,
            model: vec!["kan-1".into(), "mlp-3".into()],
            alpha: vec![1.0],
            grid_size: vec![5],
        },
        "fig2" => SweepAxes {
            algorithm: all,
            model: vec!["kan-1".into()],
            alpha: vec![0.001, 0.01, 0.1, 1.0],
            grid_size: vec![3, 5, 10],
        },
        "ablation" => SweepAxes {
            algorithm: vec!["fedavg".into()],
            model: vec![
                "kan-d1".into(),
                "kan-d3".into(),
                "kan-d5".into(),
                "kan-w3".into(),
                "kan-w5".into(),
            ],
            alpha: vec![1.0],
            grid_size: vec![5],
        },
        _ => {
            return Err(CliError::config(format!(
                "unknown sweep preset `{name}` (known: fig1, fig2, ablation)"
            )))
        }
    };
    Ok(SweepSpec {
        output_dir: output_dir.to_string(),
        base: desk_base(),
        axes,
    })
}

/// Expands the cartesian product and validates every point up front.
pub fn expand_points(spec: &SweepSpec) -> Result<Vec<SweepPoint>, CliError> {
    let algorithms: Vec<Algorithm> = if spec.axes.algorithm.is_empty() {
        vec![spec.base.local.algorithm]
    } else {
        spec.axes
            .algorithm
            .iter()
            .map(|s| s.parse::<Algorithm>().map_err(CliError::from))
            .collect::<Result<_, _>>()?
    };
    let models: Vec<Option<String>> = if spec.axes.model.is_empty() {
        vec![None]
    } else {
        spec.axes.model.iter().cloned().map(Some).collect()
    };
    let alphas: Vec<f64> = if spec.axes.alpha.is_empty() {
        vec![spec.base.alpha]
    } else {
        spec.axes.alpha.clone()
    };
    let grids: Vec<usize> = if spec.axes.grid_size.is_empty() {
        vec![spec.base.model.grid_size]
    } else {
        spec.axes.grid_size.clone()
    };

    let mut points = Vec::new();
    for algorithm in &algorithms {
        for model in &models {
            for &alpha in &alphas {
                for &grid in &grids {
                    let mut config = spec.base.clone();
                    config.local.algorithm = *algorithm;
                    config.alpha = alpha;
                    match model {
                        Some(name) => config.model = ModelConfig::from_preset(name, grid),
                        None => config.model.grid_size = grid,
                    }
                    config
                        .validate()
                        .map_err(|e| CliError::config(format!("grid point invalid: {e}")))?;
                    let label = config.model.label();
                    points.push(SweepPoint {
                        algorithm: *algorithm,
                        model: label.clone(),
                        alpha,
                        grid,
                        dir_name: format!("{algorithm}_{label}_a{alpha}_g{grid}"),
                        config,
                    });
                }
            }
        }
    }
    if points.is_empty() {
        return Err(CliError::config("sweep expands to zero points".into()));
    }
    Ok(points)
}

/// Runs every grid point (concurrently), writing per-point reports plus
/// the combined `sweep.csv` and `summary.csv`. Failing points are recorded
/// in the summary and skipped; the sweep succeeds if at least one point
/// does.
pub fn run_sweep(spec: &SweepSpec) -> Result<(), CliError> {
    let points = expand_points(spec)?;
    let out_root = PathBuf::from(&spec.output_dir);
    fs::create_dir_all(&out_root).map_err(|e| CliError::runtime(e.to_string()))?;

    let outcomes: Vec<(SweepPoint, Result<RunReport, fkb_core::Error>)> = points
        .into_par_iter()
        .map(|point| {
            let result = run_federated(&point.config);
            (point, result)
        })
        .collect();

    let mut sweep_csv = String::from(CSV_HEADER);
    sweep_csv.push('\n');
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    let mut succeeded = 0usize;

    for (point, result) in &outcomes {
        let dir = out_root.join(&point.dir_name);
        fs::create_dir_all(&dir).map_err(|e| CliError::runtime(e.to_string()))?;
        match result {
            Ok(report) => {
                succeeded += 1;
                fs::write(dir.join("report.json"), report.to_json())
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                let csv = report.to_csv();
                fs::write(dir.join("report.csv"), &csv)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                for line in csv.lines().skip(1) {
                    sweep_csv.push_str(line);
                    sweep_csv.push('\n');
                }
                summary.push_str(&format!(
                    "{},{},{},{},ok,{},{},{},{}\n",
                    point.algorithm,
                    point.model,
                    point.alpha,
                    point.grid,
                    report.final_accuracy_mean.unwrap_or(f64::NAN),
                    report.final_accuracy_std.unwrap_or(f64::NAN),
                    report
                        .mean_convergence_round
                        .map_or(String::new(), |v| v.to_string()),
                    report.failed_seeds.len(),
                ));
            }
            Err(e) => {
                fs::write(dir.join("error.txt"), format!("{e}\n"))
                    .map_err(|io| CliError::runtime(io.to_string()))?;
                eprintln!("point {} failed: {e}", point.dir_name);
                summary.push_str(&format!(
                    "{},{},{},{},failed,,,,{}\n",
                    point.algorithm,
                    point.model,
                    point.alpha,
                    point.grid,
                    point.config.seeds.len(),
                ));
            }
        }
    }

    fs::write(out_root.join("sweep.csv"), sweep_csv)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(out_root.join("summary.csv"), summary)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    println!(
        "sweep complete: {succeeded}/{} points succeeded, outputs in {}",
        outcomes.len(),
        out_root.display()
    );
    if succeeded == 0 {
        return Err(CliError::runtime("every sweep point failed".into()));
    }
    Ok(())
}
