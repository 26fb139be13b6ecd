//! Federated simulation driver: client sampling, parallel local training,
//! aggregation at the round barrier, per-round evaluation on the shared
//! test split, and multi-seed statistics.
//!
//! Determinism contract: `(config, seed)` fully determines every
//! parameter, sample, and record. Client RNG streams are keyed
//! `(seed, round, client_id)`, participants are reduced in ascending id
//! order, and evaluation iterates a fixed chunk order, so results do not
//! depend on worker count or scheduling.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::{
    load_dataset, split_standardize, synthetic_blobs, Dataset, PartitionPlan, MIN_CLIENT_SAMPLES,
};
use crate::error::{Error, Result};
use crate::fedopt::{
    local_train, server_update, Algorithm, ClientData, ClientReturn, ClientState,
    LocalTrainConfig, ServerState,
};
use crate::models::{build_model, preset_spec, Model, ModelKind, ModelSpec};
use crate::numkit::{softmax_cross_entropy, Batch, Matrix, ParamVector};
use crate::seeding::{stream_rng, Stream};

/// Version tag written into every JSON report.
pub const REPORT_SCHEMA: &str = "fkb-report/1";
/// Header of the flat per-round CSV.
pub const CSV_HEADER: &str = "seed,round,algorithm,model,alpha,grid,accuracy,loss";
/// Share of each class held out as the global test split.
pub const TEST_FRACTION: f64 = 0.2;
/// Convergence round = first round beating this fraction of the
/// final-10-round mean accuracy.
pub const CONVERGENCE_FRACTION: f64 = 0.99;
const EVAL_CHUNK: usize = 256;

fn default_participation() -> f64 {
    0.1
}

fn default_rounds() -> usize {
    100
}

fn default_alpha() -> f64 {
    1.0
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_spread() -> f64 {
    0.5
}

fn default_grid_size() -> usize {
    crate::models::DEFAULT_GRID_SIZE
}

fn default_grid_range() -> (f64, f64) {
    crate::models::DEFAULT_GRID_RANGE
}

/// Where the run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Gaussian class blobs generated per seed.
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// A dataset file in the FKB binary format.
    Fkb { path: String },
}

/// Model selection: either a named preset or an explicit architecture.
/// Input and output dimensions always come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub kind: Option<ModelKind>,
    #[serde(default)]
    pub hidden_widths: Option<Vec<usize>>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_grid_range")]
    pub grid_range: (f64, f64),
}

impl ModelConfig {
    pub fn from_preset(name: &str, grid_size: usize) -> Self {
        Self {
            preset: Some(name.to_string()),
            kind: None,
            hidden_widths: None,
            grid_size,
            grid_range: default_grid_range(),
        }
    }

    /// Resolves to a concrete spec once the dataset dimensions are known.
    pub fn resolve(&self, input_dim: usize, output_dim: usize) -> Result<ModelSpec> {
        let mut spec = match (&self.preset, self.kind, &self.hidden_widths) {
            (Some(name), _, _) => preset_spec(name, input_dim, output_dim, self.grid_size)?,
            (None, Some(kind), Some(widths)) => ModelSpec {
                kind,
                input_dim,
                hidden_widths: widths.clone(),
                output_dim,
                grid_size: self.grid_size,
                grid_range: self.grid_range,
                preset: None,
            },
            _ => {
                return Err(Error::Config(
                    "model needs either a preset or kind + hidden_widths".into(),
                ))
            }
        };
        spec.grid_range = self.grid_range;
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_kan(&self) -> bool {
        match (&self.preset, self.kind) {
            (Some(p), _) => p.starts_with("kan"),
            (None, Some(k)) => k == ModelKind::Kan,
            _ => false,
        }
    }

    pub fn label(&self) -> String {
        if let Some(p) = &self.preset {
            return p.clone();
        }
        match (self.kind, &self.hidden_widths) {
            (Some(kind), Some(widths)) => {
                let w: Vec<String> = widths.iter().map(|v| v.to_string()).collect();
                match kind {
                    ModelKind::Kan => format!("kan[{}]g{}", w.join(","), self.grid_size),
                    ModelKind::Mlp => format!("mlp[{}]", w.join(",")),
                }
            }
            _ => "unresolved".into(),
        }
    }

    /// Grid size for the CSV `grid` column; 0 for MLPs.
    pub fn grid_column(&self) -> usize {
        if self.is_kan() {
            self.grid_size
        } else {
            0
        }
    }
}

/// Full description of one federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// Total edge devices (N).
    pub clients: usize,
    /// Fraction of devices sampled per round.
    #[serde(default = "default_participation")]
    pub participation: f64,
    /// Global rounds (G).
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Dirichlet concentration for the non-IID partition.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub dataset: DatasetSource,
    pub model: ModelConfig,
    #[serde(default)]
    pub local: LocalTrainConfig,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("clients must be at least 1".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(format!(
                "participation must be in (0, 1], got {}",
                self.participation
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match &self.dataset {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class,
                spread,
            } => {
                if *classes < 2 || *dim < 2 || *per_class == 0 {
                    return Err(Error::Config(
                        "synthetic dataset needs classes >= 2, dim >= 2, per_class >= 1".into(),
                    ));
                }
                if !(spread.is_finite() && *spread > 0.0) {
                    return Err(Error::Config(format!("spread must be positive, got {spread}")));
                }
            }
            DatasetSource::Fkb { path } => {
                if path.is_empty() {
                    return Err(Error::Config("fkb path must not be empty".into()));
                }
            }
        }
        // structural model check with placeholder dimensions
        self.model.resolve(4, 2)?;
        self.local.validate()?;
        if matches!(self.local.algorithm, Algorithm::FedDyn | Algorithm::FedSmoo)
            && self.local.alpha_dyn <= 0.0
        {
            return Err(Error::Config(
                "feddyn/fedsmoo require alpha_dyn > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One completed global round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub mean_local_loss: f64,
    pub participants: Vec<usize>,
    /// Wall-clock time of the round; excluded from serialized reports so
    /// identical runs produce identical bytes.
    #[serde(skip)]
    pub wall_ms: u64,
}

/// One seed's trajectory, or its recorded failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub convergence_round: Option<usize>,
    pub final_accuracy: Option<f64>,
    pub failed: bool,
    pub failure: Option<String>,
}

/// Multi-seed run report; statistics cover non-failed seeds only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub config: FederationConfig,
    pub runs: Vec<SeedRun>,
    pub failed_seeds: Vec<u64>,
    pub final_accuracy_mean: Option<f64>,
    pub final_accuracy_std: Option<f64>,
    pub mean_convergence_round: Option<f64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Flat CSV: one row per round per seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let algorithm = self.config.local.algorithm.name();
        let model = self.config.model.label();
        let grid = self.config.model.grid_column();
        let alpha = self.config.alpha;
        for run in &self.runs {
            for rec in &run.rounds {
                out.push_str(&format!(
                    "{},{},{algorithm},{model},{alpha},{grid},{},{}\n",
                    run.seed, rec.round, rec.test_accuracy, rec.test_loss
                ));
            }
        }
        out
    }
}

/// Uniform sample without replacement of `max(1, round(participation*N))`
/// client ids, drawn from a stream keyed by `(run_seed, round)`, sorted
/// ascending.
pub fn sample_clients(
    run_seed: u64,
    round: usize,
    num_clients: usize,
    participation: f64,
) -> Vec<usize> {
    let k = ((participation * num_clients as f64).round() as usize)
        .max(1)
        .min(num_clients);
    let mut rng = stream_rng(run_seed, round as u64, 0, Stream::ClientSampling);
    let mut ids = rand::seq::index::sample(&mut rng, num_clients, k).into_vec();
    ids.sort_unstable();
    ids
}

/// Top-1 accuracy (argmax ties resolve to the lowest class index) and mean
/// cross-entropy of `params` on a test set.
pub fn evaluate(model: &Model, params: &ParamVector, testset: &Dataset) -> Result<(f64, f64)> {
    if testset.is_empty() {
        return Err(Error::Config("evaluation on an empty test set".into()));
    }
    let n = testset.len();
    let d = testset.dim();
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut at = 0usize;
    while at < n {
        let hi = (at + EVAL_CHUNK).min(n);
        let rows = hi - at;
        let feats = testset.features.data()[at * d..hi * d].to_vec();
        let batch = Batch::new(
            Matrix::from_vec(rows, d, feats)?,
            testset.labels[at..hi].to_vec(),
        )?;
        let (logits, _) = model.forward_with(params, &batch)?;
        let (loss, _) = softmax_cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss * rows as f64;
        for (i, &label) in batch.labels.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            correct += usize::from(best == label);
        }
        at = hi;
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}

/// First round whose accuracy exceeds `fraction` times the mean accuracy
/// of the final `min(10, len)` rounds; `None` if never reached.
pub fn convergence_round(accuracies: &[f64], fraction: f64) -> Option<usize> {
    if accuracies.is_empty() || !(fraction > 0.0 && fraction <= 1.0) {
        return None;
    }
    let tail = &accuracies[accuracies.len().saturating_sub(10)..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let threshold = fraction * tail_mean;
    accuracies.iter().position(|&a| a > threshold).map(|i| i + 1)
}

/// Runs one global round: sample participants, train them (in parallel)
/// against a snapshot of the server state, aggregate, evaluate.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    config: &FederationConfig,
    run_seed: u64,
    model: &Model,
    server: &mut ServerState,
    clients: &mut [ClientState],
    plan: &PartitionPlan,
    train: &Dataset,
    test: &Dataset,
) -> Result<RoundRecord> {
    let round = server.round_index + 1;
    let started = Instant::now();
    let participants = sample_clients(run_seed, round, config.clients, config.participation);

    let mut taken: Vec<ClientState> = participants
        .iter()
        .map(|&id| std::mem::replace(&mut clients[id], ClientState::new(id)))
        .collect();

    let results: Vec<Result<(ClientReturn, f64)>> = participants
        .par_iter()
        .zip(taken.par_iter_mut())
        .map(|(&id, state)| {
            let data = ClientData::new(&train.features, &train.labels, &plan.assignments[id]);
            let mut rng = stream_rng(run_seed, round as u64, id as u64, Stream::ClientTrain);
            let out = local_train(model, server, state, &data, &config.local, &mut rng)
                .map_err(|e| e.with_round(round))?;
            let mean_loss = out.loss_trace.iter().sum::<f64>() / out.loss_trace.len() as f64;
            Ok((out.into_return(id), mean_loss))
        })
        .collect();

    for (&id, state) in participants.iter().zip(taken) {
        clients[id] = state;
    }

    let mut returns = Vec::with_capacity(participants.len());
    let mut local_loss_sum = 0.0;
    for r in results {
        let (ret, mean_loss) = r?;
        local_loss_sum += mean_loss;
        returns.push(ret);
    }
    let mean_local_loss = local_loss_sum / returns.len() as f64;

    server_update(&config.local, server, &returns, config.clients)?;
    let (test_accuracy, test_loss) = evaluate(model, &server.global_params, test)?;

    Ok(RoundRecord {
        round,
        test_accuracy,
        test_loss,
        mean_local_loss,
        participants,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

fn build_raw_dataset(config: &FederationConfig, seed: u64, fkb: Option<&Dataset>) -> Result<Dataset> {
    match &config.dataset {
        DatasetSource::Synthetic {
            classes,
            dim,
            per_class,
            spread,
        } => synthetic_blobs(
            *classes,
            *dim,
            *per_class,
            *spread,
            &mut stream_rng(seed, 0, 0, Stream::SyntheticData),
        ),
        DatasetSource::Fkb { .. } => Ok(fkb.expect("fkb dataset preloaded").clone()),
    }
}

fn run_one_seed(config: &FederationConfig, seed: u64, fkb: Option<&Dataset>) -> Result<SeedRun> {
    let raw = build_raw_dataset(config, seed, fkb)?;
    let split = split_standardize(&raw, TEST_FRACTION, &mut stream_rng(seed, 0, 0, Stream::TestSplit))?;
    let plan = PartitionPlan::build(
        &split.train.labels,
        config.clients,
        config.alpha,
        MIN_CLIENT_SAMPLES,
        seed,
    )?;
    let spec = config.model.resolve(split.train.dim(), split.train.num_classes)?;
    let model = build_model(&spec, &mut stream_rng(seed, 0, 0, Stream::ModelInit))?;
    let mut server = ServerState::new(model.params().clone());
    let mut clients: Vec<ClientState> = (0..config.clients).map(ClientState::new).collect();

    let mut rounds = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let record = run_round(
            config,
            seed,
            &model,
            &mut server,
            &mut clients,
            &plan,
            &split.train,
            &split.test,
        )?;
        rounds.push(record);
    }

    let accuracies: Vec<f64> = rounds.iter().map(|r| r.test_accuracy).collect();
    Ok(SeedRun {
        seed,
        convergence_round: convergence_round(&accuracies, CONVERGENCE_FRACTION),
        final_accuracy: accuracies.last().copied(),
        rounds,
        failed: false,
        failure: None,
    })
}

/// Runs the full multi-seed simulation. Individual seed failures
/// (divergence, partition errors) are recorded in the report; the run
/// errors only when every seed fails.
pub fn run_federated(config: &FederationConfig) -> Result<RunReport> {
    config.validate()?;
    let fkb = match &config.dataset {
        DatasetSource::Fkb { path } => Some(load_dataset(path)?),
        _ => None,
    };

    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run = match run_one_seed(config, seed, fkb.as_ref()) {
            Ok(r) => r,
            Err(e) => SeedRun {
                seed,
                rounds: Vec::new(),
                convergence_round: None,
                final_accuracy: None,
                failed: true,
                failure: Some(e.to_string()),
            },
        };
        runs.push(run);
    }

    let failed_seeds: Vec<u64> = runs.iter().filter(|r| r.failed).map(|r| r.seed).collect();
    let finals: Vec<f64> = runs.iter().filter_map(|r| r.final_accuracy).collect();
    if finals.is_empty() {
        let detail = runs
            .iter()
            .filter_map(|r| r.failure.as_deref())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::AllSeedsFailed(detail));
    }

    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let std = (finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / finals.len() as f64)
        .sqrt();
    let conv: Vec<f64> = runs
        .iter()
        .filter(|r| !r.failed)
        .filter_map(|r| r.convergence_round.map(|c| c as f64))
        .collect();
    let mean_convergence_round = if conv.is_empty() {
        None
    } else {
        Some(conv.iter().sum::<f64>() / conv.len() as f64)
    };

    Ok(RunReport {
        schema: REPORT_SCHEMA.to_string(),
        config: config.clone(),
        runs,
        failed_seeds,
        final_accuracy_mean: Some(mean),
        final_accuracy_std: Some(std),
        mean_convergence_round,
    })
}
