//! The six federated optimization algorithms as (local-training rule,
//! server-update rule) pairs over flat parameter vectors.
//!
//! All rules share the same skeleton: a client receives a snapshot of the
//! global parameters, runs `E` epochs of mini-batch steps over a shuffle
//! order drawn from its own keyed RNG stream, and returns its parameters
//! plus any state deltas. The server reduces returns in ascending
//! client-id order, so aggregation is bit-deterministic regardless of
//! scheduling.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numkit::{axpy_slice, Batch, GradVector, Matrix, ParamVector};

/// Federated optimization algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedDyn,
    FedSam,
    FedGamma,
    FedSmoo,
    FedSpeed,
}

/// All algorithms, in benchmark order.
pub const ALGORITHMS: [Algorithm; 6] = [
    Algorithm::FedAvg,
    Algorithm::FedDyn,
    Algorithm::FedSam,
    Algorithm::FedGamma,
    Algorithm::FedSmoo,
    Algorithm::FedSpeed,
];

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedDyn => "feddyn",
            Algorithm::FedSam => "fedsam",
            Algorithm::FedGamma => "fedgamma",
            Algorithm::FedSmoo => "fedsmoo",
            Algorithm::FedSpeed => "fedspeed",
        }
    }

    /// Whether the local rule evaluates the gradient at a SAM-perturbed point.
    pub fn uses_sam(&self) -> bool {
        matches!(
            self,
            Algorithm::FedSam | Algorithm::FedGamma | Algorithm::FedSmoo | Algorithm::FedSpeed
        )
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Algorithm::FedAvg),
            "feddyn" => Ok(Algorithm::FedDyn),
            "fedsam" => Ok(Algorithm::FedSam),
            "fedgamma" => Ok(Algorithm::FedGamma),
            "fedsmoo" => Ok(Algorithm::FedSmoo),
            "fedspeed" => Ok(Algorithm::FedSpeed),
            _ => Err(Error::Config(format!(
                "unknown algorithm `{s}` (known: fedavg, feddyn, fedsam, fedgamma, fedsmoo, fedspeed)"
            ))),
        }
    }
}

/// Hyperparameters of one local training pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalTrainConfig {
    pub algorithm: Algorithm,
    /// Local epochs per round (E).
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// SAM perturbation radius (rho); used by the SAM-family rules.
    pub rho: f64,
    /// Dynamic-regularization weight for FedDyn / FedSMOO.
    pub alpha_dyn: f64,
    /// Proximal weight (beta) for FedSpeed.
    pub prox_weight: f64,
    /// FedSpeed gradient blend in [0, 1].
    pub merge_alpha: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FedAvg,
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.05,
            rho: 0.05,
            alpha_dyn: 0.1,
            prox_weight: 0.1,
            merge_alpha: 0.5,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("local.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("local.batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "local.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("alpha_dyn", self.alpha_dyn),
            ("prox_weight", self.prox_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("local.{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.merge_alpha) {
            return Err(Error::Config(format!(
                "local.merge_alpha must be in [0, 1], got {}",
                self.merge_alpha
            )));
        }
        Ok(())
    }
}

/// Per-client persistent algorithm state. `None` fields stand for zero
/// vectors that have never been touched.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    /// FedDyn / FedSMOO dual (lambda_n).
    pub dyn_dual: Option<ParamVector>,
    /// FedGamma control variate (c_n).
    pub control_variate: Option<ParamVector>,
    /// FedSpeed correction (h_n).
    pub speed_correction: Option<ParamVector>,
}

impl ClientState {
    pub fn new(client_id: usize) -> Self {
        Self {
            client_id,
            dyn_dual: None,
            control_variate: None,
            speed_correction: None,
        }
    }

    fn check_layouts(&self, global: &ParamVector) -> Result<()> {
        for (name, v) in [
            ("dyn_dual", &self.dyn_dual),
            ("control_variate", &self.control_variate),
            ("speed_correction", &self.speed_correction),
        ] {
            if let Some(v) = v {
                global.ensure_compatible(v, name)?;
            }
        }
        Ok(())
    }
}

/// Server-side persistent state.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_params: ParamVector,
    /// FedDyn / FedSMOO drift accumulator (h).
    pub dyn_h: Option<ParamVector>,
    /// FedGamma global control variate (c).
    pub global_control: Option<ParamVector>,
    /// Completed global rounds.
    pub round_index: usize,
}

impl ServerState {
    pub fn new(global_params: ParamVector) -> Self {
        Self {
            global_params,
            dyn_h: None,
            global_control: None,
            round_index: 0,
        }
    }
}

/// A client's slice of the shared training split.
pub struct ClientData<'a> {
    features: &'a Matrix,
    labels: &'a [usize],
    indices: &'a [usize],
}

impl<'a> ClientData<'a> {
    pub fn new(features: &'a Matrix, labels: &'a [usize], indices: &'a [usize]) -> Self {
        Self {
            features,
            labels,
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Gathers the rows at the given positions (into this client's index
    /// list) as a dense batch.
    fn gather(&self, positions: &[usize]) -> Batch {
        let dim = self.features.cols();
        let mut feats = Vec::with_capacity(positions.len() * dim);
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            let row = self.indices[p];
            feats.extend_from_slice(self.features.row(row));
            labels.push(self.labels[row]);
        }
        Batch {
            features: Matrix::from_vec(positions.len(), dim, feats).expect("gather shape"),
            labels,
        }
    }
}

/// What a client sends back to the server after local training.
#[derive(Debug, Clone)]
pub struct ClientReturn {
    pub client_id: usize,
    pub params: ParamVector,
    /// FedGamma: change in the client control variate.
    pub control_delta: Option<ParamVector>,
}

/// Result of one local training pass.
#[derive(Debug)]
pub struct LocalTrainOutcome {
    pub params: ParamVector,
    /// Base loss at the unperturbed parameters, one entry per step.
    pub loss_trace: Vec<f64>,
    pub control_delta: Option<ParamVector>,
    pub steps: usize,
}

impl LocalTrainOutcome {
    pub fn into_return(self, client_id: usize) -> ClientReturn {
        ClientReturn {
            client_id,
            params: self.params,
            control_delta: self.control_delta,
        }
    }
}

/// SAM ascent direction: `rho * g / ||g||`, or zero when the gradient is
/// numerically zero (no division blow-up).
pub fn sam_perturbation(g: &GradVector, rho: f64) -> GradVector {
    let norm = g.l2_norm();
    let mut out = GradVector::zeros(g.layout().clone());
    if rho == 0.0 || norm <= 1e-12 {
        return out;
    }
    for (o, &v) in out.values_mut().iter_mut().zip(g.values()) {
        *o = rho * (v / norm);
    }
    out
}

/// Runs `E` epochs of mini-batch steps for one client and applies the
/// algorithm's post-training state updates.
///
/// The per-step gradient is, writing `g = grad f(theta)`, `g+ = grad f` at
/// the SAM-perturbed point, `tg` the round-start global parameters:
///
/// - FedAvg:   `g`
/// - FedDyn:   `g - lambda_n + alpha_dyn (theta - tg)`
/// - FedSAM:   `g+`
/// - FedGamma: `g+ - c_n + c`
/// - FedSMOO:  `g+ - lambda_n + alpha_dyn (theta - tg)`
/// - FedSpeed: `merge_alpha g+ + (1 - merge_alpha) g + prox_weight (theta - tg) - h_n`
pub fn local_train(
    model: &Model,
    server: &ServerState,
    client: &mut ClientState,
    data: &ClientData,
    cfg: &LocalTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LocalTrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyClient {
            client_id: client.client_id,
        });
    }
    let theta_g = &server.global_params;
    client.check_layouts(theta_g)?;
    if let Some(c) = &server.global_control {
        theta_g.ensure_compatible(c, "global_control")?;
    }

    let p_len = theta_g.len();
    let zeros = vec![0.0; p_len];
    let lambda: &[f64] = client.dyn_dual.as_ref().map_or(&zeros, |v| v.values());
    let c_local: &[f64] = client
        .control_variate
        .as_ref()
        .map_or(&zeros, |v| v.values());
    let c_global: &[f64] = server
        .global_control
        .as_ref()
        .map_or(&zeros, |v| v.values());
    let h_speed: &[f64] = client
        .speed_correction
        .as_ref()
        .map_or(&zeros, |v| v.values());

    let mut theta = theta_g.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut dir = vec![0.0; p_len];
    let mut trace = Vec::with_capacity(cfg.epochs * data.len().div_ceil(cfg.batch_size));
    let mut steps = 0usize;

    let diverged = |client_id: usize, what: String| Error::Divergence {
        round: 0,
        client_id,
        detail: what,
    };

    for _epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.gather(chunk);
            let (loss, g1) = model.loss_and_grad_with(&theta, &batch)?;
            if !loss.is_finite() {
                return Err(diverged(client.client_id, format!("local loss {loss}")));
            }
            trace.push(loss);

            let tg = theta_g.values();
            let th = theta.values();
            match cfg.algorithm {
                Algorithm::FedAvg => dir.copy_from_slice(g1.values()),
                Algorithm::FedDyn => {
                    let g = g1.values();
                    for i in 0..p_len {
                        dir[i] = g[i] - lambda[i] + cfg.alpha_dyn * (th[i] - tg[i]);
                    }
                }
                Algorithm::FedSam | Algorithm::FedGamma | Algorithm::FedSmoo => {
                    let g2 = sam_gradient(model, &theta, &g1, &batch, cfg.rho)?;
                    let g = g2.values();
                    match cfg.algorithm {
                        Algorithm::FedSam => dir.copy_from_slice(g),
                        Algorithm::FedGamma => {
                            for i in 0..p_len {
                                dir[i] = g[i] - c_local[i] + c_global[i];
                            }
                        }
                        _ => {
                            for i in 0..p_len {
                                dir[i] = g[i] - lambda[i] + cfg.alpha_dyn * (th[i] - tg[i]);
                            }
                        }
                    }
                }
                Algorithm::FedSpeed => {
                    let g2 = sam_gradient(model, &theta, &g1, &batch, cfg.rho)?;
                    let ga = g1.values();
                    let gb = g2.values();
                    for i in 0..p_len {
                        dir[i] = cfg.merge_alpha * gb[i]
                            + (1.0 - cfg.merge_alpha) * ga[i]
                            + cfg.prox_weight * (th[i] - tg[i])
                            - h_speed[i];
                    }
                }
            }

            axpy_slice(-cfg.learning_rate, &dir, theta.values_mut());
            steps += 1;
        }
    }

    if !theta.all_finite() {
        return Err(diverged(
            client.client_id,
            "non-finite parameters after local training".into(),
        ));
    }

    // post-training state updates
    let mut control_delta = None;
    match cfg.algorithm {
        Algorithm::FedDyn | Algorithm::FedSmoo => {
            let new_lambda: Vec<f64> = lambda
                .iter()
                .zip(theta.values().iter().zip(theta_g.values()))
                .map(|(&l, (&tn, &tg))| l - cfg.alpha_dyn * (tn - tg))
                .collect();
            client.dyn_dual =
                Some(ParamVector::from_values(theta_g.layout().clone(), new_lambda)?);
        }
        Algorithm::FedGamma => {
            let scale = 1.0 / (steps as f64 * cfg.learning_rate);
            let mut new_c = Vec::with_capacity(p_len);
            let mut delta = Vec::with_capacity(p_len);
            for i in 0..p_len {
                let d = -c_global[i] + scale * (theta_g.values()[i] - theta.values()[i]);
                new_c.push(c_local[i] + d);
                delta.push(d);
            }
            client.control_variate =
                Some(ParamVector::from_values(theta_g.layout().clone(), new_c)?);
            control_delta = Some(ParamVector::from_values(theta_g.layout().clone(), delta)?);
        }
        Algorithm::FedSpeed => {
            let new_h: Vec<f64> = h_speed
                .iter()
                .zip(theta.values().iter().zip(theta_g.values()))
                .map(|(&h, (&tn, &tg))| h - cfg.prox_weight * (tn - tg))
                .collect();
            client.speed_correction =
                Some(ParamVector::from_values(theta_g.layout().clone(), new_h)?);
        }
        _ => {}
    }

    Ok(LocalTrainOutcome {
        params: theta,
        loss_trace: trace,
        control_delta,
        steps,
    })
}

/// Gradient at the SAM-perturbed point `theta + rho * g1 / ||g1||`.
fn sam_gradient(
    model: &Model,
    theta: &ParamVector,
    g1: &GradVector,
    batch: &Batch,
    rho: f64,
) -> Result<GradVector> {
    let eps = sam_perturbation(g1, rho);
    let mut perturbed = theta.clone();
    axpy_slice(1.0, eps.values(), perturbed.values_mut());
    let (loss, g2) = model.loss_and_grad_with(&perturbed, batch)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            round: 0,
            client_id: usize::MAX,
            detail: format!("loss {loss} at SAM-perturbed point"),
        });
    }
    Ok(g2)
}

/// Aggregates participant returns into a new global state.
///
/// All rules average the returned parameters coordinate-wise (unweighted,
/// summed in ascending client-id order); FedDyn/FedSMOO additionally track
/// the drift accumulator `h`, FedGamma the global control variate `c`.
pub fn server_update(
    cfg: &LocalTrainConfig,
    server: &mut ServerState,
    returns: &[ClientReturn],
    total_clients: usize,
) -> Result<()> {
    if returns.is_empty() {
        return Err(Error::Config("server_update with no returns".into()));
    }
    if total_clients == 0 {
        return Err(Error::Config("total_clients must be positive".into()));
    }
    for r in returns {
        server
            .global_params
            .ensure_compatible(&r.params, "client return")?;
    }

    let mut order: Vec<usize> = (0..returns.len()).collect();
    order.sort_by_key(|&i| returns[i].client_id);

    let p_len = server.global_params.len();
    let layout = server.global_params.layout().clone();
    let inv_s = 1.0 / returns.len() as f64;
    let mut mean = vec![0.0; p_len];
    for &i in &order {
        axpy_slice(1.0, returns[i].params.values(), &mut mean);
    }
    for v in &mut mean {
        *v *= inv_s;
    }

    match cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedSam | Algorithm::FedSpeed => {
            server.global_params = ParamVector::from_values(layout, mean)?;
        }
        Algorithm::FedDyn | Algorithm::FedSmoo => {
            if cfg.alpha_dyn <= 0.0 {
                return Err(Error::Config(
                    "feddyn/fedsmoo require alpha_dyn > 0 (server divides by it)".into(),
                ));
            }
            let prev = server.global_params.values();
            let mut drift = vec![0.0; p_len];
            for &i in &order {
                let p = returns[i].params.values();
                for k in 0..p_len {
                    drift[k] += p[k] - prev[k];
                }
            }
            let scale = cfg.alpha_dyn / total_clients as f64;
            let mut h = match &server.dyn_h {
                Some(h) => h.values().to_vec(),
                None => vec![0.0; p_len],
            };
            for k in 0..p_len {
                h[k] -= scale * drift[k];
            }
            let inv_alpha = 1.0 / cfg.alpha_dyn;
            let mut new_global = mean;
            for k in 0..p_len {
                new_global[k] -= inv_alpha * h[k];
            }
            server.dyn_h = Some(ParamVector::from_values(layout.clone(), h)?);
            server.global_params = ParamVector::from_values(layout, new_global)?;
        }
        Algorithm::FedGamma => {
            let mut c = match &server.global_control {
                Some(c) => c.values().to_vec(),
                None => vec![0.0; p_len],
            };
            let scale = 1.0 / total_clients as f64;
            for &i in &order {
                let delta = returns[i].control_delta.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "fedgamma return from client {} is missing its control delta",
                        returns[i].client_id
                    ))
                })?;
                server.global_params.ensure_compatible(delta, "control delta")?;
                axpy_slice(scale, delta.values(), &mut c);
            }
            server.global_control = Some(ParamVector::from_values(layout.clone(), c)?);
            server.global_params = ParamVector::from_values(layout, mean)?;
        }
    }

    server.round_index += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelKind, ModelSpec, DEFAULT_GRID_RANGE};
    use crate::numkit::{flatten, NamedTensor};
    use crate::seeding::{stream_rng, Stream};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn vector(vals: &[f64]) -> ParamVector {
        flatten(&[NamedTensor::new("t", vec![vals.len()], vals.to_vec()).unwrap()]).unwrap()
    }

    fn grad(vals: &[f64]) -> GradVector {
        let pv = vector(vals);
        GradVector::from_values(pv.layout().clone(), pv.values().to_vec()).unwrap()
    }

    fn toy_setup(
        seed: u64,
        n_samples: usize,
    ) -> (Model, Matrix, Vec<usize>, Vec<usize>) {
        let spec = ModelSpec {
            kind: ModelKind::Kan,
            input_dim: 4,
            hidden_widths: vec![5],
            output_dim: 3,
            grid_size: 3,
            grid_range: DEFAULT_GRID_RANGE,
            preset: None,
        };
        let model = build_model(&spec, &mut stream_rng(seed, 0, 0, Stream::ModelInit)).unwrap();
        let mut rng = stream_rng(seed, 1, 0, Stream::SyntheticData);
        let feats: Vec<f64> = (0..n_samples * 4)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let labels: Vec<usize> = (0..n_samples).map(|_| rng.random_range(0..3)).collect();
        let indices: Vec<usize> = (0..n_samples).collect();
        (
            model,
            Matrix::from_vec(n_samples, 4, feats).unwrap(),
            labels,
            indices,
        )
    }

    fn run_local(
        model: &Model,
        features: &Matrix,
        labels: &[usize],
        indices: &[usize],
        cfg: &LocalTrainConfig,
        seed: u64,
    ) -> (LocalTrainOutcome, ClientState) {
        let server = ServerState::new(model.params().clone());
        let mut client = ClientState::new(0);
        let data = ClientData::new(features, labels, indices);
        let mut rng = stream_rng(seed, 1, 0, Stream::ClientTrain);
        let out = local_train(model, &server, &mut client, &data, cfg, &mut rng).unwrap();
        (out, client)
    }

    #[test]
    fn sam_perturbation_examples() {
        let g = grad(&[3.0, 4.0]);
        let eps = sam_perturbation(&g, 1.0);
        assert_eq!(eps.values(), &[0.6, 0.8]);
        assert_eq!(sam_perturbation(&g, 0.0).values(), &[0.0, 0.0]);
        let zero = grad(&[0.0, 0.0]);
        assert_eq!(sam_perturbation(&zero, 5.0).values(), &[0.0, 0.0]);
        // norm equals rho whenever the gradient is not numerically zero
        for rho in [0.01, 0.5, 2.0] {
            let eps = sam_perturbation(&grad(&[0.3, -1.2, 4.0]), rho);
            let norm = eps.l2_norm();
            assert!((norm - rho).abs() <= 1e-12 * rho);
        }
    }

    #[test]
    fn reduction_identities_bitwise() {
        let (model, feats, labels, idx) = toy_setup(21, 20);
        let base = LocalTrainConfig {
            epochs: 2,
            batch_size: 8,
            ..LocalTrainConfig::default()
        };
        let (avg, _) = run_local(&model, &feats, &labels, &idx, &base, 77);

        let variants = [
            LocalTrainConfig {
                algorithm: Algorithm::FedDyn,
                alpha_dyn: 0.0,
                ..base.clone()
            },
            LocalTrainConfig {
                algorithm: Algorithm::FedSam,
                rho: 0.0,
                ..base.clone()
            },
            LocalTrainConfig {
                algorithm: Algorithm::FedGamma,
                rho: 0.0,
                ..base.clone()
            },
            LocalTrainConfig {
                algorithm: Algorithm::FedSpeed,
                rho: 0.0,
                prox_weight: 0.0,
                merge_alpha: 0.0,
                ..base.clone()
            },
        ];
        for cfg in variants {
            let (out, _) = run_local(&model, &feats, &labels, &idx, &cfg, 77);
            assert_eq!(
                out.params.values(),
                avg.params.values(),
                "{:?} with vanishing knobs must equal fedavg bit-for-bit",
                cfg.algorithm
            );
        }

        // fedsmoo with rho = 0 equals feddyn at the same alpha_dyn
        let dyn_cfg = LocalTrainConfig {
            algorithm: Algorithm::FedDyn,
            alpha_dyn: 0.1,
            ..base.clone()
        };
        let smoo_cfg = LocalTrainConfig {
            algorithm: Algorithm::FedSmoo,
            alpha_dyn: 0.1,
            rho: 0.0,
            ..base
        };
        let (d, _) = run_local(&model, &feats, &labels, &idx, &dyn_cfg, 77);
        let (s, _) = run_local(&model, &feats, &labels, &idx, &smoo_cfg, 77);
        assert_eq!(d.params.values(), s.params.values());
    }

    #[test]
    fn feddyn_dual_after_one_round() {
        let (model, feats, labels, idx) = toy_setup(5, 16);
        let cfg = LocalTrainConfig {
            algorithm: Algorithm::FedDyn,
            epochs: 1,
            batch_size: 8,
            ..LocalTrainConfig::default()
        };
        let (out, client) = run_local(&model, &feats, &labels, &idx, &cfg, 3);
        let lambda = client.dyn_dual.unwrap();
        let tg = model.params().values();
        for ((&l, &tn), &g) in lambda.values().iter().zip(out.params.values()).zip(tg) {
            assert_eq!(l, -cfg.alpha_dyn * (tn - g));
        }
    }

    #[test]
    fn empty_client_data_is_an_error() {
        let (model, feats, labels, _) = toy_setup(9, 4);
        let server = ServerState::new(model.params().clone());
        let mut client = ClientState::new(3);
        let empty: Vec<usize> = vec![];
        let data = ClientData::new(&feats, &labels, &empty);
        let mut rng = stream_rng(0, 1, 3, Stream::ClientTrain);
        let r = local_train(
            &model,
            &server,
            &mut client,
            &data,
            &LocalTrainConfig::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(Error::EmptyClient { client_id: 3 })));
    }

    #[test]
    fn huge_learning_rate_diverges_with_client_id() {
        let spec = ModelSpec {
            kind: ModelKind::Mlp,
            input_dim: 4,
            hidden_widths: vec![8, 8],
            output_dim: 3,
            grid_size: 5,
            grid_range: DEFAULT_GRID_RANGE,
            preset: None,
        };
        let model = build_model(&spec, &mut stream_rng(2, 0, 0, Stream::ModelInit)).unwrap();
        let mut rng = stream_rng(2, 1, 0, Stream::SyntheticData);
        let feats: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let labels: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();
        let feats = Matrix::from_vec(16, 4, feats).unwrap();
        let indices: Vec<usize> = (0..16).collect();

        let server = ServerState::new(model.params().clone());
        let mut client = ClientState::new(7);
        let data = ClientData::new(&feats, &labels, &indices);
        let cfg = LocalTrainConfig {
            learning_rate: 1e30,
            epochs: 4,
            ..LocalTrainConfig::default()
        };
        let mut train_rng = stream_rng(2, 1, 7, Stream::ClientTrain);
        let r = local_train(&model, &server, &mut client, &data, &cfg, &mut train_rng);
        match r {
            Err(Error::Divergence { client_id, .. }) => assert_eq!(client_id, 7),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn mk_return(id: usize, vals: &[f64]) -> ClientReturn {
        ClientReturn {
            client_id: id,
            params: vector(vals),
            control_delta: None,
        }
    }

    #[test]
    fn fedavg_mean_of_two() {
        let mut server = ServerState::new(vector(&[0.0, 0.0]));
        let cfg = LocalTrainConfig::default();
        server_update(
            &cfg,
            &mut server,
            &[mk_return(0, &[0.0, 2.0]), mk_return(1, &[4.0, 6.0])],
            10,
        )
        .unwrap();
        assert_eq!(server.global_params.values(), &[2.0, 4.0]);
        assert_eq!(server.round_index, 1);
    }

    #[test]
    fn identical_returns_are_a_fixed_point_for_every_algorithm() {
        let theta = [0.25, -1.5, 3.0];
        for algo in ALGORITHMS {
            let cfg = LocalTrainConfig {
                algorithm: algo,
                ..LocalTrainConfig::default()
            };
            let mut server = ServerState::new(vector(&theta));
            let returns: Vec<ClientReturn> = (0..4)
                .map(|id| ClientReturn {
                    client_id: id,
                    params: vector(&theta),
                    control_delta: Some(vector(&[0.0, 0.0, 0.0])),
                })
                .collect();
            server_update(&cfg, &mut server, &returns, 8).unwrap();
            assert_eq!(
                server.global_params.values(),
                &theta,
                "{algo} must keep identical returns fixed"
            );
        }
    }

    #[test]
    fn feddyn_server_matches_scalar_oracle() {
        // N=4, two participants returning [1] and [3], alpha_dyn=0.1,
        // previous global [0], h=[0]
        let cfg = LocalTrainConfig {
            algorithm: Algorithm::FedDyn,
            alpha_dyn: 0.1,
            ..LocalTrainConfig::default()
        };
        let mut server = ServerState::new(vector(&[0.0]));
        server_update(
            &cfg,
            &mut server,
            &[mk_return(0, &[1.0]), mk_return(1, &[3.0])],
            4,
        )
        .unwrap();

        // independent scalar arithmetic
        let h = 0.0 - (0.1 / 4.0) * ((1.0 - 0.0) + (3.0 - 0.0));
        let tg = (1.0 + 3.0) / 2.0 - h / 0.1;
        assert_eq!(h, -0.1);
        assert_eq!(tg, 3.0);
        assert_eq!(server.dyn_h.as_ref().unwrap().values(), &[h]);
        assert_eq!(server.global_params.values(), &[tg]);
    }

    #[test]
    fn feddyn_zero_alpha_is_config_error() {
        let cfg = LocalTrainConfig {
            algorithm: Algorithm::FedDyn,
            alpha_dyn: 0.0,
            ..LocalTrainConfig::default()
        };
        let mut server = ServerState::new(vector(&[0.0]));
        let r = server_update(&cfg, &mut server, &[mk_return(0, &[1.0])], 4);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn fedgamma_control_update_matches_scalar_oracle() {
        let cfg = LocalTrainConfig {
            algorithm: Algorithm::FedGamma,
            ..LocalTrainConfig::default()
        };
        let mut server = ServerState::new(vector(&[0.0]));
        server.global_control = Some(vector(&[0.5]));
        let returns = vec![
            ClientReturn {
                client_id: 0,
                params: vector(&[2.0]),
                control_delta: Some(vector(&[1.0])),
            },
            ClientReturn {
                client_id: 1,
                params: vector(&[6.0]),
                control_delta: Some(vector(&[3.0])),
            },
        ];
        server_update(&cfg, &mut server, &returns, 4).unwrap();
        let c = 0.5 + (1.0 / 4.0) * 1.0 + (1.0 / 4.0) * 3.0;
        assert_eq!(server.global_control.as_ref().unwrap().values(), &[c]);
        assert_eq!(server.global_params.values(), &[4.0]);
    }

    #[test]
    fn fedgamma_missing_delta_is_config_error() {
        let cfg = LocalTrainConfig {
            algorithm: Algorithm::FedGamma,
            ..LocalTrainConfig::default()
        };
        let mut server = ServerState::new(vector(&[0.0]));
        let r = server_update(&cfg, &mut server, &[mk_return(0, &[1.0])], 4);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn server_update_is_order_independent() {
        let cfg = LocalTrainConfig::default();
        let returns = vec![
            mk_return(5, &[1.0, -2.0]),
            mk_return(1, &[0.3, 0.7]),
            mk_return(9, &[-4.0, 2.5]),
        ];
        let mut shuffled = returns.clone();
        shuffled.reverse();
        let mut a = ServerState::new(vector(&[0.0, 0.0]));
        let mut b = ServerState::new(vector(&[0.0, 0.0]));
        server_update(&cfg, &mut a, &returns, 10).unwrap();
        server_update(&cfg, &mut b, &shuffled, 10).unwrap();
        assert_eq!(a.global_params.values(), b.global_params.values());
    }

    #[test]
    fn mean_is_bounded_by_participants() {
        let cfg = LocalTrainConfig::default();
        let returns = vec![
            mk_return(0, &[1.0, -5.0]),
            mk_return(1, &[3.0, 2.0]),
            mk_return(2, &[-1.0, 0.5]),
        ];
        let mut server = ServerState::new(vector(&[0.0, 0.0]));
        server_update(&cfg, &mut server, &returns, 3).unwrap();
        for k in 0..2 {
            let col: Vec<f64> = returns.iter().map(|r| r.params.values()[k]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = server.global_params.values()[k];
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let cfg = LocalTrainConfig::default();
        let mut server = ServerState::new(vector(&[0.0, 0.0]));
        let r = server_update(&cfg, &mut server, &[mk_return(0, &[1.0])], 2);
        assert!(matches!(r, Err(Error::Layout(_))));
    }

    #[test]
    fn algorithm_names_parse_case_insensitively() {
        for a in ALGORITHMS {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(a.name().to_uppercase().parse::<Algorithm>().unwrap(), a);
        }
        assert!("fedfoo".parse::<Algorithm>().is_err());
    }
}
