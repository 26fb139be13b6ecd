//! Model families: FastKAN (layer-norm -> Gaussian RBF grid expansion ->
//! linear mixing) and ReLU MLP, with exact analytic backward passes.
//!
//! A KAN layer mapping `m` inputs to `p` outputs computes
//! `out = W * concat_i(rbf(layer_norm(a)_i)) + b` with `W` of shape
//! `p x (m*g)`; an MLP layer is a plain affine map with ReLU on hidden
//! layers. Parameters live in one flat vector laid out layer by layer,
//! weight then bias, so positional averaging across clients is meaningful.

use std::sync::Arc;

use rand::distr::Uniform;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{
    finite_difference_at, l2_norm_slice, softmax_cross_entropy, Batch, GradVector, Layout, Matrix,
    ParamVector, TensorMeta, DEFAULT_FD_STEP,
};
use crate::seeding::{stream_rng, Stream};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_GRID_SIZE: usize = 5;
pub const DEFAULT_GRID_RANGE: (f64, f64) = (-2.0, 2.0);
/// Hidden width used by the `mlp-*` baseline presets.
pub const MLP_HIDDEN_WIDTH: usize = 64;
/// Relative-norm tolerance for analytic-vs-numeric gradient agreement.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kan,
    Mlp,
}

/// Architecture description; `(spec, seed)` fully determines a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_grid_range")]
    pub grid_range: (f64, f64),
    #[serde(default)]
    pub preset: Option<String>,
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

fn default_grid_range() -> (f64, f64) {
    DEFAULT_GRID_RANGE
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Spec("input_dim and output_dim must be positive".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Spec("hidden widths must be positive".into()));
        }
        if self.kind == ModelKind::Kan {
            if self.grid_size < 2 {
                return Err(Error::Spec(format!(
                    "KAN grid_size must be >= 2, got {}",
                    self.grid_size
                )));
            }
            let (lo, hi) = self.grid_range;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Spec(format!("bad grid range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Layer widths including input and output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_widths);
        w.push(self.output_dim);
        w
    }

    /// Total learnable parameters: a KAN layer `m -> p` contributes
    /// `p*m*g + p`, an MLP layer `p*m + p`.
    pub fn param_count(&self) -> usize {
        self.widths()
            .windows(2)
            .map(|pair| {
                let (m, p) = (pair[0], pair[1]);
                match self.kind {
                    ModelKind::Kan => p * m * self.grid_size + p,
                    ModelKind::Mlp => p * m + p,
                }
            })
            .sum()
    }

    /// Short human-readable label, e.g. `kan-1` or `mlp[64,64]`.
    pub fn label(&self) -> String {
        if let Some(p) = &self.preset {
            return p.clone();
        }
        let widths: Vec<String> = self.hidden_widths.iter().map(|w| w.to_string()).collect();
        match self.kind {
            ModelKind::Kan => format!("kan[{}]g{}", widths.join(","), self.grid_size),
            ModelKind::Mlp => format!("mlp[{}]", widths.join(",")),
        }
    }
}

/// Names accepted by [`preset_spec`].
pub const PRESET_NAMES: [&str; 10] = [
    "kan-1", "kan-d1", "kan-d3", "kan-d5", "kan-w1", "kan-w3", "kan-w5", "mlp-1", "mlp-2",
    "mlp-3",
];

/// Builds the spec for a named preset. `grid_size` is ignored for MLPs.
///
/// KAN presets follow the depth/width ablation grid (`kan-d1` = `kan-w1` =
/// `kan-1`, hidden `[5]`); MLP baselines use 64-wide hidden layers.
pub fn preset_spec(
    name: &str,
    input_dim: usize,
    output_dim: usize,
    grid_size: usize,
) -> Result<ModelSpec> {
    let lower = name.to_ascii_lowercase();
    let (kind, hidden): (ModelKind, Vec<usize>) = match lower.as_str() {
        "kan-1" | "kan-d1" | "kan-w1" => (ModelKind::Kan, vec![5]),
        "kan-d3" => (ModelKind::Kan, vec![5, 5, 5]),
        "kan-d5" => (ModelKind::Kan, vec![5, 5, 5, 5, 5]),
        "kan-w3" => (ModelKind::Kan, vec![125]),
        "kan-w5" => (ModelKind::Kan, vec![3125]),
        "mlp-1" => (ModelKind::Mlp, vec![MLP_HIDDEN_WIDTH]),
        "mlp-2" => (ModelKind::Mlp, vec![MLP_HIDDEN_WIDTH; 2]),
        "mlp-3" => (ModelKind::Mlp, vec![MLP_HIDDEN_WIDTH; 3]),
        _ => {
            return Err(Error::Spec(format!(
                "unknown model preset `{name}` (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let spec = ModelSpec {
        kind,
        input_dim,
        hidden_widths: hidden,
        output_dim,
        grid_size,
        grid_range: DEFAULT_GRID_RANGE,
        preset: Some(lower),
    };
    spec.validate()?;
    Ok(spec)
}

/// Uniformly spaced Gaussian RBF centers over a fixed range.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfGrid {
    centers: Vec<f64>,
    bandwidth: f64,
}

impl RbfGrid {
    pub fn new(grid_size: usize, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if grid_size < 2 {
            return Err(Error::Spec("RBF grid needs at least 2 centers".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Spec(format!("bad grid range [{lo}, {hi}]")));
        }
        let bandwidth = (hi - lo) / (grid_size - 1) as f64;
        let centers = (0..grid_size).map(|k| lo + k as f64 * bandwidth).collect();
        Ok(Self { centers, bandwidth })
    }

    pub fn size(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Writes `exp(-((u - c_k)/bandwidth)^2)` for every center into `out`.
    pub fn expand_into(&self, u: f64, out: &mut [f64]) {
        let inv_bw = 1.0 / self.bandwidth;
        for (o, &c) in out.iter_mut().zip(&self.centers) {
            let t = (u - c) * inv_bw;
            *o = (-t * t).exp();
        }
    }
}

/// Gaussian RBF expansion of a scalar over the grid.
pub fn rbf_expand(u: f64, grid: &RbfGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.size()];
    grid.expand_into(u, &mut out);
    out
}

/// `(x - mean(x)) / sqrt(var(x) + eps)` with no learnable affine terms.
pub fn layer_norm(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    layer_norm_into(x, &mut out);
    out
}

/// Normalizes `x` into `out` and returns `1/sqrt(var + eps)`.
fn layer_norm_into(x: &[f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv_std;
    }
    inv_std
}

/// Backward through layer norm: given `du` (gradient at the normalized
/// output `u`), writes the gradient at the raw input into `dx`.
fn layer_norm_backward(du: &[f64], u: &[f64], inv_std: f64, dx: &mut [f64]) {
    let n = du.len() as f64;
    let mean_du = du.iter().sum::<f64>() / n;
    let mean_du_u = du.iter().zip(u).map(|(d, v)| d * v).sum::<f64>() / n;
    for ((out, &d), &v) in dx.iter_mut().zip(du).zip(u) {
        *out = inv_std * (d - mean_du - v * mean_du_u);
    }
}

#[derive(Debug, Clone)]
enum LayerOp {
    Kan(RbfGrid),
    MlpHidden,
    MlpOutput,
}

#[derive(Debug, Clone)]
struct LayerDef {
    in_dim: usize,
    out_dim: usize,
    op: LayerOp,
}

impl LayerDef {
    /// Width of the feature vector entering the linear map.
    fn fan_in(&self) -> usize {
        match &self.op {
            LayerOp::Kan(grid) => self.in_dim * grid.size(),
            _ => self.in_dim,
        }
    }
}

enum LayerCache {
    Kan {
        normed: Matrix,
        inv_std: Vec<f64>,
        features: Matrix,
    },
    MlpHidden {
        input: Matrix,
        activated: Matrix,
    },
    MlpOutput {
        input: Matrix,
    },
}

/// Per-layer activations recorded by a forward pass, sufficient for an
/// exact backward pass against the same parameters.
pub struct ForwardCache {
    rows: usize,
    params_tag: u64,
    layers: Vec<LayerCache>,
}

/// Cheap order-sensitive fingerprint used to detect stale caches.
fn params_tag(values: &[f64]) -> u64 {
    let mut h = (values.len() as u64) ^ 0x9e37_79b9_7f4a_7c15;
    for (i, v) in values.iter().enumerate() {
        h = h.rotate_left(1) ^ v.to_bits().rotate_left((i % 61) as u32);
    }
    h
}

/// An instantiated model: spec, flat parameters, per-layer structure.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerDef>,
    layout: Arc<Layout>,
    params: ParamVector,
}

/// Builds a model from its spec with Xavier-uniform weights and zero
/// biases; the same `(spec, rng seed)` yields bit-identical parameters.
pub fn build_model(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Model> {
    spec.validate()?;
    let widths = spec.widths();
    let n_layers = widths.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for (idx, pair) in widths.windows(2).enumerate() {
        let (m, p) = (pair[0], pair[1]);
        let op = match spec.kind {
            ModelKind::Kan => LayerOp::Kan(RbfGrid::new(spec.grid_size, spec.grid_range)?),
            ModelKind::Mlp if idx + 1 < n_layers => LayerOp::MlpHidden,
            ModelKind::Mlp => LayerOp::MlpOutput,
        };
        layers.push(LayerDef {
            in_dim: m,
            out_dim: p,
            op,
        });
    }

    let mut segments = Vec::with_capacity(2 * n_layers);
    for (idx, layer) in layers.iter().enumerate() {
        segments.push(TensorMeta::new(
            format!("layer{idx}.weight"),
            vec![layer.out_dim, layer.fan_in()],
        ));
        segments.push(TensorMeta::new(format!("layer{idx}.bias"), vec![layer.out_dim]));
    }
    let layout = Layout::new(segments)?;

    let mut params = ParamVector::zeros(layout.clone());
    for (idx, layer) in layers.iter().enumerate() {
        let bound = (6.0 / (layer.fan_in() + layer.out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::Spec(format!("init range: {e}")))?;
        for w in params.segment_mut(2 * idx) {
            *w = rng.sample(dist);
        }
        // biases stay zero
    }

    Ok(Model {
        spec: spec.clone(),
        layers,
        layout,
        params,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Replaces the model's parameters; the layout must match.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.ensure_compatible(&params, "set_params")?;
        self.params = params;
        Ok(())
    }

    /// Forward pass with the model's own parameters.
    pub fn forward(&self, batch: &Batch) -> Result<(Matrix, ForwardCache)> {
        self.forward_with(&self.params, batch)
    }

    /// Forward pass with explicit parameters (used by training loops that
    /// evaluate perturbed points without rebuilding the model).
    pub fn forward_with(&self, params: &ParamVector, batch: &Batch) -> Result<(Matrix, ForwardCache)> {
        self.params.ensure_compatible(params, "forward params")?;
        if batch.features.cols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "batch width {} does not match input_dim {}",
                batch.features.cols(),
                self.spec.input_dim
            )));
        }
        let n = batch.features.rows();
        if n == 0 {
            return Err(Error::Shape("forward on empty batch".into()));
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = batch.features.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let w = params.segment(2 * idx);
            let b = params.segment(2 * idx + 1);
            current = match &layer.op {
                LayerOp::Kan(grid) => {
                    let g = grid.size();
                    let mut normed = Matrix::zeros(n, layer.in_dim);
                    let mut inv_std = vec![0.0; n];
                    for (s, slot) in inv_std.iter_mut().enumerate() {
                        *slot = layer_norm_into(current.row(s), normed.row_mut(s));
                    }
                    let mut features = Matrix::zeros(n, layer.in_dim * g);
                    for s in 0..n {
                        let u = normed.row(s);
                        let frow = features.row_mut(s);
                        for i in 0..layer.in_dim {
                            grid.expand_into(u[i], &mut frow[i * g..(i + 1) * g]);
                        }
                    }
                    let out = linear_forward(&features, w, b, layer.out_dim);
                    caches.push(LayerCache::Kan {
                        normed,
                        inv_std,
                        features,
                    });
                    out
                }
                LayerOp::MlpHidden => {
                    let mut out = linear_forward(&current, w, b, layer.out_dim);
                    for v in out.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    let cache = LayerCache::MlpHidden {
                        input: current,
                        activated: out.clone(),
                    };
                    caches.push(cache);
                    out
                }
                LayerOp::MlpOutput => {
                    let out = linear_forward(&current, w, b, layer.out_dim);
                    caches.push(LayerCache::MlpOutput { input: current });
                    out
                }
            };
        }

        Ok((
            current,
            ForwardCache {
                rows: n,
                params_tag: params_tag(params.values()),
                layers: caches,
            },
        ))
    }

    /// Backward pass with the model's own parameters.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<GradVector> {
        self.backward_with(&self.params, cache, dlogits)
    }

    /// Exact analytic gradient of the batch loss whose logit-gradient is
    /// `dlogits`, with respect to every parameter.
    pub fn backward_with(
        &self,
        params: &ParamVector,
        cache: &ForwardCache,
        dlogits: &Matrix,
    ) -> Result<GradVector> {
        self.params.ensure_compatible(params, "backward params")?;
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Cache(format!(
                "cache has {} layers, model has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if cache.params_tag != params_tag(params.values()) {
            return Err(Error::Cache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if dlogits.rows() != cache.rows || dlogits.cols() != self.spec.output_dim {
            return Err(Error::Cache(format!(
                "dlogits is {}x{}, expected {}x{}",
                dlogits.rows(),
                dlogits.cols(),
                cache.rows,
                self.spec.output_dim
            )));
        }

        let n = cache.rows;
        let mut grad = GradVector::zeros(self.layout.clone());
        let mut d = dlogits.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let w = params.segment(2 * idx);
            match (&layer.op, &cache.layers[idx]) {
                (LayerOp::Kan(grid), LayerCache::Kan { normed, inv_std, features }) => {
                    {
                        let wr = self.layout.bounds(2 * idx);
                        let br = self.layout.bounds(2 * idx + 1);
                        let (dw, db) = {
                            let values = grad.values_mut();
                            let (head, tail) = values.split_at_mut(br.start);
                            (&mut head[wr.start..wr.end], &mut tail[..br.end - br.start])
                        };
                        linear_backward_params(&d, features, dw, db);
                    }
                    let dfeat = matmul_nn(&d, w, layer.fan_in());
                    let g = grid.size();
                    let inv_bw2 = 1.0 / (grid.bandwidth() * grid.bandwidth());
                    let centers = grid.centers();
                    let mut dprev = Matrix::zeros(n, layer.in_dim);
                    let mut du = vec![0.0; layer.in_dim];
                    for (s, &inv_std_s) in inv_std.iter().enumerate() {
                        let u = normed.row(s);
                        let frow = features.row(s);
                        let dfrow = dfeat.row(s);
                        for i in 0..layer.in_dim {
                            let mut acc = 0.0;
                            for (k, &c) in centers.iter().enumerate() {
                                let t = i * g + k;
                                acc += dfrow[t] * frow[t] * (-2.0 * (u[i] - c) * inv_bw2);
                            }
                            du[i] = acc;
                        }
                        layer_norm_backward(&du, u, inv_std_s, dprev.row_mut(s));
                    }
                    d = dprev;
                }
                (LayerOp::MlpHidden, LayerCache::MlpHidden { input, activated }) => {
                    // gate the incoming gradient by the ReLU mask
                    for s in 0..n {
                        let a = activated.row(s);
                        let dr = d.row_mut(s);
                        for j in 0..layer.out_dim {
                            if a[j] <= 0.0 {
                                dr[j] = 0.0;
                            }
                        }
                    }
                    {
                        let wr = self.layout.bounds(2 * idx);
                        let br = self.layout.bounds(2 * idx + 1);
                        let (dw, db) = {
                            let values = grad.values_mut();
                            let (head, tail) = values.split_at_mut(br.start);
                            (&mut head[wr.start..wr.end], &mut tail[..br.end - br.start])
                        };
                        linear_backward_params(&d, input, dw, db);
                    }
                    d = matmul_nn(&d, w, layer.in_dim);
                }
                (LayerOp::MlpOutput, LayerCache::MlpOutput { input }) => {
                    {
                        let wr = self.layout.bounds(2 * idx);
                        let br = self.layout.bounds(2 * idx + 1);
                        let (dw, db) = {
                            let values = grad.values_mut();
                            let (head, tail) = values.split_at_mut(br.start);
                            (&mut head[wr.start..wr.end], &mut tail[..br.end - br.start])
                        };
                        linear_backward_params(&d, input, dw, db);
                    }
                    d = matmul_nn(&d, w, layer.in_dim);
                }
                _ => {
                    return Err(Error::Cache(format!(
                        "cache entry {idx} does not match layer kind"
                    )))
                }
            }
        }
        Ok(grad)
    }

    /// Mean cross-entropy loss and its full parameter gradient on a batch.
    pub fn loss_and_grad_with(
        &self,
        params: &ParamVector,
        batch: &Batch,
    ) -> Result<(f64, GradVector)> {
        let (logits, cache) = self.forward_with(params, batch)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
        let grad = self.backward_with(params, &cache, &dlogits)?;
        Ok((loss, grad))
    }

    /// Mean cross-entropy loss only.
    pub fn loss_with(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        let (logits, _) = self.forward_with(params, batch)?;
        Ok(softmax_cross_entropy(&logits, &batch.labels)?.0)
    }
}

/// `x (n x m) * w^T (m x p) + b`, with `w` stored row-major `p x m`.
fn linear_forward(x: &Matrix, w: &[f64], b: &[f64], out_dim: usize) -> Matrix {
    let n = x.rows();
    let m = x.cols();
    let mut out = Matrix::zeros(n, out_dim);
    for s in 0..n {
        let xr = x.row(s);
        let or = out.row_mut(s);
        for j in 0..out_dim {
            let wj = &w[j * m..(j + 1) * m];
            let mut acc = b[j];
            for t in 0..m {
                acc += wj[t] * xr[t];
            }
            or[j] = acc;
        }
    }
    out
}

/// Accumulates `dw += d^T x` and `db += colsum(d)`.
fn linear_backward_params(d: &Matrix, x: &Matrix, dw: &mut [f64], db: &mut [f64]) {
    let n = d.rows();
    let p = d.cols();
    let m = x.cols();
    for s in 0..n {
        let dr = d.row(s);
        let xr = x.row(s);
        for j in 0..p {
            let dj = dr[j];
            if dj == 0.0 {
                continue;
            }
            let wj = &mut dw[j * m..(j + 1) * m];
            for t in 0..m {
                wj[t] += dj * xr[t];
            }
            db[j] += dj;
        }
    }
}

/// `d (n x p) * w (p x m)` with `w` row-major.
fn matmul_nn(d: &Matrix, w: &[f64], m: usize) -> Matrix {
    let n = d.rows();
    let p = d.cols();
    let mut out = Matrix::zeros(n, m);
    for s in 0..n {
        let dr = d.row(s);
        let or = out.row_mut(s);
        for j in 0..p {
            let dj = dr[j];
            if dj == 0.0 {
                continue;
            }
            let wj = &w[j * m..(j + 1) * m];
            for t in 0..m {
                or[t] += dj * wj[t];
            }
        }
    }
    out
}

/// Per-segment result of an analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckLayer {
    pub name: String,
    pub checked: usize,
    pub rel_error: f64,
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub spec_label: String,
    pub batches: usize,
    /// Worst over batches of `||fd - analytic|| / max(||fd||, 1e-12)`
    /// over the checked coordinates.
    pub max_rel_error: f64,
    pub per_layer: Vec<GradCheckLayer>,
    pub checked_coords: usize,
    pub total_coords: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOL
    }
}

/// Compares the analytic backward pass against central finite differences
/// on `num_batches` random batches.
///
/// Models larger than `max_coords` parameters are checked on a seeded
/// random coordinate subset (full finite differences over hundred-thousand
/// parameter models would dwarf any runtime budget); smaller models are
/// checked exhaustively. `inject_error`, when set, perturbs the analytic
/// gradient before comparison and is the negative control for the check
/// itself.
pub fn gradient_check(
    spec: &ModelSpec,
    seed: u64,
    num_batches: usize,
    batch_size: usize,
    max_coords: usize,
    inject_error: Option<f64>,
) -> Result<GradCheckReport> {
    spec.validate()?;
    let mut init_rng = stream_rng(seed, 0, 0, Stream::ModelInit);
    let model = build_model(spec, &mut init_rng)?;
    let total = model.param_count();

    let mut per_layer: Vec<GradCheckLayer> = model
        .layout()
        .segments()
        .iter()
        .map(|s| GradCheckLayer {
            name: s.name.clone(),
            checked: 0,
            rel_error: 0.0,
        })
        .collect();
    let mut max_rel = 0.0f64;
    let mut checked_coords = 0;

    for b in 0..num_batches {
        let mut rng = stream_rng(seed, b as u64 + 1, 0, Stream::GradCheck);
        let mut feats = Vec::with_capacity(batch_size * spec.input_dim);
        for _ in 0..batch_size * spec.input_dim {
            feats.push(rng.sample::<f64, _>(StandardNormal));
        }
        let labels: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..spec.output_dim))
            .collect();
        let batch = Batch::new(Matrix::from_vec(batch_size, spec.input_dim, feats)?, labels)?;

        let (_, analytic) = model.loss_and_grad_with(model.params(), &batch)?;
        let mut analytic = analytic;
        if let Some(c) = inject_error {
            for v in analytic.values_mut().iter_mut() {
                *v += c * (v.abs() + 0.1);
            }
        }

        let coords: Vec<usize> = if total <= max_coords {
            (0..total).collect()
        } else {
            let mut picked = rand::seq::index::sample(&mut rng, total, max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        checked_coords = coords.len();

        let fd = finite_difference_at(
            |p| model.loss_with(p, &batch).unwrap_or(f64::NAN),
            model.params(),
            DEFAULT_FD_STEP,
            &coords,
        )?;

        let an: Vec<f64> = coords.iter().map(|&k| analytic.values()[k]).collect();
        let diff: Vec<f64> = an.iter().zip(&fd).map(|(a, f)| a - f).collect();
        let rel = l2_norm_slice(&diff) / l2_norm_slice(&fd).max(1e-12);
        max_rel = max_rel.max(rel);

        // per-segment breakdown
        for (si, layer) in per_layer.iter_mut().enumerate() {
            let bounds = model.layout().bounds(si);
            let mut d2 = 0.0;
            let mut f2 = 0.0;
            let mut cnt = 0;
            for (ci, &k) in coords.iter().enumerate() {
                if bounds.contains(&k) {
                    d2 += diff[ci] * diff[ci];
                    f2 += fd[ci] * fd[ci];
                    cnt += 1;
                }
            }
            if cnt > 0 {
                let r = d2.sqrt() / f2.sqrt().max(1e-12);
                layer.rel_error = layer.rel_error.max(r);
                layer.checked = layer.checked.max(cnt);
            }
        }
    }

    Ok(GradCheckReport {
        spec_label: spec.label(),
        batches: num_batches,
        max_rel_error: max_rel,
        per_layer,
        checked_coords,
        total_coords: total,
    })
}
