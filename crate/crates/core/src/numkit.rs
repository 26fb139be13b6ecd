//! Minimal dense numerics: flat parameter vectors with a layout map,
//! vector algebra, softmax cross-entropy with analytic gradient, and a
//! central finite-difference gradient oracle.
//!
//! Everything is 64-bit and allocation-explicit; all operations are pure
//! functions over immutable inputs.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Default step for central finite differences.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Name and shape of one tensor segment inside a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorMeta {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    /// Number of elements in this segment.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of tensor segments describing how a flat vector maps back
/// to model tensors. The order is fixed and identical across all clients
/// and the server for a given model spec; aggregation is positional.
#[derive(Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<TensorMeta>,
    offsets: Vec<usize>,
    total_len: usize,
}

impl Layout {
    pub fn new(segments: Vec<TensorMeta>) -> Result<Arc<Self>> {
        if segments.is_empty() {
            return Err(Error::Layout("layout has no segments".into()));
        }
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0usize;
        for seg in &segments {
            if seg.is_empty() {
                return Err(Error::Layout(format!(
                    "segment `{}` has zero elements (shape {:?})",
                    seg.name, seg.shape
                )));
            }
            offsets.push(total);
            total += seg.len();
        }
        Ok(Arc::new(Self {
            segments,
            offsets,
            total_len: total,
        }))
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn segments(&self) -> &[TensorMeta] {
        &self.segments
    }

    /// Half-open index range of segment `i` inside the flat vector.
    pub fn bounds(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.offsets[i];
        start..start + self.segments[i].len()
    }
}

fn layouts_match(a: &Arc<Layout>, b: &Arc<Layout>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Flat parameter vector: the unit of communication and aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

/// Flat gradient vector, layout-compatible with the parameters it
/// differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

macro_rules! flat_vector_impl {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(layout: Arc<Layout>) -> Self {
                let n = layout.total_len();
                Self {
                    layout,
                    values: vec![0.0; n],
                }
            }

            pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
                if values.len() != layout.total_len() {
                    return Err(Error::Layout(format!(
                        "value length {} does not match layout length {}",
                        values.len(),
                        layout.total_len()
                    )));
                }
                Ok(Self { layout, values })
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn layout(&self) -> &Arc<Layout> {
                &self.layout
            }

            /// Values of layout segment `i`.
            pub fn segment(&self, i: usize) -> &[f64] {
                &self.values[self.layout.bounds(i)]
            }

            pub fn segment_mut(&mut self, i: usize) -> &mut [f64] {
                let r = self.layout.bounds(i);
                &mut self.values[r]
            }

            pub fn l2_norm(&self) -> f64 {
                self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn all_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }
        }
    };
}

flat_vector_impl!(ParamVector);
flat_vector_impl!(GradVector);

impl ParamVector {
    pub fn compatible(&self, other: &ParamVector) -> bool {
        layouts_match(&self.layout, &other.layout)
    }

    pub fn ensure_compatible(&self, other: &ParamVector, what: &str) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!("{what}: incompatible layouts")))
        }
    }

    pub fn compatible_grad(&self, grad: &GradVector) -> bool {
        layouts_match(&self.layout, &grad.layout)
    }
}

impl GradVector {
    pub fn zeros_like(params: &ParamVector) -> Self {
        Self::zeros(params.layout().clone())
    }

    /// Reinterpret as a parameter vector (same layout and values).
    pub fn into_params(self) -> ParamVector {
        ParamVector {
            layout: self.layout,
            values: self.values,
        }
    }
}

/// A named dense tensor, the unit flattened into a `ParamVector`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self {
            name: name.into(),
            shape,
            data,
        })
    }
}

/// Concatenates named tensors into a flat vector, row-major, in list order.
/// `unflatten(flatten(x)) == x` exactly.
pub fn flatten(tensors: &[NamedTensor]) -> Result<ParamVector> {
    if tensors.is_empty() {
        return Err(Error::Layout("cannot flatten an empty tensor list".into()));
    }
    let layout = Layout::new(
        tensors
            .iter()
            .map(|t| TensorMeta::new(t.name.clone(), t.shape.clone()))
            .collect(),
    )?;
    let mut values = Vec::with_capacity(layout.total_len());
    for t in tensors {
        values.extend_from_slice(&t.data);
    }
    ParamVector::from_values(layout, values)
}

/// Flattens tensors against an already-declared layout, checking that
/// names and shapes match segment by segment.
pub fn flatten_with_layout(layout: &Arc<Layout>, tensors: &[NamedTensor]) -> Result<ParamVector> {
    if tensors.len() != layout.segments().len() {
        return Err(Error::Layout(format!(
            "expected {} tensors, got {}",
            layout.segments().len(),
            tensors.len()
        )));
    }
    for (seg, t) in layout.segments().iter().zip(tensors) {
        if seg.name != t.name || seg.shape != t.shape {
            return Err(Error::Layout(format!(
                "tensor `{}` {:?} does not match layout segment `{}` {:?}",
                t.name, t.shape, seg.name, seg.shape
            )));
        }
    }
    let mut values = Vec::with_capacity(layout.total_len());
    for t in tensors {
        values.extend_from_slice(&t.data);
    }
    ParamVector::from_values(layout.clone(), values)
}

/// Splits a flat vector back into its named tensors.
pub fn unflatten(params: &ParamVector) -> Vec<NamedTensor> {
    params
        .layout()
        .segments()
        .iter()
        .enumerate()
        .map(|(i, seg)| NamedTensor {
            name: seg.name.clone(),
            shape: seg.shape.clone(),
            data: params.segment(i).to_vec(),
        })
        .collect()
}

/// Element-wise `a * x + y`. Operands are unmodified.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    x.ensure_compatible(y, "axpy")?;
    let values = x
        .values()
        .iter()
        .zip(y.values())
        .map(|(xi, yi)| a * xi + yi)
        .collect();
    ParamVector::from_values(x.layout().clone(), values)
}

/// In-place `y += a * x` over raw slices of equal length.
pub(crate) fn axpy_slice(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn l2_norm_slice(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// A mini-batch: feature rows plus integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean softmax cross-entropy over a batch of logits, with its gradient.
///
/// Returns `(loss, dlogits)` where `loss = mean_i -log softmax(logits_i)[y_i]`
/// and `dlogits = (softmax - onehot) / n`. Stabilized by max-subtraction.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    let c = logits.cols();
    if n == 0 {
        return Err(Error::Shape("softmax_cross_entropy on empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Shape(format!("label {bad} out of range for {c} classes")));
    }

    let mut dlogits = Matrix::zeros(n, c);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss += -(row[labels[i]] - max - log_denom);
        let out = dlogits.row_mut(i);
        for k in 0..c {
            out[k] = ((row[k] - max).exp() / denom) * inv_n;
        }
        out[labels[i]] -= inv_n;
    }
    Ok((loss * inv_n, dlogits))
}

/// Central finite differences of `f` at `theta` over the given coordinates:
/// `(f(theta + h e_k) - f(theta - h e_k)) / (2 h)`.
pub fn finite_difference_at(
    mut f: impl FnMut(&ParamVector) -> f64,
    theta: &ParamVector,
    h: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Numeric(format!("finite-difference step {h} must be positive")));
    }
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &k in coords {
        let original = probe.values()[k];
        probe.values_mut()[k] = original + h;
        let plus = f(&probe);
        probe.values_mut()[k] = original - h;
        let minus = f(&probe);
        probe.values_mut()[k] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite objective at coordinate {k} during finite differencing"
            )));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Full central finite-difference gradient of `f` at `theta`.
pub fn finite_difference_gradient(
    f: impl FnMut(&ParamVector) -> f64,
    theta: &ParamVector,
    h: f64,
) -> Result<GradVector> {
    let coords: Vec<usize> = (0..theta.len()).collect();
    let values = finite_difference_at(f, theta, h, &coords)?;
    GradVector::from_values(theta.layout().clone(), values)
}
