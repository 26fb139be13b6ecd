//! Dataset generation and loading, Dirichlet non-IID client partitioning,
//! and partition heterogeneity statistics.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::seeding::{stream_rng, Stream};

/// Samples per client the partitioner guarantees.
pub const MIN_CLIENT_SAMPLES: usize = 2;
/// Whole-plan redraws before the partitioner falls back to repair.
pub const PARTITION_MAX_ATTEMPTS: usize = 100;
/// Placement attempts per class mean in `synthetic_blobs`.
const MEAN_PLACEMENT_TRIES: usize = 1000;

/// A labeled dense dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Generation(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Generation("dataset needs at least one class".into()));
        }
        if labels.len() < num_classes {
            return Err(Error::Generation(format!(
                "{} samples cannot cover {num_classes} classes",
                labels.len()
            )));
        }
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::Generation(format!(
                    "label {l} out of range for {num_classes} classes"
                )));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Generation(format!(
                "class {missing} has no samples"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Gaussian class blobs: a desk-scale stand-in for real image exports.
///
/// Class means are drawn uniformly in `[-1, 1]^dim` with pairwise distance
/// at least `2 * spread` enforced by rejection; samples are
/// `mean + Normal(0, spread^2 I)`. Deterministic for a given RNG stream.
pub fn synthetic_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Generation("need at least 2 classes".into()));
    }
    if dim < 2 {
        return Err(Error::Generation("need at least 2 feature dimensions".into()));
    }
    if per_class == 0 {
        return Err(Error::Generation("per_class must be positive".into()));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::Generation(format!("spread must be positive, got {spread}")));
    }

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let mut placed = false;
        for _ in 0..MEAN_PLACEMENT_TRIES {
            let candidate: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let ok = means.iter().all(|m| {
                let d2: f64 = m
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= 2.0 * spread
            });
            if ok {
                means.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place mean for class {c} with spread {spread} after {MEAN_PLACEMENT_TRIES} tries"
            )));
        }
    }

    let n = num_classes * per_class;
    let mut feats = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                feats.push(m + spread * noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Matrix::from_vec(n, dim, feats)?,
        labels,
        num_classes,
        format!("blobs-c{num_classes}-d{dim}-n{per_class}"),
    )
}

/// Mapping from client index to training-sample indices.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionPlan {
    /// Partitions `labels` across `num_clients` with its own RNG stream
    /// derived from `seed`, recording `(alpha, seed)` in the plan.
    pub fn build(
        labels: &[usize],
        num_clients: usize,
        alpha: f64,
        min_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream_rng(seed, 0, 0, Stream::Partition);
        let assignments = dirichlet_partition(labels, num_clients, alpha, min_samples, &mut rng)?;
        Ok(Self {
            assignments,
            alpha,
            seed,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Checks disjointness, full coverage of `0..n`, and the min-samples
    /// floor; used by tests and the partition-stats command.
    pub fn check(&self, n: usize, min_samples: usize) -> Result<()> {
        let mut seen = vec![false; n];
        let mut total = 0usize;
        for (k, idxs) in self.assignments.iter().enumerate() {
            if idxs.len() < min_samples {
                return Err(Error::Partition(format!(
                    "client {k} has {} samples, below the {min_samples} floor",
                    idxs.len()
                )));
            }
            for &i in idxs {
                if i >= n || seen[i] {
                    return Err(Error::Partition(format!(
                        "index {i} out of range or assigned twice"
                    )));
                }
                seen[i] = true;
                total += 1;
            }
        }
        if total != n {
            return Err(Error::Partition(format!("{total} of {n} indices covered")));
        }
        Ok(())
    }
}

/// Symmetric Dirichlet proportions over `n` clients.
///
/// Drawn in log space via the boosting identity
/// `Gamma(alpha) = Gamma(1 + alpha) * U^(1/alpha)` and normalized with a
/// log-sum-exp, which keeps tiny-alpha draws finite where naive Gamma
/// sampling underflows to all-zero.
fn dirichlet_proportions(alpha: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(1.0 + alpha, 1.0)
        .map_err(|e| Error::Partition(format!("gamma({}) setup: {e}", 1.0 + alpha)))?;
    let mut logs = Vec::with_capacity(n);
    for _ in 0..n {
        let g: f64 = gamma.sample(rng);
        let u: f64 = 1.0 - rng.random::<f64>(); // in (0, 1]
        logs.push(g.ln() + u.ln() / alpha);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut props: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = props.iter().sum();
    for p in &mut props {
        *p /= sum;
    }
    Ok(props)
}

/// Per-class Dirichlet allocation: for each class, draw proportions
/// `p ~ Dirichlet(alpha * 1_N)` and split that class's shuffled indices by
/// cumulative share. The whole draw is repeated (fresh randomness from the
/// same stream) until every client holds `min_samples`, up to
/// [`PARTITION_MAX_ATTEMPTS`] times; after that the final draw is repaired
/// deterministically by moving tail samples from the richest clients to
/// starving ones. At `alpha * N` well below one, a Dirichlet draw puts
/// essentially a whole class on one client, so no redraw can cover more
/// clients than there are classes; the repair keeps extreme-alpha grid
/// points runnable.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    alpha: f64,
    min_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if num_clients == 0 {
        return Err(Error::Partition("num_clients must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Partition(format!("alpha must be positive, got {alpha}")));
    }
    if labels.len() < num_clients * min_samples {
        return Err(Error::Partition(format!(
            "{} samples cannot give {num_clients} clients {min_samples} each",
            labels.len()
        )));
    }

    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut class_indices: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        class_indices[l].push(i);
    }

    let mut last: Option<Vec<Vec<usize>>> = None;
    for _attempt in 0..PARTITION_MAX_ATTEMPTS {
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for idxs in &class_indices {
            if idxs.is_empty() {
                continue;
            }
            let mut shuffled = idxs.clone();
            shuffled.shuffle(rng);
            let props = dirichlet_proportions(alpha, num_clients, rng)?;
            allocate_by_cumulative_share(&shuffled, &props, &mut assignments);
        }
        if assignments.iter().all(|a| a.len() >= min_samples) {
            return Ok(assignments);
        }
        last = Some(assignments);
    }

    let mut assignments = last.expect("at least one attempt ran");
    repair_starving_clients(&mut assignments, min_samples)?;
    Ok(assignments)
}

fn allocate_by_cumulative_share(
    shuffled: &[usize],
    proportions: &[f64],
    assignments: &mut [Vec<usize>],
) {
    let n_c = shuffled.len();
    let mut cum = 0.0;
    let mut start = 0usize;
    for (k, &p) in proportions.iter().enumerate() {
        cum += p;
        let end = if k + 1 == proportions.len() {
            n_c
        } else {
            (((cum * n_c as f64).round() as usize).min(n_c)).max(start)
        };
        assignments[k].extend_from_slice(&shuffled[start..end]);
        start = end;
    }
}

/// Moves tail samples from the richest clients (ties broken toward the
/// lowest id) to clients below the floor. Taking each client's fill from a
/// single donor keeps the stolen samples class-pure, so repaired plans
/// stay as skewed as the draw that produced them.
fn repair_starving_clients(assignments: &mut [Vec<usize>], min_samples: usize) -> Result<()> {
    let n_clients = assignments.len();
    for k in 0..n_clients {
        while assignments[k].len() < min_samples {
            let need = min_samples - assignments[k].len();
            let donor = (0..n_clients)
                .filter(|&j| j != k && assignments[j].len() > min_samples)
                .max_by(|&a, &b| {
                    assignments[a]
                        .len()
                        .cmp(&assignments[b].len())
                        .then(b.cmp(&a))
                })
                .ok_or_else(|| {
                    Error::Partition("no donor client with surplus samples".into())
                })?;
            let surplus = assignments[donor].len() - min_samples;
            let take = need.min(surplus);
            let at = assignments[donor].len() - take;
            let moved: Vec<usize> = assignments[donor].split_off(at);
            assignments[k].extend(moved);
        }
    }
    Ok(())
}

/// Per-client class histograms plus a scalar heterogeneity score.
#[derive(Debug, Clone)]
pub struct PartitionStats {
    /// `counts[client][class]` sample counts.
    pub counts: Vec<Vec<usize>>,
    /// Mean over non-empty clients of the total-variation distance between
    /// the client's class distribution and the global one.
    pub heterogeneity: f64,
}

pub fn partition_stats(
    assignments: &[Vec<usize>],
    labels: &[usize],
    num_classes: usize,
) -> PartitionStats {
    let mut global = vec![0.0f64; num_classes];
    for &l in labels {
        global[l] += 1.0;
    }
    let n = labels.len() as f64;
    for g in &mut global {
        *g /= n;
    }

    let mut counts = vec![vec![0usize; num_classes]; assignments.len()];
    let mut tv_sum = 0.0;
    let mut non_empty = 0usize;
    for (k, idxs) in assignments.iter().enumerate() {
        for &i in idxs {
            counts[k][labels[i]] += 1;
        }
        if !idxs.is_empty() {
            let m = idxs.len() as f64;
            let tv: f64 = counts[k]
                .iter()
                .zip(&global)
                .map(|(&c, &g)| (c as f64 / m - g).abs())
                .sum::<f64>()
                * 0.5;
            tv_sum += tv;
            non_empty += 1;
        }
    }
    PartitionStats {
        counts,
        heterogeneity: if non_empty == 0 {
            0.0
        } else {
            tv_sum / non_empty as f64
        },
    }
}

const FKB_MAGIC: &[u8; 4] = b"FKB1";

/// Writes a dataset in the FKB binary format (little-endian):
/// magic `FKB1` | u32 n | u32 d | u32 C | n*d float32 row-major | n uint16.
pub fn save_fkb(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let n = dataset.len();
    let d = dataset.dim();
    let c = dataset.num_classes;
    if n > u32::MAX as usize || d > u32::MAX as usize {
        return Err(Error::Generation("dataset too large for FKB header".into()));
    }
    if c > u16::MAX as usize + 1 {
        return Err(Error::Generation(format!(
            "{c} classes exceed FKB's uint16 labels"
        )));
    }
    let mut bytes = Vec::with_capacity(16 + n * d * 4 + n * 2);
    bytes.extend_from_slice(FKB_MAGIC);
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.extend_from_slice(&(c as u32).to_le_bytes());
    for &v in dataset.features.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in &dataset.labels {
        bytes.extend_from_slice(&(l as u16).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads an FKB file, validating magic, sizes, and label range; errors
/// carry the byte offset where parsing failed.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || &bytes[0..4] != FKB_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: format!("missing FKB1 magic in {}", path.display()),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: "truncated header".into(),
        });
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let n = read_u32(4);
    let d = read_u32(8);
    let c = read_u32(12);
    if n == 0 || d == 0 || c == 0 {
        return Err(Error::Format {
            offset: 4,
            detail: format!("degenerate header n={n} d={d} C={c}"),
        });
    }

    let feat_bytes = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .ok_or_else(|| Error::Format {
            offset: 4,
            detail: "feature block size overflows".into(),
        })?;
    let expected = 16 + feat_bytes + n * 2;
    if bytes.len() < expected {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("file is {} bytes, expected {expected}", bytes.len()),
        });
    }

    let mut feats = Vec::with_capacity(n * d);
    for chunk in bytes[16..16 + feat_bytes].chunks_exact(4) {
        feats.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }

    let mut labels = Vec::with_capacity(n);
    let label_base = 16 + feat_bytes;
    for (i, chunk) in bytes[label_base..label_base + n * 2].chunks_exact(2).enumerate() {
        let l = u16::from_le_bytes(chunk.try_into().unwrap()) as usize;
        if l >= c {
            return Err(Error::Format {
                offset: (label_base + 2 * i) as u64,
                detail: format!("record {i} has label {l}, but C={c}"),
            });
        }
        labels.push(l);
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fkb".into());
    Dataset::new(Matrix::from_vec(n, d, feats)?, labels, c, name).map_err(|e| Error::Format {
        offset: 16,
        detail: e.to_string(),
    })
}

/// A standardized train/test split.
#[derive(Debug, Clone)]
pub struct TrainTest {
    pub train: Dataset,
    pub test: Dataset,
}

/// Stratified split followed by ingestion normalization: columns are
/// min-max scaled to [0, 1] and then standardized, with both sets of
/// statistics computed on the training split only.
pub fn split_standardize(
    dataset: &Dataset,
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainTest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..dataset.num_classes {
        let mut idxs: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == c)
            .collect();
        if idxs.len() < 2 {
            return Err(Error::Config(format!(
                "class {c} has {} samples, too few to split",
                idxs.len()
            )));
        }
        idxs.shuffle(rng);
        let n_test = ((test_fraction * idxs.len() as f64).round() as usize)
            .clamp(1, idxs.len() - 1);
        test_idx.extend_from_slice(&idxs[..n_test]);
        train_idx.extend_from_slice(&idxs[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let d = dataset.dim();
    let gather = |idxs: &[usize]| -> (Vec<f64>, Vec<usize>) {
        let mut feats = Vec::with_capacity(idxs.len() * d);
        let mut labels = Vec::with_capacity(idxs.len());
        for &i in idxs {
            feats.extend_from_slice(dataset.features.row(i));
            labels.push(dataset.labels[i]);
        }
        (feats, labels)
    };
    let (mut train_feats, train_labels) = gather(&train_idx);
    let (mut test_feats, test_labels) = gather(&test_idx);

    // fit min-max on train
    let n_train = train_idx.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in train_feats.chunks_exact(d) {
        for (j, &v) in row.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let span: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(&a, &b)| if b > a { b - a } else { 0.0 })
        .collect();
    let to01 = |feats: &mut [f64]| {
        for row in feats.chunks_exact_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if span[j] > 0.0 { (*v - lo[j]) / span[j] } else { 0.0 };
            }
        }
    };
    to01(&mut train_feats);
    to01(&mut test_feats);

    // fit mean/std of the scaled train columns
    let mut mean = vec![0.0; d];
    for row in train_feats.chunks_exact(d) {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= n_train as f64;
    }
    let mut var = vec![0.0; d];
    for row in train_feats.chunks_exact(d) {
        for (j, &v) in row.iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    for v in &mut var {
        *v /= n_train as f64;
    }
    let std: Vec<f64> = var.iter().map(|&v| v.sqrt()).collect();
    let standardize = |feats: &mut [f64]| {
        for row in feats.chunks_exact_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if std[j] > 0.0 { (*v - mean[j]) / std[j] } else { 0.0 };
            }
        }
    };
    standardize(&mut train_feats);
    standardize(&mut test_feats);

    Ok(TrainTest {
        train: Dataset::new(
            Matrix::from_vec(n_train, d, train_feats)?,
            train_labels,
            dataset.num_classes,
            format!("{}-train", dataset.name),
        )?,
        test: Dataset::new(
            Matrix::from_vec(test_idx.len(), d, test_feats)?,
            test_labels,
            dataset.num_classes,
            format!("{}-test", dataset.name),
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes)
            .flat_map(|c| std::iter::repeat_n(c, per_class))
            .collect()
    }

    fn part_rng(seed: u64) -> ChaCha8Rng {
        stream_rng(seed, 0, 0, Stream::Partition)
    }

    fn score_for(labels: &[usize], n: usize, alpha: f64, seed: u64, classes: usize) -> f64 {
        let plan = PartitionPlan::build(labels, n, alpha, MIN_CLIENT_SAMPLES, seed).unwrap();
        plan.check(labels.len(), MIN_CLIENT_SAMPLES).unwrap();
        partition_stats(&plan.assignments, labels, classes).heterogeneity
    }

    #[test]
    fn partition_covers_and_respects_floor() {
        let labels = balanced_labels(8, 500);
        let plan = PartitionPlan::build(&labels, 100, 1.0, MIN_CLIENT_SAMPLES, 0).unwrap();
        assert_eq!(plan.num_clients(), 100);
        plan.check(labels.len(), MIN_CLIENT_SAMPLES).unwrap();
    }

    #[test]
    fn single_client_owns_everything() {
        let labels = balanced_labels(3, 10);
        for alpha in [0.01, 1.0, 100.0] {
            let assign =
                dirichlet_partition(&labels, 1, alpha, 1, &mut part_rng(1)).unwrap();
            assert_eq!(assign[0].len(), 30);
        }
    }

    #[test]
    fn huge_alpha_is_nearly_uniform() {
        // alpha=1000, N=10, 8 classes x 1000: per-client class histograms
        // within 20% relative of the uniform 100 per cell, over 5 seeds
        let labels = balanced_labels(8, 1000);
        for seed in 0..5 {
            let plan = PartitionPlan::build(&labels, 10, 1000.0, MIN_CLIENT_SAMPLES, seed).unwrap();
            let stats = partition_stats(&plan.assignments, &labels, 8);
            for row in &stats.counts {
                for &count in row {
                    let rel = (count as f64 - 100.0).abs() / 100.0;
                    assert!(rel <= 0.2, "cell count {count} deviates {rel:.3} from uniform");
                }
            }
        }
    }

    #[test]
    fn tiny_alpha_triggers_repair_but_stays_valid() {
        let labels = balanced_labels(8, 500);
        let plan = PartitionPlan::build(&labels, 100, 0.001, MIN_CLIENT_SAMPLES, 3).unwrap();
        plan.check(labels.len(), MIN_CLIENT_SAMPLES).unwrap();
    }

    #[test]
    fn infeasible_floor_is_partition_error() {
        let labels = balanced_labels(2, 3); // 6 samples
        let r = dirichlet_partition(&labels, 4, 1.0, 2, &mut part_rng(0));
        assert!(matches!(r, Err(Error::Partition(_))));
    }

    #[test]
    fn bad_alpha_is_partition_error() {
        let labels = balanced_labels(2, 4);
        assert!(matches!(
            dirichlet_partition(&labels, 2, 0.0, 1, &mut part_rng(0)),
            Err(Error::Partition(_))
        ));
        assert!(matches!(
            dirichlet_partition(&labels, 2, f64::NAN, 1, &mut part_rng(0)),
            Err(Error::Partition(_))
        ));
    }

    #[test]
    fn stats_single_client_scores_zero() {
        let labels = balanced_labels(4, 5);
        let assign = vec![(0..20).collect::<Vec<_>>()];
        let stats = partition_stats(&assign, &labels, 4);
        assert_eq!(stats.heterogeneity, 0.0);
        assert_eq!(stats.counts[0], vec![5, 5, 5, 5]);
    }

    #[test]
    fn stats_one_class_per_client() {
        // C = N, balanced: every client holds exactly one class, so each
        // TV distance is 1 - 1/C = (C-1)/C
        let c = 8;
        let labels = balanced_labels(c, 10);
        let assign: Vec<Vec<usize>> = (0..c).map(|k| (k * 10..(k + 1) * 10).collect()).collect();
        let stats = partition_stats(&assign, &labels, c);
        let expected = (c as f64 - 1.0) / c as f64;
        assert!((stats.heterogeneity - expected).abs() < 1e-12);
    }

    #[test]
    fn heterogeneity_monotone_in_alpha() {
        // 5-seed means strictly ordered across the benchmark alphas
        let labels = balanced_labels(8, 500);
        let alphas = [0.001, 0.01, 0.1, 1.0];
        let mut means = Vec::new();
        for &alpha in &alphas {
            let mean: f64 = (0..5)
                .map(|seed| score_for(&labels, 100, alpha, seed, 8))
                .sum::<f64>()
                / 5.0;
            means.push(mean);
        }
        for w in means.windows(2) {
            assert!(
                w[0] > w[1],
                "heterogeneity must strictly decrease with alpha: {means:?}"
            );
        }
    }

    #[test]
    fn blobs_shapes_and_determinism() {
        let mut rng = stream_rng(4, 0, 0, Stream::SyntheticData);
        let ds = synthetic_blobs(8, 64, 500, 0.5, &mut rng).unwrap();
        assert_eq!(ds.len(), 4000);
        assert_eq!(ds.dim(), 64);
        assert_eq!(ds.num_classes, 8);

        let mut rng2 = stream_rng(4, 0, 0, Stream::SyntheticData);
        let ds2 = synthetic_blobs(8, 64, 500, 0.5, &mut rng2).unwrap();
        assert_eq!(ds.features.data(), ds2.features.data());
        assert_eq!(ds.labels, ds2.labels);
    }

    #[test]
    fn blobs_tiny_spread_is_nearest_mean_separable() {
        let mut rng = stream_rng(9, 0, 0, Stream::SyntheticData);
        let ds = synthetic_blobs(4, 8, 50, 1e-6, &mut rng).unwrap();
        // nearest-mean classification: estimate means from the labeled data
        let mut means = vec![vec![0.0; 8]; 4];
        let mut counts = vec![0usize; 4];
        for i in 0..ds.len() {
            let c = ds.labels[i];
            counts[c] += 1;
            for (j, &v) in ds.features.row(i).iter().enumerate() {
                means[c][j] += v;
            }
        }
        for (m, &cnt) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= cnt as f64;
            }
        }
        let mut correct = 0;
        for i in 0..ds.len() {
            let row = ds.features.row(i);
            let best = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = means[a].iter().zip(row).map(|(m, v)| (m - v) * (m - v)).sum();
                    let db: f64 = means[b].iter().zip(row).map(|(m, v)| (m - v) * (m - v)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            correct += usize::from(best == ds.labels[i]);
        }
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn blobs_impossible_placement_errors() {
        let mut rng = stream_rng(1, 0, 0, Stream::SyntheticData);
        // 2*spread = 40 can never fit several means inside [-1,1]^2
        let r = synthetic_blobs(8, 2, 10, 20.0, &mut rng);
        assert!(matches!(r, Err(Error::Generation(_))));
    }

    #[test]
    fn fkb_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blobs.fkb");
        let mut rng = stream_rng(2, 0, 0, Stream::SyntheticData);
        let ds = synthetic_blobs(3, 5, 10, 0.3, &mut rng).unwrap();
        save_fkb(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 30);
        assert_eq!(loaded.num_classes, 3);
        let path2 = dir.path().join("again.fkb");
        save_fkb(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn fkb_handwritten_fixture_loads() {
        // three 28x28x3 flattened records built byte by byte
        let d = 28 * 28 * 3;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FKB1");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for i in 0..3 * d {
            bytes.extend_from_slice(&(i as f32 * 0.25).to_le_bytes());
        }
        for l in [0u16, 1, 0] {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.fkb");
        std::fs::write(&path, bytes).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.dim(), 2352);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.features.get(1, 0), (d as f32 * 0.25) as f64);
    }

    #[test]
    fn fkb_bad_magic_and_label_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fkb");
        std::fs::write(&path, b"NOPE").unwrap();
        match load_dataset(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        // valid header, label out of range in record 1
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FKB1");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..4 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // label == C
        std::fs::write(&path, &bytes).unwrap();
        match load_dataset(&path) {
            Err(Error::Format { offset, detail }) => {
                assert_eq!(offset, (16 + 16 + 2) as u64);
                assert!(detail.contains("record 1"));
            }
            other => panic!("expected format error, got {other:?}"),
        }

        // truncated feature block
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn standardization_statistics_on_train() {
        let mut rng = stream_rng(6, 0, 0, Stream::SyntheticData);
        let ds = synthetic_blobs(4, 6, 100, 0.4, &mut rng).unwrap();
        let mut split_rng = stream_rng(6, 0, 0, Stream::TestSplit);
        let tt = split_standardize(&ds, 0.2, &mut split_rng).unwrap();
        assert_eq!(tt.train.len(), 320);
        assert_eq!(tt.test.len(), 80);

        let d = tt.train.dim();
        let n = tt.train.len() as f64;
        for j in 0..d {
            let col: Vec<f64> = (0..tt.train.len()).map(|i| tt.train.features.get(i, j)).collect();
            let mean: f64 = col.iter().sum::<f64>() / n;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-9, "column {j} mean {mean}");
            assert!((var - 1.0).abs() <= 1e-6, "column {j} variance {var}");
        }
        // classes stratified into both splits
        for c in 0..4 {
            assert!(tt.train.labels.contains(&c));
            assert!(tt.test.labels.contains(&c));
        }
    }
}
