//! Synthetic non-IID client generators, LibSVM-format ingestion, and the
//! label-shard partition protocol for real datasets.
//!
//! Both simulated generators follow the same recipe: per client `i`, a model
//! mean `u_i ~ N(0.1, alpha)` shifts the true coefficients, and a feature
//! mean `v_i` (entries `N(B_i, 1)`, `B_i ~ N(0, beta)`) shifts the design
//! rows, so `alpha` controls model heterogeneity and `beta` data
//! heterogeneity. Feature coordinate `k` (1-based) has variance `1/k^1.2`.
//! All generators are bit-reproducible given the spec and seed: client `i`
//! draws from its own counter-derived RNG stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::objectives::{SampleBatch, Targets};
use crate::tensor::{DenseVector, SupportSet};

pub type ParameterVector = DenseVector<f64>;
pub type Batch = SampleBatch<f64>;

/// One client's local data; the unit of non-IID heterogeneity.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client_id: usize,
    pub batch: Batch,
}

impl ClientDataset {
    pub fn num_samples(&self) -> usize {
        self.batch.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Settings for the synthetic generators.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_clients: usize,
    pub samples_per_client: usize,
    pub dim: usize,
    pub true_support_size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub task: TaskKind,
    pub seed: u64,
    /// Degenerate option: draw one coefficient vector and share it across
    /// clients instead of per-client draws.
    pub shared_model: bool,
}

impl SyntheticSpec {
    /// Regression defaults: 100 clients x 100 samples, d=1000, tau*=100,
    /// alpha = beta = 0.1.
    pub fn sim1_defaults(seed: u64) -> Self {
        Self {
            num_clients: 100,
            samples_per_client: 100,
            dim: 1000,
            true_support_size: 100,
            alpha: 0.1,
            beta: 0.1,
            task: TaskKind::Regression,
            seed,
            shared_model: false,
        }
    }

    /// Classification defaults: 1000 samples per client with the top 10%
    /// scores labeled positive, alpha = beta = 1.
    pub fn sim2_defaults(seed: u64) -> Self {
        Self {
            num_clients: 100,
            samples_per_client: 1000,
            dim: 1000,
            true_support_size: 100,
            alpha: 1.0,
            beta: 1.0,
            task: TaskKind::Classification,
            seed,
            shared_model: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_clients == 0 || self.samples_per_client == 0 || self.dim == 0 {
            return Err(Error::Config(
                "clients, samples per client, and dimension must be positive".into(),
            ));
        }
        if self.true_support_size == 0 || self.true_support_size > self.dim {
            return Err(Error::Config(format!(
                "true support size {} must lie in [1, {}]",
                self.true_support_size, self.dim
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// True per-client coefficients and their common support.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub per_client_x: Vec<ParameterVector>,
    pub shared_support: SupportSet,
}

impl GroundTruth {
    /// Weighted mean of the per-client coefficients restricted to the shared
    /// support; the single pooled reference used for estimation-error and
    /// support-recovery metrics.
    pub fn pooled_reference(&self, weights: &[f64]) -> Result<ParameterVector> {
        if weights.len() != self.per_client_x.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} clients",
                weights.len(),
                self.per_client_x.len()
            )));
        }
        let dim = self.per_client_x[0].len();
        let mut pooled = ParameterVector::zeros(dim);
        for (w, x) in weights.iter().zip(&self.per_client_x) {
            pooled.axpy(*w, x.as_slice());
        }
        crate::tensor::restrict(&pooled, &self.shared_support)
    }
}

// Client i draws from stream i+1; stream 0 is reserved for shared draws.
fn client_stream(seed: u64, client_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(client_id as u64 + 1);
    rng
}

fn shared_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn normal(mean: f64, std_dev: f64) -> Normal<f64> {
    Normal::new(mean, std_dev).expect("std deviations are validated nonnegative")
}

fn draw_coefficients(
    rng: &mut ChaCha8Rng,
    dim: usize,
    support: usize,
    alpha: f64,
) -> ParameterVector {
    let u = normal(0.1, alpha).sample(rng);
    let entry = normal(u, 1.0);
    let mut x = ParameterVector::zeros(dim);
    for i in 0..support {
        x[i] = entry.sample(rng);
    }
    x
}

/// Sparse linear regression clients: `y = z'x_i + b` with client-specific
/// coefficient and feature shifts.
pub fn generate_sim1(spec: &SyntheticSpec) -> Result<(Vec<ClientDataset>, GroundTruth)> {
    spec.validate()?;
    if spec.task != TaskKind::Regression {
        return Err(Error::Config("simulation I generates regression data".into()));
    }
    generate_simulation(spec, false)
}

/// Sparse logistic clients: per client the top 10% of the sigmoid scores
/// `exp(t)/(1+exp(t))`, `t = z'x_i + b`, are labeled 1 (ties broken toward
/// the lower sample index).
pub fn generate_sim2(spec: &SyntheticSpec) -> Result<(Vec<ClientDataset>, GroundTruth)> {
    spec.validate()?;
    if spec.task != TaskKind::Classification {
        return Err(Error::Config("simulation II generates classification data".into()));
    }
    generate_simulation(spec, true)
}

fn generate_simulation(
    spec: &SyntheticSpec,
    classify: bool,
) -> Result<(Vec<ClientDataset>, GroundTruth)> {
    let shared_x = if spec.shared_model {
        Some(draw_coefficients(
            &mut shared_stream(spec.seed),
            spec.dim,
            spec.true_support_size,
            spec.alpha,
        ))
    } else {
        None
    };

    let mut clients = Vec::with_capacity(spec.num_clients);
    let mut per_client_x = Vec::with_capacity(spec.num_clients);
    for client_id in 0..spec.num_clients {
        let mut rng = client_stream(spec.seed, client_id);
        let u = normal(0.1, spec.alpha).sample(&mut rng);
        let x = match &shared_x {
            Some(x) => x.clone(),
            None => {
                let entry = normal(u, 1.0);
                let mut x = ParameterVector::zeros(spec.dim);
                for i in 0..spec.true_support_size {
                    x[i] = entry.sample(&mut rng);
                }
                x
            }
        };

        let b_i = normal(0.0, spec.beta).sample(&mut rng);
        let mean_entry = normal(b_i, 1.0);
        let v: Vec<f64> = (0..spec.dim).map(|_| mean_entry.sample(&mut rng)).collect();
        let stds: Vec<f64> = (1..=spec.dim).map(|k| (k as f64).powf(-0.6)).collect();
        let unit = normal(0.0, 1.0);
        let noise = normal(u, 1.0);

        let mut features = Vec::with_capacity(spec.samples_per_client * spec.dim);
        let mut scores = Vec::with_capacity(spec.samples_per_client);
        for _ in 0..spec.samples_per_client {
            let offset = features.len();
            for k in 0..spec.dim {
                features.push(v[k] + stds[k] * unit.sample(&mut rng));
            }
            let b = noise.sample(&mut rng);
            let t: f64 = features[offset..offset + spec.dim]
                .iter()
                .zip(x.as_slice())
                .map(|(a, c)| a * c)
                .sum::<f64>()
                + b;
            scores.push(t);
        }

        let targets = if classify {
            let sig: Vec<f64> = scores.iter().map(|&t| 1.0 / (1.0 + (-t).exp())).collect();
            let num_positive = spec.samples_per_client / 10;
            Targets::Class(label_top_scores(&sig, num_positive))
        } else {
            Targets::Real(scores)
        };
        let batch = SampleBatch::new(features, spec.dim, targets)?;
        clients.push(ClientDataset { client_id, batch });
        per_client_x.push(x);
    }

    let ground_truth = GroundTruth {
        per_client_x,
        shared_support: SupportSet::new((0..spec.true_support_size).collect()),
    };
    Ok((clients, ground_truth))
}

/// Labels the `num_positive` highest scores 1 and the rest 0; equal scores
/// are resolved toward the lower sample index.
pub fn label_top_scores(scores: &[f64], num_positive: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![0usize; scores.len()];
    for &i in order.iter().take(num_positive.min(scores.len())) {
        labels[i] = 1;
    }
    labels
}

/// Reads a LibSVM-format file: `<label> <index>:<value> ...` per line with
/// ascending 1-based indices. Rows are densified to
/// `max(dim_hint, highest index seen)` columns; labels come back as floats.
pub fn parse_libsvm(path: impl AsRef<Path>, dim_hint: Option<usize>) -> Result<Batch> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path)?;
    let reader = BufReader::new(file);

    let parse_err = |line: usize, message: String| Error::Parse {
        path: display.clone(),
        line,
        message,
    };

    let mut labels: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut width = dim_hint.unwrap_or(0);

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue; // blank line
        };
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid label `{label_tok}`")))?;
        let mut entries = Vec::new();
        let mut prev_index = 0usize;
        for tok in tokens {
            let (idx_str, val_str) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("expected `index:value`, got `{tok}`")))?;
            let index: usize = idx_str
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid feature index `{idx_str}`")))?;
            if index == 0 {
                return Err(parse_err(line_no, "feature indices are 1-based".into()));
            }
            if index <= prev_index {
                return Err(parse_err(
                    line_no,
                    format!("feature index {index} is not strictly ascending"),
                ));
            }
            let value: f64 = val_str
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid feature value `{val_str}`")))?;
            prev_index = index;
            width = width.max(index);
            entries.push((index - 1, value));
        }
        labels.push(label);
        rows.push(entries);
    }

    if rows.is_empty() {
        return Err(Error::Config(format!("{display}: file contains no samples")));
    }
    if width == 0 {
        return Err(Error::Config(format!(
            "{display}: no feature indices and no dimension hint"
        )));
    }

    let mut features = vec![0.0f64; rows.len() * width];
    for (r, entries) in rows.iter().enumerate() {
        for &(c, v) in entries {
            features[r * width + c] = v;
        }
    }
    SampleBatch::new(features, width, Targets::Real(labels))
}

/// Writes a batch in LibSVM format (1-based indices, nonzeros only).
pub fn write_libsvm(path: impl AsRef<Path>, batch: &Batch) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in 0..batch.rows() {
        match batch.targets() {
            Targets::Real(v) => write!(out, "{}", v[r])?,
            Targets::Class(v) => write!(out, "{}", v[r])?,
        }
        for (c, &v) in batch.row(r).iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", c + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Replaces real-valued labels with dense class ids `0..c` (sorted by label
/// value); returns the new batch and the label value for each class id.
pub fn map_labels_to_classes(batch: &Batch) -> Result<(Batch, Vec<f64>)> {
    let Targets::Real(labels) = batch.targets() else {
        return Err(Error::Config("labels are already class ids".into()));
    };
    let mut table: Vec<f64> = labels.clone();
    table.sort_by(f64::total_cmp);
    table.dedup();
    let classes: Vec<usize> = labels
        .iter()
        .map(|l| {
            table
                .binary_search_by(|probe| probe.total_cmp(l))
                .expect("label came from the same list")
        })
        .collect();
    let mapped = SampleBatch::new(batch_features(batch), batch.dim(), Targets::Class(classes))?;
    Ok((mapped, table))
}

fn batch_features(batch: &Batch) -> Vec<f64> {
    let mut features = Vec::with_capacity(batch.rows() * batch.dim());
    for r in 0..batch.rows() {
        features.extend_from_slice(batch.row(r));
    }
    features
}

/// Splits each category into `shards_per_category` near-equal shards and
/// deals every client one shard from each of `categories_per_client`
/// distinct categories, without shard reuse, so each sample lands on
/// exactly one client. Requires the shard supply to match the demand
/// exactly.
pub fn partition_label_shards(
    batch: &Batch,
    categories: &[usize],
    num_clients: usize,
    shards_per_category: usize,
    categories_per_client: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if categories.len() != batch.rows() {
        return Err(Error::Dimension(format!(
            "{} category labels for {} rows",
            categories.len(),
            batch.rows()
        )));
    }
    if num_clients == 0 || shards_per_category == 0 || categories_per_client == 0 {
        return Err(Error::Config(
            "clients, shards per category, and categories per client must be positive".into(),
        ));
    }
    let mut cats: Vec<usize> = categories.to_vec();
    cats.sort_unstable();
    cats.dedup();
    let ncat = cats.len();
    if categories_per_client > ncat {
        return Err(Error::Config(format!(
            "cannot pick {categories_per_client} distinct categories out of {ncat}"
        )));
    }
    let supply = ncat * shards_per_category;
    let demand = num_clients * categories_per_client;
    if supply != demand {
        return Err(Error::Config(format!(
            "shard supply {supply} ({ncat} categories x {shards_per_category} shards) does not \
             match demand {demand} ({num_clients} clients x {categories_per_client} picks); \
             short by {}",
            (demand as i64 - supply as i64).abs()
        )));
    }

    // Shuffle each category's rows on its own stream, then cut near-equal
    // contiguous shards.
    let mut shards: Vec<Vec<Vec<usize>>> = Vec::with_capacity(ncat);
    for (rank, &cat) in cats.iter().enumerate() {
        let mut rows: Vec<usize> = (0..batch.rows()).filter(|&r| categories[r] == cat).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rank as u64 + 1);
        shuffle(&mut rows, &mut rng);
        let n = rows.len();
        let base = n / shards_per_category;
        let extra = n % shards_per_category;
        let mut cat_shards = Vec::with_capacity(shards_per_category);
        let mut cursor = 0;
        for s in 0..shards_per_category {
            let size = base + usize::from(s < extra);
            cat_shards.push(rows[cursor..cursor + size].to_vec());
            cursor += size;
        }
        shards.push(cat_shards);
    }

    // Deal shards. Picks are uniform among categories with stock left,
    // except that a category whose stock equals the number of clients still
    // to serve must be picked now or it can never be drained.
    let mut rng = shared_stream(seed);
    let mut remaining = vec![shards_per_category; ncat];
    let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(num_clients);
    for client in 0..num_clients {
        let left = num_clients - client;
        let mut picks: Vec<usize> = (0..ncat).filter(|&c| remaining[c] >= left).collect();
        if picks.len() > categories_per_client {
            return Err(Error::Config(format!(
                "shard bookkeeping failed at client {client}: {} forced categories",
                picks.len()
            )));
        }
        let mut candidates: Vec<usize> = (0..ncat)
            .filter(|&c| remaining[c] > 0 && !picks.contains(&c))
            .collect();
        while picks.len() < categories_per_client {
            let j = rng.gen_range(0..candidates.len());
            picks.push(candidates.swap_remove(j));
        }
        picks.sort_unstable();
        let mut rows = Vec::new();
        for &cat in &picks {
            let shard_idx = shards_per_category - remaining[cat];
            remaining[cat] -= 1;
            rows.extend_from_slice(&shards[cat][shard_idx]);
        }
        if rows.is_empty() {
            return Err(Error::Config(format!(
                "client {client} received only empty shards; \
                 reduce shards per category or clients"
            )));
        }
        assignments.push(rows);
    }

    assignments
        .into_iter()
        .enumerate()
        .map(|(client_id, rows)| {
            Ok(ClientDataset {
                client_id,
                batch: batch.subset(&rows)?,
            })
        })
        .collect()
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Lloyd's algorithm with farthest-point seeding; returns one cluster id per
/// row. Used to label unlabeled regression data before partitioning.
pub fn kmeans_labels(batch: &Batch, k: usize, max_iters: usize, seed: u64) -> Result<Vec<usize>> {
    let n = batch.rows();
    if k < 2 {
        return Err(Error::Config("k-means needs k >= 2".into()));
    }
    if k > n {
        return Err(Error::Config(format!("k={k} exceeds {n} rows")));
    }
    let dim = batch.dim();
    let mut rng = shared_stream(seed);

    // Farthest-point seeding: random first centroid, then repeatedly the
    // point farthest from its nearest chosen centroid (lowest index wins).
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(batch.row(rng.gen_range(0..n)).to_vec());
    let mut nearest_sq = vec![f64::INFINITY; n];
    while centroids.len() < k {
        let latest = centroids.last().expect("nonempty");
        for (r, d) in nearest_sq.iter_mut().enumerate() {
            *d = d.min(dist_sq(batch.row(r), latest));
        }
        let far = argmax(&nearest_sq);
        centroids.push(batch.row(far).to_vec());
    }

    let tol_sq = 1e-6f64 * 1e-6;
    let mut labels = vec![0usize; n];
    for _ in 0..max_iters {
        assign(batch, &centroids, &mut labels);

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c].iter_mut().zip(batch.row(r)) {
                *s += v;
            }
        }

        // Empty clusters respawn at the point farthest from its own
        // centroid (deterministic, lowest index on ties, no point reused).
        let mut reseeded: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -1.0;
            for r in 0..n {
                if reseeded.contains(&r) {
                    continue;
                }
                let d = dist_sq(batch.row(r), &centroids[labels[r]]);
                if d > far_d {
                    far_d = d;
                    far = Some(r);
                }
            }
            let r = far.expect("more rows than clusters");
            sums[c] = batch.row(r).to_vec();
            counts[c] = 1;
            reseeded.push(r);
        }

        let mut movement_sq = 0.0f64;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let mut moved = 0.0;
            for (ci, s) in centroids[c].iter_mut().zip(&sums[c]) {
                let next = s * inv;
                let d = next - *ci;
                moved += d * d;
                *ci = next;
            }
            movement_sq = movement_sq.max(moved);
        }
        if movement_sq <= tol_sq {
            break;
        }
    }
    assign(batch, &centroids, &mut labels);
    Ok(labels)
}

fn assign(batch: &Batch, centroids: &[Vec<f64>], labels: &mut [usize]) {
    for r in 0..batch.rows() {
        let row = batch.row(r);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = dist_sq(row, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[r] = best;
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Writes the ground-truth sidecar: one line per client with the client id
/// followed by 1-based `index:value` pairs of its coefficient vector.
pub fn write_ground_truth(path: impl AsRef<Path>, truth: &GroundTruth) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (client_id, x) in truth.per_client_x.iter().enumerate() {
        write!(out, "{client_id}")?;
        for (i, &v) in x.as_slice().iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{}", i + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the ground-truth sidecar written by [`write_ground_truth`].
pub fn read_ground_truth(path: impl AsRef<Path>, dim: usize) -> Result<GroundTruth> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: display.clone(),
        line,
        message,
    };

    let mut per_client_x = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let mut tokens = line.split_whitespace();
        let Some(id_tok) = tokens.next() else { continue };
        let client_id: usize = id_tok
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid client id `{id_tok}`")))?;
        if client_id != per_client_x.len() {
            return Err(parse_err(
                line_no,
                format!("expected client {} next, found {client_id}", per_client_x.len()),
            ));
        }
        let mut x = ParameterVector::zeros(dim);
        for tok in tokens {
            let (i_str, v_str) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("expected `index:value`, got `{tok}`")))?;
            let i: usize = i_str
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid index `{i_str}`")))?;
            if i == 0 || i > dim {
                return Err(parse_err(line_no, format!("index {i} out of range [1, {dim}]")));
            }
            x[i - 1] = v_str
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid value `{v_str}`")))?;
        }
        per_client_x.push(x);
    }
    if per_client_x.is_empty() {
        return Err(Error::Config(format!("{display}: no ground-truth lines")));
    }
    let supports: Vec<SupportSet> = per_client_x.iter().map(|x| x.support()).collect();
    Ok(GroundTruth {
        shared_support: crate::tensor::support_union(&supports),
        per_client_x,
    })
}
