//! Round-synchronous federated engine.
//!
//! One round: broadcast the global iterate, run per-client local updates,
//! aggregate with a weighted average, hard-threshold the aggregate. The
//! three algorithms differ only in where thresholding happens and how many
//! local steps run per round:
//!
//! - `fed_ht`: K plain SGD steps per client, thresholding at the server only;
//! - `fediter_ht`: each local step is followed by thresholding, and so is
//!   the server aggregate;
//! - `distributed_iht`: the K = 1 specialization with dense uploads.
//!
//! Each client owns a counter-derived RNG stream and aggregation sums in
//! ascending client order, so traces are bit-reproducible no matter how
//! clients are scheduled.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{estimation_error, support_f1};
use crate::datagen::{ClientDataset, GroundTruth};
use crate::error::{Error, Result};
use crate::objectives::{self, ObjectiveModel, SmoothnessEstimate, Targets};
use crate::tensor::{hard_threshold_blocks, DenseVector};

pub type ParameterVector = DenseVector<f64>;
type Objective = ObjectiveModel<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    FedHt,
    FedIterHt,
    DistributedIht,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedHt => "fed_ht",
            Algorithm::FedIterHt => "fediter_ht",
            Algorithm::DistributedIht => "distributed_iht",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fed_ht" => Ok(Algorithm::FedHt),
            "fediter_ht" => Ok(Algorithm::FedIterHt),
            "distributed_iht" => Ok(Algorithm::DistributedIht),
            other => Err(Error::Config(format!(
                "unknown algorithm `{other}` (expected fed_ht, fediter_ht, or distributed_iht)"
            ))),
        }
    }
}

/// Per-round batch size: constant, or geometric `ceil(gamma / omega^t)`.
/// Either way the result is clipped to `[1, client_size]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSchedule {
    Constant(usize),
    Geometric { gamma: f64, omega: f64 },
}

pub fn batch_size_at(schedule: &BatchSchedule, t: usize, client_size: usize) -> Result<usize> {
    match *schedule {
        BatchSchedule::Constant(b) => Ok(b.clamp(1, client_size)),
        BatchSchedule::Geometric { gamma, omega } => {
            if !(omega > 0.0 && omega < 1.0) {
                return Err(Error::Config(format!(
                    "geometric batch schedule needs omega in (0,1), got {omega}"
                )));
            }
            if !(gamma > 0.0) {
                return Err(Error::Config(format!(
                    "geometric batch schedule needs gamma > 0, got {gamma}"
                )));
            }
            let raw = gamma / omega.powi(t as i32);
            if !raw.is_finite() || raw >= client_size as f64 {
                return Ok(client_size.max(1));
            }
            Ok((raw.ceil() as usize).clamp(1, client_size))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeRule {
    Fixed(f64),
    /// `1/(6 l̂)` with the smoothness estimated on the pooled data.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    Uniform,
    Proportional,
    Explicit(Vec<f64>),
}

/// Client weights `p_i` summing to 1: uniform `1/N`, sample-proportional
/// `n_i / sum n_j`, or an explicit list (validated to sum to 1 within 1e-9).
pub fn measure_client_weights(clients: &[ClientDataset], scheme: &WeightScheme) -> Result<Vec<f64>> {
    if clients.is_empty() {
        return Err(Error::Config("no clients".into()));
    }
    match scheme {
        WeightScheme::Uniform => Ok(vec![1.0 / clients.len() as f64; clients.len()]),
        WeightScheme::Proportional => {
            let total: f64 = clients.iter().map(|c| c.num_samples() as f64).sum();
            Ok(clients
                .iter()
                .map(|c| c.num_samples() as f64 / total)
                .collect())
        }
        WeightScheme::Explicit(weights) => {
            if weights.len() != clients.len() {
                return Err(Error::Config(format!(
                    "{} weights for {} clients",
                    weights.len(),
                    clients.len()
                )));
            }
            if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
                return Err(Error::Config("client weights must lie in [0, 1]".into()));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "client weights sum to {sum}, expected 1 within 1e-9"
                )));
            }
            Ok(weights.clone())
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub tau: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub stepsize: StepsizeRule,
    pub batch_schedule: BatchSchedule,
    pub weights: WeightScheme,
    pub seed: u64,
    pub record_every: usize,
}

impl RunConfig {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.tau == 0 || self.tau > dim {
            return Err(Error::Config(format!(
                "tau={} must lie in [1, {dim}]",
                self.tau
            )));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if let StepsizeRule::Fixed(g) = self.stepsize {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::Config(format!("stepsize {g} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Effective local steps: the distributed baseline always runs one.
    pub fn effective_local_steps(&self) -> usize {
        match self.algorithm {
            Algorithm::DistributedIht => 1,
            _ => self.local_steps,
        }
    }
}

/// One recorded round: objective, recovery metrics when ground truth is
/// known, and cumulative communication counters.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    /// `round x K`; for the distributed baseline this equals `round`.
    pub iteration: usize,
    pub objective: f64,
    pub est_error_sq: Option<f64>,
    pub support_f1: Option<f64>,
    pub upload_scalars: u64,
    pub download_scalars: u64,
    pub wall_ms: u64,
}

/// Traces plus the final iterate.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub traces: Vec<RoundTrace>,
    pub final_x: ParameterVector,
    /// Global iterates at the recorded rounds (probe points for the
    /// dissimilarity estimator).
    pub recorded_iterates: Vec<ParameterVector>,
}

/// Everything a single local update needs to know.
#[derive(Debug, Clone, Copy)]
pub struct LocalPlan {
    pub round: usize,
    pub client_id: usize,
    pub gamma: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Per-step thresholding budget; `None` leaves iterates dense.
    pub tau: Option<usize>,
    pub blocks: usize,
}

/// K minibatch SGD steps from the broadcast iterate, with optional per-step
/// thresholding. Aborts with a diagnostic if an iterate goes non-finite.
pub fn local_update(
    x_start: &ParameterVector,
    client: &ClientDataset,
    model: &Objective,
    plan: &LocalPlan,
    rng: &mut ChaCha8Rng,
) -> Result<ParameterVector> {
    let mut x = x_start.clone();
    for step in 0..plan.steps {
        let diverged = || Error::Diverged {
            round: plan.round,
            client: plan.client_id,
            step,
        };
        let grad = objectives::minibatch_gradient(
            model,
            x.as_slice(),
            &client.batch,
            plan.batch_size,
            rng,
        )
        .map_err(|e| match e {
            Error::Numeric(_) => diverged(),
            other => other,
        })?;
        x.axpy(-plan.gamma, &grad);
        if let Some(tau) = plan.tau {
            x = hard_threshold_blocks(&x, tau, plan.blocks)?;
        }
        if !x.all_finite() {
            return Err(diverged());
        }
    }
    Ok(x)
}

/// Plain local SGD: no thresholding, dense result.
pub fn local_update_fed_ht(
    x_start: &ParameterVector,
    client: &ClientDataset,
    model: &Objective,
    plan: &LocalPlan,
    rng: &mut ChaCha8Rng,
) -> Result<ParameterVector> {
    let plan = LocalPlan { tau: None, ..*plan };
    local_update(x_start, client, model, &plan, rng)
}

/// Local SGD with hard thresholding after every step; every intermediate
/// iterate satisfies the sparsity budget.
pub fn local_update_fediter_ht(
    x_start: &ParameterVector,
    client: &ClientDataset,
    model: &Objective,
    plan: &LocalPlan,
    tau: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ParameterVector> {
    let plan = LocalPlan {
        tau: Some(tau),
        ..*plan
    };
    local_update(x_start, client, model, &plan, rng)
}

/// Weighted average in ascending client order followed by hard thresholding.
pub fn server_aggregate(
    locals: &[ParameterVector],
    weights: &[f64],
    tau: usize,
    blocks: usize,
) -> Result<ParameterVector> {
    if locals.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    if locals.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} local updates for {} weights",
            locals.len(),
            weights.len()
        )));
    }
    let len = locals[0].len();
    let mut avg = ParameterVector::zeros(len);
    for (x, &w) in locals.iter().zip(weights) {
        if x.len() != len {
            return Err(Error::Dimension(format!(
                "local update length {} differs from {len}",
                x.len()
            )));
        }
        avg.axpy(w, x.as_slice());
    }
    hard_threshold_blocks(&avg, tau, blocks)
}

// Upload cost in scalars for one client's round. Dense algorithms ship the
// whole parameter; the iterated variant ships tau (index, value) pairs per
// block.
fn upload_payload(algorithm: Algorithm, param_len: usize, tau: usize, blocks: usize) -> u64 {
    match algorithm {
        Algorithm::FedHt | Algorithm::DistributedIht => param_len as u64,
        Algorithm::FedIterHt => ((2 * tau * blocks) as u64).min(param_len as u64),
    }
}

// Broadcast cost in scalars per client: (index, value) pairs for the sparse
// global iterate, never more than shipping it dense.
fn download_payload(x: &ParameterVector) -> u64 {
    ((2 * x.nnz()) as u64).min(x.len() as u64)
}

/// Executes `rounds` rounds from `x0 = 0` and records a trace at round 0,
/// every `record_every`-th round, and the final round.
pub fn run(
    cfg: &RunConfig,
    clients: &[ClientDataset],
    model: &Objective,
    ground_truth: Option<&GroundTruth>,
) -> Result<RunOutcome> {
    if clients.is_empty() {
        return Err(Error::Config("no clients".into()));
    }
    let dim = clients[0].batch.dim();
    for c in clients {
        if c.batch.dim() != dim {
            return Err(Error::Dimension(format!(
                "client {} has dimension {}, expected {dim}",
                c.client_id,
                c.batch.dim()
            )));
        }
        model.validate_batch(&c.batch)?;
    }
    cfg.validate(dim)?;

    let blocks = model.num_blocks();
    let param_len = model.param_len(dim);
    let weights = measure_client_weights(clients, &cfg.weights)?;
    let steps = cfg.effective_local_steps();
    let local_tau = match cfg.algorithm {
        Algorithm::FedIterHt => Some(cfg.tau),
        _ => None,
    };
    let gamma = match cfg.stepsize {
        StepsizeRule::Fixed(g) => g,
        StepsizeRule::Auto => 1.0 / (6.0 * pooled_smoothness(model, clients)?.value),
    };

    // The reference for estimation error and support recovery: the weighted
    // mean of the per-client coefficients on the shared support.
    let x_star = match ground_truth {
        Some(truth) => Some(pad_reference(&truth.pooled_reference(&weights)?, param_len)?),
        None => None,
    };

    let mut rngs: Vec<ChaCha8Rng> = (0..clients.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            rng
        })
        .collect();

    let started = Instant::now();
    let mut x = ParameterVector::zeros(param_len);
    let mut upload: u64 = 0;
    let mut download: u64 = 0;
    let mut traces = Vec::new();
    let mut recorded_iterates = Vec::new();

    let record = |round: usize,
                      x: &ParameterVector,
                      upload: u64,
                      download: u64,
                      traces: &mut Vec<RoundTrace>,
                      recorded: &mut Vec<ParameterVector>|
     -> Result<()> {
        let objective = global_objective(model, x, clients, &weights).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("at round {round}: {msg}")),
            other => other,
        })?;
        let (est_error_sq, f1) = match &x_star {
            Some(x_star) => (
                Some(estimation_error(x, x_star)),
                Some(support_f1(x, x_star)),
            ),
            None => (None, None),
        };
        traces.push(RoundTrace {
            round,
            iteration: round * steps,
            objective,
            est_error_sq,
            support_f1: f1,
            upload_scalars: upload,
            download_scalars: download,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        recorded.push(x.clone());
        Ok(())
    };

    record(0, &x, upload, download, &mut traces, &mut recorded_iterates)?;

    for t in 0..cfg.rounds {
        download += download_payload(&x) * clients.len() as u64;
        let mut locals = Vec::with_capacity(clients.len());
        for (i, client) in clients.iter().enumerate() {
            let plan = LocalPlan {
                round: t,
                client_id: client.client_id,
                gamma,
                steps,
                batch_size: batch_size_at(&cfg.batch_schedule, t, client.num_samples())?,
                tau: local_tau,
                blocks,
            };
            locals.push(local_update(&x, client, model, &plan, &mut rngs[i])?);
            upload += upload_payload(cfg.algorithm, param_len, cfg.tau, blocks);
        }
        x = server_aggregate(&locals, &weights, cfg.tau, blocks)?;
        let done = t + 1;
        if done % cfg.record_every == 0 || done == cfg.rounds {
            record(done, &x, upload, download, &mut traces, &mut recorded_iterates)?;
        }
    }

    Ok(RunOutcome {
        traces,
        final_x: x,
        recorded_iterates,
    })
}

/// `f(x) = sum_i p_i f_i(x)` over the clients' full local data.
pub fn global_objective(
    model: &Objective,
    x: &ParameterVector,
    clients: &[ClientDataset],
    weights: &[f64],
) -> Result<f64> {
    let mut value = 0.0;
    for (client, &w) in clients.iter().zip(weights) {
        value += w * objectives::loss_value(model, x.as_slice(), &client.batch)?;
    }
    if !value.is_finite() {
        return Err(Error::Numeric(format!("global objective {value}")));
    }
    Ok(value)
}

/// `sum_i p_i grad f_i(x)` over the clients' full local data.
pub fn global_gradient(
    model: &Objective,
    x: &ParameterVector,
    clients: &[ClientDataset],
    weights: &[f64],
) -> Result<ParameterVector> {
    let mut acc = ParameterVector::zeros(x.len());
    for (client, &w) in clients.iter().zip(weights) {
        let g = objectives::gradient(model, x.as_slice(), &client.batch)?;
        acc.axpy(w, &g);
    }
    Ok(acc)
}

/// Smoothness estimate over the pooled rows of every client.
pub fn pooled_smoothness(
    model: &Objective,
    clients: &[ClientDataset],
) -> Result<SmoothnessEstimate<f64>> {
    let pooled = pool_clients(clients)?;
    objectives::estimate_smoothness(model, &pooled)
}

/// Concatenates every client's rows into one batch.
pub fn pool_clients(clients: &[ClientDataset]) -> Result<crate::datagen::Batch> {
    if clients.is_empty() {
        return Err(Error::Config("no clients".into()));
    }
    let dim = clients[0].batch.dim();
    let total: usize = clients.iter().map(|c| c.batch.rows()).sum();
    let mut features = Vec::with_capacity(total * dim);
    let mut real: Vec<f64> = Vec::new();
    let mut class: Vec<usize> = Vec::new();
    let classify = matches!(clients[0].batch.targets(), Targets::Class(_));
    for c in clients {
        for r in 0..c.batch.rows() {
            features.extend_from_slice(c.batch.row(r));
            if classify {
                class.push(c.batch.target_class(r)?);
            } else {
                real.push(c.batch.target_as_real(r));
            }
        }
    }
    let targets = if classify {
        Targets::Class(class)
    } else {
        Targets::Real(real)
    };
    crate::objectives::SampleBatch::new(features, dim, targets)
}

// Softmax references live on one block; metrics compare against the first
// block of the stacked parameter.
fn pad_reference(reference: &ParameterVector, param_len: usize) -> Result<ParameterVector> {
    if reference.len() == param_len {
        return Ok(reference.clone());
    }
    if param_len % reference.len() != 0 {
        return Err(Error::Dimension(format!(
            "reference length {} incompatible with parameter length {param_len}",
            reference.len()
        )));
    }
    let mut padded = ParameterVector::zeros(param_len);
    padded.as_mut_slice()[..reference.len()].copy_from_slice(reference.as_slice());
    Ok(padded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::SampleBatch;

    fn client(client_id: usize, rows: &[(&[f64], f64)]) -> ClientDataset {
        let dim = rows[0].0.len();
        let features = rows.iter().flat_map(|(z, _)| z.iter().copied()).collect();
        let targets = Targets::Real(rows.iter().map(|(_, y)| *y).collect());
        ClientDataset {
            client_id,
            batch: SampleBatch::new(features, dim, targets).unwrap(),
        }
    }

    #[test]
    fn batch_schedule_examples() {
        let geo = BatchSchedule::Geometric { gamma: 8.0, omega: 0.5 };
        assert_eq!(batch_size_at(&geo, 2, 1000).unwrap(), 32);
        assert_eq!(batch_size_at(&geo, 20, 100).unwrap(), 100);
        assert_eq!(batch_size_at(&BatchSchedule::Constant(32), 17, 1000).unwrap(), 32);
        assert_eq!(batch_size_at(&BatchSchedule::Constant(32), 0, 10).unwrap(), 10);
        assert_eq!(batch_size_at(&BatchSchedule::Constant(0), 0, 10).unwrap(), 1);
        let bad = BatchSchedule::Geometric { gamma: 8.0, omega: 1.5 };
        assert!(batch_size_at(&bad, 0, 10).is_err());
    }

    #[test]
    fn weight_schemes() {
        let clients = vec![
            client(0, &[(&[1.0], 0.0)]),
            client(1, &[(&[1.0], 0.0), (&[2.0], 1.0), (&[3.0], 2.0)]),
        ];
        assert_eq!(
            measure_client_weights(&clients, &WeightScheme::Uniform).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            measure_client_weights(&clients, &WeightScheme::Proportional).unwrap(),
            vec![0.25, 0.75]
        );
        assert_eq!(
            measure_client_weights(&clients, &WeightScheme::Explicit(vec![0.5, 0.5])).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(measure_client_weights(
            &clients,
            &WeightScheme::Explicit(vec![0.6, 0.6])
        )
        .is_err());
        // A single client legitimately carries weight 1.
        assert_eq!(
            measure_client_weights(&clients[..1], &WeightScheme::Uniform).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn single_full_batch_step_is_exact() {
        let c = client(0, &[(&[1.0, 0.0], 2.0), (&[0.0, 1.0], -1.0)]);
        let model = ObjectiveModel::least_squares();
        let x0 = ParameterVector::from_vec(vec![0.5, 0.5]);
        let gamma = 0.1;
        let plan = LocalPlan {
            round: 0,
            client_id: 0,
            gamma,
            steps: 1,
            batch_size: 2,
            tau: None,
            blocks: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = local_update_fed_ht(&x0, &c, &model, &plan, &mut rng).unwrap();
        let grad = objectives::gradient(&model, x0.as_slice(), &c.batch).unwrap();
        let mut expect = x0.clone();
        expect.axpy(-gamma, &grad);
        assert_eq!(got, expect);
    }

    #[test]
    fn zero_stepsize_is_identity() {
        let c = client(0, &[(&[1.0, 2.0], 1.0)]);
        let model = ObjectiveModel::least_squares();
        let x0 = ParameterVector::from_vec(vec![3.0, -4.0]);
        let plan = LocalPlan {
            round: 0,
            client_id: 0,
            gamma: 0.0,
            steps: 7,
            batch_size: 1,
            tau: None,
            blocks: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let got = local_update(&x0, &c, &model, &plan, &mut rng).unwrap();
        assert_eq!(got, x0);
    }

    #[test]
    fn k_steps_compose_like_chained_single_steps() {
        let c = client(
            0,
            &[(&[1.0, 0.3], 2.0), (&[0.2, 1.0], -1.0), (&[0.7, -0.5], 0.5)],
        );
        let model = ObjectiveModel::least_squares();
        let x0 = ParameterVector::zeros(2);
        let mk = |steps: usize| LocalPlan {
            round: 0,
            client_id: 0,
            gamma: 0.05,
            steps,
            batch_size: 2,
            tau: None,
            blocks: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let three = local_update(&x0, &c, &model, &mk(3), &mut rng).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = x0;
        for _ in 0..3 {
            x = local_update(&x, &c, &model, &mk(1), &mut rng).unwrap();
        }
        assert_eq!(three, x);
    }

    #[test]
    fn fediter_iterates_respect_budget_and_full_budget_matches_fed_ht() {
        let c = client(
            0,
            &[(&[1.0, 0.3, -0.2], 2.0), (&[0.2, 1.0, 0.9], -1.0)],
        );
        let model = ObjectiveModel::least_squares();
        let x0 = ParameterVector::zeros(3);
        let plan = LocalPlan {
            round: 0,
            client_id: 0,
            gamma: 0.05,
            steps: 4,
            batch_size: 1,
            tau: None,
            blocks: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sparse = local_update_fediter_ht(&x0, &c, &model, &plan, 2, &mut rng).unwrap();
        assert!(sparse.nnz() <= 2);

        // tau = d makes per-step thresholding the identity.
        let mut rng_a = ChaCha8Rng::seed_from_u64(33);
        let mut rng_b = ChaCha8Rng::seed_from_u64(33);
        let full = local_update_fediter_ht(&x0, &c, &model, &plan, 3, &mut rng_a).unwrap();
        let dense = local_update_fed_ht(&x0, &c, &model, &plan, &mut rng_b).unwrap();
        assert_eq!(full, dense);

        // gamma = 0 on a tau-sparse start: thresholding is idempotent.
        let sparse_start = ParameterVector::from_vec(vec![1.0, 0.0, -2.0]);
        let idle = LocalPlan { gamma: 0.0, steps: 1, ..plan };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = local_update_fediter_ht(&sparse_start, &c, &model, &idle, 2, &mut rng).unwrap();
        assert_eq!(got, sparse_start);
    }

    #[test]
    fn aggregate_examples() {
        let tau = 1;
        let a = ParameterVector::from_vec(vec![2.0, 0.0]);
        let b = ParameterVector::from_vec(vec![0.0, 2.0]);
        // Tie after averaging: [1,1] thresholds to the lower index.
        let out = server_aggregate(&[a.clone(), b.clone()], &[0.5, 0.5], tau, 1).unwrap();
        assert_eq!(out, ParameterVector::from_vec(vec![1.0, 0.0]));

        // Identical tau-sparse inputs pass through.
        let same = server_aggregate(&[a.clone(), a.clone()], &[0.5, 0.5], 1, 1).unwrap();
        assert_eq!(same, a);

        // Degenerate weights pick out one client.
        let out = server_aggregate(&[a.clone(), b.clone()], &[0.0, 1.0], 1, 1).unwrap();
        assert_eq!(out, b);

        let short = ParameterVector::zeros(3);
        assert!(server_aggregate(&[a, short], &[0.5, 0.5], 1, 1).is_err());
    }

    #[test]
    fn divergence_reports_location() {
        // A step size this large overflows the iterate inside round 0.
        let c = client(0, &[(&[1e3, 0.0], 1.0), (&[0.0, 1e3], -1.0)]);
        let model = ObjectiveModel::least_squares();
        let cfg = RunConfig {
            algorithm: Algorithm::FedHt,
            tau: 2,
            local_steps: 5,
            rounds: 50,
            stepsize: StepsizeRule::Fixed(1e150),
            batch_schedule: BatchSchedule::Constant(2),
            weights: WeightScheme::Uniform,
            seed: 1,
            record_every: 1,
        };
        let err = run(&cfg, &[c], &model, None).unwrap_err();
        match err {
            Error::Diverged { round, client, .. } => {
                assert_eq!(round, 0);
                assert_eq!(client, 0);
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn slow_blowup_surfaces_with_round_number() {
        // Iterates stay finite for a while but the objective overflows; the
        // abort still names the failing round.
        let c = client(0, &[(&[1e3, 0.0], 1.0), (&[0.0, 1e3], -1.0)]);
        let model = ObjectiveModel::least_squares();
        let cfg = RunConfig {
            algorithm: Algorithm::FedHt,
            tau: 2,
            local_steps: 5,
            rounds: 50,
            stepsize: StepsizeRule::Fixed(10.0),
            batch_schedule: BatchSchedule::Constant(2),
            weights: WeightScheme::Uniform,
            seed: 1,
            record_every: 1,
        };
        let err = run(&cfg, &[c], &model, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("round"), "{msg}");
    }

    #[test]
    fn empty_round_count_records_baseline_only() {
        let c = client(0, &[(&[1.0, 0.0], 2.0)]);
        let model = ObjectiveModel::least_squares();
        let cfg = RunConfig {
            algorithm: Algorithm::FedHt,
            tau: 1,
            local_steps: 1,
            rounds: 0,
            stepsize: StepsizeRule::Fixed(0.1),
            batch_schedule: BatchSchedule::Constant(1),
            weights: WeightScheme::Uniform,
            seed: 1,
            record_every: 1,
        };
        let out = run(&cfg, &[c], &model, None).unwrap();
        assert_eq!(out.traces.len(), 1);
        assert_eq!(out.traces[0].round, 0);
        assert_eq!(out.traces[0].objective, 4.0);
        assert_eq!(out.final_x, ParameterVector::zeros(2));
    }
}
