//! The four subcommands: `generate`, `run`, `compare`, `theory`.
//!
//! Output files are written atomically (temp file + rename). The trace CSV
//! is byte-reproducible for a fixed config and seed, so the volatile
//! `wall_ms` column is zeroed there; measured timing goes to the report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fedsparse_core::analysis::{
    bias_diagnostics, compute_theory_factors, estimate_dissimilarity, rounds_for_epsilon,
    estimate_restricted_strong_convexity, TheoryFactors, TheoryVariant,
};
use fedsparse_core::datagen::{
    generate_sim1, generate_sim2, kmeans_labels, map_labels_to_classes, parse_libsvm,
    write_ground_truth, write_libsvm, ClientDataset, GroundTruth,
};
use fedsparse_core::federation::{
    global_gradient, measure_client_weights, pooled_smoothness, run, Algorithm, RoundTrace,
    RunConfig, RunOutcome, StepsizeRule,
};
use fedsparse_core::objectives::{estimate_variance, ObjectiveKind, Targets};
use fedsparse_core::{Error, Objective, ParameterVector, Result};

use crate::config::{DatasetConfig, ExperimentConfig, LibsvmTask, ModelConfig};

pub const TRACE_HEADER: &str =
    "round,iteration,objective,est_error_sq,support_f1,upload_scalars,download_scalars,wall_ms";

/// Clients, optional ground truth, and the bound objective.
pub struct LoadedData {
    pub clients: Vec<ClientDataset>,
    pub ground_truth: Option<GroundTruth>,
    pub model: Objective,
}

fn build_model(cfg: &ModelConfig) -> Result<Objective> {
    match cfg.objective {
        ObjectiveKind::LeastSquares => Ok(Objective {
            kind: ObjectiveKind::LeastSquares,
            lambda: cfg.lambda,
            num_classes: 1,
        }),
        ObjectiveKind::Logistic => Objective::logistic(cfg.lambda),
        ObjectiveKind::Softmax => Objective::softmax(cfg.num_classes, cfg.lambda),
    }
}

/// Materializes the configured dataset and binds the objective to it.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let mut model = build_model(&cfg.model)?;
    match &cfg.dataset {
        DatasetConfig::Sim1(spec) => {
            let (clients, truth) = generate_sim1(spec)?;
            Ok(LoadedData {
                clients,
                ground_truth: Some(truth),
                model,
            })
        }
        DatasetConfig::Sim2(spec) => {
            let (clients, truth) = generate_sim2(spec)?;
            Ok(LoadedData {
                clients,
                ground_truth: Some(truth),
                model,
            })
        }
        DatasetConfig::Libsvm(lib) => {
            let batch = parse_libsvm(&lib.path, lib.dim_hint)?;
            let (batch, categories) = match lib.task {
                LibsvmTask::Classification => {
                    let (mapped, table) = map_labels_to_classes(&batch)?;
                    if cfg.model.objective == ObjectiveKind::Softmax {
                        // The data decides the class count.
                        model = Objective::softmax(table.len(), cfg.model.lambda)?;
                    }
                    let categories: Vec<usize> = match mapped.targets() {
                        Targets::Class(c) => c.clone(),
                        Targets::Real(_) => unreachable!("just mapped"),
                    };
                    (mapped, categories)
                }
                LibsvmTask::Regression => {
                    let categories =
                        kmeans_labels(&batch, lib.kmeans_clusters, lib.kmeans_max_iters, lib.seed)?;
                    (batch, categories)
                }
            };
            let clients = fedsparse_core::datagen::partition_label_shards(
                &batch,
                &categories,
                lib.num_clients,
                lib.shards_per_category,
                lib.categories_per_client,
                lib.seed,
            )?;
            Ok(LoadedData {
                clients,
                ground_truth: None,
                model,
            })
        }
    }
}

fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV rows for one run; `wall_ms` is zeroed so reruns are byte-identical.
pub fn trace_csv(traces: &[RoundTrace]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for t in traces {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},0",
            t.round,
            t.iteration,
            t.objective,
            fmt_opt(t.est_error_sq),
            fmt_opt(t.support_f1),
            t.upload_scalars,
            t.download_scalars,
        );
    }
    out
}

fn stepsize_label(rule: StepsizeRule) -> String {
    match rule {
        StepsizeRule::Fixed(g) => g.to_string(),
        StepsizeRule::Auto => "auto".to_string(),
    }
}

/// Writes one LibSVM file per client plus the ground-truth sidecar and a
/// manifest; sim datasets only.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let spec = match &cfg.dataset {
        DatasetConfig::Sim1(spec) | DatasetConfig::Sim2(spec) => spec.clone(),
        DatasetConfig::Libsvm(_) => {
            return Err(Error::Config(
                "generate needs a synthetic dataset (sim1 or sim2)".into(),
            ))
        }
    };
    let kind = match &cfg.dataset {
        DatasetConfig::Sim1(_) => "sim1",
        DatasetConfig::Sim2(_) => "sim2",
        DatasetConfig::Libsvm(_) => unreachable!(),
    };
    let (clients, truth) = match &cfg.dataset {
        DatasetConfig::Sim1(spec) => generate_sim1(spec)?,
        DatasetConfig::Sim2(spec) => generate_sim2(spec)?,
        DatasetConfig::Libsvm(_) => unreachable!(),
    };

    fs::create_dir_all(&cfg.output_dir)?;
    let mut written = Vec::new();
    for client in &clients {
        let path = cfg
            .output_dir
            .join(format!("client_{:04}.libsvm", client.client_id));
        // write_libsvm is not atomic; route through a rename.
        let tmp = cfg
            .output_dir
            .join(format!("client_{:04}.libsvm.tmp", client.client_id));
        write_libsvm(&tmp, &client.batch)?;
        fs::rename(&tmp, &path)?;
        written.push(path);
    }

    let truth_path = cfg.output_dir.join("ground_truth.txt");
    let tmp = cfg.output_dir.join("ground_truth.txt.tmp");
    write_ground_truth(&tmp, &truth)?;
    fs::rename(&tmp, &truth_path)?;
    written.push(truth_path);

    let mut manifest = String::new();
    let _ = writeln!(manifest, "[dataset]");
    let _ = writeln!(manifest, "kind = {kind}");
    let _ = writeln!(manifest, "clients = {}", spec.num_clients);
    let _ = writeln!(manifest, "samples_per_client = {}", spec.samples_per_client);
    let _ = writeln!(manifest, "dim = {}", spec.dim);
    let _ = writeln!(manifest, "true_support_size = {}", spec.true_support_size);
    let _ = writeln!(manifest, "alpha = {}", spec.alpha);
    let _ = writeln!(manifest, "beta = {}", spec.beta);
    let _ = writeln!(manifest, "seed = {}", spec.seed);
    let total: usize = clients.iter().map(ClientDataset::num_samples).sum();
    let _ = writeln!(manifest, "total_samples = {total}");
    let _ = writeln!(manifest);
    let _ = writeln!(manifest, "[samples]");
    for client in &clients {
        let _ = writeln!(manifest, "{} = {}", client.client_id, client.num_samples());
    }
    let manifest_path = cfg.output_dir.join("manifest.txt");
    write_atomic(&manifest_path, &manifest)?;
    written.push(manifest_path);

    Ok(written)
}

pub struct RunArtifacts {
    pub outcome: RunOutcome,
    pub trace_path: PathBuf,
    pub report_path: PathBuf,
}

/// Runs the configured algorithm and writes `trace.csv` and `report.txt`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let data = load_dataset(cfg)?;
    let outcome = run(
        &cfg.run.run,
        &data.clients,
        &data.model,
        data.ground_truth.as_ref(),
    )?;

    let trace_path = cfg.output_dir.join("trace.csv");
    write_atomic(&trace_path, &trace_csv(&outcome.traces))?;

    let report = run_report(cfg, &data, &outcome)?;
    let report_path = cfg.output_dir.join("report.txt");
    write_atomic(&report_path, &report)?;

    Ok(RunArtifacts {
        outcome,
        trace_path,
        report_path,
    })
}

fn run_report(cfg: &ExperimentConfig, data: &LoadedData, outcome: &RunOutcome) -> Result<String> {
    let run_cfg = &cfg.run.run;
    let last = outcome.traces.last().expect("run always records round 0");
    let mut out = String::new();
    let _ = writeln!(out, "algorithm = {}", run_cfg.algorithm.name());
    let _ = writeln!(out, "clients = {}", data.clients.len());
    let _ = writeln!(out, "dim = {}", data.clients[0].batch.dim());
    let _ = writeln!(out, "parameter_blocks = {}", data.model.num_blocks());
    let _ = writeln!(out, "tau = {}", run_cfg.tau);
    let _ = writeln!(out, "local_steps = {}", run_cfg.effective_local_steps());
    let _ = writeln!(out, "rounds = {}", run_cfg.rounds);
    let _ = writeln!(out, "stepsize = {}", stepsize_label(run_cfg.stepsize));
    let _ = writeln!(out, "seed = {}", run_cfg.seed);
    let _ = writeln!(out, "final_objective = {}", last.objective);
    if let Some(e) = last.est_error_sq {
        let _ = writeln!(out, "final_est_error_sq = {e}");
    }
    if let Some(f1) = last.support_f1 {
        let _ = writeln!(out, "final_support_f1 = {f1}");
    }
    let _ = writeln!(out, "upload_scalars = {}", last.upload_scalars);
    let _ = writeln!(out, "download_scalars = {}", last.download_scalars);
    let _ = writeln!(out, "elapsed_ms = {}", last.wall_ms);

    let smoothness = pooled_smoothness(&data.model, &data.clients)?;
    let _ = writeln!(
        out,
        "smoothness_estimate = {} (converged = {})",
        smoothness.value, smoothness.converged
    );

    // Dissimilarity over a thinned set of the recorded iterates.
    let weights = measure_client_weights(&data.clients, &run_cfg.weights)?;
    let probes = thin_probes(&outcome.recorded_iterates, 8);
    match estimate_dissimilarity(
        &data.clients,
        &data.model,
        &weights,
        &probes,
        run_cfg.tau.min(data.model.param_len(data.clients[0].batch.dim())),
    ) {
        Ok(report) => {
            let _ = writeln!(
                out,
                "dissimilarity_b = {} (probes = {}, skipped = {}, support = {})",
                report.b_estimate,
                report.num_probe_points,
                report.num_skipped,
                report.support_size_probed
            );
        }
        Err(e) => {
            let _ = writeln!(out, "dissimilarity_b = unavailable ({e})");
        }
    }
    Ok(out)
}

fn thin_probes(iterates: &[ParameterVector], max: usize) -> Vec<ParameterVector> {
    if iterates.len() <= max {
        return iterates.to_vec();
    }
    let step = (iterates.len() - 1) as f64 / (max - 1) as f64;
    (0..max)
        .map(|i| iterates[(i as f64 * step).round() as usize].clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub stepsize: StepsizeRule,
    pub local_steps: usize,
}

pub struct SweepRun {
    pub point: SweepPoint,
    pub outcome: std::result::Result<RunOutcome, String>,
}

pub struct CompareArtifacts {
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub runs: Vec<SweepRun>,
    pub failures: usize,
}

/// Runs the sweep cross-product, writes the combined CSV and the
/// rounds-to-target summary. Child failures are recorded and the sweep
/// continues.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CompareArtifacts> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("compare needs a [sweep] section".into()))?;
    let data = load_dataset(cfg)?;

    let mut runs = Vec::new();
    for &algorithm in &sweep.algorithms {
        for &stepsize in &sweep.stepsizes {
            for &local_steps in &sweep.local_steps {
                let point = SweepPoint {
                    algorithm,
                    stepsize,
                    local_steps,
                };
                let run_cfg = RunConfig {
                    algorithm,
                    stepsize,
                    local_steps,
                    ..cfg.run.run.clone()
                };
                let outcome = run(
                    &run_cfg,
                    &data.clients,
                    &data.model,
                    data.ground_truth.as_ref(),
                )
                .map_err(|e| e.to_string());
                runs.push(SweepRun { point, outcome });
            }
        }
    }

    // Combined CSV: base schema plus the sweep coordinates.
    let mut csv = format!("{TRACE_HEADER},algorithm,stepsize,K\n");
    for sweep_run in &runs {
        if let Ok(outcome) = &sweep_run.outcome {
            let point = sweep_run.point;
            for t in &outcome.traces {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},0,{},{},{}",
                    t.round,
                    t.iteration,
                    t.objective,
                    fmt_opt(t.est_error_sq),
                    fmt_opt(t.support_f1),
                    t.upload_scalars,
                    t.download_scalars,
                    point.algorithm.name(),
                    stepsize_label(point.stepsize),
                    point.local_steps,
                );
            }
        }
    }
    let csv_path = cfg.output_dir.join("compare.csv");
    write_atomic(&csv_path, &csv)?;

    let summary = compare_summary(&runs);
    let summary_path = cfg.output_dir.join("summary.txt");
    write_atomic(&summary_path, &summary)?;

    let failures = runs.iter().filter(|r| r.outcome.is_err()).count();
    Ok(CompareArtifacts {
        csv_path,
        summary_path,
        runs,
        failures,
    })
}

/// First recorded round whose objective reaches `target`.
pub fn rounds_to_target(traces: &[RoundTrace], target: f64) -> Option<usize> {
    traces
        .iter()
        .find(|t| t.objective <= target)
        .map(|t| t.round)
}

fn compare_summary(runs: &[SweepRun]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "runs = {}", runs.len());

    // Baseline: the best distributed run, else the first completed one.
    let completed: Vec<&SweepRun> = runs.iter().filter(|r| r.outcome.is_ok()).collect();
    let baseline = completed
        .iter()
        .filter(|r| r.point.algorithm == Algorithm::DistributedIht)
        .min_by(|a, b| final_objective(a).total_cmp(&final_objective(b)))
        .copied()
        .or_else(|| completed.first().copied());

    let target = baseline.map(|b| {
        let t = final_objective(b);
        let _ = writeln!(
            out,
            "baseline = algorithm={} stepsize={} K={}",
            b.point.algorithm.name(),
            stepsize_label(b.point.stepsize),
            b.point.local_steps
        );
        let _ = writeln!(out, "target_objective = {t}");
        t
    });

    for r in runs {
        match &r.outcome {
            Ok(outcome) => {
                let last = outcome.traces.last().expect("nonempty traces");
                let reached = target.and_then(|t| rounds_to_target(&outcome.traces, t));
                let _ = writeln!(
                    out,
                    "result algorithm={} stepsize={} K={} status=ok final_objective={} \
                     rounds_to_target={}",
                    r.point.algorithm.name(),
                    stepsize_label(r.point.stepsize),
                    r.point.local_steps,
                    last.objective,
                    reached.map(|t| t.to_string()).unwrap_or_else(|| "none".into()),
                );
            }
            Err(e) => {
                let _ = writeln!(
                    out,
                    "result algorithm={} stepsize={} K={} status=failed detail=\"{e}\"",
                    r.point.algorithm.name(),
                    stepsize_label(r.point.stepsize),
                    r.point.local_steps,
                );
            }
        }
    }
    out
}

fn final_objective(run: &SweepRun) -> f64 {
    run.outcome
        .as_ref()
        .map(|o| o.traces.last().expect("nonempty traces").objective)
        .unwrap_or(f64::INFINITY)
}

pub struct TheoryArtifacts {
    pub report: String,
    pub report_path: PathBuf,
}

/// Prints the contraction factors, sparsity prerequisites, round-count
/// bounds, and the empirical dissimilarity for the configured problem.
pub fn cmd_theory(cfg: &ExperimentConfig) -> Result<TheoryArtifacts> {
    let data = load_dataset(cfg)?;
    let truth = data.ground_truth.as_ref().ok_or_else(|| {
        Error::Config("theory reports need ground truth; use a sim dataset".into())
    })?;
    let run_cfg = &cfg.run.run;
    let weights = measure_client_weights(&data.clients, &run_cfg.weights)?;
    let tau_star = truth.shared_support.len();
    let x_star = truth.pooled_reference(&weights)?;

    let smoothness = pooled_smoothness(&data.model, &data.clients)?;
    let rho = estimate_restricted_strong_convexity(
        &data.model,
        &data.clients,
        &weights,
        &ParameterVector::zeros(data.model.param_len(data.clients[0].batch.dim())),
        run_cfg.tau.min(data.clients[0].batch.dim()),
        200,
        run_cfg.seed,
    )?;
    let kappa = if rho > 0.0 {
        (smoothness.value / rho).max(1.0)
    } else {
        f64::INFINITY
    };

    let mut out = String::new();
    let _ = writeln!(out, "tau = {}", run_cfg.tau);
    let _ = writeln!(out, "tau_star = {tau_star}");
    let _ = writeln!(
        out,
        "smoothness_estimate = {} (converged = {})",
        smoothness.value, smoothness.converged
    );
    let _ = writeln!(out, "restricted_convexity_estimate = {rho}");
    let _ = writeln!(out, "condition_number_empirical = {kappa}");

    if !kappa.is_finite() {
        let _ = writeln!(out, "theory = unavailable (no empirical strong convexity)");
        let path = cfg.output_dir.join("theory.txt");
        write_atomic(&path, &out)?;
        return Ok(TheoryArtifacts {
            report: out,
            report_path: path,
        });
    }

    let initial_dist = x_star.norm_sq().sqrt();
    let _ = writeln!(out, "initial_distance = {initial_dist}");
    let _ = writeln!(out, "epsilon = {}", cfg.run.epsilon);

    let fed = compute_theory_factors(
        TheoryVariant::FedHt,
        run_cfg.tau,
        tau_star,
        kappa,
        run_cfg.effective_local_steps(),
        smoothness.value,
    )?;
    let fediter = compute_theory_factors(
        TheoryVariant::FedIterHt,
        run_cfg.tau,
        tau_star,
        kappa,
        run_cfg.effective_local_steps(),
        smoothness.value,
    )?;
    append_factors(&mut out, "fed_ht", &fed, initial_dist, cfg.run.epsilon);
    append_factors(&mut out, "fediter_ht", &fediter, initial_dist, cfg.run.epsilon);

    // Dissimilarity probed at the iterates of a short pilot run.
    let pilot_cfg = RunConfig {
        rounds: run_cfg.rounds.min(10),
        record_every: 1,
        ..run_cfg.clone()
    };
    let pilot = run(&pilot_cfg, &data.clients, &data.model, Some(truth))?;
    let dissimilarity = estimate_dissimilarity(
        &data.clients,
        &data.model,
        &weights,
        &pilot.recorded_iterates,
        run_cfg.tau.min(data.model.param_len(data.clients[0].batch.dim())),
    )?;
    let _ = writeln!(
        out,
        "dissimilarity_b = {} (probes = {}, skipped = {}, support = {})",
        dissimilarity.b_estimate,
        dissimilarity.num_probe_points,
        dissimilarity.num_skipped,
        dissimilarity.support_size_probed
    );

    // Bias terms at the pooled reference.
    let grad_star = global_gradient(&data.model, &pad_like(&x_star, &pilot.final_x), &data.clients, &weights)?;
    let bias = bias_diagnostics(
        &fed,
        &fediter,
        dissimilarity.b_estimate,
        &grad_star,
        &pad_like(&x_star, &pilot.final_x),
        data.clients.len(),
        run_cfg.tau,
    );
    if let Some(g1) = bias.g1 {
        let _ = writeln!(out, "bias_g1 = {g1}");
    }
    if let Some(g3) = bias.g3 {
        let _ = writeln!(out, "bias_g3 = {g3}");
    }

    // Variance-driven lower bound on the geometric batch scale.
    let sigma_bar: f64 = {
        let mut acc = 0.0;
        let origin = ParameterVector::zeros(data.model.param_len(data.clients[0].batch.dim()));
        for (client, &w) in data.clients.iter().zip(&weights) {
            acc += w
                * estimate_variance(&data.model, origin.as_slice(), &client.batch)?
                    .sigma_sq;
        }
        acc
    };
    let _ = writeln!(out, "weighted_sigma_sq_at_origin = {sigma_bar}");
    if initial_dist > 0.0 {
        let denom = initial_dist * initial_dist;
        let delta1 = fed.alpha * (1.0 - 1.0 / (12.0 * fed.kappa)).powi(fed.local_steps as i32);
        if delta1 > 0.0 {
            let _ = writeln!(out, "batch_gamma_bound_fed_ht = {}", fed.xi * sigma_bar / (delta1 * denom));
        }
        let base = 1.0 - 1.0 / (12.0 * fediter.kappa);
        let delta2 = (2.0 * fediter.alpha + 2.0 * fediter.alpha * fediter.alpha)
            * base.powi(fediter.local_steps as i32);
        if delta2 > 0.0 {
            let _ = writeln!(
                out,
                "batch_gamma_bound_fediter_ht = {}",
                fediter.xi * sigma_bar / (delta2 * denom)
            );
        }
    }

    let path = cfg.output_dir.join("theory.txt");
    write_atomic(&path, &out)?;
    Ok(TheoryArtifacts {
        report: out,
        report_path: path,
    })
}

fn append_factors(out: &mut String, name: &str, f: &TheoryFactors, dist: f64, epsilon: f64) {
    let _ = writeln!(out, "[{name}]");
    let _ = writeln!(out, "alpha = {}", f.alpha);
    let _ = writeln!(out, "theta = {} (valid = {})", f.theta, f.valid);
    if let Some(pk) = f.theta_per_step {
        let _ = writeln!(out, "theta_per_step_variant = {pk}");
    }
    let _ = writeln!(out, "psi = {}", f.psi);
    let _ = writeln!(out, "xi = {}", f.xi);
    let _ = writeln!(
        out,
        "tau_prerequisite = {} (satisfied = {})",
        f.tau_required, f.tau_ok
    );
    if f.valid {
        match rounds_for_epsilon(f.theta, dist, epsilon) {
            Ok(t) => {
                let _ = writeln!(out, "rounds_for_epsilon = {t}");
            }
            Err(e) => {
                let _ = writeln!(out, "rounds_for_epsilon = unavailable ({e})");
            }
        }
    } else {
        let _ = writeln!(out, "rounds_for_epsilon = unavailable (theta >= 1)");
    }
}

fn pad_like(reference: &ParameterVector, like: &ParameterVector) -> ParameterVector {
    if reference.len() == like.len() {
        return reference.clone();
    }
    let mut padded = ParameterVector::zeros(like.len());
    padded.as_mut_slice()[..reference.len()].copy_from_slice(reference.as_slice());
    padded
}
