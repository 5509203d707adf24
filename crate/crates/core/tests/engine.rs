//! Cross-module behavior of the federated engine on generated data.

use fedsparse_core::datagen::{generate_sim1, SyntheticSpec};
use fedsparse_core::federation::{
    run, Algorithm, BatchSchedule, RunConfig, StepsizeRule, WeightScheme,
};
use fedsparse_core::Objective;

fn small_spec(seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::sim1_defaults(seed);
    spec.num_clients = 8;
    spec.samples_per_client = 12;
    spec.dim = 40;
    spec.true_support_size = 6;
    spec
}

fn base_config(algorithm: Algorithm) -> RunConfig {
    RunConfig {
        algorithm,
        tau: 10,
        local_steps: 3,
        rounds: 12,
        stepsize: StepsizeRule::Fixed(1e-3),
        batch_schedule: BatchSchedule::Constant(4),
        weights: WeightScheme::Uniform,
        seed: 7,
        record_every: 1,
    }
}

#[test]
fn global_iterates_respect_sparsity_budget() {
    let (clients, truth) = generate_sim1(&small_spec(3)).unwrap();
    let model = Objective::least_squares();
    for algorithm in [Algorithm::FedHt, Algorithm::FedIterHt, Algorithm::DistributedIht] {
        let cfg = base_config(algorithm);
        let out = run(&cfg, &clients, &model, Some(&truth)).unwrap();
        for x in &out.recorded_iterates {
            assert!(x.nnz() <= cfg.tau, "{algorithm:?} broke the budget");
            assert!(x.all_finite());
        }
        for t in &out.traces {
            assert!(t.objective.is_finite());
        }
    }
}

#[test]
fn traces_are_deterministic_and_seed_sensitive() {
    let (clients, truth) = generate_sim1(&small_spec(11)).unwrap();
    let model = Objective::least_squares();
    let cfg = base_config(Algorithm::FedIterHt);
    let a = run(&cfg, &clients, &model, Some(&truth)).unwrap();
    let b = run(&cfg, &clients, &model, Some(&truth)).unwrap();
    let strip = |t: &fedsparse_core::federation::RoundTrace| {
        (
            t.round,
            t.iteration,
            t.objective.to_bits(),
            t.est_error_sq.map(f64::to_bits),
            t.support_f1.map(f64::to_bits),
            t.upload_scalars,
            t.download_scalars,
        )
    };
    let ta: Vec<_> = a.traces.iter().map(strip).collect();
    let tb: Vec<_> = b.traces.iter().map(strip).collect();
    assert_eq!(ta, tb);
    assert_eq!(a.final_x, b.final_x);

    let mut other = cfg.clone();
    other.seed = 8;
    let c = run(&other, &clients, &model, Some(&truth)).unwrap();
    assert_ne!(
        a.traces.last().unwrap().objective,
        c.traces.last().unwrap().objective
    );
}

#[test]
fn comm_counters_monotone_and_iterated_variant_uploads_less() {
    let (clients, _) = generate_sim1(&small_spec(5)).unwrap();
    let model = Objective::least_squares();

    let mut prev_up = 0;
    let mut prev_down = 0;
    let fed = run(&base_config(Algorithm::FedHt), &clients, &model, None).unwrap();
    for t in &fed.traces {
        assert!(t.upload_scalars >= prev_up);
        assert!(t.download_scalars >= prev_down);
        prev_up = t.upload_scalars;
        prev_down = t.download_scalars;
    }

    // d = 40 > 2 tau = 20, so the sparse uploads are strictly cheaper.
    let iter = run(&base_config(Algorithm::FedIterHt), &clients, &model, None).unwrap();
    assert!(
        iter.traces.last().unwrap().upload_scalars < fed.traces.last().unwrap().upload_scalars
    );
    // Per client per round: d vs 2 tau.
    let n = clients.len() as u64;
    assert_eq!(fed.traces[1].upload_scalars, 40 * n);
    assert_eq!(iter.traces[1].upload_scalars, 20 * n);
}

#[test]
fn full_budget_fed_ht_is_plain_local_sgd_averaging() {
    // With tau = d the thresholding is the identity, so the trajectory must
    // match a hand-rolled FedAvg-style loop.
    let (clients, _) = generate_sim1(&small_spec(9)).unwrap();
    let model = Objective::least_squares();
    let mut cfg = base_config(Algorithm::FedHt);
    cfg.tau = 40;
    cfg.rounds = 5;
    // Full batches keep the oracle loop free of RNG bookkeeping.
    cfg.batch_schedule = BatchSchedule::Constant(usize::MAX);
    let out = run(&cfg, &clients, &model, None).unwrap();

    let gamma = 1e-3;
    let mut x = fedsparse_core::ParameterVector::zeros(40);
    for _ in 0..cfg.rounds {
        let mut avg = fedsparse_core::ParameterVector::zeros(40);
        for c in &clients {
            let mut xi = x.clone();
            for _ in 0..cfg.local_steps {
                let g =
                    fedsparse_core::objectives::gradient(&model, xi.as_slice(), &c.batch).unwrap();
                xi.axpy(-gamma, &g);
            }
            avg.axpy(1.0 / clients.len() as f64, xi.as_slice());
        }
        x = avg;
    }
    assert_eq!(out.final_x, x);
}

#[test]
fn degenerate_single_client_single_step_equivalence() {
    // N = 1, K = 1, full batch: all three algorithms are centralized IHT.
    let mut spec = small_spec(13);
    spec.num_clients = 1;
    let (clients, truth) = generate_sim1(&spec).unwrap();
    let model = Objective::least_squares();
    let mk = |algorithm| {
        let mut cfg = base_config(algorithm);
        cfg.local_steps = 1;
        cfg.rounds = 20;
        cfg.batch_schedule = BatchSchedule::Constant(usize::MAX);
        cfg
    };
    let fed = run(&mk(Algorithm::FedHt), &clients, &model, Some(&truth)).unwrap();
    let iter = run(&mk(Algorithm::FedIterHt), &clients, &model, Some(&truth)).unwrap();
    let dist = run(&mk(Algorithm::DistributedIht), &clients, &model, Some(&truth)).unwrap();
    for (a, b) in fed.recorded_iterates.iter().zip(&iter.recorded_iterates) {
        assert_eq!(a, b);
    }
    for (a, b) in fed.recorded_iterates.iter().zip(&dist.recorded_iterates) {
        assert_eq!(a, b);
    }
}

#[test]
fn record_every_thins_traces_but_keeps_final_round() {
    let (clients, _) = generate_sim1(&small_spec(2)).unwrap();
    let model = Objective::least_squares();
    let mut cfg = base_config(Algorithm::DistributedIht);
    cfg.rounds = 10;
    cfg.record_every = 4;
    let out = run(&cfg, &clients, &model, None).unwrap();
    let rounds: Vec<usize> = out.traces.iter().map(|t| t.round).collect();
    assert_eq!(rounds, vec![0, 4, 8, 10]);
    // iteration tracks rounds for the single-step baseline.
    assert!(out.traces.iter().all(|t| t.iteration == t.round));
}

#[test]
fn auto_stepsize_converges_on_sim1() {
    let (clients, truth) = generate_sim1(&small_spec(17)).unwrap();
    let model = Objective::least_squares();
    let mut cfg = base_config(Algorithm::FedIterHt);
    cfg.stepsize = StepsizeRule::Auto;
    cfg.rounds = 30;
    let out = run(&cfg, &clients, &model, Some(&truth)).unwrap();
    let first = out.traces.first().unwrap().objective;
    let last = out.traces.last().unwrap().objective;
    assert!(last < first, "objective should decrease: {first} -> {last}");
}
