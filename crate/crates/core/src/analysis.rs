//! Executable convergence diagnostics and recovery metrics.
//!
//! The per-round contraction factor of each algorithm is a closed-form
//! function of the thresholding relaxation `alpha = 2 sqrt(tau*) /
//! sqrt(tau - tau*)`, the condition number `kappa`, and the local step
//! count. These formulas are evaluated here verbatim, together with the
//! empirical estimators (gradient dissimilarity, restricted curvature) that
//! feed them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::federation::global_gradient;
use crate::objectives::{self, ObjectiveModel};
use crate::tensor::{top_tau_indices, DenseVector, SupportSet};

pub type ParameterVector = DenseVector<f64>;
type Objective = ObjectiveModel<f64>;

/// Relaxation factor of hard thresholding: `2 sqrt(tau*) / sqrt(tau - tau*)`.
/// Defined only for `tau > tau_star >= 1`.
pub fn compute_alpha(tau: usize, tau_star: usize) -> Result<f64> {
    if tau_star == 0 || tau <= tau_star {
        return Err(Error::Theory(format!(
            "alpha needs tau > tau_star >= 1, got tau={tau}, tau_star={tau_star}"
        )));
    }
    Ok(2.0 * (tau_star as f64).sqrt() / ((tau - tau_star) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryVariant {
    FedHt,
    FedIterHt,
}

/// Closed-form convergence factors for one algorithm variant.
#[derive(Debug, Clone, Copy)]
pub struct TheoryFactors {
    pub variant: TheoryVariant,
    pub alpha: f64,
    pub kappa: f64,
    pub local_steps: usize,
    /// Per-round contraction factor as stated for the variant.
    pub theta: f64,
    /// The iterated variant is also stated with the local-step exponent in
    /// the derivation; both readings are reported.
    pub theta_per_step: Option<f64>,
    pub psi: f64,
    pub xi: f64,
    /// Contraction is only meaningful below one.
    pub valid: bool,
    /// Minimal sparsity budget the guarantee assumes.
    pub tau_required: f64,
    pub tau_ok: bool,
}

/// Evaluates the printed factor formulas.
///
/// `smoothness` enters only through `xi` (which carries a `1/l²` unit); pass
/// 1.0 to read `xi` in those units.
pub fn compute_theory_factors(
    variant: TheoryVariant,
    tau: usize,
    tau_star: usize,
    kappa: f64,
    local_steps: usize,
    smoothness: f64,
) -> Result<TheoryFactors> {
    if !(kappa >= 1.0) {
        return Err(Error::Theory(format!("condition number {kappa} must be >= 1")));
    }
    if local_steps == 0 {
        return Err(Error::Theory("local step count must be >= 1".into()));
    }
    if !(smoothness > 0.0) {
        return Err(Error::Theory(format!("smoothness {smoothness} must be positive")));
    }
    let alpha = compute_alpha(tau, tau_star)?;
    let base = 1.0 - 1.0 / (12.0 * kappa);
    let pow_k = base.powi(local_steps as i32);
    let l_sq = smoothness * smoothness;

    let (theta, theta_per_step, psi, xi, tau_required) = match variant {
        TheoryVariant::FedHt => {
            let theta = (1.0 + 2.0 * alpha) * pow_k;
            let psi = (1.0 + alpha) * pow_k;
            let xi = (1.0 + alpha) * (1.0 - pow_k) * kappa / l_sq;
            let tau_required = (16.0 * (12.0 * kappa - 1.0).powi(2) + 1.0) * tau_star as f64;
            (theta, None, psi, xi, tau_required)
        }
        TheoryVariant::FedIterHt => {
            let one_plus = (1.0 + 2.0 * alpha).powi(2);
            let theta = one_plus * base;
            let theta_per_step = one_plus * pow_k;
            let psi = (1.0 + alpha).powi(2) * base;
            let xi = (1.0 + alpha).powi(2) * (1.0 - pow_k) * kappa / l_sq;
            let ratio = 12.0 * kappa / (12.0 * kappa - 1.0);
            let tau_required = (16.0 / (ratio.sqrt() - 1.0).powi(2) + 1.0) * tau_star as f64;
            (theta, Some(theta_per_step), psi, xi, tau_required)
        }
    };

    Ok(TheoryFactors {
        variant,
        alpha,
        kappa,
        local_steps,
        theta,
        theta_per_step,
        psi,
        xi,
        valid: theta < 1.0,
        tau_required,
        tau_ok: tau as f64 >= tau_required,
    })
}

/// Rounds needed to contract an initial distance below `epsilon` at rate
/// `theta`: `ceil(ln(dist/eps) / (-ln theta))`, clamped at zero.
pub fn rounds_for_epsilon(theta: f64, initial_dist: f64, epsilon: f64) -> Result<u64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Theory(format!(
            "contraction factor {theta} is not in (0, 1); the guarantee does not apply"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Theory(format!("epsilon {epsilon} must be positive")));
    }
    if initial_dist <= epsilon {
        return Ok(0);
    }
    let raw = (initial_dist / epsilon).ln() / -theta.ln();
    // Absorb float noise before taking the ceiling.
    let near = raw.round();
    let rounds = if (raw - near).abs() < 1e-9 { near } else { raw.ceil() };
    Ok(rounds.max(0.0) as u64)
}

/// Empirical bound on the gradient dissimilarity across clients.
#[derive(Debug, Clone, Copy)]
pub struct DissimilarityReport {
    /// `max over probes of sqrt(sum_i p_i ‖π_I ∇f_i‖² / ‖π_I ∇f‖²)`;
    /// at least 1 whenever any probe survives.
    pub b_estimate: f64,
    pub num_probe_points: usize,
    pub num_skipped: usize,
    pub support_size_probed: usize,
}

/// Measures the dissimilarity ratio at each probe point over the support of
/// the `support_size` largest global-gradient coordinates; probes whose
/// restricted global gradient is numerically zero are skipped and counted.
pub fn estimate_dissimilarity(
    clients: &[ClientDataset],
    model: &Objective,
    weights: &[f64],
    probe_points: &[ParameterVector],
    support_size: usize,
) -> Result<DissimilarityReport> {
    if probe_points.is_empty() {
        return Err(Error::Estimation("no probe points supplied".into()));
    }
    if clients.is_empty() || weights.len() != clients.len() {
        return Err(Error::Dimension("weights must match clients".into()));
    }
    let param_len = model.param_len(clients[0].batch.dim());
    if support_size == 0 || support_size > param_len {
        return Err(Error::Config(format!(
            "probe support size {support_size} must lie in [1, {param_len}]"
        )));
    }

    let mut best = f64::NEG_INFINITY;
    let mut skipped = 0usize;
    for probe in probe_points {
        let per_client: Vec<Vec<f64>> = clients
            .iter()
            .map(|c| objectives::gradient(model, probe.as_slice(), &c.batch))
            .collect::<Result<_>>()?;
        let mut global = vec![0.0f64; param_len];
        for (g, &w) in per_client.iter().zip(weights) {
            for (acc, gi) in global.iter_mut().zip(g) {
                *acc += w * gi;
            }
        }
        let support = top_tau_indices(&global, support_size);
        let denom: f64 = support.iter().map(|&i| global[i] * global[i]).sum();
        if denom < 1e-12 {
            skipped += 1;
            continue;
        }
        let numer: f64 = per_client
            .iter()
            .zip(weights)
            .map(|(g, &w)| w * support.iter().map(|&i| g[i] * g[i]).sum::<f64>())
            .sum();
        best = best.max((numer / denom).sqrt());
    }

    if skipped == probe_points.len() {
        return Err(Error::Estimation(
            "every probe had a numerically zero restricted global gradient".into(),
        ));
    }
    Ok(DissimilarityReport {
        b_estimate: best,
        num_probe_points: probe_points.len(),
        num_skipped: skipped,
        support_size_probed: support_size,
    })
}

/// Squared l2 distance to the reference.
pub fn estimation_error(x: &ParameterVector, x_star: &ParameterVector) -> f64 {
    debug_assert_eq!(x.len(), x_star.len());
    x.dist_sq(x_star)
}

/// F1 score between the supports of `x` and `x_star`
/// (`2|A∩B| / (|A|+|B|)`); 1 when both are empty.
pub fn support_f1(x: &ParameterVector, x_star: &ParameterVector) -> f64 {
    support_f1_sets(&x.support(), &x_star.support())
}

pub fn support_f1_sets(a: &SupportSet, b: &SupportSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let overlap = a.intersection_len(b);
    2.0 * overlap as f64 / (a.len() + b.len()) as f64
}

/// Smallest Rayleigh quotient of the pooled objective's curvature along
/// random `sparsity`-sparse directions through `x0`, via central gradient
/// differences. An empirical stand-in for the restricted strong-convexity
/// constant.
pub fn estimate_restricted_strong_convexity(
    model: &Objective,
    clients: &[ClientDataset],
    weights: &[f64],
    x0: &ParameterVector,
    sparsity: usize,
    num_probes: usize,
    seed: u64,
) -> Result<f64> {
    if num_probes == 0 {
        return Err(Error::Config("need at least one probe direction".into()));
    }
    let len = x0.len();
    if sparsity == 0 || sparsity > len {
        return Err(Error::Config(format!(
            "probe sparsity {sparsity} must lie in [1, {len}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4 * x0.norm_sq().sqrt().max(1.0);
    let mut rho = f64::INFINITY;
    let mut indices: Vec<usize> = (0..len).collect();
    for _ in 0..num_probes {
        // Partial Fisher-Yates: the first `sparsity` entries become the
        // support of the probe direction.
        for i in 0..sparsity {
            let j = rng.gen_range(i..len);
            indices.swap(i, j);
        }
        let mut u = ParameterVector::zeros(len);
        for &i in &indices[..sparsity] {
            u[i] = rng.gen::<f64>() * 2.0 - 1.0;
        }
        let norm = u.norm_sq().sqrt();
        if norm == 0.0 {
            continue;
        }
        u.scale(1.0 / norm);

        let mut plus = x0.clone();
        plus.axpy(h, u.as_slice());
        let mut minus = x0.clone();
        minus.axpy(-h, u.as_slice());
        let g_plus = global_gradient(model, &plus, clients, weights)?;
        let g_minus = global_gradient(model, &minus, clients, weights)?;
        let mut directional = 0.0;
        for i in 0..len {
            directional += u[i] * (g_plus[i] - g_minus[i]);
        }
        rho = rho.min(directional / (2.0 * h));
    }
    if !rho.is_finite() {
        return Err(Error::Estimation("no usable probe direction".into()));
    }
    Ok(rho)
}

/// Statistical bias terms of the two guarantees, computable only when the
/// sparse reference is known.
#[derive(Debug, Clone, Copy)]
pub struct BiasDiagnostics {
    /// `xi B² / (1-psi) ‖∇f(x*)‖²` for the server-only variant.
    pub g1: Option<f64>,
    /// Same with the gradient restricted to the enlarged reference support
    /// for the iterated variant.
    pub g3: Option<f64>,
}

pub fn bias_diagnostics(
    fed: &TheoryFactors,
    fediter: &TheoryFactors,
    b_estimate: f64,
    grad_at_star: &ParameterVector,
    x_star: &ParameterVector,
    num_clients: usize,
    tau: usize,
) -> BiasDiagnostics {
    let b_sq = b_estimate * b_estimate;
    let g1 = (fed.psi < 1.0).then(|| fed.xi * b_sq / (1.0 - fed.psi) * grad_at_star.norm_sq());
    let g3 = (fediter.psi < 1.0).then(|| {
        let keep = (2 * num_clients * tau).min(grad_at_star.len());
        let top = SupportSet::new(top_tau_indices(grad_at_star.as_slice(), keep));
        let support = crate::tensor::support_union(&[top, x_star.support()]);
        let restricted_sq: f64 = support.iter().map(|i| grad_at_star[i] * grad_at_star[i]).sum();
        fediter.xi * b_sq / (1.0 - fediter.psi) * restricted_sq
    });
    BiasDiagnostics { g1, g3 }
}
