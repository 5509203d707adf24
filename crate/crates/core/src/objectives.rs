//! Loss and gradient evaluation for the three experiment objectives.
//!
//! The objectives are sparse least squares `(1/B)‖Y − Zx‖²`, l2-regularized
//! logistic regression `log(1+exp(zᵀx)) − y·zᵀx` with `y ∈ {0,1}`, and
//! multi-class softmax regression with one parameter block per class.
//! Everything here is a pure function of `(model, parameters, batch)`;
//! stochastic gradients draw sample indices from a caller-owned RNG stream.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which loss the model binds to the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    LeastSquares,
    Logistic,
    Softmax,
}

/// Tagged objective: loss family, l2 weight, and class count (softmax only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveModel<F: Real> {
    pub kind: ObjectiveKind,
    pub lambda: F,
    pub num_classes: usize,
}

impl<F: Real> ObjectiveModel<F> {
    pub fn least_squares() -> Self {
        Self {
            kind: ObjectiveKind::LeastSquares,
            lambda: F::zero(),
            num_classes: 1,
        }
    }

    pub fn logistic(lambda: F) -> Result<Self> {
        if lambda < F::zero() {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        Ok(Self {
            kind: ObjectiveKind::Logistic,
            lambda,
            num_classes: 1,
        })
    }

    pub fn softmax(num_classes: usize, lambda: F) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "softmax needs at least 2 classes, got {num_classes}"
            )));
        }
        if lambda < F::zero() {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        Ok(Self {
            kind: ObjectiveKind::Softmax,
            lambda,
            num_classes,
        })
    }

    /// Number of stacked parameter blocks (one per class for softmax).
    pub fn num_blocks(&self) -> usize {
        match self.kind {
            ObjectiveKind::Softmax => self.num_classes,
            _ => 1,
        }
    }

    /// Total parameter length for feature dimension `dim`.
    pub fn param_len(&self, dim: usize) -> usize {
        self.num_blocks() * dim
    }

    /// Checks that the batch's targets make sense for this objective.
    pub fn validate_batch(&self, batch: &SampleBatch<F>) -> Result<()> {
        match self.kind {
            ObjectiveKind::LeastSquares => Ok(()),
            ObjectiveKind::Logistic => {
                for i in 0..batch.rows() {
                    let y = batch.target_as_real(i);
                    if y != F::zero() && y != F::one() {
                        return Err(Error::Config(format!(
                            "logistic targets must be 0/1, row {i} has {y}"
                        )));
                    }
                }
                Ok(())
            }
            ObjectiveKind::Softmax => {
                for i in 0..batch.rows() {
                    let c = batch.target_class(i)?;
                    if c >= self.num_classes {
                        return Err(Error::Config(format!(
                            "class label {c} at row {i} exceeds num_classes {}",
                            self.num_classes
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Per-row targets: real-valued for regression, class ids for classification.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<F: Real> {
    Real(Vec<F>),
    Class(Vec<usize>),
}

impl<F: Real> Targets<F> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major feature matrix plus per-row targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<F: Real> {
    features: Vec<F>,
    dim: usize,
    targets: Targets<F>,
}

impl<F: Real> SampleBatch<F> {
    pub fn new(features: Vec<F>, dim: usize, targets: Targets<F>) -> Result<Self> {
        let rows = targets.len();
        if rows == 0 {
            return Err(Error::Config("a sample batch needs at least one row".into()));
        }
        if dim == 0 || features.len() != rows * dim {
            return Err(Error::Dimension(format!(
                "feature buffer holds {} values, expected {rows} rows x {dim}",
                features.len()
            )));
        }
        Ok(Self {
            features,
            dim,
            targets,
        })
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &Targets<F> {
        &self.targets
    }

    pub fn target_as_real(&self, i: usize) -> F {
        match &self.targets {
            Targets::Real(v) => v[i],
            Targets::Class(v) => F::from_usize(v[i]),
        }
    }

    pub fn target_class(&self, i: usize) -> Result<usize> {
        match &self.targets {
            Targets::Class(v) => Ok(v[i]),
            Targets::Real(_) => Err(Error::Config(
                "classification objective given real-valued targets".into(),
            )),
        }
    }

    /// A new batch containing the given rows (duplicates allowed).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("subset needs at least one row".into()));
        }
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            if r >= self.rows() {
                return Err(Error::Dimension(format!(
                    "row {r} out of range for batch of {}",
                    self.rows()
                )));
            }
            features.extend_from_slice(self.row(r));
        }
        let targets = match &self.targets {
            Targets::Real(v) => Targets::Real(rows.iter().map(|&r| v[r]).collect()),
            Targets::Class(v) => Targets::Class(rows.iter().map(|&r| v[r]).collect()),
        };
        Self::new(features, self.dim, targets)
    }
}

fn check_param_len<F: Real>(model: &ObjectiveModel<F>, x: &[F], dim: usize) -> Result<()> {
    let expect = model.param_len(dim);
    if x.len() != expect {
        return Err(Error::Dimension(format!(
            "parameter length {} does not match expected {expect} ({} block(s) x {dim})",
            x.len(),
            model.num_blocks()
        )));
    }
    Ok(())
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

// log(1 + exp(t)) without overflow.
fn softplus<F: Real>(t: F) -> F {
    if t > F::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid<F: Real>(t: F) -> F {
    if t >= F::zero() {
        F::one() / (F::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (F::one() + e)
    }
}

/// Mean loss of `model` at parameters `x` over the whole batch, including
/// the `lambda/2 ‖x‖²` term for regularized objectives.
pub fn loss_value<F: Real>(
    model: &ObjectiveModel<F>,
    x: &[F],
    batch: &SampleBatch<F>,
) -> Result<F> {
    let rows: Vec<usize> = (0..batch.rows()).collect();
    loss_over(model, x, batch, &rows)
}

/// Mean loss over the given rows (duplicates allowed).
pub fn loss_over<F: Real>(
    model: &ObjectiveModel<F>,
    x: &[F],
    batch: &SampleBatch<F>,
    rows: &[usize],
) -> Result<F> {
    check_param_len(model, x, batch.dim())?;
    if rows.is_empty() {
        return Err(Error::Config("loss over an empty row set".into()));
    }
    let inv_b = F::one() / F::from_usize(rows.len());
    let mut total = F::zero();
    match model.kind {
        ObjectiveKind::LeastSquares => {
            for &r in rows {
                let resid = batch.target_as_real(r) - dot(batch.row(r), x);
                total += resid * resid;
            }
        }
        ObjectiveKind::Logistic => {
            for &r in rows {
                let t = dot(batch.row(r), x);
                total += softplus(t) - batch.target_as_real(r) * t;
            }
        }
        ObjectiveKind::Softmax => {
            let dim = batch.dim();
            let c = model.num_classes;
            let mut logits = vec![F::zero(); c];
            for &r in rows {
                let z = batch.row(r);
                for (k, logit) in logits.iter_mut().enumerate() {
                    *logit = dot(z, &x[k * dim..(k + 1) * dim]);
                }
                let m = logits.iter().cloned().fold(F::neg_infinity(), F::max);
                let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<F>().ln();
                total += lse - logits[batch.target_class(r)?];
            }
        }
    }
    let two = F::from_f64(2.0);
    let mut value = total * inv_b;
    if model.lambda > F::zero() {
        value += model.lambda / two * x.iter().map(|v| *v * *v).sum::<F>();
    }
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {value}")));
    }
    Ok(value)
}

/// Exact analytic gradient of [`loss_value`] with respect to `x`.
pub fn gradient<F: Real>(
    model: &ObjectiveModel<F>,
    x: &[F],
    batch: &SampleBatch<F>,
) -> Result<Vec<F>> {
    let rows: Vec<usize> = (0..batch.rows()).collect();
    gradient_over(model, x, batch, &rows)
}

/// Gradient of the mean loss over the given rows (duplicates allowed).
pub fn gradient_over<F: Real>(
    model: &ObjectiveModel<F>,
    x: &[F],
    batch: &SampleBatch<F>,
    rows: &[usize],
) -> Result<Vec<F>> {
    check_param_len(model, x, batch.dim())?;
    if rows.is_empty() {
        return Err(Error::Config("gradient over an empty row set".into()));
    }
    let dim = batch.dim();
    let inv_b = F::one() / F::from_usize(rows.len());
    let two = F::from_f64(2.0);
    let mut grad = vec![F::zero(); x.len()];
    match model.kind {
        ObjectiveKind::LeastSquares => {
            for &r in rows {
                let z = batch.row(r);
                let coeff = two * (dot(z, x) - batch.target_as_real(r)) * inv_b;
                for (g, &zi) in grad.iter_mut().zip(z) {
                    *g += coeff * zi;
                }
            }
        }
        ObjectiveKind::Logistic => {
            for &r in rows {
                let z = batch.row(r);
                let coeff = (sigmoid(dot(z, x)) - batch.target_as_real(r)) * inv_b;
                for (g, &zi) in grad.iter_mut().zip(z) {
                    *g += coeff * zi;
                }
            }
        }
        ObjectiveKind::Softmax => {
            let c = model.num_classes;
            let mut logits = vec![F::zero(); c];
            for &r in rows {
                let z = batch.row(r);
                for (k, logit) in logits.iter_mut().enumerate() {
                    *logit = dot(z, &x[k * dim..(k + 1) * dim]);
                }
                let m = logits.iter().cloned().fold(F::neg_infinity(), F::max);
                let denom: F = logits.iter().map(|&l| (l - m).exp()).sum();
                let label = batch.target_class(r)?;
                for k in 0..c {
                    let p = (logits[k] - m).exp() / denom;
                    let indicator = if k == label { F::one() } else { F::zero() };
                    let coeff = (p - indicator) * inv_b;
                    let block = &mut grad[k * dim..(k + 1) * dim];
                    for (g, &zi) in block.iter_mut().zip(z) {
                        *g += coeff * zi;
                    }
                }
            }
        }
    }
    if model.lambda > F::zero() {
        for (g, &xi) in grad.iter_mut().zip(x) {
            *g += model.lambda * xi;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("gradient evaluated to a non-finite value".into()));
    }
    Ok(grad)
}

/// Stochastic gradient over `batch_size` rows sampled uniformly with
/// replacement from the batch. Requesting at least the full batch switches
/// to the exact gradient over all rows without consuming the RNG.
pub fn minibatch_gradient<F: Real, R: Rng>(
    model: &ObjectiveModel<F>,
    x: &[F],
    batch: &SampleBatch<F>,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<F>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if batch.rows() == 0 {
        return Err(Error::Config("client dataset is empty".into()));
    }
    if batch_size >= batch.rows() {
        return gradient(model, x, batch);
    }
    let rows: Vec<usize> = (0..batch_size)
        .map(|_| rng.gen_range(0..batch.rows()))
        .collect();
    gradient_over(model, x, batch, &rows)
}

/// Upper estimate of the smoothness constant, with a convergence flag for
/// the underlying power iteration.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessEstimate<F: Real> {
    pub value: F,
    pub converged: bool,
}

const POWER_ITERS: usize = 50;
const POWER_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Smoothness upper bound from the batch's Gram spectrum: the least-squares
/// Hessian is `(2/B) ZᵀZ`, the logistic Hessian is at most a quarter of it,
/// and the softmax Hessian at most half; the l2 weight adds `lambda`.
/// Useful for the automatic stepsize `1/(6 l̂)`.
pub fn estimate_smoothness<F: Real>(
    model: &ObjectiveModel<F>,
    batch: &SampleBatch<F>,
) -> Result<SmoothnessEstimate<F>> {
    let (lambda_max, converged) = gram_lambda_max(batch);
    let b = F::from_usize(batch.rows());
    let gram_bound = F::from_f64(2.0) * lambda_max / b;
    let value = match model.kind {
        ObjectiveKind::LeastSquares => gram_bound,
        ObjectiveKind::Logistic => gram_bound / F::from_f64(4.0),
        ObjectiveKind::Softmax => gram_bound / F::from_f64(2.0),
    } + model.lambda;
    Ok(SmoothnessEstimate { value, converged })
}

// Largest eigenvalue of ZᵀZ by power iteration (matrix-free), with a fixed
// internal seed so estimates are reproducible.
fn gram_lambda_max<F: Real>(batch: &SampleBatch<F>) -> (F, bool) {
    let dim = batch.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Vec<F> = (0..dim)
        .map(|_| F::from_f64(rng.gen::<f64>() - 0.5))
        .collect();
    normalize(&mut v);
    let tol = F::from_f64(1e-6);
    let mut lambda = F::zero();
    let mut converged = false;
    let mut zv = vec![F::zero(); batch.rows()];
    let mut w = vec![F::zero(); dim];
    for _ in 0..POWER_ITERS {
        for (r, out) in zv.iter_mut().enumerate() {
            *out = dot(batch.row(r), &v);
        }
        for wi in w.iter_mut() {
            *wi = F::zero();
        }
        for (r, &c) in zv.iter().enumerate() {
            for (wi, &zi) in w.iter_mut().zip(batch.row(r)) {
                *wi += c * zi;
            }
        }
        let next = dot(&v, &w);
        let delta = (next - lambda).abs();
        lambda = next;
        if delta <= tol * F::max(F::one(), lambda.abs()) {
            converged = true;
            break;
        }
        let norm = dot(&w, &w).sqrt();
        if norm.is_zero() {
            // Z v sits in the null space; the quadratic form is flat there.
            converged = true;
            break;
        }
        for (vi, &wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    (lambda.max(F::zero()), converged)
}

fn normalize<F: Real>(v: &mut [F]) {
    let norm = v.iter().map(|x| *x * *x).sum::<F>().sqrt();
    if !norm.is_zero() {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Empirical per-client stochastic gradient variance.
#[derive(Debug, Clone, Copy)]
pub struct VarianceEstimate<F: Real> {
    pub sigma_sq: F,
}

/// Mean of `‖∇f_z(x) − ∇f(x)‖²` over all single-sample gradients in the
/// batch.
pub fn estimate_variance<F: Real>(
    model: &ObjectiveModel<F>,
    x: &[F],
    batch: &SampleBatch<F>,
) -> Result<VarianceEstimate<F>> {
    let full = gradient(model, x, batch)?;
    let mut acc = F::zero();
    for r in 0..batch.rows() {
        let g = gradient_over(model, x, batch, &[r])?;
        acc += g
            .iter()
            .zip(&full)
            .map(|(a, b)| {
                let d = *a - *b;
                d * d
            })
            .sum::<F>();
    }
    Ok(VarianceEstimate {
        sigma_sq: acc / F::from_usize(batch.rows()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn batch_reg(rows: &[(&[f64], f64)]) -> SampleBatch<f64> {
        let dim = rows[0].0.len();
        let features = rows.iter().flat_map(|(z, _)| z.iter().copied()).collect();
        let targets = Targets::Real(rows.iter().map(|(_, y)| *y).collect());
        SampleBatch::new(features, dim, targets).unwrap()
    }

    fn batch_cls(rows: &[(&[f64], usize)]) -> SampleBatch<f64> {
        let dim = rows[0].0.len();
        let features = rows.iter().flat_map(|(z, _)| z.iter().copied()).collect();
        let targets = Targets::Class(rows.iter().map(|(_, y)| *y).collect());
        SampleBatch::new(features, dim, targets).unwrap()
    }

    // Central finite differences, step 1e-6.
    fn fd_gradient(
        model: &ObjectiveModel<f64>,
        x: &[f64],
        batch: &SampleBatch<f64>,
    ) -> Vec<f64> {
        let h = 1e-6;
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = loss_value(model, &probe, batch).unwrap();
            probe[i] = x[i] - h;
            let down = loss_value(model, &probe, batch).unwrap();
            probe[i] = x[i];
            g[i] = (up - down) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1.0);
        diff / scale
    }

    #[test]
    fn least_squares_loss_at_zero() {
        let model = ObjectiveModel::least_squares();
        let batch = batch_reg(&[(&[1.0, 0.0], 2.0)]);
        assert_eq!(loss_value(&model, &[0.0, 0.0], &batch).unwrap(), 4.0);
    }

    #[test]
    fn logistic_loss_at_zero_is_ln2() {
        let model = ObjectiveModel::logistic(0.0).unwrap();
        let batch = batch_reg(&[(&[0.7, -3.0], 1.0)]);
        let got = loss_value(&model, &[0.0, 0.0], &batch).unwrap();
        assert!((got - LN_2).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn softmax_loss_at_zero_is_ln_c() {
        let model = ObjectiveModel::softmax(10, 0.0).unwrap();
        let batch = batch_cls(&[(&[0.3, 0.4], 7)]);
        let got = loss_value(&model, &vec![0.0; 20], &batch).unwrap();
        assert!((got - 10f64.ln()).abs() < 1e-14, "got {got}");
    }

    #[test]
    fn least_squares_gradient_at_zero() {
        let model = ObjectiveModel::least_squares();
        let batch = batch_reg(&[(&[1.0, 0.0], 2.0)]);
        assert_eq!(gradient(&model, &[0.0, 0.0], &batch).unwrap(), vec![-4.0, 0.0]);
    }

    #[test]
    fn logistic_gradient_at_zero() {
        let model = ObjectiveModel::logistic(0.0).unwrap();
        let batch = batch_reg(&[(&[1.0, 1.0], 1.0)]);
        assert_eq!(
            gradient(&model, &[0.0, 0.0], &batch).unwrap(),
            vec![-0.5, -0.5]
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let models = [
            ObjectiveModel::least_squares(),
            ObjectiveModel::logistic(1e-4).unwrap(),
            ObjectiveModel::softmax(3, 1e-4).unwrap(),
        ];
        for model in &models {
            for _ in 0..20 {
                let dim = 4;
                let rows = 5;
                let features: Vec<f64> =
                    (0..rows * dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let targets = match model.kind {
                    ObjectiveKind::LeastSquares => {
                        Targets::Real((0..rows).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect())
                    }
                    ObjectiveKind::Logistic => {
                        Targets::Real((0..rows).map(|_| f64::from(rng.gen::<bool>())).collect())
                    }
                    ObjectiveKind::Softmax => {
                        Targets::Class((0..rows).map(|_| rng.gen_range(0..3)).collect())
                    }
                };
                let batch = SampleBatch::new(features, dim, targets).unwrap();
                let x: Vec<f64> = (0..model.param_len(dim))
                    .map(|_| rng.gen::<f64>() - 0.5)
                    .collect();
                let analytic = gradient(model, &x, &batch).unwrap();
                let numeric = fd_gradient(model, &x, &batch);
                let err = rel_err(&analytic, &numeric);
                assert!(err < 1e-5, "{:?}: rel err {err}", model.kind);
            }
        }
    }

    #[test]
    fn loss_invariant_under_row_permutation_fixed_order() {
        let model = ObjectiveModel::logistic(1e-4).unwrap();
        let batch = batch_reg(&[
            (&[0.2, -0.4], 1.0),
            (&[1.5, 0.1], 0.0),
            (&[-0.7, 0.9], 1.0),
        ]);
        let x = [0.3, -0.8];
        // Permute then restore: identical summation order, exact equality.
        let restored = batch.subset(&[2, 0, 1]).unwrap().subset(&[1, 2, 0]).unwrap();
        assert_eq!(
            loss_value(&model, &x, &batch).unwrap(),
            loss_value(&model, &x, &restored).unwrap()
        );
        // Arbitrary permutation: tiny relative drift allowed.
        let shuffled = batch.subset(&[2, 0, 1]).unwrap();
        let a = loss_value(&model, &x, &batch).unwrap();
        let b = loss_value(&model, &x, &shuffled).unwrap();
        assert!(((a - b) / a).abs() <= 1e-12);
    }

    #[test]
    fn convexity_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let models = [
            ObjectiveModel::least_squares(),
            ObjectiveModel::logistic(0.0).unwrap(),
            ObjectiveModel::softmax(3, 0.0).unwrap(),
        ];
        for model in &models {
            let dim = 3;
            let batch = match model.kind {
                ObjectiveKind::Softmax => batch_cls(&[(&[0.5, -1.0, 0.2], 1), (&[1.1, 0.3, -0.6], 2)]),
                _ => batch_reg(&[(&[0.5, -1.0, 0.2], 1.0), (&[1.1, 0.3, -0.6], 0.0)]),
            };
            for _ in 0..50 {
                let len = model.param_len(dim);
                let x1: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let x2: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| (a + b) / 2.0).collect();
                let f1 = loss_value(model, &x1, &batch).unwrap();
                let f2 = loss_value(model, &x2, &batch).unwrap();
                let fm = loss_value(model, &mid, &batch).unwrap();
                assert!(fm <= 0.5 * f1 + 0.5 * f2 + 1e-12);
            }
        }
    }

    #[test]
    fn full_batch_minibatch_equals_exact_gradient() {
        let model = ObjectiveModel::least_squares();
        let batch = batch_reg(&[(&[1.0, 2.0], 1.0), (&[0.5, -1.0], -2.0)]);
        let x = [0.25, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let got = minibatch_gradient(&model, &x, &batch, 2, &mut rng).unwrap();
        assert_eq!(got, gradient(&model, &x, &batch).unwrap());
        // Larger than the batch is still the exact gradient.
        let got = minibatch_gradient(&model, &x, &batch, 100, &mut rng).unwrap();
        assert_eq!(got, gradient(&model, &x, &batch).unwrap());
    }

    #[test]
    fn minibatch_is_deterministic_per_stream() {
        let model = ObjectiveModel::least_squares();
        let rows: Vec<(Vec<f64>, f64)> = (0..10)
            .map(|i| (vec![i as f64, 1.0 - i as f64], i as f64 / 3.0))
            .collect();
        let refs: Vec<(&[f64], f64)> = rows.iter().map(|(z, y)| (z.as_slice(), *y)).collect();
        let batch = batch_reg(&refs);
        let x = [0.1, -0.2];
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            assert_eq!(
                minibatch_gradient(&model, &x, &batch, 3, &mut a).unwrap(),
                minibatch_gradient(&model, &x, &batch, 3, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn minibatch_gradient_is_unbiased() {
        let model = ObjectiveModel::least_squares();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<(Vec<f64>, f64)> = (0..50)
            .map(|_| {
                let z: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let y = rng.gen::<f64>() * 2.0 - 1.0;
                (z, y)
            })
            .collect();
        let refs: Vec<(&[f64], f64)> = rows.iter().map(|(z, y)| (z.as_slice(), *y)).collect();
        let batch = batch_reg(&refs);
        let x: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() - 0.5).collect();

        let full = gradient(&model, &x, &batch).unwrap();
        let sigma_sq = estimate_variance(&model, &x, &batch).unwrap().sigma_sq;

        let trials = 10_000;
        let mut mean = vec![0.0; x.len()];
        for _ in 0..trials {
            let g = minibatch_gradient(&model, &x, &batch, 1, &mut rng).unwrap();
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi / trials as f64;
            }
        }
        let dev: f64 = mean
            .iter()
            .zip(&full)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let tol = 3.0 * sigma_sq.sqrt() / (trials as f64).sqrt();
        assert!(dev <= tol, "deviation {dev} exceeds 3-sigma band {tol}");
    }

    #[test]
    fn smoothness_identity_gram() {
        let model = ObjectiveModel::least_squares();
        let d = 6;
        let mut features = vec![0.0; d * d];
        for i in 0..d {
            features[i * d + i] = 1.0;
        }
        let batch =
            SampleBatch::new(features, d, Targets::Real(vec![0.0; d])).unwrap();
        let est = estimate_smoothness(&model, &batch).unwrap();
        assert!(est.converged);
        assert!((est.value - 2.0 / d as f64).abs() < 1e-9, "got {}", est.value);
    }

    #[test]
    fn smoothness_rank_one_row() {
        let batch = batch_reg(&[(&[3.0, 4.0], 0.0)]);
        let ls = ObjectiveModel::least_squares();
        let est = estimate_smoothness(&ls, &batch).unwrap();
        assert!((est.value - 50.0).abs() < 1e-6, "got {}", est.value);
        let logit = ObjectiveModel::logistic(0.0).unwrap();
        let est = estimate_smoothness(&logit, &batch).unwrap();
        assert!((est.value - 12.5).abs() < 1e-6, "got {}", est.value);
    }

    #[test]
    fn variance_zero_for_single_or_identical_samples() {
        let model = ObjectiveModel::least_squares();
        let single = batch_reg(&[(&[1.0, -2.0], 0.5)]);
        let x = [0.2, 0.4];
        assert_eq!(estimate_variance(&model, &x, &single).unwrap().sigma_sq, 0.0);
        let dup = batch_reg(&[(&[1.0, -2.0], 0.5), (&[1.0, -2.0], 0.5), (&[1.0, -2.0], 0.5)]);
        let sigma = estimate_variance(&model, &x, &dup).unwrap().sigma_sq;
        assert!(sigma < 1e-28, "got {sigma}");
    }

    #[test]
    fn variance_matches_two_pass_oracle() {
        let model = ObjectiveModel::least_squares();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<(Vec<f64>, f64)> = (0..20)
            .map(|_| {
                let z: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                (z, rng.gen::<f64>())
            })
            .collect();
        let refs: Vec<(&[f64], f64)> = rows.iter().map(|(z, y)| (z.as_slice(), *y)).collect();
        let batch = batch_reg(&refs);
        let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();

        // Oracle: naive per-sample gradients computed by hand.
        let full = {
            let mut g = vec![0.0; 5];
            for (z, y) in &rows {
                let coeff = 2.0 * (z.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - y)
                    / rows.len() as f64;
                for (gi, zi) in g.iter_mut().zip(z) {
                    *gi += coeff * zi;
                }
            }
            g
        };
        let mut expect = 0.0;
        for (z, y) in &rows {
            let coeff = 2.0 * (z.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - y);
            let mut diff_sq = 0.0;
            for (zi, gi) in z.iter().zip(&full) {
                let d = coeff * zi - gi;
                diff_sq += d * d;
            }
            expect += diff_sq / rows.len() as f64;
        }
        let got = estimate_variance(&model, &x, &batch).unwrap().sigma_sq;
        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0), "{got} vs {expect}");
    }

    #[test]
    fn softmax_rejects_bad_labels() {
        let model = ObjectiveModel::softmax(3, 0.0).unwrap();
        let batch = batch_cls(&[(&[1.0], 5)]);
        assert!(model.validate_batch(&batch).is_err());
    }
}
