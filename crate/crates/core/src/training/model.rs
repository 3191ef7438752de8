//! Built-in differentiable reference classifier.
//!
//! A one-hidden-layer network: `D` inputs -> `H` rectified units -> `K`-way
//! normalized-exponential output, trained by mini-batch cross-entropy
//! minimization. Forward pass, parameter gradients, and input gradients are
//! all closed-form, which is what the attack module relies on.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backend::{ClassifierBackend, ParamSnapshot};
use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::metrics::LOG_CLAMP_EPS;
use crate::scalar::Scalar;
use crate::seeding::{derive_rng, stream};

pub const REFERENCE_BACKEND_KIND: &str = "reference-mlp";

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Adaptive moment estimation with the usual defaults
    /// (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
    #[default]
    Adam,
    /// Plain gradient descent; kept for oracle tests.
    Sgd,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
struct ParamSet<S> {
    w1: Array2<S>,
    b1: Array1<S>,
    w2: Array2<S>,
    b2: Array1<S>,
}

impl<S: Scalar> ParamSet<S> {
    fn zeros(d: usize, h: usize, k: usize) -> Self {
        Self {
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((k, h)),
            b2: Array1::zeros(k),
        }
    }

    fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(
            self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len(),
        );
        out.extend(self.w1.iter().copied());
        out.extend(self.b1.iter().copied());
        out.extend(self.w2.iter().copied());
        out.extend(self.b2.iter().copied());
        out
    }

    fn unflatten(d: usize, h: usize, k: usize, values: &[S]) -> Result<Self> {
        let expected = h * d + h + k * h + k;
        if values.len() != expected {
            return Err(Error::data(format!(
                "snapshot has {} values, expected {expected}",
                values.len()
            )));
        }
        let (w1, rest) = values.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(k * h);
        Ok(Self {
            w1: Array2::from_shape_vec((h, d), w1.to_vec()).expect("shape checked"),
            b1: Array1::from_vec(b1.to_vec()),
            w2: Array2::from_shape_vec((k, h), w2.to_vec()).expect("shape checked"),
            b2: Array1::from_vec(b2.to_vec()),
        })
    }
}

#[derive(Clone, Debug)]
enum OptimizerState<S> {
    Sgd,
    Adam { m: ParamSet<S>, v: ParamSet<S>, step: u64 },
}

#[derive(Clone, Debug)]
pub struct ReferenceModel<S> {
    params: ParamSet<S>,
    state: OptimizerState<S>,
    optimizer: OptimizerKind,
    input_dim: usize,
    hidden: usize,
    n_classes: usize,
    config_digest: String,
}

struct Forward<S> {
    z1: Array2<S>,
    a1: Array2<S>,
    probs: Array2<S>,
}

impl<S: Scalar> ReferenceModel<S> {
    /// Seeded construction. Weights start from scaled Gaussians
    /// (`sqrt(2/fan_in)` into the rectified layer, `sqrt(1/fan_in)` into the
    /// output layer), biases at zero.
    pub fn new(
        input_dim: usize,
        hidden: usize,
        n_classes: usize,
        seed: u64,
        optimizer: OptimizerKind,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || n_classes < 2 {
            return Err(Error::config(format!(
                "invalid reference model dims D={input_dim}, H={hidden}, K={n_classes}"
            )));
        }
        let mut rng = derive_rng(seed, &[stream::MODEL_INIT]);
        let hidden_std = (2.0 / input_dim as f64).sqrt();
        let output_std = (1.0 / hidden as f64).sqrt();
        let hidden_init = Normal::new(0.0, hidden_std).expect("finite std");
        let output_init = Normal::new(0.0, output_std).expect("finite std");

        let mut params = ParamSet::zeros(input_dim, hidden, n_classes);
        for w in params.w1.iter_mut() {
            *w = S::cast(hidden_init.sample(&mut rng));
        }
        for w in params.w2.iter_mut() {
            *w = S::cast(output_init.sample(&mut rng));
        }
        Ok(Self {
            params,
            state: OptimizerState::Sgd,
            optimizer,
            input_dim,
            hidden,
            n_classes,
            config_digest: String::new(),
        })
        .map(|mut model| {
            model.reset_optimizer();
            model
        })
    }

    /// Rebuild a model from a persisted snapshot.
    pub fn from_snapshot(snapshot: &ParamSnapshot<S>, optimizer: OptimizerKind) -> Result<Self> {
        if snapshot.backend_kind != REFERENCE_BACKEND_KIND {
            return Err(Error::data(format!(
                "snapshot kind '{}' is not a reference model",
                snapshot.backend_kind
            )));
        }
        let [d, h, k] = snapshot.dims[..] else {
            return Err(Error::data("reference model snapshot needs dims [D, H, K]"));
        };
        let params = ParamSet::unflatten(d, h, k, &snapshot.values)?;
        let mut model = Self {
            params,
            state: OptimizerState::Sgd,
            optimizer,
            input_dim: d,
            hidden: h,
            n_classes: k,
            config_digest: snapshot.config_digest.clone(),
        };
        model.reset_optimizer();
        Ok(model)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn optimizer(&self) -> OptimizerKind {
        self.optimizer
    }

    /// Digest embedded into persisted snapshots.
    pub fn set_config_digest(&mut self, digest: impl Into<String>) {
        self.config_digest = digest.into();
    }

    fn reset_optimizer(&mut self) {
        self.state = match self.optimizer {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                m: ParamSet::zeros(self.input_dim, self.hidden, self.n_classes),
                v: ParamSet::zeros(self.input_dim, self.hidden, self.n_classes),
                step: 0,
            },
        };
    }

    fn check_features(&self, features: &ArrayView2<'_, S>) -> Result<()> {
        if features.ncols() != self.input_dim {
            return Err(Error::data(format!(
                "feature dimension {} does not match model input dim {}",
                features.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn target_matrix(&self, n: usize, targets: &[LabelDistribution<S>]) -> Result<Array2<S>> {
        if targets.len() != n {
            return Err(Error::data(format!(
                "dimension mismatch: {n} examples vs {} targets",
                targets.len()
            )));
        }
        let mut t = Array2::zeros((n, self.n_classes));
        for (i, target) in targets.iter().enumerate() {
            if target.k() != self.n_classes {
                return Err(Error::data(format!(
                    "target for example {i} has {} classes, model outputs {}",
                    target.k(),
                    self.n_classes
                )));
            }
            for (c, &p) in target.probs().iter().enumerate() {
                t[(i, c)] = p;
            }
        }
        Ok(t)
    }

    fn forward(&self, features: &ArrayView2<'_, S>) -> Forward<S> {
        let z1 = features.dot(&self.params.w1.t()) + &self.params.b1;
        let a1 = z1.mapv(|z| if z > S::zero() { z } else { S::zero() });
        let z2 = a1.dot(&self.params.w2.t()) + &self.params.b2;
        let mut probs = z2;
        for mut row in probs.rows_mut() {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            row.mapv_inplace(|z| (z - max).exp());
            let sum = row.iter().copied().sum::<S>();
            row.mapv_inplace(|e| e / sum);
        }
        Forward { z1, a1, probs }
    }

    fn batch_loss(probs: &Array2<S>, targets: &Array2<S>) -> S {
        let clamp = S::cast(LOG_CLAMP_EPS);
        let n = probs.nrows();
        let mut total = S::zero();
        for (p_row, t_row) in probs.rows().into_iter().zip(targets.rows()) {
            for (&p, &t) in p_row.iter().zip(t_row.iter()) {
                total -= t * p.max(clamp).ln();
            }
        }
        total / S::cast(n as f64)
    }

    fn apply_gradients(&mut self, grads: ParamSet<S>, lr: S) {
        match &mut self.state {
            OptimizerState::Sgd => {
                sgd_tensor(&mut self.params.w1, &grads.w1, lr);
                sgd_vector(&mut self.params.b1, &grads.b1, lr);
                sgd_tensor(&mut self.params.w2, &grads.w2, lr);
                sgd_vector(&mut self.params.b2, &grads.b2, lr);
            }
            OptimizerState::Adam { m, v, step } => {
                *step += 1;
                let t = *step as i32;
                let bc1 = S::one() - S::cast(ADAM_BETA1).powi(t);
                let bc2 = S::one() - S::cast(ADAM_BETA2).powi(t);
                adam_tensor(&mut self.params.w1, &mut m.w1, &mut v.w1, &grads.w1, lr, bc1, bc2);
                adam_vector(&mut self.params.b1, &mut m.b1, &mut v.b1, &grads.b1, lr, bc1, bc2);
                adam_tensor(&mut self.params.w2, &mut m.w2, &mut v.w2, &grads.w2, lr, bc1, bc2);
                adam_vector(&mut self.params.b2, &mut m.b2, &mut v.b2, &grads.b2, lr, bc1, bc2);
            }
        }
    }
}

fn sgd_tensor<S: Scalar>(theta: &mut Array2<S>, grad: &Array2<S>, lr: S) {
    Zip::from(theta).and(grad).for_each(|t, &g| *t = *t - lr * g);
}

fn sgd_vector<S: Scalar>(theta: &mut Array1<S>, grad: &Array1<S>, lr: S) {
    Zip::from(theta).and(grad).for_each(|t, &g| *t = *t - lr * g);
}

#[allow(clippy::too_many_arguments)]
fn adam_tensor<S: Scalar>(
    theta: &mut Array2<S>,
    m: &mut Array2<S>,
    v: &mut Array2<S>,
    grad: &Array2<S>,
    lr: S,
    bc1: S,
    bc2: S,
) {
    let (b1, b2, eps) = (S::cast(ADAM_BETA1), S::cast(ADAM_BETA2), S::cast(ADAM_EPS));
    Zip::from(theta).and(m).and(v).and(grad).for_each(|t, m, v, &g| {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *t = *t - lr * m_hat / (v_hat.sqrt() + eps);
    });
}

#[allow(clippy::too_many_arguments)]
fn adam_vector<S: Scalar>(
    theta: &mut Array1<S>,
    m: &mut Array1<S>,
    v: &mut Array1<S>,
    grad: &Array1<S>,
    lr: S,
    bc1: S,
    bc2: S,
) {
    let (b1, b2, eps) = (S::cast(ADAM_BETA1), S::cast(ADAM_BETA2), S::cast(ADAM_EPS));
    Zip::from(theta).and(m).and(v).and(grad).for_each(|t, m, v, &g| {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *t = *t - lr * m_hat / (v_hat.sqrt() + eps);
    });
}

impl<S: Scalar> ClassifierBackend<S> for ReferenceModel<S> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, features: ArrayView2<'_, S>) -> Result<Vec<LabelDistribution<S>>> {
        self.check_features(&features)?;
        let forward = self.forward(&features);
        forward
            .probs
            .rows()
            .into_iter()
            .map(|row| LabelDistribution::new(row.to_vec(), 0))
            .collect()
    }

    fn loss_input_gradient(
        &self,
        features: ArrayView2<'_, S>,
        targets: &[LabelDistribution<S>],
    ) -> Result<Array2<S>> {
        self.check_features(&features)?;
        let t = self.target_matrix(features.nrows(), targets)?;
        let forward = self.forward(&features);
        let dz2 = &forward.probs - &t;
        let da1 = dz2.dot(&self.params.w2);
        let dz1 = Zip::from(&da1)
            .and(&forward.z1)
            .map_collect(|&d, &z| if z > S::zero() { d } else { S::zero() });
        Ok(dz1.dot(&self.params.w1))
    }

    fn fit_step(
        &mut self,
        features: ArrayView2<'_, S>,
        targets: &[LabelDistribution<S>],
        learning_rate: S,
    ) -> Result<S> {
        self.check_features(&features)?;
        let n = features.nrows();
        if n == 0 {
            return Err(Error::data("cannot fit on an empty batch"));
        }
        let t = self.target_matrix(n, targets)?;
        let forward = self.forward(&features);
        let loss = Self::batch_loss(&forward.probs, &t);

        let scale = S::one() / S::cast(n as f64);
        let dz2 = (&forward.probs - &t) * scale;
        let gw2 = dz2.t().dot(&forward.a1);
        let gb2 = dz2.sum_axis(Axis(0));
        let da1 = dz2.dot(&self.params.w2);
        let dz1 = Zip::from(&da1)
            .and(&forward.z1)
            .map_collect(|&d, &z| if z > S::zero() { d } else { S::zero() });
        let gw1 = dz1.t().dot(&features);
        let gb1 = dz1.sum_axis(Axis(0));

        self.apply_gradients(ParamSet { w1: gw1, b1: gb1, w2: gw2, b2: gb2 }, learning_rate);
        Ok(loss)
    }

    fn snapshot(&self) -> ParamSnapshot<S> {
        ParamSnapshot {
            backend_kind: REFERENCE_BACKEND_KIND.to_string(),
            dims: vec![self.input_dim, self.hidden, self.n_classes],
            values: self.params.flatten(),
            config_digest: self.config_digest.clone(),
        }
    }

    fn restore(&mut self, snapshot: &ParamSnapshot<S>) -> Result<()> {
        if snapshot.backend_kind != REFERENCE_BACKEND_KIND {
            return Err(Error::data(format!(
                "snapshot kind '{}' is not a reference model",
                snapshot.backend_kind
            )));
        }
        if snapshot.dims != [self.input_dim, self.hidden, self.n_classes] {
            return Err(Error::data(format!(
                "snapshot dims {:?} do not match model dims [{}, {}, {}]",
                snapshot.dims, self.input_dim, self.hidden, self.n_classes
            )));
        }
        self.params =
            ParamSet::unflatten(self.input_dim, self.hidden, self.n_classes, &snapshot.values)?;
        self.reset_optimizer();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn model(seed: u64, optimizer: OptimizerKind) -> ReferenceModel<f64> {
        ReferenceModel::new(4, 8, 3, seed, optimizer).unwrap()
    }

    fn random_features(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, &[99]);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
    }

    fn random_targets(n: usize, k: usize, seed: u64) -> Vec<LabelDistribution<f64>> {
        let mut rng = derive_rng(seed, &[98]);
        (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                let sum: f64 = raw.iter().sum();
                LabelDistribution::new(raw.into_iter().map(|x| x / sum).collect(), 0).unwrap()
            })
            .collect()
    }

    #[test]
    fn prediction_rows_are_distributions() {
        let m = model(0, OptimizerKind::Adam);
        let x = random_features(16, 4, 1);
        let preds = m.predict_proba(x.view()).unwrap();
        assert_eq!(preds.len(), 16);
        for p in preds {
            let sum: f64 = p.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_construction() {
        let a = model(7, OptimizerKind::Adam);
        let b = model(7, OptimizerKind::Adam);
        assert_eq!(a.snapshot(), b.snapshot());
        let c = model(8, OptimizerKind::Adam);
        assert_ne!(a.snapshot().values, c.snapshot().values);
    }

    #[test]
    fn snapshot_restore_is_bitwise() {
        let mut m = model(3, OptimizerKind::Adam);
        let x = random_features(8, 4, 2);
        let targets = random_targets(8, 3, 3);
        let snap = m.snapshot();
        let before = m.predict_proba(x.view()).unwrap();
        for _ in 0..5 {
            m.fit_step(x.view(), &targets, 0.05).unwrap();
        }
        let after = m.predict_proba(x.view()).unwrap();
        assert_ne!(before, after);
        m.restore(&snap).unwrap();
        assert_eq!(m.predict_proba(x.view()).unwrap(), before);
    }

    #[test]
    fn restore_rejects_mismatched_dims() {
        let mut m = model(0, OptimizerKind::Sgd);
        let other = ReferenceModel::<f64>::new(5, 8, 3, 0, OptimizerKind::Sgd).unwrap();
        assert!(m.restore(&other.snapshot()).is_err());
    }

    #[test]
    fn single_example_sgd_step_decreases_that_examples_ce() {
        // Plain gradient descent with a small rate must strictly decrease
        // the stepped example's loss.
        for seed in 0..10u64 {
            let mut m = model(seed, OptimizerKind::Sgd);
            let x = random_features(1, 4, seed + 100);
            let t = random_targets(1, 3, seed + 200);
            let before = m.fit_step(x.view(), &t, 1e-3).unwrap();
            let preds = m.predict_proba(x.view()).unwrap();
            let after = crate::metrics::cross_entropy(&preds[0], &t[0]).unwrap();
            assert!(
                after < before,
                "seed {seed}: loss went {before} -> {after}"
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = model(11, OptimizerKind::Adam);
        let x = random_features(3, 4, 12);
        let targets = random_targets(3, 3, 13);
        let analytic = m.loss_input_gradient(x.view(), &targets).unwrap();

        let step = 1e-5;
        for i in 0..3 {
            for j in 0..4 {
                let mut plus = x.clone();
                plus[(i, j)] += step;
                let mut minus = x.clone();
                minus[(i, j)] -= step;
                let f = |features: &Array2<f64>| -> f64 {
                    let preds = m.predict_proba(features.view()).unwrap();
                    crate::metrics::cross_entropy(&preds[i], &targets[i]).unwrap()
                };
                let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
                let a = analytic[(i, j)];
                let denom = numeric.abs().max(a.abs()).max(1e-8);
                assert!(
                    ((a - numeric) / denom).abs() < 1e-4,
                    "grad mismatch at ({i},{j}): analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn fit_rejects_dimension_mismatches() {
        let mut m = model(0, OptimizerKind::Adam);
        let x = random_features(4, 4, 0);
        let bad_targets = random_targets(3, 3, 0);
        assert!(m.fit_step(x.view(), &bad_targets, 0.1).is_err());
        let wrong_k = vec![LabelDistribution::<f64>::uniform(5).unwrap(); 4];
        assert!(m.fit_step(x.view(), &wrong_k, 0.1).is_err());
        let wrong_d = random_features(4, 3, 0);
        assert!(m.predict_proba(wrong_d.view()).is_err());
    }

    #[test]
    fn adam_and_sgd_paths_differ() {
        let x = array![[0.2, 0.8, 0.1, 0.5]];
        let t = vec![LabelDistribution::<f64>::one_hot(1, 3).unwrap()];
        let mut adam = model(5, OptimizerKind::Adam);
        let mut sgd = model(5, OptimizerKind::Sgd);
        adam.fit_step(x.view(), &t, 0.01).unwrap();
        sgd.fit_step(x.view(), &t, 0.01).unwrap();
        assert_ne!(adam.snapshot().values, sgd.snapshot().values);
    }

    #[test]
    fn from_snapshot_reproduces_predictions() {
        let mut m = model(21, OptimizerKind::Adam);
        m.set_config_digest("digest-x");
        let x = random_features(6, 4, 22);
        let snap = m.snapshot();
        let rebuilt = ReferenceModel::from_snapshot(&snap, OptimizerKind::Adam).unwrap();
        assert_eq!(
            rebuilt.predict_proba(x.view()).unwrap(),
            m.predict_proba(x.view()).unwrap()
        );
        assert_eq!(rebuilt.snapshot().config_digest, "digest-x");
    }
}
