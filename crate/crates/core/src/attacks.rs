//! l-inf gradient attacks against any classifier backend.
//!
//! FGSM takes one signed-gradient step of size epsilon; PGD iterates smaller
//! steps, projecting each iterate back onto the epsilon-ball around the
//! original input intersected with `[0,1]^D`. Budgets are specified in 0-255
//! pixel units and converted to feature space as `epsilon_255 / 255`.
//! Attacks never mutate the backend.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::ClassifierBackend;
use crate::bench::SoftLabelDataset;
use crate::error::{Error, Result};
use crate::metrics::{mean_cross_entropy_vs_labels, top1_accuracy};
use crate::scalar::Scalar;
use crate::seeding::{derive_rng, stream};
use crate::targets::one_hot_targets;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
}

fn default_pgd_steps() -> usize {
    40
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// l-inf bound in 0-255 pixel units; 0 is the degenerate identity
    /// attack.
    pub epsilon_255: u32,
    #[serde(default = "default_pgd_steps")]
    pub pgd_steps: usize,
    /// Step size in feature units; defaults to `epsilon / 4`.
    #[serde(default)]
    pub pgd_step_size: Option<f64>,
    #[serde(default)]
    pub random_start: bool,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    pub fn fgsm(epsilon_255: u32) -> Self {
        Self {
            method: AttackMethod::Fgsm,
            epsilon_255,
            pgd_steps: default_pgd_steps(),
            pgd_step_size: None,
            random_start: false,
            seed: 0,
        }
    }

    pub fn pgd(epsilon_255: u32, steps: usize) -> Self {
        Self {
            method: AttackMethod::Pgd,
            epsilon_255,
            pgd_steps: steps,
            pgd_step_size: None,
            random_start: false,
            seed: 0,
        }
    }

    /// Budget in feature space.
    pub fn epsilon(&self) -> f64 {
        f64::from(self.epsilon_255) / 255.0
    }

    pub fn step_size(&self) -> f64 {
        self.pgd_step_size.unwrap_or(self.epsilon() / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_255 > 255 {
            return Err(Error::config(format!(
                "epsilon_255 must be in [0, 255], got {}",
                self.epsilon_255
            )));
        }
        if self.method == AttackMethod::Pgd {
            if self.pgd_steps == 0 {
                return Err(Error::config("pgd_steps must be positive"));
            }
            let step = self.step_size();
            if !step.is_finite() || step < 0.0 {
                return Err(Error::config(format!("invalid PGD step size {step}")));
            }
            if step > self.epsilon() {
                return Err(Error::config(format!(
                    "PGD step size {step} exceeds epsilon {}",
                    self.epsilon()
                )));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.method {
            AttackMethod::Fgsm => format!("fgsm-eps{}", self.epsilon_255),
            AttackMethod::Pgd => format!("pgd-eps{}-s{}", self.epsilon_255, self.pgd_steps),
        }
    }
}

/// Per-iteration mean cross-entropy, raw and running-best. Index 0 is the
/// unattacked input, so both curves have `pgd_steps + 1` entries and the
/// best curve is non-decreasing by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PgdTrace {
    pub mean_ce_raw: Vec<f64>,
    pub mean_ce_best: Vec<f64>,
}

impl PgdTrace {
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "iteration,mean_ce_best,mean_ce_raw")?;
        for (i, (best, raw)) in self.mean_ce_best.iter().zip(&self.mean_ce_raw).enumerate() {
            writeln!(writer, "{i},{best:.17e},{raw:.17e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::data("empty curve file"))??;
        if header != "iteration,mean_ce_best,mean_ce_raw" {
            return Err(Error::data(format!("unrecognized curve header: {header}")));
        }
        let mut best = Vec::new();
        let mut raw = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let lineno = idx as u64 + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::parse(lineno, "expected 3 fields"));
            }
            best.push(
                fields[1]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("bad value '{}'", fields[1])))?,
            );
            raw.push(
                fields[2]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("bad value '{}'", fields[2])))?,
            );
        }
        Ok(Self { mean_ce_raw: raw, mean_ce_best: best })
    }
}

fn sign<S: Scalar>(g: S) -> S {
    if g > S::zero() {
        S::one()
    } else if g < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

fn check_feature_range<S: Scalar>(features: &ArrayView2<'_, S>) -> Result<()> {
    for &x in features.iter() {
        if !(x >= S::zero() && x <= S::one()) {
            return Err(Error::data(format!("attack input {x} outside [0,1]")));
        }
    }
    Ok(())
}

fn check_gradient_finite<S: Scalar>(grad: &Array2<S>) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite input gradient during attack"));
    }
    Ok(())
}

/// `x <- clip_[0,1]( clip_ball( x + step * sign(grad) ) )`, elementwise.
fn projected_sign_step<S: Scalar>(
    x: &mut Array2<S>,
    origin: &ArrayView2<'_, S>,
    grad: &Array2<S>,
    step: S,
    epsilon: S,
) {
    Zip::from(x).and(origin).and(grad).for_each(|x, &x0, &g| {
        let moved = *x + step * sign(g);
        let lo = (x0 - epsilon).max(S::zero());
        let hi = (x0 + epsilon).min(S::one());
        *x = moved.max(lo).min(hi);
    });
}

fn assert_feasible<S: Scalar>(adv: &Array2<S>, origin: &ArrayView2<'_, S>, epsilon: S) {
    let tol = S::epsilon() * S::cast(4.0);
    for (&a, &x0) in adv.iter().zip(origin.iter()) {
        assert!(
            a >= S::zero() && a <= S::one(),
            "adversarial feature {a} escaped [0,1]"
        );
        assert!(
            (a - x0).abs() <= epsilon + tol,
            "adversarial feature moved {} > epsilon {epsilon}",
            (a - x0).abs()
        );
    }
}

/// Fast gradient sign method: one signed step of size `epsilon`, clipped to
/// the valid range. `sign(0) = 0`.
pub fn fgsm<S: Scalar, B: ClassifierBackend<S> + ?Sized>(
    backend: &B,
    features: ArrayView2<'_, S>,
    hard_labels: &[usize],
    epsilon: S,
) -> Result<Array2<S>> {
    if !(epsilon >= S::zero() && epsilon.is_finite()) {
        return Err(Error::config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    check_feature_range(&features)?;
    let targets = one_hot_targets(hard_labels, backend.n_classes())?;
    let grad = backend.loss_input_gradient(features, &targets)?;
    check_gradient_finite(&grad)?;
    let mut adv = features.to_owned();
    projected_sign_step(&mut adv, &features, &grad, epsilon, epsilon);
    assert_feasible(&adv, &features, epsilon);
    Ok(adv)
}

/// Projected gradient descent: `pgd_steps` signed steps of `step_size`,
/// each projected onto the epsilon-ball around the original input and onto
/// `[0,1]`. Returns the final iterate plus the per-iteration mean-CE trace.
pub fn pgd<S: Scalar, B: ClassifierBackend<S> + ?Sized>(
    backend: &B,
    features: ArrayView2<'_, S>,
    hard_labels: &[usize],
    config: &AttackConfig,
) -> Result<(Array2<S>, PgdTrace)> {
    if config.method != AttackMethod::Pgd {
        return Err(Error::config("pgd() requires an attack config with method = pgd"));
    }
    config.validate()?;
    check_feature_range(&features)?;
    let epsilon = S::cast(config.epsilon());
    let step = S::cast(config.step_size());
    let targets = one_hot_targets(hard_labels, backend.n_classes())?;

    let mut x = features.to_owned();
    if config.random_start {
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            let mut rng = derive_rng(config.seed, &[stream::ATTACK_START, i as u64]);
            for (value, &origin) in row.iter_mut().zip(features.row(i)) {
                let delta = S::cast(rng.random_range(-1.0..=1.0)) * epsilon;
                *value = (origin + delta).max(S::zero()).min(S::one());
            }
        }
    }

    let unattacked = backend.predict_proba(features)?;
    let base_ce = mean_cross_entropy_vs_labels(&unattacked, hard_labels)?.as_f64();
    let mut raw = Vec::with_capacity(config.pgd_steps + 1);
    let mut best = Vec::with_capacity(config.pgd_steps + 1);
    raw.push(base_ce);
    best.push(base_ce);

    for _ in 0..config.pgd_steps {
        let grad = backend.loss_input_gradient(x.view(), &targets)?;
        check_gradient_finite(&grad)?;
        projected_sign_step(&mut x, &features, &grad, step, epsilon);
        let preds = backend.predict_proba(x.view())?;
        let ce = mean_cross_entropy_vs_labels(&preds, hard_labels)?.as_f64();
        raw.push(ce);
        best.push(best.last().copied().expect("seeded").max(ce));
    }
    assert_feasible(&x, &features, epsilon);
    Ok((x, PgdTrace { mean_ce_raw: raw, mean_ce_best: best }))
}

/// Accuracy and cross-entropy against hard labels, before and after attack.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub config: AttackConfig,
    pub n_examples: usize,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    pub pre_crossentropy: f64,
    pub post_crossentropy: f64,
    /// PGD only.
    pub trace: Option<PgdTrace>,
}

/// Attack the full dataset and report pre/post metrics.
pub fn robustness_eval<S: Scalar, B: ClassifierBackend<S> + ?Sized>(
    backend: &B,
    dataset: &SoftLabelDataset<S>,
    config: &AttackConfig,
) -> Result<AttackReport> {
    config.validate()?;
    dataset.validate()?;
    let features = dataset.features.view();
    let labels = &dataset.hard_labels;

    let pre_preds = backend.predict_proba(features)?;
    let pre_accuracy = top1_accuracy(&pre_preds, labels)?;
    let pre_crossentropy = mean_cross_entropy_vs_labels(&pre_preds, labels)?.as_f64();

    let (adversarial, trace) = match config.method {
        AttackMethod::Fgsm => {
            (fgsm(backend, features, labels, S::cast(config.epsilon()))?, None)
        }
        AttackMethod::Pgd => {
            let (adv, trace) = pgd(backend, features, labels, config)?;
            (adv, Some(trace))
        }
    };
    let post_preds = backend.predict_proba(adversarial.view())?;
    let post_accuracy = top1_accuracy(&post_preds, labels)?;
    let post_crossentropy = mean_cross_entropy_vs_labels(&post_preds, labels)?.as_f64();

    Ok(AttackReport {
        config: config.clone(),
        n_examples: dataset.len(),
        pre_accuracy,
        post_accuracy,
        pre_crossentropy,
        post_crossentropy,
        trace,
    })
}

impl AttackReport {
    pub fn write_key_value<W: Write>(&self, mut writer: W) -> Result<()> {
        let method = match self.config.method {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
        };
        writeln!(writer, "method: {method}")?;
        writeln!(writer, "epsilon_255: {}", self.config.epsilon_255)?;
        writeln!(writer, "epsilon: {:.17e}", self.config.epsilon())?;
        writeln!(writer, "pgd_steps: {}", self.config.pgd_steps)?;
        writeln!(writer, "pgd_step_size: {:.17e}", self.config.step_size())?;
        writeln!(writer, "random_start: {}", self.config.random_start)?;
        writeln!(writer, "seed: {}", self.config.seed)?;
        writeln!(writer, "n_examples: {}", self.n_examples)?;
        writeln!(writer, "pre_accuracy: {:.17e}", self.pre_accuracy)?;
        writeln!(writer, "post_accuracy: {:.17e}", self.post_accuracy)?;
        writeln!(writer, "pre_crossentropy: {:.17e}", self.pre_crossentropy)?;
        writeln!(writer, "post_crossentropy: {:.17e}", self.post_crossentropy)?;
        Ok(())
    }

    pub fn read_key_value<R: Read>(reader: R) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in BufReader::new(reader).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(": ")
                .ok_or_else(|| Error::data(format!("expected 'key: value', got '{line}'")))?;
            fields.insert(key.to_string(), value.to_string());
        }
        let get = |key: &str| -> Result<String> {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| Error::data(format!("attack report missing field '{key}'")))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| Error::data(format!("bad value for {key}")))
        };
        let method = match get("method")?.as_str() {
            "fgsm" => AttackMethod::Fgsm,
            "pgd" => AttackMethod::Pgd,
            other => return Err(Error::data(format!("unknown attack method '{other}'"))),
        };
        let config = AttackConfig {
            method,
            epsilon_255: get("epsilon_255")?
                .parse()
                .map_err(|_| Error::data("bad epsilon_255"))?,
            pgd_steps: get("pgd_steps")?.parse().map_err(|_| Error::data("bad pgd_steps"))?,
            pgd_step_size: Some(parse_f64("pgd_step_size")?),
            random_start: get("random_start")?
                .parse()
                .map_err(|_| Error::data("bad random_start"))?,
            seed: get("seed")?.parse().map_err(|_| Error::data("bad seed"))?,
        };
        Ok(AttackReport {
            config,
            n_examples: get("n_examples")?
                .parse()
                .map_err(|_| Error::data("bad n_examples"))?,
            pre_accuracy: parse_f64("pre_accuracy")?,
            post_accuracy: parse_f64("post_accuracy")?,
            pre_crossentropy: parse_f64("pre_crossentropy")?,
            post_crossentropy: parse_f64("post_crossentropy")?,
            trace: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ParamSnapshot;
    use crate::bench::Provenance;
    use crate::label::LabelDistribution;
    use crate::training::{OptimizerKind, ReferenceModel};
    use ndarray::array;
    use rand::Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = derive_rng(seed, &[70]);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
    }

    fn model() -> ReferenceModel<f64> {
        ReferenceModel::new(4, 8, 3, 0, OptimizerKind::Adam).unwrap()
    }

    #[test]
    fn zero_epsilon_is_the_identity() {
        let m = model();
        let x = random_features(8, 4, 1);
        let labels = vec![0usize, 1, 2, 0, 1, 2, 0, 1];
        let adv = fgsm(&m, x.view(), &labels, 0.0).unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn fgsm_respects_the_linf_budget() {
        let m = model();
        let x = random_features(16, 4, 2);
        let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let eps = 4.0 / 255.0;
        let adv = fgsm(&m, x.view(), &labels, eps).unwrap();
        let max_move = adv
            .iter()
            .zip(x.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_move <= eps + 1e-15);
        assert!(adv.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    /// A 1-D two-class logistic model with known weight, for closed-form
    /// gradient checks: p(class 1 | x) = sigmoid(w * x), and the CE gradient
    /// with respect to x is (p1 - y1) * w.
    struct Logistic {
        w: f64,
    }

    impl ClassifierBackend<f64> for Logistic {
        fn input_dim(&self) -> usize {
            1
        }
        fn n_classes(&self) -> usize {
            2
        }
        fn predict_proba(
            &self,
            features: ArrayView2<'_, f64>,
        ) -> Result<Vec<LabelDistribution<f64>>> {
            features
                .rows()
                .into_iter()
                .map(|row| {
                    let p1 = 1.0 / (1.0 + (-self.w * row[0]).exp());
                    LabelDistribution::new(vec![1.0 - p1, p1], 0)
                })
                .collect()
        }
        fn loss_input_gradient(
            &self,
            features: ArrayView2<'_, f64>,
            targets: &[LabelDistribution<f64>],
        ) -> Result<Array2<f64>> {
            let preds = self.predict_proba(features)?;
            let mut grad = Array2::zeros((features.nrows(), 1));
            for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
                let p1 = p.get(1).unwrap();
                let y1 = t.get(1).unwrap();
                grad[(i, 0)] = (p1 - y1) * self.w;
            }
            Ok(grad)
        }
        fn fit_step(
            &mut self,
            _: ArrayView2<'_, f64>,
            _: &[LabelDistribution<f64>],
            _: f64,
        ) -> Result<f64> {
            unimplemented!()
        }
        fn snapshot(&self) -> ParamSnapshot<f64> {
            ParamSnapshot {
                backend_kind: "logistic".into(),
                dims: vec![1],
                values: vec![self.w],
                config_digest: String::new(),
            }
        }
        fn restore(&mut self, snapshot: &ParamSnapshot<f64>) -> Result<()> {
            self.w = snapshot.values[0];
            Ok(())
        }
    }

    #[test]
    fn fgsm_matches_the_hand_derived_logistic_step() {
        // With w > 0 and true class 1, d CE / dx = (p1 - 1) * w < 0, so the
        // attack moves x by -epsilon; for true class 0 it moves +epsilon.
        let m = Logistic { w: 2.0 };
        let x = array![[0.5], [0.5]];
        let labels = vec![1usize, 0];
        let eps = 0.1;
        let adv = fgsm(&m, x.view(), &labels, eps).unwrap();
        assert_eq!(adv[(0, 0)], 0.5 - eps);
        assert_eq!(adv[(1, 0)], 0.5 + eps);
    }

    #[test]
    fn single_step_pgd_equals_fgsm_bitwise() {
        let m = model();
        let x = random_features(12, 4, 3);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let eps_255 = 6;
        let eps = f64::from(eps_255) / 255.0;
        let config = AttackConfig {
            method: AttackMethod::Pgd,
            epsilon_255: eps_255,
            pgd_steps: 1,
            pgd_step_size: Some(eps),
            random_start: false,
            seed: 0,
        };
        let (adv_pgd, trace) = pgd(&m, x.view(), &labels, &config).unwrap();
        let adv_fgsm = fgsm(&m, x.view(), &labels, eps).unwrap();
        assert_eq!(adv_pgd, adv_fgsm);
        assert_eq!(trace.mean_ce_raw.len(), 2);
    }

    #[test]
    fn pgd_iterates_stay_feasible_and_best_curve_is_monotone() {
        let m = model();
        let x = random_features(20, 4, 4);
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let config = AttackConfig {
            random_start: true,
            seed: 9,
            ..AttackConfig::pgd(8, 15)
        };
        let (adv, trace) = pgd(&m, x.view(), &labels, &config).unwrap();
        let eps = config.epsilon();
        for (&a, &b) in adv.iter().zip(x.iter()) {
            assert!((a - b).abs() <= eps + 1e-15);
            assert!((0.0..=1.0).contains(&a));
        }
        assert_eq!(trace.mean_ce_best.len(), 16);
        for pair in trace.mean_ce_best.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        for (best, raw) in trace.mean_ce_best.iter().zip(&trace.mean_ce_raw) {
            assert!(best >= raw);
        }
    }

    #[test]
    fn attacks_are_deterministic_and_leave_the_backend_alone() {
        let m = model();
        let x = random_features(10, 4, 5);
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let before = m.snapshot();
        let config = AttackConfig { random_start: true, seed: 4, ..AttackConfig::pgd(4, 5) };
        let (a1, t1) = pgd(&m, x.view(), &labels, &config).unwrap();
        let (a2, t2) = pgd(&m, x.view(), &labels, &config).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(t1, t2);
        assert_eq!(m.snapshot(), before);
    }

    fn attack_dataset(n: usize) -> SoftLabelDataset<f64> {
        SoftLabelDataset {
            name: "attack-fixture".into(),
            features: random_features(n, 4, 6),
            hard_labels: (0..n).map(|i| i % 3).collect(),
            soft_labels: None,
            n_classes: 3,
            provenance: Provenance::Synthetic,
            shift_level: None,
        }
    }

    #[test]
    fn zero_budget_robustness_eval_reports_equal_metrics() {
        let m = model();
        let report = robustness_eval(&m, &attack_dataset(32), &AttackConfig::fgsm(0)).unwrap();
        assert_eq!(report.pre_accuracy, report.post_accuracy);
        assert_eq!(report.pre_crossentropy, report.post_crossentropy);
    }

    #[test]
    fn robustness_eval_reports_pgd_trace() {
        let m = model();
        let config = AttackConfig::pgd(4, 6);
        let report = robustness_eval(&m, &attack_dataset(24), &config).unwrap();
        let trace = report.trace.as_ref().unwrap();
        assert_eq!(trace.mean_ce_best.len(), 7);
        assert_eq!(report.n_examples, 24);
        assert!(report.post_crossentropy >= report.pre_crossentropy);
    }

    #[test]
    fn config_validation_rules() {
        assert!(AttackConfig::fgsm(256).validate().is_err());
        assert!(AttackConfig { pgd_steps: 0, ..AttackConfig::pgd(4, 1) }.validate().is_err());
        let oversized_step = AttackConfig {
            pgd_step_size: Some(1.0),
            ..AttackConfig::pgd(4, 10)
        };
        assert!(oversized_step.validate().is_err());
        assert!(AttackConfig::pgd(4, 40).validate().is_ok());
        // Defaults: 40 steps, step = eps / 4.
        let c = AttackConfig::pgd(4, 40);
        assert_eq!(c.step_size(), c.epsilon() / 4.0);
    }

    #[test]
    fn report_and_trace_round_trip() {
        let m = model();
        let config = AttackConfig::pgd(4, 5);
        let report = robustness_eval(&m, &attack_dataset(16), &config).unwrap();
        let mut buf = Vec::new();
        report.write_key_value(&mut buf).unwrap();
        let reread = AttackReport::read_key_value(buf.as_slice()).unwrap();
        assert_eq!(reread.pre_accuracy, report.pre_accuracy);
        assert_eq!(reread.post_crossentropy, report.post_crossentropy);
        assert_eq!(reread.config.epsilon_255, 4);

        let trace = report.trace.unwrap();
        let mut curve_buf = Vec::new();
        trace.write_csv(&mut curve_buf).unwrap();
        assert_eq!(PgdTrace::read_csv(curve_buf.as_slice()).unwrap(), trace);
    }
}
