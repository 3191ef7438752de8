//! Synthetic world with exact Bayes-oracle soft labels.
//!
//! Features are drawn from Gaussian class-conditionals with shared isotropic
//! covariance, then squashed into `(0,1)` per dimension by a logistic map.
//! The map is a fixed bijection applied to every class alike, so the
//! posterior of the squashed feature equals the posterior of the latent
//! point, which is computable in closed form from the generative
//! parameters. Distribution shift translates each class mean along a fixed
//! per-class direction by a scalar `shift_level`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bench::{Provenance, SoftLabelDataset};
use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::scalar::Scalar;
use crate::seeding::{derive_rng, stream};

/// How class means are laid out in latent space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanPlacement {
    /// Regular simplex under a seeded rotation: identical geometry for
    /// every seed, all class pairs equally confusable.
    #[default]
    Simplex,
    /// Independent seeded random directions: heterogeneous pairwise
    /// distances, so some class pairs are far more confusable than others.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthWorldConfig {
    pub n_classes: usize,
    pub n_dims: usize,
    /// Class-mean geometry.
    pub mean_placement: MeanPlacement,
    /// Distance of class means from the origin (latent space).
    pub mean_radius: f64,
    /// Base standard deviation of the shared isotropic covariance.
    pub covariance_scale: f64,
    /// Multiplies the covariance scale; small values separate the classes,
    /// large values blur them.
    pub overlap: f64,
    /// Mean-translation magnitudes for the shifted test sets;
    /// non-decreasing.
    pub shift_levels: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    /// Logistic squash divisor: `x = sigmoid(z / squash_scale)`.
    pub squash_scale: f64,
    pub seed: u64,
}

impl Default for SynthWorldConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_dims: 16,
            mean_placement: MeanPlacement::default(),
            mean_radius: 1.0,
            covariance_scale: 1.0,
            overlap: 0.75,
            shift_levels: vec![0.0, 0.5, 1.0, 1.5],
            n_train: 2_000,
            n_test: 1_000,
            squash_scale: 2.0,
            seed: 0,
        }
    }
}

/// Generative world: class means and draw machinery. Everything is a
/// deterministic function of the config, so persisting the config persists
/// the world.
///
/// Class means sit on a regular simplex of circumradius `mean_radius` under
/// a seeded random rotation, so every seed has identical class geometry.
/// Shift translates each class mean by `shift_level` toward the common
/// center of the classes, shrinking the class separation. Shifted test
/// draws therefore concentrate near the decision boundaries the training
/// world only sparsely covers, which is where calibration differences
/// between training targets show up.
#[derive(Clone, Debug)]
pub struct SynthWorld {
    config: SynthWorldConfig,
    class_means: Vec<Vec<f64>>,
}

fn unit_gaussian_direction(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Vertices of a regular simplex with `k` corners and unit circumradius,
/// embedded in the first `k` coordinates of `R^d`: the centered and
/// normalized standard basis vectors. Centroid is exactly the origin and
/// all pairwise distances are equal.
fn simplex_vertices(k: usize, d: usize) -> Vec<Vec<f64>> {
    let radius = (1.0 - 1.0 / k as f64).sqrt();
    (0..k)
        .map(|c| {
            let mut v = vec![0.0; d];
            for (j, value) in v.iter_mut().enumerate().take(k) {
                let centered = if j == c { 1.0 - 1.0 / k as f64 } else { -1.0 / k as f64 };
                *value = centered / radius;
            }
            v
        })
        .collect()
}

/// Seeded random orthogonal matrix (Gram-Schmidt on a Gaussian matrix),
/// as `d` orthonormal rows.
fn random_rotation(rng: &mut impl Rng, d: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for prev in &rows {
            let dot: f64 = v.iter().zip(prev).map(|(&a, &b)| a * b).sum();
            for (vi, &pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}

fn rotate(rotation: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    rotation
        .iter()
        .map(|row| row.iter().zip(v).map(|(&r, &x)| r * x).sum())
        .collect()
}

impl SynthWorld {
    pub fn new(config: SynthWorldConfig) -> Result<Self> {
        if config.n_classes < 2 {
            return Err(Error::config(format!(
                "synthetic world needs at least 2 classes, got {}",
                config.n_classes
            )));
        }
        if config.n_dims == 0 {
            return Err(Error::config("synthetic world needs at least 1 dimension"));
        }
        if !(config.overlap.is_finite() && config.overlap > 0.0) {
            return Err(Error::config(format!("overlap must be positive, got {}", config.overlap)));
        }
        let sigma = config.covariance_scale * config.overlap;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::numeric(format!("degenerate covariance: sigma = {sigma}")));
        }
        if !(config.squash_scale.is_finite() && config.squash_scale > 0.0) {
            return Err(Error::config(format!(
                "squash scale must be positive, got {}",
                config.squash_scale
            )));
        }
        if !(config.mean_radius.is_finite() && config.mean_radius > 0.0) {
            return Err(Error::config(format!(
                "mean radius must be positive, got {}",
                config.mean_radius
            )));
        }
        for pair in config.shift_levels.windows(2) {
            if pair[1] < pair[0] {
                return Err(Error::config(format!(
                    "shift schedule must be non-decreasing, got {:?}",
                    config.shift_levels
                )));
            }
        }
        if config.shift_levels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config(format!(
                "shift levels must be finite and nonnegative, got {:?}",
                config.shift_levels
            )));
        }
        let class_means = match config.mean_placement {
            MeanPlacement::Simplex => {
                if config.n_classes > config.n_dims {
                    return Err(Error::config(format!(
                        "simplex mean placement needs n_dims >= n_classes, got {} < {}",
                        config.n_dims, config.n_classes
                    )));
                }
                let mut rng = derive_rng(config.seed, &[stream::WORLD_MEANS]);
                let rotation = random_rotation(&mut rng, config.n_dims);
                simplex_vertices(config.n_classes, config.n_dims)
                    .into_iter()
                    .map(|vertex| {
                        rotate(&rotation, &vertex)
                            .into_iter()
                            .map(|x| x * config.mean_radius)
                            .collect()
                    })
                    .collect()
            }
            MeanPlacement::Random => (0..config.n_classes)
                .map(|c| {
                    let mut rng = derive_rng(config.seed, &[stream::WORLD_MEANS, c as u64]);
                    unit_gaussian_direction(&mut rng, config.n_dims)
                        .into_iter()
                        .map(|x| x * config.mean_radius)
                        .collect()
                })
                .collect(),
        };
        Ok(Self { config, class_means })
    }

    pub fn config(&self) -> &SynthWorldConfig {
        &self.config
    }

    pub fn sigma(&self) -> f64 {
        self.config.covariance_scale * self.config.overlap
    }

    /// Class mean after translating `shift_level` toward the center of the
    /// class means.
    pub fn class_mean(&self, class: usize, shift_level: f64) -> Vec<f64> {
        let mean = &self.class_means[class];
        if shift_level == 0.0 {
            return mean.clone();
        }
        let center = self.center();
        let offset: Vec<f64> = mean.iter().zip(&center).map(|(&m, &c)| m - c).collect();
        let distance = offset.iter().map(|x| x * x).sum::<f64>().sqrt();
        if distance <= 1e-12 {
            return mean.clone();
        }
        let step = shift_level.min(distance);
        mean.iter()
            .zip(&offset)
            .map(|(&m, &o)| m - step * o / distance)
            .collect()
    }

    /// Centroid of the class means.
    fn center(&self) -> Vec<f64> {
        let d = self.config.n_dims;
        let mut center = vec![0.0; d];
        for mean in &self.class_means {
            for (c, &m) in center.iter_mut().zip(mean) {
                *c += m;
            }
        }
        for c in &mut center {
            *c /= self.config.n_classes as f64;
        }
        center
    }

    /// Logistic squash into `(0,1)`.
    pub fn squash(&self, z: f64) -> f64 {
        1.0 / (1.0 + (-z / self.config.squash_scale).exp())
    }

    /// Inverse of [`Self::squash`].
    pub fn unsquash(&self, x: f64) -> f64 {
        self.config.squash_scale * (x / (1.0 - x)).ln()
    }

    /// Exact Bayes posterior `p(class | z)` at a latent point under the
    /// shifted world (uniform class priors; shared isotropic covariance).
    pub fn posterior(&self, z: &[f64], shift_level: f64) -> Vec<f64> {
        let inv_two_var = 1.0 / (2.0 * self.sigma() * self.sigma());
        let logits: Vec<f64> = (0..self.config.n_classes)
            .map(|c| {
                let mean = self.class_mean(c, shift_level);
                let sq_dist: f64 =
                    z.iter().zip(&mean).map(|(&zi, &mi)| (zi - mi) * (zi - mi)).sum();
                -sq_dist * inv_two_var
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Posterior at a squashed feature vector: invert the squash, then
    /// evaluate the latent posterior (the bijection cancels in the density
    /// ratio).
    pub fn posterior_from_features(&self, x: &[f64], shift_level: f64) -> Vec<f64> {
        let z: Vec<f64> = x.iter().map(|&xi| self.unsquash(xi)).collect();
        self.posterior(&z, shift_level)
    }

    /// Draw `n` examples from the (optionally shifted) world. The per-example
    /// stream depends on `(seed, draw_tag, example_index)` but not on the
    /// shift, which enters only through the mean translation.
    pub fn generate<S: Scalar>(
        &self,
        n: usize,
        shift_level: f64,
        draw_tag: u64,
        name: &str,
    ) -> Result<SoftLabelDataset<S>> {
        if n == 0 {
            return Err(Error::config("cannot generate an empty dataset"));
        }
        let k = self.config.n_classes;
        let d = self.config.n_dims;
        let sigma = self.sigma();
        let mut features = Array2::zeros((n, d));
        let mut hard_labels = Vec::with_capacity(n);
        let mut soft_labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = derive_rng(self.config.seed, &[stream::WORLD_DRAW, draw_tag, i as u64]);
            let class = rng.random_range(0..k);
            let mean = self.class_mean(class, shift_level);
            let z: Vec<f64> = mean
                .iter()
                .map(|&m| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    m + sigma * noise
                })
                .collect();
            for (j, &zj) in z.iter().enumerate() {
                features[(i, j)] = S::cast(self.squash(zj));
            }
            hard_labels.push(class);
            let posterior = self.posterior(&z, shift_level);
            soft_labels.push(LabelDistribution::new(
                posterior.into_iter().map(S::cast).collect(),
                0,
            )?);
        }
        let dataset = SoftLabelDataset {
            name: name.to_string(),
            features,
            hard_labels,
            soft_labels: Some(soft_labels),
            n_classes: k,
            provenance: Provenance::Synthetic,
            shift_level: Some(shift_level),
        };
        dataset.validate()?;
        Ok(dataset)
    }

    /// Training set plus one test set per shift level. The test draw at
    /// index `j` shares its random stream across levels, so a level-0 test
    /// set is exactly a fresh holdout draw from the training world.
    pub fn make<S: Scalar>(&self) -> Result<(SoftLabelDataset<S>, Vec<SoftLabelDataset<S>>)> {
        let mut train = self.generate(self.config.n_train, 0.0, 0, "synth-train")?;
        train.shift_level = None;
        let tests = self
            .config
            .shift_levels
            .iter()
            .enumerate()
            .map(|(j, &level)| {
                self.generate(self.config.n_test, level, 1 + j as u64, &format!("shift-{level}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((train, tests))
    }

    /// A fresh unshifted draw, stream-compatible with the test set at the
    /// same index.
    pub fn sample_holdout<S: Scalar>(&self, n: usize, index: u64) -> Result<SoftLabelDataset<S>> {
        self.generate(n, 0.0, 1 + index, &format!("holdout-{index}"))
    }
}

/// Mean entropy (nats) of a dataset's soft labels.
pub fn mean_soft_entropy<S: Scalar>(dataset: &SoftLabelDataset<S>) -> Result<f64> {
    let soft = dataset
        .soft_labels
        .as_ref()
        .ok_or_else(|| Error::data(format!("dataset '{}' has no soft labels", dataset.name)))?;
    if soft.is_empty() {
        return Err(Error::data("cannot average entropy over zero examples"));
    }
    Ok(soft.iter().map(|d| d.entropy().as_f64()).sum::<f64>() / soft.len() as f64)
}
