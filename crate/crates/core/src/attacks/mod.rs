//! Adversarial sample generation.
//!
//! [`pgd_attack`] is a white-box `L∞` attack; [`pixel_attack`] is a
//! black-box `L0` attack driven by differential evolution and only ever
//! calls [`Classifier::probabilities`].

mod pgd;
mod pixel;
mod verify;

pub use pgd::pgd_attack;
pub use pixel::{decode_candidate, pixel_attack};
pub use verify::{l0_support, linf_norm, verify_adversarial, Verification, VerifyFailure};

use serde::{Deserialize, Serialize};

use crate::autodiff;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward-only model access.
pub trait Classifier<T: Scalar> {
    fn input_shape(&self) -> &[usize];
    fn classes(&self) -> usize;
    fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<T>>;
}

impl<T: Scalar> Classifier<T> for Network<T> {
    fn input_shape(&self) -> &[usize] {
        Network::input_shape(self)
    }
    fn classes(&self) -> usize {
        Network::classes(self)
    }
    fn probabilities(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(autodiff::forward(self, x)?.probabilities().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    /// Count of perturbed pixel positions.
    #[serde(rename = "l0")]
    L0,
    /// Largest per-element change.
    #[serde(rename = "linf")]
    LInf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Pgd,
    Pixel,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Pgd => "pgd",
            AttackKind::Pixel => "pixel",
        }
    }
}

/// Loss the PGD steps follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgdLoss {
    /// Ascend cross-entropy of the original class (untargeted) or descend
    /// it for the target class (targeted).
    #[default]
    CrossEntropy,
    /// Descend the original class confidence / ascend the target's.
    SoftLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdParams {
    pub iterations: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub loss: PgdLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeParams {
    pub population: usize,
    /// Differential weight `F`.
    pub differential_weight: f64,
    /// Binomial crossover rate `CR`.
    pub crossover: f64,
    pub generations: usize,
    /// Bounds for every channel gene.
    pub value_bounds: (f64, f64),
    /// Snap channel values to `levels` evenly spaced values in `[0, 1]`.
    pub value_levels: Option<usize>,
    /// Stop at the first successful candidate.
    pub early_stop: bool,
}

impl Default for DeParams {
    fn default() -> Self {
        Self {
            population: 75,
            differential_weight: 0.5,
            crossover: 0.9,
            generations: 30,
            value_bounds: (0.0, 1.0),
            value_levels: None,
            early_stop: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: Norm,
    /// `L∞`: largest per-element change in pixel units. `L0`: pixel budget `k`.
    pub threshold: f64,
    /// Target class for targeted attacks.
    pub target: Option<usize>,
    pub pgd: PgdParams,
    pub de: DeParams,
    pub seed: u64,
}

impl AttackConfig {
    /// `L∞` attack with step `th / 10`, 40 iterations and random start.
    pub fn pgd(threshold: f64) -> Self {
        Self {
            norm: Norm::LInf,
            threshold,
            target: None,
            pgd: PgdParams {
                iterations: 40,
                step_size: threshold / 10.0,
                random_start: true,
                loss: PgdLoss::CrossEntropy,
            },
            de: DeParams::default(),
            seed: 0,
        }
    }

    /// `L0` attack perturbing at most `pixels` positions.
    pub fn pixel(pixels: usize) -> Self {
        Self {
            norm: Norm::L0,
            threshold: pixels as f64,
            target: None,
            pgd: Self::pgd(0.03).pgd,
            de: DeParams::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_target(mut self, target: usize) -> Self {
        self.target = Some(target);
        self
    }

    pub fn targeted(&self) -> bool {
        self.target.is_some()
    }

    /// Pixel budget of an `L0` config.
    pub fn pixel_budget(&self) -> usize {
        self.threshold as usize
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !self.threshold.is_finite() {
            return bad("threshold must be finite".into());
        }
        match self.norm {
            Norm::LInf => {
                if self.threshold <= 0.0 {
                    return bad(format!("L-inf threshold must be positive, got {}", self.threshold));
                }
                if !(self.pgd.step_size >= 0.0 && self.pgd.step_size.is_finite()) {
                    return bad(format!("PGD step size must be non-negative, got {}", self.pgd.step_size));
                }
            }
            Norm::L0 => {
                if self.threshold < 0.0 || self.threshold.fract() != 0.0 {
                    return bad(format!("pixel budget must be a non-negative integer, got {}", self.threshold));
                }
                let de = &self.de;
                if de.population < 4 {
                    return bad(format!("DE population must be at least 4, got {}", de.population));
                }
                if !(de.differential_weight > 0.0 && de.differential_weight <= 2.0) {
                    return bad(format!("differential weight must lie in (0, 2], got {}", de.differential_weight));
                }
                if !(0.0..=1.0).contains(&de.crossover) {
                    return bad(format!("crossover rate must lie in [0, 1], got {}", de.crossover));
                }
                let (lo, hi) = de.value_bounds;
                if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                    return bad(format!("channel bounds must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"));
                }
                if de.value_levels.is_some_and(|l| l < 2) {
                    return bad("value quantization needs at least 2 levels".into());
                }
            }
        }
        if let Some(t) = self.target {
            if t >= classes {
                return Err(Error::LabelOutOfRange { label: t, classes });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    /// The clean image was already misclassified; no attack was run.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct AdversarialResult<T> {
    pub attack: AttackKind,
    pub original: Tensor<T>,
    pub adversarial: Tensor<T>,
    /// `adversarial - original`.
    pub perturbation: Tensor<T>,
    pub outcome: Outcome,
    pub true_label: Option<usize>,
    pub target: Option<usize>,
    pub original_class: usize,
    pub original_confidence: f64,
    pub adversarial_class: usize,
    pub adversarial_confidence: f64,
    /// `L∞` norm (PGD) or perturbed pixel count (pixel attack).
    pub achieved_norm: f64,
    pub queries: usize,
    /// PGD steps or DE generations actually run.
    pub iterations: usize,
    pub seed: u64,
    /// PGD: loss after each step. DE: best-so-far objective after
    /// initialization and after each generation.
    pub trace: Vec<f64>,
}

impl<T: Scalar> AdversarialResult<T> {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// Pixel positions `(row, col)` where any channel changed.
    pub fn perturbed_pixels(&self) -> Vec<(usize, usize)> {
        l0_support(&self.perturbation)
    }

    pub(crate) fn skipped(attack: AttackKind, image: &Tensor<T>, probs: &[T], label: usize, seed: u64, target: Option<usize>) -> Self {
        let c = crate::tensor::argmax(probs);
        Self {
            attack,
            original: image.clone(),
            adversarial: image.clone(),
            perturbation: Tensor::zeros(image.shape()),
            outcome: Outcome::Skipped,
            true_label: Some(label),
            target,
            original_class: c,
            original_confidence: probs[c].as_f64(),
            adversarial_class: c,
            adversarial_confidence: probs[c].as_f64(),
            achieved_norm: 0.0,
            queries: 1,
            iterations: 0,
            seed,
            trace: Vec::new(),
        }
    }
}

/// Argmax-displacement test shared by both attacks.
pub(crate) fn is_adversarial(original_class: usize, target: Option<usize>, adversarial_class: usize) -> bool {
    match target {
        Some(t) => adversarial_class == t,
        None => adversarial_class != original_class,
    }
}

pub(crate) fn check_image<T: Scalar>(shape: &[usize], image: &Tensor<T>) -> Result<()> {
    image.expect_shape(shape)?;
    if image.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::InvalidArgument("attack input must lie in [0, 1]".into()));
    }
    Ok(())
}
