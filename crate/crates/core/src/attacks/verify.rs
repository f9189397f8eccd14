use serde::{Deserialize, Serialize};

use crate::autodiff;
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{is_adversarial, AdversarialResult, AttackConfig, Norm, Outcome};

/// Slack allowed on the `L∞` budget for floating-point rounding.
pub const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyFailure {
    Shape,
    /// `adversarial != original + perturbation`.
    Perturbation,
    /// Pixels outside `[0, 1]`.
    Range,
    /// Budget exceeded or reported norm wrong.
    Norm,
    OriginalClass,
    AdversarialClass,
    /// Outcome inconsistent with fresh predictions.
    SuccessFlag,
    Forward,
}

impl VerifyFailure {
    pub fn code(self) -> &'static str {
        match self {
            VerifyFailure::Shape => "shape",
            VerifyFailure::Perturbation => "perturbation",
            VerifyFailure::Range => "range",
            VerifyFailure::Norm => "norm",
            VerifyFailure::OriginalClass => "original_class",
            VerifyFailure::AdversarialClass => "adversarial_class",
            VerifyFailure::SuccessFlag => "success_flag",
            VerifyFailure::Forward => "forward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verification {
    pub failure: Option<VerifyFailure>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

pub fn linf_norm<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.max_abs().as_f64()
}

/// Distinct `(row, col)` positions of an HWC tensor with any non-zero channel.
pub fn l0_support<T: Scalar>(t: &Tensor<T>) -> Vec<(usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Vec::new();
    }
    let (w, c) = (s[1], s[2]);
    t.data()
        .chunks_exact(c)
        .enumerate()
        .filter(|(_, px)| px.iter().any(|&v| v != T::zero()))
        .map(|(i, _)| (i / w, i % w))
        .collect()
}

/// Re-derives predictions and norms with fresh forward passes and checks
/// the result against them.
pub fn verify_adversarial<T: Scalar>(net: &Network<T>, result: &AdversarialResult<T>, cfg: &AttackConfig) -> Verification {
    Verification {
        failure: check(net, result, cfg).err(),
    }
}

fn check<T: Scalar>(net: &Network<T>, r: &AdversarialResult<T>, cfg: &AttackConfig) -> Result<(), VerifyFailure> {
    let shape = net.input_shape();
    for t in [&r.original, &r.adversarial, &r.perturbation] {
        if t.shape() != shape {
            return Err(VerifyFailure::Shape);
        }
    }
    let ulp = T::epsilon() * T::of(4.0);
    for ((&x, &a), &e) in r.original.data().iter().zip(r.adversarial.data()).zip(r.perturbation.data()) {
        if ((x + e) - a).abs() > ulp {
            return Err(VerifyFailure::Perturbation);
        }
        if !(a >= T::zero() && a <= T::one()) {
            return Err(VerifyFailure::Range);
        }
    }
    let achieved = match cfg.norm {
        Norm::LInf => {
            let n = linf_norm(&r.perturbation);
            if n > cfg.threshold + NORM_TOLERANCE {
                return Err(VerifyFailure::Norm);
            }
            n
        }
        Norm::L0 => {
            let n = l0_support(&r.perturbation).len();
            if n > cfg.pixel_budget() {
                return Err(VerifyFailure::Norm);
            }
            n as f64
        }
    };
    if (achieved - r.achieved_norm).abs() > NORM_TOLERANCE {
        return Err(VerifyFailure::Norm);
    }

    let c = autodiff::forward(net, &r.original).map_err(|_| VerifyFailure::Forward)?.predicted();
    let ac = autodiff::forward(net, &r.adversarial).map_err(|_| VerifyFailure::Forward)?.predicted();
    if c != r.original_class {
        return Err(VerifyFailure::OriginalClass);
    }
    if ac != r.adversarial_class {
        return Err(VerifyFailure::AdversarialClass);
    }
    let consistent = match r.outcome {
        Outcome::Skipped => r.true_label.is_some_and(|l| l != c) && achieved == 0.0,
        Outcome::Success => is_adversarial(c, r.target, ac) && r.target == cfg.target,
        Outcome::Failure => !is_adversarial(c, r.target, ac),
    };
    if !consistent {
        return Err(VerifyFailure::SuccessFlag);
    }
    Ok(())
}
