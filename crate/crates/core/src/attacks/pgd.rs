use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{self, BackpropMode, Objective};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::{argmax, Tensor};

use super::{check_image, is_adversarial, linf_norm, AdversarialResult, AttackConfig, AttackKind, Norm, Outcome, PgdLoss};

/// Clips `candidate` into the `th`-ball around `x`, then into `[0, 1]`.
fn project<T: Scalar>(x: &Tensor<T>, candidate: &mut Tensor<T>, th: T) {
    for (c, &o) in candidate.data_mut().iter_mut().zip(x.data()) {
        let e = (*c - o).max(-th).min(th);
        *c = (o + e).max(T::zero()).min(T::one());
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Projected sign-gradient attack under an `L∞` budget.
///
/// Every iterate stays inside the budget ball and `[0, 1]`. Returns the
/// first adversarial iterate, or the last one with [`Outcome::Failure`].
/// With `true_label` set and the clean image already misclassified the
/// result is [`Outcome::Skipped`].
pub fn pgd_attack<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    true_label: Option<usize>,
    cfg: &AttackConfig,
) -> Result<AdversarialResult<T>> {
    if cfg.norm != Norm::LInf {
        return Err(Error::InvalidConfig("PGD requires the L-inf norm".into()));
    }
    cfg.validate(net.classes())?;
    check_image(net.input_shape(), image)?;

    let clean = autodiff::forward(net, image)?;
    let probs = clean.probabilities().to_vec();
    let c = argmax(&probs);
    if let Some(label) = true_label {
        if label >= net.classes() {
            return Err(Error::LabelOutOfRange { label, classes: net.classes() });
        }
        if label != c {
            return Ok(AdversarialResult::skipped(AttackKind::Pgd, image, &probs, label, cfg.seed, cfg.target));
        }
    }
    if cfg.target == Some(c) {
        return Err(Error::InvalidConfig(format!("target class {c} is already the prediction")));
    }

    let th = T::of(cfg.threshold);
    let alpha = T::of(cfg.pgd.step_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adv = image.clone();
    if cfg.pgd.random_start {
        for v in adv.data_mut() {
            *v += T::of(rng.random_range(-cfg.threshold..=cfg.threshold));
        }
    }
    project(image, &mut adv, th);

    // Untargeted ascends CE(C) / descends g_C; targeted descends CE(T) / ascends g_T.
    let (objective, direction) = match (cfg.target, cfg.pgd.loss) {
        (None, PgdLoss::CrossEntropy) => (Objective::CrossEntropy(c), T::one()),
        (None, PgdLoss::SoftLabel) => (Objective::SoftLabel(c), -T::one()),
        (Some(t), PgdLoss::CrossEntropy) => (Objective::CrossEntropy(t), -T::one()),
        (Some(t), PgdLoss::SoftLabel) => (Objective::SoftLabel(t), T::one()),
    };

    let mut queries = 1;
    let mut trace = Vec::with_capacity(cfg.pgd.iterations);
    let mut step = 0;
    let (outcome, record) = loop {
        let record = autodiff::forward(net, &adv)?;
        queries += 1;
        if step > 0 {
            trace.push(record.objective_value(net, objective).as_f64());
        }
        if is_adversarial(c, cfg.target, record.predicted()) {
            break (Outcome::Success, record);
        }
        if step == cfg.pgd.iterations {
            break (Outcome::Failure, record);
        }
        let grad = autodiff::backward_input_grad(net, &record, objective, BackpropMode::Standard)?;
        for (a, &g) in adv.data_mut().iter_mut().zip(grad.data()) {
            *a += direction * alpha * sign(g);
        }
        project(image, &mut adv, th);
        step += 1;
    };

    let adv_probs = record.probabilities();
    let ac = record.predicted();
    let perturbation = adv.zip_map(image, |a, b| a - b)?;
    Ok(AdversarialResult {
        attack: AttackKind::Pgd,
        achieved_norm: linf_norm(&perturbation),
        original: image.clone(),
        adversarial: adv,
        perturbation,
        outcome,
        true_label,
        target: cfg.target,
        original_class: c,
        original_confidence: probs[c].as_f64(),
        adversarial_class: ac,
        adversarial_confidence: adv_probs[ac].as_f64(),
        queries,
        iterations: step,
        seed: cfg.seed,
        trace,
    })
}
