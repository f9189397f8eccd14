use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{argmax, Tensor};

use super::{check_image, is_adversarial, AdversarialResult, AttackConfig, AttackKind, Classifier, DeParams, Norm, Outcome};

/// Gene bounds for one pixel tuple `(row, col, v_1..v_c)`.
fn gene_bounds(shape: &[usize], de: &DeParams) -> Vec<(f64, f64)> {
    let mut b = vec![(0.0, shape[0] as f64), (0.0, shape[1] as f64)];
    b.extend(std::iter::repeat_n(de.value_bounds, shape[2]));
    b
}

fn snap(v: f64, levels: Option<usize>) -> f64 {
    let v = v.clamp(0.0, 1.0);
    match levels {
        Some(l) => {
            let steps = (l - 1) as f64;
            (v * steps).round() / steps
        }
        None => v,
    }
}

/// Applies a candidate gene vector to `image`. Positions are the floor of
/// the clipped gene; channel values are clipped to `[0, 1]` and optionally
/// quantized. Later tuples win when two land on the same pixel.
pub fn decode_candidate<T: Scalar>(image: &Tensor<T>, genes: &[f64], levels: Option<usize>) -> Tensor<T> {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut out = image.clone();
    for tuple in genes.chunks_exact(2 + c) {
        let row = (tuple[0].max(0.0).floor() as usize).min(h - 1);
        let col = (tuple[1].max(0.0).floor() as usize).min(w - 1);
        for ch in 0..c {
            let at = out.hwc_offset(row, col, ch);
            out.data_mut()[at] = T::of(snap(tuple[2 + ch], levels));
        }
    }
    out
}

struct Scored {
    genes: Vec<f64>,
    /// Minimized internally: `g_C` untargeted, `-g_T` targeted.
    cost: f64,
    predicted: usize,
    confidence: f64,
}

/// Few-pixel attack: DE/rand/1/bin over `k` pixel tuples.
///
/// Uses only forward queries. The untargeted cost is the original class
/// confidence; targeted runs maximize the target confidence. Query count is
/// one baseline evaluation plus one per scored candidate.
pub fn pixel_attack<T: Scalar, M: Classifier<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    true_label: Option<usize>,
    cfg: &AttackConfig,
) -> Result<AdversarialResult<T>> {
    if cfg.norm != Norm::L0 {
        return Err(Error::InvalidConfig("pixel attack requires the L0 norm".into()));
    }
    cfg.validate(model.classes())?;
    let shape = model.input_shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!("pixel attack needs [h, w, c] inputs, got {shape:?}")));
    }
    check_image(&shape, image)?;

    let probs = model.probabilities(image)?;
    let c = argmax(&probs);
    if let Some(label) = true_label {
        if label >= model.classes() {
            return Err(Error::LabelOutOfRange { label, classes: model.classes() });
        }
        if label != c {
            return Ok(AdversarialResult::skipped(AttackKind::Pixel, image, &probs, label, cfg.seed, cfg.target));
        }
    }
    if cfg.target == Some(c) {
        return Err(Error::InvalidConfig(format!("target class {c} is already the prediction")));
    }

    let k = cfg.pixel_budget();
    let natural = |cost: f64| if cfg.targeted() { -cost } else { cost };
    let finish = |best: Option<&Scored>, outcome: Outcome, queries: usize, iterations: usize, trace: Vec<f64>| {
        let (adversarial, ac, conf) = match best {
            Some(s) => (decode_candidate(image, &s.genes, cfg.de.value_levels), s.predicted, s.confidence),
            None => (image.clone(), c, probs[c].as_f64()),
        };
        let perturbation = adversarial.zip_map(image, |a, b| a - b)?;
        let support = super::l0_support(&perturbation).len();
        Ok(AdversarialResult {
            attack: AttackKind::Pixel,
            original: image.clone(),
            adversarial,
            perturbation,
            outcome,
            true_label,
            target: cfg.target,
            original_class: c,
            original_confidence: probs[c].as_f64(),
            adversarial_class: ac,
            adversarial_confidence: conf,
            achieved_norm: support as f64,
            queries,
            iterations,
            seed: cfg.seed,
            trace,
        })
    };
    if k == 0 {
        return finish(None, Outcome::Failure, 1, 0, Vec::new());
    }

    let de = &cfg.de;
    let bounds: Vec<(f64, f64)> = gene_bounds(&shape, de).into_iter().cycle().take(k * (2 + shape[2])).collect();
    let dims = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut queries = 1;

    let mut score = |genes: Vec<f64>| -> Result<Scored> {
        let candidate = decode_candidate(image, &genes, de.value_levels);
        let p = model.probabilities(&candidate)?;
        queries += 1;
        let predicted = argmax(&p);
        let cost = match cfg.target {
            Some(t) => -p[t].as_f64(),
            None => p[c].as_f64(),
        };
        Ok(Scored {
            genes,
            cost,
            predicted,
            confidence: p[predicted].as_f64(),
        })
    };

    let mut population: Vec<Scored> = Vec::with_capacity(de.population);
    for _ in 0..de.population {
        let genes = bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect();
        let s = score(genes)?;
        let hit = de.early_stop && is_adversarial(c, cfg.target, s.predicted);
        population.push(s);
        if hit {
            let lowest = population.iter().map(|s| s.cost).fold(f64::INFINITY, f64::min);
            return finish(population.last(), Outcome::Success, queries, 0, vec![natural(lowest)]);
        }
    }

    let best_index = |pop: &[Scored]| {
        let mut b = 0;
        for (i, s) in pop.iter().enumerate() {
            if s.cost < pop[b].cost {
                b = i;
            }
        }
        b
    };
    let mut best = best_index(&population);
    let mut trace = vec![natural(population[best].cost)];
    let n = population.len();
    let mut generations = 0;
    let mut hit: Option<Scored> = None;

    'outer: for _ in 0..de.generations {
        generations += 1;
        for i in 0..n {
            let mut pick = || loop {
                let r = rng.random_range(0..n);
                if r != i {
                    break r;
                }
            };
            let a = pick();
            let b = loop {
                let r = pick();
                if r != a {
                    break r;
                }
            };
            let d = loop {
                let r = pick();
                if r != a && r != b {
                    break r;
                }
            };
            let forced = rng.random_range(0..dims);
            let trial: Vec<f64> = (0..dims)
                .map(|j| {
                    if j == forced || rng.random::<f64>() < de.crossover {
                        let (lo, hi) = bounds[j];
                        let m = population[a].genes[j]
                            + de.differential_weight * (population[b].genes[j] - population[d].genes[j]);
                        m.clamp(lo, hi)
                    } else {
                        population[i].genes[j]
                    }
                })
                .collect();
            let s = score(trial)?;
            let success = de.early_stop && is_adversarial(c, cfg.target, s.predicted);
            if success {
                if s.cost <= population[i].cost {
                    population[i] = Scored { genes: s.genes.clone(), ..s };
                    if population[i].cost < population[best].cost {
                        best = i;
                    }
                }
                trace.push(natural(population[best].cost));
                // The successful trial is returned even if it lost selection.
                hit = Some(Scored { genes: s.genes, ..s });
                break 'outer;
            }
            if s.cost <= population[i].cost {
                population[i] = s;
                if population[i].cost < population[best].cost {
                    best = i;
                }
            }
        }
        trace.push(natural(population[best].cost));
    }

    let winner = hit.as_ref().unwrap_or(&population[best]);
    let outcome = if is_adversarial(c, cfg.target, winner.predicted) {
        Outcome::Success
    } else {
        Outcome::Failure
    };
    finish(Some(winner), outcome, queries, generations, trace)
}
