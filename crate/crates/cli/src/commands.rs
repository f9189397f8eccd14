use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use advsal_core::analysis::{compare, report_csv_header, report_csv_row, ComparisonReport};
use advsal_core::attacks::{
    pgd_attack, pixel_attack, verify_adversarial, AdversarialResult, AttackConfig, AttackKind, Outcome,
};
use advsal_core::attention::{attention_map, write_map, AttentionMap, MapKind, MapOptions, MapQuadruple, Source};
use advsal_core::model::{build_mini_resnet, predict, save_checkpoint, train, write_metrics_log, TrainConfig, TrainingMeta};
use advsal_core::render::{render_image, render_overlay, write_image};
use advsal_core::{Network, Tensor};

use crate::args::{AttackArgs, AttackName, AttackOptions, Basis, CompareArgs, ExplainArgs, ExplainBasis, Selection, TrainArgs};
use crate::run::*;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn selection(sel: &Selection, len: usize) -> Result<Vec<usize>> {
    if sel.images > 0 && sel.offset >= len {
        bail!("offset {} is past the end of a {len}-image dataset", sel.offset);
    }
    Ok((sel.offset..len.min(sel.offset + sel.images)).collect())
}

pub fn attack_config(a: &AttackOptions) -> AttackConfig {
    let mut cfg = match a.attack {
        AttackName::Pgd => {
            let mut c = AttackConfig::pgd(a.threshold);
            c.pgd.iterations = a.iterations;
            if let Some(s) = a.step {
                c.pgd.step_size = s;
            }
            c.pgd.random_start = !a.no_random_start;
            c.pgd.loss = a.loss.into();
            c
        }
        AttackName::Pixel => {
            let mut c = AttackConfig::pixel(a.pixels);
            c.de.population = a.population;
            c.de.generations = a.generations;
            c.de.differential_weight = a.weight;
            c.de.crossover = a.crossover;
            c
        }
    };
    cfg.target = a.target;
    cfg.seed = a.seed;
    cfg
}

fn run_attack(net: &Network<f64>, x: &Tensor<f64>, label: usize, cfg: &AttackConfig) -> advsal_core::Result<AdversarialResult<f64>> {
    match cfg.norm {
        advsal_core::attacks::Norm::LInf => pgd_attack(net, x, Some(label), cfg),
        advsal_core::attacks::Norm::L0 => pixel_attack(net, x, Some(label), cfg),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<bool> {
    let (data, _) = load_dataset(&a.data)?;
    let shape = data
        .image_shape()
        .context("training needs at least one image")?
        .to_vec();
    let net = build_mini_resnet::<f64>([shape[0], shape[1], shape[2]], data.classes(), a.blocks, a.width, a.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        seed: a.seed,
        validation_fraction: a.val_fraction,
    };
    let (net, history) = pool(a.common.workers)?.install(|| train(net, &data, &cfg))?;
    for m in &history {
        let val = m.validation_accuracy.map_or("NA".to_string(), |v| format!("{v:.4}"));
        eprintln!("epoch {:>3}  loss {:.4}  train {:.4}  val {val}", m.epoch, m.loss, m.train_accuracy);
    }
    let last = history.last().expect("at least one epoch");
    let meta = TrainingMeta {
        seed: a.seed,
        final_accuracy: last.validation_accuracy.unwrap_or(last.train_accuracy),
    };
    if let Some(parent) = a.checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let crc = save_checkpoint(&net, &meta, &a.checkpoint)?;
    let log = a.log.clone().unwrap_or_else(|| {
        let mut s = a.checkpoint.clone().into_os_string();
        s.push(".log.tsv");
        s.into()
    });
    write_metrics_log(&history, BufWriter::new(File::create(&log)?))?;
    println!(
        "checkpoint {} (crc {crc:08x}), final accuracy {:.4}, log {}",
        a.checkpoint.display(),
        meta.final_accuracy,
        log.display()
    );
    Ok(true)
}

#[derive(Serialize)]
struct AttackRecord<'a> {
    index: usize,
    seed: u64,
    attack: &'static str,
    outcome: Outcome,
    verified: bool,
    true_label: Option<usize>,
    target: Option<usize>,
    original_class: usize,
    original_confidence: f64,
    adversarial_class: usize,
    adversarial_confidence: f64,
    achieved_norm: f64,
    queries: usize,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbed_pixels: Option<Vec<(usize, usize)>>,
    original_image: &'a str,
    adversarial_image: &'a str,
    trace: &'a [f64],
}

fn record_line(index: usize, r: &AdversarialResult<f64>, verified: bool, x_path: &str, adv_path: &str) -> Result<String> {
    let rec = AttackRecord {
        index,
        seed: r.seed,
        attack: r.attack.name(),
        outcome: r.outcome,
        verified,
        true_label: r.true_label,
        target: r.target,
        original_class: r.original_class,
        original_confidence: r.original_confidence,
        adversarial_class: r.adversarial_class,
        adversarial_confidence: r.adversarial_confidence,
        achieved_norm: r.achieved_norm,
        queries: r.queries,
        iterations: r.iterations,
        perturbed_pixels: (r.attack == AttackKind::Pixel).then(|| r.perturbed_pixels()),
        original_image: x_path,
        adversarial_image: adv_path,
        trace: &r.trace,
    };
    Ok(serde_json::to_string(&rec)?)
}

fn status_of(r: &AdversarialResult<f64>) -> Status {
    match r.outcome {
        Outcome::Success => Status::Succeeded,
        Outcome::Failure => Status::Failed,
        Outcome::Skipped => Status::Skipped,
    }
}

fn save_ppm(dir: &Path, rel: String, img: &Tensor<f64>) -> Result<String> {
    write_image(&render_image(img)?, &dir.join(&rel))?;
    Ok(rel)
}

/// Attack outcome for one image, before anything is written.
struct Attacked {
    index: usize,
    seed: u64,
    label: usize,
    result: std::result::Result<(AdversarialResult<f64>, bool), String>,
}

fn attack_all(
    net: &Network<f64>,
    data: &advsal_core::data::LabeledDataset<f64>,
    indices: &[usize],
    base: &AttackConfig,
    workers: usize,
) -> Result<Vec<Attacked>> {
    base.validate(net.classes())?;
    Ok(pool(workers)?.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let (x, label) = data.image(i).expect("selected index");
                let seed = image_seed(base.seed, i);
                let cfg = base.with_seed(seed);
                let result = run_attack(net, x, label, &cfg)
                    .map(|r| {
                        let ok = verify_adversarial(net, &r, &cfg).ok();
                        (r, ok)
                    })
                    .map_err(|e| e.to_string());
                Attacked { index: i, seed, label, result }
            })
            .collect()
    }))
}

fn finish_summary(entries: &[ImageEntry]) -> (Counts, Option<f64>) {
    let counts = Counts::tally(entries);
    let rate = counts.success_rate();
    (counts, rate)
}

fn print_counts(dir: &Path, counts: &Counts, rate: Option<f64>) {
    let rate = rate.map_or("NA".to_string(), |r| format!("{:.3}", r));
    println!(
        "{}: {} images, {} succeeded, {} failed, {} skipped, {} errors, success rate {rate}",
        dir.display(),
        counts.total,
        counts.succeeded,
        counts.failed,
        counts.skipped,
        counts.errors
    );
}

pub fn cmd_attack(a: &AttackArgs) -> Result<bool> {
    let started = unix_now();
    let (data, dref) = load_dataset(&a.data)?;
    let (net, cref) = load_model(&a.checkpoint, &data)?;
    let indices = selection(&a.select, data.len())?;
    let base = attack_config(&a.attack);
    let attacked = attack_all(&net, &data, &indices, &base, a.common.workers)?;

    let dir = create_run_dir(&a.output, started)?;
    let mut jsonl = BufWriter::new(File::create(dir.join("attacks.jsonl"))?);
    let mut entries = Vec::with_capacity(attacked.len());
    for at in &attacked {
        let mut e = ImageEntry::new(at.index, at.seed, at.label, Status::Error);
        match &at.result {
            Err(msg) => e.error = Some(msg.clone()),
            Ok((r, verified)) => {
                let xp = save_ppm(&dir, format!("images/{:05}_x.ppm", at.index), &r.original)?;
                let ap = save_ppm(&dir, format!("images/{:05}_xadv.ppm", at.index), &r.adversarial)?;
                writeln!(jsonl, "{}", record_line(at.index, r, *verified, &xp, &ap)?)?;
                e.original_class = Some(r.original_class);
                e.adversarial_class = Some(r.adversarial_class);
                e.images = vec![xp, ap];
                if *verified {
                    e.status = status_of(r);
                } else {
                    e.error = Some("result failed verification".into());
                }
            }
        }
        entries.push(e);
    }
    jsonl.flush()?;
    let (counts, success_rate) = finish_summary(&entries);
    let ok = counts.errors == 0;
    print_counts(&dir, &counts, success_rate);
    write_manifest(
        &dir,
        &Manifest {
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            command: "attack".into(),
            started_at: started,
            finished_at: unix_now(),
            checkpoint: cref,
            dataset: dref,
            attack: Some(base),
            base_seed: base.seed,
            seed_rule: SEED_RULE.into(),
            maps: None,
            selection: indices,
            counts,
            success_rate,
            summary: Vec::new(),
            report: None,
            attack_records: Some("attacks.jsonl".into()),
            images: entries,
        },
    )?;
    Ok(ok)
}

fn map_settings(kinds: &[MapKind], basis: &str, opts: &MapOptions, alpha: f64, topk: Option<f64>) -> MapSettings {
    MapSettings {
        kinds: kinds.iter().map(|k| k.short_name().to_string()).collect(),
        basis: basis.into(),
        options: *opts,
        alpha,
        topk_fraction: topk,
    }
}

fn save_map(dir: &Path, rel: String, map: &AttentionMap) -> Result<String> {
    write_map(map, &dir.join(&rel))?;
    Ok(rel)
}

fn save_overlay(dir: &Path, rel: String, img: &Tensor<f64>, map: &AttentionMap, alpha: f64) -> Result<String> {
    write_image(&render_overlay(img, map, alpha)?, &dir.join(&rel))?;
    Ok(rel)
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<bool> {
    let started = unix_now();
    if !(0.0..=1.0).contains(&a.maps.alpha) {
        bail!("alpha must lie in [0, 1], got {}", a.maps.alpha);
    }
    let (data, dref) = load_dataset(&a.data)?;
    let (net, cref) = load_model(&a.checkpoint, &data)?;
    let indices = selection(&a.select, data.len())?;
    let kinds = a.maps.kind.kinds();
    let opts = a.maps.options();
    let basis = match a.basis {
        ExplainBasis::Predicted => "predicted",
        ExplainBasis::True => "true",
    };

    type Computed = (usize, usize, usize, std::result::Result<Vec<AttentionMap>, String>);
    let computed: Vec<Computed> = pool(a.common.workers)?.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let (x, label) = data.image(i).expect("selected index");
                let run = || -> advsal_core::Result<(usize, Vec<AttentionMap>)> {
                    let (c, _) = predict(&net, x)?;
                    let class = if a.basis == ExplainBasis::True { label } else { c };
                    let maps = kinds
                        .iter()
                        .map(|&k| attention_map(&net, x, class, Source::Original, k, &opts).map(|m| m.normalized()))
                        .collect::<advsal_core::Result<Vec<_>>>()?;
                    Ok((c, maps))
                };
                match run() {
                    Ok((c, maps)) => (i, label, c, Ok(maps)),
                    Err(e) => (i, label, usize::MAX, Err(e.to_string())),
                }
            })
            .collect()
    });

    let dir = create_run_dir(&a.output, started)?;
    let mut entries = Vec::new();
    for (i, label, c, res) in computed {
        let x = data.image(i).expect("selected index").0;
        let mut e = ImageEntry::new(i, 0, label, Status::Explained);
        match res {
            Err(msg) => {
                e.status = Status::Error;
                e.error = Some(msg);
            }
            Ok(maps) => {
                e.original_class = Some(c);
                e.images.push(save_ppm(&dir, format!("images/{i:05}_x.ppm"), x)?);
                for m in &maps {
                    let k = m.kind.short_name();
                    e.maps.push(save_map(&dir, format!("maps/{i:05}_{k}_x_c{}.afmp", m.class), m)?);
                    e.overlays
                        .push(save_overlay(&dir, format!("overlays/{i:05}_{k}_{basis}_x.ppm"), x, m, a.maps.alpha)?);
                }
            }
        }
        entries.push(e);
    }
    let counts = Counts::tally(&entries);
    let ok = counts.errors == 0;
    println!("{}: maps for {} images, {} errors", dir.display(), counts.total, counts.errors);
    write_manifest(
        &dir,
        &Manifest {
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            command: "explain".into(),
            started_at: started,
            finished_at: unix_now(),
            checkpoint: cref,
            dataset: dref,
            attack: None,
            base_seed: 0,
            seed_rule: SEED_RULE.into(),
            maps: Some(map_settings(&kinds, basis, &opts, a.maps.alpha, None)),
            selection: indices,
            counts,
            success_rate: None,
            summary: Vec::new(),
            report: None,
            attack_records: None,
            images: entries,
        },
    )?;
    Ok(ok)
}

/// `(basis name, map of x, map of x̂)` pairs to render for one quadruple.
fn overlay_pairs(q: &MapQuadruple, basis: Basis) -> Vec<(&'static str, &AttentionMap, &AttentionMap)> {
    let predicted = ("predicted", &q.original_true, &q.adversarial_adversarial);
    let truth = ("true", &q.original_true, &q.adversarial_true);
    let adversarial = ("adversarial", &q.original_adversarial, &q.adversarial_adversarial);
    match basis {
        Basis::Predicted => vec![predicted],
        Basis::True => vec![truth],
        Basis::Adversarial => vec![adversarial],
        Basis::All => vec![predicted, truth, adversarial],
    }
}

fn basis_name(b: Basis) -> &'static str {
    match b {
        Basis::Predicted => "predicted",
        Basis::True => "true",
        Basis::Adversarial => "adversarial",
        Basis::All => "all",
    }
}

pub fn cmd_compare(a: &CompareArgs) -> Result<bool> {
    let started = unix_now();
    if !(0.0..=1.0).contains(&a.maps.alpha) {
        bail!("alpha must lie in [0, 1], got {}", a.maps.alpha);
    }
    let (data, dref) = load_dataset(&a.data)?;
    let (net, cref) = load_model(&a.checkpoint, &data)?;
    let indices = selection(&a.select, data.len())?;
    let base = attack_config(&a.attack);
    let kinds = a.maps.kind.kinds();
    let opts = a.maps.options();

    let attacked = attack_all(&net, &data, &indices, &base, a.common.workers)?;
    type Compared = Option<std::result::Result<(ComparisonReport, Vec<MapQuadruple>), String>>;
    let compared: Vec<Compared> = pool(a.common.workers)?.install(|| {
        attacked
            .par_iter()
            .map(|at| match &at.result {
                Ok((r, true)) if r.success() => {
                    let cfg = base.with_seed(at.seed);
                    Some(compare(&net, at.index, r, &cfg, &kinds, &opts, a.topk).map_err(|e| e.to_string()))
                }
                _ => None,
            })
            .collect()
    });

    let dir = create_run_dir(&a.output, started)?;
    let mut jsonl = BufWriter::new(File::create(dir.join("attacks.jsonl"))?);
    let mut csv = report_csv_header();
    csv.push('\n');
    let mut entries = Vec::with_capacity(attacked.len());
    let mut reports = Vec::new();
    for (at, cmp) in attacked.iter().zip(compared) {
        let mut e = ImageEntry::new(at.index, at.seed, at.label, Status::Error);
        let (r, verified) = match &at.result {
            Err(msg) => {
                e.error = Some(msg.clone());
                entries.push(e);
                continue;
            }
            Ok(v) => v,
        };
        let i = at.index;
        let xp = save_ppm(&dir, format!("images/{i:05}_x.ppm"), &r.original)?;
        let ap = save_ppm(&dir, format!("images/{i:05}_xadv.ppm"), &r.adversarial)?;
        writeln!(jsonl, "{}", record_line(i, r, *verified, &xp, &ap)?)?;
        e.original_class = Some(r.original_class);
        e.adversarial_class = Some(r.adversarial_class);
        e.images = vec![xp, ap];
        if !verified {
            e.error = Some("result failed verification".into());
            entries.push(e);
            continue;
        }
        match cmp {
            None => e.status = status_of(r),
            Some(Err(msg)) => e.error = Some(msg),
            Some(Ok((report, quads))) => {
                for q in &quads {
                    let k = q.original_true.kind.short_name();
                    let (c, ac) = (q.class, q.adversarial_class);
                    for (m, tag) in [
                        (&q.original_true, format!("x_c{c}")),
                        (&q.original_adversarial, format!("x_c{ac}")),
                        (&q.adversarial_true, format!("xadv_c{c}")),
                        (&q.adversarial_adversarial, format!("xadv_c{ac}")),
                    ] {
                        e.maps.push(save_map(&dir, format!("maps/{i:05}_{k}_{tag}.afmp"), m)?);
                    }
                    for (name, mx, madv) in overlay_pairs(q, a.basis) {
                        e.overlays.push(save_overlay(
                            &dir,
                            format!("overlays/{i:05}_{k}_{name}_x.ppm"),
                            &r.original,
                            mx,
                            a.maps.alpha,
                        )?);
                        e.overlays.push(save_overlay(
                            &dir,
                            format!("overlays/{i:05}_{k}_{name}_xadv.ppm"),
                            &r.adversarial,
                            madv,
                            a.maps.alpha,
                        )?);
                    }
                }
                e.status = Status::Succeeded;
                e.report_row = Some(reports.len());
                writeln!(csv, "{}", report_csv_row(&report)).expect("write to string");
                reports.push(report);
            }
        }
        entries.push(e);
    }
    jsonl.flush()?;
    fs::write(dir.join("report.csv"), &csv)?;

    let summary = kinds
        .iter()
        .map(|&k| {
            let ms: Vec<_> = reports.iter().filter_map(|r| r.metrics_for(k)).collect();
            KindSummary {
                kind: k.short_name().into(),
                median_entropy_ratio: median(ms.iter().map(|m| m.entropy_ratio).collect()),
                median_peak_to_perturbation: median(ms.iter().filter_map(|m| m.peak_to_perturbation).collect()),
                median_pearson_true: median(ms.iter().map(|m| m.pearson_true).collect()),
            }
        })
        .collect::<Vec<_>>();
    let (counts, success_rate) = finish_summary(&entries);
    let ok = counts.errors == 0;
    print_counts(&dir, &counts, success_rate);
    for s in &summary {
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
        println!(
            "  {}: median entropy ratio {}, median peak-to-perturbation {}, median pearson (true class) {}",
            s.kind,
            f(s.median_entropy_ratio),
            f(s.median_peak_to_perturbation),
            f(s.median_pearson_true)
        );
    }
    write_manifest(
        &dir,
        &Manifest {
            toolkit_version: env!("CARGO_PKG_VERSION").into(),
            command: "compare".into(),
            started_at: started,
            finished_at: unix_now(),
            checkpoint: cref,
            dataset: dref,
            attack: Some(base),
            base_seed: base.seed,
            seed_rule: SEED_RULE.into(),
            maps: Some(map_settings(&kinds, basis_name(a.basis), &opts, a.maps.alpha, Some(a.topk))),
            selection: indices,
            counts,
            success_rate,
            summary,
            report: Some("report.csv".into()),
            attack_records: Some("attacks.jsonl".into()),
            images: entries,
        },
    )?;
    Ok(ok)
}
