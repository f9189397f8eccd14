//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use advsal_core::attacks::{l0_support, pgd_attack, pixel_attack, verify_adversarial, AttackConfig, Outcome};
use advsal_core::attention::{grad_cam, GradCamOptions, MapOutput, Source};
use advsal_core::autodiff::{backward, backward_input_grad, backward_pass_count, forward};
use advsal_core::data::{gen_synthetic, SyntheticSpec};
use advsal_core::model::load_checkpoint;
use advsal_core::{BackpropMode, Conv2d, Dense, Layer, Network, Node, Objective, Tensor};
use common::*;

type Verdict = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * std * 0.866)
}

fn conv(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    let std = (2.0 / (k * k * cin) as f64).sqrt();
    Layer::Conv2d(Conv2d {
        weight: normal_tensor(&[cout, k, k, cin], std, rng),
        bias: normal_tensor(&[cout], 0.1, rng),
        stride,
        padding,
    })
}

fn dense(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    Layer::Dense(Dense {
        weight: normal_tensor(&[outputs, inputs], (2.0 / inputs as f64).sqrt(), rng),
        bias: normal_tensor(&[outputs], 0.1, rng),
    })
}

fn dense_from(outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Layer<f64> {
    let inputs = weight.len() / outputs;
    Layer::Dense(Dense {
        weight: Tensor::new(vec![outputs, inputs], weight).unwrap(),
        bias: Tensor::new(vec![outputs], bias).unwrap(),
    })
}

/// conv -> relu -> conv -> relu -> (maxpool | gap) -> dense -> softmax.
fn random_conv_net(seed: u64) -> (Network<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let h = r.random_range(4..7);
    let w = r.random_range(4..7);
    let c = r.random_range(1..3);
    let c1 = r.random_range(2..5);
    let c2 = r.random_range(2..5);
    let classes = r.random_range(2..5);
    let stride = r.random_range(1..3);
    let pad = r.random_range(0..2);
    let mut nodes = vec![
        Node::new(conv(c, c1, 3, stride, pad, &mut r), vec![0]),
        Node::new(Layer::Relu, vec![1]),
        Node::new(conv(c1, c2, 2, 1, 1, &mut r), vec![2]),
        Node::new(Layer::Relu, vec![3]),
    ];
    let probe = {
        let mut n = nodes.clone();
        n.push(Node::new(Layer::Softmax, vec![4]));
        Network::new(vec![h, w, c], n).unwrap()
    };
    let fshape = probe.value_shape(4).unwrap().to_vec();
    let flat = if r.random_bool(0.5) && fshape[0] >= 2 && fshape[1] >= 2 {
        nodes.push(Node::new(Layer::MaxPool { size: 2, stride: 1 }, vec![4]));
        (fshape[0] - 1) * (fshape[1] - 1) * fshape[2]
    } else {
        nodes.push(Node::new(Layer::GlobalAvgPool, vec![4]));
        fshape[2]
    };
    nodes.push(Node::new(dense(flat, classes, &mut r), vec![5]));
    nodes.push(Node::new(Layer::Softmax, vec![6]));
    let net = Network::new(vec![h, w, c], nodes).unwrap();
    let x = Tensor::from_fn(&[h, w, c], |_| r.random_range(0.0..1.0));
    (net, x)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn gradient_oracle() -> Verdict {
    let start = Instant::now();
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let nets = 32;
    for seed in 0..nets {
        let (net, x) = random_conv_net(seed);
        let rec = forward(&net, &x).unwrap();
        for label in 0..net.classes() {
            let g = backward_input_grad(&net, &rec, Objective::SoftLabel(label), BackpropMode::Standard).unwrap();
            let mut probe = x.clone();
            for i in 0..x.len() {
                let orig = x.data()[i];
                probe.data_mut()[i] = orig + eps;
                let up = forward(&net, &probe).unwrap().probabilities()[label];
                probe.data_mut()[i] = orig - eps;
                let down = forward(&net, &probe).unwrap().probabilities()[label];
                probe.data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let a = g.data()[i];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-12));
            }
        }
    }
    let took = start.elapsed();
    let detail = format!("{nets} nets, max relative error {worst:.2e}, {:.1}s", took.as_secs_f64());
    if worst <= 1e-5 && took < Duration::from_secs(60) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn backprop_modes() -> Verdict {
    let modes = [BackpropMode::Standard, BackpropMode::Deconv, BackpropMode::Guided];
    let mut checked = 0;
    // x -> identity -> relu -> [u; 0] -> softmax, differentiated from logit 0,
    // over every sign of pre-activation and upstream gradient.
    for &p in &[-1.0, 0.0, 1.0] {
        for &u in &[-1.0, 0.0, 1.0] {
            let net = Network::new(
                vec![1],
                vec![
                    Node::new(dense_from(1, vec![1.0], vec![0.0]), vec![0]),
                    Node::new(Layer::Relu, vec![1]),
                    Node::new(dense_from(2, vec![u, 0.0], vec![0.0, 0.0]), vec![2]),
                    Node::new(Layer::Softmax, vec![3]),
                ],
            )
            .unwrap();
            let x = Tensor::new(vec![1], vec![p]).unwrap();
            let rec = forward(&net, &x).unwrap();
            for mode in modes {
                let got = backward_input_grad(&net, &rec, Objective::Logit(0), mode).unwrap().data()[0];
                let want = match mode {
                    BackpropMode::Standard => if p > 0.0 { u } else { 0.0 },
                    BackpropMode::Deconv => if u < 0.0 { 0.0 } else { u },
                    BackpropMode::Guided => if p <= 0.0 || u < 0.0 { 0.0 } else { u },
                };
                if got != want {
                    return Err(format!("{mode:?} with pre-activation {p}, upstream {u}: got {got}, want {want}"));
                }
                checked += 1;
            }
            if p != 0.0 {
                let h = 1e-6;
                let f = |v: f64| forward(&net, &Tensor::new(vec![1], vec![v]).unwrap()).unwrap().logits(&net)[0];
                let fd = (f(p + h) - f(p - h)) / (2.0 * h);
                let got = backward_input_grad(&net, &rec, Objective::Logit(0), BackpropMode::Standard).unwrap().data()[0];
                if (fd - got).abs() > 1e-9 {
                    return Err(format!("standard gradient {got} vs difference quotient {fd}"));
                }
            }
        }
    }
    // The same rules at every relu unit of random conv nets.
    for seed in 0..20 {
        let (net, x) = random_conv_net(seed);
        let rec = forward(&net, &x).unwrap();
        for mode in modes {
            let g = backward(&net, &rec, Objective::SoftLabel(0), mode, false, true).unwrap();
            for relu in [2usize, 4] {
                let pre = rec.value(relu - 1).unwrap();
                let up = g.value(relu, pre.shape());
                let down = g.value(relu - 1, pre.shape());
                for ((&a, &u), &d) in pre.data().iter().zip(up.data()).zip(down.data()) {
                    let want = match mode {
                        BackpropMode::Standard => if a > 0.0 { u } else { 0.0 },
                        BackpropMode::Deconv => if u < 0.0 { 0.0 } else { u },
                        BackpropMode::Guided => if a <= 0.0 || u < 0.0 { 0.0 } else { u },
                    };
                    if d != want {
                        return Err(format!("net {seed}, {mode:?}, relu {relu}: got {d}, want {want}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} unit checks across 3 modes"))
}

fn closed_form_pgd() -> Verdict {
    let th = 0.05;
    let mut worst = 0.0f64;
    let mut r = rng(44);
    let mut cases = 0;
    while cases < 20 {
        let w: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let b = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let x = vec![r.random_range(0.2..0.8), r.random_range(0.2..0.8)];
        let dw = [w[0] - w[2], w[1] - w[3]];
        let margin = dw[0] * x[0] + dw[1] * x[1] + b[0] - b[1];
        let reach = th * (dw[0].abs() + dw[1].abs());
        if margin.abs() <= 1.5 * reach {
            continue;
        }
        let net = Network::new(
            vec![2],
            vec![Node::new(dense_from(2, w.clone(), b.clone()), vec![0]), Node::new(Layer::Softmax, vec![1])],
        )
        .unwrap();
        let img = Tensor::new(vec![2], x.clone()).unwrap();
        let res = pgd_attack(&net, &img, None, &AttackConfig::pgd(th).with_seed(cases)).unwrap();
        if res.outcome != Outcome::Failure {
            return Err(format!("case {cases}: budget should not flip the class"));
        }
        let c = res.original_class;
        let achieved = forward(&net, &res.adversarial).unwrap().objective_value(&net, Objective::CrossEntropy(c));
        // Worst case shrinks the winning margin by th * ||dw||_1.
        let m = margin.abs() - reach;
        let exact = (-m).exp().ln_1p();
        worst = worst.max((achieved - exact).abs() / exact);
        cases += 1;
    }
    let detail = format!("20 linear classifiers, max relative gap {worst:.2e}");
    if worst <= 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tiny_conv(seed: u64) -> Network<f64> {
    let mut r = rng(seed);
    Network::new(
        vec![4, 4, 1],
        vec![
            Node::new(conv(1, 3, 3, 1, 1, &mut r), vec![0]),
            Node::new(Layer::Relu, vec![1]),
            Node::new(dense(48, 3, &mut r), vec![2]),
            Node::new(Layer::Softmax, vec![3]),
        ],
    )
    .unwrap()
}

fn pixel_oracle() -> Verdict {
    let levels = [0.0, 0.5, 1.0];
    let before = backward_pass_count();
    let mut within = 0;
    let mut monotone = true;
    for seed in 0..10u64 {
        let net = tiny_conv(100 + seed);
        let mut r = rng(seed);
        let vals: Vec<f64> = (0..16).map(|_| levels[r.random_range(0..3)]).collect();
        let x = Tensor::new(vec![4, 4, 1], vals).unwrap();
        let c = forward(&net, &x).unwrap().predicted();
        let mut best = f64::INFINITY;
        for pos in 0..16 {
            for &v in &levels {
                let mut y = x.clone();
                y.data_mut()[pos] = v;
                best = best.min(forward(&net, &y).unwrap().probabilities()[c]);
            }
        }
        let mut cfg = AttackConfig::pixel(1).with_seed(seed);
        cfg.de.value_levels = Some(levels.len());
        cfg.de.early_stop = false;
        let res = pixel_attack(&net, &x, None, &cfg).unwrap();
        let found = forward(&net, &res.adversarial).unwrap().probabilities()[c];
        if found <= best * 1.05 {
            within += 1;
        }
        monotone &= res.trace.windows(2).all(|w| w[1] <= w[0]) && res.trace.len() == cfg.de.generations + 1;
    }
    let backward = backward_pass_count() - before;
    let detail = format!("{within}/10 seeds within 5% of exhaustive, monotone traces {monotone}, {backward} backward passes");
    if within >= 9 && monotone && backward == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradcam_is_cam() -> Verdict {
    let mut worst = 1.0f64;
    for seed in 0..6u64 {
        let mut r = rng(seed);
        let (h, w, ch, classes) = (6 + seed as usize % 3, 5 + seed as usize % 2, 5, 3);
        let net = Network::new(
            vec![h, w, 3],
            vec![
                Node::new(conv(3, ch, 3, 1, 1, &mut r), vec![0]),
                Node::new(Layer::GlobalAvgPool, vec![1]),
                Node::new(dense(ch, classes, &mut r), vec![2]),
                Node::new(Layer::Softmax, vec![3]),
            ],
        )
        .unwrap();
        let x = Tensor::from_fn(&[h, w, 3], |_| r.random_range(0.0..1.0));
        let acts = forward(&net, &x).unwrap().value(1).unwrap().clone();
        let Layer::Dense(head) = &net.nodes()[2].layer else { unreachable!() };
        let opts = GradCamOptions { layer: Some(1), relu: false, output: MapOutput::Logit };
        for label in 0..classes {
            let cam: Vec<f64> = acts
                .data()
                .chunks_exact(ch)
                .map(|px| px.iter().enumerate().map(|(k, a)| a * head.weight.data()[label * ch + k]).sum())
                .collect();
            let map = grad_cam(&net, &x, label, Source::Original, &opts).unwrap();
            worst = worst.min(pearson(map.native.data(), &cam));
        }
    }
    let detail = format!("min Pearson r {worst:.12}");
    if worst >= 1.0 - 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Trained checkpoint and one 100-image compare run per attack.
struct Pipeline {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    elapsed: Duration,
    accuracy: f64,
}

impl Pipeline {
    fn run(&self, name: &str) -> PathBuf {
        self.root.join("runs").join(name)
    }
}

const PGD_ARGS: &[&str] = &["--attack", "pgd", "--threshold", "0.1", "--iterations", "40"];
const PIXEL_ARGS: &[&str] = &["--attack", "pixel", "--pixels", "5"];

fn compare_args<'a>(attack: &'a [&'a str], name: &'a str, images: &'a str, workers: &'a str) -> Vec<&'a str> {
    let mut v = vec![
        "compare", "--checkpoint", "m.afck", "--data-seed", "1", "--images", images, "--kind", "both",
        "--run-name", name, "--out-root", "runs", "--workers", workers,
    ];
    v.extend_from_slice(attack);
    v
}

fn pipeline() -> Result<Pipeline, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path().to_path_buf();
    let start = Instant::now();
    advsal_ok(&root, &["train", "--checkpoint", "m.afck", "--workers", "0"]);
    advsal_ok(&root, &compare_args(PGD_ARGS, "pgd", "100", "0"));
    advsal_ok(&root, &compare_args(PIXEL_ARGS, "pixel", "100", "0"));
    let elapsed = start.elapsed();
    let ckpt = load_checkpoint::<f64>(&root.join("m.afck")).map_err(|e| e.to_string())?;
    Ok(Pipeline { _tmp: tmp, root, elapsed, accuracy: ckpt.meta.final_accuracy })
}

fn adversarial_definition(p: &Pipeline) -> Verdict {
    let net = load_checkpoint::<f64>(&p.root.join("m.afck")).unwrap().network;
    let data = gen_synthetic::<f64>(&SyntheticSpec { seed: 1, ..SyntheticSpec::default() }).unwrap();
    let mut checked = 0;
    for (name, base, budget_ok) in [
        ("pgd", AttackConfig::pgd(0.1), (|r: &Tensor<f64>| r.max_abs() <= 0.1 + 1e-12) as fn(&Tensor<f64>) -> bool),
        ("pixel", AttackConfig::pixel(5), |r: &Tensor<f64>| l0_support(r).len() <= 5),
    ] {
        let run = p.run(name);
        let m = manifest(&run);
        if m["attack"] != serde_json::to_value(base).unwrap() {
            return Err(format!("{name}: manifest attack config differs from the library default"));
        }
        let records = jsonl(&run);
        if records.len() != 100 || strings_of(&records, "verified").iter().any(|v| v != "true") {
            return Err(format!("{name}: {} records, not all verified", records.len()));
        }
        let fails: Vec<String> = (0..100usize)
            .into_par_iter()
            .filter_map(|i| {
                let (x, label) = data.image(i).unwrap();
                let cfg = base.with_seed(i as u64);
                let r = match name {
                    "pgd" => pgd_attack(&net, x, Some(label), &cfg),
                    _ => pixel_attack(&net, x, Some(label), &cfg),
                }
                .unwrap();
                let rec = &records[i];
                let in_range = r.adversarial.data().iter().all(|v| (0.0..=1.0).contains(v));
                let delta = r.adversarial.zip_map(x, |a, b| a - b).unwrap();
                let same = rec["adversarial_class"] == r.adversarial_class
                    && rec["outcome"] == serde_json::to_value(r.outcome).unwrap()
                    && rec["achieved_norm"].as_f64() == Some(r.achieved_norm);
                (!(verify_adversarial(&net, &r, &cfg).ok() && in_range && budget_ok(&delta) && same))
                    .then(|| format!("{name} image {i}"))
            })
            .collect();
        if !fails.is_empty() {
            return Err(format!("failed: {}", fails.join(", ")));
        }
        checked += 100;
    }
    Ok(format!("{checked}/{checked} results verified and bounded"))
}

fn strings_of(records: &[Value], key: &str) -> Vec<String> {
    records.iter().map(|r| r[key].to_string()).collect()
}

fn desk_scale(p: &Pipeline) -> Verdict {
    let rate = |name: &str| manifest(&p.run(name))["success_rate"].as_f64().unwrap_or(0.0);
    let (pgd, pixel) = (rate("pgd"), rate("pixel"));
    let held_out = {
        let c = &manifest(&p.run("pgd"))["counts"];
        1.0 - c["skipped"].as_f64().unwrap() / c["total"].as_f64().unwrap()
    };
    let detail = format!(
        "validation accuracy {:.3} (held-out {held_out:.3}), PGD success {pgd:.3}, pixel success {pixel:.3}, {:.0}s",
        p.accuracy,
        p.elapsed.as_secs_f64()
    );
    if p.accuracy >= 0.95 && pgd >= 0.9 && pixel >= 0.3 && p.elapsed < Duration::from_secs(1800) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const KINDS: [&str; 2] = ["sm", "gradcam"];
const BASES: [&str; 3] = ["predicted", "true", "adversarial"];
const METRICS: [&str; 6] = [
    "pearson_true",
    "pearson_cross",
    "topk_overlap_true",
    "centroid_shift",
    "peak_to_perturbation",
    "entropy_ratio",
];

fn metric_in_range(name: &str, v: f64) -> bool {
    v.is_finite()
        && match name {
            "pearson_true" | "pearson_cross" => (-1.0..=1.0).contains(&v),
            "topk_overlap_true" => (0.0..=1.0).contains(&v),
            _ => v >= 0.0,
        }
}

fn check_run(run: &Path, pixel: bool) -> Result<usize, String> {
    let m = manifest(run);
    let rows = report(run);
    let mut succeeded = 0;
    for e in entries(&m) {
        for key in ["images", "maps", "overlays"] {
            for f in strings(&e[key]) {
                if !run.join(&f).is_file() {
                    return Err(format!("missing {f}"));
                }
            }
        }
        if e["status"] != "succeeded" {
            continue;
        }
        succeeded += 1;
        let i = e["index"].as_u64().unwrap();
        let overlays = strings(&e["overlays"]);
        for k in KINDS {
            for b in BASES {
                for side in ["x", "xadv"] {
                    let want = format!("overlays/{i:05}_{k}_{b}_{side}.ppm");
                    if !overlays.contains(&want) {
                        return Err(format!("image {i}: no overlay {want}"));
                    }
                }
            }
        }
        if strings(&e["maps"]).len() != 4 * KINDS.len() || strings(&e["images"]).len() != 2 {
            return Err(format!("image {i}: incomplete map/image set"));
        }
        let row = &rows[e["report_row"].as_u64().ok_or(format!("image {i}: no report row"))? as usize];
        if row["image_id"] != i.to_string() {
            return Err(format!("image {i}: report row points elsewhere"));
        }
        for k in KINDS {
            for metric in METRICS {
                let cell = &row[&format!("{k}_{metric}")];
                if metric == "peak_to_perturbation" && !pixel {
                    if !cell.is_empty() {
                        return Err(format!("image {i}: peak distance on an L-inf attack"));
                    }
                    continue;
                }
                let v: f64 = cell.parse().map_err(|_| format!("image {i}: {k}_{metric} = {cell:?}"))?;
                if !metric_in_range(metric, v) {
                    return Err(format!("image {i}: {k}_{metric} = {v} out of range"));
                }
            }
        }
    }
    if rows.len() != succeeded {
        return Err(format!("{} report rows for {succeeded} successes", rows.len()));
    }
    Ok(succeeded)
}

fn methodology(p: &Pipeline) -> Verdict {
    let pgd = check_run(&p.run("pgd"), false)?;
    let pixel = check_run(&p.run("pixel"), true)?;
    if pgd < 3 || pixel < 3 {
        return Err(format!("{pgd} PGD and {pixel} pixel successes"));
    }
    for (attack, name) in [(PGD_ARGS, "pgd"), (PIXEL_ARGS, "pixel")] {
        let a = format!("{name}-rerun-a");
        let b = format!("{name}-rerun-b");
        advsal_ok(&p.root, &compare_args(attack, &a, "20", "1"));
        advsal_ok(&p.root, &compare_args(attack, &b, "20", "0"));
        let diffs = run_differences(&p.run(&a), &p.run(&b));
        if !diffs.is_empty() {
            return Err(format!("{name} rerun: {}", diffs.join("; ")));
        }
    }
    Ok(format!("full overlay and report sets for {pgd} PGD and {pixel} pixel successes, reruns byte-identical"))
}

fn directional(p: &Pipeline) -> Verdict {
    let finite_column = |name: &str, cols: &[&str]| -> Result<usize, String> {
        let rows = report(&p.run(name));
        for r in &rows {
            for c in cols {
                let v: f64 = r[*c].parse().map_err(|_| format!("{name} image {}: {c} missing", r["image_id"]))?;
                if !v.is_finite() {
                    return Err(format!("{name} image {}: {c} = {v}", r["image_id"]));
                }
            }
        }
        Ok(rows.len())
    };
    let n_pixel = finite_column("pixel", &["sm_peak_to_perturbation", "gradcam_peak_to_perturbation"])?;
    let n_pgd = finite_column("pgd", &["sm_entropy_ratio", "gradcam_entropy_ratio"])?;
    let median = |name: &str, field: &str| -> Result<Vec<String>, String> {
        let m = manifest(&p.run(name));
        m["summary"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| {
                s[field]
                    .as_f64()
                    .filter(|v| v.is_finite())
                    .map(|v| format!("{} {v:.3}", s["kind"].as_str().unwrap()))
                    .ok_or(format!("{name}: {field} not finite"))
            })
            .collect()
    };
    let peak = median("pixel", "median_peak_to_perturbation")?;
    let entropy = median("pgd", "median_entropy_ratio")?;
    Ok(format!(
        "median peak-to-perturbation [{}] over {n_pixel}, median entropy ratio [{}] over {n_pgd}",
        peak.join(", "),
        entropy.join(", ")
    ))
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, r: Verdict| {
        match &r {
            Ok(d) => println!("criterion {n} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {d}");
            }
        }
    };
    report(1, "gradient oracle", guarded(gradient_oracle));
    report(2, "backprop modes", guarded(backprop_modes));
    report(4, "closed-form PGD", guarded(closed_form_pgd));
    report(5, "pixel-attack oracle", guarded(pixel_oracle));
    report(6, "Grad-CAM equals CAM", guarded(gradcam_is_cam));
    match panic::catch_unwind(pipeline) {
        Ok(Ok(p)) => {
            report(3, "adversarial definition", guarded(|| adversarial_definition(&p)));
            report(7, "desk-scale pipeline", guarded(|| desk_scale(&p)));
            report(8, "methodology reconstruction", guarded(|| methodology(&p)));
            report(9, "directional sanity", guarded(|| directional(&p)));
        }
        other => {
            let why = match other {
                Ok(Err(e)) => e,
                _ => "pipeline panicked".into(),
            };
            for (n, name) in [(3, "adversarial definition"), (7, "desk-scale pipeline"), (8, "methodology reconstruction"), (9, "directional sanity")] {
                report(n, name, Err(why.clone()));
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
