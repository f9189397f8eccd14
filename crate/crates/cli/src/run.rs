use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use advsal_core::attacks::AttackConfig;
use advsal_core::attention::MapOptions;
use advsal_core::data::{gen_synthetic, load_cifar10, LabeledDataset, Provenance, SyntheticSpec};
use advsal_core::model::load_checkpoint;
use advsal_core::Network;

use crate::args::{DataArgs, OutputArgs};

pub const SEED_RULE: &str = "image seed = base seed XOR dataset index";

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn image_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetRef {
    pub source: String,
    pub provenance: Provenance,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub image_shape: Vec<usize>,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

pub fn load_dataset(a: &DataArgs) -> Result<(LabeledDataset<f64>, DatasetRef)> {
    let (data, synthetic) = if a.data == "synthetic" {
        let spec = SyntheticSpec {
            classes: a.classes,
            size: a.size,
            count: a.count,
            seed: a.data_seed,
            channels: a.channels,
        };
        (gen_synthetic(&spec)?, Some(spec))
    } else {
        let path = Path::new(&a.data);
        let d = load_cifar10(path).with_context(|| format!("loading CIFAR-10 data from {}", path.display()))?;
        (d, None)
    };
    let data = match a.limit {
        Some(n) => data.truncate(n),
        None => data,
    };
    let r = DatasetRef {
        source: a.data.clone(),
        provenance: data.provenance(),
        classes: data.classes(),
        class_names: data.class_names().to_vec(),
        image_shape: data.image_shape().map(<[usize]>::to_vec).unwrap_or_default(),
        samples: data.len(),
        synthetic,
    };
    Ok((data, r))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointRef {
    pub path: String,
    pub checksum: String,
    pub seed: u64,
    pub final_accuracy: f64,
}

pub fn load_model(path: &Path, data: &LabeledDataset<f64>) -> Result<(Network<f64>, CheckpointRef)> {
    let ck = load_checkpoint::<f64>(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(shape) = data.image_shape() {
        if shape != ck.network.input_shape() {
            bail!(
                "dataset images are {:?} but the checkpoint expects {:?}",
                shape,
                ck.network.input_shape()
            );
        }
    }
    if data.classes() > ck.network.classes() {
        bail!("dataset has {} classes but the checkpoint only {}", data.classes(), ck.network.classes());
    }
    let r = CheckpointRef {
        path: path.display().to_string(),
        checksum: format!("{:08x}", ck.checksum),
        seed: ck.meta.seed,
        final_accuracy: ck.meta.final_accuracy,
    };
    Ok((ck.network, r))
}

/// Creates `root/<name>` with the standard subdirectories.
pub fn create_run_dir(out: &OutputArgs, started: u64) -> Result<PathBuf> {
    let base = out.run_name.clone().unwrap_or_else(|| started.to_string());
    let mut dir = out.out_root.join(&base);
    if out.run_name.is_some() {
        if dir.exists() {
            bail!("run directory {} already exists", dir.display());
        }
    } else {
        let mut n = 1;
        while dir.exists() {
            dir = out.out_root.join(format!("{base}-{n}"));
            n += 1;
        }
    }
    for sub in ["images", "maps", "overlays"] {
        fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Succeeded,
    Failed,
    Skipped,
    /// The pipeline itself failed on this image.
    Error,
    /// Maps computed without an attack.
    Explained,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageEntry {
    pub index: usize,
    pub seed: u64,
    pub status: Status,
    pub true_label: usize,
    pub original_class: Option<usize>,
    pub adversarial_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report_row: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub images: Vec<String>,
    pub maps: Vec<String>,
    pub overlays: Vec<String>,
}

impl ImageEntry {
    pub fn new(index: usize, seed: u64, true_label: usize, status: Status) -> Self {
        Self {
            index,
            seed,
            status,
            true_label,
            original_class: None,
            adversarial_class: None,
            report_row: None,
            error: None,
            images: Vec::new(),
            maps: Vec::new(),
            overlays: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Counts {
    pub total: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub skipped: usize,
    pub errors: usize,
}

impl Counts {
    pub fn tally(entries: &[ImageEntry]) -> Self {
        let mut c = Counts { total: entries.len(), ..Counts::default() };
        for e in entries {
            match e.status {
                Status::Succeeded => c.succeeded += 1,
                Status::Failed => c.failed += 1,
                Status::Skipped => c.skipped += 1,
                Status::Error => c.errors += 1,
                Status::Explained => {}
            }
        }
        c
    }

    /// Successes over attacked images (skipped ones excluded).
    pub fn success_rate(&self) -> Option<f64> {
        let attacked = self.succeeded + self.failed;
        (attacked > 0).then(|| self.succeeded as f64 / attacked as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KindSummary {
    pub kind: String,
    pub median_entropy_ratio: Option<f64>,
    pub median_peak_to_perturbation: Option<f64>,
    pub median_pearson_true: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub command: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub checkpoint: CheckpointRef,
    pub dataset: DatasetRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    pub base_seed: u64,
    pub seed_rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maps: Option<MapSettings>,
    pub selection: Vec<usize>,
    pub counts: Counts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub summary: Vec<KindSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_records: Option<String>,
    pub images: Vec<ImageEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapSettings {
    pub kinds: Vec<String>,
    pub basis: String,
    pub options: MapOptions,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topk_fraction: Option<f64>,
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}
