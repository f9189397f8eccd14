//! Labeled image datasets: CIFAR-10 binary batches and a synthetic
//! shape-vs-texture generator.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CIFAR10_RECORD_BYTES: usize = 3073;
pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Cifar10,
    Synthetic,
}

/// Images in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    images: Vec<Tensor<T>>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    provenance: Provenance,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        images: Vec<Tensor<T>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        if let Some(first) = images.first() {
            let shape = first.shape().to_vec();
            for (i, img) in images.iter().enumerate() {
                if img.shape() != shape.as_slice() {
                    return Err(Error::InvalidDataset(format!(
                        "image {i} has shape {:?}, expected {shape:?}",
                        img.shape()
                    )));
                }
                if img.data().iter().any(|&v| v < T::zero() || v > T::one()) {
                    return Err(Error::InvalidDataset(format!("image {i} has pixels outside [0, 1]")));
                }
            }
        }
        Ok(Self {
            images,
            labels,
            class_names,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> Option<(&Tensor<T>, usize)> {
        self.images.get(i).map(|img| (img, self.labels[i]))
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    /// Keeps the first `n` samples.
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }

    /// Samples at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (img, l) = self
                .image(i)
                .ok_or_else(|| Error::InvalidArgument(format!("index {i} out of range for {} images", self.len())))?;
            images.push(img.clone());
            labels.push(l);
        }
        Ok(Self {
            images,
            labels,
            class_names: self.class_names.clone(),
            provenance: self.provenance,
        })
    }
}

/// Decodes CIFAR-10 binary records: one label byte followed by 1024 red,
/// 1024 green and 1024 blue bytes, each plane row-major 32x32.
pub fn parse_cifar10<T: Scalar>(bytes: &[u8]) -> Result<(Vec<Tensor<T>>, Vec<usize>)> {
    if bytes.len() % CIFAR10_RECORD_BYTES != 0 {
        return Err(Error::InvalidDataset(format!(
            "{} bytes is not a multiple of the {CIFAR10_RECORD_BYTES}-byte record size",
            bytes.len()
        )));
    }
    let scale = T::of(255.0);
    let mut images = Vec::with_capacity(bytes.len() / CIFAR10_RECORD_BYTES);
    let mut labels = Vec::with_capacity(images.capacity());
    for (r, rec) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::InvalidDataset(format!("record {r} has label byte {label}")));
        }
        let planes = &rec[1..];
        let mut data = Vec::with_capacity(3072);
        for px in 0..1024 {
            for ch in 0..3 {
                data.push(T::of(planes[ch * 1024 + px] as f64) / scale);
            }
        }
        images.push(Tensor::from_parts(vec![32, 32, 3], data));
        labels.push(label);
    }
    Ok((images, labels))
}

/// Loads one CIFAR-10 batch file, or every `*.bin` file in a directory in
/// file-name order.
pub fn load_cifar10<T: Scalar>(path: &Path) -> Result<LabeledDataset<T>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "bin"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::InvalidDataset(format!("no CIFAR-10 batch files in {}", path.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (i, l) = parse_cifar10(&fs::read(&f)?)?;
        images.extend(i);
        labels.extend(l);
    }
    LabeledDataset::new(
        images,
        labels,
        CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
        Provenance::Cifar10,
    )
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Square image side.
    pub size: usize,
    pub count: usize,
    pub seed: u64,
    pub channels: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            size: 16,
            count: 400,
            seed: 0,
            channels: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Square,
    Disk,
    Cross,
}

#[derive(Debug, Clone, Copy)]
enum Texture {
    Solid,
    Stripes,
    Checker,
    Columns,
}

const SHAPES: [Shape; 3] = [Shape::Square, Shape::Disk, Shape::Cross];
const TEXTURES: [Texture; 4] = [Texture::Solid, Texture::Stripes, Texture::Checker, Texture::Columns];

fn class_style(class: usize) -> (Shape, Texture) {
    match class {
        0 => (Shape::Square, Texture::Stripes),
        1 => (Shape::Disk, Texture::Columns),
        _ => (SHAPES[class % 3], TEXTURES[(class + class / 3) % 4]),
    }
}

fn inside(shape: Shape, dy: f64, dx: f64, r: f64) -> bool {
    match shape {
        Shape::Square => dy.abs() <= r && dx.abs() <= r,
        Shape::Disk => dy * dy + dx * dx <= r * r,
        Shape::Cross => (dy.abs() <= r && dx.abs() <= r / 3.0) || (dx.abs() <= r && dy.abs() <= r / 3.0),
    }
}

fn lit(texture: Texture, y: usize, x: usize) -> bool {
    match texture {
        Texture::Solid => true,
        Texture::Stripes => y % 2 == 0,
        Texture::Checker => (y + x) % 2 == 0,
        Texture::Columns => x % 2 == 0,
    }
}

/// Deterministic images of a textured shape on a noise background. Class
/// `k` fixes the (shape, texture) pair; position, size, tint and noise vary
/// per sample. Labels cycle through the classes.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<LabeledDataset<T>> {
    if spec.classes < 2 {
        return Err(Error::InvalidConfig("synthetic data needs at least 2 classes".into()));
    }
    if spec.size < 8 || (spec.channels != 1 && spec.channels != 3) {
        return Err(Error::InvalidConfig(format!(
            "synthetic images need size >= 8 and 1 or 3 channels, got {}x{}x{}",
            spec.size, spec.size, spec.channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.size;
    let c = spec.channels;
    let mut images = Vec::with_capacity(spec.count);
    let mut labels = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let class = i % spec.classes;
        let (shape, texture) = class_style(class);
        let r = rng.random_range(s as f64 * 0.2..s as f64 * 0.33);
        let margin = r.ceil() + 1.0;
        let far = (s as f64 - margin).max(margin);
        let cy = rng.random_range(margin..=far);
        let cx = rng.random_range(margin..=far);
        let brightness = rng.random_range(0.45..0.6);
        let tint: Vec<f64> = (0..c).map(|_| rng.random_range(0.8..1.0)).collect();
        let mut data = Vec::with_capacity(s * s * c);
        for y in 0..s {
            for x in 0..s {
                let on = inside(shape, y as f64 + 0.5 - cy, x as f64 + 0.5 - cx, r) && lit(texture, y, x);
                for t in &tint {
                    let noise: f64 = rng.random_range(0.15..0.35);
                    let v = if on { brightness * t } else { noise };
                    data.push(T::of(v));
                }
            }
        }
        images.push(Tensor::from_parts(vec![s, s, c], data));
        labels.push(class);
    }
    let names = (0..spec.classes)
        .map(|k| {
            let (shape, texture) = class_style(k);
            format!("{shape:?}-{texture:?}").to_lowercase()
        })
        .collect();
    LabeledDataset::new(images, labels, names, Provenance::Synthetic)
}
