//! Distortion metrics between original and adversarial attention maps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attacks::{verify_adversarial, AdversarialResult, AttackConfig};
use crate::attention::{map_quadruple, Grid, MapKind, MapOptions, MapQuadruple};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;

pub const DEFAULT_TOPK_FRACTION: f64 = 0.10;
/// Denominator floor for the entropy ratio when the original map is a single spike.
const ENTROPY_FLOOR: f64 = 1e-12;

fn same_dims(a: &Grid, b: &Grid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.rows(), a.cols()],
            actual: vec![b.rows(), b.cols()],
        });
    }
    Ok(())
}

/// Pearson correlation of the flattened grids; `0` if either is constant.
pub fn pearson(a: &Grid, b: &Grid) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Indices of the `count` largest values; ties keep row-major order.
fn top_set(g: &Grid, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.data().len()).collect();
    idx.sort_by(|&i, &j| g.data()[j].total_cmp(&g.data()[i]).then(i.cmp(&j)));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

/// Shared fraction of the `ceil(fraction * cells)` highest cells.
pub fn topk_overlap(a: &Grid, b: &Grid, fraction: f64) -> Result<f64> {
    same_dims(a, b)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("top-k fraction must lie in (0, 1], got {fraction}")));
    }
    let cells = a.data().len();
    let count = ((fraction * cells as f64).ceil() as usize).clamp(1, cells);
    let ta = top_set(a, count);
    let tb = top_set(b, count);
    let shared = ta.iter().filter(|i| tb.binary_search(i).is_ok()).count();
    Ok(shared as f64 / count as f64)
}

/// Mass-weighted mean `(row, col)`.
pub fn centroid(g: &Grid) -> Result<(f64, f64)> {
    let (mut m, mut r, mut c) = (0.0, 0.0, 0.0);
    for row in 0..g.rows() {
        for col in 0..g.cols() {
            let v = g.get(row, col);
            if v < 0.0 {
                return Err(Error::InvalidArgument("centroid needs a non-negative grid".into()));
            }
            m += v;
            r += v * row as f64;
            c += v * col as f64;
        }
    }
    if !(m > 0.0) {
        return Err(Error::InvalidArgument("centroid of a zero-mass grid".into()));
    }
    Ok((r / m, c / m))
}

/// Euclidean distance between the two attention centroids, in cells.
pub fn centroid_shift(a: &Grid, b: &Grid) -> Result<f64> {
    same_dims(a, b)?;
    let (ra, ca) = centroid(a)?;
    let (rb, cb) = centroid(b)?;
    Ok(((ra - rb).powi(2) + (ca - cb).powi(2)).sqrt())
}

/// Distance from the grid's peak to the nearest support pixel.
pub fn peak_to_perturbation(g: &Grid, support: &[(usize, usize)]) -> Result<f64> {
    let (r, c) = g.argmax();
    nearest(r as f64, c as f64, support)
}

fn nearest(r: f64, c: f64, support: &[(usize, usize)]) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("perturbation support is empty".into()));
    }
    Ok(support
        .iter()
        .map(|&(sr, sc)| ((sr as f64 - r).powi(2) + (sc as f64 - c).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min))
}

/// Peak-to-perturbation for a grid coarser than the image: the peak cell
/// is mapped to image coordinates with corner alignment.
fn peak_to_perturbation_scaled(g: &Grid, image: (usize, usize), support: &[(usize, usize)]) -> Result<f64> {
    if g.dims() == image {
        return peak_to_perturbation(g, support);
    }
    let (r, c) = g.argmax();
    let scale = |i: usize, src: usize, dst: usize| {
        if src <= 1 {
            (dst as f64 - 1.0) / 2.0
        } else {
            i as f64 * (dst - 1) as f64 / (src - 1) as f64
        }
    };
    nearest(scale(r, g.rows(), image.0), scale(c, g.cols(), image.1), support)
}

/// Shannon entropy (nats) of the L1-normalized grid; a zero-mass grid
/// counts as uniform.
pub fn entropy(g: &Grid) -> f64 {
    let mass: f64 = g.data().iter().map(|v| v.max(0.0)).sum();
    if !(mass > 0.0) {
        return (g.data().len() as f64).ln();
    }
    g.data()
        .iter()
        .map(|v| v.max(0.0) / mass)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

fn nonzero_or_uniform(g: &Grid) -> Grid {
    if g.data().iter().any(|&v| v > 0.0) {
        g.clone()
    } else {
        Grid::filled(g.rows(), g.cols(), 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub kind: MapKind,
    /// `r(M(x, C), M(x̂, C))`
    pub pearson_true: f64,
    /// `r(M(x, C), M(x̂, Ĉ))`
    pub pearson_cross: f64,
    /// Top-k overlap of `M(x, C)` and `M(x̂, C)`.
    pub topk_overlap_true: f64,
    /// Centroid distance between `M(x, C)` and `M(x̂, Ĉ)`.
    pub centroid_shift: f64,
    /// Pixel attack only: peak of `M(x̂, Ĉ)` to nearest perturbed pixel.
    pub peak_to_perturbation: Option<f64>,
    /// `H(M(x̂, Ĉ)) / H(M(x, C))`
    pub entropy_ratio: f64,
}

impl KindMetrics {
    pub fn in_range(&self) -> bool {
        let unit = |v: f64| (-1.0..=1.0).contains(&v);
        unit(self.pearson_true)
            && unit(self.pearson_cross)
            && (0.0..=1.0).contains(&self.topk_overlap_true)
            && self.centroid_shift >= 0.0
            && self.centroid_shift.is_finite()
            && self.peak_to_perturbation.is_none_or(|v| v >= 0.0 && v.is_finite())
            && self.entropy_ratio >= 0.0
            && self.entropy_ratio.is_finite()
    }
}

/// Metrics over one finalized quadruple. Grad-CAM metrics use the native
/// feature-resolution grids.
pub fn quadruple_metrics(q: &MapQuadruple, support: Option<&[(usize, usize)]>, topk_fraction: f64) -> Result<KindMetrics> {
    let kind = q.original_true.kind;
    let pick = |m: &crate::attention::AttentionMap| match kind {
        MapKind::Saliency => m.grid.clone(),
        MapKind::GradCam => m.native.normalized().0,
    };
    let ot = pick(&q.original_true);
    let at = pick(&q.adversarial_true);
    let aa = pick(&q.adversarial_adversarial);
    let image = q.adversarial_adversarial.grid.dims();
    let peak = match support {
        Some(s) if !s.is_empty() => Some(peak_to_perturbation_scaled(&aa, image, s)?),
        _ => None,
    };
    let h_orig = entropy(&ot);
    Ok(KindMetrics {
        kind,
        pearson_true: pearson(&ot, &at)?,
        pearson_cross: pearson(&ot, &aa)?,
        topk_overlap_true: topk_overlap(&ot, &at, topk_fraction)?,
        centroid_shift: centroid_shift(&nonzero_or_uniform(&ot), &nonzero_or_uniform(&aa))?,
        peak_to_perturbation: peak,
        entropy_ratio: entropy(&aa) / h_orig.max(ENTROPY_FLOOR),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub image_id: usize,
    pub attack: String,
    pub true_label: Option<usize>,
    pub class: usize,
    pub adversarial_class: usize,
    pub metrics: Vec<KindMetrics>,
}

impl ComparisonReport {
    pub fn metrics_for(&self, kind: MapKind) -> Option<&KindMetrics> {
        self.metrics.iter().find(|m| m.kind == kind)
    }

    pub fn in_range(&self) -> bool {
        self.metrics.iter().all(KindMetrics::in_range)
    }
}

/// Verifies `result`, builds the map quadruple for each kind and fills a report.
pub fn compare<T: Scalar>(
    net: &Network<T>,
    image_id: usize,
    result: &AdversarialResult<T>,
    cfg: &AttackConfig,
    kinds: &[MapKind],
    opts: &MapOptions,
    topk_fraction: f64,
) -> Result<(ComparisonReport, Vec<MapQuadruple>)> {
    let v = verify_adversarial(net, result, cfg);
    if let Some(f) = v.failure {
        return Err(Error::Unverified(f.code().into()));
    }
    if !result.success() {
        return Err(Error::Unverified("attack did not succeed".into()));
    }
    let support = match result.attack {
        crate::attacks::AttackKind::Pixel => Some(result.perturbed_pixels()),
        crate::attacks::AttackKind::Pgd => None,
    };
    let mut metrics = Vec::with_capacity(kinds.len());
    let mut quads = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let q = map_quadruple(net, &result.original, &result.adversarial, kind, opts)?;
        metrics.push(quadruple_metrics(&q, support.as_deref(), topk_fraction)?);
        quads.push(q);
    }
    Ok((
        ComparisonReport {
            image_id,
            attack: result.attack.name().into(),
            true_label: result.true_label,
            class: result.original_class,
            adversarial_class: result.adversarial_class,
            metrics,
        },
        quads,
    ))
}

const METRIC_COLUMNS: [&str; 6] = [
    "pearson_true",
    "pearson_cross",
    "topk_overlap_true",
    "centroid_shift",
    "peak_to_perturbation",
    "entropy_ratio",
];

/// Header of the report CSV: identity columns, then the six metrics for
/// saliency (`sm_`) and Grad-CAM (`gradcam_`) maps.
pub fn report_csv_header() -> String {
    let mut s = String::from("image_id,attack,true_label,original_class,adversarial_class");
    for kind in [MapKind::Saliency, MapKind::GradCam] {
        for c in METRIC_COLUMNS {
            write!(s, ",{}_{c}", kind.short_name()).expect("write to string");
        }
    }
    s
}

/// One CSV row; metrics of kinds not computed are left empty.
pub fn report_csv_row(r: &ComparisonReport) -> String {
    let mut s = format!(
        "{},{},{},{},{}",
        r.image_id,
        r.attack,
        r.true_label.map_or(String::new(), |l| l.to_string()),
        r.class,
        r.adversarial_class
    );
    for kind in [MapKind::Saliency, MapKind::GradCam] {
        match r.metrics_for(kind) {
            Some(m) => {
                let peak = m.peak_to_perturbation.map_or(String::new(), |v| v.to_string());
                write!(
                    s,
                    ",{},{},{},{},{},{}",
                    m.pearson_true, m.pearson_cross, m.topk_overlap_true, m.centroid_shift, peak, m.entropy_ratio
                )
                .expect("write to string");
            }
            None => s.push_str(",,,,,,"),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta(rows: usize, cols: usize, at: (usize, usize)) -> Grid {
        Grid::from_fn(rows, cols, |r, c| if (r, c) == at { 1.0 } else { 0.0 })
    }

    #[test]
    fn pearson_extremes() {
        let g = Grid::from_fn(4, 4, |r, c| (r * 3 + c * c) as f64);
        assert!((pearson(&g, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&g, &g.map(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&Grid::filled(4, 4, 2.0), &g).unwrap(), 0.0);
        assert!(pearson(&g, &Grid::filled(3, 4, 0.0)).is_err());
    }

    #[test]
    fn topk_cases() {
        let g = Grid::from_fn(5, 5, |r, c| (r * 5 + c) as f64);
        assert_eq!(topk_overlap(&g, &g, 0.1).unwrap(), 1.0);
        assert_eq!(topk_overlap(&delta(5, 5, (0, 0)), &delta(5, 5, (4, 4)), 0.04).unwrap(), 0.0);
        assert_eq!(topk_overlap(&g, &g.map(|v| -v), 1.0).unwrap(), 1.0);
        assert!(topk_overlap(&g, &g, 0.0).is_err());
    }

    #[test]
    fn centroid_cases() {
        let g = Grid::from_fn(6, 6, |r, c| (r + c) as f64);
        assert_eq!(centroid_shift(&g, &g).unwrap(), 0.0);
        assert_eq!(centroid_shift(&delta(6, 6, (0, 0)), &delta(6, 6, (3, 4))).unwrap(), 5.0);
        assert!(centroid_shift(&Grid::filled(6, 6, 0.0), &g).is_err());
    }

    #[test]
    fn peak_cases() {
        let g = delta(5, 5, (1, 1));
        assert_eq!(peak_to_perturbation(&g, &[(1, 1), (4, 4)]).unwrap(), 0.0);
        assert_eq!(peak_to_perturbation(&g, &[(1, 3)]).unwrap(), 2.0);
        let all: Vec<_> = (0..5).flat_map(|r| (0..5).map(move |c| (r, c))).collect();
        assert_eq!(peak_to_perturbation(&g, &all).unwrap(), 0.0);
        assert!(peak_to_perturbation(&g, &[]).is_err());
    }

    #[test]
    fn entropy_of_uniform_and_spike() {
        assert!((entropy(&Grid::filled(4, 4, 0.5)) - 16f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&delta(4, 4, (2, 2))), 0.0);
    }

    #[test]
    fn csv_header_has_fixed_width() {
        let cols = report_csv_header().split(',').count();
        let r = ComparisonReport {
            image_id: 3,
            attack: "pgd".into(),
            true_label: Some(1),
            class: 1,
            adversarial_class: 0,
            metrics: vec![],
        };
        assert_eq!(report_csv_row(&r).split(',').count(), cols);
        assert_eq!(cols, 17);
    }
}
