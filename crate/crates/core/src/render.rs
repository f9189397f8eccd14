//! Heatmap overlays and binary PPM output.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::attention::{AttentionMap, MapKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Colormap stops at 0, 0.25, 0.5, 0.75 and 1.
const STOPS: [[f64; 3]; 5] = [
    [0.0, 0.0, 128.0],
    [0.0, 255.0, 255.0],
    [0.0, 255.0, 0.0],
    [255.0, 255.0, 0.0],
    [255.0, 0.0, 0.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayProvenance {
    pub image_id: Option<usize>,
    pub kind: Option<MapKind>,
    pub class: Option<usize>,
    pub alpha: f64,
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub provenance: OverlayProvenance,
}

/// Piecewise-linear ramp: dark blue, cyan, green, yellow, red. Channels in `[0, 255]`.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let pos = v * 4.0;
    let i = (pos.floor() as usize).min(3);
    let t = pos - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn base_rgb<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let s = image.shape();
    if s.len() != 3 || (s[2] != 1 && s[2] != 3) {
        return Err(Error::InvalidArgument(format!("cannot render image of shape {s:?}")));
    }
    let px = image
        .data()
        .chunks_exact(s[2])
        .map(|p| {
            let v: Vec<f64> = p.iter().map(|x| x.as_f64().clamp(0.0, 1.0) * 255.0).collect();
            if v.len() == 1 {
                [v[0]; 3]
            } else {
                [v[0], v[1], v[2]]
            }
        })
        .collect();
    Ok((s[0], s[1], px))
}

/// The image alone, quantized to 8 bits.
pub fn render_image<T: Scalar>(image: &Tensor<T>) -> Result<OverlayImage> {
    let (h, w, px) = base_rgb(image)?;
    Ok(OverlayImage {
        width: w,
        height: h,
        pixels: px.iter().flat_map(|p| p.map(quantize)).collect(),
        provenance: OverlayProvenance {
            image_id: None,
            kind: None,
            class: None,
            alpha: 0.0,
        },
    })
}

/// `(1 - alpha) * image + alpha * colormap(map)`, rounded half up.
pub fn render_overlay<T: Scalar>(image: &Tensor<T>, map: &AttentionMap, alpha: f64) -> Result<OverlayImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let (h, w, px) = base_rgb(image)?;
    if map.grid.dims() != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            actual: vec![map.grid.rows(), map.grid.cols()],
        });
    }
    let pixels = px
        .iter()
        .zip(map.grid.data())
        .flat_map(|(p, &v)| {
            let c = colormap(v);
            [0, 1, 2].map(|k| quantize((1.0 - alpha) * p[k] + alpha * c[k]))
        })
        .collect();
    Ok(OverlayImage {
        width: w,
        height: h,
        pixels,
        provenance: OverlayProvenance {
            image_id: None,
            kind: Some(map.kind),
            class: Some(map.class),
            alpha,
        },
    })
}

pub fn encode_ppm(img: &OverlayImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Writes a binary PPM (P6, maxval 255).
pub fn write_image(img: &OverlayImage, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_ppm(img))?;
    Ok(())
}

/// Reads a P6 file written by [`write_image`]: `(width, height, rgb bytes)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Format("expected a P6 PPM with maxval 255".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PPM dimension {s:?}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != 3 * w * h {
        return Err(Error::Format(format!("PPM payload has {} bytes, expected {}", payload.len(), 3 * w * h)));
    }
    Ok((w, h, payload.to_vec()))
}
