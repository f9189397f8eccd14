//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic "AFCK" | version u16
//! input rank u8 | input extents u32 * rank | gradcam layer u32 (u32::MAX = unset)
//! seed u64 | final accuracy f64
//! node count u32 | per node: descriptor length u32, descriptor bytes
//! parameter count u64 | parameters f64 * count (node order, weight then bias)
//! CRC-32 of every preceding byte, u32
//! ```
//!
//! A descriptor is `tag u8 | input count u8 | inputs u32 * count | op fields u32 *`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Conv2d, Dense, Layer, Network, Node};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"AFCK";
const NO_LAYER: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub final_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub version: u16,
    pub network: Network<T>,
    pub meta: TrainingMeta,
    /// CRC-32 stored in the trailer.
    pub checksum: u32,
}

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_ADD: u8 = 3;
const TAG_MAXPOOL: u8 = 4;
const TAG_GAP: u8 = 5;
const TAG_DENSE: u8 = 6;
const TAG_SOFTMAX: u8 = 7;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn descriptor<T: Scalar>(node: &Node<T>) -> Vec<u8> {
    let mut d = Vec::new();
    let tag = match &node.layer {
        Layer::Conv2d(_) => TAG_CONV,
        Layer::Relu => TAG_RELU,
        Layer::Add => TAG_ADD,
        Layer::MaxPool { .. } => TAG_MAXPOOL,
        Layer::GlobalAvgPool => TAG_GAP,
        Layer::Dense(_) => TAG_DENSE,
        Layer::Softmax => TAG_SOFTMAX,
    };
    d.push(tag);
    d.push(node.inputs.len() as u8);
    for &i in &node.inputs {
        put_u32(&mut d, i);
    }
    match &node.layer {
        Layer::Conv2d(c) => {
            let (kh, kw) = c.kernel();
            for v in [c.out_channels(), c.in_channels(), kh, kw, c.stride, c.padding] {
                put_u32(&mut d, v);
            }
        }
        Layer::Dense(dn) => {
            put_u32(&mut d, dn.weight.shape()[0]);
            put_u32(&mut d, dn.weight.shape()[1]);
        }
        Layer::MaxPool { size, stride } => {
            put_u32(&mut d, *size);
            put_u32(&mut d, *stride);
        }
        _ => {}
    }
    d
}

pub fn encode_checkpoint<T: Scalar>(net: &Network<T>, meta: &TrainingMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(net.input_shape().len() as u8);
    for &e in net.input_shape() {
        put_u32(&mut out, e);
    }
    out.extend_from_slice(&net.gradcam_flag().map_or(NO_LAYER, |l| l as u32).to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.final_accuracy.to_le_bytes());
    put_u32(&mut out, net.nodes().len());
    for node in net.nodes() {
        let d = descriptor(node);
        put_u32(&mut out, d.len());
        out.extend_from_slice(&d);
    }
    let params = net.parameters();
    let count: usize = params.iter().map(|p| p.len()).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for p in params {
        for v in p.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }
}

enum Pending {
    Conv { shape: [usize; 4], stride: usize, padding: usize },
    Dense { shape: [usize; 2] },
    Plain(Layer<f64>),
}

fn take_params<T: Scalar>(vals: &mut impl Iterator<Item = f64>, shape: &[usize]) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = vals.by_ref().take(n).collect();
    if data.len() != n {
        return Err(Error::Format("parameter section shorter than topology requires".into()));
    }
    Tensor::new(shape.to_vec(), data.into_iter().map(T::of).collect())
}

/// Parses and validates a checkpoint; nothing is returned unless the
/// whole file is intact.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 6 };
    let rank = r.u8()? as usize;
    let input_shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let gradcam = r.u32()?;
    let meta = TrainingMeta {
        seed: r.u64()?,
        final_accuracy: r.f64()?,
    };
    let node_count = r.usize()?;
    let mut pending = Vec::with_capacity(node_count.min(1 << 16));
    for _ in 0..node_count {
        let len = r.usize()?;
        let mut d = Reader { buf: r.take(len)?, pos: 0 };
        let tag = d.u8()?;
        let n_in = d.u8()? as usize;
        let inputs = (0..n_in).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
        let p = match tag {
            TAG_CONV => {
                let v = (0..6).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
                Pending::Conv {
                    shape: [v[0], v[2], v[3], v[1]],
                    stride: v[4],
                    padding: v[5],
                }
            }
            TAG_DENSE => Pending::Dense {
                shape: [d.usize()?, d.usize()?],
            },
            TAG_MAXPOOL => Pending::Plain(Layer::MaxPool {
                size: d.usize()?,
                stride: d.usize()?,
            }),
            TAG_RELU => Pending::Plain(Layer::Relu),
            TAG_ADD => Pending::Plain(Layer::Add),
            TAG_GAP => Pending::Plain(Layer::GlobalAvgPool),
            TAG_SOFTMAX => Pending::Plain(Layer::Softmax),
            other => return Err(Error::Format(format!("unknown layer tag {other}"))),
        };
        if d.pos != len {
            return Err(Error::Format("layer descriptor has trailing bytes".into()));
        }
        pending.push((p, inputs));
    }
    let count = r.u64()? as usize;
    let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflows".into()))?)?;
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes before checksum".into()));
    }
    let mut vals = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));

    let mut nodes = Vec::with_capacity(pending.len());
    for (p, inputs) in pending {
        let layer = match p {
            Pending::Conv { shape, stride, padding } => Layer::Conv2d(Conv2d {
                weight: take_params(&mut vals, &shape)?,
                bias: take_params(&mut vals, &[shape[0]])?,
                stride,
                padding,
            }),
            Pending::Dense { shape } => Layer::Dense(Dense {
                weight: take_params(&mut vals, &shape)?,
                bias: take_params(&mut vals, &[shape[0]])?,
            }),
            Pending::Plain(l) => match l {
                Layer::MaxPool { size, stride } => Layer::MaxPool { size, stride },
                Layer::Relu => Layer::Relu,
                Layer::Add => Layer::Add,
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                _ => Layer::Softmax,
            },
        };
        nodes.push(Node::new(layer, inputs));
    }
    if vals.next().is_some() {
        return Err(Error::Format("parameter section longer than topology requires".into()));
    }
    let mut network = Network::new(input_shape, nodes)?;
    if gradcam != NO_LAYER {
        network.set_gradcam_layer(gradcam as usize)?;
    }
    Ok(Checkpoint {
        version,
        network,
        meta,
        checksum: stored,
    })
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, meta: &TrainingMeta, path: &Path) -> Result<u32> {
    let bytes = encode_checkpoint(net, meta);
    fs::write(path, &bytes)?;
    Ok(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes")))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_mini_resnet;

    fn sample() -> (Network<f64>, Vec<u8>) {
        let net = build_mini_resnet::<f64>([8, 8, 3], 4, 2, 3, 9).unwrap();
        let bytes = encode_checkpoint(&net, &TrainingMeta { seed: 9, final_accuracy: 0.5 });
        (net, bytes)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (net, bytes) = sample();
        let ck = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(ck.network, net);
        assert_eq!(ck.meta.seed, 9);
        assert_eq!(ck.network.default_gradcam_layer(), net.default_gradcam_layer());
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let (_, mut bytes) = sample();
        let mid = bytes.len() - 100;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_checkpoint::<f64>(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn unknown_version_rejected() {
        let (_, mut bytes) = sample();
        bytes[4] = 255;
        bytes[5] = 0;
        assert!(matches!(decode_checkpoint::<f64>(&bytes), Err(Error::UnsupportedVersion(255))));
    }

    #[test]
    fn truncation_rejected() {
        let (_, bytes) = sample();
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() / 2]).is_err());
        assert!(decode_checkpoint::<f64>(&bytes[..5]).is_err());
    }
}
