//! Map files. Binary layout, little-endian:
//! `"AFMP" | kind u8 | class u16 | rows u32 | cols u32 | mode u8 | rows*cols f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::BackpropMode;
use crate::error::{Error, Result};

use super::{AttentionMap, Grid, MapKind};

const MAGIC: &[u8; 4] = b"AFMP";
const HEADER_BYTES: usize = 4 + 1 + 2 + 4 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapHeader {
    pub kind: MapKind,
    pub class: u16,
    pub mode: BackpropMode,
}

pub fn encode_map(map: &AttentionMap) -> Result<Vec<u8>> {
    let class = u16::try_from(map.class).map_err(|_| Error::InvalidArgument(format!("class {} exceeds u16", map.class)))?;
    let g = &map.grid;
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * g.data().len());
    out.extend_from_slice(MAGIC);
    out.push(map.kind.code());
    out.extend_from_slice(&class.to_le_bytes());
    out.extend_from_slice(&(g.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(g.cols() as u32).to_le_bytes());
    out.push(map.mode.code());
    for v in g.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<(MapHeader, Grid)> {
    if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a map file".into()));
    }
    let kind = MapKind::from_code(bytes[4]).ok_or_else(|| Error::Format(format!("unknown map kind {}", bytes[4])))?;
    let class = u16::from_le_bytes([bytes[5], bytes[6]]);
    let rows = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[11..15].try_into().expect("4 bytes")) as usize;
    let mode = BackpropMode::from_code(bytes[15]).ok_or_else(|| Error::Format(format!("unknown backprop mode {}", bytes[15])))?;
    let payload = &bytes[HEADER_BYTES..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)) != Some(payload.len()) {
        return Err(Error::Format(format!("payload of {} bytes does not hold {rows}x{cols} values", payload.len())));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((MapHeader { kind, class, mode }, Grid::new(rows, cols, data)?))
}

pub fn write_map(map: &AttentionMap, path: &Path) -> Result<()> {
    fs::write(path, encode_map(map)?)?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<(MapHeader, Grid)> {
    decode_map(&fs::read(path)?)
}

/// One CSV line per grid row, values in shortest round-trip form.
pub fn write_map_csv(grid: &Grid, path: &Path) -> Result<()> {
    let mut s = String::new();
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            if c > 0 {
                s.push(',');
            }
            write!(s, "{}", grid.get(r, c)).expect("write to string");
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_map_csv(path: &Path) -> Result<Grid> {
    let text = fs::read_to_string(path)?;
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Format(format!("bad CSV value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if *cols.get_or_insert(vals.len()) != vals.len() {
            return Err(Error::Format("ragged CSV grid".into()));
        }
        data.extend(vals);
        rows += 1;
    }
    Grid::new(rows, cols.unwrap_or(0), data)
}
