//! Plain-text float grids and 8-bit visualisations of density maps.
//!
//! Float grid layout:
//!
//! ```text
//! LCDMAP <width> <height>
//! v00 v01 ... v0(w-1)
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a written grid reads
//! back bit-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::map_extent;
use crate::numerics::Tensor;

pub fn write_float_grid(map: &Tensor) -> Result<String> {
    let (h, w) = map_extent(map)?;
    let mut out = format!("LCDMAP {w} {h}\n");
    for row in map.data().chunks(w) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a float grid into a `[1, 1, H, W]` tensor. `origin` is only used
/// in error messages.
pub fn read_float_grid(text: &str, origin: &Path) -> Result<Tensor> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::load(origin, Some(1), "empty map file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (w, h) = match fields[..] {
        ["LCDMAP", w, h] => (
            w.parse::<usize>().map_err(|_| Error::load(origin, Some(1), "bad width"))?,
            h.parse::<usize>().map_err(|_| Error::load(origin, Some(1), "bad height"))?,
        ),
        _ => return Err(Error::load(origin, Some(1), "expected header `LCDMAP <width> <height>`")),
    };
    let mut data = Vec::with_capacity(w * h);
    let mut rows = 0;
    for (idx, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 =
                tok.parse().map_err(|_| Error::load(origin, Some(idx + 1), format!("`{tok}` is not a number")))?;
            data.push(v);
        }
        if data.len() - before != w {
            return Err(Error::load(
                origin,
                Some(idx + 1),
                format!("row has {} values, expected {w}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != h {
        return Err(Error::load(origin, None, format!("found {rows} rows, expected {h}")));
    }
    Tensor::new(vec![1, 1, h, w], data)
}

/// Max-normalised 8-bit grey levels; negative values map to 0 and an
/// all-nonpositive map is black.
pub fn map_to_gray8(map: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = map_extent(map)?;
    let max = map.max();
    let pixels = if max > 0.0 && max.is_finite() {
        map.data().iter().map(|&v| ((v.max(0.0) / max) * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    } else {
        vec![0; w * h]
    };
    Ok((w, h, pixels))
}

/// Binary PGM (P5) bytes of a max-normalised map.
pub fn write_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let (w, h, pixels) = map_to_gray8(map)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}
