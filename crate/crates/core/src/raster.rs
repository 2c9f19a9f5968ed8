//! 8-bit rasters, binary masks, PGM/PPM files, run-length mask interchange
//! and resampling.
//!
//! Images are binary PGM (`P5`, one channel) or PPM (`P6`, RGB) with maxval
//! 255. Masks are stored as PGM with samples in `{0, 255}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major 8-bit image with one or three interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "raster dimensions must be positive, got {}x{}",
                width, height
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!(
                "raster must have 1 or 3 channels, got {}",
                channels
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} raster needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Planar `[C,H,W]` tensor of raw sample values (0..=255).
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v as f64;
            }
        }
        Tensor::from_vec(&[self.channels, self.height, self.width], out)
            .expect("raster invariant guarantees the length")
    }

    /// Parse a binary PGM or PPM byte stream.
    pub fn from_pnm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(Error::parse(
                    0,
                    format!("unsupported magic '{}', expected P5 or P6", other),
                ))
            }
        };
        let width = cursor.number("width")?;
        let height = cursor.number("height")?;
        cursor.skip_space_and_comments();
        let maxval_offset = cursor.pos;
        let maxval = cursor.number("maxval")?;
        if maxval != 255 {
            return Err(Error::parse(
                maxval_offset,
                format!("unsupported maxval {}", maxval),
            ));
        }
        // exactly one whitespace byte separates the header from the payload
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(Error::parse(cursor.pos, "expected whitespace after maxval")),
        }
        if width == 0 || height == 0 {
            return Err(Error::parse(0, "zero image dimension"));
        }
        let need = width * height * channels;
        let payload = &bytes[cursor.pos..];
        if payload.len() < need {
            return Err(Error::parse(
                bytes.len(),
                format!(
                    "truncated payload: expected {} bytes, found {}",
                    need,
                    payload.len()
                ),
            ));
        }
        if payload.len() > need {
            return Err(Error::parse(
                cursor.pos + need,
                "trailing bytes after payload",
            ));
        }
        Raster::new(width, height, channels, payload.to_vec())
    }

    pub fn to_pnm_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{}\n{} {}\n255\n", magic, self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        let tok = self.token()?;
        tok.parse::<usize>()
            .map_err(|_| Error::parse(start, format!("malformed {} '{}'", what, tok)))
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let bytes = fs::read(path)?;
    Raster::from_pnm_bytes(&bytes)
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, raster.to_pnm_bytes())?;
    Ok(())
}

/// Row-major `{0,1}` object mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} mask needs {} bits, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Invalid(format!(
                "mask value {} at index {} is not 0 or 1",
                bits[i], i
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y) as u8);
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    /// Out-of-frame coordinates read as background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// PGM-ready raster with samples `{0, 255}`.
    pub fn to_raster(&self) -> Raster {
        Raster::new(
            self.width,
            self.height,
            1,
            self.bits.iter().map(|&b| b * 255).collect(),
        )
        .expect("mask dimensions are valid")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(
            &[1, self.height, self.width],
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .expect("mask dimensions are valid")
    }
}

/// Threshold a one-channel raster: bit is set iff `sample >= threshold`.
pub fn mask_from_raster(raster: &Raster, threshold: u8) -> Result<BinaryMask> {
    if raster.channels != 1 {
        return Err(Error::Type(format!(
            "mask source must have 1 channel, got {}",
            raster.channels
        )));
    }
    Ok(BinaryMask {
        width: raster.width,
        height: raster.height,
        bits: raster
            .data
            .iter()
            .map(|&v| (v >= threshold) as u8)
            .collect(),
    })
}

pub const DEFAULT_MASK_THRESHOLD: u8 = 128;

/// Uncompressed run-length mask: column-major runs alternating background and
/// foreground, starting with a (possibly empty) background run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u64>,
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0u64;
    for x in 0..mask.width {
        for y in 0..mask.height {
            let b = mask.bits[y * mask.width + x];
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        width: mask.width,
        height: mask.height,
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    let total = (rle.width * rle.height) as u64;
    let sum: u64 = rle.counts.iter().sum();
    if sum != total {
        return Err(Error::Decode(format!(
            "run lengths sum to {}, expected {}x{} = {}",
            sum, rle.width, rle.height, total
        )));
    }
    let mut mask = BinaryMask::new(rle.width, rle.height);
    let mut idx = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        let on = i % 2 == 1;
        for _ in 0..run {
            if on {
                let (x, y) = (idx / rle.height, idx % rle.height);
                mask.bits[y * rle.width + x] = 1;
            }
            idx += 1;
        }
    }
    Ok(mask)
}

impl RleMask {
    pub fn is_valid(&self) -> bool {
        self.counts.iter().sum::<u64>() == (self.width * self.height) as u64
    }
}

/// Source sampling for one output coordinate along an axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-centre source coordinates: `src = (dst + 0.5) * in/out - 0.5`,
/// clamped to `[0, in-1]`.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

pub(crate) fn nearest_index(input: usize, output: usize, d: usize) -> usize {
    let scale = input as f64 / output as f64;
    let src = (d as f64 + 0.5) * scale - 0.5;
    ((src + 0.5).floor().max(0.0) as usize).min(input - 1)
}

/// Bilinear resize of a `[C,H,W]` tensor (half-pixel centres, edge clamp).
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Invalid("resize target must be at least 1x1".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let src = t.data();
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (oy, ry) in ty.iter().enumerate() {
            let r0 = &plane[ry.lo * w..(ry.lo + 1) * w];
            let r1 = &plane[ry.hi * w..(ry.hi + 1) * w];
            for (ox, rx) in tx.iter().enumerate() {
                let top = r0[rx.lo] + (r0[rx.hi] - r0[rx.lo]) * rx.frac;
                let bot = r1[rx.lo] + (r1[rx.hi] - r1[rx.lo]) * rx.frac;
                dst[oy * out_w + ox] = top + (bot - top) * ry.frac;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Adjoint of [`resize_bilinear`]: maps an output-space gradient back onto
/// the `in_h x in_w` input grid.
pub(crate) fn resize_bilinear_adjoint(g: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor> {
    let (c, out_h, out_w) = g.dims3()?;
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(g.clone());
    }
    let ty = bilinear_taps(in_h, out_h);
    let tx = bilinear_taps(in_w, out_w);
    let src = g.data();
    let mut out = vec![0.0; c * in_h * in_w];
    for ch in 0..c {
        let gp = &src[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        let dst = &mut out[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let v = gp[oy * out_w + ox];
                let top = v * (1.0 - ry.frac);
                let bot = v * ry.frac;
                dst[ry.lo * in_w + rx.lo] += top * (1.0 - rx.frac);
                dst[ry.lo * in_w + rx.hi] += top * rx.frac;
                dst[ry.hi * in_w + rx.lo] += bot * (1.0 - rx.frac);
                dst[ry.hi * in_w + rx.hi] += bot * rx.frac;
            }
        }
    }
    Tensor::from_vec(&[c, in_h, in_w], out)
}

/// Nearest-neighbour resize using the same half-pixel mapping, rounded.
pub fn resize_nearest(mask: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Invalid("resize target must be at least 1x1".into()));
    }
    let xs: Vec<usize> = (0..out_w)
        .map(|d| nearest_index(mask.width, out_w, d))
        .collect();
    let mut out = BinaryMask::new(out_w, out_h);
    for oy in 0..out_h {
        let sy = nearest_index(mask.height, out_h, oy);
        for (ox, &sx) in xs.iter().enumerate() {
            out.bits[oy * out_w + ox] = mask.bits[sy * mask.width + sx];
        }
    }
    Ok(out)
}
