//! Pixel masks and the codecs datasets store them in.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer pixel rectangle, top-left origin, half-open extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        PixelRect { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }
}

/// Row-major grid of 0/1 values.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("ones", &self.count_ones())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![0; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![1; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "mask of {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y) as u8);
            }
        }
        BinaryMask { width, height, bits }
    }

    /// A `width`×`height` mask that is 1 exactly inside `rect` (clipped).
    pub fn from_rect(width: u32, height: u32, rect: PixelRect) -> Self {
        BinaryMask::from_fn(width, height, |x, y| rect.contains(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value as u8;
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Smallest rectangle holding every 1-pixel.
    pub fn tight_bbox(&self) -> Option<PixelRect> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            let row = &self.bits[(y * self.width) as usize..((y + 1) * self.width) as usize];
            for (x, &b) in row.iter().enumerate() {
                if b != 0 {
                    let x = x as u32;
                    x0 = x0.min(x);
                    x1 = x1.max(x + 1);
                    y0 = y0.min(y);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != u32::MAX).then(|| PixelRect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Sub-mask inside `rect`, which must lie within the mask.
    pub fn crop(&self, rect: PixelRect) -> BinaryMask {
        assert!(rect.right() <= self.width && rect.bottom() <= self.height);
        BinaryMask::from_fn(rect.w, rect.h, |x, y| self.get(rect.x + x, rect.y + y))
    }

    /// Pixels set here and not in `other`.
    pub fn minus(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a & (1 - b))
                .collect(),
        }
    }

    pub fn overlap_count(&self, other: &BinaryMask) -> u64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| (a & b) as u64)
            .sum()
    }

    /// Keep only the largest 4-connected region of 1-pixels. Ties go to the
    /// region met first in raster order.
    pub fn largest_component(&self) -> BinaryMask {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut label = vec![0u32; w * h];
        let mut best = (0u32, 0usize);
        let mut next = 0u32;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if self.bits[start] == 0 || label[start] != 0 {
                continue;
            }
            next += 1;
            let mut size = 0usize;
            label[start] = next;
            stack.push(start);
            while let Some(p) = stack.pop() {
                size += 1;
                let (px, py) = (p % w, p / w);
                let mut visit = |q: usize| {
                    if self.bits[q] != 0 && label[q] == 0 {
                        label[q] = next;
                        stack.push(q);
                    }
                };
                if px > 0 {
                    visit(p - 1);
                }
                if px + 1 < w {
                    visit(p + 1);
                }
                if py > 0 {
                    visit(p - w);
                }
                if py + 1 < h {
                    visit(p + w);
                }
            }
            if size > best.1 {
                best = (next, size);
            }
        }
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: label.iter().map(|&l| (l != 0 && l == best.0) as u8).collect(),
        }
    }

    /// Write as a 1-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::One);
        let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
        let stride = (self.width as usize).div_ceil(8);
        let mut packed = vec![0u8; stride * self.height as usize];
        for y in 0..self.height as usize {
            for x in 0..self.width as usize {
                if self.bits[y * self.width as usize + x] != 0 {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        writer
            .write_image_data(&packed)
            .and_then(|_| writer.finish())
            .map_err(|e| Error::Png(e.to_string()))
    }

    /// Read a grayscale PNG; any nonzero sample is a 1.
    pub fn load_png(path: &Path) -> Result<Self> {
        let labels = LabelImage::load_png(path)?;
        Ok(BinaryMask {
            width: labels.width,
            height: labels.height,
            bits: labels.values.iter().map(|&v| (v != 0) as u8).collect(),
        })
    }
}

/// Per-pixel instance ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: u32,
    height: u32,
    ids: Vec<u32>,
    // one past the largest id ever painted, visible or not
    next_id: u32,
}

impl InstanceMap {
    pub fn new(width: u32, height: u32) -> Self {
        InstanceMap {
            width,
            height,
            ids: vec![0; width as usize * height as usize],
            next_id: 1,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Smallest id not yet used, even by instances since covered up.
    pub fn next_id(&self) -> u32 {
        self.next_id
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Paint `id` wherever `mask` is 1, on top of what is there.
    pub fn paint(&mut self, mask: &BinaryMask, id: u32) {
        assert_eq!((self.width, self.height), (mask.width, mask.height));
        for (dst, &m) in self.ids.iter_mut().zip(&mask.bits) {
            // M~ = M (1 - M*) + id M*
            *dst = *dst * (1 - m as u32) + id * m as u32;
        }
        self.next_id = self.next_id.max(id + 1);
    }

    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    pub fn mask_of(&self, id: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.ids.iter().map(|&v| (v == id) as u8).collect(),
        }
    }

    pub fn distinct_ids(&self) -> std::collections::BTreeSet<u32> {
        self.ids.iter().copied().filter(|&v| v != 0).collect()
    }
}

/// Class- or instance-indexed label image, as shipped in segmentation
/// releases (palette or grayscale PNG).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
}

impl LabelImage {
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Read raw sample values: palette indices stay indices, 16-bit gray stays 16-bit.
    pub fn load_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png(format!("{}: image too large", path.display())))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let samples = match info.color_type {
            png::ColorType::Grayscale | png::ColorType::Indexed => 1,
            png::ColorType::GrayscaleAlpha => 2,
            other => {
                return Err(Error::Png(format!(
                    "{}: label images must be grayscale or palette, found {other:?}",
                    path.display()
                )))
            }
        };
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &buf[y * info.line_size..(y + 1) * info.line_size];
            for x in 0..w {
                let v = match info.bit_depth {
                    png::BitDepth::Sixteen => {
                        let i = x * samples * 2;
                        u16::from_be_bytes([row[i], row[i + 1]])
                    }
                    png::BitDepth::Eight => row[x * samples] as u16,
                    depth => {
                        let bits = depth as usize;
                        let bit = x * bits;
                        let byte = row[bit / 8];
                        let shift = 8 - bits - (bit % 8);
                        ((byte >> shift) & ((1u8 << bits) - 1)) as u16
                    }
                };
                values.push(v);
            }
        }
        Ok(LabelImage {
            width: info.width,
            height: info.height,
            values,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        encoder.set_color(png::ColorType::Grayscale);
        let wide = self.values.iter().any(|&v| v > 255);
        encoder.set_depth(if wide { png::BitDepth::Sixteen } else { png::BitDepth::Eight });
        let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
        let data: Vec<u8> = if wide {
            self.values.iter().flat_map(|v| v.to_be_bytes()).collect()
        } else {
            self.values.iter().map(|&v| v as u8).collect()
        };
        writer
            .write_image_data(&data)
            .and_then(|_| writer.finish())
            .map_err(|e| Error::Png(e.to_string()))
    }
}

/// Column-major run lengths, starting with a run of zeros (COCO convention).
pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0u32;
    for x in 0..mask.width {
        for y in 0..mask.height {
            let v = mask.get(x, y) as u8;
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn rle_decode(counts: &[u32], width: u32, height: u32) -> Result<BinaryMask> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != width as u64 * height as u64 {
        return Err(Error::InvalidArgument(format!(
            "run lengths cover {total} pixels, mask has {}",
            width as u64 * height as u64
        )));
    }
    let mut mask = BinaryMask::new(width, height);
    let mut pos = 0u64;
    for (i, &c) in counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in pos..pos + c as u64 {
                let x = (p / height as u64) as u32;
                let y = (p % height as u64) as u32;
                mask.set(x, y, true);
            }
        }
        pos += c as u64;
    }
    Ok(mask)
}

/// Decode the compact string form of COCO run lengths.
pub fn rle_counts_from_string(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let c = *bytes
                .get(p)
                .ok_or_else(|| Error::InvalidArgument("truncated run-length string".into()))?
                as i64
                - 48;
            x |= (c & 0x1f) << (5 * k);
            let more = c & 0x20 != 0;
            p += 1;
            k += 1;
            if !more {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| u32::try_from(c).map_err(|_| Error::InvalidArgument("negative run length".into())))
        .collect()
}

/// Fill polygons (flat `[x0, y0, x1, y1, ...]` lists) by pixel-center
/// even-odd sampling; the result is the union of all polygons.
pub fn rasterize_polygons(polygons: &[Vec<f64>], width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    let mut crossings = Vec::new();
    for poly in polygons {
        let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        for y in 0..height {
            let cy = y as f64 + 0.5;
            crossings.clear();
            for i in 0..pts.len() {
                let (x1, y1) = pts[i];
                let (x2, y2) = pts[(i + 1) % pts.len()];
                if (y1 <= cy && cy < y2) || (y2 <= cy && cy < y1) {
                    crossings.push(x1 + (cy - y1) / (y2 - y1) * (x2 - x1));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for span in crossings.chunks_exact(2) {
                // pixel x is inside when its center x + 0.5 lies in [a, b)
                let start = (span[0] - 0.5).ceil().max(0.0);
                let end = (span[1] - 0.5).ceil().min(width as f64);
                let mut x = start;
                while x < end {
                    mask.set(x as u32, y, true);
                    x += 1.0;
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_bbox_and_crop() {
        let m = BinaryMask::from_rect(10, 8, PixelRect::new(2, 3, 4, 2));
        assert_eq!(m.tight_bbox(), Some(PixelRect::new(2, 3, 4, 2)));
        assert_eq!(m.count_ones(), 8);
        let c = m.crop(PixelRect::new(2, 3, 4, 2));
        assert_eq!(c, BinaryMask::filled(4, 2));
        assert_eq!(BinaryMask::new(3, 3).tight_bbox(), None);
    }

    #[test]
    fn from_bits_rejects_non_binary() {
        assert!(BinaryMask::from_bits(2, 1, vec![0, 2]).is_err());
        assert!(BinaryMask::from_bits(2, 1, vec![0]).is_err());
    }

    #[test]
    fn largest_component_picks_bigger_region() {
        // two blobs: 1 pixel at (0,0) and a 2x2 block at (3,3)
        let m = BinaryMask::from_fn(6, 6, |x, y| (x, y) == (0, 0) || (3..5).contains(&x) && (3..5).contains(&y));
        let l = m.largest_component();
        assert_eq!(l.count_ones(), 4);
        assert!(!l.get(0, 0));
    }

    #[test]
    fn rle_matches_known_layout() {
        // 2 wide x 3 tall, column-major: col0 = [0,1,1], col1 = [1,0,0]
        let m = BinaryMask::from_bits(2, 3, vec![0, 1, 1, 0, 1, 0]).unwrap();
        assert_eq!(rle_encode(&m), vec![1, 3, 2]);
        assert_eq!(rle_decode(&[1, 3, 2], 2, 3).unwrap(), m);
        assert!(rle_decode(&[1, 3], 2, 3).is_err());
    }

    #[test]
    fn compressed_rle_string() {
        // deltas only start at the fourth count
        assert_eq!(rle_counts_from_string("132").unwrap(), vec![1, 3, 2]);
        assert_eq!(rle_counts_from_string("1322").unwrap(), vec![1, 3, 2, 5]);
        // Large count with continuation bits: 100 = 0b11_00100 -> chunks 4 (|0x20) and 3
        let s: String = [((100 & 0x1f) | 0x20) as u8 + 48, (100 >> 5) as u8 + 48]
            .iter()
            .map(|&b| b as char)
            .collect();
        assert_eq!(rle_counts_from_string(&s).unwrap(), vec![100]);
    }

    #[test]
    fn polygon_square() {
        let m = rasterize_polygons(&[vec![2.0, 2.0, 6.0, 2.0, 6.0, 5.0, 2.0, 5.0]], 10, 10);
        assert_eq!(m.tight_bbox(), Some(PixelRect::new(2, 2, 4, 3)));
        assert_eq!(m.count_ones(), 12);
    }

    #[test]
    fn instance_map_paint_follows_mask_update() {
        let mut map = InstanceMap::new(4, 4);
        map.paint(&BinaryMask::from_rect(4, 4, PixelRect::new(0, 0, 2, 2)), 1);
        map.paint(&BinaryMask::from_rect(4, 4, PixelRect::new(1, 1, 2, 2)), 2);
        assert_eq!(map.get(0, 0), 1);
        assert_eq!(map.get(1, 1), 2);
        assert_eq!(map.mask_of(1).count_ones(), 3);
        assert_eq!(map.distinct_ids().into_iter().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn one_bit_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = BinaryMask::from_fn(13, 7, |x, y| (x * 3 + y) % 5 == 0);
        m.save_png(&path).unwrap();
        assert_eq!(BinaryMask::load_png(&path).unwrap(), m);
    }

    #[test]
    fn label_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        let l = LabelImage {
            width: 3,
            height: 2,
            values: vec![0, 12, 255, 1, 2, 3],
        };
        l.save_png(&path).unwrap();
        assert_eq!(LabelImage::load_png(&path).unwrap(), l);
    }
}
