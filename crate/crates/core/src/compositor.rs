//! Scaling, placement, pixel compositing, boundary blending and occlusion.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedObject, BBox};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMap, PixelRect};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blending {
    #[default]
    None,
    #[serde(rename = "gaussian_5x5")]
    Gaussian5x5,
    #[serde(rename = "averaging_5x5")]
    Averaging5x5,
}

impl std::str::FromStr for Blending {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Blending::None),
            "gaussian_5x5" | "gaussian" => Ok(Blending::Gaussian5x5),
            "averaging_5x5" | "averaging" => Ok(Blending::Averaging5x5),
            other => Err(Error::InvalidArgument(format!("unknown blending mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    /// Paste width as a fraction of host width.
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Allowed paste area in pixels.
    pub area_min: f64,
    pub area_max: f64,
    /// Corner jitter bound as a fraction of host width.
    pub epsilon_frac: f64,
    pub max_retries: u32,
    pub blending: Blending,
    /// Objects keeping less than this fraction of their pixels are dropped.
    pub visibility_threshold: f64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        PlacementParams {
            scale_lo: 0.05,
            scale_hi: 0.40,
            area_min: 300.0,
            area_max: 90_000.0,
            epsilon_frac: 0.05,
            max_retries: 20,
            blending: Blending::None,
            visibility_threshold: 0.05,
        }
    }
}

impl PlacementParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.scale_lo > 0.0 && self.scale_lo <= self.scale_hi && self.scale_hi <= 1.0) {
            return bad("scale range must satisfy 0 < lo <= hi <= 1");
        }
        if !(self.area_min > 0.0 && self.area_min < self.area_max) {
            return bad("area bounds must satisfy 0 < min < max");
        }
        if !(0.0..1.0).contains(&self.epsilon_frac) {
            return bad("epsilon_frac must lie in [0, 1)");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.visibility_threshold) {
            return bad("visibility_threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Where and how large a paste lands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub center: (f64, f64),
    pub scaled_w: u32,
    pub scaled_h: u32,
    pub host_anchor_index: usize,
}

impl Placement {
    /// Top-left pixel of the paste; may be negative or past the frame.
    pub fn origin(&self) -> (i64, i64) {
        (
            (self.center.0 - self.scaled_w as f64 / 2.0).round() as i64,
            (self.center.1 - self.scaled_h as f64 / 2.0).round() as i64,
        )
    }

    /// Paste box pixels that fall inside a `width`×`height` frame.
    pub fn in_frame_area(&self, width: u32, height: u32) -> u64 {
        let (x0, y0) = self.origin();
        let span = |o: i64, len: u32, lim: u32| {
            let a = o.max(0);
            let b = (o + len as i64).min(lim as i64);
            (b - a).max(0) as u64
        };
        span(x0, self.scaled_w, width) * span(y0, self.scaled_h, height)
    }
}

/// Paste size for a width fraction `u`: width `round(u·W)` kept inside the
/// scale range, height following the crop's aspect ratio.
pub fn scaled_dims(u: f64, crop_w: u32, crop_h: u32, host_w: u32, params: &PlacementParams) -> (u32, u32) {
    let lo = (params.scale_lo * host_w as f64).ceil();
    let hi = (params.scale_hi * host_w as f64).floor();
    let w = (u * host_w as f64).round().clamp(lo, hi.max(lo)).max(1.0);
    let h = (w * crop_h as f64 / crop_w as f64).round().max(1.0);
    (w as u32, h as u32)
}

/// Draw a paste size until its area fits the bounds.
pub fn draw_scale<R: Rng + ?Sized>(
    crop_w: u32,
    crop_h: u32,
    host_w: u32,
    params: &PlacementParams,
    rng: &mut R,
) -> Result<(u32, u32)> {
    if crop_w == 0 || crop_h == 0 || host_w == 0 {
        return Err(Error::InvalidArgument("degenerate crop or host".into()));
    }
    if (params.scale_lo * host_w as f64).ceil() > (params.scale_hi * host_w as f64).floor() {
        return Err(Error::Unplaceable(format!("no integer width in scale range for host width {host_w}")));
    }
    for _ in 0..params.max_retries {
        let u = rng.random_range(params.scale_lo..=params.scale_hi);
        let (w, h) = scaled_dims(u, crop_w, crop_h, host_w, params);
        let area = w as f64 * h as f64;
        if (params.area_min..=params.area_max).contains(&area) {
            return Ok((w, h));
        }
    }
    Err(Error::Unplaceable(format!(
        "{crop_w}x{crop_h} crop never met area bounds on a {host_w}-wide host"
    )))
}

/// Bilinear resize with pixel-centre alignment.
pub fn resize_bilinear(src: &RgbImage, w: u32, h: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if (sw, sh) == (w, h) {
        return src.clone();
    }
    let (fx, fy) = (sw as f64 / w as f64, sh as f64 / h as f64);
    let axis = |d: u32, f: f64, n: u32| {
        let s = ((d as f64 + 0.5) * f - 0.5).max(0.0);
        let i0 = (s.floor() as u32).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    RgbImage::from_fn(w, h, |x, y| {
        let (x0, x1, tx) = axis(x, fx, sw);
        let (y0, y1, ty) = axis(y, fy, sh);
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p = |xx, yy| src.get_pixel(xx, yy)[c] as f64;
            let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
            let bot = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
            *o = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Nearest-neighbour mask resize; output stays binary.
pub fn resize_nearest(src: &BinaryMask, w: u32, h: u32) -> BinaryMask {
    if (src.width(), src.height()) == (w, h) {
        return src.clone();
    }
    let (fx, fy) = (src.width() as f64 / w as f64, src.height() as f64 / h as f64);
    BinaryMask::from_fn(w, h, |x, y| {
        let sx = (((x as f64 + 0.5) * fx) as u32).min(src.width() - 1);
        let sy = (((y as f64 + 0.5) * fy) as u32).min(src.height() - 1);
        src.get(sx, sy)
    })
}

/// Crop bilinear, mask nearest.
pub fn resize_instance(crop: &RgbImage, mask: &BinaryMask, w: u32, h: u32) -> (RgbImage, BinaryMask) {
    (resize_bilinear(crop, w, h), resize_nearest(mask, w, h))
}

/// Corner-jittered centre next to the anchor box. `signs` pick the corner,
/// `eps` is the jitter in pixels.
pub fn corner_center(anchor: &BBox, signs: (f64, f64), eps: (f64, f64)) -> (f64, f64) {
    let (xa, ya) = anchor.center();
    (
        xa + signs.0 * anchor.w / 2.0 + eps.0,
        ya + signs.1 * anchor.h / 2.0 + eps.1,
    )
}

/// Draw a corner and jitter until at least half the paste box is in frame.
pub fn draw_placement<R: Rng + ?Sized>(
    anchor: &BBox,
    anchor_index: usize,
    host_w: u32,
    host_h: u32,
    dims: (u32, u32),
    params: &PlacementParams,
    rng: &mut R,
) -> Result<Placement> {
    let bound = params.epsilon_frac * host_w as f64;
    let area = dims.0 as u64 * dims.1 as u64;
    for _ in 0..params.max_retries {
        let sx = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let sy = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let (ea, eb) = if bound > 0.0 {
            (rng.random_range(-bound..=bound), rng.random_range(-bound..=bound))
        } else {
            (0.0, 0.0)
        };
        let p = Placement {
            center: corner_center(anchor, (sx, sy), (ea, eb)),
            scaled_w: dims.0,
            scaled_h: dims.1,
            host_anchor_index: anchor_index,
        };
        if 2 * p.in_frame_area(host_w, host_h) >= area {
            return Ok(p);
        }
    }
    Err(Error::Unplaceable("paste never kept half its box in frame".into()))
}

/// Zero-pad a crop and mask into host geometry at `origin`; returns
/// `(I*, M*)` with `I*` already multiplied by the mask.
pub fn pad_zeros(
    crop: &RgbImage,
    mask: &BinaryMask,
    origin: (i64, i64),
    width: u32,
    height: u32,
) -> (RgbImage, BinaryMask) {
    let mut img = RgbImage::new(width, height);
    let mut m = BinaryMask::new(width, height);
    for cy in 0..mask.height() {
        let y = origin.1 + cy as i64;
        if y < 0 || y >= height as i64 {
            continue;
        }
        for cx in 0..mask.width() {
            let x = origin.0 + cx as i64;
            if x < 0 || x >= width as i64 || !mask.get(cx, cy) {
                continue;
            }
            m.set(x as u32, y as u32, true);
            img.put_pixel(x as u32, y as u32, *crop.get_pixel(cx, cy));
        }
    }
    (img, m)
}

/// `I ⊙ (1 − M*) + I*`, channel by channel.
pub fn composite_pixels(host: &RgbImage, padded: &RgbImage, m: &BinaryMask) -> RgbImage {
    RgbImage::from_fn(host.width(), host.height(), |x, y| {
        let keep = 1 - m.get(x, y) as u16;
        let (h, p) = (host.get_pixel(x, y), padded.get_pixel(x, y));
        Rgb(std::array::from_fn(|c| (h[c] as u16 * keep + p[c] as u16) as u8))
    })
}

/// Paste bits straight into `instances` with a fresh id, returning the id.
pub fn composite_instances(instances: &mut InstanceMap, m: &BinaryMask) -> u32 {
    let id = instances.next_id();
    instances.paint(m, id);
    id
}

/// 5×5 filter restricted to pixels whose clamped 5×5 neighbourhood holds
/// both mask values, so only a 2-pixel band around the paste edge changes.
pub fn blend(image: &mut RgbImage, m: &BinaryMask, mode: Blending) {
    let weights: [u32; 5] = match mode {
        Blending::None => return,
        Blending::Gaussian5x5 => [1, 4, 6, 4, 1],
        Blending::Averaging5x5 => [1, 1, 1, 1, 1],
    };
    let Some(rect) = m.tight_bbox() else { return };
    let (w, h) = image.dimensions();
    let src = image.clone();
    let clampi = |v: i64, n: u32| v.clamp(0, n as i64 - 1) as u32;
    let x_lo = rect.x.saturating_sub(2);
    let y_lo = rect.y.saturating_sub(2);
    let x_hi = (rect.right() + 2).min(w);
    let y_hi = (rect.bottom() + 2).min(h);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (mut ones, mut zeros) = (false, false);
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    if m.get(nx as u32, ny as u32) {
                        ones = true;
                    } else {
                        zeros = true;
                    }
                }
            }
            if !(ones && zeros) {
                continue;
            }
            let mut acc = [0u32; 3];
            for (j, wy) in weights.iter().enumerate() {
                let sy = clampi(y as i64 + j as i64 - 2, h);
                for (i, wx) in weights.iter().enumerate() {
                    let sx = clampi(x as i64 + i as i64 - 2, w);
                    let p = src.get_pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += wx * wy * p[c] as u32;
                    }
                }
            }
            let px = match mode {
                Blending::Gaussian5x5 => acc.map(|a| ((a + 128) >> 8) as u8),
                _ => acc.map(|a| ((a + 12) / 25) as u8),
            };
            image.put_pixel(x, y, Rgb(px));
        }
    }
}

/// An annotation dropped because too little of it stayed visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedObject {
    pub label: String,
    pub bbox: BBox,
    pub visible_fraction: f64,
}

/// Shrink or drop annotations covered by the pasted mask `m`.
///
/// Objects without masks use their box as the mask. Survivors get the
/// tight box of their visible pixels, and their mask (if any) is cut.
pub fn update_occlusions(
    objects: &mut Vec<AnnotatedObject>,
    m: &BinaryMask,
    width: u32,
    height: u32,
    visibility_threshold: f64,
) -> Vec<RemovedObject> {
    let mut removed = Vec::new();
    objects.retain_mut(|o| {
        let occ = o.occupancy(width, height);
        let total = occ.count_ones();
        let covered = occ.overlap_count(m);
        if covered == 0 || total == 0 {
            return true;
        }
        let visible = occ.minus(m);
        let fraction = visible.count_ones() as f64 / total as f64;
        if fraction < visibility_threshold || visible.is_empty() {
            removed.push(RemovedObject {
                label: o.label.clone(),
                bbox: o.bbox,
                visible_fraction: fraction,
            });
            return false;
        }
        let rect: PixelRect = visible.tight_bbox().expect("visible is non-empty");
        let keep_mask = o.mask.is_some().then_some(visible);
        o.set_geometry(BBox::from_rect(rect), keep_mask);
        true
    });
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scale_arithmetic() {
        let p = PlacementParams::default();
        assert_eq!(scaled_dims(0.20, 100, 50, 1000, &p), (200, 100));
        assert_eq!(scaled_dims(0.05, 10, 10, 100, &p), (5, 5));
    }

    #[test]
    fn tiny_host_forces_redraws_until_bounds() {
        let p = PlacementParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (w, h) = draw_scale(10, 10, 100, &p, &mut rng).unwrap();
            assert!(w * h >= 300, "{w}x{h}");
            assert!((5..=40).contains(&w));
        }
    }

    #[test]
    fn extreme_aspect_is_unplaceable() {
        let p = PlacementParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(draw_scale(1000, 1, 640, &p, &mut rng), Err(Error::Unplaceable(_))));
    }

    #[test]
    fn resize_cases() {
        let ones = BinaryMask::filled(4, 4);
        assert_eq!(resize_nearest(&ones, 8, 8), BinaryMask::filled(8, 8));
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 80, 9]));
        let checker = BinaryMask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        let (ri, rm) = resize_instance(&img, &checker, 5, 3);
        assert_eq!(ri, img);
        assert_eq!(rm, checker);
        let big = BinaryMask::from_fn(16, 16, |x, y| (x + y) % 2 == 0);
        let small = resize_nearest(&big, 8, 8);
        assert!(small.bits().iter().all(|&b| b <= 1));
        let flat = RgbImage::from_pixel(7, 7, Rgb([10, 20, 30]));
        assert!(resize_bilinear(&flat, 3, 11).pixels().all(|p| p.0 == [10, 20, 30]));
    }

    #[test]
    fn zero_jitter_corner() {
        let anchor = BBox::new(80.0, 90.0, 40.0, 20.0);
        assert_eq!(corner_center(&anchor, (1.0, 1.0), (0.0, 0.0)), (120.0, 110.0));
        assert_eq!(corner_center(&anchor, (-1.0, 1.0), (0.0, 0.0)), (80.0, 110.0));
    }

    #[test]
    fn placement_keeps_half_in_frame() {
        let p = PlacementParams::default();
        let anchor = BBox::new(0.0, 0.0, 10.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            if let Ok(pl) = draw_placement(&anchor, 0, 200, 100, (60, 40), &p, &mut rng) {
                assert!(2 * pl.in_frame_area(200, 100) >= 60 * 40);
            }
        }
        let replay = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            draw_placement(&BBox::new(50.0, 40.0, 30.0, 20.0), 0, 200, 100, (20, 20), &p, &mut r).unwrap()
        };
        assert_eq!(replay(9), replay(9));
    }

    #[test]
    fn composite_partition() {
        let host = RgbImage::from_fn(8, 8, |x, y| Rgb([x as u8, y as u8, 200]));
        let crop = RgbImage::from_pixel(4, 4, Rgb([1, 2, 3]));
        let mask = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let (padded, m) = pad_zeros(&crop, &mask, (-1, 3), 8, 8);
        let out = composite_pixels(&host, &padded, &m);
        for (x, y, p) in out.enumerate_pixels() {
            let want = if x == 0 && (3..7).contains(&y) { Rgb([1, 2, 3]) } else { *host.get_pixel(x, y) };
            assert_eq!(*p, want, "({x},{y})");
        }
        let none = BinaryMask::new(8, 8);
        assert_eq!(composite_pixels(&host, &RgbImage::new(8, 8), &none), host);
    }

    #[test]
    fn blending_constant_field_stays_constant() {
        let mut img = RgbImage::from_pixel(12, 12, Rgb([50, 60, 70]));
        let m = BinaryMask::from_rect(12, 12, PixelRect::new(3, 3, 5, 5));
        for mode in [Blending::Gaussian5x5, Blending::Averaging5x5] {
            blend(&mut img, &m, mode);
            assert!(img.pixels().all(|p| p.0 == [50, 60, 70]));
        }
    }

    #[test]
    fn blending_matches_direct_convolution() {
        let src = RgbImage::from_fn(10, 10, |x, y| Rgb([(x * 25) as u8, (y * 25) as u8, ((x * y) % 256) as u8]));
        let m = BinaryMask::from_rect(10, 10, PixelRect::new(4, 4, 3, 3));
        let mut out = src.clone();
        blend(&mut out, &m, Blending::Gaussian5x5);
        let k = [1u32, 4, 6, 4, 1];
        // pixel (2,2) is exactly 2 px from the paste corner
        let (x, y) = (2i64, 2i64);
        let mut acc = 0u32;
        for j in 0..5 {
            for i in 0..5 {
                let sx = (x + i - 2).clamp(0, 9) as u32;
                let sy = (y + j - 2).clamp(0, 9) as u32;
                acc += k[i as usize] * k[j as usize] * src.get_pixel(sx, sy)[0] as u32;
            }
        }
        assert_eq!(out.get_pixel(2, 2)[0] as u32, (acc + 128) / 256);
        // 3 px away: untouched
        assert_eq!(out.get_pixel(1, 1), src.get_pixel(1, 1));
        assert_eq!(out.get_pixel(5, 5), src.get_pixel(5, 5));
    }

    #[test]
    fn occlusion_cases() {
        let mut objs = vec![
            AnnotatedObject::new("box", BBox::new(10.0, 10.0, 10.0, 10.0)),
            AnnotatedObject::new("tiny", BBox::new(30.0, 30.0, 2.0, 2.0)),
            AnnotatedObject::new("far", BBox::new(50.0, 50.0, 5.0, 5.0)),
        ];
        let mut m = BinaryMask::from_rect(64, 64, PixelRect::new(0, 0, 15, 64));
        for y in 29..33 {
            for x in 29..33 {
                m.set(x, y, true);
            }
        }
        let removed = update_occlusions(&mut objs, &m, 64, 64, 0.05);
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].label, "tiny");
        assert_eq!(objs[0].bbox, BBox::new(15.0, 10.0, 5.0, 10.0));
        assert!(objs[0].is_edited());
        assert_eq!(objs[1].bbox, BBox::new(50.0, 50.0, 5.0, 5.0));
        assert!(!objs[1].is_edited());
    }
}
