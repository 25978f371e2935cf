//! Small generated datasets and embedding files.
//!
//! Used by the examples and tests so they run without downloading COCO,
//! VOC or GloVe. Images are flat backgrounds with coloured ellipses; the
//! embeddings group labels into a few semantic clusters so similarity
//! matching has something to find.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::annotation::VOC_CLASSES;
use crate::error::{Error, Result};
use crate::mask::{rle_encode, BinaryMask, LabelImage};

/// Label groups that end up near each other in embedding space.
pub const CLUSTERS: [&[&str]; 4] = [
    &["cat", "dog", "horse", "sheep", "cow", "bird", "giraffe", "zebra", "elephant", "bear"],
    &["car", "bus", "truck", "bicycle", "motorbike", "motorcycle", "train", "aeroplane", "airplane", "boat"],
    &["chair", "sofa", "table", "diningtable", "tvmonitor", "bottle", "plant", "pottedplant", "cup"],
    &["person", "baseball", "field", "racket", "stoplight", "hydrant", "parking", "droplets", "tennis"],
];

fn token_seed(token: &str, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    h.finalize().into()
}

fn gaussianish(rng: &mut ChaCha8Rng) -> f64 {
    // sum of uniforms: cheap, bounded, bell-shaped
    (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() / 2.0
}

/// Deterministic vector for `token`: its cluster centre plus noise, or pure
/// noise for tokens outside every cluster.
pub fn toy_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let cluster = CLUSTERS.iter().position(|c| c.contains(&token));
    let mut noise = ChaCha8Rng::from_seed(token_seed(token, seed));
    match cluster {
        Some(k) => {
            let mut centre = ChaCha8Rng::from_seed(token_seed(&format!("#cluster{k}"), seed));
            (0..dim)
                .map(|_| gaussianish(&mut centre) + 0.35 * gaussianish(&mut noise))
                .collect()
        }
        None => (0..dim).map(|_| gaussianish(&mut noise)).collect(),
    }
}

/// GloVe-format text for `tokens`.
pub fn toy_embeddings<'a>(tokens: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> String {
    let mut out = String::new();
    for t in tokens {
        out.push_str(t);
        for v in toy_vector(t, dim, seed) {
            out.push_str(&format!(" {v:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Every clustered token plus `extra`, written to `path`.
pub fn write_embeddings(path: &Path, extra: &[&str], dim: usize, seed: u64) -> Result<()> {
    let mut tokens: Vec<&str> = CLUSTERS.iter().flat_map(|c| c.iter().copied()).collect();
    for t in extra {
        if !tokens.contains(t) {
            tokens.push(t);
        }
    }
    fs::write(path, toy_embeddings(tokens, dim, seed)).map_err(|e| Error::file(path, e))
}

#[derive(Debug, Clone)]
pub struct ToySpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub categories: Vec<String>,
    /// Relative frequency of each category; equal when empty.
    pub weights: Vec<u32>,
    pub max_objects: usize,
    pub seed: u64,
}

impl ToySpec {
    pub fn new(categories: &[&str], images: usize, seed: u64) -> Self {
        ToySpec {
            images,
            width: 160,
            height: 120,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            weights: Vec::new(),
            max_objects: 3,
            seed,
        }
    }

    pub fn with_weights(mut self, weights: &[u32]) -> Self {
        self.weights = weights.to_vec();
        self
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_max_objects(mut self, n: usize) -> Self {
        self.max_objects = n;
        self
    }
}

/// One generated object: category index, integer box and ellipse mask.
#[derive(Debug, Clone)]
pub struct ToyObject {
    pub category: usize,
    pub rect: (u32, u32, u32, u32),
    pub mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct ToyImage {
    pub pixels: RgbImage,
    pub objects: Vec<ToyObject>,
}

fn category_colour(k: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [220, 60, 60],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
    ];
    PALETTE[k % PALETTE.len()]
}

fn pick_category(spec: &ToySpec, rng: &mut ChaCha8Rng) -> usize {
    if spec.weights.is_empty() {
        return rng.random_range(0..spec.categories.len());
    }
    let total: u32 = spec.weights.iter().sum();
    let mut r = rng.random_range(0..total);
    for (i, &w) in spec.weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    spec.weights.len() - 1
}

/// Generate image `index` of `spec`. Later objects are drawn over earlier ones.
pub fn toy_image(spec: &ToySpec, index: usize) -> ToyImage {
    let mut rng = ChaCha8Rng::from_seed(token_seed(&format!("image{index}"), spec.seed));
    let (w, h) = (spec.width, spec.height);
    let tint: [u8; 3] = std::array::from_fn(|_| rng.random_range(20..90));
    let mut pixels = RgbImage::from_fn(w, h, |x, y| {
        Rgb([
            tint[0].saturating_add((x * 40 / w) as u8),
            tint[1].saturating_add((y * 40 / h) as u8),
            tint[2],
        ])
    });
    let count = rng.random_range(1..=spec.max_objects.max(1));
    let mut objects = Vec::new();
    for _ in 0..count {
        let category = pick_category(spec, &mut rng);
        let max_side = (w.min(h) / 2).max(17);
        let ow = rng.random_range(16..=max_side).min(w);
        let oh = rng.random_range(16..=max_side).min(h);
        let x0 = rng.random_range(0..=w - ow);
        let y0 = rng.random_range(0..=h - oh);
        let (cx, cy) = (x0 as f64 + ow as f64 / 2.0, y0 as f64 + oh as f64 / 2.0);
        let (rx, ry) = (ow as f64 / 2.0, oh as f64 / 2.0);
        let mask = BinaryMask::from_fn(w, h, |x, y| {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            dx * dx + dy * dy <= 1.0
        });
        let base = category_colour(category);
        let shade: i16 = rng.random_range(-25..=25);
        for y in y0..y0 + oh {
            for x in x0..x0 + ow {
                if mask.get(x, y) {
                    let stripe = if (x + y) % 6 < 3 { 0 } else { 18 };
                    let px = base.map(|c| (c as i16 + shade - stripe).clamp(0, 255) as u8);
                    pixels.put_pixel(x, y, Rgb(px));
                }
            }
        }
        objects.push(ToyObject {
            category,
            rect: (x0, y0, ow, oh),
            mask,
        });
    }
    // visible masks after overdraw
    for i in 0..objects.len() {
        for j in i + 1..objects.len() {
            let cut = objects[i].mask.minus(&objects[j].mask);
            objects[i].mask = cut;
        }
    }
    objects.retain(|o| !o.mask.is_empty());
    for o in &mut objects {
        let r = o.mask.tight_bbox().expect("non-empty");
        o.rect = (r.x, r.y, r.w, r.h);
    }
    ToyImage { pixels, objects }
}

fn ellipse_polygon(rect: (u32, u32, u32, u32)) -> Vec<f64> {
    let (x, y, w, h) = rect;
    let (cx, cy) = (x as f64 + w as f64 / 2.0, y as f64 + h as f64 / 2.0);
    (0..24)
        .flat_map(|k| {
            let t = k as f64 / 24.0 * std::f64::consts::TAU;
            [cx + w as f64 / 2.0 * t.cos(), cy + h as f64 / 2.0 * t.sin()]
        })
        .map(|v| (v * 100.0).round() / 100.0)
        .collect()
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(Error::from)
}

/// Write a COCO-style dataset (`annotations.json` + `images/`) under `dir`.
///
/// Even images store masks as run-length grids, odd images as polygons
/// (objects partly hidden by others always get run-length grids).
pub fn write_coco(dir: &Path, spec: &ToySpec) -> Result<PathBuf> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::file(&images_dir, e))?;
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next_ann = 1u64;
    for i in 0..spec.images {
        let toy = toy_image(spec, i);
        let id = i as u64 + 1;
        let file_name = format!("{id:06}.png");
        save_png(&toy.pixels, &images_dir.join(&file_name))?;
        images.push(json!({"id": id, "file_name": file_name, "width": spec.width, "height": spec.height}));
        for o in &toy.objects {
            let (x, y, w, h) = o.rect;
            let full_ellipse = o.mask.count_ones() as f64 >= 0.9 * std::f64::consts::PI * w as f64 * h as f64 / 4.0;
            let segmentation = if i % 2 == 1 && full_ellipse {
                json!([ellipse_polygon(o.rect)])
            } else {
                json!({"counts": rle_encode(&o.mask), "size": [spec.height, spec.width]})
            };
            annotations.push(json!({
                "id": next_ann,
                "image_id": id,
                "category_id": o.category + 1,
                "bbox": [x, y, w, h],
                "area": o.mask.count_ones(),
                "iscrowd": 0,
                "segmentation": segmentation,
            }));
            next_ann += 1;
        }
    }
    let categories: Vec<_> = spec
        .categories
        .iter()
        .enumerate()
        .map(|(k, name)| json!({"id": k + 1, "name": name, "supercategory": "toy"}))
        .collect();
    let doc = json!({
        "info": {"description": "generated toy dataset", "version": "1"},
        "licenses": [],
        "images": images,
        "annotations": annotations,
        "categories": categories,
    });
    let path = dir.join("annotations.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
    f.write_all(serde_json::to_string_pretty(&doc)?.as_bytes())
        .map_err(|e| Error::file(&path, e))?;
    Ok(dir.to_path_buf())
}

/// Write a VOC-style dataset under `dir`: `Annotations/`, `JPEGImages/`,
/// `SegmentationObject/` (instance ids) and `SegmentationClass/` (class
/// indices in the standard VOC order, extras numbered after).
pub fn write_voc(dir: &Path, spec: &ToySpec) -> Result<PathBuf> {
    let sub = |n: &str| dir.join(n);
    for d in ["Annotations", "JPEGImages", "SegmentationObject", "SegmentationClass"] {
        fs::create_dir_all(sub(d)).map_err(|e| Error::file(&sub(d), e))?;
    }
    let mut extras: Vec<&String> = spec
        .categories
        .iter()
        .filter(|c| !VOC_CLASSES.contains(&c.as_str()))
        .collect();
    extras.sort();
    let class_index = |name: &str| -> u16 {
        match VOC_CLASSES.iter().position(|c| *c == name) {
            Some(i) => i as u16 + 1,
            None => (VOC_CLASSES.len() + 1 + extras.iter().position(|e| *e == name).unwrap()) as u16,
        }
    };
    for i in 0..spec.images {
        let toy = toy_image(spec, i);
        let id = format!("toy_{i:06}");
        save_png(&toy.pixels, &sub("JPEGImages").join(format!("{id}.png")))?;
        let n = (spec.width * spec.height) as usize;
        let mut inst = vec![0u16; n];
        let mut class = vec![0u16; n];
        let mut xml = format!(
            "<annotation>\n  <folder>toy</folder>\n  <filename>{id}.png</filename>\n  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>\n  <segmented>1</segmented>\n",
            spec.width, spec.height
        );
        for (k, o) in toy.objects.iter().enumerate() {
            let name = &spec.categories[o.category];
            let (x, y, w, h) = o.rect;
            xml.push_str(&format!(
                "  <object>\n    <name>{name}</name>\n    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>\n",
                x + 1,
                y + 1,
                x + w,
                y + h
            ));
            for py in 0..spec.height {
                for px in 0..spec.width {
                    if o.mask.get(px, py) {
                        let at = (py * spec.width + px) as usize;
                        inst[at] = k as u16 + 1;
                        class[at] = class_index(name);
                    }
                }
            }
        }
        xml.push_str("</annotation>\n");
        let xml_path = sub("Annotations").join(format!("{id}.xml"));
        fs::write(&xml_path, xml).map_err(|e| Error::file(&xml_path, e))?;
        for (d, values) in [("SegmentationObject", inst), ("SegmentationClass", class)] {
            LabelImage {
                width: spec.width,
                height: spec.height,
                values,
            }
            .save_png(&sub(d).join(format!("{id}.png")))?;
        }
    }
    Ok(dir.to_path_buf())
}
