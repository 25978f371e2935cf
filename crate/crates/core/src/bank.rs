//! The object bank: cropped instances with masks, keyed by category.
//!
//! On disk a bank is a directory:
//!
//! ```text
//! manifest.json        ids, categories, provenance, source boxes
//! crops/<id>.png       RGB crop of the source bounding box
//! masks/<id>.png       1-bit mask of the same size
//! build_report.json    per-category counts and skipped objects
//! cooccurrence.json    image-level category co-occurrence counts
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedImage, Dataset};
use crate::embedding::{EmbeddingStore, WordVector};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelImage, PixelRect};
use crate::matcher::CooccurrenceTable;

/// Objects smaller than this on either side are not banked.
pub const MIN_OBJECT_SIDE: u32 = 8;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "build_report.json";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.json";

/// Where instance masks come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSource {
    /// Masks shipped with the dataset.
    GroundTruth,
    /// A directory of class-indexed label images named `<image_id>.png`.
    External(PathBuf),
}

impl std::str::FromStr for MaskSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "" => Err(Error::InvalidArgument("empty mask source".into())),
            "gt" | "ground_truth" => Ok(MaskSource::GroundTruth),
            dir => Ok(MaskSource::External(PathBuf::from(dir))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub entry_id: String,
    pub category: String,
    pub embedding: WordVector,
    pub crop_image: RgbImage,
    pub crop_mask: BinaryMask,
    pub source_image_id: String,
    pub source_bbox: PixelRect,
}

/// Instance mask from a class-indexed label image: pixels of `class` inside
/// `rect`, reduced to their largest 4-connected region. Full-image sized.
pub fn external_instance_mask(labels: &LabelImage, class: u64, rect: PixelRect) -> BinaryMask {
    let hit = BinaryMask::from_fn(rect.w, rect.h, |x, y| {
        u64::from(labels.get(rect.x + x, rect.y + y)) == class
    })
    .largest_component();
    BinaryMask::from_fn(labels.width, labels.height, |x, y| {
        rect.contains(x, y) && hit.get(x - rect.x, y - rect.y)
    })
}

/// Crop object `object_index` and its mask out of `image`.
///
/// `mask` is the object's full-image instance mask; only its part inside
/// the bounding box is kept.
pub fn extract_entry(
    image: &AnnotatedImage,
    object_index: usize,
    mask: &BinaryMask,
    store: &EmbeddingStore,
    entry_id: impl Into<String>,
) -> Result<BankEntry> {
    let object = image.objects.get(object_index).ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no object {object_index}", image.image_id))
    })?;
    let embedding = store.resolve_label(&object.label)?.clone();
    if (mask.width(), mask.height()) != (image.width, image.height) {
        return Err(Error::InvalidArgument("mask size differs from image size".into()));
    }
    let rect = object.bbox.pixel_rect(image.width, image.height);
    let crop_mask = mask.crop(rect);
    if crop_mask.is_empty() {
        return Err(Error::EmptyMask(format!(
            "{} object {object_index} ({})",
            image.image_id, object.label
        )));
    }
    let crop_image = image::imageops::crop_imm(&image.pixels, rect.x, rect.y, rect.w, rect.h).to_image();
    Ok(BankEntry {
        entry_id: entry_id.into(),
        category: object.label.clone(),
        embedding,
        crop_image,
        crop_mask,
        source_image_id: image.image_id.clone(),
        source_bbox: rect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedObject {
    pub image_id: String,
    /// `None` when the whole image was skipped.
    pub object_index: Option<usize>,
    pub label: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub images: usize,
    pub objects_seen: usize,
    pub entries: usize,
    pub per_category: BTreeMap<String, u64>,
    pub skip_counts: BTreeMap<String, u64>,
    pub skipped: Vec<SkippedObject>,
    pub mask_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    category: String,
    source_image_id: String,
    bbox: PixelRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBank {
    entries: Vec<BankEntry>,
    by_category: BTreeMap<String, Vec<usize>>,
    cooccurrence: Option<CooccurrenceTable>,
}

impl ObjectBank {
    pub fn from_entries(entries: Vec<BankEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyBank);
        }
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.entry_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate bank entry id {}", e.entry_id)));
            }
            if e.crop_mask.is_empty() {
                return Err(Error::EmptyMask(e.entry_id.clone()));
            }
            if (e.crop_image.width(), e.crop_image.height()) != (e.crop_mask.width(), e.crop_mask.height()) {
                return Err(Error::InvalidArgument(format!("entry {}: crop and mask sizes differ", e.entry_id)));
            }
            by_category.entry(e.category.clone()).or_default().push(i);
        }
        Ok(ObjectBank {
            entries,
            by_category,
            cooccurrence: None,
        })
    }

    pub fn with_cooccurrence(mut self, table: CooccurrenceTable) -> Self {
        self.cooccurrence = Some(table);
        self
    }

    pub fn cooccurrence(&self) -> Option<&CooccurrenceTable> {
        self.cooccurrence.as_ref()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct categories in label order, each with its embedding.
    pub fn categories(&self) -> impl Iterator<Item = (&str, &WordVector)> {
        self.by_category
            .iter()
            .map(|(c, ids)| (c.as_str(), &self.entries[ids[0]].embedding))
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.by_category.keys().map(String::as_str)
    }

    pub fn entries_of(&self, category: &str) -> Result<impl Iterator<Item = &BankEntry>> {
        let ids = self
            .by_category
            .get(category)
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
        Ok(ids.iter().map(|&i| &self.entries[i]))
    }

    pub fn category_size(&self, category: &str) -> usize {
        self.by_category.get(category).map_or(0, Vec::len)
    }

    /// Uniformly random entry of `category`.
    pub fn sample_instance<R: Rng + ?Sized>(&self, category: &str, rng: &mut R) -> Result<&BankEntry> {
        let ids = self
            .by_category
            .get(category)
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
        Ok(&self.entries[ids[rng.random_range(0..ids.len())]])
    }

    /// Write manifest, crops and masks under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let crops = dir.join("crops");
        let masks = dir.join("masks");
        for d in [&crops, &masks] {
            fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
        }
        self.entries.par_iter().try_for_each(|e| -> Result<()> {
            let path = crops.join(format!("{}.png", e.entry_id));
            e.crop_image
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|err| match err {
                    image::ImageError::IoError(io) => Error::file(&path, io),
                    other => Error::Image(other),
                })?;
            e.crop_mask.save_png(&masks.join(format!("{}.png", e.entry_id)))
        })?;
        let manifest = Manifest {
            version: 1,
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    id: e.entry_id.clone(),
                    category: e.category.clone(),
                    source_image_id: e.source_image_id.clone(),
                    bbox: e.source_bbox,
                })
                .collect(),
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        if let Some(t) = &self.cooccurrence {
            t.save(&dir.join(COOCCURRENCE_FILE))?;
        }
        Ok(())
    }

    /// Read a bank written by [`ObjectBank::save`]. Embeddings are resolved
    /// against `store`; a co-occurrence table is loaded when present.
    pub fn load(dir: &Path, store: &EmbeddingStore) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        store.resolve_all(manifest.entries.iter().map(|e| e.category.as_str()))?;
        let entries = manifest
            .entries
            .into_par_iter()
            .map(|m| {
                let crop_path = dir.join("crops").join(format!("{}.png", m.id));
                let crop_image = image::open(&crop_path)
                    .map_err(|e| Error::annotation(crop_path.display().to_string(), e.to_string()))?
                    .to_rgb8();
                let crop_mask = BinaryMask::load_png(&dir.join("masks").join(format!("{}.png", m.id)))?;
                if (crop_image.width(), crop_image.height()) != (m.bbox.w, m.bbox.h) {
                    return Err(Error::annotation(
                        crop_path.display().to_string(),
                        "crop size differs from manifest bbox",
                    ));
                }
                Ok(BankEntry {
                    embedding: store.resolve_label(&m.category)?.clone(),
                    entry_id: m.id,
                    category: m.category,
                    crop_image,
                    crop_mask,
                    source_image_id: m.source_image_id,
                    source_bbox: m.bbox,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut bank = ObjectBank::from_entries(entries)?;
        let co = dir.join(COOCCURRENCE_FILE);
        if co.exists() {
            bank.cooccurrence = Some(CooccurrenceTable::load(&co)?);
        }
        Ok(bank)
    }

    /// Category names listed in a saved manifest, without decoding crops.
    pub fn saved_categories(dir: &Path) -> Result<Vec<String>> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut cats: Vec<String> = manifest.entries.into_iter().map(|e| e.category).collect();
        cats.sort();
        cats.dedup();
        Ok(cats)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
}

fn skip(image_id: &str, index: Option<usize>, label: Option<&str>, reason: &str) -> SkippedObject {
    SkippedObject {
        image_id: image_id.to_string(),
        object_index: index,
        label: label.map(str::to_string),
        reason: reason.to_string(),
    }
}

fn process_image(
    dataset: &Dataset,
    index: usize,
    store: &EmbeddingStore,
    mask_source: &MaskSource,
) -> (Vec<BankEntry>, Vec<SkippedObject>) {
    let record = &dataset.images[index];
    let whole = |reason: String| {
        let skipped = record
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| skip(&record.image_id, Some(i), Some(&o.label), &reason))
            .collect();
        (Vec::new(), skipped)
    };
    let image = match dataset.load_image(index) {
        Ok(img) => img,
        Err(e) => return whole(format!("image_unreadable: {e}")),
    };
    let masks: Vec<Option<BinaryMask>> = match mask_source {
        MaskSource::GroundTruth => match dataset.ground_truth_masks(&image) {
            Ok(m) => m,
            Err(e) => return whole(format!("mask_unavailable: {e}")),
        },
        MaskSource::External(dir) => {
            let path = dir.join(format!("{}.png", image.image_id));
            let labels = match LabelImage::load_png(&path) {
                Ok(l) if (l.width, l.height) == (image.width, image.height) => l,
                Ok(_) => return whole("mask_unavailable: label image size differs".into()),
                Err(e) => return whole(format!("mask_unavailable: {e}")),
            };
            image
                .objects
                .iter()
                .map(|o| {
                    dataset.class_index(&o.label).map(|class| {
                        external_instance_mask(&labels, class, o.bbox.pixel_rect(image.width, image.height))
                    })
                })
                .collect()
        }
    };

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (k, o) in image.objects.iter().enumerate() {
        let sk = |reason: &str| skip(&image.image_id, Some(k), Some(&o.label), reason);
        if o.crowd {
            skipped.push(sk("crowd"));
            continue;
        }
        let rect = o.bbox.pixel_rect(image.width, image.height);
        if rect.w < MIN_OBJECT_SIDE || rect.h < MIN_OBJECT_SIDE {
            skipped.push(sk("too_small"));
            continue;
        }
        let Some(mask) = masks.get(k).and_then(Option::as_ref) else {
            skipped.push(sk("no_mask"));
            continue;
        };
        match extract_entry(&image, k, mask, store, String::new()) {
            Ok(e) => entries.push(e),
            Err(Error::EmptyMask(_)) => skipped.push(sk("empty_mask")),
            Err(e) => skipped.push(sk(&format!("extract_failed: {e}"))),
        }
    }
    (entries, skipped)
}

/// Crop every usable object of `dataset` into a bank, and persist it to
/// `out` when given. Per-object failures are reported, not fatal.
pub fn build_bank(
    dataset: &Dataset,
    store: &EmbeddingStore,
    mask_source: &MaskSource,
    out: Option<&Path>,
) -> Result<(ObjectBank, BuildReport)> {
    store.resolve_all(dataset.labels().iter().map(String::as_str))?;
    if let MaskSource::External(dir) = mask_source {
        if !dir.is_dir() {
            return Err(Error::InvalidArgument(format!("mask directory {} not found", dir.display())));
        }
    }

    let outcomes: Vec<_> = (0..dataset.len())
        .into_par_iter()
        .map(|i| process_image(dataset, i, store, mask_source))
        .collect();

    let mut report = BuildReport {
        images: dataset.len(),
        objects_seen: dataset.images.iter().map(|r| r.objects.len()).sum(),
        mask_rule: match mask_source {
            MaskSource::GroundTruth => "ground-truth instance masks, verbatim inside the box".into(),
            MaskSource::External(_) => {
                "class-indexed label images, largest 4-connected region of the class inside the box".into()
            }
        },
        ..BuildReport::default()
    };
    for e in &dataset.errors {
        report.skipped.push(skip("", None, None, &format!("annotation_error: {e}")));
    }
    let mut entries = Vec::new();
    for (found, skipped) in outcomes {
        for mut e in found {
            e.entry_id = format!("{:06}", entries.len());
            *report.per_category.entry(e.category.clone()).or_insert(0) += 1;
            entries.push(e);
        }
        report.skipped.extend(skipped);
    }
    for s in &report.skipped {
        let key = s.reason.split(':').next().unwrap_or(&s.reason).to_string();
        *report.skip_counts.entry(key).or_insert(0) += 1;
    }
    report.entries = entries.len();
    for s in &report.skipped {
        log::warn!("bank: skipped {} object {:?}: {}", s.image_id, s.object_index, s.reason);
    }

    let bank = ObjectBank::from_entries(entries)?
        .with_cooccurrence(CooccurrenceTable::from_records(&dataset.images));
    if let Some(dir) = out {
        bank.save(dir)?;
        write_json(&dir.join(REPORT_FILE), &report)?;
    }
    Ok((bank, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{AnnotatedObject, BBox};
    use crate::embedding::WordVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> EmbeddingStore {
        EmbeddingStore::from_vectors([
            WordVector::new("cat", vec![1.0, 0.0]).unwrap(),
            WordVector::new("dog", vec![0.0, 1.0]).unwrap(),
        ])
        .unwrap()
    }

    fn host() -> AnnotatedImage {
        let pixels = RgbImage::from_fn(100, 100, |x, y| image::Rgb([x as u8, y as u8, 7]));
        AnnotatedImage::new("h", pixels, vec![AnnotatedObject::new("cat", BBox::new(10.0, 20.0, 40.0, 40.0))]).unwrap()
    }

    fn entry(id: &str, cat: &str) -> BankEntry {
        BankEntry {
            entry_id: id.into(),
            category: cat.into(),
            embedding: store().resolve_label(cat).unwrap().clone(),
            crop_image: RgbImage::new(2, 2),
            crop_mask: BinaryMask::filled(2, 2),
            source_image_id: "s".into(),
            source_bbox: PixelRect::new(0, 0, 2, 2),
        }
    }

    #[test]
    fn crop_matches_bbox() {
        let h = host();
        let e = extract_entry(&h, 0, &BinaryMask::filled(100, 100), &store(), "e").unwrap();
        assert_eq!((e.crop_image.width(), e.crop_image.height()), (40, 40));
        assert_eq!(e.crop_mask.count_ones(), 1600);
        assert_eq!(e.crop_image.get_pixel(0, 0), h.pixels.get_pixel(10, 20));
        assert_eq!(e.source_bbox, PixelRect::new(10, 20, 40, 40));
    }

    #[test]
    fn mask_outside_bbox_is_empty() {
        let m = BinaryMask::from_rect(100, 100, PixelRect::new(60, 70, 5, 5));
        assert!(matches!(extract_entry(&host(), 0, &m, &store(), "e"), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn external_mask_selects_class_pixels() {
        let mut values = vec![0u16; 100 * 100];
        for y in 25..50 {
            for x in 15..45 {
                values[y * 100 + x] = 12;
            }
        }
        values[30 * 100 + 30] = 3;
        let labels = LabelImage { width: 100, height: 100, values: values.clone() };
        let rect = PixelRect::new(10, 20, 40, 40);
        let m = external_instance_mask(&labels, 12, rect);
        for y in 0..100 {
            for x in 0..100 {
                let expect = rect.contains(x, y) && values[(y * 100 + x) as usize] == 12;
                assert_eq!(m.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn sampling_is_uniform_and_seeded() {
        let bank = ObjectBank::from_entries((0..4).map(|i| entry(&i.to_string(), "cat")).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut freq = [0u32; 4];
        for _ in 0..10_000 {
            let e = bank.sample_instance("cat", &mut rng).unwrap();
            freq[e.entry_id.parse::<usize>().unwrap()] += 1;
        }
        // sigma = sqrt(10000 * 0.25 * 0.75) ~ 43.3
        for f in freq {
            assert!((f as f64 - 2500.0).abs() < 4.0 * 43.3, "{freq:?}");
        }
        assert!(matches!(bank.sample_instance("dog", &mut rng), Err(Error::UnknownCategory(_))));
    }

    #[test]
    fn partition_and_duplicates() {
        let bank = ObjectBank::from_entries(vec![entry("a", "cat"), entry("b", "dog"), entry("c", "cat")]).unwrap();
        assert_eq!(bank.category_size("cat") + bank.category_size("dog"), bank.len());
        assert_eq!(bank.category_names().collect::<Vec<_>>(), ["cat", "dog"]);
        assert!(ObjectBank::from_entries(vec![entry("a", "cat"), entry("a", "dog")]).is_err());
        assert!(matches!(ObjectBank::from_entries(vec![]), Err(Error::EmptyBank)));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let h = host();
        let mask = BinaryMask::from_fn(100, 100, |x, y| (x + y) % 3 != 0);
        let e = extract_entry(&h, 0, &mask, &store(), "000000").unwrap();
        let bank = ObjectBank::from_entries(vec![e]).unwrap();
        bank.save(dir.path()).unwrap();
        let back = ObjectBank::load(dir.path(), &store()).unwrap();
        assert_eq!(back, bank);
    }
}
