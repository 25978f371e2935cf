//! Detection datasets on disk: COCO-style JSON and VOC-style XML.
//!
//! Reading happens in two layers. [`Dataset::open`] parses every annotation
//! record into [`ImageRecord`]s without touching pixels; [`Dataset::load_image`]
//! then decodes one image and rasterizes its instance masks into an
//! [`AnnotatedImage`]. Fields the augmentation never looks at are carried
//! through verbatim so that writing back preserves them.
//!
//! Internally every box is `(x, y, w, h)` with a top-left origin in pixel
//! units; each format's native convention is converted at the boundary.

mod coco;
mod voc;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{rasterize_polygons, rle_counts_from_string, rle_decode, rle_encode, BinaryMask, LabelImage, PixelRect};

pub use voc::VOC_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_rect(rect: PixelRect) -> Self {
        BBox::new(rect.x as f64, rect.y as f64, rect.w as f64, rect.h as f64)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Smallest pixel rectangle covering the box, clipped to `width`×`height`.
    pub fn pixel_rect(&self, width: u32, height: u32) -> PixelRect {
        let x0 = self.x.floor().clamp(0.0, width as f64) as u32;
        let y0 = self.y.floor().clamp(0.0, height as f64) as u32;
        let x1 = (self.x + self.w).ceil().clamp(0.0, width as f64) as u32;
        let y1 = (self.y + self.h).ceil().clamp(0.0, height as f64) as u32;
        PixelRect::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    /// Check the box lies inside a `width`×`height` image and is non-degenerate.
    pub fn validate(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite {
            return Err("bbox has non-finite coordinates".into());
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("bbox has non-positive size {}x{}", self.w, self.h));
        }
        if self.x < 0.0 || self.y < 0.0 {
            return Err(format!("bbox origin ({}, {}) is negative", self.x, self.y));
        }
        // allow float noise from annotation tools
        const SLACK: f64 = 1e-6;
        if self.x + self.w > width as f64 + SLACK || self.y + self.h > height as f64 + SLACK {
            return Err(format!(
                "bbox [{}, {}, {}, {}] exceeds image size {width}x{height}",
                self.x, self.y, self.w, self.h
            ));
        }
        Ok(())
    }
}

/// Instance mask in the form a dataset stores it.
#[derive(Debug, Clone, PartialEq)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { counts: Vec<u32>, height: u32, width: u32 },
    CompressedRle { counts: String, height: u32, width: u32 },
}

impl Segmentation {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Segmentation::Rle {
            counts: rle_encode(mask),
            height: mask.height(),
            width: mask.width(),
        }
    }

    pub fn rasterize(&self, width: u32, height: u32) -> Result<BinaryMask> {
        let check = |w: u32, h: u32| {
            if (w, h) != (width, height) {
                Err(Error::InvalidArgument(format!(
                    "run-length size {w}x{h} differs from image size {width}x{height}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Segmentation::Polygons(p) => Ok(rasterize_polygons(p, width, height)),
            Segmentation::Rle { counts, height: h, width: w } => {
                check(*w, *h)?;
                rle_decode(counts, *w, *h)
            }
            Segmentation::CompressedRle { counts, height: h, width: w } => {
                check(*w, *h)?;
                rle_decode(&rle_counts_from_string(counts)?, *w, *h)
            }
        }
    }
}

/// Format-specific source record, carried through unmodified.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) enum RawRecord {
    #[default]
    None,
    Json(serde_json::Map<String, serde_json::Value>),
    Xml(xmltree::Element),
}

/// One annotated object as stored, without pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub label: String,
    pub bbox: BBox,
    pub segmentation: Option<Segmentation>,
    pub crowd: bool,
    pub synthetic: bool,
    pub(crate) raw: RawRecord,
}

/// One image's annotations as stored, without pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectRecord>,
    pub(crate) raw: RawRecord,
}

#[derive(Debug, Clone)]
pub struct AnnotatedObject {
    pub label: String,
    pub bbox: BBox,
    /// Full-image instance mask, when the dataset provides one.
    pub mask: Option<BinaryMask>,
    pub crowd: bool,
    pub synthetic: bool,
    source: Option<ObjectRecord>,
    edited: bool,
}

impl AnnotatedObject {
    pub fn new(label: impl Into<String>, bbox: BBox) -> Self {
        AnnotatedObject {
            label: label.into(),
            bbox,
            mask: None,
            crowd: false,
            synthetic: false,
            source: None,
            edited: false,
        }
    }

    pub fn with_mask(mut self, mask: BinaryMask) -> Self {
        self.mask = Some(mask);
        self
    }

    /// Whether geometry was changed after reading (occlusion update).
    pub fn is_edited(&self) -> bool {
        self.edited
    }

    pub(crate) fn set_geometry(&mut self, bbox: BBox, mask: Option<BinaryMask>) {
        self.bbox = bbox;
        self.mask = mask;
        self.edited = true;
    }

    /// Pixels this object occupies: its mask, or its box when it has none.
    pub fn occupancy(&self, width: u32, height: u32) -> BinaryMask {
        match &self.mask {
            Some(m) => m.clone(),
            None => BinaryMask::from_rect(width, height, self.bbox.pixel_rect(width, height)),
        }
    }

    fn to_record(&self) -> ObjectRecord {
        match &self.source {
            Some(src) if !self.edited => src.clone(),
            src => ObjectRecord {
                label: self.label.clone(),
                bbox: self.bbox,
                segmentation: self.mask.as_ref().map(Segmentation::from_mask),
                crowd: self.crowd,
                synthetic: self.synthetic,
                raw: src.as_ref().map(|s| s.raw.clone()).unwrap_or_default(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub pixels: RgbImage,
    pub objects: Vec<AnnotatedObject>,
    raw: RawRecord,
}

impl AnnotatedImage {
    /// Assemble an image from parts, checking every box and mask fits.
    pub fn new(
        image_id: impl Into<String>,
        pixels: RgbImage,
        objects: Vec<AnnotatedObject>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        let img = AnnotatedImage {
            file_name: format!("{image_id}.png"),
            image_id,
            width: pixels.width(),
            height: pixels.height(),
            pixels,
            objects,
            raw: RawRecord::None,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.pixels.width(), self.pixels.height()) != (self.width, self.height) {
            return Err(Error::annotation(
                &self.image_id,
                format!(
                    "pixel grid is {}x{}, annotation says {}x{}",
                    self.pixels.width(),
                    self.pixels.height(),
                    self.width,
                    self.height
                ),
            ));
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.bbox
                .validate(self.width, self.height)
                .map_err(|m| Error::annotation(format!("{} object {i}", self.image_id), m))?;
            if let Some(m) = &o.mask {
                if (m.width(), m.height()) != (self.width, self.height) {
                    return Err(Error::annotation(
                        format!("{} object {i}", self.image_id),
                        "mask size differs from image size",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Annotation record for writing. Objects that were not edited keep
    /// their original encoding.
    pub fn to_record(&self) -> ImageRecord {
        ImageRecord {
            image_id: self.image_id.clone(),
            file_name: self.file_name.clone(),
            width: self.width,
            height: self.height,
            objects: self.objects.iter().map(AnnotatedObject::to_record).collect(),
            raw: self.raw.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Coco,
    Voc,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coco" | "coco_json" => Ok(DatasetFormat::Coco),
            "voc" | "voc_xml" => Ok(DatasetFormat::Voc),
            other => Err(Error::InvalidArgument(format!("unknown dataset format {other:?}"))),
        }
    }
}

/// Where a dataset lives and which categories it declares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: DatasetFormat,
    pub image_root: PathBuf,
    pub annotation_source: PathBuf,
    pub categories: Vec<String>,
}

impl DatasetManifest {
    /// Resolve the conventional layout under `path`.
    ///
    /// COCO: `path` is the annotation JSON (images in a sibling `images/`)
    /// or a directory holding `annotations.json` and `images/`.
    /// VOC: `path` is a directory holding `Annotations/` and `JPEGImages/`.
    pub fn locate(format: DatasetFormat, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::InvalidArgument(format!(
                "dataset path {} does not exist",
                path.display()
            )));
        }
        let (image_root, annotation_source) = match format {
            DatasetFormat::Coco if path.is_file() => (
                path.parent().unwrap_or(Path::new(".")).join("images"),
                path.to_path_buf(),
            ),
            DatasetFormat::Coco => (path.join("images"), path.join("annotations.json")),
            DatasetFormat::Voc => (path.join("JPEGImages"), path.join("Annotations")),
        };
        Ok(DatasetManifest {
            format,
            image_root,
            annotation_source,
            categories: Vec::new(),
        })
    }
}

/// A parsed dataset: annotation records plus the errors met while parsing.
#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageRecord>,
    /// Malformed records; the images they belong to are excluded.
    pub errors: Vec<Error>,
    category_ids: Vec<(String, u64)>,
    extra: RawRecord,
    instance_mask_dir: Option<PathBuf>,
}

impl Dataset {
    pub fn open(format: DatasetFormat, path: &Path) -> Result<Self> {
        Self::open_manifest(DatasetManifest::locate(format, path)?)
    }

    pub fn open_manifest(mut manifest: DatasetManifest) -> Result<Self> {
        let parsed = match manifest.format {
            DatasetFormat::Coco => coco::read(&manifest.annotation_source)?,
            DatasetFormat::Voc => voc::read(&manifest.annotation_source)?,
        };
        manifest.categories = parsed.category_ids.iter().map(|(n, _)| n.clone()).collect();
        let instance_mask_dir = match manifest.format {
            DatasetFormat::Voc => manifest
                .annotation_source
                .parent()
                .map(|p| p.join("SegmentationObject")),
            DatasetFormat::Coco => None,
        };
        Ok(Dataset {
            manifest,
            images: parsed.images,
            errors: parsed.errors,
            category_ids: parsed.category_ids,
            extra: parsed.extra,
            instance_mask_dir,
        })
    }

    pub fn format(&self) -> DatasetFormat {
        self.manifest.format
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn find(&self, image_id: &str) -> Option<usize> {
        self.images.iter().position(|r| r.image_id == image_id)
    }

    /// Category id as the format numbers it: COCO `category_id`, or the
    /// 1-based class index used by VOC segmentation label images.
    pub fn class_index(&self, label: &str) -> Option<u64> {
        self.category_ids
            .iter()
            .find(|(n, _)| n == label)
            .map(|&(_, id)| id)
    }

    pub fn category_ids(&self) -> &[(String, u64)] {
        &self.category_ids
    }

    /// Distinct labels used by non-crowd objects, sorted.
    pub fn labels(&self) -> BTreeSet<String> {
        self.images
            .iter()
            .flat_map(|r| r.objects.iter())
            .filter(|o| !o.crowd)
            .map(|o| o.label.clone())
            .collect()
    }

    /// Non-crowd instance counts per label.
    pub fn label_counts(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for o in self.images.iter().flat_map(|r| r.objects.iter()).filter(|o| !o.crowd) {
            *counts.entry(o.label.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn image_path(&self, record: &ImageRecord) -> PathBuf {
        let direct = self.manifest.image_root.join(&record.file_name);
        if direct.exists() || self.manifest.format == DatasetFormat::Coco {
            return direct;
        }
        // VOC filenames occasionally disagree with the extension on disk
        for ext in ["jpg", "png", "jpeg"] {
            let alt = self.manifest.image_root.join(&record.image_id).with_extension(ext);
            if alt.exists() {
                return alt;
            }
        }
        direct
    }

    /// Decode pixels and masks for the record at `index`.
    pub fn load_image(&self, index: usize) -> Result<AnnotatedImage> {
        let record = self
            .images
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("image index {index} out of range")))?;
        let path = self.image_path(record);
        let pixels = image::open(&path)
            .map_err(|e| Error::annotation(path.display().to_string(), e.to_string()))?
            .to_rgb8();
        let objects = record
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let mask = o
                    .segmentation
                    .as_ref()
                    .map(|s| s.rasterize(record.width, record.height))
                    .transpose()
                    .map_err(|e| {
                        Error::annotation(format!("{} object {i}", record.image_id), e.to_string())
                    })?;
                Ok(AnnotatedObject {
                    label: o.label.clone(),
                    bbox: o.bbox,
                    mask,
                    crowd: o.crowd,
                    synthetic: o.synthetic,
                    source: Some(o.clone()),
                    edited: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let image = AnnotatedImage {
            image_id: record.image_id.clone(),
            file_name: record.file_name.clone(),
            width: record.width,
            height: record.height,
            pixels,
            objects,
            raw: record.raw.clone(),
        };
        image.validate()?;
        Ok(image)
    }

    /// Ground-truth instance masks for each object of `image`.
    ///
    /// COCO masks come from the annotation itself. VOC masks come from
    /// `SegmentationObject/<id>.png`, where value `k` marks the `k`-th object.
    pub fn ground_truth_masks(&self, image: &AnnotatedImage) -> Result<Vec<Option<BinaryMask>>> {
        match self.manifest.format {
            DatasetFormat::Coco => Ok(image.objects.iter().map(|o| o.mask.clone()).collect()),
            DatasetFormat::Voc => {
                let dir = self.instance_mask_dir.as_ref().ok_or_else(|| {
                    Error::annotation(&image.image_id, "no instance mask directory")
                })?;
                let path = dir.join(format!("{}.png", image.image_id));
                let labels = LabelImage::load_png(&path)?;
                if (labels.width, labels.height) != (image.width, image.height) {
                    return Err(Error::annotation(
                        path.display().to_string(),
                        "instance mask size differs from image size",
                    ));
                }
                Ok((0..image.objects.len())
                    .map(|k| {
                        let id = k as u16 + 1;
                        let m = BinaryMask::from_fn(labels.width, labels.height, |x, y| {
                            labels.get(x, y) == id
                        });
                        (!m.is_empty()).then_some(m)
                    })
                    .collect())
            }
        }
    }

    /// Iterate over records, decoding each image in turn. Parse errors come first.
    pub fn stream(&self) -> impl Iterator<Item = Result<AnnotatedImage>> + '_ {
        let errors = self
            .errors
            .iter()
            .map(|e| Err(Error::annotation("dataset", e.to_string())));
        errors.chain((0..self.images.len()).map(move |i| self.load_image(i)))
    }
}

/// Owning stream over a dataset: parse errors first, then each decoded image.
pub struct ImageStream {
    dataset: Dataset,
    errors: std::vec::IntoIter<Error>,
    next: usize,
}

impl ImageStream {
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
}

impl Iterator for ImageStream {
    type Item = Result<AnnotatedImage>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(e) = self.errors.next() {
            return Some(Err(e));
        }
        if self.next < self.dataset.images.len() {
            self.next += 1;
            return Some(self.dataset.load_image(self.next - 1));
        }
        None
    }
}

/// Open the dataset `manifest` describes and stream its images.
pub fn read_dataset(manifest: DatasetManifest) -> Result<ImageStream> {
    let mut dataset = Dataset::open_manifest(manifest)?;
    let errors = std::mem::take(&mut dataset.errors).into_iter();
    Ok(ImageStream {
        dataset,
        errors,
        next: 0,
    })
}

struct Parsed {
    images: Vec<ImageRecord>,
    errors: Vec<Error>,
    category_ids: Vec<(String, u64)>,
    extra: RawRecord,
}

/// Output file name for an image: lossless PNG, same stem.
fn lossless_name(file_name: &str) -> String {
    let p = Path::new(file_name);
    match p.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => file_name.to_string(),
        _ => p.with_extension("png").to_string_lossy().into_owned(),
    }
}

/// Writes images and annotations in the source dataset's format.
///
/// [`DatasetWriter::write_image`] may be called from several threads;
/// [`DatasetWriter::finish`] writes the shared annotation index once.
pub struct DatasetWriter<'a> {
    dataset: &'a Dataset,
    out_root: PathBuf,
    image_dir: PathBuf,
    annotation_dir: PathBuf,
}

impl<'a> DatasetWriter<'a> {
    pub fn create(dataset: &'a Dataset, out_root: &Path) -> Result<Self> {
        let (image_dir, annotation_dir) = match dataset.format() {
            DatasetFormat::Coco => (out_root.join("images"), out_root.to_path_buf()),
            DatasetFormat::Voc => (out_root.join("JPEGImages"), out_root.join("Annotations")),
        };
        for d in [&image_dir, &annotation_dir] {
            fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
        }
        Ok(DatasetWriter {
            dataset,
            out_root: out_root.to_path_buf(),
            image_dir,
            annotation_dir,
        })
    }

    pub fn out_root(&self) -> &Path {
        &self.out_root
    }

    /// Write pixels (and, for VOC, the per-image XML). Returns the record
    /// to pass to [`DatasetWriter::finish`].
    pub fn write_image(&self, image: &AnnotatedImage) -> Result<ImageRecord> {
        let mut record = image.to_record();
        record.file_name = lossless_name(&record.file_name);
        let path = self.image_dir.join(&record.file_name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
        image
            .pixels
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::file(&path, io),
                other => Error::Image(other),
            })?;
        if self.dataset.format() == DatasetFormat::Voc {
            let xml_path = self.annotation_dir.join(format!("{}.xml", record.image_id));
            voc::write_record(&record, &xml_path)?;
        }
        Ok(record)
    }

    pub fn finish(&self, records: &[ImageRecord]) -> Result<()> {
        match self.dataset.format() {
            DatasetFormat::Coco => coco::write(
                records,
                &self.dataset.category_ids,
                &self.dataset.extra,
                &self.annotation_dir.join("annotations.json"),
            ),
            DatasetFormat::Voc => Ok(()),
        }
    }
}

/// Write a whole dataset sequentially. On failure a `PARTIAL` marker file is
/// left in `out_root`.
pub fn write_dataset<I>(images: I, dataset: &Dataset, out_root: &Path) -> Result<Vec<ImageRecord>>
where
    I: IntoIterator<Item = AnnotatedImage>,
{
    let run = || -> Result<Vec<ImageRecord>> {
        let writer = DatasetWriter::create(dataset, out_root)?;
        let records = images
            .into_iter()
            .map(|img| writer.write_image(&img))
            .collect::<Result<Vec<_>>>()?;
        writer.finish(&records)?;
        Ok(records)
    };
    run().inspect_err(|e| mark_partial(out_root, e))
}

/// Leave a marker explaining why an output tree is incomplete.
pub fn mark_partial(out_root: &Path, error: &Error) {
    let _ = fs::create_dir_all(out_root);
    let _ = fs::write(out_root.join("PARTIAL"), format!("{error}\n"));
}
