//! Dataset-level commands behind the `sempaste` binary.
//!
//! `cmd_augment` runs one epoch in chunks of images. Decoding and writing
//! run on a worker pool; selection and compositing run in dataset order on
//! one thread, each image with its own seeded generator, so the worker
//! count never changes the output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{mark_partial, BBox, Dataset, DatasetFormat, DatasetWriter, ImageRecord};
use crate::augment::{apply_paste, augment_image, instance_map_of, plan_paste, INSTANCE_ATTEMPTS};
use crate::bank::{build_bank, write_json, BuildReport, MaskSource, ObjectBank};
use crate::compositor::RemovedObject;
use crate::config::{load_ap_table, AugmentationConfig, CounterInit};
use crate::embedding::{vocabulary_for, EmbeddingStore};
use crate::error::{Error, Result};
use crate::matcher::{score_all_pairs, select, CategoryCounter, SelectionStrategy, StrategyKind};
use crate::rng::image_rng;

/// Images decoded, augmented and written per round.
pub const CHUNK: usize = 16;
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const RUN_MANIFEST_FILE: &str = "augment_manifest.json";

/// Load only the vectors needed for `labels`, with substitutions applied.
pub fn load_store<'a>(
    path: &Path,
    dim: Option<usize>,
    labels: impl IntoIterator<Item = &'a str>,
    substitutions: &BTreeMap<String, String>,
) -> Result<EmbeddingStore> {
    let vocab = vocabulary_for(labels, substitutions);
    Ok(EmbeddingStore::from_path(path, dim, Some(&vocab))?.with_substitutions(substitutions))
}

fn embedding_path(config: &AugmentationConfig) -> Result<PathBuf> {
    config.resolved_embedding_path().ok_or_else(|| {
        Error::Config("no embedding file: set embedding_path, --embeddings or SEMPASTE_EMBEDDINGS".into())
    })
}

#[derive(Debug, Clone)]
pub struct BuildBankArgs {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub masks: MaskSource,
    pub out: PathBuf,
    pub embeddings: PathBuf,
    pub embedding_dim: Option<usize>,
    pub substitutions: BTreeMap<String, String>,
}

pub fn cmd_build_bank(args: &BuildBankArgs) -> Result<BuildReport> {
    let dataset = Dataset::open(args.format, &args.dataset)?;
    let labels = dataset.labels();
    let store = load_store(
        &args.embeddings,
        args.embedding_dim,
        labels.iter().map(String::as_str),
        &args.substitutions,
    )?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::file(&args.out, e))?;
    let (_, report) = build_bank(&dataset, &store, &args.masks, Some(&args.out))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteEntry {
    pub image_id: String,
    pub entry_id: String,
    pub category: String,
    pub anchor_label: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub image_id: String,
    pub category: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalEntry {
    pub image_id: String,
    #[serde(flatten)]
    pub object: RemovedObject,
}

/// Outcome of one augmentation epoch. Wall time is kept out of the
/// serialized form so reports from equal configs compare byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub fingerprint: String,
    pub seed: u64,
    pub epoch: u64,
    pub images_total: usize,
    pub images_written: usize,
    pub total_pastes: u64,
    pub pastes_per_category: BTreeMap<String, u64>,
    pub skip_reasons: BTreeMap<String, u64>,
    pub pastes: Vec<PasteEntry>,
    pub skips: Vec<SkipEntry>,
    pub removed_objects: Vec<RemovalEntry>,
    pub counter_final: BTreeMap<String, u64>,
    pub similarity_evaluations: BTreeMap<String, u64>,
    pub errors: Vec<String>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunReport {
    fn skip(&mut self, image_id: &str, category: Option<&str>, reason: &str) {
        let key = reason.split(':').next().unwrap_or(reason).to_string();
        *self.skip_reasons.entry(key).or_insert(0) += 1;
        self.skips.push(SkipEntry {
            image_id: image_id.to_string(),
            category: category.map(str::to_string),
            reason: reason.to_string(),
        });
    }
}

#[derive(Debug, Clone)]
pub struct AugmentArgs {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub bank: PathBuf,
    pub out: PathBuf,
    pub config: AugmentationConfig,
    /// Worker threads for decoding and writing; `None` uses all cores.
    pub workers: Option<usize>,
}

/// Everything an epoch needs besides the images themselves.
pub struct AugmentContext {
    pub dataset: Dataset,
    pub store: EmbeddingStore,
    pub bank: ObjectBank,
    pub strategy: SelectionStrategy,
    pub config: AugmentationConfig,
}

impl AugmentContext {
    /// Open dataset, embeddings and bank; fail before any work if a label
    /// cannot be resolved or the strategy lacks its tables.
    pub fn open(dataset: &Path, format: DatasetFormat, bank: &Path, config: &AugmentationConfig) -> Result<Self> {
        config.validate()?;
        let dataset = Dataset::open(format, dataset)?;
        let bank_categories = ObjectBank::saved_categories(bank)?;
        let labels: BTreeSet<String> = dataset.labels().into_iter().chain(bank_categories).collect();
        let store = load_store(
            &embedding_path(config)?,
            config.embedding_dim,
            labels.iter().map(String::as_str),
            &config.substitutions,
        )?;
        store.resolve_all(labels.iter().map(String::as_str))?;
        let bank = ObjectBank::load(bank, &store)?;
        let mut strategy = config.strategy();
        match config.strategy {
            StrategyKind::BaselineMap => {
                let path = config.ap_table.as_ref().expect("validated");
                strategy = strategy.with_ap_table(load_ap_table(path)?);
                strategy.check_categories(bank.category_names())?;
            }
            StrategyKind::Cooccurrence => {
                let table = bank
                    .cooccurrence()
                    .cloned()
                    .ok_or_else(|| Error::Config("bank has no co-occurrence table".into()))?;
                strategy = strategy.with_cooccurrence(table);
            }
            _ => {}
        }
        strategy.validate()?;
        Ok(AugmentContext {
            dataset,
            store,
            bank,
            strategy,
            config: config.clone(),
        })
    }

    /// Fresh counter for the configured epoch.
    pub fn counter(&self) -> CategoryCounter {
        match self.config.counter_init {
            CounterInit::Zero => CategoryCounter::new(self.config.epoch),
            CounterInit::DatasetFrequency => {
                let banked: BTreeSet<&str> = self.bank.category_names().collect();
                let base = self
                    .dataset
                    .label_counts()
                    .into_iter()
                    .filter(|(k, _)| banked.contains(k.as_str()))
                    .collect();
                CategoryCounter::seeded(self.config.epoch, base)
            }
        }
    }
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

/// Run one epoch over every image and write the augmented dataset.
pub fn cmd_augment(args: &AugmentArgs) -> Result<RunReport> {
    let started = Instant::now();
    if args.workers == Some(0) {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    let ctx = AugmentContext::open(&args.dataset, args.format, &args.bank, &args.config)?;
    let result = run_epoch(&ctx, &args.out, args.workers);
    let mut report = result.inspect_err(|e| mark_partial(&args.out, e))?;
    report.wall_time = started.elapsed();
    Ok(report)
}

/// Order in which an epoch visits the dataset. Like a training loader it
/// is reshuffled every epoch, so the balancing counter sees images in a
/// different sequence each time. Depends only on `seed` and `epoch`.
pub fn visit_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut image_rng(seed, epoch, "", "visit_order"));
    order
}

fn run_epoch(ctx: &AugmentContext, out: &Path, workers: Option<usize>) -> Result<RunReport> {
    let cfg = &ctx.config;
    let params = cfg.augment_params(ctx.strategy.clone());
    let pool = thread_pool(workers)?;
    let writer = DatasetWriter::create(&ctx.dataset, out)?;
    let mut counter = ctx.counter();
    let mut report = RunReport {
        fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        epoch: cfg.epoch,
        images_total: ctx.dataset.len(),
        notes: vec![
            "pasted objects are written with iscrowd 0 and synthetic true".into(),
            "only original, non-crowd annotations anchor pastes".into(),
        ],
        ..RunReport::default()
    };
    report.errors.extend(ctx.dataset.errors.iter().map(|e| e.to_string()));

    let mut records: Vec<Option<ImageRecord>> = vec![None; ctx.dataset.len()];
    let indices = visit_order(ctx.dataset.len(), cfg.seed, cfg.epoch);
    for chunk in indices.chunks(CHUNK) {
        let decoded = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| ctx.dataset.load_image(i))
                .collect::<Vec<_>>()
        });

        let mut outputs = Vec::with_capacity(chunk.len());
        for (&i, loaded) in chunk.iter().zip(decoded) {
            let image_id = &ctx.dataset.images[i].image_id;
            let host = match loaded {
                Ok(img) => img,
                Err(e) => {
                    report.errors.push(e.to_string());
                    report.skip(image_id, None, "image_error");
                    continue;
                }
            };
            let mut rng = image_rng(cfg.seed, cfg.epoch, image_id, "augment");
            if cfg.probability < 1.0 && rng.random::<f64>() >= cfg.probability {
                report.skip(image_id, None, "not_selected");
                outputs.push((i, host));
                continue;
            }
            let r = augment_image(&host, &ctx.bank, &ctx.store, &params, &mut counter, &mut rng)?;
            report
                .similarity_evaluations
                .insert(image_id.clone(), r.similarity_evaluations);
            if r.skipped {
                report.skip(image_id, None, "no_anchor");
            }
            for s in &r.skips {
                report.skip(image_id, Some(&s.category), &s.reason);
            }
            for p in &r.pastes {
                *report.pastes_per_category.entry(p.category.clone()).or_insert(0) += 1;
                report.pastes.push(PasteEntry {
                    image_id: image_id.clone(),
                    entry_id: p.entry_id.clone(),
                    category: p.category.clone(),
                    anchor_label: p.anchor_label.clone(),
                    bbox: p.bbox,
                });
            }
            report.removed_objects.extend(r.removed.into_iter().map(|object| RemovalEntry {
                image_id: image_id.clone(),
                object,
            }));
            outputs.push((i, r.image));
        }

        let written = pool.install(|| {
            outputs
                .par_iter()
                .map(|(i, img)| writer.write_image(img).map(|r| (*i, r)))
                .collect::<Result<Vec<_>>>()
        })?;
        for (i, r) in written {
            records[i] = Some(r);
        }
    }
    let records: Vec<ImageRecord> = records.into_iter().flatten().collect();
    writer.finish(&records)?;

    report.images_written = records.len();
    report.total_pastes = report.pastes.len() as u64;
    report.counter_final = counter.counts().clone();
    write_json(&out.join(RUN_REPORT_FILE), &report)?;
    write_json(
        &out.join(RUN_MANIFEST_FILE),
        &serde_json::json!({
            "fingerprint": report.fingerprint,
            "format": ctx.dataset.format(),
            "epoch": cfg.epoch,
            "seed": cfg.seed,
            "images": records.len(),
            "config": cfg,
        }),
    )?;
    Ok(report)
}

/// Balance summary of a category histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    /// Largest count over smallest count.
    pub max_min_ratio: f64,
    /// Shannon entropy of the category distribution, in bits.
    pub entropy_bits: f64,
    /// Entropy divided by its maximum, `log2(categories)`; 1 when balanced.
    pub normalized_entropy: f64,
}

impl CategoryStats {
    pub fn from_counts(counts: BTreeMap<String, u64>) -> Result<Self> {
        let counts: BTreeMap<String, u64> = counts.into_iter().filter(|(_, v)| *v > 0).collect();
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::InvalidArgument("no annotated objects to summarize".into()));
        }
        let max = *counts.values().max().expect("non-empty");
        let min = *counts.values().min().expect("non-empty");
        let entropy_bits = -counts
            .values()
            .map(|&c| {
                let p = c as f64 / total as f64;
                p * p.log2()
            })
            .sum::<f64>();
        let k = counts.len() as f64;
        let normalized_entropy = if k > 1.0 { entropy_bits / k.log2() } else { 1.0 };
        Ok(CategoryStats {
            counts,
            total,
            max_min_ratio: max as f64 / min as f64,
            entropy_bits,
            normalized_entropy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub before: CategoryStats,
    pub after: Option<CategoryStats>,
}

#[derive(Debug, Clone)]
pub struct StatsArgs {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    /// An augmented copy of the dataset, in the same format.
    pub augmented: Option<PathBuf>,
    /// A run report; the "after" counts are derived from its pastes and removals.
    pub report: Option<PathBuf>,
}

pub fn cmd_stats(args: &StatsArgs) -> Result<StatsReport> {
    let dataset = Dataset::open(args.format, &args.dataset)?;
    let before = dataset.label_counts();
    let after = match (&args.augmented, &args.report) {
        (Some(dir), _) => Some(Dataset::open(args.format, dir)?.label_counts()),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            let run: RunReport = serde_json::from_str(&text)?;
            let mut counts = before.clone();
            for (k, v) in &run.pastes_per_category {
                *counts.entry(k.clone()).or_insert(0) += v;
            }
            for r in &run.removed_objects {
                if let Some(c) = counts.get_mut(&r.object.label) {
                    *c = c.saturating_sub(1);
                }
            }
            Some(counts)
        }
        (None, None) => None,
    };
    Ok(StatsReport {
        before: CategoryStats::from_counts(before)?,
        after: after.map(CategoryStats::from_counts).transpose()?,
    })
}

#[derive(Debug, Clone)]
pub struct PreviewArgs {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub bank: PathBuf,
    pub config: AugmentationConfig,
    pub image_ids: Vec<String>,
    pub n_variants: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewItem {
    pub image_id: String,
    pub variant: usize,
    pub category: String,
    pub entry_id: String,
    pub path: PathBuf,
}

const OUTLINE: Rgb<u8> = Rgb([255, 32, 32]);
const GAP: u32 = 4;

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn draw_box(img: &mut RgbImage, rect: (i64, i64, i64, i64), colour: Rgb<u8>) {
    let (x0, y0, x1, y1) = rect;
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, colour);
        }
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, fg: Rgb<u8>, bg: Rgb<u8>) {
    for (k, ch) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(ch).unwrap_or([0; 8]);
        for (gy, row) in glyph.iter().enumerate() {
            for gx in 0..8 {
                let (px, py) = (x + k as i64 * 8 + gx, y + gy as i64);
                if px < 0 || py < 0 || px as u32 >= img.width() || py as u32 >= img.height() {
                    continue;
                }
                let on = row >> gx & 1 == 1;
                img.put_pixel(px as u32, py as u32, if on { fg } else { bg });
            }
        }
    }
}

/// Original on the left, augmented on the right with the paste boxed and labelled.
pub fn side_by_side(original: &RgbImage, augmented: &RgbImage, bbox: &BBox, label: &str) -> RgbImage {
    let (w, h) = original.dimensions();
    let mut canvas = RgbImage::from_pixel(2 * w + GAP, h, Rgb([255, 255, 255]));
    image::imageops::replace(&mut canvas, original, 0, 0);
    let mut right = augmented.clone();
    let (x0, y0) = (bbox.x.floor() as i64, bbox.y.floor() as i64);
    let (x1, y1) = ((bbox.x + bbox.w).ceil() as i64 - 1, (bbox.y + bbox.h).ceil() as i64 - 1);
    draw_box(&mut right, (x0, y0, x1, y1), OUTLINE);
    let ty = if y0 >= 9 { y0 - 9 } else { y1 + 2 };
    draw_text(&mut right, x0, ty.min(h as i64 - 8), label, Rgb([255, 255, 255]), OUTLINE);
    image::imageops::replace(&mut canvas, &right, (w + GAP) as i64, 0);
    canvas
}

/// Write `n_variants` side-by-side previews per requested image. All
/// variants of an image paste the same category, each with a different
/// bank instance while the category has enough of them.
pub fn cmd_preview(args: &PreviewArgs) -> Result<Vec<PreviewItem>> {
    if args.image_ids.is_empty() {
        return Err(Error::InvalidArgument("preview needs at least one image id".into()));
    }
    if args.n_variants == 0 {
        return Err(Error::InvalidArgument("n_variants must be at least 1".into()));
    }
    let ctx = AugmentContext::open(&args.dataset, args.format, &args.bank, &args.config)?;
    let cfg = &ctx.config;
    let placement = cfg.placement_params();
    std::fs::create_dir_all(&args.out).map_err(|e| Error::file(&args.out, e))?;
    let mut items = Vec::new();
    for id in &args.image_ids {
        let index = ctx.dataset.find(id).ok_or_else(|| Error::UnknownImage(id.clone()))?;
        let host = ctx.dataset.load_image(index)?;
        let mut rng = image_rng(cfg.seed, cfg.epoch, id, "preview");
        let pairs = score_all_pairs(&host, &ctx.bank, &ctx.store, cfg.metric)?;
        let decision = select(&pairs, &ctx.strategy, &mut ctx.counter(), &mut rng)?;
        let anchor = host.objects[decision.host_object_index].bbox;
        let mut pool: Vec<_> = ctx.bank.entries_of(&decision.bank_category)?.collect();
        pool.shuffle(&mut rng);

        for v in 0..args.n_variants {
            let mut vrng = image_rng(cfg.seed, cfg.epoch, id, &format!("preview-{v}"));
            let mut planned = None;
            for k in 0..INSTANCE_ATTEMPTS.max(pool.len()) {
                let entry = pool[(v + k) % pool.len()];
                match plan_paste(entry, &anchor, decision.host_object_index, host.width, host.height, &placement, &mut vrng) {
                    Ok(p) => {
                        planned = Some(p);
                        break;
                    }
                    Err(Error::Unplaceable(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            let plan = planned.ok_or_else(|| {
                Error::Unplaceable(format!("no {} instance fits image {id}", decision.bank_category))
            })?;
            let mut augmented = host.clone();
            let mut instances = instance_map_of(&host);
            let (bbox, _, _) = apply_paste(&mut augmented, &mut instances, &plan, &placement)?;
            let canvas = side_by_side(&host.pixels, &augmented.pixels, &bbox, &plan.category);
            let path = args.out.join(format!("{}_v{v}.png", safe_name(id)));
            canvas.save_with_format(&path, image::ImageFormat::Png)?;
            items.push(PreviewItem {
                image_id: id.clone(),
                variant: v,
                category: plan.category.clone(),
                entry_id: plan.entry_id.clone(),
                path,
            });
        }
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_counts_have_unit_ratio() {
        let s = CategoryStats::from_counts(BTreeMap::from([("a".into(), 5), ("b".into(), 5)])).unwrap();
        assert_eq!(s.max_min_ratio, 1.0);
        assert!((s.entropy_bits - 1.0).abs() < 1e-12);
        assert!((s.normalized_entropy - 1.0).abs() < 1e-12);
        assert!(CategoryStats::from_counts(BTreeMap::new()).is_err());
    }

    #[test]
    fn skewed_counts() {
        let s = CategoryStats::from_counts(BTreeMap::from([("a".into(), 9), ("b".into(), 3)])).unwrap();
        assert_eq!(s.max_min_ratio, 3.0);
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((s.entropy_bits - h).abs() < 1e-12);
    }

    #[test]
    fn text_and_box_stay_inside() {
        let img = RgbImage::from_pixel(40, 30, Rgb([0, 0, 0]));
        let out = side_by_side(&img, &img, &BBox::new(5.0, 12.0, 10.0, 10.0), "giraffe");
        assert_eq!(out.dimensions(), (84, 30));
        assert_eq!(*out.get_pixel(44 + 5, 21), OUTLINE);
        assert_eq!(*out.get_pixel(44 + 14, 16), OUTLINE);
        // label background sits above the box
        assert!((3..11).any(|y| *out.get_pixel(44 + 6, y) == OUTLINE));
        // left half untouched
        assert!((0..40).all(|x| *out.get_pixel(x, 21) == Rgb([0, 0, 0])));
    }
}
