//! One image through the whole procedure: match, sample, scale, place,
//! composite, blend, update occlusions. Repeated per pasted object.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedImage, AnnotatedObject, BBox};
use crate::bank::{BankEntry, ObjectBank};
use crate::compositor::{
    blend, composite_instances, composite_pixels, draw_placement, draw_scale, pad_zeros,
    resize_instance, update_occlusions, Placement, PlacementParams, RemovedObject,
};
use crate::embedding::{EmbeddingStore, SimilarityMetric};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, InstanceMap};
use crate::matcher::{score_all_pairs, select, CategoryCounter, MatchDecision, SelectionStrategy};

/// Instance draws per paste before the paste is given up.
pub const INSTANCE_ATTEMPTS: usize = 4;

#[derive(Debug, Clone)]
pub struct AugmentParams {
    pub strategy: SelectionStrategy,
    pub metric: SimilarityMetric,
    pub placement: PlacementParams,
    pub objects_per_image: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            strategy: SelectionStrategy::new(crate::matcher::StrategyKind::InstanceBalanced, 3),
            metric: SimilarityMetric::Cosine,
            placement: PlacementParams::default(),
            objects_per_image: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteRecord {
    pub entry_id: String,
    pub category: String,
    pub anchor_label: String,
    pub score: f64,
    pub placement: Placement,
    /// Tight box of the pasted pixels inside the frame.
    pub bbox: BBox,
    pub instance_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteSkip {
    pub category: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CompositeResult {
    pub image: AnnotatedImage,
    /// Instance-labelled mask: original objects are ids `1..=n` in
    /// annotation order, each paste takes the next free id.
    pub instances: InstanceMap,
    pub pastes: Vec<PasteRecord>,
    pub decisions: Vec<MatchDecision>,
    pub skips: Vec<PasteSkip>,
    pub removed: Vec<RemovedObject>,
    /// No object could anchor a paste; the image is unchanged.
    pub skipped: bool,
    /// Similarity evaluations spent on this image.
    pub similarity_evaluations: u64,
}

/// Instance map of an image's current annotations.
pub fn instance_map_of(image: &AnnotatedImage) -> InstanceMap {
    let mut map = InstanceMap::new(image.width, image.height);
    for (i, o) in image.objects.iter().enumerate() {
        map.paint(&o.occupancy(image.width, image.height), i as u32 + 1);
    }
    map
}

/// A paste ready to be composited.
#[derive(Debug, Clone)]
pub struct PlannedPaste {
    pub entry_id: String,
    pub category: String,
    pub crop: image::RgbImage,
    pub mask: BinaryMask,
    pub placement: Placement,
}

/// Scale and place `entry` next to `anchor`. Fails with
/// [`Error::Unplaceable`] when no size or position works, or when no mask
/// pixel would land in frame.
pub fn plan_paste<R: Rng + ?Sized>(
    entry: &BankEntry,
    anchor: &BBox,
    anchor_index: usize,
    width: u32,
    height: u32,
    params: &PlacementParams,
    rng: &mut R,
) -> Result<PlannedPaste> {
    let (cw, ch) = (entry.crop_image.width(), entry.crop_image.height());
    let dims = draw_scale(cw, ch, width, params, rng)?;
    let (crop, mask) = resize_instance(&entry.crop_image, &entry.crop_mask, dims.0, dims.1);
    let placement = draw_placement(anchor, anchor_index, width, height, dims, params, rng)?;
    let (ox, oy) = placement.origin();
    let visible = (0..mask.height()).any(|y| {
        let fy = oy + y as i64;
        (0..height as i64).contains(&fy)
            && (0..mask.width()).any(|x| {
                let fx = ox + x as i64;
                (0..width as i64).contains(&fx) && mask.get(x, y)
            })
    });
    if !visible {
        return Err(Error::Unplaceable("no mask pixel lands in frame".into()));
    }
    Ok(PlannedPaste {
        entry_id: entry.entry_id.clone(),
        category: entry.category.clone(),
        crop,
        mask,
        placement,
    })
}

/// Composite `plan` into `image`, update occluded annotations and append
/// the pasted object.
pub fn apply_paste(
    image: &mut AnnotatedImage,
    instances: &mut InstanceMap,
    plan: &PlannedPaste,
    params: &PlacementParams,
) -> Result<(BBox, u32, Vec<RemovedObject>)> {
    let (w, h) = (image.width, image.height);
    let (padded, m) = pad_zeros(&plan.crop, &plan.mask, plan.placement.origin(), w, h);
    let rect = m.tight_bbox().ok_or(Error::OutOfFrame)?;
    image.pixels = composite_pixels(&image.pixels, &padded, &m);
    blend(&mut image.pixels, &m, params.blending);
    let removed = update_occlusions(&mut image.objects, &m, w, h, params.visibility_threshold);
    let id = composite_instances(instances, &m);
    let bbox = BBox::from_rect(rect);
    let mut object = AnnotatedObject::new(plan.category.clone(), bbox).with_mask(m);
    object.synthetic = true;
    image.objects.push(object);
    Ok((bbox, id, removed))
}

/// Augment one host image.
///
/// Anchors are the original, non-crowd annotations with the geometry they
/// had before any paste. `counter` is advanced once per selection.
pub fn augment_image<R: Rng + ?Sized>(
    host: &AnnotatedImage,
    bank: &ObjectBank,
    store: &EmbeddingStore,
    params: &AugmentParams,
    counter: &mut CategoryCounter,
    rng: &mut R,
) -> Result<CompositeResult> {
    params.placement.validate()?;
    let mut result = CompositeResult {
        image: host.clone(),
        instances: instance_map_of(host),
        pastes: Vec::new(),
        decisions: Vec::new(),
        skips: Vec::new(),
        removed: Vec::new(),
        skipped: false,
        similarity_evaluations: 0,
    };
    let pairs = match score_all_pairs(host, bank, store, params.metric) {
        Ok(p) => p,
        Err(Error::NoHostObjects) => {
            result.skipped = true;
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    result.similarity_evaluations = pairs.len() as u64;

    for _ in 0..params.objects_per_image {
        let decision = select(&pairs, &params.strategy, counter, rng)?;
        let anchor_index = decision.host_object_index;
        let anchor = host.objects[anchor_index].bbox;
        let mut last_failure = String::new();
        let mut planned = None;
        for _ in 0..INSTANCE_ATTEMPTS {
            let entry = bank.sample_instance(&decision.bank_category, rng)?;
            match plan_paste(entry, &anchor, anchor_index, host.width, host.height, &params.placement, rng) {
                Ok(p) => {
                    planned = Some(p);
                    break;
                }
                Err(Error::Unplaceable(why)) => last_failure = why,
                Err(e) => return Err(e),
            }
        }
        match planned {
            Some(plan) => {
                let (bbox, instance_id, removed) =
                    apply_paste(&mut result.image, &mut result.instances, &plan, &params.placement)?;
                result.removed.extend(removed);
                result.pastes.push(PasteRecord {
                    entry_id: plan.entry_id,
                    category: plan.category,
                    anchor_label: host.objects[anchor_index].label.clone(),
                    score: decision.score,
                    placement: plan.placement,
                    bbox,
                    instance_id,
                });
            }
            None => result.skips.push(PasteSkip {
                category: decision.bank_category.clone(),
                reason: format!("unplaceable: {last_failure}"),
            }),
        }
        result.decisions.push(decision);
    }
    Ok(result)
}
