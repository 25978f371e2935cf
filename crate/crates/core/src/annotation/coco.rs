use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{BBox, ImageRecord, ObjectRecord, Parsed, RawRecord, Segmentation};
use crate::error::{Error, Result};

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn as_u32(v: Option<&Value>) -> Option<u32> {
    v.and_then(Value::as_u64).and_then(|n| u32::try_from(n).ok())
}

fn parse_segmentation(v: &Value) -> std::result::Result<Option<Segmentation>, String> {
    match v {
        Value::Null => Ok(None),
        Value::Array(polys) if polys.is_empty() => Ok(None),
        Value::Array(polys) => polys
            .iter()
            .map(|p| {
                p.as_array()
                    .ok_or("polygon is not a list")?
                    .iter()
                    .map(|c| c.as_f64().ok_or("polygon coordinate is not a number"))
                    .collect::<std::result::Result<Vec<f64>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(|p| Some(Segmentation::Polygons(p)))
            .map_err(str::to_string),
        Value::Object(rle) => {
            let size = rle
                .get("size")
                .and_then(Value::as_array)
                .filter(|s| s.len() == 2)
                .ok_or("run-length segmentation without [h, w] size")?;
            let height = as_u32(size.first()).ok_or("bad run-length height")?;
            let width = as_u32(size.get(1)).ok_or("bad run-length width")?;
            match rle.get("counts") {
                Some(Value::String(s)) => Ok(Some(Segmentation::CompressedRle {
                    counts: s.clone(),
                    height,
                    width,
                })),
                Some(Value::Array(c)) => c
                    .iter()
                    .map(|n| as_u32(Some(n)).ok_or("bad run length"))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map(|counts| Some(Segmentation::Rle { counts, height, width }))
                    .map_err(str::to_string),
                _ => Err("run-length segmentation without counts".into()),
            }
        }
        _ => Err("unrecognised segmentation".into()),
    }
}

fn segmentation_json(s: &Segmentation) -> Value {
    match s {
        Segmentation::Polygons(p) => json!(p),
        Segmentation::Rle { counts, height, width } => json!({"counts": counts, "size": [height, width]}),
        Segmentation::CompressedRle { counts, height, width } => {
            json!({"counts": counts, "size": [height, width]})
        }
    }
}

pub(super) fn read(path: &Path) -> Result<Parsed> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut doc: Map<String, Value> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::annotation(path.display().to_string(), e.to_string()))?;
    let loc = path.display().to_string();

    let take_list = |doc: &mut Map<String, Value>, key: &str| -> Result<Vec<Value>> {
        match doc.remove(key) {
            Some(Value::Array(a)) => Ok(a),
            None => Ok(Vec::new()),
            Some(_) => Err(Error::annotation(&loc, format!("`{key}` is not a list"))),
        }
    };
    let categories = take_list(&mut doc, "categories")?;
    let images = take_list(&mut doc, "images")?;
    let annotations = take_list(&mut doc, "annotations")?;

    let mut errors = Vec::new();
    let mut category_ids = Vec::new();
    let mut names: HashMap<u64, String> = HashMap::new();
    for (i, c) in categories.iter().enumerate() {
        let id = c.get("id").and_then(Value::as_u64);
        let name = c.get("name").and_then(Value::as_str);
        match (id, name) {
            (Some(id), Some(name)) => {
                names.insert(id, name.to_string());
                category_ids.push((name.to_string(), id));
            }
            _ => errors.push(Error::annotation(
                format!("{loc}: categories[{i}]"),
                "category needs numeric `id` and `name`",
            )),
        }
    }

    let mut records = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    for (i, v) in images.into_iter().enumerate() {
        let Value::Object(raw) = v else {
            errors.push(Error::annotation(format!("{loc}: images[{i}]"), "not an object"));
            continue;
        };
        let id = raw.get("id").and_then(id_string);
        let file_name = raw.get("file_name").and_then(Value::as_str).map(str::to_string);
        let width = as_u32(raw.get("width"));
        let height = as_u32(raw.get("height"));
        let (Some(image_id), Some(file_name), Some(width), Some(height)) = (id, file_name, width, height) else {
            errors.push(Error::annotation(
                format!("{loc}: images[{i}]"),
                "image needs `id`, `file_name`, `width` and `height`",
            ));
            continue;
        };
        index_of.insert(image_id.clone(), records.len());
        records.push(ImageRecord {
            image_id,
            file_name,
            width,
            height,
            objects: Vec::new(),
            raw: RawRecord::Json(raw),
        });
    }

    let mut bad_images = vec![false; records.len()];
    for (i, v) in annotations.into_iter().enumerate() {
        let Value::Object(raw) = v else {
            errors.push(Error::annotation(format!("{loc}: annotations[{i}]"), "not an object"));
            continue;
        };
        let at = |image: &str| {
            let ann_id = raw.get("id").map(|v| v.to_string()).unwrap_or_else(|| "?".into());
            format!("{loc}: annotations[{i}] (id {ann_id}, image {image})")
        };
        let Some(image_id) = raw.get("image_id").and_then(id_string) else {
            errors.push(Error::annotation(at("?"), "missing `image_id`"));
            continue;
        };
        let Some(&idx) = index_of.get(&image_id) else {
            errors.push(Error::annotation(at(&image_id), "refers to an unknown image"));
            continue;
        };
        let record = &records[idx];
        let parsed = (|| -> std::result::Result<ObjectRecord, String> {
            let cat = raw
                .get("category_id")
                .and_then(Value::as_u64)
                .ok_or("missing `category_id`")?;
            let label = names.get(&cat).ok_or(format!("unknown category_id {cat}"))?.clone();
            let b = raw
                .get("bbox")
                .and_then(Value::as_array)
                .filter(|b| b.len() == 4)
                .ok_or("missing or malformed `bbox`")?;
            let n: Vec<f64> = b.iter().filter_map(Value::as_f64).collect();
            if n.len() != 4 {
                return Err("non-numeric `bbox`".into());
            }
            let bbox = BBox::new(n[0], n[1], n[2], n[3]);
            bbox.validate(record.width, record.height)?;
            let segmentation = raw.get("segmentation").map(parse_segmentation).transpose()?.flatten();
            let crowd = raw.get("iscrowd").is_some_and(|v| v.as_u64() == Some(1) || v.as_bool() == Some(true));
            let synthetic = raw.get("synthetic").and_then(Value::as_bool).unwrap_or(false);
            Ok(ObjectRecord {
                label,
                bbox,
                segmentation,
                crowd,
                synthetic,
                raw: RawRecord::None,
            })
        })();
        match parsed {
            Ok(mut obj) => {
                obj.raw = RawRecord::Json(raw);
                records[idx].objects.push(obj);
            }
            Err(msg) => {
                errors.push(Error::annotation(at(&image_id), msg));
                bad_images[idx] = true;
            }
        }
    }

    let images = records
        .into_iter()
        .zip(bad_images)
        .filter_map(|(r, bad)| (!bad).then_some(r))
        .collect();
    doc.insert("categories".into(), Value::Array(categories));
    Ok(Parsed {
        images,
        errors,
        category_ids,
        extra: RawRecord::Json(doc),
    })
}

fn bbox_of(ann: &Map<String, Value>) -> Option<BBox> {
    let b = ann.get("bbox")?.as_array()?;
    let n: Vec<f64> = b.iter().filter_map(Value::as_f64).collect();
    (n.len() == 4).then(|| BBox::new(n[0], n[1], n[2], n[3]))
}

pub(super) fn write(
    records: &[ImageRecord],
    category_ids: &[(String, u64)],
    extra: &RawRecord,
    path: &Path,
) -> Result<()> {
    let mut doc = match extra {
        RawRecord::Json(m) => m.clone(),
        _ => Map::new(),
    };

    let mut categories = match doc.remove("categories") {
        Some(Value::Array(c)) => c,
        _ => category_ids
            .iter()
            .map(|(name, id)| json!({"id": id, "name": name}))
            .collect(),
    };
    // labels introduced by pastes get fresh ids in order of first appearance
    let mut ids: BTreeMap<String, u64> = BTreeMap::new();
    for (name, id) in category_ids {
        ids.entry(name.clone()).or_insert(*id);
    }
    let mut next_cat = category_ids.iter().map(|&(_, id)| id).max().unwrap_or(0) + 1;
    for o in records.iter().flat_map(|r| &r.objects) {
        if !ids.contains_key(&o.label) {
            ids.insert(o.label.clone(), next_cat);
            categories.push(json!({"id": next_cat, "name": o.label}));
            next_cat += 1;
        }
    }

    let mut next_ann = records
        .iter()
        .flat_map(|r| &r.objects)
        .filter_map(|o| match &o.raw {
            RawRecord::Json(m) => m.get("id").and_then(Value::as_u64),
            _ => None,
        })
        .max()
        .unwrap_or(0)
        + 1;

    let mut images = Vec::with_capacity(records.len());
    let mut annotations = Vec::new();
    for r in records {
        let mut img = match &r.raw {
            RawRecord::Json(m) => m.clone(),
            _ => Map::new(),
        };
        let image_id = img
            .get("id")
            .cloned()
            .unwrap_or_else(|| match r.image_id.parse::<u64>() {
                Ok(n) => json!(n),
                Err(_) => json!(r.image_id),
            });
        img.insert("id".into(), image_id.clone());
        img.insert("file_name".into(), json!(r.file_name));
        img.insert("width".into(), json!(r.width));
        img.insert("height".into(), json!(r.height));
        images.push(Value::Object(img));

        for o in &r.objects {
            let mut ann = match &o.raw {
                RawRecord::Json(m) => m.clone(),
                _ => Map::new(),
            };
            if !ann.contains_key("id") {
                ann.insert("id".into(), json!(next_ann));
                next_ann += 1;
            }
            ann.insert("image_id".into(), image_id.clone());
            ann.insert("category_id".into(), json!(ids[&o.label]));

            let old_segmentation = ann
                .get("segmentation")
                .and_then(|v| parse_segmentation(v).ok())
                .flatten();
            let unchanged = bbox_of(&ann) == Some(o.bbox)
                && old_segmentation == o.segmentation
                && ann.contains_key("area");
            if !unchanged {
                ann.insert("bbox".into(), json!([o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h]));
                let area = match &o.segmentation {
                    Some(Segmentation::Rle { counts, .. }) => {
                        counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum::<u64>() as f64
                    }
                    _ => o.bbox.w * o.bbox.h,
                };
                ann.insert("area".into(), json!(area));
                match &o.segmentation {
                    Some(s) => ann.insert("segmentation".into(), segmentation_json(s)),
                    None => ann.remove("segmentation"),
                };
            }
            if !ann.contains_key("iscrowd") {
                ann.insert("iscrowd".into(), json!(o.crowd as u8));
            }
            if o.synthetic {
                ann.insert("synthetic".into(), json!(true));
            }
            annotations.push(Value::Object(ann));
        }
    }

    doc.insert("images".into(), Value::Array(images));
    doc.insert("annotations".into(), Value::Array(annotations));
    doc.insert("categories".into(), Value::Array(categories));

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &Value::Object(doc))?;
    w.flush().map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_forms() {
        let poly = parse_segmentation(&json!([[0, 0, 4, 0, 4, 4]])).unwrap();
        assert!(matches!(poly, Some(Segmentation::Polygons(ref p)) if p[0].len() == 6));
        let rle = parse_segmentation(&json!({"counts": [1, 2, 3], "size": [2, 3]})).unwrap();
        assert_eq!(rle, Some(Segmentation::Rle { counts: vec![1, 2, 3], height: 2, width: 3 }));
        let packed = parse_segmentation(&json!({"counts": "132", "size": [2, 3]})).unwrap();
        assert!(matches!(packed, Some(Segmentation::CompressedRle { .. })));
        assert_eq!(parse_segmentation(&json!([])).unwrap(), None);
        assert!(parse_segmentation(&json!(3)).is_err());
    }
}
