use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use xmltree::{Element, EmitterConfig, ParserConfig, XMLNode};

use super::{BBox, ImageRecord, ObjectRecord, Parsed, RawRecord};
use crate::error::{Error, Result};

/// The twenty VOC classes in the order their segmentation palettes index them.
pub const VOC_CLASSES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

fn child_text(e: &Element, name: &str) -> Option<String> {
    e.get_child(name)
        .and_then(|c| c.get_text())
        .map(|t| t.trim().to_string())
}

fn set_child_text(e: &mut Element, name: &str, text: String) {
    if e.get_child(name).is_none() {
        e.children.push(XMLNode::Element(Element::new(name)));
    }
    let child = e.get_mut_child(name).expect("child inserted above");
    child.children = vec![XMLNode::Text(text)];
}

fn fmt_coord(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn parse_file(path: &Path) -> std::result::Result<ImageRecord, String> {
    let file = File::open(path).map_err(|e| e.to_string())?;
    let root = Element::parse_with_config(
        BufReader::new(file),
        ParserConfig::new().trim_whitespace(true),
    )
    .map_err(|e| e.to_string())?;
    let image_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or("annotation file has no stem")?;
    let file_name = child_text(&root, "filename").unwrap_or_else(|| format!("{image_id}.jpg"));
    let size = root.get_child("size").ok_or("missing <size>")?;
    let dim = |n: &str| -> std::result::Result<u32, String> {
        child_text(size, n)
            .and_then(|t| t.parse::<f64>().ok())
            .filter(|v| *v >= 1.0 && v.fract() == 0.0)
            .map(|v| v as u32)
            .ok_or(format!("missing or invalid <size>/<{n}>"))
    };
    let (width, height) = (dim("width")?, dim("height")?);

    let mut objects = Vec::new();
    for (k, node) in root.children.iter().enumerate() {
        let Some(obj) = node.as_element().filter(|e| e.name == "object") else {
            continue;
        };
        let label = child_text(obj, "name").ok_or(format!("object #{k} has no <name>"))?;
        let bb = obj
            .get_child("bndbox")
            .ok_or(format!("object {label:?} has no <bndbox>"))?;
        let coord = |n: &str| {
            child_text(bb, n)
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or(format!("object {label:?}: bad <{n}>"))
        };
        let (x0, y0, x1, y1) = (coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?);
        // 1-based inclusive corners
        let bbox = BBox::new(x0 - 1.0, y0 - 1.0, x1 - x0 + 1.0, y1 - y0 + 1.0);
        bbox.validate(width, height)
            .map_err(|m| format!("object {label:?}: {m}"))?;
        let synthetic = child_text(obj, "synthetic").is_some_and(|t| t == "true" || t == "1");
        objects.push(ObjectRecord {
            label,
            bbox,
            segmentation: None,
            crowd: false,
            synthetic,
            raw: RawRecord::Xml(obj.clone()),
        });
    }

    let mut doc = root;
    doc.children
        .retain(|n| !matches!(n.as_element(), Some(e) if e.name == "object"));
    Ok(ImageRecord {
        image_id,
        file_name,
        width,
        height,
        objects,
        raw: RawRecord::Xml(doc),
    })
}

pub(super) fn read(dir: &Path) -> Result<Parsed> {
    let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();

    let mut images = Vec::new();
    let mut errors = Vec::new();
    for path in paths {
        match parse_file(&path) {
            Ok(record) => images.push(record),
            Err(msg) => errors.push(Error::annotation(path.display().to_string(), msg)),
        }
    }

    let present: BTreeSet<&str> = images
        .iter()
        .flat_map(|r: &ImageRecord| r.objects.iter().map(|o| o.label.as_str()))
        .collect();
    let mut category_ids: Vec<(String, u64)> = VOC_CLASSES
        .iter()
        .enumerate()
        .filter(|(_, c)| present.contains(**c))
        .map(|(i, c)| (c.to_string(), i as u64 + 1))
        .collect();
    let extras = present.iter().filter(|l| !VOC_CLASSES.contains(l));
    for (j, l) in extras.enumerate() {
        category_ids.push((l.to_string(), VOC_CLASSES.len() as u64 + 1 + j as u64));
    }

    Ok(Parsed {
        images,
        errors,
        category_ids,
        extra: RawRecord::None,
    })
}

fn object_element(o: &ObjectRecord) -> Element {
    let mut e = match &o.raw {
        RawRecord::Xml(e) => e.clone(),
        _ => {
            let mut e = Element::new("object");
            set_child_text(&mut e, "name", String::new());
            set_child_text(&mut e, "pose", "Unspecified".into());
            set_child_text(&mut e, "truncated", "0".into());
            set_child_text(&mut e, "difficult", "0".into());
            e.children.push(XMLNode::Element(Element::new("bndbox")));
            e
        }
    };
    set_child_text(&mut e, "name", o.label.clone());
    if e.get_child("bndbox").is_none() {
        e.children.push(XMLNode::Element(Element::new("bndbox")));
    }
    let bb = e.get_mut_child("bndbox").expect("bndbox present");
    set_child_text(bb, "xmin", fmt_coord(o.bbox.x + 1.0));
    set_child_text(bb, "ymin", fmt_coord(o.bbox.y + 1.0));
    set_child_text(bb, "xmax", fmt_coord(o.bbox.x + o.bbox.w));
    set_child_text(bb, "ymax", fmt_coord(o.bbox.y + o.bbox.h));
    if o.synthetic {
        set_child_text(&mut e, "synthetic", "true".into());
    }
    e
}

pub(super) fn write_record(record: &ImageRecord, path: &Path) -> Result<()> {
    let mut doc = match &record.raw {
        RawRecord::Xml(e) => e.clone(),
        _ => {
            let mut doc = Element::new("annotation");
            set_child_text(&mut doc, "folder", "JPEGImages".into());
            let mut size = Element::new("size");
            set_child_text(&mut size, "width", String::new());
            set_child_text(&mut size, "height", String::new());
            set_child_text(&mut size, "depth", "3".into());
            set_child_text(&mut doc, "filename", String::new());
            doc.children.push(XMLNode::Element(size));
            doc
        }
    };
    set_child_text(&mut doc, "filename", record.file_name.clone());
    if doc.get_child("size").is_none() {
        doc.children.push(XMLNode::Element(Element::new("size")));
    }
    let size = doc.get_mut_child("size").expect("size present");
    set_child_text(size, "width", record.width.to_string());
    set_child_text(size, "height", record.height.to_string());
    for o in &record.objects {
        doc.children.push(XMLNode::Element(object_element(o)));
    }

    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    doc.write_with_config(
        BufWriter::new(file),
        EmitterConfig::new().perform_indent(true),
    )
    .map_err(|e| Error::Xml(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"<annotation>
  <folder>VOC2012</folder>
  <filename>2007_000032.jpg</filename>
  <size><width>500</width><height>281</height><depth>3</depth></size>
  <segmented>1</segmented>
  <object>
    <name>aeroplane</name><pose>Frontal</pose><truncated>0</truncated><difficult>0</difficult>
    <bndbox><xmin>104</xmin><ymin>78</ymin><xmax>375</xmax><ymax>183</ymax></bndbox>
  </object>
  <object>
    <name>person</name><pose>Rear</pose><truncated>0</truncated><difficult>0</difficult>
    <bndbox><xmin>195</xmin><ymin>180</ymin><xmax>213</xmax><ymax>229</ymax></bndbox>
  </object>
</annotation>"#;

    #[test]
    fn parses_one_based_inclusive_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("2007_000032.xml");
        fs::write(&path, SAMPLE).unwrap();
        let rec = parse_file(&path).unwrap();
        assert_eq!(rec.image_id, "2007_000032");
        assert_eq!((rec.width, rec.height), (500, 281));
        assert_eq!(rec.objects.len(), 2);
        assert_eq!(rec.objects[0].bbox, BBox::new(103.0, 77.0, 272.0, 106.0));
        assert_eq!(rec.objects[1].label, "person");
    }

    #[test]
    fn write_preserves_untouched_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.xml");
        fs::write(&path, SAMPLE).unwrap();
        let rec = parse_file(&path).unwrap();
        let out = dir.path().join("out.xml");
        write_record(&rec, &out).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.contains("<segmented>1</segmented>"));
        assert!(text.contains("<pose>Frontal</pose>"));
        assert!(text.contains("<xmin>104</xmin>"));
        let again = parse_file(&out).unwrap();
        assert_eq!(again.objects.len(), 2);
        assert_eq!(again.objects[0].bbox, rec.objects[0].bbox);
    }

    #[test]
    fn box_outside_image_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xml");
        fs::write(&path, SAMPLE.replace("<xmax>375</xmax>", "<xmax>501</xmax>")).unwrap();
        let err = parse_file(&path).unwrap_err();
        assert!(err.contains("exceeds"), "{err}");
    }
}
