//! Paste one object by hand: scale, place beside an anchor, composite,
//! blend and update the annotations it covers. Writes `composite.png`.
//!
//! `cargo run --example compositing [out_dir]`

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sempaste::compositor::*;
use sempaste::{AnnotatedObject, BBox, BinaryMask, Result};

pub fn run_example(out: Option<&Path>) -> Result<PathBuf> {
    let (w, h) = (320, 240);
    let mut host = RgbImage::from_fn(w, h, |x, y| Rgb([(x / 2) as u8, (y / 2) as u8, 90]));
    let mut objects = vec![
        AnnotatedObject::new("sofa", BBox::new(90.0, 90.0, 120.0, 80.0)),
        AnnotatedObject::new("cup", BBox::new(200.0, 150.0, 24.0, 24.0)),
    ];

    // a round orange object
    let crop = RgbImage::from_pixel(80, 60, Rgb([240, 140, 20]));
    let mask = BinaryMask::from_fn(80, 60, |x, y| {
        let (dx, dy) = (x as f64 - 39.5, y as f64 - 29.5);
        (dx / 40.0).powi(2) + (dy / 30.0).powi(2) <= 1.0
    });

    let params = PlacementParams { blending: Blending::Gaussian5x5, ..PlacementParams::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dims = draw_scale(crop.width(), crop.height(), w, &params, &mut rng)?;
    let placement = draw_placement(&objects[0].bbox, 0, w, h, dims, &params, &mut rng)?;
    println!("scaled to {}x{}, centre ({:.1}, {:.1})", dims.0, dims.1, placement.center.0, placement.center.1);

    let (small, small_mask) = resize_instance(&crop, &mask, dims.0, dims.1);
    let (padded, m) = pad_zeros(&small, &small_mask, placement.origin(), w, h);
    host = composite_pixels(&host, &padded, &m);
    blend(&mut host, &m, params.blending);

    let removed = update_occlusions(&mut objects, &m, w, h, 0.3);
    for o in &objects {
        println!("kept {:<5} {:?} (edited: {})", o.label, o.bbox, o.is_edited());
    }
    for r in &removed {
        println!("dropped {} ({:.0}% visible)", r.label, 100.0 * r.visible_fraction);
    }

    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => std::env::temp_dir(),
    };
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("composite.png");
    host.save(&path)?;
    println!("wrote {}", path.display());
    Ok(path)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let arg = std::env::args().nth(1).map(PathBuf::from);
    run_example(arg.as_deref()).map(|_| ())
}
