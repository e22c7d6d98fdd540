//! Images, annotations, augmentation and synthetic scenes.

mod augment;
mod io;
mod synth;

pub use augment::{apply_draw, augment, draw_augmentation, AugmentDraw, AugmentationConfig};
pub use io::{
    encode_ppm, load_dataset, parse_annotations, read_image, read_manifest, save_dataset, write_annotations,
    ManifestEntry, MANIFEST_HEADER,
};
pub use synth::{synth_scene, SynthSpec};

use crate::error::{Error, Result};
use crate::groundtruth::DotMap;
use crate::numerics::Tensor;

/// One training or evaluation image with its annotations. `image` is
/// `[1, 3, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub dots: DotMap,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.dots.image_h
    }

    pub fn width(&self) -> usize {
        self.dots.image_w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Annotations {
    Points(Vec<(f64, f64)>),
    /// `(x1, y1, x2, y2)` corner boxes.
    Boxes(Vec<(f64, f64, f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_path: String,
    pub annotations: Annotations,
    pub altitude_m: Option<f64>,
}

/// Replaces every box by its centre point.
pub fn boxes_to_dots(record: &AnnotationRecord, image_w: usize, image_h: usize) -> Result<DotMap> {
    let points = match &record.annotations {
        Annotations::Points(p) => p.clone(),
        Annotations::Boxes(boxes) => {
            let mut pts = Vec::with_capacity(boxes.len());
            for (i, &(x1, y1, x2, y2)) in boxes.iter().enumerate() {
                if !(x1 < x2 && y1 < y2) {
                    return Err(Error::Annotation {
                        index: i,
                        reason: format!("degenerate box ({x1}, {y1}, {x2}, {y2})"),
                    });
                }
                if x1 < 0.0 || y1 < 0.0 || x2 > image_w as f64 || y2 > image_h as f64 {
                    return Err(Error::Annotation {
                        index: i,
                        reason: format!("box ({x1}, {y1}, {x2}, {y2}) exceeds the {image_w}x{image_h} image"),
                    });
                }
                pts.push(((x1 + x2) / 2.0, (y1 + y2) / 2.0));
            }
            pts
        }
    };
    let dots = DotMap { image_w, image_h, points, altitude_m: record.altitude_m, source_id: record.image_path.clone() };
    dots.validate()?;
    Ok(dots)
}
