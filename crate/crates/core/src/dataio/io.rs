//! On-disk dataset layout.
//!
//! Manifest: comma-separated `image_path,annotation_path[,altitude]`, one
//! image per line. An optional first line `image_path,annotation_path[,altitude]`
//! is a header; `#` starts a comment. Relative paths resolve against the
//! manifest's directory.
//!
//! Annotation file: one object per line, either a point `x y` or a box
//! `x1 y1 x2 y2` (whitespace or commas). A file holds points or boxes, not
//! both. Images are PGM/PPM (grey is replicated to three channels) or PNG,
//! scaled to `[0, 1]`.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};

use super::{boxes_to_dots, AnnotationRecord, Annotations, Sample};
use crate::error::{Error, Result};
use crate::fsutil::StagedOutputs;
use crate::groundtruth::DotMap;
use crate::numerics::Tensor;

pub const MANIFEST_HEADER: &str = "image_path,annotation_path,altitude";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path as written in the manifest; doubles as the sample id.
    pub image: String,
    pub annotation: String,
    pub altitude_m: Option<f64>,
    pub image_path: PathBuf,
    pub annotation_path: PathBuf,
    /// 1-based manifest line.
    pub line: usize,
}

/// `image_path,annotation_path` with or without the altitude column.
fn is_header(line: &str) -> bool {
    let cols: Vec<String> = line.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let want: Vec<&str> = MANIFEST_HEADER.split(',').collect();
    (2..=3).contains(&cols.len()) && cols.iter().zip(&want).all(|(c, w)| c == w)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (entries.is_empty() && is_header(line)) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let (image, annotation, altitude) = match cols[..] {
            [img, ann] => (img, ann, None),
            [img, ann, ""] => (img, ann, None),
            [img, ann, alt] => {
                let a: f64 = alt
                    .parse()
                    .map_err(|_| Error::load(path, Some(i + 1), format!("altitude `{alt}` is not a number")))?;
                (img, ann, Some(a))
            }
            _ => return Err(Error::load(path, Some(i + 1), "expected `image_path,annotation_path[,altitude]`")),
        };
        if image.is_empty() || annotation.is_empty() {
            return Err(Error::load(path, Some(i + 1), "empty path column"));
        }
        entries.push(ManifestEntry {
            image: image.to_string(),
            annotation: annotation.to_string(),
            altitude_m: altitude,
            image_path: base.join(image),
            annotation_path: base.join(annotation),
            line: i + 1,
        });
    }
    Ok(entries)
}

/// Parses an annotation file body.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<Annotations> {
    let mut points = Vec::new();
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::load(origin, Some(i + 1), format!("`{t}` is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        match nums[..] {
            [x, y] => points.push((x, y)),
            [x1, y1, x2, y2] => boxes.push((x1, y1, x2, y2)),
            _ => {
                return Err(Error::load(
                    origin,
                    Some(i + 1),
                    format!("expected 2 (point) or 4 (box) numbers, found {}", nums.len()),
                ))
            }
        }
        if !points.is_empty() && !boxes.is_empty() {
            return Err(Error::load(origin, Some(i + 1), "file mixes points and boxes"));
        }
    }
    Ok(if boxes.is_empty() { Annotations::Points(points) } else { Annotations::Boxes(boxes) })
}

/// Point annotations, one `x y` line per point, formatted to round-trip.
pub fn write_annotations(dots: &DotMap) -> String {
    dots.points.iter().map(|(x, y)| format!("{x:?} {y:?}\n")).collect()
}

fn decode(img: DynamicImage) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img.color(),
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
    );
    let mut data = vec![0.0; 3 * w * h];
    let plane = w * h;
    if sixteen {
        for (i, px) in img.to_rgb16().pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px.0[c] as f64 / 65535.0;
            }
        }
    } else {
        for (i, px) in img.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px.0[c] as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Reads an image as `[1, 3, H, W]` in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::load(path, None, format!("cannot decode image: {e}")))?;
    decode(img)
}

/// Binary 8-bit PPM (P6) of a `[1, 3, H, W]` image; values are rounded to
/// the nearest 1/255.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::dim(format!("PPM export needs [1, 3, H, W], got {:?}", image.shape())));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = w * h;
    let d = image.data();
    for i in 0..plane {
        for ch in 0..3 {
            out.push((d[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Loads every manifest row at native resolution, in manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<Sample>> {
    let entries = read_manifest(manifest_path)?;
    let mut samples = Vec::with_capacity(entries.len());
    for e in entries {
        if !e.image_path.exists() {
            return Err(Error::load(
                manifest_path,
                Some(e.line),
                format!("image {} does not exist", e.image_path.display()),
            ));
        }
        let image = read_image(&e.image_path)?;
        let (_, _, h, w) = image.dims4()?;
        let text = std::fs::read_to_string(&e.annotation_path).map_err(|err| Error::io(&e.annotation_path, err))?;
        let annotations = parse_annotations(&text, &e.annotation_path)?;
        let record = AnnotationRecord { image_path: e.image.clone(), annotations, altitude_m: e.altitude_m };
        let dots =
            boxes_to_dots(&record, w, h).map_err(|err| Error::load(&e.annotation_path, None, err.to_string()))?;
        samples.push(Sample { id: e.image, image, dots });
    }
    Ok(samples)
}

/// Writes `samples` as `<stem>.ppm` + `<stem>.txt` pairs and a
/// `manifest.csv` into `dir`, all-or-nothing. Returns the manifest path.
pub fn save_dataset(dir: &Path, samples: &[(String, Tensor, DotMap)]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stage = StagedOutputs::new();
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for (stem, image, dots) in samples {
        let img_name = format!("{stem}.ppm");
        let ann_name = format!("{stem}.txt");
        stage.write(dir.join(&img_name), &encode_ppm(image)?)?;
        stage.write(dir.join(&ann_name), write_annotations(dots).as_bytes())?;
        match dots.altitude_m {
            Some(a) => manifest.push_str(&format!("{img_name},{ann_name},{a:?}\n")),
            None => manifest.push_str(&format!("{img_name},{ann_name}\n")),
        }
    }
    let manifest_path = dir.join("manifest.csv");
    stage.write(&manifest_path, manifest.as_bytes())?;
    stage.commit()?;
    Ok(manifest_path)
}
