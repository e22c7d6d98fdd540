use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::groundtruth::DotMap;
use crate::numerics::Tensor;

/// Parameters of one synthetic scene: bright Gaussian blobs over a noisy
/// tinted background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub n_objects: usize,
    /// Blob radius range in pixels; the blob profile has `sigma = radius / 2`.
    pub object_radius_range: (f64, f64),
    /// Half-width of the uniform per-pixel background noise.
    pub background_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { width: 64, height: 64, n_objects: 8, object_radius_range: (2.0, 3.0), background_noise: 0.05, seed: 0 }
    }
}

const ATTEMPTS_PER_OBJECT: usize = 400;
const RELAX_FACTOR: f64 = 0.75;
const MIN_SEPARATION_FLOOR: f64 = 1.0;

/// Places objects by rejection sampling with a minimum centre separation that
/// starts at `2 * max_radius` and shrinks by 25% whenever an object cannot
/// be placed in 400 attempts, down to one pixel.
fn place(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, f64)>> {
    let mut separation = 2.0 * spec.object_radius_range.1;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(spec.n_objects);
    let (xmax, ymax) = ((spec.width - 1) as f64, (spec.height - 1) as f64);
    while points.len() < spec.n_objects {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_OBJECT {
            let p = (rng.random_range(0.0..=xmax), rng.random_range(0.0..=ymax));
            let clear = points.iter().all(|q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) >= separation * separation);
            if clear {
                points.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            if separation <= MIN_SEPARATION_FLOOR {
                return Err(Error::Generation(format!(
                    "cannot place {} objects in a {}x{} scene even at {MIN_SEPARATION_FLOOR} px separation; \
                     lower the object density",
                    spec.n_objects, spec.width, spec.height
                )));
            }
            separation = (separation * RELAX_FACTOR).max(MIN_SEPARATION_FLOOR);
        }
    }
    Ok(points)
}

/// Renders a labelled scene. Pixel values are quantised to multiples of
/// 1/255 so the image survives an 8-bit round trip unchanged.
pub fn synth_scene(spec: &SynthSpec) -> Result<(Tensor, DotMap)> {
    if spec.width < 1 || spec.height < 1 {
        return Err(Error::Generation("scene extents must be positive".into()));
    }
    let (r0, r1) = spec.object_radius_range;
    if !(r0 > 0.0 && r0 <= r1) {
        return Err(Error::Generation(format!("bad radius range ({r0}, {r1})")));
    }
    if !(spec.background_noise >= 0.0) {
        return Err(Error::Generation("background noise must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = place(spec, &mut rng)?;
    let (w, h) = (spec.width, spec.height);

    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.35));
    let mut data = vec![0.0; 3 * w * h];
    for (c, plane) in data.chunks_mut(w * h).enumerate() {
        for v in plane.iter_mut() {
            let noise = if spec.background_noise > 0.0 {
                rng.random_range(-spec.background_noise..=spec.background_noise)
            } else {
                0.0
            };
            *v = tint[c] + noise;
        }
    }

    for &(px, py) in &points {
        let radius = if r0 == r1 { r0 } else { rng.random_range(r0..=r1) };
        let amplitude = rng.random_range(0.5..0.8);
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.8..=1.0));
        let s = radius / 2.0;
        let reach = (3.0 * s).ceil() as isize;
        let (cx, cy) = (px.round() as isize, py.round() as isize);
        for y in (cy - reach).max(0)..=(cy + reach).min(h as isize - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(w as isize - 1) {
                let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                let bump = amplitude * (-d2 / (2.0 * s * s)).exp();
                for (c, plane) in data.chunks_mut(w * h).enumerate() {
                    plane[y as usize * w + x as usize] += bump * color[c];
                }
            }
        }
    }
    for v in &mut data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }

    let image = Tensor::new(vec![1, 3, h, w], data)?;
    let dots = DotMap { image_w: w, image_h: h, points, altitude_m: None, source_id: format!("synth-{}", spec.seed) };
    Ok((image, dots))
}

impl SynthSpec {
    /// Convenience: a scene wrapped as a [`Sample`] with the given id.
    pub fn sample(&self, id: impl Into<String>) -> Result<Sample> {
        let (image, mut dots) = synth_scene(self)?;
        let id = id.into();
        dots.source_id = id.clone();
        Ok(Sample { id, image, dots })
    }
}
