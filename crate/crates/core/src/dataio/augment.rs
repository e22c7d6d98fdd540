use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::groundtruth::DotMap;
use crate::numerics::Tensor;

/// Random horizontal flip plus brightness/contrast jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub horizontal_flip_prob: f64,
    /// Additive brightness delta range, in units of the `[0, 1]` value range.
    pub brightness_delta_range: (f64, f64),
    /// Multiplicative contrast range about the image mean.
    pub contrast_factor_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            horizontal_flip_prob: 0.5,
            brightness_delta_range: (-0.2, 0.2),
            contrast_factor_range: (0.8, 1.25),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Leaves every sample untouched.
    pub fn identity() -> Self {
        Self {
            horizontal_flip_prob: 0.0,
            brightness_delta_range: (0.0, 0.0),
            contrast_factor_range: (1.0, 1.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(Error::config(format!("flip probability {} outside [0, 1]", self.horizontal_flip_prob)));
        }
        let (b0, b1) = self.brightness_delta_range;
        let (c0, c1) = self.contrast_factor_range;
        if !(b0 <= b1) || !(c0 <= c1) {
            return Err(Error::config("augmentation ranges must be ordered (low <= high)"));
        }
        if !(c0 > 0.0) {
            return Err(Error::config("contrast factors must be positive"));
        }
        Ok(())
    }
}

/// The concrete random choices for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
}

impl AugmentDraw {
    pub fn is_identity(&self) -> bool {
        !self.flip && self.brightness == 0.0 && self.contrast == 1.0
    }
}

fn mix(seed: u64, draw: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ draw.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the augmentation for `(config.seed, draw_seed)`; the same pair always
/// gives the same draw.
pub fn draw_augmentation(config: &AugmentationConfig, draw_seed: u64) -> AugmentDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, draw_seed));
    let flip = rng.random::<f64>() < config.horizontal_flip_prob;
    let (b0, b1) = config.brightness_delta_range;
    let (c0, c1) = config.contrast_factor_range;
    let brightness = if b0 == b1 { b0 } else { rng.random_range(b0..=b1) };
    let contrast = if c0 == c1 { c0 } else { rng.random_range(c0..=c1) };
    AugmentDraw { flip, brightness, contrast }
}

/// Applies a draw to an `[N, C, H, W]` image and its annotations.
///
/// Flipping reverses pixel columns and maps `x -> W - 1 - x`. Contrast
/// scales about the image mean, then brightness is added and values are
/// clipped to `[0, 1]`. Photometric changes never touch the annotations.
pub fn apply_draw(image: &Tensor, dots: &DotMap, draw: AugmentDraw) -> Result<(Tensor, DotMap)> {
    let (_, _, h, w) = image.dims4()?;
    if (h, w) != (dots.image_h, dots.image_w) {
        return Err(Error::dim(format!("image is {w}x{h} but annotations describe {}x{}", dots.image_w, dots.image_h)));
    }
    let mut out = image.clone();
    let mut dots = dots.clone();
    if draw.flip {
        for row in out.data_mut().chunks_mut(w) {
            row.reverse();
        }
        dots = dots.flipped();
    }
    if draw.contrast != 1.0 || draw.brightness != 0.0 {
        let mean = out.sum() / out.len() as f64;
        for v in out.data_mut() {
            *v = ((*v - mean) * draw.contrast + mean + draw.brightness).clamp(0.0, 1.0);
        }
    }
    Ok((out, dots))
}

/// Draws and applies an augmentation.
pub fn augment(image: &Tensor, dots: &DotMap, config: &AugmentationConfig, draw_seed: u64) -> Result<(Tensor, DotMap)> {
    apply_draw(image, dots, draw_augmentation(config, draw_seed))
}
