//! Density maps from point annotations.
//!
//! Every annotated point contributes a discrete Gaussian stamp of unit mass.
//! Coordinates are in pixel-index units: pixel `(c, r)` has its centre at
//! `(c, r)`, so a point at `(12.0, 7.0)` sits exactly on the centre of
//! column 12, row 7 (equivalently, pixel `c` covers `[c - 0.5, c + 0.5)`).
//! Stamps are evaluated at pixel centres in f64 and truncated to the pixels
//! within `truncation_radius_sigmas * sigma` of the point along each axis.

mod export;

pub use export::{map_to_gray8, read_float_grid, write_float_grid, write_pgm};

use crate::error::{Error, Result};
use crate::numerics::{sumpool2x2, Tensor};

/// Point annotations for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DotMap {
    pub image_w: usize,
    pub image_h: usize,
    pub points: Vec<(f64, f64)>,
    pub altitude_m: Option<f64>,
    pub source_id: String,
}

impl DotMap {
    pub fn new(image_w: usize, image_h: usize, points: Vec<(f64, f64)>) -> Self {
        Self { image_w, image_h, points, altitude_m: None, source_id: String::new() }
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    /// Checks that every point lies in `[0, image_w) x [0, image_h)`.
    pub fn validate(&self) -> Result<()> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::config(format!("dot map `{}` has an empty image", self.source_id)));
        }
        for (i, &(x, y)) in self.points.iter().enumerate() {
            if !(x >= 0.0 && x < self.image_w as f64 && y >= 0.0 && y < self.image_h as f64) {
                return Err(Error::Annotation {
                    index: i,
                    reason: format!(
                        "point ({x}, {y}) outside the {}x{} image `{}`",
                        self.image_w, self.image_h, self.source_id
                    ),
                });
            }
        }
        Ok(())
    }

    /// Horizontal mirror: `x -> image_w - 1 - x`. Points in the last
    /// half-pixel `(image_w - 1, image_w)` would land below zero and are
    /// clamped to 0.
    pub fn flipped(&self) -> Self {
        let w = self.image_w as f64;
        Self { points: self.points.iter().map(|&(x, y)| ((w - 1.0 - x).max(0.0), y)).collect(), ..self.clone() }
    }
}

/// Altitude band `[min_alt, max_alt)` with its kernel width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltitudeBand {
    pub min_alt: f64,
    pub max_alt: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaMode {
    Fixed {
        sigma: f64,
    },
    /// Kernel width chosen by capture altitude. The top band also accepts
    /// its upper bound.
    AltitudeGrouped {
        bands: Vec<AltitudeBand>,
    },
    /// `beta` times the mean distance to the `k` nearest other points.
    AdaptiveKnn {
        k: usize,
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityConfig {
    pub mode: SigmaMode,
    pub truncation_radius_sigmas: f64,
    pub renormalize: bool,
    /// Used by the adaptive mode when an image has a single point.
    pub fallback_sigma: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self::fixed(4.0)
    }
}

impl DensityConfig {
    pub fn fixed(sigma: f64) -> Self {
        Self { mode: SigmaMode::Fixed { sigma }, truncation_radius_sigmas: 4.0, renormalize: true, fallback_sigma: 4.0 }
    }

    pub fn adaptive(k: usize, beta: f64) -> Self {
        Self { mode: SigmaMode::AdaptiveKnn { k, beta }, ..Self::fixed(4.0) }
    }

    pub fn altitude(bands: Vec<AltitudeBand>) -> Self {
        Self { mode: SigmaMode::AltitudeGrouped { bands }, ..Self::fixed(4.0) }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be a positive finite number, got {v}")))
            }
        };
        positive(self.truncation_radius_sigmas, "truncation radius")?;
        positive(self.fallback_sigma, "fallback sigma")?;
        match &self.mode {
            SigmaMode::Fixed { sigma } => positive(*sigma, "sigma"),
            SigmaMode::AdaptiveKnn { k, beta } => {
                if *k == 0 {
                    return Err(Error::config("adaptive kernel needs k >= 1"));
                }
                positive(*beta, "beta")
            }
            SigmaMode::AltitudeGrouped { bands } => {
                if bands.is_empty() {
                    return Err(Error::config(
                        "altitude-grouped sigma needs at least one band; no defaults are provided",
                    ));
                }
                let mut sorted = bands.clone();
                sorted.sort_by(|a, b| a.min_alt.total_cmp(&b.min_alt));
                for b in &sorted {
                    positive(b.sigma, "band sigma")?;
                    if !(b.min_alt < b.max_alt) {
                        return Err(Error::config(format!("altitude band [{}, {}) is empty", b.min_alt, b.max_alt)));
                    }
                }
                for pair in sorted.windows(2) {
                    if pair[1].min_alt < pair[0].max_alt {
                        return Err(Error::config(format!(
                            "altitude bands [{}, {}) and [{}, {}) overlap",
                            pair[0].min_alt, pair[0].max_alt, pair[1].min_alt, pair[1].max_alt
                        )));
                    }
                    if pair[1].min_alt > pair[0].max_alt {
                        return Err(Error::config(format!(
                            "altitude bands leave a gap between {} and {}",
                            pair[0].max_alt, pair[1].min_alt
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

fn band_sigma(bands: &[AltitudeBand], dotmap: &DotMap) -> Result<f64> {
    let alt = dotmap.altitude_m.ok_or_else(|| {
        Error::config(format!("altitude-grouped sigma requires an altitude, but `{}` has none", dotmap.source_id))
    })?;
    let top = bands.iter().map(|b| b.max_alt).fold(f64::NEG_INFINITY, f64::max);
    bands
        .iter()
        .find(|b| (alt >= b.min_alt && alt < b.max_alt) || (alt == top && b.max_alt == top))
        .map(|b| b.sigma)
        .ok_or_else(|| {
            Error::config(format!("altitude {alt} m of `{}` is outside every configured band", dotmap.source_id))
        })
}

/// Mean distance from `points[index]` to its `k` nearest other points
/// (`k` capped at `N - 1`). Distances are sorted before summation, so the
/// result does not depend on point order.
pub fn knn_mean_distance(points: &[(f64, f64)], index: usize, k: usize) -> f64 {
    let (px, py) = points[index];
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != index)
        .map(|(_, &(x, y))| ((x - px).powi(2) + (y - py).powi(2)).sqrt())
        .collect();
    let k = k.min(d.len());
    if k == 0 {
        return 0.0;
    }
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        d.truncate(k);
    }
    d.sort_by(f64::total_cmp);
    d.iter().sum::<f64>() / k as f64
}

/// Kernel width for one point.
pub fn resolve_sigma(dotmap: &DotMap, point_index: usize, config: &DensityConfig) -> Result<f64> {
    if point_index >= dotmap.points.len() {
        return Err(Error::Range(format!("point index {point_index} out of range for {} points", dotmap.points.len())));
    }
    match &config.mode {
        SigmaMode::Fixed { sigma } => Ok(*sigma),
        SigmaMode::AltitudeGrouped { bands } => band_sigma(bands, dotmap),
        SigmaMode::AdaptiveKnn { k, beta } => {
            if dotmap.points.len() < 2 {
                log::warn!(
                    "`{}` has a single point; adaptive sigma falls back to {}",
                    dotmap.source_id,
                    config.fallback_sigma
                );
                return Ok(config.fallback_sigma);
            }
            let sigma = beta * knn_mean_distance(&dotmap.points, point_index, *k);
            if sigma > 0.0 {
                Ok(sigma)
            } else {
                // coincident points
                Ok(config.fallback_sigma)
            }
        }
    }
}

/// Adds one unit-mass (or clipped) Gaussian stamp into `map` (`h x w`,
/// row-major).
fn stamp(map: &mut [f64], w: usize, h: usize, (px, py): (f64, f64), sigma: f64, config: &DensityConfig) {
    // pixels with |c - p| <= radius on each axis; mirror-symmetric about p
    let radius = config.truncation_radius_sigmas * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let gauss = |d: f64| (-(d * d) * inv).exp();
    let axis = |p: f64| -> Vec<(isize, f64)> {
        let lo = (p - radius).ceil() as isize;
        let hi = (p + radius).floor() as isize;
        (lo..=hi).map(|c| (c, gauss(c as f64 - p))).collect()
    };

    // separable: weights along each axis over the full (unclipped) window
    let xs = axis(px);
    let ys = axis(py);
    let inside_x = |c: isize| c >= 0 && c < w as isize;
    let inside_y = |r: isize| r >= 0 && r < h as isize;

    let full: f64 = xs.iter().map(|p| p.1).sum::<f64>() * ys.iter().map(|p| p.1).sum::<f64>();
    let clipped: f64 = xs.iter().filter(|p| inside_x(p.0)).map(|p| p.1).sum::<f64>()
        * ys.iter().filter(|p| inside_y(p.0)).map(|p| p.1).sum::<f64>();

    let norm = if config.renormalize { clipped } else { full };
    if !(norm > 0.0) || !norm.is_finite() {
        // kernel underflowed: the whole mass goes to the nearest pixel
        let c = (px.round() as isize).clamp(0, w as isize - 1) as usize;
        let r = (py.round() as isize).clamp(0, h as isize - 1) as usize;
        map[r * w + c] += 1.0;
        return;
    }
    for &(r, wy) in ys.iter().filter(|p| inside_y(p.0)) {
        let row = &mut map[r as usize * w..(r as usize + 1) * w];
        for &(c, wx) in xs.iter().filter(|p| inside_x(p.0)) {
            row[c as usize] += wy * wx / norm;
        }
    }
}

/// Full-resolution density map `[1, 1, image_h, image_w]`.
///
/// With `renormalize` on, every stamp's in-image mass is 1, so the map sums
/// to the point count. With it off, stamps are normalised over their full
/// window and mass clipped by the border is lost.
pub fn render_density(dotmap: &DotMap, config: &DensityConfig) -> Result<Tensor> {
    dotmap.validate()?;
    config.validate()?;
    let (w, h) = (dotmap.image_w, dotmap.image_h);
    let mut map = vec![0.0; w * h];
    for (i, &p) in dotmap.points.iter().enumerate() {
        let sigma = resolve_sigma(dotmap, i, config)?;
        stamp(&mut map, w, h, p, sigma, config);
    }
    Tensor::new(vec![1, 1, h, w], map)
}

/// Half-resolution training target by 2x2 sum pooling; mass is preserved
/// (odd extents are zero-padded, not replicated, for that reason).
pub fn downscale_target(map: &Tensor) -> Result<Tensor> {
    sumpool2x2(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_sigma_is_constant() {
        let d = DotMap::new(20, 20, vec![(1.0, 1.0), (5.0, 7.0), (19.0, 0.0)]);
        let cfg = DensityConfig::fixed(3.0);
        for i in 0..3 {
            assert_eq!(resolve_sigma(&d, i, &cfg).unwrap(), 3.0);
        }
    }

    #[test]
    fn adaptive_two_points() {
        let d = DotMap::new(40, 40, vec![(5.0, 5.0), (11.0, 13.0)]);
        let cfg = DensityConfig::adaptive(1, 1.0);
        assert_eq!(resolve_sigma(&d, 0, &cfg).unwrap(), 10.0);
        assert_eq!(resolve_sigma(&d, 1, &cfg).unwrap(), 10.0);
    }

    #[test]
    fn adaptive_unit_square() {
        let d = DotMap::new(10, 10, vec![(2.0, 2.0), (3.0, 2.0), (2.0, 3.0), (3.0, 3.0)]);
        let cfg = DensityConfig::adaptive(2, 1.0);
        for i in 0..4 {
            // brute force: sort all distances, average the two smallest
            let mut all: Vec<f64> = (0..4)
                .filter(|&j| j != i)
                .map(|j| {
                    let (a, b) = (d.points[i], d.points[j]);
                    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
                })
                .collect();
            all.sort_by(f64::total_cmp);
            let oracle = (all[0] + all[1]) / 2.0;
            assert_eq!(oracle, 1.0);
            assert_eq!(resolve_sigma(&d, i, &cfg).unwrap(), oracle);
        }
    }

    #[test]
    fn adaptive_k_is_capped_and_single_point_falls_back() {
        let d = DotMap::new(10, 10, vec![(0.0, 0.0), (3.0, 4.0)]);
        assert_eq!(resolve_sigma(&d, 0, &DensityConfig::adaptive(10, 1.0)).unwrap(), 5.0);
        let one = DotMap::new(10, 10, vec![(4.0, 4.0)]);
        let cfg = DensityConfig { fallback_sigma: 2.5, ..DensityConfig::adaptive(3, 1.0) };
        assert_eq!(resolve_sigma(&one, 0, &cfg).unwrap(), 2.5);
    }

    #[test]
    fn altitude_bands() {
        let cfg = DensityConfig::altitude(vec![
            AltitudeBand { min_alt: 0.0, max_alt: 50.0, sigma: 6.0 },
            AltitudeBand { min_alt: 50.0, max_alt: 100.0, sigma: 3.0 },
        ]);
        cfg.validate().unwrap();
        let mut d = DotMap::new(10, 10, vec![(1.0, 1.0)]);
        d.altitude_m = Some(49.9);
        assert_eq!(resolve_sigma(&d, 0, &cfg).unwrap(), 6.0);
        d.altitude_m = Some(50.0);
        assert_eq!(resolve_sigma(&d, 0, &cfg).unwrap(), 3.0);
        d.altitude_m = Some(100.0);
        assert_eq!(resolve_sigma(&d, 0, &cfg).unwrap(), 3.0);
        d.altitude_m = Some(120.0);
        assert!(matches!(resolve_sigma(&d, 0, &cfg), Err(Error::Config(_))));
        d.altitude_m = None;
        let err = resolve_sigma(&d, 0, &cfg).unwrap_err();
        assert!(err.to_string().contains("requires an altitude"), "{err}");
    }

    #[test]
    fn invalid_configs() {
        assert!(DensityConfig::fixed(0.0).validate().is_err());
        assert!(DensityConfig::adaptive(0, 1.0).validate().is_err());
        assert!(DensityConfig::adaptive(1, -1.0).validate().is_err());
        assert!(DensityConfig::altitude(vec![]).validate().is_err());
        let overlap = DensityConfig::altitude(vec![
            AltitudeBand { min_alt: 0.0, max_alt: 60.0, sigma: 1.0 },
            AltitudeBand { min_alt: 50.0, max_alt: 100.0, sigma: 1.0 },
        ]);
        assert!(overlap.validate().is_err());
        let gap = DensityConfig::altitude(vec![
            AltitudeBand { min_alt: 0.0, max_alt: 40.0, sigma: 1.0 },
            AltitudeBand { min_alt: 50.0, max_alt: 100.0, sigma: 1.0 },
        ]);
        assert!(gap.validate().is_err());
    }

    #[test]
    fn empty_dotmap_renders_zero() {
        let m = render_density(&DotMap::new(9, 7, vec![]), &DensityConfig::fixed(2.0)).unwrap();
        assert_eq!(m.shape(), &[1, 1, 7, 9]);
        assert_eq!(m.sum(), 0.0);
    }

    #[test]
    fn interior_point_has_unit_mass() {
        for sigma in [0.3, 1.0, 2.5, 6.0] {
            let d = DotMap::new(80, 80, vec![(40.3, 39.6)]);
            let m = render_density(&d, &DensityConfig::fixed(sigma)).unwrap();
            assert!((m.sum() - 1.0).abs() < 1e-9, "sigma {sigma}: {}", m.sum());
        }
    }

    #[test]
    fn renormalize_off_loses_corner_mass() {
        let d = DotMap::new(30, 30, vec![(0.0, 0.0), (15.0, 15.0)]);
        let on = render_density(&d, &DensityConfig::fixed(3.0)).unwrap();
        assert!((on.sum() - 2.0).abs() < 1e-9);
        let off = render_density(&d, &DensityConfig { renormalize: false, ..DensityConfig::fixed(3.0) }).unwrap();
        assert!(off.sum() < 2.0);
        // independent check: corner stamp keeps the quarter-plane of a
        // discrete Gaussian (axis row/column counted once)
        let s: f64 = (-12i32..=12).map(|i| (-(i * i) as f64 / 18.0).exp()).sum();
        let half: f64 = (0i32..=12).map(|i| (-(i * i) as f64 / 18.0).exp()).sum();
        let expected = 1.0 + (half / s).powi(2);
        assert!((off.sum() - expected).abs() < 1e-12, "{} vs {expected}", off.sum());
    }

    #[test]
    fn tiny_sigma_puts_mass_on_nearest_pixel() {
        let d = DotMap::new(8, 8, vec![(3.4, 5.0)]);
        let m = render_density(&d, &DensityConfig::fixed(1e-4)).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-12);
        assert!((m.at4(0, 0, 5, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn downscale_two_by_two() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let d = downscale_target(&t).unwrap();
        assert_eq!(d.shape(), &[1, 1, 1, 1]);
        assert!((d.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flip_maps_boundary_columns() {
        let d = DotMap::new(100, 10, vec![(0.0, 3.0), (99.0, 4.0), (99.5, 1.0)]);
        let f = d.flipped();
        assert_eq!(f.points, vec![(99.0, 3.0), (0.0, 4.0), (0.0, 1.0)]);
    }
}
