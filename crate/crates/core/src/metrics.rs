//! Counting and map-quality metrics: MAE, GAME, SSIM and PSNR.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::map_extent;
use crate::numerics::Tensor;

/// Mean absolute count error over `(predicted, ground_truth)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::config("MAE of an empty set is undefined"));
    }
    Ok(pairs.iter().map(|(p, g)| (p - g).abs()).sum::<f64>() / pairs.len() as f64)
}

/// How a map is cut into GAME patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSetting {
    /// `4^level` patches on a `2^level x 2^level` grid.
    Power {
        level: u32,
    },
    Explicit {
        rows: usize,
        cols: usize,
    },
}

impl Default for GridSetting {
    fn default() -> Self {
        GridSetting::Explicit { rows: 4, cols: 4 }
    }
}

impl GridSetting {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            GridSetting::Power { level } => (1 << level, 1 << level),
            GridSetting::Explicit { rows, cols } => (rows, cols),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            GridSetting::Power { level } => format!("power(L={level}, {0}x{0})", 1usize << level),
            GridSetting::Explicit { rows, cols } => format!("{rows}x{cols}"),
        }
    }
}

/// Boundaries `floor(i * n / parts)` for `i = 0..=parts`. Patch sizes differ
/// by at most one and refining the grid by an integer factor nests the old
/// boundaries.
fn cuts(n: usize, parts: usize) -> Vec<usize> {
    (0..=parts).map(|i| i * n / parts).collect()
}

fn same_extent(pred: &Tensor, gt: &Tensor) -> Result<(usize, usize)> {
    let pe = map_extent(pred)?;
    let ge = map_extent(gt)?;
    if pe != ge {
        return Err(Error::dim(format!("maps differ in size: {pe:?} vs {ge:?}")));
    }
    Ok(pe)
}

/// Grid average mean absolute error of one image: the sum over patches of
/// `|patch_sum(pred) - patch_sum(gt)|`.
pub fn game(pred: &Tensor, gt: &Tensor, grid: GridSetting) -> Result<f64> {
    let (h, w) = same_extent(pred, gt)?;
    let (rows, cols) = grid.dims();
    if rows == 0 || cols == 0 {
        return Err(Error::config("GAME grid needs at least one row and one column"));
    }
    if rows > h || cols > w {
        return Err(Error::config(format!("a {rows}x{cols} GAME grid does not fit a {w}x{h} map")));
    }
    let (ys, xs) = (cuts(h, rows), cuts(w, cols));
    let (p, g) = (pred.data(), gt.data());
    let mut total = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let mut sp = 0.0;
            let mut sg = 0.0;
            for y in ys[r]..ys[r + 1] {
                for x in xs[c]..xs[c + 1] {
                    sp += p[y * w + x];
                    sg += g[y * w + x];
                }
            }
            total += (sp - sg).abs();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SsimMode {
    /// Statistics over the whole map.
    GlobalStats,
    /// Mean over every `size x size` window that fits inside the map.
    Windowed { size: usize },
}

/// SSIM stabilisers. `None` constants and range are derived per image pair:
/// range is the largest absolute value in either map (1 if both are zero),
/// `c1 = (0.01 range)^2`, `c2 = (0.03 range)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub dynamic_range: Option<f64>,
    pub mode: SsimMode,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { c1: None, c2: None, dynamic_range: None, mode: SsimMode::GlobalStats }
    }
}

impl SsimConfig {
    pub fn windowed(size: usize) -> Self {
        Self { mode: SsimMode::Windowed { size }, ..Self::default() }
    }

    /// Constants for a particular pair of maps.
    pub fn constants(&self, pred: &Tensor, gt: &Tensor) -> Result<(f64, f64)> {
        let range = match self.dynamic_range {
            Some(r) => r,
            None => {
                let m = pred.data().iter().chain(gt.data()).fold(0.0f64, |m, v| m.max(v.abs()));
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            }
        };
        let c1 = self.c1.unwrap_or((0.01 * range).powi(2));
        let c2 = self.c2.unwrap_or((0.03 * range).powi(2));
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::config(format!("SSIM constants must be positive (c1={c1}, c2={c2})")));
        }
        Ok((c1, c2))
    }

    pub fn describe(&self) -> String {
        let mode = match self.mode {
            SsimMode::GlobalStats => "global".to_string(),
            SsimMode::Windowed { size } => format!("windowed({size})"),
        };
        let show = |v: Option<f64>| v.map_or("auto".to_string(), |v| format!("{v:e}"));
        format!("mode={mode} c1={} c2={} range={}", show(self.c1), show(self.c2), show(self.dynamic_range))
    }
}

/// SSIM from population statistics over one window.
fn ssim_stats(x: impl Iterator<Item = (f64, f64)> + Clone, n: f64, c1: f64, c2: f64) -> f64 {
    let (sx, sy) = x.clone().fold((0.0, 0.0), |(a, b), (p, q)| (a + p, b + q));
    let (mx, my) = (sx / n, sy / n);
    let (vx, vy, cov) = x.fold((0.0, 0.0, 0.0), |(a, b, c), (p, q)| {
        let (dp, dq) = (p - mx, q - my);
        (a + dp * dp, b + dq * dq, c + dp * dq)
    });
    let (vx, vy, cov) = (vx / n, vy / n, cov / n);
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

pub fn ssim(pred: &Tensor, gt: &Tensor, config: &SsimConfig) -> Result<f64> {
    let (h, w) = same_extent(pred, gt)?;
    if h == 0 || w == 0 {
        return Err(Error::dim("SSIM of an empty map"));
    }
    let (c1, c2) = config.constants(pred, gt)?;
    let (p, g) = (pred.data(), gt.data());
    match config.mode {
        SsimMode::GlobalStats => Ok(ssim_stats(p.iter().copied().zip(g.iter().copied()), (h * w) as f64, c1, c2)),
        SsimMode::Windowed { size } => {
            if size == 0 || size > h || size > w {
                return Err(Error::config(format!("SSIM window {size} does not fit a {w}x{h} map")));
            }
            let mut total = 0.0;
            let mut windows = 0usize;
            for y0 in 0..=h - size {
                for x0 in 0..=w - size {
                    let it = (y0..y0 + size)
                        .flat_map(move |y| (x0..x0 + size).map(move |x| y * w + x))
                        .map(|i| (p[i], g[i]));
                    total += ssim_stats(it, (size * size) as f64, c1, c2);
                    windows += 1;
                }
            }
            Ok(total / windows as f64)
        }
    }
}

/// Peak signal-to-noise ratio in dB. `max_value` defaults to the largest
/// ground-truth value. Identical maps give `f64::INFINITY`.
pub fn psnr(pred: &Tensor, gt: &Tensor, max_value: Option<f64>) -> Result<f64> {
    let (h, w) = same_extent(pred, gt)?;
    let max = max_value.unwrap_or_else(|| gt.max());
    if !(max > 0.0) {
        return Err(Error::config(format!(
            "PSNR peak value must be positive, got {max} (pass an explicit maximum for an all-zero ground truth)"
        )));
    }
    let mse = pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (h * w) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max * max / mse).log10())
}

/// Evaluation settings echoed into every report.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsConfig {
    pub grid: GridSetting,
    pub ssim: SsimConfig,
    pub psnr_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub sample_id: String,
    pub gt_count: f64,
    pub pred_count: f64,
    pub abs_err: f64,
    pub game: f64,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateMetrics {
    pub mae: f64,
    pub game: f64,
    pub mean_ssim: f64,
    /// Mean over images with finite PSNR; infinite if every image is exact.
    pub mean_psnr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: AggregateMetrics,
    pub config: MetricsConfig,
}

/// Scores one predicted/ground-truth map pair.
pub fn evaluate_image(sample_id: &str, pred: &Tensor, gt: &Tensor, config: &MetricsConfig) -> Result<ImageMetrics> {
    same_extent(pred, gt)?;
    let pred_count = pred.sum();
    let gt_count = gt.sum();
    Ok(ImageMetrics {
        sample_id: sample_id.to_string(),
        gt_count,
        pred_count,
        abs_err: (pred_count - gt_count).abs(),
        game: game(pred, gt, config.grid)?,
        ssim: ssim(pred, gt, &config.ssim)?,
        psnr: psnr(pred, gt, config.psnr_max.or(Some(if gt.max() > 0.0 { gt.max() } else { 1.0 })))?,
    })
}

impl MetricReport {
    pub fn from_images(per_image: Vec<ImageMetrics>, config: MetricsConfig) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::config("cannot report metrics over zero images"));
        }
        let n = per_image.len() as f64;
        let pairs: Vec<_> = per_image.iter().map(|m| (m.pred_count, m.gt_count)).collect();
        let finite: Vec<f64> = per_image.iter().map(|m| m.psnr).filter(|p| p.is_finite()).collect();
        let aggregate = AggregateMetrics {
            mae: mae(&pairs)?,
            game: per_image.iter().map(|m| m.game).sum::<f64>() / n,
            mean_ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
            mean_psnr: if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 },
        };
        Ok(Self { per_image, aggregate, config })
    }

    /// Evaluates `(sample_id, pred, gt)` triples.
    pub fn evaluate<'a>(
        maps: impl IntoIterator<Item = (&'a str, &'a Tensor, &'a Tensor)>,
        config: MetricsConfig,
    ) -> Result<Self> {
        let rows = maps.into_iter().map(|(id, p, g)| evaluate_image(id, p, g, &config)).collect::<Result<Vec<_>>>()?;
        Self::from_images(rows, config)
    }

    fn config_line(&self) -> String {
        let psnr_max = self.config.psnr_max.map_or("gt-max".to_string(), |m| format!("{m}"));
        format!("grid={} ssim[{}] psnr_max={psnr_max}", self.config.grid.describe(), self.config.ssim.describe())
    }

    /// Aligned table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.config_line());
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>10} {:>9} {:>9} {:>7} {:>8}",
            "sample", "gt", "pred", "abs_err", "game", "ssim", "psnr"
        );
        for m in &self.per_image {
            let _ = writeln!(
                out,
                "{:<24} {:>10.3} {:>10.3} {:>9.3} {:>9.3} {:>7.4} {:>8.2}",
                m.sample_id, m.gt_count, m.pred_count, m.abs_err, m.game, m.ssim, m.psnr
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "MAE {:.4}  GAME {:.4}  SSIM {:.4}  PSNR {:.2} dB  ({} images)",
            a.mae,
            a.game,
            a.mean_ssim,
            a.mean_psnr,
            self.per_image.len()
        );
        out
    }

    /// Tab-separated rows; the aggregate row has sample id `*`. Numbers are
    /// written with round-trip precision.
    pub fn render_delimited(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.config_line());
        out.push_str("sample_id\tgt_count\tpred_count\tabs_err\tgame\tssim\tpsnr\n");
        for m in &self.per_image {
            let _ = writeln!(
                out,
                "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
                m.sample_id, m.gt_count, m.pred_count, m.abs_err, m.game, m.ssim, m.psnr
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(out, "*\t\t\t{:?}\t{:?}\t{:?}\t{:?}", a.mae, a.game, a.mean_ssim, a.mean_psnr);
        out
    }
}
