//! Easy-to-hard batch ordering.
//!
//! Samples are scored once by a difficulty oracle, sorted ascending, and
//! chunked into consecutive mini-batches that are replayed in the same order
//! every epoch.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::groundtruth::{render_density, DensityConfig};
use crate::model::{count_from_density, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyScore {
    pub sample_id: String,
    pub score: f64,
    pub oracle_name: String,
}

/// Scores one sample; larger is harder.
pub trait DifficultyOracle: Sync {
    fn name(&self) -> &str;
    fn score(&self, sample: &Sample) -> Result<f64>;
}

/// Anything that can predict an image's object count.
pub trait CountPredictor: Sync {
    fn predict_count(&self, sample: &Sample) -> Result<f64>;
}

impl CountPredictor for ModelParams {
    fn predict_count(&self, sample: &Sample) -> Result<f64> {
        let density = self.forward(&sample.image)?;
        count_from_density(&density, None)
    }
}

/// A teacher that reads the answer off the annotations by rendering the
/// ground-truth map. Its counting error is zero up to rendering precision.
#[derive(Debug, Clone)]
pub struct GroundTruthTeacher {
    pub density: DensityConfig,
}

impl CountPredictor for GroundTruthTeacher {
    fn predict_count(&self, sample: &Sample) -> Result<f64> {
        count_from_density(&render_density(&sample.dots, &self.density)?, None)
    }
}

/// `|teacher count - annotated count|`.
pub struct TeacherError<T> {
    pub teacher: T,
}

impl<T: CountPredictor> DifficultyOracle for TeacherError<T> {
    fn name(&self) -> &str {
        "teacher-error"
    }

    fn score(&self, sample: &Sample) -> Result<f64> {
        let predicted = self.teacher.predict_count(sample)?;
        Ok((predicted - sample.dots.count() as f64).abs())
    }
}

/// The annotated count itself: denser scenes are harder.
#[derive(Debug, Clone, Copy, Default)]
pub struct CountProxy;

impl DifficultyOracle for CountProxy {
    fn name(&self) -> &str {
        "count-proxy"
    }

    fn score(&self, sample: &Sample) -> Result<f64> {
        Ok(sample.dots.count() as f64)
    }
}

/// Precomputed scores, one `sample_id score` pair per line (whitespace or
/// comma separated, `#` comments).
#[derive(Debug, Clone, Default)]
pub struct FileOracle {
    scores: HashMap<String, f64>,
}

impl FileOracle {
    pub fn from_scores(scores: HashMap<String, f64>) -> Self {
        Self { scores }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut scores = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.rsplitn(2, |c: char| c == ',' || c.is_whitespace());
            let value = parts.next().unwrap_or("");
            let id = parts.next().map(str::trim).unwrap_or("");
            let score: f64 =
                value.parse().map_err(|_| Error::load(origin, Some(i + 1), format!("`{value}` is not a score")))?;
            if id.is_empty() {
                return Err(Error::load(origin, Some(i + 1), "missing sample id"));
            }
            scores.insert(id.to_string(), score);
        }
        Ok(Self { scores })
    }

    pub fn into_scores(self) -> HashMap<String, f64> {
        self.scores
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

impl DifficultyOracle for FileOracle {
    fn name(&self) -> &str {
        "file"
    }

    fn score(&self, sample: &Sample) -> Result<f64> {
        self.scores
            .get(&sample.id)
            .copied()
            .ok_or_else(|| Error::Scoring { sample: sample.id.clone(), reason: "no score in difficulty file".into() })
    }
}

/// One score per sample, in sample order. Scoring runs in parallel.
pub fn score_samples(oracle: &dyn DifficultyOracle, samples: &[Sample]) -> Result<Vec<DifficultyScore>> {
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|s| {
            let score = oracle.score(s).map_err(|e| match e {
                e @ Error::Scoring { .. } => e,
                other => Error::Scoring { sample: s.id.clone(), reason: other.to_string() },
            })?;
            if !(score.is_finite() && score >= 0.0) {
                return Err(Error::Scoring {
                    sample: s.id.clone(),
                    reason: format!("score {score} is not a finite non-negative number"),
                });
            }
            Ok(DifficultyScore { sample_id: s.id.clone(), score, oracle_name: oracle.name().to_string() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumPlan {
    pub batches: Vec<Vec<String>>,
    pub batch_size: usize,
    /// Scores of each batch member, parallel to `batches`.
    pub batch_scores: Vec<Vec<f64>>,
}

impl CurriculumPlan {
    pub fn batch_means(&self) -> Vec<f64> {
        self.batch_scores.iter().map(|b| b.iter().sum::<f64>() / b.len() as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// One sample id per line, a blank line between batches.
    pub fn export(&self) -> String {
        self.batches
            .iter()
            .map(|b| b.iter().map(|id| format!("{id}\n")).collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Batches from an exported plan (scores are not stored in the file).
    pub fn parse_batches(text: &str) -> Vec<Vec<String>> {
        let mut out = vec![];
        let mut cur = vec![];
        for line in text.lines() {
            if line.trim().is_empty() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(line.trim().to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }
}

/// Sorts ascending by score and chunks into batches of `batch_size` (the
/// last batch may be short).
///
/// Equal scores are first put in sample-id order, then each group of exactly
/// tied scores is shuffled with a ChaCha8 stream seeded by `seed`. The result
/// depends only on `(scores, batch_size, seed)`, not on input order.
pub fn build_plan(scores: &[DifficultyScore], batch_size: usize, seed: u64) -> Result<CurriculumPlan> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    if scores.is_empty() {
        return Err(Error::config("cannot build a curriculum from an empty sample set"));
    }
    let mut seen = HashSet::new();
    for s in scores {
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::config(format!("duplicate sample id `{}`", s.sample_id)));
        }
        if !(s.score.is_finite() && s.score >= 0.0) {
            return Err(Error::config(format!("sample `{}` has invalid score {}", s.sample_id, s.score)));
        }
    }

    let mut order: Vec<&DifficultyScore> = scores.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.sample_id.cmp(&b.sample_id)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = 0;
    while start < order.len() {
        let end = start + order[start..].iter().take_while(|s| s.score == order[start].score).count();
        if end - start > 1 {
            order[start..end].shuffle(&mut rng);
        }
        start = end;
    }

    let batches = order.chunks(batch_size).map(|c| c.iter().map(|s| s.sample_id.clone()).collect()).collect();
    let batch_scores = order.chunks(batch_size).map(|c| c.iter().map(|s| s.score).collect()).collect();
    Ok(CurriculumPlan { batches, batch_size, batch_scores })
}
