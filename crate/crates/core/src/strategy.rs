//! Query strategies: RANDOM, CONF (least confidence), CORESET (k-center
//! greedy), and the two-stage purity-then-informativeness CLIPNAL rule.
//!
//! All tie-breaks resolve to the lowest sample index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingMatrix, OpenSetPool};
use crate::error::{Error, Result};
use crate::math::{max_value, squared_distance, RowMatrix};
use crate::par;
use crate::probe::{predict_proba, ProbeModel};
use crate::purity::{assess_purity, PromptEmbeddings, Temperature, TemperatureGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Random,
    Conf,
    Coreset,
    Clipnal,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::Random, Self::Conf, Self::Coreset, Self::Clipnal];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Conf => "conf",
            Self::Coreset => "coreset",
            Self::Clipnal => "clipnal",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "strategy: unknown strategy {s:?}, expected one of random, conf, coreset, clipnal"
            ))
        })
    }
}

/// Samples chosen for annotation in one round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    pub selected: Vec<usize>,
    /// Informativeness of each selected sample, aligned with `selected`.
    pub scores: Option<Vec<f64>>,
    /// Slots filled with predicted-OOD samples because too few candidates
    /// were predicted ID.
    pub fallback_used: usize,
}

/// Uniform sample without replacement from the unlabeled pool.
pub fn random_select(pool: &OpenSetPool, budget: usize, seed: u64) -> QueryResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pool.unlabeled.len();
    let selected = index::sample(&mut rng, n, budget.min(n))
        .into_iter()
        .map(|k| pool.unlabeled[k])
        .collect();
    QueryResult {
        selected,
        scores: None,
        fallback_used: 0,
    }
}

/// Least-confidence score `1 - max_j p_j` of a probability row.
pub fn least_confidence(proba: &[f64]) -> f64 {
    1.0 - max_value(proba)
}

/// Least-confidence scores for `candidates`; higher is more informative.
pub fn conf_scores(model: &ProbeModel, images: &EmbeddingMatrix, candidates: &[usize]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidates to score".into()));
    }
    let proba = predict_proba(model, images, candidates)?;
    Ok(proba.iter_rows().map(least_confidence).collect())
}

/// Positions of the `budget` highest scores, descending; ties go to the
/// lower sample index.
fn rank_desc(candidates: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| candidates[a].cmp(&candidates[b]))
    });
    order
}

/// Top-`budget` candidates by score.
pub fn top_by_score(candidates: &[usize], scores: &[f64], budget: usize) -> QueryResult {
    let order = rank_desc(candidates, scores);
    let picked: Vec<usize> = order.into_iter().take(budget).collect();
    QueryResult {
        selected: picked.iter().map(|&p| candidates[p]).collect(),
        scores: Some(picked.iter().map(|&p| scores[p]).collect()),
        fallback_used: 0,
    }
}

/// k-center greedy on L2-normalized embeddings. `scores` records each
/// pick's distance to its nearest center at the time it was chosen.
pub fn coreset_select(
    images: &EmbeddingMatrix,
    labeled_indices: &[usize],
    candidates: &[usize],
    budget: usize,
) -> Result<QueryResult> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no candidates for coreset selection".into()));
    }
    if let Some(&bad) = labeled_indices.iter().chain(candidates).find(|&&i| i >= images.rows()) {
        return Err(Error::Precondition(format!("sample {bad} out of range")));
    }
    Ok(k_center_greedy(
        &images.normalized(),
        labeled_indices,
        candidates,
        budget,
    ))
}

/// Greedy k-center over rows of `points` (no normalization): repeatedly take
/// the candidate farthest from its nearest center among `centers` and the
/// picks so far. With no centers, the first pick is the candidate farthest
/// from the candidate centroid.
pub fn k_center_greedy(points: &RowMatrix, centers: &[usize], candidates: &[usize], budget: usize) -> QueryResult {
    let mut min_sq: Vec<f64> = if !centers.is_empty() {
        par::map_slice(candidates, |&c| {
            centers
                .iter()
                .map(|&x| squared_distance(points.row(c), points.row(x)))
                .fold(f64::INFINITY, f64::min)
        })
    } else {
        let mut centroid = vec![0.0; points.cols()];
        for &c in candidates {
            centroid
                .iter_mut()
                .zip(points.row(c))
                .for_each(|(a, v)| *a += v / candidates.len() as f64);
        }
        par::map_slice(candidates, |&c| squared_distance(points.row(c), &centroid))
    };

    let take = budget.min(candidates.len());
    let mut selected = Vec::with_capacity(take);
    let mut scores = Vec::with_capacity(take);
    let mut taken = vec![false; candidates.len()];
    for _ in 0..take {
        let mut best: Option<usize> = None;
        for i in (0..candidates.len()).filter(|&i| !taken[i]) {
            best = match best {
                None => Some(i),
                Some(b) => match min_sq[i].total_cmp(&min_sq[b]) {
                    Ordering::Greater => Some(i),
                    Ordering::Equal if candidates[i] < candidates[b] => Some(i),
                    _ => Some(b),
                },
            };
        }
        let b = best.expect("at least one candidate remains");
        taken[b] = true;
        selected.push(candidates[b]);
        scores.push(min_sq[b].sqrt());
        let center = points.row(candidates[b]);
        if centers.is_empty() && selected.len() == 1 {
            // The centroid only seeds the first pick; it is not a center.
            min_sq.iter_mut().for_each(|d| *d = f64::INFINITY);
        }
        par::for_each_mut(&mut min_sq, |i, d| {
            let nd = squared_distance(points.row(candidates[i]), center);
            if nd < *d {
                *d = nd;
            }
        });
    }
    QueryResult {
        selected,
        scores: Some(scores),
        fallback_used: 0,
    }
}

/// Second stage of CLIPNAL: rank predicted-ID candidates (`is_ood[i] ==
/// false`) by `informativeness`; if fewer than `budget` exist, fill the rest
/// with predicted-OOD candidates in ascending `p_ood`.
pub fn select_with_purity(
    candidates: &[usize],
    is_ood: &[bool],
    p_ood: &[f64],
    informativeness: &[f64],
    budget: usize,
) -> QueryResult {
    let (id_pos, ood_pos): (Vec<usize>, Vec<usize>) = (0..candidates.len()).partition(|&i| !is_ood[i]);
    let id_cands: Vec<usize> = id_pos.iter().map(|&i| candidates[i]).collect();
    let id_scores: Vec<f64> = id_pos.iter().map(|&i| informativeness[i]).collect();
    let mut out = top_by_score(&id_cands, &id_scores, budget);

    let shortfall = budget.saturating_sub(out.selected.len());
    if shortfall > 0 && !ood_pos.is_empty() {
        let mut fill = ood_pos;
        fill.sort_by(|&a, &b| {
            p_ood[a]
                .total_cmp(&p_ood[b])
                .then_with(|| candidates[a].cmp(&candidates[b]))
        });
        fill.truncate(shortfall);
        let scores = out.scores.get_or_insert_with(Vec::new);
        for &p in &fill {
            out.selected.push(candidates[p]);
            scores.push(informativeness[p]);
        }
        out.fallback_used = fill.len();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipnalSelection {
    pub query: QueryResult,
    pub tau: Temperature,
    pub tuning_accuracy: Option<f64>,
    pub weighted: bool,
}

/// Purity assessment over the unlabeled pool, then least-confidence ranking
/// among the samples predicted ID.
pub fn clipnal_select(
    pool: &OpenSetPool,
    images: &EmbeddingMatrix,
    prompts: &PromptEmbeddings,
    model: &ProbeModel,
    budget: usize,
    grid: &TemperatureGrid,
) -> Result<ClipnalSelection> {
    if pool.unlabeled.is_empty() {
        return Err(Error::Precondition("no candidates: unlabeled pool is empty".into()));
    }
    let purity = assess_purity(images, prompts, pool, grid)?;
    let info = conf_scores(model, images, &purity.indices)?;
    let query = select_with_purity(
        &purity.indices,
        &purity.scores.indicator,
        &purity.scores.p_ood,
        &info,
        budget,
    );
    Ok(ClipnalSelection {
        query,
        tau: purity.tau,
        tuning_accuracy: purity.tuning_accuracy,
        weighted: purity.scores.weighted,
    })
}
