//! Zero-shot purity assessment of unlabeled samples.
//!
//! Scores follow the agreeing-to-differ rule over "yes"/"no" prompt
//! embeddings, optionally reweighted by similarity to labeled-ID class
//! prototypes, with the softmax temperature tuned on already-labeled data.

mod prompts;
mod scores;
mod tuning;

pub use prompts::{average_prompt_embeddings, PromptEmbeddings};
pub use scores::{
    atd_row, class_prototypes, clipn_scores, weight_row, weighted_scores, AtdRow, Prototypes, PurityScores, Temperature,
};
pub use tuning::{tune_temperature, TemperatureFit, TemperatureGrid};

use crate::embed::{EmbeddingMatrix, OpenSetPool};
use crate::error::{Error, Result};

/// Scores for the unlabeled pool; row `i` of `scores` is sample `indices[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PurityAssessment {
    pub indices: Vec<usize>,
    pub scores: PurityScores,
    pub tau: Temperature,
    pub tuning_accuracy: Option<f64>,
}

/// Tune τ, build prototypes, and score every unlabeled sample. Visual
/// weighting is skipped for the whole call when any ID class has no labeled
/// sample.
pub fn assess_purity(
    images: &EmbeddingMatrix,
    prompts: &PromptEmbeddings,
    pool: &OpenSetPool,
    grid: &TemperatureGrid,
) -> Result<PurityAssessment> {
    if prompts.k() != pool.k() {
        return Err(Error::Prompt(format!(
            "{} prompt classes for {} ID classes",
            prompts.k(),
            pool.k()
        )));
    }
    let protos = class_prototypes(images, &pool.labeled_id, pool.k())?;
    let weighted = protos.all_present();
    if !weighted {
        let missing: Vec<usize> = (0..pool.k()).filter(|&j| !protos.present[j]).collect();
        log::info!("visual weighting skipped: no labeled samples for ID classes {missing:?}");
    }
    let fit = tune_temperature(images, prompts, weighted.then_some(&protos), pool, grid)?;

    let candidates = images.select_rows(&pool.unlabeled);
    let mut scores = clipn_scores(&candidates, prompts, fit.tau)?;
    if weighted {
        scores = weighted_scores(&scores, &protos, &candidates, fit.tau)?;
    }
    Ok(PurityAssessment {
        indices: pool.unlabeled.clone(),
        scores,
        tau: fit.tau,
        tuning_accuracy: fit.accuracy,
    })
}
