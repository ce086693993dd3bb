use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingMatrix, OpenSetPool};
use crate::error::{Error, Result};
use crate::math::{dot, normalize_in_place, RowMatrix};
use crate::par;
use crate::purity::scores::{atd_row, weight_row};
use crate::purity::{PromptEmbeddings, Prototypes, Temperature};

/// Uniform grid of `steps` temperatures from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureGrid {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Default for TemperatureGrid {
    /// 0.001, 0.002, …, 1.0.
    fn default() -> Self {
        Self {
            min: 0.001,
            max: 1.0,
            steps: 1000,
        }
    }
}

impl TemperatureGrid {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("tau_grid.steps must be at least 1 (empty grid)".into()));
        }
        if !(self.min > 0.0 && self.min.is_finite()) {
            return Err(Error::Config(format!(
                "tau_grid.min must be positive, got {}",
                self.min
            )));
        }
        if !(self.max >= self.min && self.max.is_finite()) {
            return Err(Error::Config(format!(
                "tau_grid.max ({}) must be finite and >= min ({})",
                self.max, self.min
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min];
        }
        let span = self.max - self.min;
        let last = (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.min + span * i as f64 / last).collect()
    }
}

/// Outcome of self-temperature tuning. `accuracy` is `None` when the
/// fallback temperature was used because a labeled side was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureFit {
    pub tau: Temperature,
    pub accuracy: Option<f64>,
    pub weighted: bool,
}

struct LabeledSims {
    yes: Vec<Vec<f64>>,
    no: Vec<Vec<f64>>,
    proto: Option<Vec<Vec<f64>>>,
    is_ood: Vec<bool>,
}

fn sims_for(rows: &[usize], images: &EmbeddingMatrix, targets: &RowMatrix) -> Vec<Vec<f64>> {
    par::map_slice(rows, |&i| {
        let mut z = images.row_f64(i);
        normalize_in_place(&mut z);
        targets.iter_rows().map(|t| dot(&z, t)).collect()
    })
}

/// Number of labeled samples whose predicted OOD flag matches the truth at `tau`.
fn correct_at(sims: &LabeledSims, tau: f64) -> usize {
    let k = sims.yes.first().map_or(0, Vec::len);
    let mut s = vec![0.0; k];
    (0..sims.is_ood.len())
        .filter(|&i| {
            let mut row = atd_row(&sims.yes[i], &sims.no[i], tau);
            let predicted = match &sims.proto {
                Some(proto) => weight_row(&mut row.p_id, row.p_ood, &proto[i], tau, &mut s).1,
                None => row.is_ood,
            };
            predicted == sims.is_ood[i]
        })
        .count()
}

/// Grid-search τ maximizing binary ID/OOD accuracy of the purity indicator on
/// the labeled sets of `pool`. The weighted indicator is used when `protos`
/// is given and has every class present. Ties go to the smallest τ.
pub fn tune_temperature(
    images: &EmbeddingMatrix,
    prompts: &PromptEmbeddings,
    protos: Option<&Prototypes>,
    pool: &OpenSetPool,
    grid: &TemperatureGrid,
) -> Result<TemperatureFit> {
    grid.validate()?;
    if images.dim() != prompts.dim() {
        return Err(Error::DimensionMismatch {
            expected: prompts.dim(),
            found: images.dim(),
        });
    }
    let protos = protos.filter(|p| p.all_present());
    let weighted = protos.is_some();
    if pool.labeled_id.is_empty() || pool.labeled_ood.is_empty() {
        log::info!(
            "temperature tuning skipped ({} ID / {} OOD labeled); using tau = {}",
            pool.labeled_id.len(),
            pool.labeled_ood.len(),
            Temperature::FALLBACK.value()
        );
        return Ok(TemperatureFit {
            tau: Temperature::FALLBACK,
            accuracy: None,
            weighted,
        });
    }

    let rows = pool.labeled_indices();
    let sims = LabeledSims {
        yes: sims_for(&rows, images, prompts.yes_text()),
        no: sims_for(&rows, images, prompts.no_text()),
        proto: protos.map(|p| sims_for(&rows, images, &p.phi)),
        is_ood: (0..rows.len()).map(|i| i >= pool.labeled_id.len()).collect(),
    };

    let taus = grid.points();
    let correct = par::map_slice(&taus, |&tau| correct_at(&sims, tau));
    let mut best = 0;
    for (i, &c) in correct.iter().enumerate() {
        if c > correct[best] {
            best = i;
        }
    }
    Ok(TemperatureFit {
        tau: Temperature::new(taus[best])?,
        accuracy: Some(correct[best] as f64 / rows.len() as f64),
        weighted,
    })
}
