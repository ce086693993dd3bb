//! Linear softmax classifier trained on frozen embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::math::{argmax, dot, softmax_scaled, RowMatrix};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            learning_rate: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "probe.steps and probe.batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("probe.learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("probe.weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("probe.momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Affine scores `W x + b` followed by a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: RowMatrix,
    pub bias: Vec<f64>,
}

/// Gradient of the regularized batch loss with respect to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGradient {
    pub loss: f64,
    pub weights: RowMatrix,
    pub bias: Vec<f64>,
}

impl ProbeModel {
    pub fn zeros(k: usize, dim: usize) -> Self {
        Self {
            weights: RowMatrix::zeros(k, dim),
            bias: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter_rows()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }

    pub fn proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.k()];
        softmax_scaled(&self.logits(x), 1.0, &mut p);
        p
    }

    /// Mean cross-entropy over `batch` plus `weight_decay / 2 · ‖W‖²`.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], usize)], weight_decay: f64) -> ProbeGradient {
        let (k, d) = (self.k(), self.dim());
        let mut gw = RowMatrix::zeros(k, d);
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(x, y) in batch {
            let logits = self.logits(x);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
            loss += (log_sum - logits[y]) * scale;
            for j in 0..k {
                let delta = ((logits[j] - log_sum).exp() - if j == y { 1.0 } else { 0.0 }) * scale;
                gb[j] += delta;
                gw.row_mut(j).iter_mut().zip(x).for_each(|(g, xi)| *g += delta * xi);
            }
        }
        let w = self.weights.as_slice();
        loss += 0.5 * weight_decay * dot(w, w);
        gw.as_mut_slice()
            .iter_mut()
            .zip(w)
            .for_each(|(g, wi)| *g += weight_decay * wi);
        ProbeGradient {
            loss,
            weights: gw,
            bias: gb,
        }
    }

    /// K×(D+1) export: each row holds a class's weights followed by its bias.
    pub fn to_matrix(&self) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(self.k() * (self.dim() + 1));
        for (w, b) in self.weights.iter_rows().zip(&self.bias) {
            data.extend(w.iter().map(|&v| v as f32));
            data.push(*b as f32);
        }
        EmbeddingMatrix::new(self.k(), self.dim() + 1, data).expect("finite probe weights")
    }
}

/// Train from zero initialization with mini-batch SGD (momentum, weight decay).
/// Batches walk a seeded permutation that is reshuffled after each pass.
pub fn train_probe(
    images: &EmbeddingMatrix,
    labeled_id: &[(usize, usize)],
    k: usize,
    config: &ProbeConfig,
) -> Result<ProbeModel> {
    config.validate()?;
    if labeled_id.is_empty() {
        return Err(Error::Precondition(
            "cannot train the probe on an empty labeled set".into(),
        ));
    }
    if k < 2 {
        return Err(Error::Precondition(format!("probe needs at least 2 classes, got {k}")));
    }
    if let Some(&(i, c)) = labeled_id.iter().find(|&&(i, c)| c >= k || i >= images.rows()) {
        return Err(Error::Precondition(format!(
            "training pair (sample {i}, class {c}) out of range"
        )));
    }

    let rows: Vec<Vec<f64>> = labeled_id.iter().map(|&(i, _)| images.row_f64(i)).collect();
    let labels: Vec<usize> = labeled_id.iter().map(|&(_, c)| c).collect();
    let batch_size = config.batch_size.min(rows.len());

    let mut model = ProbeModel::zeros(k, images.dim());
    let mut vel_w = RowMatrix::zeros(k, images.dim());
    let mut vel_b = vec![0.0; k];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    for _ in 0..config.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            batch.push((rows[i].as_slice(), labels[i]));
            cursor += 1;
        }
        let grad = model.loss_and_gradient(&batch, config.weight_decay);
        let (lr, mu) = (config.learning_rate, config.momentum);
        for ((p, v), g) in model
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(vel_w.as_mut_slice())
            .zip(grad.weights.as_slice())
        {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        for ((p, v), g) in model.bias.iter_mut().zip(&mut vel_b).zip(&grad.bias) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
    if model
        .weights
        .as_slice()
        .iter()
        .chain(&model.bias)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Diverged(
            "non-finite probe weights (learning rate too high?)".into(),
        ));
    }
    Ok(model)
}

/// Class probabilities for the listed rows, in order.
pub fn predict_proba(model: &ProbeModel, images: &EmbeddingMatrix, indices: &[usize]) -> Result<RowMatrix> {
    if images.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: images.dim(),
        });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= images.rows()) {
        return Err(Error::Precondition(format!("sample {bad} out of range")));
    }
    let rows = par::map_slice(indices, |&i| model.proba(&images.row_f64(i)));
    Ok(RowMatrix::from_vec(indices.len(), model.k(), rows.concat()))
}

/// Fraction of rows whose argmax prediction (ties to the lowest class)
/// equals `labels[i]`. `labels` must have one entry per row of `images`.
pub fn evaluate_accuracy(model: &ProbeModel, images: &EmbeddingMatrix, labels: &[usize]) -> Result<f64> {
    if images.rows() == 0 {
        return Err(Error::Precondition("empty test set".into()));
    }
    if labels.len() != images.rows() {
        return Err(Error::DimensionMismatch {
            expected: images.rows(),
            found: labels.len(),
        });
    }
    if images.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: images.dim(),
        });
    }
    let hits = par::map_range(images.rows(), |i| {
        argmax(&model.logits(&images.row_f64(i))) == labels[i]
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / images.rows() as f64)
}
