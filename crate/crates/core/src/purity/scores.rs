use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::math::{dot, max_value, normalize_in_place, softmax_scaled, RowMatrix};
use crate::par;
use crate::purity::PromptEmbeddings;

/// Softmax temperature τ > 0 shared by the yes/no and visual-weight softmaxes.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    /// Used when there is not enough labeled data to tune.
    pub const FALLBACK: Temperature = Temperature(0.1);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::Config(format!(
                "temperature must be positive and finite, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Per-sample purity probabilities.
///
/// When `weighted` is set, `p_id` and `p_ood` hold the visually weighted
/// values (`p_id ⊙ s` and `p_ood / K`) and `s` holds the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PurityScores {
    pub p_yes: RowMatrix,
    pub p_no: RowMatrix,
    pub p_id: RowMatrix,
    pub p_ood: Vec<f64>,
    /// `true` means the sample is judged OOD.
    pub indicator: Vec<bool>,
    pub weighted: bool,
    pub s: Option<RowMatrix>,
}

impl PurityScores {
    pub fn len(&self) -> usize {
        self.p_ood.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_ood.is_empty()
    }

    pub fn max_p_id(&self, i: usize) -> f64 {
        max_value(self.p_id.row(i))
    }
}

/// Mean labeled-ID embedding per class; `present[j]` is false for classes
/// without labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub phi: RowMatrix,
    pub present: Vec<bool>,
}

impl Prototypes {
    pub fn all_present(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    pub fn k(&self) -> usize {
        self.present.len()
    }
}

/// One row of ATD scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct AtdRow {
    pub p_yes: Vec<f64>,
    pub p_no: Vec<f64>,
    pub p_id: Vec<f64>,
    pub p_ood: f64,
    pub is_ood: bool,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Agreeing-to-differ scoring for one sample given its cosine similarities
/// to the K "yes" and K "no" prompt embeddings.
///
/// `1 - p_no` is evaluated as the complementary logistic, and `p_ood` as
/// `Σ p_yes·p_no`, which equals `1 - Σ p_id` because `p_yes` sums to one
/// but does not cancel when `p_ood` is tiny.
pub fn atd_row(yes_sims: &[f64], no_sims: &[f64], tau: f64) -> AtdRow {
    let k = yes_sims.len();
    let mut p_yes = vec![0.0; k];
    softmax_scaled(yes_sims, tau, &mut p_yes);
    let mut p_no = Vec::with_capacity(k);
    let mut p_id = Vec::with_capacity(k);
    let mut p_ood = 0.0;
    for j in 0..k {
        let no = logistic((no_sims[j] - yes_sims[j]) / tau);
        let not_no = logistic((yes_sims[j] - no_sims[j]) / tau);
        p_no.push(no);
        p_id.push(p_yes[j] * not_no);
        p_ood += p_yes[j] * no;
    }
    let is_ood = p_ood > max_value(&p_id);
    AtdRow {
        p_yes,
        p_no,
        p_id,
        p_ood,
        is_ood,
    }
}

/// Visual-similarity weighting for one row. Writes `s` and the weighted
/// `p_id` in place and returns `(weighted p_ood, is_ood)`.
pub fn weight_row(p_id: &mut [f64], p_ood: f64, proto_sims: &[f64], tau: f64, s: &mut [f64]) -> (f64, bool) {
    softmax_scaled(proto_sims, tau, s);
    p_id.iter_mut().zip(s.iter()).for_each(|(p, w)| *p *= w);
    let weighted_ood = p_ood / p_id.len() as f64;
    (weighted_ood, weighted_ood >= max_value(p_id))
}

fn similarities(unit_row: &[f64], targets: &RowMatrix) -> Vec<f64> {
    targets.iter_rows().map(|t| dot(unit_row, t)).collect()
}

fn check_dims(images: &EmbeddingMatrix, dim: usize) -> Result<()> {
    if images.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: images.dim(),
        });
    }
    Ok(())
}

/// Unweighted purity scores for every row of `images`.
pub fn clipn_scores(images: &EmbeddingMatrix, prompts: &PromptEmbeddings, tau: Temperature) -> Result<PurityScores> {
    check_dims(images, prompts.dim())?;
    let unit = images.normalized();
    let rows = par::map_range(unit.rows(), |i| {
        let z = unit.row(i);
        atd_row(
            &similarities(z, prompts.yes_text()),
            &similarities(z, prompts.no_text()),
            tau.value(),
        )
    });
    Ok(assemble(rows, prompts.k()))
}

fn assemble(rows: Vec<AtdRow>, k: usize) -> PurityScores {
    let n = rows.len();
    let mut p_yes = Vec::with_capacity(n * k);
    let mut p_no = Vec::with_capacity(n * k);
    let mut p_id = Vec::with_capacity(n * k);
    let mut p_ood = Vec::with_capacity(n);
    let mut indicator = Vec::with_capacity(n);
    for r in rows {
        p_yes.extend(r.p_yes);
        p_no.extend(r.p_no);
        p_id.extend(r.p_id);
        p_ood.push(r.p_ood);
        indicator.push(r.is_ood);
    }
    PurityScores {
        p_yes: RowMatrix::from_vec(n, k, p_yes),
        p_no: RowMatrix::from_vec(n, k, p_no),
        p_id: RowMatrix::from_vec(n, k, p_id),
        p_ood,
        indicator,
        weighted: false,
        s: None,
    }
}

/// Per-class prototypes from labeled ID samples `(row, class)` with class in `[0, k)`.
pub fn class_prototypes(images: &EmbeddingMatrix, labeled_id: &[(usize, usize)], k: usize) -> Result<Prototypes> {
    let d = images.dim();
    let mut phi = RowMatrix::zeros(k, d);
    let mut present = vec![false; k];
    let mut first: Vec<Option<usize>> = vec![None; k];
    for &(row, class) in labeled_id {
        if class >= k {
            return Err(Error::Precondition(format!(
                "class {class} out of range for {k} ID classes"
            )));
        }
        if row >= images.rows() {
            return Err(Error::Precondition(format!(
                "sample {row} out of range for {} rows",
                images.rows()
            )));
        }
        let mut z = images.row_f64(row);
        normalize_in_place(&mut z);
        phi.row_mut(class).iter_mut().zip(&z).for_each(|(a, v)| *a += v);
        present[class] = true;
        first[class].get_or_insert(row);
    }
    for class in 0..k {
        if !present[class] {
            continue;
        }
        // The mean's length does not matter once renormalized.
        if !normalize_in_place(phi.row_mut(class)) {
            let row = first[class].expect("present class has a member");
            log::warn!("prototype for class {class} has zero mean; using sample {row} instead");
            let mut z = images.row_f64(row);
            normalize_in_place(&mut z);
            phi.row_mut(class).copy_from_slice(&z);
        }
    }
    Ok(Prototypes { phi, present })
}

/// Apply visual-similarity weighting to unweighted scores computed on the
/// same `images`.
pub fn weighted_scores(
    scores: &PurityScores,
    protos: &Prototypes,
    images: &EmbeddingMatrix,
    tau: Temperature,
) -> Result<PurityScores> {
    if scores.weighted {
        return Err(Error::Precondition("scores are already weighted".into()));
    }
    if let Some(j) = protos.present.iter().position(|&p| !p) {
        return Err(Error::Precondition(format!("no prototype for ID class {j}")));
    }
    let k = scores.p_id.cols();
    if protos.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: protos.k(),
        });
    }
    if images.rows() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: images.rows(),
        });
    }
    check_dims(images, protos.phi.cols())?;

    let unit = images.normalized();
    let rows = par::map_range(unit.rows(), |i| {
        let mut p_id = scores.p_id.row(i).to_vec();
        let mut s = vec![0.0; k];
        let sims = similarities(unit.row(i), &protos.phi);
        let (ood, flag) = weight_row(&mut p_id, scores.p_ood[i], &sims, tau.value(), &mut s);
        (p_id, s, ood, flag)
    });

    let mut out = scores.clone();
    let mut s_all = RowMatrix::zeros(rows.len(), k);
    for (i, (p_id, s, ood, flag)) in rows.into_iter().enumerate() {
        out.p_id.row_mut(i).copy_from_slice(&p_id);
        s_all.row_mut(i).copy_from_slice(&s);
        out.p_ood[i] = ood;
        out.indicator[i] = flag;
    }
    out.weighted = true;
    out.s = Some(s_all);
    Ok(out)
}
