//! Synthetic Gaussian-cluster embeddings with matching prompt embeddings.
//!
//! Class centers are random unit directions accepted only when their cosine
//! to every earlier center is at most `1 - d²/2`, where
//! `d = separation · noise_sigma` is the required chord length between
//! centers. Samples are a center plus isotropic Gaussian noise, projected
//! back onto the unit sphere.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::DataPaths;
use crate::embed::{write_embeddings, DatasetManifest, EmbeddingMatrix, PromptMeta};
use crate::error::{Error, Result};
use crate::math::{dot, mix_seed, normalize_in_place, RowMatrix};
use crate::purity::PromptEmbeddings;

const CENTER_SALT: u64 = 10;
const TRAIN_NOISE_SALT: u64 = 11;
const TEST_NOISE_SALT: u64 = 12;
const MAX_ATTEMPTS_PER_CENTER: usize = 100_000;

pub const PROMPT_FILE_NAME: &str = "prompts.emb1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub k_id: usize,
    pub k_ood: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Minimum center spacing in units of cluster standard deviation.
    pub separation: f64,
    /// Per-coordinate noise standard deviation.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.k_id < 2 {
            return fail("k_id must be at least 2");
        }
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.per_class < 1 {
            return fail("per_class must be at least 1");
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return fail("separation must be positive");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be positive");
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.k_id + self.k_ood
    }

    /// Largest admissible cosine between two class centers.
    pub fn max_center_cosine(&self) -> f64 {
        let chord = self.separation * self.noise_sigma;
        1.0 - chord * chord / 2.0
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

/// Unit-norm class centers, ID classes first.
pub fn class_centers(spec: &SynthSpec) -> Result<RowMatrix> {
    spec.validate()?;
    let n = spec.total_classes();
    let max_cos = spec.max_center_cosine();
    // n unit vectors cannot all have pairwise cosine below -1/(n-1).
    let floor = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
    if max_cos < floor {
        return Err(Error::Generation(format!(
            "{n} centers cannot have pairwise cosine <= {max_cos:.4} (bound {floor:.4})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, CENTER_SALT));
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n);
    while centers.len() < n {
        let accepted = (0..MAX_ATTEMPTS_PER_CENTER).find_map(|_| {
            let c = random_unit(&mut rng, spec.dim);
            centers.iter().all(|o| dot(o, &c) <= max_cos).then_some(c)
        });
        match accepted {
            Some(c) => centers.push(c),
            None => {
                return Err(Error::Generation(format!(
                    "could not place center {} of {n} in dimension {} with cosine <= {max_cos:.4}",
                    centers.len() + 1,
                    spec.dim
                )))
            }
        }
    }
    Ok(RowMatrix::from_rows(&centers))
}

fn sample_clusters(
    spec: &SynthSpec,
    centers: &RowMatrix,
    per_class: usize,
    salt: u64,
) -> Result<(EmbeddingMatrix, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, salt));
    let n = centers.rows();
    let mut data = Vec::with_capacity(n * per_class * spec.dim);
    let mut labels = Vec::with_capacity(n * per_class);
    for class in 0..n {
        for _ in 0..per_class {
            let mut x: Vec<f64> = centers
                .row(class)
                .iter()
                .map(|&c| c + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if !normalize_in_place(&mut x) {
                x = centers.row(class).to_vec();
            }
            data.extend(x.iter().map(|&v| v as f32));
            labels.push(class);
        }
    }
    Ok((EmbeddingMatrix::new(n * per_class, spec.dim, data)?, labels))
}

fn manifest_for(spec: &SynthSpec, labels: Vec<usize>) -> DatasetManifest {
    let class_names = (0..spec.k_id)
        .map(|c| format!("id_{c}"))
        .chain((0..spec.k_ood).map(|c| format!("ood_{c}")))
        .collect();
    DatasetManifest {
        dataset_name: format!("synthetic-seed{}", spec.seed),
        class_names,
        labels,
        id_class_indices: Some((0..spec.k_id).collect()),
        prompts: Some(PromptMeta {
            file: PROMPT_FILE_NAME.into(),
            classes: (0..spec.k_id).collect(),
            templates_used: 1,
        }),
    }
}

/// "Yes" rows are the ID centers; the "no" row of class j is the normalized
/// mean of every other class center.
fn prompts_for(spec: &SynthSpec, centers: &RowMatrix) -> Result<PromptEmbeddings> {
    let n = centers.rows();
    let mut yes = RowMatrix::zeros(spec.k_id, spec.dim);
    let mut no = RowMatrix::zeros(spec.k_id, spec.dim);
    for j in 0..spec.k_id {
        yes.row_mut(j).copy_from_slice(centers.row(j));
        for other in (0..n).filter(|&o| o != j) {
            no.row_mut(j)
                .iter_mut()
                .zip(centers.row(other))
                .for_each(|(a, c)| *a += c);
        }
    }
    PromptEmbeddings::new(yes, no, 1).map_err(|e| Error::Generation(format!("prompt construction: {e}")))
}

/// Training embeddings, manifest (ID classes first), and ID prompt embeddings.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(EmbeddingMatrix, DatasetManifest, PromptEmbeddings)> {
    let centers = class_centers(spec)?;
    let (emb, labels) = sample_clusters(spec, &centers, spec.per_class, TRAIN_NOISE_SALT)?;
    let prompts = prompts_for(spec, &centers)?;
    Ok((emb, manifest_for(spec, labels), prompts))
}

/// Held-out split drawn around the same centers with an independent noise
/// stream. Includes OOD classes; consumers keep only ID rows.
pub fn generate_test_split(spec: &SynthSpec, per_class: usize) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    let centers = class_centers(spec)?;
    let (emb, labels) = sample_clusters(spec, &centers, per_class, TEST_NOISE_SALT)?;
    let mut manifest = manifest_for(spec, labels);
    manifest.dataset_name.push_str("-test");
    manifest.prompts = None;
    Ok((emb, manifest))
}

/// Write a full synthetic dataset into `dir` under fixed file names and
/// return the paths, ready to drop into an experiment config.
pub fn write_synthetic(spec: &SynthSpec, test_per_class: usize, dir: &Path) -> Result<DataPaths> {
    let (emb, manifest, prompts) = generate_synthetic(spec)?;
    let (test, test_manifest) = generate_test_split(spec, test_per_class)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DataPaths {
        embeddings: dir.join("images.emb1"),
        manifest: dir.join("manifest.json"),
        prompts: dir.join(PROMPT_FILE_NAME),
        test_embeddings: dir.join("test.emb1"),
        test_manifest: dir.join("test_manifest.json"),
    };
    write_embeddings(&emb, &paths.embeddings)?;
    manifest.write(&paths.manifest)?;
    write_embeddings(&prompts.to_matrix(), &paths.prompts)?;
    write_embeddings(&test, &paths.test_embeddings)?;
    test_manifest.write(&paths.test_manifest)?;
    Ok(paths)
}
