use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Class metadata and per-row ground-truth labels for an embedding file.
///
/// Labels always hold the original class index, including for OOD samples;
/// ID membership is derived from `id_class_indices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "dataset")]
    pub dataset_name: String,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_class_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PromptMeta>,
}

/// Describes a companion prompt file: `2·classes.len()` EMB1 rows, the
/// "yes" block first and then the "no" block, one row per listed class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub file: String,
    pub classes: Vec<usize>,
    pub templates_used: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Structural checks that do not need the embedding file.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if k == 0 {
            return Err(Error::Manifest("class_names is empty".into()));
        }
        if let Some((row, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Manifest(format!(
                "label {label} at row {row} is out of range for {k} classes"
            )));
        }
        if let Some(ids) = &self.id_class_indices {
            check_class_list(ids, k, "id_class_indices")?;
        }
        if let Some(meta) = &self.prompts {
            check_class_list(&meta.classes, k, "prompts.classes")?;
        }
        Ok(())
    }

    pub fn validate_against(&self, embeddings: &EmbeddingMatrix) -> Result<()> {
        self.validate()?;
        if self.labels.len() != embeddings.rows() {
            return Err(Error::Manifest(format!(
                "{} labels but the embedding matrix has {} rows",
                self.labels.len(),
                embeddings.rows()
            )));
        }
        Ok(())
    }

    pub fn id_classes(&self) -> Result<&[usize]> {
        self.id_class_indices
            .as_deref()
            .ok_or_else(|| Error::Manifest("id_class_indices is required here".into()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Manifest(msg) => Error::Manifest(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn check_class_list(list: &[usize], k: usize, field: &str) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Manifest(format!("{field} is empty")));
    }
    if list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Manifest(format!("{field} must be strictly increasing")));
    }
    if let Some(&bad) = list.iter().find(|&&c| c >= k) {
        return Err(Error::Manifest(format!(
            "{field} entry {bad} is out of range for {k} classes"
        )));
    }
    Ok(())
}
