use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::math::{normalize_in_place, RowMatrix};

/// Per-class averaged "yes" and "no" text embeddings, one row per ID class.
/// Rows are unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbeddings {
    yes_text: RowMatrix,
    no_text: RowMatrix,
    templates_used: usize,
}

impl PromptEmbeddings {
    /// Build from K×D "yes" and "no" matrices, normalizing every row.
    pub fn new(yes_text: RowMatrix, no_text: RowMatrix, templates_used: usize) -> Result<Self> {
        if yes_text.rows() != no_text.rows() || yes_text.cols() != no_text.cols() {
            return Err(Error::Prompt(format!(
                "yes block is {}x{} but no block is {}x{}",
                yes_text.rows(),
                yes_text.cols(),
                no_text.rows(),
                no_text.cols()
            )));
        }
        if yes_text.rows() == 0 || yes_text.cols() == 0 {
            return Err(Error::Prompt("prompt matrices are empty".into()));
        }
        let mut out = Self {
            yes_text,
            no_text,
            templates_used,
        };
        for block in [&mut out.yes_text, &mut out.no_text] {
            if block.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("prompt embeddings".into()));
            }
            for class in 0..block.rows() {
                if !normalize_in_place(block.row_mut(class)) {
                    return Err(Error::DegeneratePrompt { class });
                }
            }
        }
        Ok(out)
    }

    /// Split an EMB1 prompt matrix laid out as K "yes" rows then K "no" rows.
    pub fn from_matrix(matrix: &EmbeddingMatrix, templates_used: usize) -> Result<Self> {
        if matrix.rows() == 0 || !matrix.rows().is_multiple_of(2) {
            return Err(Error::Prompt(format!(
                "prompt file must hold 2K rows, found {}",
                matrix.rows()
            )));
        }
        let k = matrix.rows() / 2;
        let all = matrix.to_f64();
        let yes = RowMatrix::from_vec(k, matrix.dim(), all.as_slice()[..k * matrix.dim()].to_vec());
        let no = RowMatrix::from_vec(k, matrix.dim(), all.as_slice()[k * matrix.dim()..].to_vec());
        Self::new(yes, no, templates_used)
    }

    /// Inverse of [`PromptEmbeddings::from_matrix`].
    pub fn to_matrix(&self) -> EmbeddingMatrix {
        let data = self
            .yes_text
            .as_slice()
            .iter()
            .chain(self.no_text.as_slice())
            .map(|&v| v as f32)
            .collect();
        EmbeddingMatrix::new(2 * self.k(), self.dim(), data).expect("finite prompt rows")
    }

    /// Keep only the listed rows, in order.
    pub fn select_classes(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.k()) {
            return Err(Error::Prompt(format!(
                "class row {bad} out of range for {} rows",
                self.k()
            )));
        }
        let pick = |m: &RowMatrix| RowMatrix::from_rows(&rows.iter().map(|&r| m.row(r).to_vec()).collect::<Vec<_>>());
        Ok(Self {
            yes_text: pick(&self.yes_text),
            no_text: pick(&self.no_text),
            templates_used: self.templates_used,
        })
    }

    pub fn k(&self) -> usize {
        self.yes_text.rows()
    }

    pub fn dim(&self) -> usize {
        self.yes_text.cols()
    }

    pub fn yes_text(&self) -> &RowMatrix {
        &self.yes_text
    }

    pub fn no_text(&self) -> &RowMatrix {
        &self.no_text
    }

    pub fn templates_used(&self) -> usize {
        self.templates_used
    }
}

/// Average T template embeddings per class: each template row is
/// L2-normalized, the T rows are averaged, and the mean is renormalized.
///
/// `yes_stack[t]` and `no_stack[t]` are the K×D outputs for template `t`.
pub fn average_prompt_embeddings(yes_stack: &[RowMatrix], no_stack: &[RowMatrix]) -> Result<PromptEmbeddings> {
    if yes_stack.is_empty() || yes_stack.len() != no_stack.len() {
        return Err(Error::Prompt(format!(
            "need T >= 1 templates for both encoders, got {} yes and {} no",
            yes_stack.len(),
            no_stack.len()
        )));
    }
    let templates = yes_stack.len();
    let average = |stack: &[RowMatrix]| -> Result<RowMatrix> {
        let (k, d) = (stack[0].rows(), stack[0].cols());
        let mut acc = RowMatrix::zeros(k, d);
        for m in stack {
            if m.rows() != k || m.cols() != d {
                return Err(Error::Prompt("template matrices differ in shape".into()));
            }
            if m.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("template embeddings".into()));
            }
            for class in 0..k {
                let mut row = m.row(class).to_vec();
                if !normalize_in_place(&mut row) {
                    return Err(Error::DegeneratePrompt { class });
                }
                acc.row_mut(class).iter_mut().zip(&row).for_each(|(a, r)| *a += r);
            }
        }
        acc.as_mut_slice().iter_mut().for_each(|v| *v /= templates as f64);
        for class in 0..k {
            // Antipodal templates cancel out; there is no meaningful direction left.
            if crate::math::norm(acc.row(class)) < 1e-12 {
                return Err(Error::DegeneratePrompt { class });
            }
        }
        Ok(acc)
    };
    PromptEmbeddings::new(average(yes_stack)?, average(no_stack)?, templates)
}
