//! Labeled feature matrices: flattened images or tabular rows.

use ndarray::Array2;

use crate::data::prediction::ShiftTag;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// Row-major flattened images, pixel values in [0, 1].
    Image { height: usize, width: usize },
    /// Numeric columns first, then one categorical column per vocabulary.
    /// Categorical cells hold integer token ids; ids at or above the declared
    /// vocabulary size are out-of-vocabulary tokens.
    Tabular {
        numeric: usize,
        vocab_sizes: Vec<usize>,
    },
}

impl FeatureKind {
    pub fn width(&self) -> usize {
        match self {
            FeatureKind::Image { height, width } => height * width,
            FeatureKind::Tabular {
                numeric,
                vocab_sizes,
            } => numeric + vocab_sizes.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    kind: FeatureKind,
    n_classes: usize,
    name: String,
    shift: ShiftTag,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        kind: FeatureKind,
        n_classes: usize,
        name: &str,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidDataset("empty dataset".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if features.ncols() != kind.width() {
            return Err(Error::InvalidDataset(format!(
                "feature width {} does not match kind width {}",
                features.ncols(),
                kind.width()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {y} out of range for {n_classes} classes"
            )));
        }
        if let FeatureKind::Tabular {
            numeric,
            vocab_sizes,
        } = &kind
        {
            for (j, &v) in vocab_sizes.iter().enumerate() {
                if v == 0 {
                    return Err(Error::InvalidDataset(format!("vocab {j} is empty")));
                }
                let col = features.column(numeric + j);
                for (row, &x) in col.iter().enumerate() {
                    if x < 0.0 || x.fract() != 0.0 {
                        return Err(Error::InvalidDataset(format!(
                            "row {row}, categorical feature {j}: {x} is not a token id"
                        )));
                    }
                }
            }
        }
        Ok(LabeledDataset {
            features,
            labels,
            kind,
            n_classes,
            name: name.to_string(),
            shift: ShiftTag::none(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shift(&self) -> &ShiftTag {
        &self.shift
    }

    pub fn with_shift(mut self, shift: ShiftTag) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    /// New dataset with the same labels and kind but different features.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        let mut out = Self::new(
            features,
            self.labels.clone(),
            self.kind.clone(),
            self.n_classes,
            &self.name,
        )?;
        out.shift = self.shift.clone();
        Ok(out)
    }

    /// Subset by row indices (used for train/validation/test splits).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidDataset("empty selection".into()));
        }
        let rows: Vec<_> = indices.iter().map(|&i| self.features.row(i)).collect();
        let features = ndarray::stack(ndarray::Axis(0), &rows)
            .map_err(|e| Error::InvalidDataset(e.to_string()))?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Self::new(features, labels, self.kind.clone(), self.n_classes, &self.name)?;
        out.shift = self.shift.clone();
        Ok(out)
    }
}
