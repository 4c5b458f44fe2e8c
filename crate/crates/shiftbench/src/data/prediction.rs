//! Predicted probability sets: the currency every other module trades in.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Row-sum and logit-consistency tolerance for validation.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Which shift produced a dataset or prediction set.
///
/// `intensity` is the index into the shift's level list, with 0 the
/// unshifted data by convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftTag {
    pub kind: String,
    pub intensity: u32,
}

impl ShiftTag {
    pub fn none() -> Self {
        ShiftTag {
            kind: "none".to_string(),
            intensity: 0,
        }
    }
}

/// Provenance carried by every prediction set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetMeta {
    pub method: String,
    pub dataset: String,
    pub shift: ShiftTag,
    pub seed: u64,
}

impl SetMeta {
    pub fn new(method: &str, dataset: &str, shift: ShiftTag, seed: u64) -> Self {
        SetMeta {
            method: method.to_string(),
            dataset: dataset.to_string(),
            shift,
            seed,
        }
    }
}

/// N predicted probability rows over K classes, with optional labels and
/// logits. Immutable after construction; all invariants checked up front.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    probs: Array2<f64>,
    labels: Option<Vec<usize>>,
    logits: Option<Array2<f64>>,
    meta: SetMeta,
}

impl PredictionSet {
    pub fn new(
        probs: Array2<f64>,
        labels: Option<Vec<usize>>,
        logits: Option<Array2<f64>>,
        meta: SetMeta,
    ) -> Result<Self> {
        validate(&probs, labels.as_deref(), logits.as_ref())?;
        Ok(PredictionSet {
            probs,
            labels,
            logits,
            meta,
        })
    }

    /// Build a set from raw logits; probabilities are the row-wise softmax.
    pub fn from_logits(logits: Array2<f64>, labels: Option<Vec<usize>>, meta: SetMeta) -> Result<Self> {
        let mut probs = Array2::zeros(logits.raw_dim());
        for (mut out, row) in probs.outer_iter_mut().zip(logits.outer_iter()) {
            out.assign(&softmax(row));
        }
        Self::new(probs, labels, Some(logits), meta)
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn k(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn logits(&self) -> Option<&Array2<f64>> {
        self.logits.as_ref()
    }

    pub fn meta(&self) -> &SetMeta {
        &self.meta
    }

    /// Labels of this set, or a `MissingLabels` error naming the caller.
    pub fn require_labels(&self, what: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::MissingLabels(what.to_string()))
    }

    pub fn with_method(mut self, method: &str) -> Self {
        self.meta.method = method.to_string();
        self
    }

    pub fn with_shift(mut self, shift: ShiftTag) -> Self {
        self.meta.shift = shift;
        self
    }

    /// Drop the labels (used for fully out-of-distribution inputs).
    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Per-example confidence: the maximum predicted probability.
    pub fn confidences(&self) -> Vec<f64> {
        self.probs
            .outer_iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Per-example predicted class: argmax with lowest-index tie-break.
    pub fn predicted_classes(&self) -> Vec<usize> {
        self.probs.outer_iter().map(|row| argmax(&row)).collect()
    }
}

/// Index of the largest entry, ties broken toward the lowest index.
pub fn argmax(row: &ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Numerically stable row softmax.
pub fn softmax(logits: ArrayView1<f64>) -> ndarray::Array1<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: ndarray::Array1<f64> = logits.mapv(|z| (z - m).exp());
    let sum = e.sum();
    e.mapv_inplace(|v| v / sum);
    e
}

fn validate(
    probs: &Array2<f64>,
    labels: Option<&[usize]>,
    logits: Option<&Array2<f64>>,
) -> Result<()> {
    let (n, k) = (probs.nrows(), probs.ncols());
    if n == 0 || k == 0 {
        return Err(Error::InvalidSet {
            reason: format!("empty probability matrix ({n}x{k})"),
        });
    }
    for (row, p) in probs.outer_iter().enumerate() {
        let mut sum = 0.0;
        for &v in p.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidRow {
                    row,
                    reason: format!("probability {v} outside [0, 1]"),
                });
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidRow {
                row,
                reason: format!("row sums to {sum}, outside 1 +/- {ROW_SUM_TOL}"),
            });
        }
    }
    if let Some(labels) = labels {
        if labels.len() != n {
            return Err(Error::InvalidSet {
                reason: format!("{} labels for {} rows", labels.len(), n),
            });
        }
        for (row, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::InvalidRow {
                    row,
                    reason: format!("label {y} out of range for K={k}"),
                });
            }
        }
    }
    if let Some(logits) = logits {
        if logits.dim() != probs.dim() {
            return Err(Error::InvalidSet {
                reason: format!(
                    "logits shape {:?} does not match probs {:?}",
                    logits.dim(),
                    probs.dim()
                ),
            });
        }
        for (row, (z, p)) in logits.outer_iter().zip(probs.outer_iter()).enumerate() {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRow {
                    row,
                    reason: "non-finite logit".to_string(),
                });
            }
            let sm = softmax(z);
            for (j, (&s, &q)) in sm.iter().zip(p.iter()).enumerate() {
                if (s - q).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidRow {
                        row,
                        reason: format!(
                            "softmax(logits)[{j}] = {s} disagrees with probs[{j}] = {q}"
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn meta() -> SetMeta {
        SetMeta::new("test", "unit", ShiftTag::none(), 0)
    }

    #[test]
    fn accepts_minimal_valid_set() {
        let s = PredictionSet::new(array![[0.5, 0.5]], Some(vec![1]), None, meta()).unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.k(), 2);
    }

    #[test]
    fn rejects_bad_row_sum_with_row_index() {
        let err =
            PredictionSet::new(array![[0.5, 0.5], [0.49, 0.49]], None, None, meta()).unwrap_err();
        match err {
            Error::InvalidRow { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_out_of_range_label() {
        let err = PredictionSet::new(
            array![[0.2, 0.3, 0.5]],
            Some(vec![5]),
            None,
            meta(),
        )
        .unwrap_err();
        match err {
            Error::InvalidRow { row, reason } => {
                assert_eq!(row, 0);
                assert!(reason.contains("label 5"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_inconsistent_logits() {
        let err = PredictionSet::new(
            array![[0.9, 0.1]],
            None,
            Some(array![[0.0, 0.0]]),
            meta(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidRow { row: 0, .. }));
    }

    #[test]
    fn from_logits_is_self_consistent() {
        let s = PredictionSet::from_logits(array![[2.0, 1.0, 0.0]], Some(vec![0]), meta()).unwrap();
        let sum: f64 = s.probs().row(0).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(s.predicted_classes(), vec![0]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let row = array![0.5, 0.5];
        assert_eq!(argmax(&row.view()), 0);
    }
}
