//! Confidence bucketing shared by ECE and the Brier decomposition.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinMode {
    EqualWidth,
    /// Edges are quantiles of the evaluated set's confidences.
    Quantile,
}

/// Bucket edges over [0, 1]. Buckets are half-open `(edge[s], edge[s+1]]`,
/// with the first bucket additionally containing 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningScheme {
    mode: BinMode,
    bins: usize,
    edges: Vec<f64>,
}

impl BinningScheme {
    pub fn equal_width(bins: usize) -> Self {
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        BinningScheme {
            mode: BinMode::EqualWidth,
            bins: bins.max(1),
            edges,
        }
    }

    pub fn quantile(bins: usize) -> Self {
        BinningScheme {
            mode: BinMode::Quantile,
            bins: bins.max(1),
            edges: vec![0.0, 1.0],
        }
    }

    /// Explicit edges; must be strictly ascending from 0 to 1.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidArgument("need at least two edges".into()));
        }
        if edges[0] != 0.0 || *edges.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument(
                "edges must start at 0 and end at 1".into(),
            ));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "edges must be strictly ascending".into(),
            ));
        }
        Ok(BinningScheme {
            mode: BinMode::EqualWidth,
            bins: edges.len() - 1,
            edges,
        })
    }

    pub fn mode(&self) -> BinMode {
        self.mode
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Concrete edges for a given sample of confidences.
    ///
    /// Equal-width schemes return their stored edges. Quantile schemes place
    /// interior edges at order statistics of the confidences so bucket counts
    /// differ by at most one when confidences are distinct; duplicate edges
    /// collapse.
    pub fn edges_for(&self, confidences: &[f64]) -> Vec<f64> {
        match self.mode {
            BinMode::EqualWidth => self.edges.clone(),
            BinMode::Quantile => {
                let mut sorted: Vec<f64> = confidences.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = sorted.len();
                let mut edges = vec![0.0];
                if n > 0 {
                    for s in 1..self.bins {
                        let k = s * n / self.bins;
                        if k == 0 || k >= n {
                            continue;
                        }
                        let e = sorted[k - 1];
                        if e > *edges.last().unwrap() && e < 1.0 {
                            edges.push(e);
                        }
                    }
                }
                edges.push(1.0);
                edges
            }
        }
    }

    /// Bucket index of a confidence under the given edges.
    pub fn bucket_of(value: f64, edges: &[f64]) -> usize {
        // First bucket is [e0, e1]; the rest are (e_i, e_{i+1}].
        for (i, w) in edges.windows(2).enumerate() {
            if value <= w[1] {
                return i;
            }
        }
        edges.len().saturating_sub(2)
    }
}
