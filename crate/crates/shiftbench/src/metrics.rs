//! Evaluation metrics for predictive distributions: proper scoring rules
//! (NLL, Brier and its uncertainty/resolution/reliability decomposition),
//! expected calibration error, ranking AUC, and the label-free confidence
//! and entropy diagnostics used for shifted and OOD data.

use ndarray::Array1;

use crate::data::{BinningScheme, PredictionSet};
use crate::error::{Error, Result};

/// Probabilities are floored at this value before taking logs.
pub const NLL_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood, with an audit count of floored entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nll {
    pub value: f64,
    /// How many probabilities hit the floor before the log.
    pub floored: usize,
}

/// Brier score split into marginal uncertainty, resolution and reliability.
/// For grouped forecasts, `total = uncertainty - resolution + reliability`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrierDecomposition {
    pub uncertainty: f64,
    pub resolution: f64,
    pub reliability: f64,
    pub total: f64,
}

/// One point of a confidence-accuracy curve: the examples with confidence at
/// least `threshold`, and their accuracy (absent when the subset is empty).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub count: usize,
    pub accuracy: Option<f64>,
}

/// Equal-width histogram over `[lo, hi]`. Bins are half-open `(a, b]` with
/// the first bin additionally containing `lo`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn build(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Histogram {
        let n_bins = n_bins.max(1);
        let mut counts = vec![0usize; n_bins];
        let span = hi - lo;
        for &v in values {
            let idx = if span <= 0.0 {
                0
            } else {
                let scaled = (v - lo) / span * n_bins as f64;
                (scaled.ceil() as isize - 1).clamp(0, n_bins as isize - 1) as usize
            };
            counts[idx] += 1;
        }
        Histogram { lo, hi, counts }
    }

    /// Edges of the bins, length `counts.len() + 1`.
    pub fn edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

/// Mean negative log predicted probability of the true class.
pub fn nll(set: &PredictionSet) -> Result<Nll> {
    let labels = set.require_labels("nll")?;
    let mut sum = 0.0;
    let mut floored = 0;
    for (i, &y) in labels.iter().enumerate() {
        let mut p = set.probs()[[i, y]];
        if p < NLL_FLOOR {
            p = NLL_FLOOR;
            floored += 1;
        }
        sum -= p.ln();
    }
    Ok(Nll {
        value: sum / set.n() as f64,
        floored,
    })
}

/// Brier score: mean squared error between the probability vector and the
/// one-hot truth, normalized by the number of classes.
pub fn brier(set: &PredictionSet) -> Result<f64> {
    let labels = set.require_labels("brier")?;
    let k = set.k() as f64;
    let mut sum = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = set.probs().row(i);
        let sq: f64 = row.iter().map(|&p| p * p).sum();
        sum += (1.0 - 2.0 * row[y] + sq) / k;
    }
    Ok(sum / set.n() as f64)
}

/// Fraction of examples whose argmax prediction is the true class.
pub fn accuracy(set: &PredictionSet) -> Result<f64> {
    let labels = set.require_labels("accuracy")?;
    let correct = set
        .predicted_classes()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / set.n() as f64)
}

/// Expected calibration error under the given binning scheme.
pub fn ece(set: &PredictionSet, bins: &BinningScheme) -> Result<f64> {
    let labels = set.require_labels("ece")?;
    let confs = set.confidences();
    let preds = set.predicted_classes();
    let edges = bins.edges_for(&confs);
    let n_buckets = edges.len() - 1;

    let mut count = vec![0usize; n_buckets];
    let mut conf_sum = vec![0.0; n_buckets];
    let mut correct = vec![0usize; n_buckets];
    for i in 0..set.n() {
        let b = BinningScheme::bucket_of(confs[i], &edges);
        count[b] += 1;
        conf_sum[b] += confs[i];
        if preds[i] == labels[i] {
            correct[b] += 1;
        }
    }

    let n = set.n() as f64;
    let mut total = 0.0;
    for b in 0..n_buckets {
        if count[b] == 0 {
            continue;
        }
        let acc = correct[b] as f64 / count[b] as f64;
        let conf = conf_sum[b] / count[b] as f64;
        total += count[b] as f64 / n * (acc - conf).abs();
    }
    Ok(total)
}

/// Brier decomposition with examples grouped by (predicted class,
/// confidence bucket). Group label frequencies play the role of long-run
/// outcome rates; the marginal label frequency is the reference forecast.
pub fn brier_decomposition(
    set: &PredictionSet,
    bins: &BinningScheme,
) -> Result<BrierDecomposition> {
    let labels = set.require_labels("brier_decomposition")?;
    let (n, k) = (set.n(), set.k());
    let confs = set.confidences();
    let preds = set.predicted_classes();
    let edges = bins.edges_for(&confs);
    let n_buckets = edges.len() - 1;

    // Marginal label frequency.
    let mut marginal = Array1::<f64>::zeros(k);
    for &y in labels {
        marginal[y] += 1.0;
    }
    marginal /= n as f64;
    let uncertainty = (1.0 - marginal.iter().map(|p| p * p).sum::<f64>()) / k as f64;

    // Group accumulators, keyed by predicted class x bucket.
    let n_groups = k * n_buckets;
    let mut g_count = vec![0usize; n_groups];
    let mut g_label = vec![Array1::<f64>::zeros(k); n_groups];
    let mut g_forecast = vec![Array1::<f64>::zeros(k); n_groups];
    for i in 0..n {
        let g = preds[i] * n_buckets + BinningScheme::bucket_of(confs[i], &edges);
        g_count[g] += 1;
        g_label[g][labels[i]] += 1.0;
        for (j, &p) in set.probs().row(i).iter().enumerate() {
            g_forecast[g][j] += p;
        }
    }

    let mut resolution = 0.0;
    let mut reliability = 0.0;
    for g in 0..n_groups {
        if g_count[g] == 0 {
            continue;
        }
        let w = g_count[g] as f64 / n as f64;
        let freq = &g_label[g] / g_count[g] as f64;
        let mean_forecast = &g_forecast[g] / g_count[g] as f64;
        let res: f64 = freq
            .iter()
            .zip(marginal.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rel: f64 = mean_forecast
            .iter()
            .zip(freq.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        resolution += w * res / k as f64;
        reliability += w * rel / k as f64;
    }

    Ok(BrierDecomposition {
        uncertainty,
        resolution,
        reliability,
        total: brier(set)?,
    })
}

/// Probability that a random positive outranks a random negative, counting
/// ties as one half (midrank convention).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "AUC needs both classes present".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Midranks: tied scores share the average of their rank range.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }

    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Per-example Shannon entropy in nats, with 0 ln 0 = 0.
pub fn entropies(set: &PredictionSet) -> Vec<f64> {
    set.probs()
        .outer_iter()
        .map(|row| {
            row.iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum()
        })
        .collect()
}

/// Histogram of per-example predictive entropy over [0, ln K].
pub fn entropy_histogram(set: &PredictionSet, n_bins: usize) -> Histogram {
    let hi = (set.k() as f64).ln();
    Histogram::build(&entropies(set), 0.0, hi, n_bins)
}

/// Histogram of per-example confidence over [1/K, 1].
pub fn confidence_histogram(set: &PredictionSet, n_bins: usize) -> Histogram {
    let lo = 1.0 / set.k() as f64;
    Histogram::build(&set.confidences(), lo, 1.0, n_bins)
}

/// Count and accuracy of the examples with confidence >= each threshold.
pub fn confidence_accuracy_curve(
    set: &PredictionSet,
    thresholds: &[f64],
) -> Result<Vec<CurvePoint>> {
    let labels = set.require_labels("confidence_accuracy_curve")?;
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("thresholds must be ascending".into()));
    }
    if thresholds.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::InvalidArgument(
            "thresholds must lie in [0, 1]".into(),
        ));
    }
    let confs = set.confidences();
    let preds = set.predicted_classes();
    let mut out = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        let mut count = 0usize;
        let mut correct = 0usize;
        for i in 0..set.n() {
            if confs[i] >= tau {
                count += 1;
                if preds[i] == labels[i] {
                    correct += 1;
                }
            }
        }
        out.push(CurvePoint {
            threshold: tau,
            count,
            accuracy: (count > 0).then(|| correct as f64 / count as f64),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SetMeta, ShiftTag};
    use ndarray::{array, Array2};

    fn set(probs: Array2<f64>, labels: Vec<usize>) -> PredictionSet {
        PredictionSet::new(
            probs,
            Some(labels),
            None,
            SetMeta::new("t", "unit", ShiftTag::none(), 0),
        )
        .unwrap()
    }

    // ---- NLL ----

    #[test]
    fn nll_perfect_prediction_is_zero() {
        let s = set(array![[1.0, 0.0]], vec![0]);
        assert_eq!(nll(&s).unwrap().value, 0.0);
    }

    #[test]
    fn nll_uniform_binary_is_ln2() {
        let s = set(array![[0.5, 0.5]], vec![1]);
        assert!((nll(&s).unwrap().value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn nll_two_example_mean() {
        let s = set(array![[0.9, 0.1], [0.2, 0.8]], vec![0, 1]);
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((nll(&s).unwrap().value - expected).abs() < 1e-15);
        assert!((expected - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn nll_floors_zero_probability_and_counts_it() {
        let s = set(array![[1.0, 0.0]], vec![1]);
        let r = nll(&s).unwrap();
        assert_eq!(r.floored, 1);
        assert!((r.value - (-NLL_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn nll_requires_labels() {
        let s = PredictionSet::new(
            array![[0.5, 0.5]],
            None,
            None,
            SetMeta::new("t", "u", ShiftTag::none(), 0),
        )
        .unwrap();
        assert!(matches!(nll(&s), Err(Error::MissingLabels(_))));
    }

    // ---- Brier ----

    #[test]
    fn brier_optimum_is_zero() {
        let s = set(array![[1.0, 0.0]], vec![0]);
        assert_eq!(brier(&s).unwrap(), 0.0);
    }

    #[test]
    fn brier_uniform_binary() {
        let s = set(array![[0.5, 0.5]], vec![0]);
        assert!((brier(&s).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn brier_three_class_hand_value() {
        let s = set(array![[0.6, 0.3, 0.1]], vec![0]);
        // (1 - 1.2 + 0.46) / 3
        assert!((brier(&s).unwrap() - 0.26 / 3.0).abs() < 1e-15);
    }

    /// Oracle: Brier as the literal squared distance to the one-hot vector.
    fn brier_oracle(probs: &Array2<f64>, labels: &[usize]) -> f64 {
        let (n, k) = (probs.nrows(), probs.ncols());
        let mut total = 0.0;
        for i in 0..n {
            let mut sq = 0.0;
            for j in 0..k {
                let target = if labels[i] == j { 1.0 } else { 0.0 };
                sq += (probs[[i, j]] - target).powi(2);
            }
            total += sq / k as f64;
        }
        total / n as f64
    }

    #[test]
    fn brier_matches_one_hot_distance_oracle() {
        let probs = array![[0.2, 0.5, 0.3], [0.7, 0.2, 0.1], [0.05, 0.05, 0.9]];
        let labels = vec![1, 0, 2];
        let s = set(probs.clone(), labels.clone());
        assert!((brier(&s).unwrap() - brier_oracle(&probs, &labels)).abs() < 1e-15);
    }

    // ---- accuracy ----

    #[test]
    fn accuracy_tie_breaks_low() {
        let s = set(array![[0.5, 0.5]], vec![0]);
        assert_eq!(accuracy(&s).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_enumerated() {
        let s = set(
            array![[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]],
            vec![0, 0, 1],
        );
        assert!((accuracy(&s).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    // ---- ECE ----

    #[test]
    fn ece_single_bucket_gap() {
        let mut probs = Array2::zeros((10, 2));
        let mut labels = Vec::new();
        for i in 0..10 {
            probs[[i, 0]] = 0.8;
            probs[[i, 1]] = 0.2;
            labels.push(if i < 6 { 0 } else { 1 });
        }
        let s = set(probs, labels);
        let e = ece(&s, &BinningScheme::from_edges(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!((e - 0.2).abs() < 1e-12);
    }

    #[test]
    fn ece_perfect_one_hot_is_zero() {
        let s = set(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]);
        assert_eq!(ece(&s, &BinningScheme::equal_width(10)).unwrap(), 0.0);
    }

    #[test]
    fn ece_two_bucket_fixture() {
        let mut probs = Array2::zeros((8, 2));
        let mut labels = Vec::new();
        for i in 0..4 {
            probs[[i, 0]] = 0.55;
            probs[[i, 1]] = 0.45;
            labels.push(if i < 2 { 0 } else { 1 });
        }
        for i in 4..8 {
            probs[[i, 0]] = 0.95;
            probs[[i, 1]] = 0.05;
            labels.push(0);
        }
        let s = set(probs, labels);
        let bins = BinningScheme::from_edges(vec![0.0, 0.6, 1.0]).unwrap();
        assert!((ece(&s, &bins).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ece_one_bucket_equals_mean_gap() {
        let s = set(
            array![[0.7, 0.3], [0.6, 0.4], [0.9, 0.1]],
            vec![0, 1, 0],
        );
        let one = BinningScheme::from_edges(vec![0.0, 1.0]).unwrap();
        let mean_conf: f64 = (0.7 + 0.6 + 0.9) / 3.0;
        let acc = 2.0 / 3.0;
        assert!((ece(&s, &one).unwrap() - (mean_conf - acc).abs()).abs() < 1e-12);
    }

    // ---- Brier decomposition ----

    #[test]
    fn decomposition_forecast_equals_marginal() {
        let mut probs = Array2::zeros((10, 2));
        let mut labels = Vec::new();
        for i in 0..10 {
            probs[[i, 0]] = 0.5;
            probs[[i, 1]] = 0.5;
            labels.push(if i < 5 { 0 } else { 1 });
        }
        let s = set(probs, labels);
        let d = brier_decomposition(&s, &BinningScheme::equal_width(10)).unwrap();
        assert!((d.uncertainty - 0.25).abs() < 1e-12);
        assert!(d.resolution.abs() < 1e-12);
        assert!(d.reliability.abs() < 1e-12);
        assert!((d.total - 0.25).abs() < 1e-12);
    }

    #[test]
    fn decomposition_perfect_resolution() {
        let mut probs = Array2::zeros((10, 2));
        let mut labels = Vec::new();
        for i in 0..10 {
            let y = usize::from(i >= 5);
            probs[[i, y]] = 1.0;
            labels.push(y);
        }
        let s = set(probs, labels);
        let d = brier_decomposition(&s, &BinningScheme::equal_width(10)).unwrap();
        assert!((d.uncertainty - 0.25).abs() < 1e-12);
        assert!((d.resolution - 0.25).abs() < 1e-12);
        assert!(d.reliability.abs() < 1e-12);
        assert!(d.total.abs() < 1e-12);
    }

    #[test]
    fn decomposition_identity_on_discrete_forecasts() {
        // Forecasts drawn from {0.2, 0.6, 0.9}; bucket edges separate them.
        let values = [0.2, 0.6, 0.9];
        let label_pattern = [0, 1, 1, 0, 1, 0, 0, 1, 1, 1];
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for rep in 0..30 {
            let v = values[rep % 3];
            probs.extend_from_slice(&[v, 1.0 - v]);
            labels.push(label_pattern[rep % 10]);
        }
        let probs = Array2::from_shape_vec((30, 2), probs).unwrap();
        let s = set(probs, labels);
        let bins = BinningScheme::from_edges(vec![0.0, 0.5, 0.7, 0.85, 1.0]).unwrap();
        let d = brier_decomposition(&s, &bins).unwrap();
        let identity = d.uncertainty - d.resolution + d.reliability;
        assert!(
            (d.total - identity).abs() < 1e-9,
            "total {} vs identity {}",
            d.total,
            identity
        );
    }

    // ---- AUC ----

    #[test]
    fn auc_perfect_and_reversed() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        let rev = [false, false, true, true];
        assert_eq!(auc(&scores, &rev).unwrap(), 0.0);
    }

    #[test]
    fn auc_all_tied_is_half() {
        let scores = [0.5, 0.5, 0.5, 0.5];
        let labels = [true, false, true, false];
        assert!((auc(&scores, &labels).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(auc(&[0.5, 0.6], &[true, true]).is_err());
    }

    /// Oracle: O(N^2) pair counting with half credit for ties.
    fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if !yi {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_matches_pair_counting_oracle_with_ties() {
        let scores = [0.1, 0.4, 0.4, 0.4, 0.8, 0.8, 0.9, 0.05];
        let labels = [false, true, false, true, true, false, true, false];
        let fast = auc(&scores, &labels).unwrap();
        let slow = auc_oracle(&scores, &labels);
        assert!((fast - slow).abs() < 1e-12);
    }

    // ---- entropy / confidence ----

    #[test]
    fn entropy_one_hot_and_uniform() {
        let s = set(array![[1.0, 0.0, 0.0, 0.0]], vec![0]);
        assert_eq!(entropies(&s)[0], 0.0);
        let h = entropy_histogram(&s, 5);
        assert_eq!(h.counts[0], 1);

        let u = set(array![[0.25, 0.25, 0.25, 0.25]], vec![0]);
        let e = entropies(&u)[0];
        assert!((e - 4.0f64.ln()).abs() < 1e-12);
        let h = entropy_histogram(&u, 5);
        assert_eq!(*h.counts.last().unwrap(), 1);
    }

    #[test]
    fn entropy_mixed_value() {
        let s = set(array![[0.5, 0.25, 0.25]], vec![0]);
        let expected = 1.5 * std::f64::consts::LN_2;
        assert!((entropies(&s)[0] - expected).abs() < 1e-12);
        assert!((expected - 1.039721).abs() < 1e-6);
    }

    #[test]
    fn confidence_histogram_uniform_and_one_hot() {
        let s = set(array![[0.5, 0.5], [0.5, 0.5]], vec![0, 1]);
        let h = confidence_histogram(&s, 4);
        assert_eq!(h.counts[0], 2);

        let s = set(array![[1.0, 0.0]], vec![0]);
        let h = confidence_histogram(&s, 4);
        assert_eq!(*h.counts.last().unwrap(), 1);
    }

    #[test]
    fn confidence_histogram_bucket_rule() {
        let s = set(
            array![[0.5, 0.5], [0.75, 0.25], [1.0, 0.0]],
            vec![0, 0, 0],
        );
        let h = confidence_histogram(&s, 4);
        assert_eq!(h.counts, vec![1, 1, 0, 1]);
    }

    // ---- confidence-accuracy curve ----

    fn curve_fixture() -> PredictionSet {
        set(
            array![[0.6, 0.4], [0.3, 0.7], [0.8, 0.2], [0.9, 0.1]],
            vec![1, 1, 0, 0],
        )
    }

    #[test]
    fn curve_zero_threshold_is_whole_set() {
        let s = curve_fixture();
        let pts = confidence_accuracy_curve(&s, &[0.0]).unwrap();
        assert_eq!(pts[0].count, 4);
        assert_eq!(pts[0].accuracy, Some(accuracy(&s).unwrap()));
    }

    #[test]
    fn curve_above_max_confidence_is_empty() {
        let s = curve_fixture();
        let pts = confidence_accuracy_curve(&s, &[0.95]).unwrap();
        assert_eq!(pts[0].count, 0);
        assert_eq!(pts[0].accuracy, None);
    }

    #[test]
    fn curve_mid_threshold_enumeration() {
        // Confidences [0.6, 0.7, 0.8, 0.9], correctness [0, 1, 1, 1].
        let s = curve_fixture();
        let pts = confidence_accuracy_curve(&s, &[0.75]).unwrap();
        assert_eq!(pts[0].count, 2);
        assert_eq!(pts[0].accuracy, Some(1.0));
    }

    #[test]
    fn curve_counts_non_increasing() {
        let s = curve_fixture();
        let taus: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let pts = confidence_accuracy_curve(&s, &taus).unwrap();
        assert!(pts.windows(2).all(|w| w[0].count >= w[1].count));
    }

    #[test]
    fn curve_rejects_unsorted_thresholds() {
        let s = curve_fixture();
        assert!(confidence_accuracy_curve(&s, &[0.5, 0.2]).is_err());
    }
}
