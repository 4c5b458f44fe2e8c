//! Combine multiple prediction sets into a single predictive distribution.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BinningScheme, PredictionSet};
use crate::error::{Error, Result};
use crate::metrics;
use crate::seeds;

/// Metrics a size study can track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyMetric {
    Brier,
    Nll,
    Ece,
    Accuracy,
}

impl StudyMetric {
    pub fn name(&self) -> &'static str {
        match self {
            StudyMetric::Brier => "brier",
            StudyMetric::Nll => "nll",
            StudyMetric::Ece => "ece",
            StudyMetric::Accuracy => "accuracy",
        }
    }

    fn eval(&self, set: &PredictionSet) -> Result<f64> {
        match self {
            StudyMetric::Brier => metrics::brier(set),
            StudyMetric::Nll => Ok(metrics::nll(set)?.value),
            StudyMetric::Ece => metrics::ece(set, &BinningScheme::equal_width(10)),
            StudyMetric::Accuracy => metrics::accuracy(set),
        }
    }
}

/// One row of a size study: metric mean and standard deviation over the
/// resampled member subsets of a given size.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeStudyRow {
    pub size: usize,
    pub mean: f64,
    pub std: f64,
}

/// Number of random member subsets drawn per size.
pub const SIZE_STUDY_RESAMPLES: usize = 20;

fn mean_of_members(members: &[&PredictionSet], tag: &str) -> Result<PredictionSet> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("no members to aggregate".into()))?;
    let (n, k) = (first.n(), first.k());
    for (i, m) in members.iter().enumerate() {
        if m.n() != n || m.k() != k {
            return Err(Error::ShapeMismatch(format!(
                "member {i} is {}x{}, expected {n}x{k}",
                m.n(),
                m.k()
            )));
        }
        if m.labels() != first.labels() {
            return Err(Error::ShapeMismatch(format!(
                "member {i} labels differ from member 0"
            )));
        }
        if m.meta().dataset != first.meta().dataset || m.meta().shift != first.meta().shift {
            return Err(Error::ShapeMismatch(format!(
                "member {i} dataset/shift tags differ from member 0"
            )));
        }
    }

    let mut probs = Array2::<f64>::zeros((n, k));
    for m in members {
        probs += m.probs();
    }
    probs /= members.len() as f64;

    let meta = crate::data::SetMeta {
        method: format!("{}+{tag}{}", first.meta().method, members.len()),
        ..first.meta().clone()
    };
    // Means of probabilities have no canonical logits, so none are kept.
    PredictionSet::new(probs, first.labels().map(|l| l.to_vec()), None, meta)
}

/// Equal-weight mean of independently trained ensemble members.
pub fn ensemble_mean(members: &[PredictionSet]) -> Result<PredictionSet> {
    let refs: Vec<&PredictionSet> = members.iter().collect();
    mean_of_members(&refs, "ens")
}

/// Equal-weight mean of Monte-Carlo samples from one stochastic model.
/// Same contract as [`ensemble_mean`]; the distinct method tag preserves
/// sample provenance.
pub fn mc_average(samples: &[PredictionSet]) -> Result<PredictionSet> {
    let refs: Vec<&PredictionSet> = samples.iter().collect();
    mean_of_members(&refs, "mc")
}

/// For each requested size m, draw [`SIZE_STUDY_RESAMPLES`] random subsets of
/// m members without replacement, aggregate each with [`ensemble_mean`], and
/// report the metric's mean and standard deviation over the resamples.
pub fn size_study(
    members: &[PredictionSet],
    sizes: &[usize],
    metric: StudyMetric,
    seed: u64,
) -> Result<Vec<SizeStudyRow>> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("no members".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("sizes must be ascending".into()));
    }
    if let Some(&m) = sizes.iter().find(|&&m| m == 0 || m > members.len()) {
        return Err(Error::InvalidArgument(format!(
            "size {m} outside 1..={}",
            members.len()
        )));
    }

    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &m) in sizes.iter().enumerate() {
        let mut values = Vec::with_capacity(SIZE_STUDY_RESAMPLES);
        for rep in 0..SIZE_STUDY_RESAMPLES {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seeds::mix2(seed, si as u64, rep as u64));
            let mut idx: Vec<usize> = (0..members.len()).collect();
            idx.shuffle(&mut rng);
            let subset: Vec<&PredictionSet> = idx[..m].iter().map(|&i| &members[i]).collect();
            let combined = mean_of_members(&subset, "ens")?;
            values.push(metric.eval(&combined)?);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (values.len() - 1) as f64;
        rows.push(SizeStudyRow {
            size: m,
            mean,
            std: var.sqrt(),
        });
    }
    Ok(rows)
}
