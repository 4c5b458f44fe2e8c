//! Deterministic random-search hyperparameter tuning, scored by validation
//! log-likelihood.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, validation_nll, ModelSpec};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds;

/// Ranges to sample: learning rate log-uniform, batch size from a choice
/// list, dropout rate uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub batch_size: Vec<usize>,
    pub dropout_rate: (f64, f64),
}

impl SearchSpace {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.learning_rate;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate range ({lo}, {hi}) invalid"
            )));
        }
        if self.batch_size.is_empty() || self.batch_size.contains(&0) {
            return Err(Error::InvalidArgument("batch_size choices invalid".into()));
        }
        let (plo, phi) = self.dropout_rate;
        if !(0.0..1.0).contains(&plo) || !(0.0..1.0).contains(&phi) || phi < plo {
            return Err(Error::InvalidArgument(format!(
                "dropout_rate range ({plo}, {phi}) invalid"
            )));
        }
        Ok(())
    }
}

/// One tuning trial; `validation_nll` is `None` when training diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub validation_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: ModelSpec,
    pub trials: Vec<Trial>,
}

/// Random search over the space: `budget` sampled specs trained in full,
/// winner by validation NLL. Fully deterministic per seed; each trial trains
/// with a seed mixed from the search seed and the trial index.
pub fn tune(
    template: &ModelSpec,
    space: &SearchSpace,
    budget: usize,
    data: &LabeledDataset,
    validation: &LabeledDataset,
    seed: u64,
) -> Result<TuneOutcome> {
    if budget == 0 {
        return Err(Error::InvalidArgument("tuning budget must be >= 1".into()));
    }
    space.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<ModelSpec> = (0..budget)
        .map(|i| {
            let (llo, lhi) = (space.learning_rate.0.ln(), space.learning_rate.1.ln());
            let lr = (llo + rng.gen::<f64>() * (lhi - llo)).exp();
            let batch = space.batch_size[rng.gen_range(0..space.batch_size.len())];
            let (plo, phi) = space.dropout_rate;
            let p = plo + rng.gen::<f64>() * (phi - plo);
            let mut spec = template.clone();
            spec.train.learning_rate = lr;
            spec.train.batch_size = batch;
            spec.dropout_rate = p;
            spec.train.seed = seeds::mix(seed, i as u64);
            spec
        })
        .collect();

    let mut trials = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64)> = None;
    for (i, spec) in candidates.iter().enumerate() {
        let nll = match train(spec, data, validation) {
            Ok(params) => Some(validation_nll(&params, validation)),
            Err(Error::Divergence { .. }) => None,
            Err(other) => return Err(other),
        };
        if let Some(v) = nll {
            if best.map_or(true, |(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        trials.push(Trial {
            index: i,
            learning_rate: spec.train.learning_rate,
            batch_size: spec.train.batch_size,
            dropout_rate: spec.dropout_rate,
            validation_nll: nll,
        });
    }

    let (winner, _) = best.ok_or(Error::AllTrialsDiverged)?;
    Ok(TuneOutcome {
        best: candidates[winner].clone(),
        trials,
    })
}
