//! Desk-scale reference classifiers trained from scratch: plain MLPs,
//! MC-dropout and last-layer dropout, mean-field variational nets and their
//! last-layer variant, plus deep-ensemble training and random-search tuning.
//!
//! All methods share one architecture: an input encoding, affine layers with
//! ReLU between them, and a softmax read-out. They differ only in how
//! weights are treated (point values vs mean-field Gaussians) and where
//! dropout applies.

mod net;
mod store;
mod tune;

pub use net::{
    check_dims, cross_entropy, forward_logits, kl_to_prior, kl_value_and_grads, loss_and_grads,
    loss_only, Adam, NoiseDraw, StepLoss, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use store::{read_params, write_params};
pub use tune::{tune, SearchSpace, Trial, TuneOutcome};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, LabeledDataset, PredictionSet, SetMeta};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    Dropout,
    LlDropout,
    Svi,
    LlSvi,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Dropout => "dropout",
            Method::LlDropout => "ll_dropout",
            Method::Svi => "svi",
            Method::LlSvi => "ll_svi",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Method::Vanilla)
    }

    pub fn is_variational(&self) -> bool {
        matches!(self, Method::Svi | Method::LlSvi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub method: Method,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_prior_sigma")]
    pub prior_sigma: f64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    pub train: TrainConfig,
}

fn default_prior_sigma() -> f64 {
    1.0
}

fn default_mc_samples() -> usize {
    1
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.prior_sigma > 0.0) {
            return Err(Error::InvalidArgument("prior_sigma must be positive".into()));
        }
        if self.method.is_stochastic() && self.mc_samples == 0 {
            return Err(Error::InvalidArgument(
                "stochastic methods need mc_samples >= 1".into(),
            ));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.train.learning_rate > 0.0) || !self.train.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive and finite",
                self.train.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDense {
    pub w_mean: Array2<f64>,
    pub w_log_std: Array2<f64>,
    pub b_mean: Array1<f64>,
    pub b_log_std: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Point(Dense),
    Gaussian(GaussianDense),
}

/// Trained weights: point values, or mean-field Gaussian posteriors for
/// variational layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

/// Model-input encoding of a dataset.
///
/// Images pass through unchanged. Tabular rows keep their numeric columns
/// and one-hot encode each categorical column over `vocab + 1` slots, where
/// the extra slot collects every out-of-vocabulary token id.
pub fn encode_features(data: &LabeledDataset) -> Array2<f64> {
    match data.kind() {
        FeatureKind::Image { .. } => data.features().clone(),
        FeatureKind::Tabular {
            numeric,
            vocab_sizes,
        } => {
            let width: usize = numeric + vocab_sizes.iter().map(|v| v + 1).sum::<usize>();
            let mut out = Array2::zeros((data.n(), width));
            for (i, row) in data.features().outer_iter().enumerate() {
                for j in 0..*numeric {
                    out[[i, j]] = row[j];
                }
                let mut base = *numeric;
                for (j, &vocab) in vocab_sizes.iter().enumerate() {
                    let token = row[numeric + j] as usize;
                    let slot = if token < vocab { token } else { vocab };
                    out[[i, base + slot]] = 1.0;
                    base += vocab + 1;
                }
            }
            out
        }
    }
}

/// Layer dimensions for a spec on a dataset: encoded input, hidden, classes.
pub fn layer_dims(spec: &ModelSpec, data: &LabeledDataset) -> Vec<usize> {
    let input = match data.kind() {
        FeatureKind::Image { height, width } => height * width,
        FeatureKind::Tabular {
            numeric,
            vocab_sizes,
        } => numeric + vocab_sizes.iter().map(|v| v + 1).sum::<usize>(),
    };
    let mut dims = vec![input];
    dims.extend_from_slice(&spec.hidden);
    dims.push(data.n_classes());
    dims
}

/// Mean validation NLL of the deterministic pass (dropout off, variational
/// weights at their posterior means).
pub fn validation_nll(params: &ModelParams, data: &LabeledDataset) -> f64 {
    let x = encode_features(data);
    let noise = NoiseDraw::mean(params.layers.len());
    let logits = forward_logits(params, &x, &noise);
    cross_entropy(&logits, data.labels())
}

/// Train a model by mini-batch Adam on mean cross-entropy (plus KL/N for
/// variational methods), returning the parameters of the epoch with the
/// best validation log-likelihood. Deterministic given the spec's seed.
pub fn train(
    spec: &ModelSpec,
    data: &LabeledDataset,
    validation: &LabeledDataset,
) -> Result<ModelParams> {
    spec.validate()?;
    if data.dim() != validation.dim() {
        return Err(Error::ShapeMismatch(format!(
            "train dim {} vs validation dim {}",
            data.dim(),
            validation.dim()
        )));
    }
    if data.n_classes() != validation.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "train classes {} vs validation classes {}",
            data.n_classes(),
            validation.n_classes()
        )));
    }

    let dims = layer_dims(spec, data);
    let x = encode_features(data);
    let labels = data.labels();
    let n_train = data.n();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
    let mut params = net::init_params(spec, &dims, &mut rng);
    let mut adam = Adam::new(&params, spec.train.learning_rate);

    let mut best_params = params.clone();
    let mut best_nll = validation_nll(&params, validation);

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 0..spec.train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.train.batch_size) {
            let bx = select_rows(&x, chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let noise = NoiseDraw::sample(spec, &dims, chunk.len(), &mut rng);
            let (loss, grads) = loss_and_grads(spec, &params, &bx, &by, &noise, n_train);
            if !loss.total().is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam.step(&mut params, &grads);
        }
        let val = validation_nll(&params, validation);
        if val < best_nll {
            best_nll = val;
            best_params = params.clone();
        }
    }
    Ok(best_params)
}

fn select_rows(x: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), x.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Produce prediction sets for a dataset.
///
/// Vanilla models yield one deterministic set (with logits). Stochastic
/// methods yield `samples` sets, each from an independently seeded noise
/// draw (dropout masks, or posterior weight samples via reparameterization).
/// Combining them into one predictive distribution is the caller's job.
pub fn predict(
    params: &ModelParams,
    spec: &ModelSpec,
    data: &LabeledDataset,
    samples: usize,
    seed: u64,
) -> Result<Vec<PredictionSet>> {
    spec.validate()?;
    let dims = layer_dims(spec, data);
    check_dims(params, &dims)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }

    let x = encode_features(data);
    let n_samples = if spec.method.is_stochastic() { samples } else { 1 };

    let mut out = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let sample_seed = seeds::mix(seed, s as u64);
        let noise = if spec.method.is_stochastic() {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            NoiseDraw::sample(spec, &dims, data.n(), &mut rng)
        } else {
            NoiseDraw::mean(params.layers.len())
        };
        let logits = forward_logits(params, &x, &noise);
        let meta = SetMeta::new(
            spec.method.name(),
            data.name(),
            data.shift().clone(),
            sample_seed,
        );
        out.push(PredictionSet::from_logits(
            logits,
            Some(data.labels().to_vec()),
            meta,
        )?);
    }
    Ok(out)
}

/// Train `m` independent members with seeds mixed from the spec seed and the
/// member index.
pub fn train_ensemble(
    spec: &ModelSpec,
    m: usize,
    data: &LabeledDataset,
    validation: &LabeledDataset,
) -> Result<Vec<ModelParams>> {
    if m == 0 {
        return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
    }
    (0..m)
        .map(|i| {
            let mut member = spec.clone();
            member.train.seed = seeds::mix(spec.train.seed, i as u64);
            train(&member, data, validation)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_bars;
    use ndarray::array;

    fn tiny_spec(method: Method) -> ModelSpec {
        ModelSpec {
            hidden: vec![8],
            method,
            dropout_rate: 0.3,
            prior_sigma: 1.0,
            mc_samples: 4,
            train: TrainConfig {
                epochs: 5,
                batch_size: 8,
                learning_rate: 0.01,
                seed: 3,
            },
        }
    }

    fn separable_dataset() -> (LabeledDataset, LabeledDataset) {
        // 20 linearly separable points in 2-D.
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let x = i as f64 / 10.0 - 1.0;
            let y = if i % 2 == 0 { 0.6 + x * 0.1 } else { -0.6 - x * 0.1 };
            feats.extend_from_slice(&[x * 0.5 + 0.5, (y + 1.0) / 2.0]);
            labels.push(i % 2);
        }
        let data = LabeledDataset::new(
            Array2::from_shape_vec((20, 2), feats).unwrap(),
            labels,
            FeatureKind::Image { height: 1, width: 2 },
            2,
            "sep",
        )
        .unwrap();
        let val = data.clone();
        (data, val)
    }

    use ndarray::Array2;

    #[test]
    fn vanilla_reaches_perfect_training_accuracy_on_separable_data() {
        let (data, val) = separable_dataset();
        let mut spec = tiny_spec(Method::Vanilla);
        spec.dropout_rate = 0.0;
        spec.train.epochs = 200;
        spec.train.learning_rate = 0.05;
        let params = train(&spec, &data, &val).unwrap();
        let sets = predict(&params, &spec, &data, 1, 0).unwrap();
        let acc = crate::metrics::accuracy(&sets[0]).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = make_synthetic_bars(20, 2, 8, 0.2, 1).unwrap();
        let spec = tiny_spec(Method::Dropout);
        let a = train(&spec, &data, &data).unwrap();
        let b = train(&spec, &data, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prediction_is_deterministic_per_seed() {
        let data = make_synthetic_bars(10, 2, 8, 0.2, 1).unwrap();
        let spec = tiny_spec(Method::Svi);
        let params = train(&spec, &data, &data).unwrap();
        let a = predict(&params, &spec, &data, 3, 9).unwrap();
        let b = predict(&params, &spec, &data, 3, 9).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.probs(), y.probs());
        }
        // Samples differ from each other.
        assert_ne!(a[0].probs(), a[1].probs());
    }

    #[test]
    fn vanilla_prediction_forced_to_one_sample_with_unit_row_sums() {
        let data = make_synthetic_bars(5, 2, 8, 0.1, 2).unwrap();
        let spec = tiny_spec(Method::Vanilla);
        let params = train(&spec, &data, &data).unwrap();
        let sets = predict(&params, &spec, &data, 300, 0).unwrap();
        assert_eq!(sets.len(), 1);
        for row in sets[0].probs().outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_predicts_like_vanilla() {
        let data = make_synthetic_bars(5, 2, 8, 0.1, 2).unwrap();
        let mut spec = tiny_spec(Method::Dropout);
        spec.dropout_rate = 0.0;
        let params = train(&spec, &data, &data).unwrap();
        let sampled = predict(&params, &spec, &data, 3, 7).unwrap();
        let mut vspec = spec.clone();
        vspec.method = Method::Vanilla;
        let deterministic = predict(&params, &vspec, &data, 1, 7).unwrap();
        for s in &sampled {
            assert_eq!(s.probs(), deterministic[0].probs());
        }
    }

    #[test]
    fn svi_with_vanishing_stds_predicts_through_the_means() {
        let data = make_synthetic_bars(5, 2, 8, 0.1, 2).unwrap();
        let spec = tiny_spec(Method::Svi);
        let mut params = train(&spec, &data, &data).unwrap();
        for layer in &mut params.layers {
            if let LayerParams::Gaussian(g) = layer {
                g.w_log_std.fill(-700.0);
                g.b_log_std.fill(-700.0);
            }
        }
        let sampled = predict(&params, &spec, &data, 3, 11).unwrap();
        let x = encode_features(&data);
        let logits = forward_logits(&params, &x, &NoiseDraw::mean(params.layers.len()));
        for s in &sampled {
            for (a, b) in s.logits().unwrap().iter().zip(logits.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn svi_posterior_pinned_to_prior_has_zero_kl() {
        let spec = tiny_spec(Method::Svi);
        let dims = [4, 8, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = net::init_params(&spec, &dims, &mut rng);
        for layer in &mut params.layers {
            if let LayerParams::Gaussian(g) = layer {
                g.w_mean.fill(0.0);
                g.b_mean.fill(0.0);
                g.w_log_std.fill(spec.prior_sigma.ln());
                g.b_log_std.fill(spec.prior_sigma.ln());
            }
        }
        assert_eq!(kl_to_prior(&params, spec.prior_sigma), 0.0);
    }

    #[test]
    fn ensemble_members_differ_but_rerun_identically() {
        let data = make_synthetic_bars(10, 2, 8, 0.2, 4).unwrap();
        let mut spec = tiny_spec(Method::Vanilla);
        spec.dropout_rate = 0.0;
        let a = train_ensemble(&spec, 3, &data, &data).unwrap();
        let b = train_ensemble(&spec, 3, &data, &data).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        // M = 1 equals a single train() with the derived seed.
        let single = train_ensemble(&spec, 1, &data, &data).unwrap();
        let mut derived = spec.clone();
        derived.train.seed = seeds::mix(spec.train.seed, 0);
        assert_eq!(single[0], train(&derived, &data, &data).unwrap());
    }

    #[test]
    fn divergent_learning_rate_reports_epoch() {
        let data = make_synthetic_bars(10, 2, 8, 0.2, 4).unwrap();
        let mut spec = tiny_spec(Method::Vanilla);
        spec.train.learning_rate = 1e18;
        match train(&spec, &data, &data) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn tabular_encoding_one_hot_with_oov_slot() {
        let d = LabeledDataset::new(
            array![[0.5, 2.0], [0.25, 6.0]],
            vec![0, 1],
            FeatureKind::Tabular {
                numeric: 1,
                vocab_sizes: vec![4],
            },
            2,
            "t",
        )
        .unwrap();
        let x = encode_features(&d);
        assert_eq!(x.ncols(), 1 + 5);
        assert_eq!(x.row(0).to_vec(), vec![0.5, 0.0, 0.0, 1.0, 0.0, 0.0]);
        // Token 6 is out of vocabulary: it lands in the reserved slot.
        assert_eq!(x.row(1).to_vec(), vec![0.25, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn predict_shape_mismatch_rejected() {
        let data = make_synthetic_bars(5, 2, 8, 0.1, 2).unwrap();
        let spec = tiny_spec(Method::Vanilla);
        let params = train(&spec, &data, &data).unwrap();
        let other = make_synthetic_bars(5, 2, 10, 0.1, 2).unwrap();
        assert!(predict(&params, &spec, &other, 1, 0).is_err());
    }
}
