//! End-to-end experiment pipeline: dataset preparation, method training,
//! shifted prediction, metric evaluation and artifact emission. Everything
//! is a pure function of the config and master seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, MethodKind, MetricName, OodConfig, RunConfig};
use super::report::{summarize, write_report_csv, write_summary_csv, MetricReport, MetricRow};
use crate::aggregate::{ensemble_mean, mc_average, size_study, StudyMetric};
use crate::calibrate::{apply_temperature, fit_temperature, Temperature};
use crate::data::{
    make_noise_images, make_synthetic_bars, make_synthetic_tabular, read_idx, read_predictions,
    write_predictions, BinningScheme, LabeledDataset, PredictionSet,
};
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{
    predict, read_params, train, train_ensemble, tune, write_params, ModelParams, ModelSpec,
};
use crate::seeds::{self, stream};
use crate::shift::apply_shift_series;

/// Datasets of one prepared run: the 80/10/10 split, the shifted test
/// series, and the optional OOD probe.
pub struct Prepared {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    /// One inner vector per configured shift series.
    pub shifted: Vec<Vec<LabeledDataset>>,
    pub ood: Option<LabeledDataset>,
}

pub fn build_dataset(config: &RunConfig, seed: u64) -> Result<LabeledDataset> {
    let data_seed = seeds::mix(seed, stream::DATA);
    match &config.dataset {
        DatasetConfig::Idx {
            images,
            labels,
            limit,
        } => read_idx(images, labels, *limit),
        DatasetConfig::SyntheticBars {
            n_per_class,
            classes,
            side,
            noise_sigma,
        } => make_synthetic_bars(*n_per_class, *classes, *side, *noise_sigma, data_seed),
        DatasetConfig::SyntheticTabular {
            n,
            numeric,
            vocab_sizes,
        } => make_synthetic_tabular(*n, *numeric, vocab_sizes, data_seed),
    }
}

/// Split 80/10/10 by a seeded shuffle.
pub fn split_dataset(
    data: &LabeledDataset,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n = data.n();
    if n < 10 {
        return Err(Error::InvalidDataset(format!(
            "{n} examples is too few for an 80/10/10 split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seeds::mix(seed, stream::SPLIT));
    idx.shuffle(&mut rng);
    let n_train = n * 8 / 10;
    let n_val = n * 9 / 10 - n_train;
    let train = data.select(&idx[..n_train])?;
    let val = data.select(&idx[n_train..n_train + n_val])?;
    let test = data.select(&idx[n_train + n_val..])?;
    Ok((train, val, test))
}

pub fn prepare(config: &RunConfig, seed: u64) -> Result<Prepared> {
    let data = build_dataset(config, seed)?;
    let (train, validation, test) = split_dataset(&data, seed)?;
    let mut shifted = Vec::with_capacity(config.shifts.len());
    for (si, spec) in config.shifts.iter().enumerate() {
        let shift_seed = seeds::mix2(seed, stream::SHIFT, si as u64);
        shifted.push(apply_shift_series(&test, spec, shift_seed)?);
    }
    let ood = match &config.ood {
        Some(OodConfig::NoiseImages { n, side }) => Some(
            make_noise_images(*n, *side, seeds::mix(seed, stream::OOD))?,
        ),
        None => None,
    };
    Ok(Prepared {
        train,
        validation,
        test,
        shifted,
        ood,
    })
}

/// A trained method column, ready to predict.
pub enum TrainedMethod {
    Single {
        spec: ModelSpec,
        params: ModelParams,
    },
    Ensemble {
        spec: ModelSpec,
        members: Vec<ModelParams>,
    },
    TempScaled {
        spec: ModelSpec,
        params: ModelParams,
        temperature: Temperature,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TemperatureFile {
    temperature: f64,
    at_bound: bool,
    validation_nll: f64,
}

fn fit_method_temperature(
    spec: &ModelSpec,
    params: &ModelParams,
    validation: &LabeledDataset,
) -> Result<Temperature> {
    let sets = predict(params, spec, validation, 1, 0)?;
    let logits = sets[0]
        .logits()
        .ok_or_else(|| Error::MissingLogits("temperature fitting".into()))?;
    fit_temperature(logits, validation.labels())
}

/// Train every configured method. Temperature scaling reuses the first
/// vanilla entry's model and fits on the validation logits. When
/// `artifacts` is given, resolved specs, weights, temperatures and tuning
/// logs are written under it.
pub fn train_methods(
    config: &RunConfig,
    seed: u64,
    prepared: &Prepared,
    artifacts: Option<&Path>,
) -> Result<Vec<TrainedMethod>> {
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir.join("models"))
            .map_err(|e| Error::io(dir.join("models").display().to_string(), e))?;
    }

    let vanilla_index = config
        .methods
        .iter()
        .position(|m| m.kind == MethodKind::Vanilla);

    let mut trained: Vec<Option<TrainedMethod>> = Vec::new();
    for _ in 0..config.methods.len() {
        trained.push(None);
    }

    // Train the vanilla base first if temperature scaling needs it.
    if config
        .methods
        .iter()
        .any(|m| m.kind == MethodKind::TempScaling)
    {
        let vi = vanilla_index
            .ok_or_else(|| Error::Config("temp_scaling needs a vanilla method".into()))?;
        trained[vi] = Some(train_one(config, seed, prepared, vi, artifacts)?);
    }

    for mi in 0..config.methods.len() {
        if trained[mi].is_some() {
            continue;
        }
        let mc = &config.methods[mi];
        let tm = if mc.kind == MethodKind::TempScaling {
            let vi = vanilla_index.expect("validated");
            let (spec, params) = match trained[vi].as_ref().expect("vanilla trained first") {
                TrainedMethod::Single { spec, params } => (spec.clone(), params.clone()),
                _ => unreachable!("vanilla is a single model"),
            };
            let temperature = fit_method_temperature(&spec, &params, &prepared.validation)
                .map_err(|e| e.at_coordinate(&mc.name, "none", 0))?;
            TrainedMethod::TempScaled {
                spec,
                params,
                temperature,
            }
        } else {
            train_one(config, seed, prepared, mi, artifacts)?
        };
        trained[mi] = Some(tm);
    }

    let trained: Vec<TrainedMethod> = trained.into_iter().map(|t| t.unwrap()).collect();
    if let Some(dir) = artifacts {
        save_methods(config, &trained, dir)?;
    }
    Ok(trained)
}

fn train_one(
    config: &RunConfig,
    seed: u64,
    prepared: &Prepared,
    mi: usize,
    artifacts: Option<&Path>,
) -> Result<TrainedMethod> {
    let mc = &config.methods[mi];
    let train_seed = seeds::mix2(seed, stream::TRAIN, mi as u64);
    let mut spec = mc.model_spec(train_seed)?;

    if let Some(tc) = &mc.tune {
        let tune_seed = seeds::mix2(seed, stream::TUNE, mi as u64);
        let outcome = tune(
            &spec,
            &tc.search_space(),
            tc.budget,
            &prepared.train,
            &prepared.validation,
            tune_seed,
        )
        .map_err(|e| e.at_coordinate(&mc.name, "none", 0))?;
        if let Some(dir) = artifacts {
            let tdir = dir.join("tuning");
            fs::create_dir_all(&tdir).map_err(|e| Error::io(tdir.display().to_string(), e))?;
            let mut out =
                String::from("trial,learning_rate,batch_size,dropout_rate,validation_nll,diverged\n");
            for t in &outcome.trials {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    t.index,
                    t.learning_rate,
                    t.batch_size,
                    t.dropout_rate,
                    t.validation_nll.map_or(String::new(), |v| v.to_string()),
                    t.validation_nll.is_none()
                )
                .unwrap();
            }
            let path = tdir.join(format!("{}.csv", mc.name));
            fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        spec = outcome.best;
    }

    let tm = if mc.kind == MethodKind::Ensemble {
        let members = train_ensemble(&spec, mc.members, &prepared.train, &prepared.validation)
            .map_err(|e| e.at_coordinate(&mc.name, "none", 0))?;
        TrainedMethod::Ensemble { spec, members }
    } else {
        let params = train(&spec, &prepared.train, &prepared.validation)
            .map_err(|e| e.at_coordinate(&mc.name, "none", 0))?;
        TrainedMethod::Single { spec, params }
    };
    Ok(tm)
}

fn save_methods(config: &RunConfig, trained: &[TrainedMethod], dir: &Path) -> Result<()> {
    let mdir = dir.join("models");
    for (mc, tm) in config.methods.iter().zip(trained) {
        let spec = match tm {
            TrainedMethod::Single { spec, .. }
            | TrainedMethod::Ensemble { spec, .. }
            | TrainedMethod::TempScaled { spec, .. } => spec,
        };
        let spath = mdir.join(format!("{}.spec.json", mc.name));
        let body = serde_json::to_string_pretty(spec).expect("spec serializes");
        fs::write(&spath, body + "\n").map_err(|e| Error::io(spath.display().to_string(), e))?;

        match tm {
            TrainedMethod::Single { params, .. } | TrainedMethod::TempScaled { params, .. } => {
                write_params(params, &mdir.join(format!("{}__m00.sbm", mc.name)))?;
            }
            TrainedMethod::Ensemble { members, .. } => {
                for (i, p) in members.iter().enumerate() {
                    write_params(p, &mdir.join(format!("{}__m{i:02}.sbm", mc.name)))?;
                }
            }
        }
        if let TrainedMethod::TempScaled { temperature, .. } = tm {
            let tpath = mdir.join(format!("{}.temperature.json", mc.name));
            let body = serde_json::to_string_pretty(&TemperatureFile {
                temperature: temperature.t,
                at_bound: temperature.at_search_bound,
                validation_nll: temperature.validation_nll,
            })
            .expect("temperature serializes");
            fs::write(&tpath, body + "\n")
                .map_err(|e| Error::io(tpath.display().to_string(), e))?;
        }
    }
    Ok(())
}

/// Reload methods written by [`train_methods`] from `dir/models`.
pub fn load_methods(config: &RunConfig, dir: &Path) -> Result<Vec<TrainedMethod>> {
    let mdir = dir.join("models");
    let mut out = Vec::with_capacity(config.methods.len());
    for mc in &config.methods {
        let spath = mdir.join(format!("{}.spec.json", mc.name));
        let body =
            fs::read_to_string(&spath).map_err(|e| Error::io(spath.display().to_string(), e))?;
        let spec: ModelSpec = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: spath.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        let tm = match mc.kind {
            MethodKind::Ensemble => {
                let members: Result<Vec<ModelParams>> = (0..mc.members)
                    .map(|i| read_params(&mdir.join(format!("{}__m{i:02}.sbm", mc.name))))
                    .collect();
                TrainedMethod::Ensemble {
                    spec,
                    members: members?,
                }
            }
            MethodKind::TempScaling => {
                let params = read_params(&mdir.join(format!("{}__m00.sbm", mc.name)))?;
                let tpath = mdir.join(format!("{}.temperature.json", mc.name));
                let body = fs::read_to_string(&tpath)
                    .map_err(|e| Error::io(tpath.display().to_string(), e))?;
                let tf: TemperatureFile = serde_json::from_str(&body).map_err(|e| Error::Parse {
                    path: tpath.display().to_string(),
                    line: 0,
                    reason: e.to_string(),
                })?;
                TrainedMethod::TempScaled {
                    spec,
                    params,
                    temperature: Temperature {
                        t: tf.temperature,
                        at_search_bound: tf.at_bound,
                        validation_nll: tf.validation_nll,
                    },
                }
            }
            _ => TrainedMethod::Single {
                spec,
                params: read_params(&mdir.join(format!("{}__m00.sbm", mc.name)))?,
            },
        };
        out.push(tm);
    }
    Ok(out)
}

/// Prediction sets of one method across all shift coordinates.
pub struct MethodPredictions {
    pub shifted: Vec<Vec<PredictionSet>>,
    pub ood: Option<PredictionSet>,
}

fn predict_one(
    tm: &TrainedMethod,
    data: &LabeledDataset,
    pred_seed: u64,
) -> Result<PredictionSet> {
    match tm {
        TrainedMethod::Single { spec, params } => {
            if spec.method.is_stochastic() {
                let samples = predict(params, spec, data, spec.mc_samples, pred_seed)?;
                mc_average(&samples)
            } else {
                Ok(predict(params, spec, data, 1, pred_seed)?.remove(0))
            }
        }
        TrainedMethod::Ensemble { spec, members } => {
            let sets: Result<Vec<PredictionSet>> = members
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Ok(predict(p, spec, data, 1, seeds::mix(pred_seed, i as u64))?.remove(0))
                })
                .collect();
            ensemble_mean(&sets?)
        }
        TrainedMethod::TempScaled {
            spec,
            params,
            temperature,
        } => {
            let base = predict(params, spec, data, 1, pred_seed)?.remove(0);
            apply_temperature(&base, temperature)
        }
    }
}

/// Predict every (method, shift, level) coordinate plus the OOD probe.
pub fn predict_methods(
    config: &RunConfig,
    seed: u64,
    prepared: &Prepared,
    trained: &[TrainedMethod],
) -> Result<Vec<MethodPredictions>> {
    let mut out = Vec::with_capacity(trained.len());
    for (mi, (mc, tm)) in config.methods.iter().zip(trained).enumerate() {
        let mut shifted = Vec::with_capacity(prepared.shifted.len());
        for (si, series) in prepared.shifted.iter().enumerate() {
            let mut level_sets = Vec::with_capacity(series.len());
            for (li, ds) in series.iter().enumerate() {
                let pred_seed =
                    seeds::mix(seeds::mix3(seed, stream::PREDICT, mi as u64, si as u64), li as u64);
                let set = predict_one(tm, ds, pred_seed)
                    .map_err(|e| e.at_coordinate(&mc.name, &ds.shift().kind, li as u32))?
                    .with_method(&mc.name);
                level_sets.push(set);
            }
            shifted.push(level_sets);
        }
        let ood = match &prepared.ood {
            Some(ds) => {
                let pred_seed = seeds::mix2(seed, stream::OOD, mi as u64);
                let set = predict_one(tm, ds, pred_seed)
                    .map_err(|e| e.at_coordinate(&mc.name, "ood", 0))?
                    .with_method(&mc.name)
                    .without_labels();
                Some(set)
            }
            None => None,
        };
        out.push(MethodPredictions { shifted, ood });
    }
    Ok(out)
}

pub fn prediction_filename(method: &str, shift: &str, level: u32) -> String {
    format!("{method}__{shift}__{level:02}.csv")
}

pub fn ood_filename(method: &str) -> String {
    format!("{method}__ood.csv")
}

pub fn write_prediction_files(
    config: &RunConfig,
    predictions: &[MethodPredictions],
    dir: &Path,
) -> Result<()> {
    let pdir = dir.join("predictions");
    fs::create_dir_all(&pdir).map_err(|e| Error::io(pdir.display().to_string(), e))?;
    for (mc, mp) in config.methods.iter().zip(predictions) {
        for series in &mp.shifted {
            for set in series {
                let name =
                    prediction_filename(&mc.name, &set.meta().shift.kind, set.meta().shift.intensity);
                write_predictions(set, &pdir.join(name))?;
            }
        }
        if let Some(set) = &mp.ood {
            write_predictions(set, &pdir.join(ood_filename(&mc.name)))?;
        }
    }
    Ok(())
}

/// Reload prediction files for every coordinate the config implies.
pub fn read_prediction_files(config: &RunConfig, dir: &Path) -> Result<Vec<MethodPredictions>> {
    let pdir = dir.join("predictions");
    let mut out = Vec::with_capacity(config.methods.len());
    for mc in &config.methods {
        let mut shifted = Vec::with_capacity(config.shifts.len());
        for spec in &config.shifts {
            let mut level_sets = Vec::with_capacity(spec.levels.len());
            for li in 0..spec.levels.len() {
                let name = prediction_filename(&mc.name, spec.kind.name(), li as u32);
                level_sets.push(read_predictions(&pdir.join(name))?);
            }
            shifted.push(level_sets);
        }
        let ood = if config.ood.is_some() {
            Some(read_predictions(&pdir.join(ood_filename(&mc.name)))?)
        } else {
            None
        };
        out.push(MethodPredictions { shifted, ood });
    }
    Ok(out)
}

fn eval_metric(
    metric: MetricName,
    set: &PredictionSet,
    bins: &BinningScheme,
) -> Result<(f64, usize)> {
    let value = match metric {
        MetricName::Accuracy => (metrics::accuracy(set)?, 0),
        MetricName::Nll => {
            let r = metrics::nll(set)?;
            (r.value, r.floored)
        }
        MetricName::Brier => (metrics::brier(set)?, 0),
        MetricName::Ece => (metrics::ece(set, bins)?, 0),
        MetricName::Auc => {
            if set.k() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "auc needs binary predictions, got K={}",
                    set.k()
                )));
            }
            let labels = set.require_labels("auc")?;
            let scores: Vec<f64> = set.probs().column(1).to_vec();
            let bools: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
            (metrics::auc(&scores, &bools)?, 0)
        }
        MetricName::BrierUncertainty => (metrics::brier_decomposition(set, bins)?.uncertainty, 0),
        MetricName::BrierResolution => (metrics::brier_decomposition(set, bins)?.resolution, 0),
        MetricName::BrierReliability => (metrics::brier_decomposition(set, bins)?.reliability, 0),
    };
    Ok(value)
}

/// Long-form metric rows for every coordinate, plus label-free OOD
/// diagnostics (mean entropy and mean confidence) and the floored-NLL audit.
pub fn evaluate(
    config: &RunConfig,
    predictions: &[MethodPredictions],
) -> Result<(Vec<MetricRow>, BTreeMap<String, serde_json::Value>)> {
    let bins = config.bins.scheme()?;
    let mut rows = Vec::new();
    let mut floored: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    for (mc, mp) in config.methods.iter().zip(predictions) {
        for series in &mp.shifted {
            for set in series {
                let shift = set.meta().shift.clone();
                for &metric in &config.metrics {
                    let (value, nfloor) = eval_metric(metric, set, &bins)
                        .map_err(|e| e.at_coordinate(&mc.name, &shift.kind, shift.intensity))?;
                    if nfloor > 0 {
                        floored.insert(
                            format!("{}/{}/{}", mc.name, shift.kind, shift.intensity),
                            serde_json::json!(nfloor),
                        );
                    }
                    rows.push(MetricRow {
                        method: mc.name.clone(),
                        shift_type: shift.kind.clone(),
                        intensity: shift.intensity,
                        metric: metric.name().to_string(),
                        value,
                    });
                }
            }
        }
        if let Some(set) = &mp.ood {
            let ents = metrics::entropies(set);
            let confs = set.confidences();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            rows.push(MetricRow {
                method: mc.name.clone(),
                shift_type: "ood".into(),
                intensity: 0,
                metric: "mean_entropy".into(),
                value: mean(&ents),
            });
            rows.push(MetricRow {
                method: mc.name.clone(),
                shift_type: "ood".into(),
                intensity: 0,
                metric: "mean_confidence".into(),
                value: mean(&confs),
            });
        }
    }
    Ok((rows, floored))
}

fn write_histogram_csv(h: &metrics::Histogram, path: &Path) -> Result<()> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    let edges = h.edges();
    for (i, &c) in h.counts.iter().enumerate() {
        writeln!(out, "{},{},{c}", edges[i], edges[i + 1]).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_curve_files(
    set: &PredictionSet,
    stem: &str,
    dir: &Path,
    thresholds: &[f64],
    hist_bins: usize,
) -> Result<()> {
    let labeled = set.labels().is_some();
    if labeled {
        let pts = metrics::confidence_accuracy_curve(set, thresholds)?;
        let mut out = String::from("threshold,count,accuracy\n");
        for p in &pts {
            writeln!(
                out,
                "{},{},{}",
                p.threshold,
                p.count,
                p.accuracy.map_or(String::new(), |a| a.to_string())
            )
            .unwrap();
        }
        let path = dir.join(format!("{stem}__confidence_accuracy.csv"));
        fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
    }

    // Count curve needs no labels.
    let confs = set.confidences();
    let mut out = String::from("threshold,count\n");
    for &tau in thresholds {
        let count = confs.iter().filter(|&&c| c >= tau).count();
        writeln!(out, "{tau},{count}").unwrap();
    }
    let path = dir.join(format!("{stem}__confidence_count.csv"));
    fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;

    write_histogram_csv(
        &metrics::entropy_histogram(set, hist_bins),
        &dir.join(format!("{stem}__entropy_hist.csv")),
    )?;
    write_histogram_csv(
        &metrics::confidence_histogram(set, hist_bins),
        &dir.join(format!("{stem}__confidence_hist.csv")),
    )
}

/// Write the confidence-accuracy, confidence-count and histogram CSVs for
/// every prediction set, including the OOD probe (label-free files only).
pub fn emit_curves(
    config: &RunConfig,
    predictions: &[MethodPredictions],
    dir: &Path,
) -> Result<()> {
    let cdir = dir.join("curves");
    fs::create_dir_all(&cdir).map_err(|e| Error::io(cdir.display().to_string(), e))?;
    let thresholds = config.thresholds();
    for (mc, mp) in config.methods.iter().zip(predictions) {
        for series in &mp.shifted {
            for set in series {
                let stem = format!(
                    "{}__{}__{:02}",
                    mc.name,
                    set.meta().shift.kind,
                    set.meta().shift.intensity
                );
                write_curve_files(set, &stem, &cdir, &thresholds, config.histogram_bins)?;
            }
        }
        if let Some(set) = &mp.ood {
            let stem = format!("{}__ood", mc.name);
            write_curve_files(set, &stem, &cdir, &thresholds, config.histogram_bins)?;
        }
    }
    Ok(())
}

fn write_meta(meta: &BTreeMap<String, serde_json::Value>, dir: &Path) -> Result<()> {
    let path = dir.join("report_meta.json");
    let body = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&path, body + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn temperature_meta(
    config: &RunConfig,
    trained: &[TrainedMethod],
) -> BTreeMap<String, serde_json::Value> {
    let mut out = BTreeMap::new();
    for (mc, tm) in config.methods.iter().zip(trained) {
        if let TrainedMethod::TempScaled { temperature, .. } = tm {
            out.insert(
                mc.name.clone(),
                serde_json::json!({
                    "temperature": temperature.t,
                    "at_bound": temperature.at_search_bound,
                }),
            );
        }
    }
    out
}

/// The full pipeline: train, predict, evaluate, summarize, and write every
/// artifact (models, predictions, report.csv, summary.csv, curves,
/// report_meta.json) under `out`. Byte-identical across reruns.
pub fn run(config: &RunConfig, out: &Path, seed: u64) -> Result<MetricReport> {
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let prepared = prepare(config, seed)?;
    let trained = train_methods(config, seed, &prepared, Some(out))?;
    let predictions = predict_methods(config, seed, &prepared, &trained)?;
    write_prediction_files(config, &predictions, out)?;

    let (rows, floored) = evaluate(config, &predictions)?;
    let summary_rows: Vec<MetricRow> = rows
        .iter()
        .filter(|r| r.shift_type != "ood")
        .cloned()
        .collect();
    let summary = summarize(&summary_rows);

    let mut meta = BTreeMap::new();
    let temps = temperature_meta(config, &trained);
    if !temps.is_empty() {
        meta.insert(
            "temperatures".to_string(),
            serde_json::Value::Object(temps.into_iter().collect()),
        );
    }
    if !floored.is_empty() {
        meta.insert(
            "nll_floored".to_string(),
            serde_json::Value::Object(floored.into_iter().collect()),
        );
    }

    write_report_csv(&rows, &out.join("report.csv"))?;
    write_summary_csv(&summary, &out.join("summary.csv"))?;
    write_meta(&meta, out)?;
    emit_curves(config, &predictions, out)?;

    Ok(MetricReport {
        rows,
        summary,
        meta,
    })
}

/// Resolve the output directory: CLI flag wins, then the config field.
pub fn resolve_out_dir(config: &RunConfig, cli_out: Option<&Path>) -> Result<PathBuf> {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory (--out or config.output_dir)".into()))
}

fn fnv1a64(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Write a per-level summary of the shift series (shifts.csv): sizes, mean
/// feature values and a content hash demonstrating per-seed determinism.
pub fn write_shift_summary(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let prepared = prepare(config, seed)?;
    let mut body = String::from("shift_type,level_index,level_value,n,feature_mean,content_hash\n");
    for (spec, series) in config.shifts.iter().zip(&prepared.shifted) {
        for (li, ds) in series.iter().enumerate() {
            let mean = ds.features().iter().sum::<f64>() / ds.features().len() as f64;
            let hash = fnv1a64(
                ds.features()
                    .iter()
                    .flat_map(|v| v.to_le_bytes().into_iter()),
            );
            writeln!(
                body,
                "{},{li},{},{},{mean},{hash:016x}",
                spec.kind.name(),
                spec.levels[li],
                ds.n()
            )
            .unwrap();
        }
    }
    let path = out.join("shifts.csv");
    fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Train (or reload) the configured ensemble members, evaluate the study
/// metric over seeded member subsets at the configured shift coordinate,
/// and write size_study.csv.
pub fn run_size_study(config: &RunConfig, out: &Path, seed: u64) -> Result<()> {
    let ss = config
        .size_study
        .as_ref()
        .ok_or_else(|| Error::Config("config has no size_study section".into()))?;
    let metric = match ss.metric.as_str() {
        "brier" => StudyMetric::Brier,
        "nll" => StudyMetric::Nll,
        "ece" => StudyMetric::Ece,
        "accuracy" => StudyMetric::Accuracy,
        other => {
            return Err(Error::Config(format!(
                "size_study metric `{other}` not one of brier/nll/ece/accuracy"
            )))
        }
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let prepared = prepare(config, seed)?;
    let mi = config
        .methods
        .iter()
        .position(|m| m.name == ss.method)
        .expect("validated");
    let mc = &config.methods[mi];

    // Reuse saved members when a training stage already produced them.
    let have_saved = (0..mc.members).all(|i| {
        out.join("models")
            .join(format!("{}__m{i:02}.sbm", mc.name))
            .exists()
    }) && out.join("models").join(format!("{}.spec.json", mc.name)).exists();
    let (spec, members) = if have_saved {
        let loaded = load_methods(config, out)?.remove(mi);
        match loaded {
            TrainedMethod::Ensemble { spec, members } => (spec, members),
            _ => unreachable!("validated as ensemble"),
        }
    } else {
        match train_one(config, seed, &prepared, mi, Some(out))? {
            TrainedMethod::Ensemble { spec, members } => (spec, members),
            _ => unreachable!("validated as ensemble"),
        }
    };

    let (si, _) = config
        .shifts
        .iter()
        .enumerate()
        .find(|(_, s)| s.kind.name() == ss.shift_type && (ss.level as usize) < s.levels.len())
        .expect("validated");
    let ds = &prepared.shifted[si][ss.level as usize];

    let pred_seed = seeds::mix(
        seeds::mix3(seed, stream::PREDICT, mi as u64, si as u64),
        ss.level as u64,
    );
    let member_sets: Result<Vec<PredictionSet>> = members
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(predict(p, &spec, ds, 1, seeds::mix(pred_seed, i as u64))?.remove(0)))
        .collect();
    let rows = size_study(
        &member_sets?,
        &ss.sizes,
        metric,
        seeds::mix(seed, stream::SIZE_STUDY),
    )?;

    let mut body = String::from("size,metric,mean,std\n");
    for r in &rows {
        writeln!(body, "{},{},{},{}", r.size, metric.name(), r.mean, r.std).unwrap();
    }
    let path = out.join("size_study.csv");
    fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))
}
