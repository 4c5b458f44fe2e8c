//! JSON run configuration: dataset sources, methods, shifts, metrics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::BinningScheme;
use crate::error::{Error, Result};
use crate::models::{Method, ModelSpec, SearchSpace, TrainConfig};
use crate::shift::{ShiftKind, ShiftSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_limit")]
        limit: usize,
    },
    SyntheticBars {
        n_per_class: usize,
        classes: usize,
        side: usize,
        noise_sigma: f64,
    },
    SyntheticTabular {
        n: usize,
        numeric: usize,
        vocab_sizes: Vec<usize>,
    },
}

fn default_limit() -> usize {
    usize::MAX
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodConfig {
    NoiseImages { n: usize, side: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Vanilla,
    TempScaling,
    Dropout,
    LlDropout,
    Svi,
    LlSvi,
    Ensemble,
}

impl MethodKind {
    /// The architecture trained for this method column.
    pub fn base_method(&self) -> Method {
        match self {
            MethodKind::Vanilla | MethodKind::TempScaling | MethodKind::Ensemble => {
                Method::Vanilla
            }
            MethodKind::Dropout => Method::Dropout,
            MethodKind::LlDropout => Method::LlDropout,
            MethodKind::Svi => Method::Svi,
            MethodKind::LlSvi => Method::LlSvi,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneConfig {
    pub budget: usize,
    pub learning_rate: (f64, f64),
    pub batch_size: Vec<usize>,
    pub dropout_rate: (f64, f64),
}

impl TuneConfig {
    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size.clone(),
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub kind: MethodKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_prior_sigma")]
    pub prior_sigma: f64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Ensemble size; ignored for other kinds.
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default)]
    pub train: Option<TrainSettings>,
    #[serde(default)]
    pub tune: Option<TuneConfig>,
}

fn default_prior_sigma() -> f64 {
    1.0
}

fn default_mc_samples() -> usize {
    1
}

fn default_members() -> usize {
    1
}

impl MethodConfig {
    /// Resolve the model spec this method trains, with a concrete seed.
    pub fn model_spec(&self, seed: u64) -> Result<ModelSpec> {
        let train = self.train.as_ref().ok_or_else(|| {
            Error::Config(format!("method `{}` needs a train block", self.name))
        })?;
        let spec = ModelSpec {
            hidden: self.hidden.clone(),
            method: self.kind.base_method(),
            dropout_rate: self.dropout_rate,
            prior_sigma: self.prior_sigma,
            mc_samples: self.mc_samples,
            train: TrainConfig {
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
                seed,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Accuracy,
    Nll,
    Brier,
    Ece,
    Auc,
    BrierUncertainty,
    BrierResolution,
    BrierReliability,
}

impl MetricName {
    pub fn name(&self) -> &'static str {
        match self {
            MetricName::Accuracy => "accuracy",
            MetricName::Nll => "nll",
            MetricName::Brier => "brier",
            MetricName::Ece => "ece",
            MetricName::Auc => "auc",
            MetricName::BrierUncertainty => "brier_uncertainty",
            MetricName::BrierResolution => "brier_resolution",
            MetricName::BrierReliability => "brier_reliability",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinsConfig {
    #[serde(default = "default_bin_mode")]
    pub mode: String,
    #[serde(default = "default_bin_count")]
    pub count: usize,
}

fn default_bin_mode() -> String {
    "equal_width".to_string()
}

fn default_bin_count() -> usize {
    10
}

impl Default for BinsConfig {
    fn default() -> Self {
        BinsConfig {
            mode: default_bin_mode(),
            count: default_bin_count(),
        }
    }
}

impl BinsConfig {
    pub fn scheme(&self) -> Result<BinningScheme> {
        match self.mode.as_str() {
            "equal_width" => Ok(BinningScheme::equal_width(self.count)),
            "quantile" => Ok(BinningScheme::quantile(self.count)),
            other => Err(Error::Config(format!("unknown bin mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeStudyConfig {
    /// Name of the ensemble method entry providing the member pool.
    pub method: String,
    pub sizes: Vec<usize>,
    pub metric: String,
    /// Shift coordinate to study at.
    pub shift_type: String,
    pub level: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub ood: Option<OodConfig>,
    pub methods: Vec<MethodConfig>,
    pub shifts: Vec<ShiftSpec>,
    pub metrics: Vec<MetricName>,
    #[serde(default)]
    pub bins: BinsConfig,
    #[serde(default)]
    pub curve_thresholds: Option<Vec<f64>>,
    #[serde(default = "default_hist_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub size_study: Option<SizeStudyConfig>,
}

fn default_hist_bins() -> usize {
    10
}

fn name_ok(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let body =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("need at least one method".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("need at least one metric".into()));
        }
        if self.shifts.is_empty() {
            return Err(Error::Config("need at least one shift series".into()));
        }

        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            if !name_ok(&m.name) {
                return Err(Error::Config(format!(
                    "method name `{}` must be alphanumeric/-/_",
                    m.name
                )));
            }
            if !seen.insert(&m.name) {
                return Err(Error::Config(format!("duplicate method name `{}`", m.name)));
            }
            if m.kind != MethodKind::TempScaling && m.train.is_none() {
                return Err(Error::Config(format!(
                    "method `{}` needs a train block",
                    m.name
                )));
            }
            if m.kind == MethodKind::Ensemble && m.members < 1 {
                return Err(Error::Config(format!(
                    "ensemble `{}` needs members >= 1",
                    m.name
                )));
            }
        }
        if self
            .methods
            .iter()
            .any(|m| m.kind == MethodKind::TempScaling)
            && !self.methods.iter().any(|m| m.kind == MethodKind::Vanilla)
        {
            return Err(Error::Config(
                "temp_scaling reuses the vanilla model; add a vanilla method".into(),
            ));
        }

        let image_data = !matches!(self.dataset, DatasetConfig::SyntheticTabular { .. });
        for s in &self.shifts {
            let image_shift = s.kind != ShiftKind::CategoricalRandomize;
            if image_shift != image_data {
                return Err(Error::Config(format!(
                    "shift `{}` incompatible with the dataset kind",
                    s.kind.name()
                )));
            }
        }

        if let DatasetConfig::Idx { images, labels, .. } = &self.dataset {
            for p in [images, labels] {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "referenced path {} does not exist",
                        p.display()
                    )));
                }
            }
        }

        if let Some(taus) = &self.curve_thresholds {
            if taus.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Config("curve_thresholds must be ascending".into()));
            }
        }

        if let Some(ss) = &self.size_study {
            let entry = self
                .methods
                .iter()
                .find(|m| m.name == ss.method)
                .ok_or_else(|| {
                    Error::Config(format!("size_study method `{}` not found", ss.method))
                })?;
            if entry.kind != MethodKind::Ensemble {
                return Err(Error::Config(format!(
                    "size_study method `{}` must be an ensemble",
                    ss.method
                )));
            }
            if ss.sizes.windows(2).any(|w| w[0] >= w[1]) || ss.sizes.is_empty() {
                return Err(Error::Config("size_study sizes must be ascending".into()));
            }
            if let Some(&m) = ss.sizes.iter().find(|&&m| m == 0 || m > entry.members) {
                return Err(Error::Config(format!(
                    "size_study size {m} exceeds the {} trained members",
                    entry.members
                )));
            }
            if !self.shifts.iter().any(|s| {
                s.kind.name() == ss.shift_type && (ss.level as usize) < s.levels.len()
            }) {
                return Err(Error::Config(format!(
                    "size_study coordinate {}/{} not produced by the shifts",
                    ss.shift_type, ss.level
                )));
            }
        }
        Ok(())
    }

    /// Default confidence thresholds: 0.0, 0.1, ..., 1.0.
    pub fn thresholds(&self) -> Vec<f64> {
        self.curve_thresholds
            .clone()
            .unwrap_or_else(|| (0..=10).map(|i| i as f64 / 10.0).collect())
    }
}
