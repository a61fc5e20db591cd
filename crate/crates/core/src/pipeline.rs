//! The end-to-end protocol: scale, split, corrupt, train, compare.
//!
//! Every random choice draws from a seed derived from one master seed by
//! label (`"split"`, `"corruption"`, `"test-corruption"`, `"fcnn"`, `"cnn"`,
//! `"search"`), so each stage can be reproduced on its own.

use serde::{Deserialize, Serialize};

use crate::corruption::{augment, AugmentedDataset, CorruptionSpec, DEFAULT_COPIES};
use crate::dae::{train, validation_split, CnnConfig, FcnnConfig, ModelConfig, SearchSpace, TrainedModel};
use crate::data::{split, Split, SplitSpec, SurfaceDataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, model_complete_all, run_comparison, ComparisonReport, MetricsReport, TpsConfig};
use crate::seeds::derive_seed;
use crate::surface::{fit_scaling, MaskedSurface, ScalingTransform, YieldSurface};

/// Protocol settings shared by training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub nu: f64,
    pub copies: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            nu: 0.75,
            copies: DEFAULT_COPIES,
            test_fraction: 0.10,
            seed: 1,
        }
    }
}

/// A dataset after splitting and scaling, with its corruption settings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: Split,
    /// Fitted on the training observations only.
    pub scaling: ScalingTransform,
    pub train_scaled: Vec<YieldSurface>,
    pub test_scaled: Vec<YieldSurface>,
    pub corruption: CorruptionSpec,
    pub test_corruption: CorruptionSpec,
    pub copies: usize,
}

impl Prepared {
    /// Every training observation corrupted `copies` times.
    pub fn train_set(&self) -> Result<AugmentedDataset> {
        augment(&self.train_scaled, &self.corruption, self.copies)
    }

    /// Every test observation corrupted `copies` times with the test stream.
    pub fn test_set(&self) -> Result<AugmentedDataset> {
        augment(&self.test_scaled, &self.test_corruption, self.copies)
    }

    /// Training observations split into a fitting part and a validation part
    /// (the last 10% by index), both augmented.
    pub fn fit_and_validation(&self) -> Result<(AugmentedDataset, AugmentedDataset)> {
        validation_split(&self.train_scaled, &self.corruption, self.copies)
    }
}

pub fn prepare(dataset: &SurfaceDataset, cfg: &ProtocolConfig) -> Result<Prepared> {
    if !dataset.is_complete() {
        return Err(Error::Data("training data must be complete surfaces".into()));
    }
    let spec = SplitSpec::new(cfg.test_fraction, derive_seed(cfg.seed, "split"))?;
    let split = split(dataset, &spec)?;
    let scaling = fit_scaling(&split.train.surfaces)?;
    let corruption = CorruptionSpec::new(cfg.nu, derive_seed(cfg.seed, "corruption"))?;
    let test_corruption = CorruptionSpec::new(cfg.nu, derive_seed(cfg.seed, "test-corruption"))?;
    Ok(Prepared {
        train_scaled: split.train.surfaces.iter().map(|s| scaling.scale(s)).collect(),
        test_scaled: split.test.surfaces.iter().map(|s| scaling.scale(s)).collect(),
        split,
        scaling,
        corruption,
        test_corruption,
        copies: cfg.copies,
    })
}

/// Trains one model with early stopping on the validation carve.
pub fn train_on(prepared: &Prepared, config: &ModelConfig) -> Result<TrainedModel> {
    let (fit_set, val_set) = prepared.fit_and_validation()?;
    train(config, &fit_set, Some(&val_set), prepared.scaling)
}

/// A freshly initialised, untrained copy of `config`'s network.
pub fn untrained(config: &ModelConfig, scaling: ScalingTransform) -> Result<TrainedModel> {
    let mut network = config.build()?;
    network.initialize(derive_seed(config.train_settings().seed, "init"));
    Ok(TrainedModel {
        network,
        scaling,
        config: config.clone(),
        final_train_loss: f64::NAN,
        history: Vec::new(),
        best_epoch: 0,
    })
}

/// Metrics of a model on a scaled test set, in percent.
pub fn model_metrics(
    model: &TrainedModel,
    test: &AugmentedDataset,
    scaling: ScalingTransform,
) -> Result<MetricsReport> {
    let inputs: Vec<&MaskedSurface> = test.examples.iter().map(|e| &e.input).collect();
    let targets: Vec<YieldSurface> = test.examples.iter().map(|e| scaling.unscale(&e.target)).collect();
    compute_metrics(&model_complete_all(model, &inputs, scaling)?, &targets)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub protocol: ProtocolConfig,
    pub fcnn: FcnnConfig,
    pub cnn: CnnConfig,
    pub tps: TpsConfig,
}

impl BenchmarkConfig {
    /// Model configs with training seeds derived from the master seed.
    pub fn model_configs(&self) -> (ModelConfig, ModelConfig) {
        let mut fcnn = self.fcnn.clone();
        fcnn.train.seed = derive_seed(self.protocol.seed, "fcnn");
        let mut cnn = self.cnn.clone();
        cnn.train.seed = derive_seed(self.protocol.seed, "cnn");
        (ModelConfig::Fcnn(fcnn), ModelConfig::Cnn(cnn))
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: ComparisonReport,
    pub fcnn: TrainedModel,
    pub cnn: TrainedModel,
    pub untrained_fcnn: MetricsReport,
    pub untrained_cnn: MetricsReport,
    pub train_examples: usize,
    pub test_examples: usize,
    pub test_indices: Vec<usize>,
}

/// Runs the whole protocol on complete surfaces in percent.
pub fn run_benchmark(dataset: &SurfaceDataset, cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let prepared = prepare(dataset, &cfg.protocol)?;
    let test = prepared.test_set()?;
    let (fcnn_cfg, cnn_cfg) = cfg.model_configs();
    let fcnn = train_on(&prepared, &fcnn_cfg)?;
    let cnn = train_on(&prepared, &cnn_cfg)?;
    let report = run_comparison(
        &test,
        prepared.scaling,
        cfg.protocol.nu,
        Some(&cfg.tps),
        Some(&fcnn),
        Some(&cnn),
    )?;
    Ok(BenchmarkOutcome {
        untrained_fcnn: model_metrics(&untrained(&fcnn_cfg, prepared.scaling)?, &test, prepared.scaling)?,
        untrained_cnn: model_metrics(&untrained(&cnn_cfg, prepared.scaling)?, &test, prepared.scaling)?,
        report,
        fcnn,
        cnn,
        train_examples: prepared.train_scaled.len() * prepared.copies,
        test_examples: test.len(),
        test_indices: prepared.split.test_indices.clone(),
    })
}

/// Everything a command-line run can be configured with. Loaded from TOML;
/// every table and key is optional and falls back to its default.
///
/// ```toml
/// trials = 0
///
/// [protocol]
/// nu = 0.75
/// seed = 1
///
/// [fcnn]
/// hidden_width = 256
/// learning_rate = 0.001
/// epochs = 500
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub synthetic: SyntheticConfig,
    pub fcnn: FcnnConfig,
    pub cnn: CnnConfig,
    pub tps: TpsConfig,
    pub search: SearchSpace,
    /// Random-search trials before training; 0 trains the configured model as is.
    pub trials: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            protocol: self.protocol.clone(),
            fcnn: self.fcnn.clone(),
            cnn: self.cnn.clone(),
            tps: self.tps.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    #[test]
    fn protocol_counts() {
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let p = prepare(&ds, &ProtocolConfig::default()).unwrap();
        assert_eq!(p.test_set().unwrap().len(), 70);
        assert_eq!(p.train_set().unwrap().len(), 560);
        let (fit, val) = p.fit_and_validation().unwrap();
        assert_eq!(fit.len() + val.len(), 560);
        assert_eq!(val.len(), 60);
        let max = p
            .train_scaled
            .iter()
            .filter_map(YieldSurface::max_value)
            .fold(0.0, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn run_config_toml() {
        let cfg =
            RunConfig::from_toml("trials = 3\n[protocol]\nnu = 0.5\n[fcnn]\nhidden_width = 300\nepochs = 7\n").unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.protocol.nu, 0.5);
        assert_eq!(cfg.protocol.copies, 10);
        assert_eq!(cfg.fcnn.hidden_width, 300);
        assert_eq!(cfg.fcnn.train.epochs, 7);
        assert_eq!(cfg.fcnn.train.batch_size, 32);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        let cfg = RunConfig::from_toml("[synthetic]\nn_observations = 4\n").unwrap();
        assert_eq!(cfg.synthetic.n_observations, 4);
        assert_eq!(cfg.synthetic.level, SyntheticConfig::default().level);
    }

    #[test]
    fn seeds_fan_out() {
        let (f, c) = BenchmarkConfig::default().model_configs();
        assert_ne!(f.train_settings().seed, c.train_settings().seed);
    }
}
