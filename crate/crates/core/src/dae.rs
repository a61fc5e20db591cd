//! Denoising autoencoders for surface completion.
//!
//! Both architectures map a `[1, 13, 15]` scaled surface with zeroed cells to
//! a `[1, 13, 15]` reconstruction through a sigmoid, so outputs live in
//! `(0, 1)` scaled units. Training minimises the MSE between the
//! reconstruction of the corrupted input and the clean target.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{augment, AugmentedDataset, CorruptionSpec, Example};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, AdamState, LayerSpec, Mode, Network, Tensor};
use crate::seeds::{derive_seed, stream_rng};
use crate::surface::{MaskedSurface, ScalingTransform, YieldSurface, N_CELLS, N_RATINGS, N_TENORS};

/// Shape of one network input or output.
pub const SURFACE_SHAPE: [usize; 3] = [1, N_RATINGS, N_TENORS];
/// Losses above this, or non-finite ones, abort training.
pub const DIVERGENCE_LOSS: f64 = 1e3;
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Fcnn,
    Cnn,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Fcnn => "fcnn",
            ModelKind::Cnn => "cnn",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fcnn" => Ok(ModelKind::Fcnn),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(format!("unknown model kind {other:?}, expected fcnn or cnn")),
        }
    }
}

/// Optimisation settings shared by both architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without improvement before stopping. Zero disables early stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: 1e-3,
            decay: 1e-4,
            batch_size: 32,
            epochs: 500,
            patience: 50,
            seed: 1,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return Err(Error::Config(format!("decay must be nonnegative, got {}", self.decay)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcnnConfig {
    /// Width of the single hidden layer; at least 195 so the code is overcomplete.
    pub hidden_width: usize,
    #[serde(flatten)]
    pub train: TrainSettings,
}

impl Default for FcnnConfig {
    fn default() -> Self {
        FcnnConfig {
            hidden_width: 256,
            train: TrainSettings::default(),
        }
    }
}

impl FcnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width < N_CELLS {
            return Err(Error::Config(format!(
                "hidden_width {} is below the input dimension {N_CELLS}; the hidden layer must be overcomplete",
                self.hidden_width
            )));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    /// Convolution blocks before pooling, 1 to 3.
    pub conv_blocks: usize,
    /// Output channels of each block; the bottleneck convolution reuses the last entry.
    pub filters_per_block: Vec<usize>,
    #[serde(flatten)]
    pub train: TrainSettings,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv_blocks: 2,
            filters_per_block: vec![8, 8],
            train: TrainSettings {
                learning_rate: 3e-3,
                ..TrainSettings::default()
            },
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.conv_blocks) {
            return Err(Error::Config(format!(
                "conv_blocks must be 1, 2 or 3, got {}",
                self.conv_blocks
            )));
        }
        if self.filters_per_block.len() != self.conv_blocks {
            return Err(Error::Config(format!(
                "{} conv blocks need {} filter counts, got {}",
                self.conv_blocks,
                self.conv_blocks,
                self.filters_per_block.len()
            )));
        }
        if self.filters_per_block.contains(&0) {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        self.train.validate()
    }
}

/// Either architecture with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Fcnn(FcnnConfig),
    Cnn(CnnConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Fcnn(_) => ModelKind::Fcnn,
            ModelConfig::Cnn(_) => ModelKind::Cnn,
        }
    }

    pub fn train_settings(&self) -> &TrainSettings {
        match self {
            ModelConfig::Fcnn(c) => &c.train,
            ModelConfig::Cnn(c) => &c.train,
        }
    }

    pub fn train_settings_mut(&mut self) -> &mut TrainSettings {
        match self {
            ModelConfig::Fcnn(c) => &mut c.train,
            ModelConfig::Cnn(c) => &mut c.train,
        }
    }

    pub fn build(&self) -> Result<Network> {
        match self {
            ModelConfig::Fcnn(c) => build_fcnn(c),
            ModelConfig::Cnn(c) => build_cnn(c),
        }
    }
}

/// `flatten -> dense -> relu -> batchnorm -> dense -> sigmoid -> reshape`.
pub fn build_fcnn(cfg: &FcnnConfig) -> Result<Network> {
    cfg.validate()?;
    let h = cfg.hidden_width;
    Network::new(
        SURFACE_SHAPE.to_vec(),
        vec![
            LayerSpec::Reshape { shape: vec![N_CELLS] },
            LayerSpec::Dense {
                inputs: N_CELLS,
                outputs: h,
            },
            LayerSpec::Relu,
            LayerSpec::BatchNorm { channels: h },
            LayerSpec::Dense {
                inputs: h,
                outputs: N_CELLS,
            },
            LayerSpec::Sigmoid,
            LayerSpec::Reshape {
                shape: SURFACE_SHAPE.to_vec(),
            },
        ],
    )
    .map_err(|e| Error::Config(e.to_string()))
}

/// Side length the CNN pads to before pooling.
pub const CNN_PADDED: usize = 16;

/// `pad(16, 16) -> [conv -> relu -> batchnorm] x blocks -> maxpool -> conv ->
/// relu -> batchnorm -> upsample -> conv(1) -> sigmoid -> crop(13, 15)`.
pub fn build_cnn(cfg: &CnnConfig) -> Result<Network> {
    cfg.validate()?;
    let mut layers = vec![LayerSpec::Pad {
        height: CNN_PADDED,
        width: CNN_PADDED,
    }];
    let mut channels = 1;
    for &f in &cfg.filters_per_block {
        layers.extend([
            LayerSpec::Conv3x3 {
                in_channels: channels,
                out_channels: f,
            },
            LayerSpec::Relu,
            LayerSpec::BatchNorm { channels: f },
        ]);
        channels = f;
    }
    layers.extend([
        LayerSpec::MaxPool2x2,
        LayerSpec::Conv3x3 {
            in_channels: channels,
            out_channels: channels,
        },
        LayerSpec::Relu,
        LayerSpec::BatchNorm { channels },
        LayerSpec::Upsample2x2,
        LayerSpec::Conv3x3 {
            in_channels: channels,
            out_channels: 1,
        },
        LayerSpec::Sigmoid,
        LayerSpec::Crop {
            height: N_RATINGS,
            width: N_TENORS,
        },
    ]);
    let net = Network::new(SURFACE_SHAPE.to_vec(), layers).map_err(|e| Error::Config(e.to_string()))?;
    if net.output_shape() != SURFACE_SHAPE {
        return Err(Error::Config(format!("cnn produces {:?}", net.output_shape())));
    }
    Ok(net)
}

/// Stacks masked inputs into a `[n, 1, 13, 15]` batch.
pub fn input_batch<'a>(inputs: impl IntoIterator<Item = &'a MaskedSurface>) -> Tensor {
    let data: Vec<f64> = inputs.into_iter().flat_map(|m| m.values().iter().copied()).collect();
    let n = data.len() / N_CELLS;
    Tensor::new(vec![n, 1, N_RATINGS, N_TENORS], data).expect("masked surfaces hold 195 finite cells")
}

/// Stacks complete surfaces into a `[n, 1, 13, 15]` batch.
pub fn target_batch<'a>(targets: impl IntoIterator<Item = &'a YieldSurface>) -> Result<Tensor> {
    let mut data = Vec::new();
    for t in targets {
        data.extend(t.values()?);
    }
    let n = data.len() / N_CELLS;
    Tensor::new(vec![n, 1, N_RATINGS, N_TENORS], data)
}

/// One epoch of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub scaling: ScalingTransform,
    pub config: ModelConfig,
    pub final_train_loss: f64,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    /// Forward pass in inference mode on scaled inputs; returns scaled outputs.
    pub fn predict_scaled(&self, inputs: &[&MaskedSurface]) -> Result<Vec<Vec<f64>>> {
        predict_scaled(&self.network, inputs)
    }

    /// Completes a scaled masked surface and returns it in percent.
    pub fn reconstruct(&self, input: &MaskedSurface) -> Result<YieldSurface> {
        reconstruct(self, input)
    }

    /// Writes `path` (network bytes) and its manifest next to it (`.json`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.network.to_bytes()).map_err(|e| Error::io(path, e))?;
        let manifest = ModelManifest {
            format: MANIFEST_FORMAT.into(),
            kind: self.kind(),
            config: self.config.clone(),
            scaling_factor: self.scaling.factor(),
            input_shape: self.network.input_shape().to_vec(),
            layers: self.network.layers().to_vec(),
            param_count: self.network.param_count(),
            final_train_loss: self.final_train_loss,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
        };
        let mpath = manifest_path(path);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        std::fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let network = Network::from_bytes(&bytes)?;
        let mpath = manifest_path(path);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: ModelManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unknown manifest format {:?}", manifest.format)));
        }
        let expected = manifest.config.build()?;
        if expected.layers() != network.layers() || manifest.layers != network.layers() {
            return Err(Error::Format(
                "model file does not match the manifest's architecture".into(),
            ));
        }
        Ok(TrainedModel {
            network,
            scaling: ScalingTransform::new(manifest.scaling_factor)?,
            config: manifest.config,
            final_train_loss: manifest.final_train_loss,
            history: manifest.history,
            best_epoch: manifest.best_epoch,
        })
    }
}

const MANIFEST_FORMAT: &str = "yieldfill-model/1";

/// Sidecar JSON written next to a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub scaling_factor: f64,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub param_count: usize,
    pub final_train_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// `model.bin` -> `model.json`.
pub fn manifest_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

fn predict_scaled(net: &Network, inputs: &[&MaskedSurface]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(PREDICT_CHUNK) {
        let y = net.predict(&input_batch(chunk.iter().copied()))?;
        out.extend(y.data().chunks(N_CELLS).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Inference-mode reconstruction, unscaled to percent. Every cell is the
/// network's output, observed or not.
pub fn reconstruct(model: &TrainedModel, input: &MaskedSurface) -> Result<YieldSurface> {
    let scaled = predict_scaled(&model.network, &[input])?.pop().expect("one output");
    YieldSurface::from_estimates(scaled.into_iter().map(|v| model.scaling.unscale_value(v)).collect())
}

/// Batched [`reconstruct`].
pub fn reconstruct_all(model: &TrainedModel, inputs: &[&MaskedSurface]) -> Result<Vec<YieldSurface>> {
    predict_scaled(&model.network, inputs)?
        .into_iter()
        .map(|s| YieldSurface::from_estimates(s.into_iter().map(|v| model.scaling.unscale_value(v)).collect()))
        .collect()
}

/// MSE of the network's inference-mode reconstructions against clean targets,
/// over all cells of all examples.
pub fn evaluation_loss(net: &Network, set: &AugmentedDataset) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Argument("empty evaluation set".into()));
    }
    let mut sum = 0.0;
    for chunk in set.examples.chunks(PREDICT_CHUNK) {
        let y = net.predict(&input_batch(chunk.iter().map(|e| &e.input)))?;
        let t = target_batch(chunk.iter().map(|e| &e.target))?;
        sum += mse_loss(&y, &t)?.0 * chunk.len() as f64;
    }
    Ok(sum / set.len() as f64)
}

/// Trains a freshly initialised network on scaled, corrupted examples.
///
/// With a validation set, early stopping and the kept parameters follow the
/// validation loss; without one they follow the epoch training loss. The
/// network is initialised from `derive_seed(seed, "init")` and batches are
/// shuffled from `derive_seed(seed, "shuffle")`, one stream per epoch.
pub fn train(
    config: &ModelConfig,
    train_set: &AugmentedDataset,
    validation: Option<&AugmentedDataset>,
    scaling: ScalingTransform,
) -> Result<TrainedModel> {
    let settings = config.train_settings().clone();
    let mut net = config.build()?;
    net.initialize(derive_seed(settings.seed, "init"));
    if train_set.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let inputs = input_batch(train_set.examples.iter().map(|e| &e.input));
    let targets = target_batch(train_set.examples.iter().map(|e| &e.target))?;
    let n = train_set.len();
    let mut adam = AdamState::new(net.param_count(), settings.learning_rate, settings.decay);
    let shuffle_seed = derive_seed(settings.seed, "shuffle");

    let mut history = Vec::with_capacity(settings.epochs);
    let mut best: Option<(f64, usize, Network, f64)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_in = Vec::with_capacity(settings.batch_size * N_CELLS);
    let mut batch_tg = Vec::with_capacity(settings.batch_size * N_CELLS);
    for epoch in 1..=settings.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(shuffle_seed, epoch as u64));
        let mut total = 0.0;
        for idx in order.chunks(settings.batch_size) {
            batch_in.clear();
            batch_tg.clear();
            for &i in idx {
                batch_in.extend_from_slice(&inputs.data()[i * N_CELLS..(i + 1) * N_CELLS]);
                batch_tg.extend_from_slice(&targets.data()[i * N_CELLS..(i + 1) * N_CELLS]);
            }
            let shape = vec![idx.len(), 1, N_RATINGS, N_TENORS];
            let x = Tensor::new(shape.clone(), std::mem::take(&mut batch_in))?;
            let t = Tensor::new(shape, std::mem::take(&mut batch_tg))?;
            let y = net.forward(&x, Mode::Train)?;
            let (loss, grad) = mse_loss(&y, &t)?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                let checkpoint = best.map(|b| b.2).unwrap_or_else(|| net.clone());
                return Err(Error::Divergence {
                    epoch,
                    loss,
                    checkpoint: Box::new(checkpoint),
                });
            }
            total += loss * idx.len() as f64;
            let grads = net.backward(&grad)?;
            adam.update(net.params_mut(), &grads)?;
            batch_in = x.into_data();
            batch_tg = t.into_data();
        }
        let train_loss = total / n as f64;
        let validation_loss = validation.map(|v| evaluation_loss(&net, v)).transpose()?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        let monitored = validation_loss.unwrap_or(train_loss);
        let improved = best.as_ref().is_none_or(|b| monitored < b.0);
        if improved {
            best = Some((monitored, epoch, net.clone(), train_loss));
        } else if settings.patience > 0 && epoch - best.as_ref().map_or(0, |b| b.1) >= settings.patience {
            break;
        }
    }
    let (_, best_epoch, network, final_train_loss) = best.expect("at least one epoch ran");
    Ok(TrainedModel {
        network,
        scaling,
        config: config.clone(),
        final_train_loss,
        history,
        best_epoch,
    })
}

/// Inclusive sampling range. Rates are sampled log-uniformly when both ends
/// are positive, otherwise uniformly; integer ranges uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub low: T,
    pub high: T,
}

impl<T: Copy> Range<T> {
    pub fn point(v: T) -> Self {
        Range { low: v, high: v }
    }
}

/// Hyperparameter ranges for [`random_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: Range<f64>,
    pub decay: Range<f64>,
    pub batch_size: Range<usize>,
    pub hidden_width: Range<usize>,
    pub conv_blocks: Range<usize>,
    pub filters: Range<usize>,
    /// Epoch budget and patience for every trial.
    pub epochs: usize,
    pub patience: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: Range { low: 1e-4, high: 1e-2 },
            decay: Range { low: 1e-6, high: 1e-3 },
            batch_size: Range { low: 16, high: 64 },
            hidden_width: Range {
                low: N_CELLS,
                high: 512,
            },
            conv_blocks: Range { low: 1, high: 3 },
            filters: Range { low: 2, high: 16 },
            epochs: 100,
            patience: 20,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let bad = |name: &str| Err(Error::Config(format!("search range {name} is empty or invalid")));
        let f = |r: &Range<f64>, min: f64| r.low.is_finite() && r.high.is_finite() && r.low >= min && r.low <= r.high;
        let u = |r: &Range<usize>, min: usize| r.low >= min && r.low <= r.high;
        if !f(&self.learning_rate, f64::MIN_POSITIVE) || self.learning_rate.low <= 0.0 {
            return bad("learning_rate");
        }
        if !f(&self.decay, 0.0) {
            return bad("decay");
        }
        if !u(&self.batch_size, 1) {
            return bad("batch_size");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        match kind {
            ModelKind::Fcnn if !u(&self.hidden_width, N_CELLS) => bad("hidden_width"),
            ModelKind::Cnn if !u(&self.conv_blocks, 1) || self.conv_blocks.high > 3 => bad("conv_blocks"),
            ModelKind::Cnn if !u(&self.filters, 1) => bad("filters"),
            _ => Ok(()),
        }
    }

    /// Trial `trial`'s configuration, a pure function of `(seed, trial)`.
    pub fn sample(&self, kind: ModelKind, seed: u64, trial: usize) -> ModelConfig {
        let mut rng = stream_rng(seed, trial as u64);
        let real = |rng: &mut rand_chacha::ChaCha8Rng, r: Range<f64>| {
            if r.low == r.high {
                r.low
            } else if r.low > 0.0 {
                rng.gen_range(r.low.ln()..=r.high.ln()).exp()
            } else {
                rng.gen_range(r.low..=r.high)
            }
        };
        let int = |rng: &mut rand_chacha::ChaCha8Rng, r: Range<usize>| rng.gen_range(r.low..=r.high);
        let train = TrainSettings {
            learning_rate: real(&mut rng, self.learning_rate),
            decay: real(&mut rng, self.decay),
            batch_size: int(&mut rng, self.batch_size),
            epochs: self.epochs,
            patience: self.patience,
            seed: derive_seed(seed, &format!("trial{trial}")),
        };
        match kind {
            ModelKind::Fcnn => ModelConfig::Fcnn(FcnnConfig {
                hidden_width: int(&mut rng, self.hidden_width),
                train,
            }),
            ModelKind::Cnn => {
                let blocks = int(&mut rng, self.conv_blocks);
                ModelConfig::Cnn(CnnConfig {
                    conv_blocks: blocks,
                    filters_per_block: (0..blocks).map(|_| int(&mut rng, self.filters)).collect(),
                    train,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: ModelConfig,
    pub param_count: usize,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelConfig,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

/// Number of training observations held back for validation: the last 10%
/// by index, at least one.
pub fn validation_count(n_train: usize) -> usize {
    ((n_train as f64 * 0.10 - 1e-9).ceil() as usize).clamp(1, n_train.saturating_sub(1).max(1))
}

/// Splits scaled training surfaces into fit and validation parts, corrupted
/// and augmented. Validation corruption uses a stream seed derived from
/// `corruption.seed`.
pub fn validation_split(
    train: &[YieldSurface],
    corruption: &CorruptionSpec,
    copies: usize,
) -> Result<(AugmentedDataset, AugmentedDataset)> {
    if train.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 training observations to carve a validation set, got {}",
            train.len()
        )));
    }
    let k = validation_count(train.len());
    let (fit_part, val_part) = train.split_at(train.len() - k);
    let val_spec = CorruptionSpec {
        seed: derive_seed(corruption.seed, "validation"),
        ..*corruption
    };
    Ok((
        augment(fit_part, corruption, copies)?,
        augment(val_part, &val_spec, copies)?,
    ))
}

/// Seeded random search. Each trial trains on the first 90% of `observations`
/// (scaled surfaces) and is scored by validation MSE on the last 10%.
/// Ties go to the configuration with fewer parameters, then the earlier trial.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    kind: ModelKind,
    space: &SearchSpace,
    observations: &[YieldSurface],
    corruption: &CorruptionSpec,
    copies: usize,
    trials: usize,
    seed: u64,
    scaling: ScalingTransform,
) -> Result<SearchResult> {
    if trials == 0 {
        return Err(Error::Config("random search needs at least one trial".into()));
    }
    space.validate(kind)?;
    let (fit_set, val_set) = validation_split(observations, corruption, copies)?;
    let records: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let config = space.sample(kind, seed, trial);
            let model = train(&config, &fit_set, Some(&val_set), scaling)?;
            Ok(TrialRecord {
                trial,
                param_count: model.network.param_count(),
                validation_mse: evaluation_loss(&model.network, &val_set)?,
                config,
            })
        })
        .collect::<Result<_>>()?;
    let best = records
        .iter()
        .min_by(|a, b| {
            a.validation_mse
                .total_cmp(&b.validation_mse)
                .then(a.param_count.cmp(&b.param_count))
                .then(a.trial.cmp(&b.trial))
        })
        .expect("trials >= 1");
    Ok(SearchResult {
        best: best.config.clone(),
        best_trial: best.trial,
        trials: records,
    })
}

/// Clean targets replaced by the corrupted inputs; used to check that the
/// loss really is taken against uncorrupted surfaces.
pub fn corrupted_as_targets(set: &AugmentedDataset) -> Result<AugmentedDataset> {
    let examples = set
        .examples
        .iter()
        .map(|e| {
            Ok(Example {
                target: YieldSurface::from_estimates(e.input.values().to_vec())?,
                ..e.clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok(AugmentedDataset {
        examples,
        copies_per_observation: set.copies_per_observation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::nn::gradient_check;
    use crate::surface::fit_scaling;

    fn fcnn_count(h: usize) -> usize {
        N_CELLS * h + h + 2 * h + h * N_CELLS + N_CELLS
    }

    #[test]
    fn fcnn_parameter_count() {
        let net = build_fcnn(&FcnnConfig::default()).unwrap();
        assert_eq!(net.param_count(), fcnn_count(256));
        assert_eq!(net.param_count(), 100_803);
        assert_eq!(net.output_shape(), SURFACE_SHAPE);
    }

    #[test]
    fn fcnn_width_bounds() {
        let at = |h| {
            build_fcnn(&FcnnConfig {
                hidden_width: h,
                ..Default::default()
            })
        };
        assert!(at(195).is_ok());
        assert!(matches!(at(100), Err(Error::Config(_))));
    }

    #[test]
    fn cnn_shapes_and_size() {
        for blocks in 1..=3 {
            for f in [1, 3, 8] {
                let cfg = CnnConfig {
                    conv_blocks: blocks,
                    filters_per_block: vec![f; blocks],
                    ..Default::default()
                };
                assert_eq!(build_cnn(&cfg).unwrap().output_shape(), SURFACE_SHAPE);
            }
        }
        let cnn = build_cnn(&CnnConfig::default()).unwrap();
        // 1->8, 8->8, bottleneck 8->8, 8->1 convolutions plus three batch norms
        assert_eq!(cnn.param_count(), (9 * 8 + 8) + 2 * (72 * 8 + 8) + (72 + 1) + 3 * 16);
        assert!(cnn.param_count() < build_fcnn(&FcnnConfig::default()).unwrap().param_count());
        let bad = CnnConfig {
            conv_blocks: 4,
            filters_per_block: vec![1; 4],
            ..Default::default()
        };
        assert!(build_cnn(&bad).is_err());
    }

    #[test]
    fn minimal_cnn_gradients() {
        let cfg = CnnConfig {
            conv_blocks: 1,
            filters_per_block: vec![1],
            ..Default::default()
        };
        let mut net = build_cnn(&cfg).unwrap();
        net.initialize(3);
        let mut rng = stream_rng(4, 0);
        let x = Tensor::new(vec![2, 1, 13, 15], (0..390).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let t = Tensor::new(vec![2, 1, 13, 15], (0..390).map(|_| rng.gen_range(0.2..0.8)).collect()).unwrap();
        assert!(gradient_check(&net, &x, &t, 1e-4).unwrap() < 1e-4);
    }

    fn small_problem(nu: f64) -> (AugmentedDataset, ScalingTransform, Vec<YieldSurface>) {
        let ds = generate_synthetic(&SyntheticConfig {
            n_observations: 12,
            ..Default::default()
        })
        .unwrap();
        let scaling = fit_scaling(&ds.surfaces).unwrap();
        let scaled: Vec<YieldSurface> = ds.surfaces.iter().map(|s| scaling.scale(s)).collect();
        let set = augment(&scaled, &CorruptionSpec::new(nu, 5).unwrap(), 2).unwrap();
        (set, scaling, scaled)
    }

    fn quick(hidden: usize, epochs: usize, seed: u64) -> ModelConfig {
        ModelConfig::Fcnn(FcnnConfig {
            hidden_width: hidden,
            train: TrainSettings {
                learning_rate: 3e-3,
                decay: 0.0,
                batch_size: 8,
                epochs,
                patience: 0,
                seed,
            },
        })
    }

    #[test]
    fn identity_pairs_are_learnable() {
        let surfaces: Vec<YieldSurface> = (0..10)
            .map(|i| YieldSurface::from_estimates(vec![0.2 + 0.06 * i as f64; N_CELLS]).unwrap())
            .collect();
        let set = augment(&surfaces, &CorruptionSpec::new(0.0, 0).unwrap(), 1).unwrap();
        let cfg = ModelConfig::Fcnn(FcnnConfig {
            hidden_width: 195,
            train: TrainSettings {
                learning_rate: 1e-2,
                decay: 0.0,
                batch_size: 10,
                epochs: 200,
                patience: 0,
                seed: 2,
            },
        });
        let m = train(&cfg, &set, None, ScalingTransform::new(1.0).unwrap()).unwrap();
        let last = m.history.last().unwrap().train_loss;
        assert!(last < 1e-3, "final loss {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let (set, scaling, _) = small_problem(0.5);
        let a = train(&quick(200, 3, 9), &set, None, scaling).unwrap();
        let b = train(&quick(200, 3, 9), &set, None, scaling).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.history, b.history);
        let c = train(&quick(200, 3, 10), &set, None, scaling).unwrap();
        assert_ne!(a.network, c.network);
    }

    #[test]
    fn training_makes_progress() {
        let (set, scaling, _) = small_problem(0.5);
        let epochs = 5;
        let mut first = 0.0;
        let mut last = 0.0;
        for seed in 0..5 {
            let m = train(&quick(200, epochs, seed), &set, None, scaling).unwrap();
            first += m.history[0].train_loss;
            last += m.history[epochs - 1].train_loss;
        }
        assert!(last <= first, "{last} > {first}");
    }

    #[test]
    fn loss_uses_clean_targets() {
        let (set, scaling, _) = small_problem(0.75);
        let m = train(&quick(200, 1, 1), &set, None, scaling).unwrap();
        let clean = evaluation_loss(&m.network, &set).unwrap();
        let dirty = evaluation_loss(&m.network, &corrupted_as_targets(&set).unwrap()).unwrap();
        assert_ne!(clean, dirty);
    }

    #[test]
    fn reconstructions_are_complete_and_bounded() {
        let (set, scaling, _) = small_problem(0.75);
        let m = train(&quick(200, 2, 1), &set, None, scaling).unwrap();
        let full = MaskedSurface::from_partial(&set.examples[0].target);
        for input in [&set.examples[0].input, &full] {
            let r = m.reconstruct(input).unwrap();
            assert!(r.is_complete());
            for v in r.values().unwrap() {
                assert!(v > 0.0 && v < scaling.factor());
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (set, scaling, _) = small_problem(0.5);
        let huge: Vec<Example> = set
            .examples
            .iter()
            .map(|e| Example {
                target: YieldSurface::from_estimates(vec![1e3; N_CELLS]).unwrap(),
                ..e.clone()
            })
            .collect();
        let set = AugmentedDataset {
            examples: huge,
            copies_per_observation: 2,
        };
        match train(&quick(200, 2, 1), &set, None, scaling) {
            Err(Error::Divergence { epoch, checkpoint, .. }) => {
                assert_eq!(epoch, 1);
                assert_eq!(
                    checkpoint.param_count(),
                    build_fcnn(&FcnnConfig {
                        hidden_width: 200,
                        ..Default::default()
                    })
                    .unwrap()
                    .param_count()
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn save_and_load() {
        let (set, scaling, _) = small_problem(0.5);
        let m = train(&quick(200, 2, 1), &set, None, scaling).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        m.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back.network, m.network);
        assert_eq!(back.scaling, m.scaling);
        assert_eq!(back.config, m.config);
        let first = std::fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn validation_carve() {
        assert_eq!(validation_count(56), 6);
        assert_eq!(validation_count(10), 1);
        assert_eq!(validation_count(2), 1);
    }

    #[test]
    fn search_contracts() {
        let (_, scaling, scaled) = small_problem(0.5);
        let spec = CorruptionSpec::new(0.5, 1).unwrap();
        let point = SearchSpace {
            learning_rate: Range::point(2e-3),
            decay: Range::point(0.0),
            batch_size: Range::point(16),
            hidden_width: Range::point(200),
            epochs: 2,
            patience: 0,
            ..Default::default()
        };
        let r = random_search(ModelKind::Fcnn, &point, &scaled, &spec, 1, 2, 3, scaling).unwrap();
        match &r.best {
            ModelConfig::Fcnn(c) => {
                assert_eq!(c.hidden_width, 200);
                assert_eq!(c.train.learning_rate, 2e-3);
                assert_eq!(c.train.batch_size, 16);
            }
            other => panic!("{other:?}"),
        }
        let one = random_search(ModelKind::Fcnn, &point, &scaled, &spec, 1, 1, 4, scaling).unwrap();
        assert_eq!(one.trials.len(), 1);
        assert_eq!(one.best, one.trials[0].config);
        assert!(random_search(ModelKind::Fcnn, &point, &scaled, &spec, 1, 0, 4, scaling).is_err());
        let empty = SearchSpace {
            batch_size: Range { low: 8, high: 4 },
            ..point
        };
        assert!(matches!(
            random_search(ModelKind::Fcnn, &empty, &scaled, &spec, 1, 1, 4, scaling),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn search_is_deterministic_and_picks_the_minimum() {
        let (_, scaling, scaled) = small_problem(0.5);
        let spec = CorruptionSpec::new(0.5, 1).unwrap();
        let space = SearchSpace {
            hidden_width: Range { low: 195, high: 220 },
            epochs: 2,
            patience: 0,
            ..Default::default()
        };
        let a = random_search(ModelKind::Fcnn, &space, &scaled, &spec, 1, 4, 11, scaling).unwrap();
        let b = random_search(ModelKind::Fcnn, &space, &scaled, &spec, 1, 4, 11, scaling).unwrap();
        assert_eq!(a.best, b.best);
        let min = a.trials.iter().map(|t| t.validation_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(a.trials[a.best_trial].validation_mse, min);
    }

    #[test]
    fn configs_round_trip_through_json() {
        for cfg in [
            ModelConfig::Fcnn(FcnnConfig::default()),
            ModelConfig::Cnn(CnnConfig::default()),
        ] {
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
        }
    }
}
