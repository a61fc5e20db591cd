use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use yieldfill::corruption::{AugmentedDataset, Example};
use yieldfill::dae::{manifest_path, random_search, ModelConfig, ModelKind, TrainedModel};
use yieldfill::data::{figure5_fixture, generate_synthetic, load_csv, save_csv, DataSource, SurfaceDataset};
use yieldfill::eval::{model_complete_all, run_comparison, tps_complete_all};
use yieldfill::pipeline::{prepare, train_on, RunConfig};
use yieldfill::seeds::derive_seed;
use yieldfill::surface::{monotonicity_report, MaskedSurface, ScalingTransform, YieldSurface, N_CELLS};
use yieldfill::Error;

const AFTER_HELP: &str = "\
Settings come from three layers, later ones winning: built-in defaults, the
TOML file given with --config, then command-line flags. Every command echoes
its effective settings into a JSON manifest.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.";

#[derive(Parser)]
#[command(name = "yieldfill", version, about = "Complete sparse rating x tenor yield surfaces", after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "YIELDFILL_THREADS")]
    threads: Option<usize>,

    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset or the bundled sample surface as CSV.
    Generate(GenerateArgs),
    /// Split, corrupt and augment a dataset, then train an autoencoder.
    Train(TrainArgs),
    /// Compare completion methods on a held-out test set.
    Evaluate(EvaluateArgs),
    /// Fill in the missing cells of sparse surfaces.
    Complete(CompleteArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Figure5,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of synthetic observations.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a bundled fixture instead of synthetic data.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
}

#[derive(Args)]
struct ProtocolArgs {
    /// Corruption proportion.
    #[arg(long)]
    nu: Option<f64>,
    /// Master seed for split, corruption, initialisation and search.
    #[arg(long)]
    seed: Option<u64>,
    /// Corrupted copies per observation.
    #[arg(long)]
    copies: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Complete surfaces in the CSV schema.
    data: PathBuf,
    /// fcnn or cnn.
    #[arg(long)]
    model: ModelKind,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long)]
    epochs: Option<usize>,
    /// Random-search trials before the final training run.
    #[arg(long)]
    trials: Option<usize>,
    /// Model file; the manifest goes next to it with a .json extension.
    #[arg(long, default_value = "model.bin")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Complete surfaces in the CSV schema. Not needed with --fixture.
    data: Option<PathBuf>,
    /// Include the thin plate spline.
    #[arg(long)]
    tps: bool,
    #[arg(long)]
    fcnn: Option<PathBuf>,
    #[arg(long)]
    cnn: Option<PathBuf>,
    /// Complete the sparse panel of a bundled fixture and score against its full panel.
    #[arg(long, value_enum)]
    fixture: Option<Fixture>,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Tps,
    Fcnn,
    Cnn,
}

#[derive(Args)]
struct CompleteArgs {
    /// Sparse surfaces in the CSV schema.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "tps")]
    method: Method,
    /// Trained model file, required for fcnn and cnn.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

/// An error plus the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Generate(a) => generate(&mut cfg, a),
        Command::Train(a) => train(&mut cfg, a),
        Command::Evaluate(a) => evaluate(&mut cfg, a),
        Command::Complete(a) => complete(&cfg, a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("json serialises") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn generate(cfg: &mut RunConfig, a: GenerateArgs) -> CliResult {
    create_dir(&a.out)?;
    let files = match a.fixture {
        Some(Fixture::Figure5) => {
            let f = figure5_fixture();
            let full = a.out.join("figure5_full.csv");
            let sparse = a.out.join("figure5_sparse.csv");
            save_csv(&SurfaceDataset::new(vec![f.full], DataSource::Fixture)?, &full)?;
            save_csv(&SurfaceDataset::new(vec![f.sparse], DataSource::Fixture)?, &sparse)?;
            vec![full, sparse]
        }
        None => {
            if let Some(n) = a.n {
                cfg.synthetic.n_observations = n;
            }
            if let Some(seed) = a.seed {
                cfg.synthetic.seed = seed;
            }
            let ds = generate_synthetic(&cfg.synthetic)?;
            let path = a.out.join("surfaces.csv");
            save_csv(&ds, &path)?;
            vec![path]
        }
    };
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "command": "generate",
            "fixture": a.fixture.map(|_| "figure5"),
            "synthetic": a.fixture.is_none().then_some(&cfg.synthetic),
            "files": files,
        }),
    )?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(())
}

fn apply_protocol(cfg: &mut RunConfig, p: &ProtocolArgs) -> CliResult {
    if let Some(nu) = p.nu {
        cfg.protocol.nu = nu;
    }
    if let Some(seed) = p.seed {
        cfg.protocol.seed = seed;
    }
    if let Some(c) = p.copies {
        cfg.protocol.copies = c;
    }
    if let Some(f) = p.test_fraction {
        cfg.protocol.test_fraction = f;
    }
    let pr = &cfg.protocol;
    if !(0.0..1.0).contains(&pr.nu) {
        return Err(usage(format!("--nu must lie in [0, 1), got {}", pr.nu)));
    }
    if pr.copies == 0 {
        return Err(usage("--copies must be positive"));
    }
    if !(pr.test_fraction > 0.0 && pr.test_fraction < 1.0) {
        return Err(usage(format!(
            "--test-fraction must lie in (0, 1), got {}",
            pr.test_fraction
        )));
    }
    Ok(())
}

fn load_complete(path: &Path) -> CliResult<SurfaceDataset> {
    let ds = load_csv(path)?;
    if !ds.is_complete() {
        return Err(Error::Data(format!("{} contains missing cells", path.display())).into());
    }
    Ok(ds)
}

fn train(cfg: &mut RunConfig, a: TrainArgs) -> CliResult {
    apply_protocol(cfg, &a.protocol)?;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    let seed = cfg.protocol.seed;
    let mut model_cfg = match a.model {
        ModelKind::Fcnn => ModelConfig::Fcnn(cfg.fcnn.clone()),
        ModelKind::Cnn => ModelConfig::Cnn(cfg.cnn.clone()),
    };
    if let Some(e) = a.epochs {
        model_cfg.train_settings_mut().epochs = e;
    }
    match &model_cfg {
        ModelConfig::Fcnn(c) => c.validate(),
        ModelConfig::Cnn(c) => c.validate(),
    }
    .map_err(|e| usage(e.to_string()))?;

    let ds = load_complete(&a.data)?;
    let prepared = prepare(&ds, &cfg.protocol)?;
    let search = if cfg.trials > 0 {
        let result = random_search(
            a.model,
            &cfg.search,
            &prepared.train_scaled,
            &prepared.corruption,
            prepared.copies,
            cfg.trials,
            derive_seed(seed, "search"),
            prepared.scaling,
        )?;
        let keep = model_cfg.train_settings().clone();
        model_cfg = result.best.clone();
        let t = model_cfg.train_settings_mut();
        t.epochs = keep.epochs;
        t.patience = keep.patience;
        Some(result)
    } else {
        None
    };
    model_cfg.train_settings_mut().seed = derive_seed(seed, &a.model.to_string());

    let model = match train_on(&prepared, &model_cfg) {
        Ok(m) => m,
        Err(Error::Divergence {
            epoch,
            loss,
            checkpoint,
        }) => {
            let path = a.out.with_extension("checkpoint.bin");
            std::fs::write(&path, checkpoint.to_bytes()).map_err(|e| Error::io(&path, e))?;
            return Err(Failure {
                code: 1,
                message: format!(
                    "training diverged at epoch {epoch} (loss {loss}); last good parameters saved to {}",
                    path.display()
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(&a.out)?;
    let run_path = a.out.with_extension("run.json");
    write_json(
        &run_path,
        &json!({
            "command": "train",
            "data": a.data,
            "model": a.model,
            "model_file": a.out,
            "model_manifest": manifest_path(&a.out),
            "effective_config": cfg,
            "model_config": model.config,
            "seeds": {
                "master": seed,
                "split": derive_seed(seed, "split"),
                "corruption": prepared.corruption.seed,
                "test_corruption": prepared.test_corruption.seed,
                "training": model.config.train_settings().seed,
                "search": derive_seed(seed, "search"),
            },
            "split": {
                "train_indices": prepared.split.train_indices,
                "test_indices": prepared.split.test_indices,
            },
            "augmentation": {
                "copies": prepared.copies,
                "train_examples": prepared.train_scaled.len() * prepared.copies,
                "test_examples": prepared.test_scaled.len() * prepared.copies,
            },
            "scaling_factor": prepared.scaling.factor(),
            "best_epoch": model.best_epoch,
            "final_train_loss": model.final_train_loss,
            "loss_curve": model.history,
            "search": search,
        }),
    )?;
    println!("{}", a.out.display());
    eprintln!(
        "trained {} for {} epochs (kept epoch {}), train loss {:.3e}",
        a.model,
        model.history.len(),
        model.best_epoch,
        model.final_train_loss
    );
    Ok(())
}

fn load_model(path: &Path, kind: ModelKind) -> CliResult<TrainedModel> {
    let m = TrainedModel::load(path)?;
    if m.kind() != kind {
        return Err(usage(format!(
            "{} holds a {} model, expected {kind}",
            path.display(),
            m.kind()
        )));
    }
    Ok(m)
}

fn evaluate(cfg: &mut RunConfig, a: EvaluateArgs) -> CliResult {
    apply_protocol(cfg, &a.protocol)?;
    if !a.tps && a.fcnn.is_none() && a.cnn.is_none() {
        return Err(usage("choose at least one of --tps, --fcnn, --cnn"));
    }
    let fcnn = a.fcnn.as_deref().map(|p| load_model(p, ModelKind::Fcnn)).transpose()?;
    let cnn = a.cnn.as_deref().map(|p| load_model(p, ModelKind::Cnn)).transpose()?;
    let tps = a.tps.then_some(&cfg.tps);

    let (report, source) = match (a.fixture, &a.data) {
        (Some(Fixture::Figure5), None) => {
            let f = figure5_fixture();
            let scaling = ScalingTransform::fit([&f.full])?;
            let sparse = MaskedSurface::from_partial(&scaling.scale(&f.sparse));
            let nu = 1.0 - sparse.observed_count() as f64 / N_CELLS as f64;
            let test = AugmentedDataset {
                examples: vec![Example {
                    input: sparse,
                    target: scaling.scale(&f.full),
                    observation: 0,
                    copy: 0,
                }],
                copies_per_observation: 1,
            };
            (
                run_comparison(&test, scaling, nu, tps, fcnn.as_ref(), cnn.as_ref())?,
                json!("fixture:figure5"),
            )
        }
        (None, Some(path)) => {
            let ds = load_complete(path)?;
            let prepared = prepare(&ds, &cfg.protocol)?;
            let test = prepared.test_set()?;
            (
                run_comparison(
                    &test,
                    prepared.scaling,
                    cfg.protocol.nu,
                    tps,
                    fcnn.as_ref(),
                    cnn.as_ref(),
                )?,
                json!(path),
            )
        }
        (Some(_), Some(_)) => return Err(usage("give either a data file or --fixture, not both")),
        (None, None) => return Err(usage("a data file or --fixture is required")),
    };
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, &text).map_err(|e| Error::io(&txt, e))?;
        write_json(
            &dir.join("report.json"),
            &serde_json::to_value(&report).expect("report"),
        )?;
        write_json(
            &dir.join("manifest.json"),
            &json!({
                "command": "evaluate",
                "data": source,
                "fcnn": a.fcnn,
                "cnn": a.cnn,
                "effective_config": cfg,
            }),
        )?;
    }
    Ok(())
}

fn warn_violations(index: usize, surface: &YieldSurface) -> CliResult<usize> {
    let r = monotonicity_report(surface)?;
    for v in &r.rating_violations {
        eprintln!("warning: surface {index}: {v}");
    }
    for v in &r.tenor_violations {
        eprintln!("warning: surface {index}: {v}");
    }
    Ok(r.violation_count())
}

fn complete(cfg: &RunConfig, a: CompleteArgs) -> CliResult {
    let tps_cfg = &cfg.tps;
    let ds = load_csv(&a.input)?;
    let inputs: Vec<&YieldSurface> = ds.surfaces.iter().collect();
    let completed: Vec<YieldSurface> = match a.method {
        Method::Tps => {
            let identity = ScalingTransform::new(1.0)?;
            let masked: Vec<MaskedSurface> = inputs.iter().map(|s| MaskedSurface::from_partial(s)).collect();
            tps_complete_all(&masked.iter().collect::<Vec<_>>(), identity, tps_cfg)
                .into_iter()
                .collect::<Result<_, _>>()?
        }
        Method::Fcnn | Method::Cnn => {
            let kind = if matches!(a.method, Method::Fcnn) {
                ModelKind::Fcnn
            } else {
                ModelKind::Cnn
            };
            let path = a
                .model
                .as_deref()
                .ok_or_else(|| usage("--model is required for fcnn and cnn"))?;
            let model = load_model(path, kind)?;
            let masked: Vec<MaskedSurface> = inputs
                .iter()
                .map(|s| MaskedSurface::from_partial(&model.scaling.scale(s)))
                .collect();
            model_complete_all(&model, &masked.iter().collect::<Vec<_>>(), model.scaling)?
        }
    };
    let completed: Vec<YieldSurface> = completed
        .into_iter()
        .zip(&inputs)
        .map(|(c, s)| c.with_date(s.date()))
        .collect();
    let mut warnings = 0;
    for (i, s) in completed.iter().enumerate() {
        warnings += warn_violations(i, s)?;
    }
    save_csv(&SurfaceDataset::new(completed, ds.source)?, &a.out)?;
    eprintln!("{} surfaces completed, {warnings} monotonicity warnings", ds.len());
    println!("{}", a.out.display());
    Ok(())
}
