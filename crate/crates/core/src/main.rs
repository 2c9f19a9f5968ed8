use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use extremeseg::geometry::ExtremePointSet;
use extremeseg::harness::{
    self, budget_report, clicks_to_quality, run_ablation, AblationAxis, AblationOptions,
    BudgetModel, SynthConfig,
};
use extremeseg::raster::{load_raster, rle_encode, save_raster};
use extremeseg::service::{AppState, ServiceConfig};
use extremeseg::trainer::{
    hash_split, log_csv, run_interactive_experiment, train, InteractiveConfig, ModelBundle,
    TrainConfig, DEFAULT_PERTURB_RADIUS,
};
use extremeseg::{Error, Result};

/// Object segmentation from four extreme-point clicks.
#[derive(Parser, Debug)]
#[command(name = "extremeseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic shapes dataset.
    GenData(GenData),
    /// Train a segmenter.
    Train(Train),
    /// Score a model on a dataset; writes per-sample IoU CSV.
    Eval(Eval),
    /// Segment one image from four clicks.
    Predict(Predict),
    /// Run the component ablation matrix.
    Ablate(Ablate),
    /// Run the four-variant interactive experiment.
    InteractiveSim(InteractiveSim),
    /// Mean clicks needed to reach target IoUs.
    Clicks(Clicks),
    /// Annotation cost of extreme clicks versus full masks.
    Budget(Budget),
    /// Serve the HTTP API.
    Serve(Serve),
}

#[derive(Args, Debug)]
struct GenData {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON generator config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Image width and height.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainOverrides {
    /// JSON training config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    relax_margin: Option<u32>,
    #[arg(long)]
    jitter: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainOverrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        cfg.seed = self.seed;
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.sgd.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.sgd.batch_size = v;
        }
        if let Some(v) = self.resolution {
            cfg.resolution = v;
        }
        if let Some(v) = self.relax_margin {
            cfg.relax_margin = v;
        }
        if let Some(v) = self.jitter {
            cfg.jitter_radius = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Hold out this fraction by id hash and train on the rest.
    #[arg(long, default_value_t = 0.0)]
    val_fraction: f64,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score only the held-out part of a hash split with this fraction.
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Predict {
    #[arg(long)]
    model: PathBuf,
    /// PPM or PGM image.
    #[arg(long)]
    image: PathBuf,
    /// Clicks as JSON, e.g. {"left":[3,9],"right":[30,11],"top":[14,2],"bottom":[16,28]}.
    #[arg(long)]
    points: String,
    /// Mask PGM output.
    #[arg(long)]
    out: PathBuf,
    /// RLE JSON output.
    #[arg(long)]
    rle: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Ablate {
    #[arg(long)]
    data: PathBuf,
    /// CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Save each seed's base model here.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args, Debug)]
struct InteractiveSim {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args, Debug)]
struct Clicks {
    /// Model trained with corrective clicks.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.85,0.9")]
    targets: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    max_clicks: usize,
    #[arg(long, default_value_t = DEFAULT_PERTURB_RADIUS)]
    perturb: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Budget {
    /// Number of objects.
    #[arg(long)]
    n: usize,
    /// CSV of `objects,metric` rows describing model quality.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Serve {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Include ground-truth IoU in responses.
    #[arg(long)]
    dev: bool,
    #[arg(long, default_value_t = 900)]
    session_ttl_secs: u64,
    /// Allowed CORS origin (any when unset).
    #[arg(long)]
    cors_origin: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn gen_data(a: GenData) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.count {
        cfg.count = v;
    }
    if let Some(v) = a.size {
        cfg.width = v;
        cfg.height = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_std = v;
    }
    if let Some(v) = a.distractors {
        cfg.distractors = v;
    }
    let samples = harness::generate_dataset(&cfg, &a.out)?;
    write(
        &a.out.join("synth.json"),
        &(serde_json::to_string_pretty(&cfg)? + "\n"),
    )?;
    println!(
        "wrote {} samples to {} (hash {})",
        samples.len(),
        a.out.display(),
        harness::dataset_hash(&samples)
    );
    Ok(())
}

fn run_train(a: Train) -> Result<()> {
    let cfg = a.train.resolve()?;
    let data = harness::load_dataset(&a.data)?;
    let (train_idx, _) = hash_split(&data, a.val_fraction);
    let set: Vec<_> = train_idx.into_iter().map(|i| data[i].clone()).collect();
    let out = train(&set, &cfg)?;
    let fp = out.bundle.save(&a.out)?;
    if let Some(p) = &a.log {
        write(p, &log_csv(&out.log))?;
    }
    let last = out.log.last().expect("at least one epoch");
    println!(
        "trained on {} samples: loss {:.5}, train IoU {:.4}; checkpoint {} ({})",
        set.len(),
        last.loss,
        last.train_iou,
        a.out.display(),
        fp
    );
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let bundle = ModelBundle::load(&a.model)?;
    let data = harness::load_dataset(&a.data)?;
    let idx: Vec<usize> = match a.val_fraction {
        Some(f) => hash_split(&data, f).1,
        None => (0..data.len()).collect(),
    };
    let mut csv = String::from("id,iou\n");
    let mut sum = 0.0;
    for &i in &idx {
        let v = bundle.score(&data[i], None)?;
        sum += v;
        csv.push_str(&format!("{},{}\n", data[i].id, v));
    }
    let mean = sum / idx.len().max(1) as f64;
    csv.push_str(&format!("mean,{}\n", mean));
    if let Some(p) = &a.out {
        write(p, &csv)?;
    }
    println!("{} samples, mean IoU {:.4}", idx.len(), mean);
    Ok(())
}

fn run_predict(a: Predict) -> Result<()> {
    let bundle = ModelBundle::load(&a.model)?;
    let image = load_raster(&a.image)?;
    let points: ExtremePointSet = serde_json::from_str(&a.points)?;
    let pred = bundle.predict(&image, &points)?;
    save_raster(&pred.mask.to_raster(), &a.out)?;
    if let Some(p) = &a.rle {
        write(p, &(serde_json::to_string(&rle_encode(&pred.mask))? + "\n"))?;
    }
    println!(
        "{} foreground pixels written to {}",
        pred.mask.count(),
        a.out.display()
    );
    Ok(())
}

fn ablate(a: Ablate) -> Result<()> {
    let cfg = a.train.resolve()?;
    let data = harness::load_dataset(&a.data)?;
    let opts = AblationOptions {
        seeds: a.seeds,
        val_fraction: a.val_fraction,
        model_dir: a.model_dir,
    };
    let report = run_ablation(&data, &cfg, &AblationAxis::ALL, &opts)?;
    write(&a.out, &report.to_csv())?;
    print!("{}", report.to_text());
    Ok(())
}

fn interactive(a: InteractiveSim) -> Result<()> {
    let cfg = InteractiveConfig {
        train: a.train.resolve()?,
        hard_threshold: a.threshold,
        ..InteractiveConfig::default()
    };
    let data = harness::load_dataset(&a.data)?;
    let report = run_interactive_experiment(&data, &cfg)?;
    write(&a.out, &report.to_csv())?;
    print!("{}", report.to_text());
    Ok(())
}

fn clicks(a: Clicks) -> Result<()> {
    let bundle = ModelBundle::load(&a.model)?;
    let data = harness::load_dataset(&a.data)?;
    let report = clicks_to_quality(&bundle, &data, &a.targets, a.max_clicks, a.perturb, a.seed)?;
    if let Some(p) = &a.out {
        let mut csv = String::from("target,mean_clicks\n");
        for (t, c) in report.targets.iter().zip(&report.mean_clicks) {
            csv.push_str(&format!("{},{}\n", t, c));
        }
        csv.push_str(&format!("iou_at_4,{}\n", report.quality_at_4));
        write(p, &csv)?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn read_curve(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut curve = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty()
            || line.starts_with('#')
            || (i == 0 && line.chars().any(|c| c.is_alphabetic()))
        {
            continue;
        }
        let bad = || {
            Error::Invalid(format!(
                "{}:{}: expected 'objects,metric'",
                path.display(),
                i + 1
            ))
        };
        let (n, m) = line.split_once(',').ok_or_else(bad)?;
        curve.push((
            n.trim().parse().map_err(|_| bad())?,
            m.trim().parse().map_err(|_| bad())?,
        ));
    }
    Ok(curve)
}

fn budget(a: Budget) -> Result<()> {
    let curve = match &a.curve {
        Some(p) => read_curve(p)?,
        None => Vec::new(),
    };
    let report = budget_report(a.n, &curve, &BudgetModel::default())?;
    if let Some(p) = &a.out {
        write(p, &report.to_csv())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn serve(a: Serve) -> Result<()> {
    let model = a.model.as_ref().map(ModelBundle::load).transpose()?;
    let state = AppState::new(
        model,
        ServiceConfig {
            data_root: a.data.clone(),
            session_ttl: std::time::Duration::from_secs(a.session_ttl_secs),
            dev: a.dev,
            cors_origin: a.cors_origin.clone(),
        },
    )?;
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Invalid(format!("bad listen address: {}", e)))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(extremeseg::service::serve(addr, state))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => run_predict(a),
        Command::Ablate(a) => ablate(a),
        Command::InteractiveSim(a) => interactive(a),
        Command::Clicks(a) => clicks(a),
        Command::Budget(a) => budget(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}", msg);
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
