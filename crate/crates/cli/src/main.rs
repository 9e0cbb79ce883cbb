use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use smattack_core::attack::{self, AttackReport};
use smattack_core::candidates::DEFAULT_CANDIDATES;
use smattack_core::features::{
    extract_design, load_feature_set, save_feature_set, FeatureConfig, FeatureSet, ImageEncoding, DEFAULT_IMAGE_SIZE,
    DEFAULT_SCALES,
};
use smattack_core::ingest::{self, CellLibrary, NativeLayout};
use smattack_core::layout::{split_layout, FullLayout, GroundTruth, SplitLayout};
use smattack_core::nn::{self, LossKind, LrSchedule, Model, NetworkConfig, OptimizerKind, TrainConfig};
use smattack_core::synth::{generate_synthetic, SynthSpec};

/// Connection inference attack on split-manufactured layouts.
#[derive(Parser)]
#[command(name = "smattack", version)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic routed design and its cell library.
    Gen(GenArgs),
    /// Split a full layout at a metal layer, writing the FEOL view and the hidden truth.
    Split(SplitArgs),
    /// Select candidates and extract their features into a cache.
    Extract(ExtractArgs),
    /// Train a scoring network on feature caches.
    Train(TrainArgs),
    /// Attack a split layout with a trained model.
    Attack(AttackArgs),
    /// Score an attack report against ground truth.
    Eval(EvalArgs),
    /// Run the nearest-candidate proximity attack.
    Baseline(BaselineArgs),
    /// Train with both losses on the same data and compare them.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for layout.json, layout.def, lib.json and tech.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    nets: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Proximity bias; 0 scatters sinks uniformly.
    #[arg(long)]
    bias: Option<f64>,
    /// Fraction of nets driven by the weakest adequate driver.
    #[arg(long)]
    cap_signal: Option<f64>,
    /// Die side in microns.
    #[arg(long)]
    die_um: Option<f64>,
}

#[derive(Args)]
struct SplitArgs {
    /// Full layout, native JSON or DEF.
    #[arg(long)]
    layout: PathBuf,
    /// Cell library, required for DEF input.
    #[arg(long)]
    lib: Option<PathBuf>,
    /// Technology file, required for DEF input.
    #[arg(long)]
    tech: Option<PathBuf>,
    /// Split layer m: metals 1..=m stay visible.
    #[arg(long, default_value_t = 3)]
    layer: u8,
    /// Output directory for split.json and truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeatureArgs {
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    candidates: usize,
    /// Microns per pixel of each raster.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SCALES.to_vec())]
    scales: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_IMAGE_SIZE)]
    image_size: usize,
    #[arg(long, value_enum, default_value_t = Encoding::Bits)]
    encoding: Encoding,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    /// One binary channel per layer bit.
    Bits,
    /// One channel per scale holding the normalized bit word.
    Packed,
}

impl FeatureArgs {
    fn config(&self) -> FeatureConfig {
        FeatureConfig {
            scales: self.scales.clone(),
            image_size: self.image_size,
            encoding: match self.encoding {
                Encoding::Bits => ImageEncoding::BitPlanes,
                Encoding::Packed => ImageEncoding::Packed,
            },
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Split layout (native JSON).
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    lib: PathBuf,
    /// Ground truth; labels the candidates for training.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    features: FeatureArgs,
    /// Feature cache to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    /// Full-size layers with 99x99 rasters.
    Standard,
    /// Same topology with narrow layers for a single CPU core.
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Softmax,
    TwoClass,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Softmax => LossKind::SoftmaxRegression,
            Loss::TwoClass => LossKind::TwoClass,
        }
    }
}

#[derive(Args)]
struct NetArgs {
    #[arg(long, value_enum, default_value_t = Arch::Standard)]
    arch: Arch,
    /// Drop the image path and score from feature vectors alone.
    #[arg(long)]
    vector_only: bool,
    #[arg(long, default_value_t = 100)]
    epochs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plain SGD instead of Adam.
    #[arg(long)]
    sgd: bool,
    /// Keep the last epoch instead of the best validated one.
    #[arg(long)]
    keep_last: bool,
}

impl NetArgs {
    fn network(&self, first: &FeatureSet, loss: LossKind) -> NetworkConfig {
        let h = &first.header;
        let channels = h.config.encoding.channels(h.config.scales.len(), h.split_layer);
        let mut net = match self.arch {
            Arch::Standard => NetworkConfig {
                image_size: h.config.image_size,
                ..NetworkConfig::standard(h.feature_count, channels)
            },
            Arch::Desk => NetworkConfig::desk(h.feature_count, channels, h.config.image_size),
        };
        net.outputs = loss.outputs();
        if self.vector_only {
            net = net.vector_only();
        }
        net
    }

    fn train_config(&self, loss: LossKind) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            schedule: LrSchedule::default(),
            seed: self.seed,
            optimizer: if self.sgd { OptimizerKind::Sgd } else { OptimizerKind::Adam },
            loss,
            keep_best: !self.keep_last,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training feature caches.
    #[arg(long, value_delimiter = ',', required = true)]
    features: Vec<PathBuf>,
    /// Validation feature caches for model selection.
    #[arg(long, value_delimiter = ',')]
    val: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Loss::Softmax)]
    loss: Loss,
    #[command(flatten)]
    net: NetArgs,
    /// Model file to write; the history goes next to it as CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    /// Split layout (native JSON).
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    lib: PathBuf,
    /// Ground truth for scoring the result.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Report to write; a CSV summary goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Attack or baseline report.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// Split layout (native JSON).
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    candidates: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    features: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    val: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    test: Vec<PathBuf>,
    /// Training seeds; the report averages over them.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0u64])]
    seeds: Vec<u64>,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long)]
    out: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn load_lib(path: &Path) -> Result<CellLibrary> {
    ingest::load_library(&read_text(path)?).with_context(|| format!("loading library {}", path.display()))
}

fn load_split(path: &Path) -> Result<SplitLayout> {
    let layout = ingest::load_native(&read_text(path)?).with_context(|| format!("loading {}", path.display()))?;
    Ok(layout.into_split()?)
}

fn load_truth(path: &Path) -> Result<GroundTruth> {
    ingest::load_truth(&read_text(path)?).with_context(|| format!("loading truth {}", path.display()))
}

fn load_sets(paths: &[PathBuf]) -> Result<Vec<FeatureSet>> {
    paths
        .iter()
        .map(|p| load_feature_set(&read_bytes(p)?).with_context(|| format!("loading features {}", p.display())))
        .collect()
}

fn write_report(out: &Path, report: &AttackReport) -> Result<()> {
    write(out, serde_json::to_string_pretty(report)? + "\n")?;
    write(sibling(out, "csv").as_path(), attack::summary_csv(std::slice::from_ref(report)))
}

fn print_ccr(report: &AttackReport) {
    match report.ccr {
        Some(c) => println!(
            "{} {}: CCR {:.2}% ({}/{} sink pins)",
            report.design,
            report.method,
            c.percent(),
            c.correct_pins,
            c.total_pins
        ),
        None => println!("{} {}: {} predictions", report.design, report.method, report.predictions.len()),
    }
}

fn gen(a: &GenArgs) -> Result<()> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        nets: a.nets,
        seed: a.seed,
        bias: a.bias.unwrap_or(defaults.bias),
        cap_signal: a.cap_signal.unwrap_or(defaults.cap_signal),
        die_um: a.die_um,
        ..defaults
    };
    let (layout, lib) = generate_synthetic(&spec)?;
    write(&a.out.join("layout.json"), ingest::save_full(&layout))?;
    write(&a.out.join("layout.def"), ingest::emit_def(&layout))?;
    write(&a.out.join("lib.json"), ingest::save_library(&lib))?;
    write(&a.out.join("tech.json"), ingest::save_tech(&layout.tech))?;
    println!(
        "{}: {} nets, {} cells, {} wires, {} vias",
        layout.design,
        layout.nets.len(),
        layout.cells.len(),
        layout.wires.len(),
        layout.vias.len()
    );
    Ok(())
}

fn load_full(a: &SplitArgs) -> Result<FullLayout> {
    let text = read_text(&a.layout)?;
    let is_def = a.layout.extension().is_some_and(|e| e.eq_ignore_ascii_case("def"));
    if !is_def {
        return Ok(ingest::load_native(&text)
            .with_context(|| format!("loading {}", a.layout.display()))?
            .into_full()?);
    }
    let (Some(lib), Some(tech)) = (&a.lib, &a.tech) else {
        bail!("DEF input needs --lib and --tech");
    };
    let lib = load_lib(lib)?;
    let tech = ingest::load_tech(&read_text(tech)?).with_context(|| format!("loading tech {}", tech.display()))?;
    ingest::parse_def_subset(&text, &lib, &tech).with_context(|| format!("parsing {}", a.layout.display()))
}

fn split(a: &SplitArgs) -> Result<()> {
    let full = load_full(a)?;
    let (layout, truth) = split_layout(&full, a.layer)?;
    write(&a.out.join("split.json"), ingest::save_native(&NativeLayout::Split(layout.clone())))?;
    write(&a.out.join("truth.json"), ingest::save_truth(&truth))?;
    println!(
        "{}: split at M{}, {} virtual pins, {} sink fragments",
        layout.design,
        a.layer,
        layout.virtual_pins.len(),
        truth.len()
    );
    Ok(())
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let layout = load_split(&a.layout)?;
    let lib = load_lib(&a.lib)?;
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let set = extract_design(&layout, &lib, a.features.config(), a.features.candidates, truth.as_ref())?;
    write(&a.out, save_feature_set(&set))?;
    println!(
        "{}: {} groups, {} images, F = {}",
        set.header.design,
        set.groups.len(),
        set.images.len(),
        set.header.feature_count
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let train = load_sets(&a.features)?;
    let val = load_sets(&a.val)?;
    let loss = LossKind::from(a.loss);
    let net = a.net.network(&train[0], loss);
    let tr: Vec<&FeatureSet> = train.iter().collect();
    let va: Vec<&FeatureSet> = val.iter().collect();
    let (model, history) = nn::train(net, &tr, &va, &a.net.train_config(loss))?;
    write(&a.out, model.to_bytes())?;
    write(&sibling(&a.out, "history.csv"), history.to_csv())?;
    if let Some(last) = history.epochs.last() {
        info!("final epoch {} loss {:.5}", last.epoch, last.loss);
    }
    match history.kept_epoch {
        Some(e) => println!("trained {} epochs, kept epoch {e}", history.epochs.len()),
        None => println!("trained {} epochs", history.epochs.len()),
    }
    Ok(())
}

fn run_attack(a: &AttackArgs) -> Result<()> {
    let model = Model::from_bytes(&read_bytes(&a.model)?).with_context(|| format!("loading {}", a.model.display()))?;
    let layout = load_split(&a.layout)?;
    let lib = load_lib(&a.lib)?;
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let (report, _) = attack::run_attack(&model, &layout, &lib, truth.as_ref())?;
    write_report(&a.out, &report)?;
    print_ccr(&report);
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let report: AttackReport = serde_json::from_str(&read_text(&a.report)?)
        .with_context(|| format!("parsing report {}", a.report.display()))?;
    let truth = load_truth(&a.truth)?;
    let ccr = report.evaluate(&truth)?;
    println!(
        "{} {}: CCR {:.2}% ({}/{} sink pins)",
        report.design,
        report.method,
        ccr.percent(),
        ccr.correct_pins,
        ccr.total_pins
    );
    Ok(())
}

fn baseline(a: &BaselineArgs) -> Result<()> {
    let layout = load_split(&a.layout)?;
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let report = attack::run_baseline(&layout, truth.as_ref(), a.candidates)?;
    write_report(&a.out, &report)?;
    print_ccr(&report);
    Ok(())
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let train = load_sets(&a.features)?;
    let val = load_sets(&a.val)?;
    let test = load_sets(&a.test)?;
    let net = a.net.network(&train[0], LossKind::SoftmaxRegression);
    fn refs(v: &[FeatureSet]) -> Vec<&FeatureSet> {
        v.iter().collect()
    }
    let tc = a.net.train_config(LossKind::SoftmaxRegression);
    let report = attack::ablate(&net, &refs(&train), &refs(&val), &refs(&test), &tc, &a.seeds)?;
    write(&a.out, serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "softmax regression {:.2}%, two-class {:.2}%, ratio {:.3}",
        100.0 * report.softmax_regression_ccr,
        100.0 * report.two_class_ccr,
        report.ratio
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Split(a) => split(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Attack(a) => run_attack(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = e
                .chain()
                .find_map(|c| c.downcast_ref::<smattack_core::Error>())
                .is_some_and(|c| !c.is_input_error());
            ExitCode::from(if internal { 3 } else { 2 })
        }
    }
}
